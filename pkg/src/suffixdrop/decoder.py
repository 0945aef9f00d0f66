"""Block-wise denoising decode loop.

Generation runs block by block, left to right.  Within a block, masked
positions are resolved either a fixed number at a time in confidence order
(topk mode) or all-above-threshold in parallel (threshold_parallel mode,
with a single-argmax fallback so every step makes progress).  Optional
machinery layered on the loop:

* suffix dropout -- before each block a fresh keep-plan is sampled and only
  surviving suffix tokens enter the forward pass (original absolute
  positions preserved for the rotary encoding);
* prefix caching -- key/value rows for everything before the current block
  are extracted from a full forward at the block boundary and reused for the
  remaining steps of the block (or refreshed every step, a degenerate policy
  that exists to prove the cached path exact);
* early termination -- once a decoded block contains the eos token, the rest
  of the sequence is eos-filled without further forwards.

Every step appends a record to the trace; totals are exact sums of the
per-step counters.
"""

from dataclasses import dataclass, field

import numpy as np

from suffixdrop.errors import ConfigError
from suffixdrop.model import extract_prefix_kv
from suffixdrop.suffix import DropoutConfig, SuffixPlan, sample_plan

MODES = ("topk", "threshold_parallel")


@dataclass(frozen=True)
class DecodePolicy:
    mask_id: int
    eos_id: int
    block_size: int
    mode: str = "topk"
    k_schedule: tuple[int, ...] | None = None  # per-step unmask counts; None = whole block at once
    confidence_threshold: float = 0.9
    use_prefix_cache: bool = False
    cache_refresh: str = "block"  # "block" | "step"
    use_suffix_dropout: bool = False
    early_termination: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if self.mask_id == self.eos_id:
            raise ConfigError("mask_id and eos_id must differ")
        if not (0.0 < self.confidence_threshold <= 1.0):
            raise ConfigError(
                f"confidence_threshold must be in (0, 1], got {self.confidence_threshold}"
            )
        if self.cache_refresh not in ("block", "step"):
            raise ConfigError(f"cache_refresh must be 'block' or 'step', got {self.cache_refresh!r}")
        if self.k_schedule is not None:
            sched = tuple(int(k) for k in self.k_schedule)
            object.__setattr__(self, "k_schedule", sched)
            if any(k < 1 for k in sched):
                raise ConfigError(f"k_schedule values must be >= 1, got {sched}")
            if sum(sched) != self.block_size:
                raise ConfigError(
                    f"k_schedule {sched} sums to {sum(sched)}, block_size is {self.block_size}"
                )

    def schedule(self) -> tuple[int, ...]:
        return self.k_schedule if self.k_schedule is not None else (self.block_size,)


def even_schedule(block_size: int, steps_per_block: int) -> tuple[int, ...]:
    """Split a block into steps_per_block unmask counts as evenly as possible."""
    if steps_per_block < 1 or steps_per_block > block_size:
        raise ConfigError(
            f"steps_per_block must be in [1, {block_size}], got {steps_per_block}"
        )
    base, rem = divmod(block_size, steps_per_block)
    return tuple(base + (1 if i < rem else 0) for i in range(steps_per_block))


@dataclass
class SequenceState:
    """Token buffer plus mask flags and region bookkeeping for one decode."""

    tokens: np.ndarray
    masked: np.ndarray
    prompt_len: int
    gen_len: int
    block_size: int
    current_block: int = 0
    step: int = 0

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.masked = np.asarray(self.masked, dtype=bool)
        if self.tokens.shape != self.masked.shape:
            raise ConfigError("tokens and masked must have the same length")
        if self.tokens.size != self.prompt_len + self.gen_len:
            raise ConfigError("tokens length must equal prompt_len + gen_len")
        if np.any(self.masked[: self.prompt_len]):
            raise ConfigError("prompt positions must never be masked")

    @property
    def total_len(self) -> int:
        return self.prompt_len + self.gen_len

    def block_bounds(self, block: int) -> tuple[int, int]:
        start = self.prompt_len + block * self.block_size
        return start, min(start + self.block_size, self.total_len)

    def clone(self) -> "SequenceState":
        return SequenceState(
            tokens=self.tokens.copy(),
            masked=self.masked.copy(),
            prompt_len=self.prompt_len,
            gen_len=self.gen_len,
            block_size=self.block_size,
            current_block=self.current_block,
            step=self.step,
        )


@dataclass
class StepRecord:
    step: int
    block: int
    unmasked_positions: list[int]
    confidences: list[float]
    live_suffix_count: int
    cache_hit_positions: list[int]
    forward_token_count: int
    threshold_fallback: bool = False

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "block": self.block,
            "unmasked_positions": list(self.unmasked_positions),
            "confidences": list(self.confidences),
            "live_suffix_count": self.live_suffix_count,
            "cache_hit_positions": list(self.cache_hit_positions),
            "forward_token_count": self.forward_token_count,
            "threshold_fallback": self.threshold_fallback,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "StepRecord":
        return cls(
            step=int(doc["step"]),
            block=int(doc["block"]),
            unmasked_positions=[int(p) for p in doc["unmasked_positions"]],
            confidences=[float(c) for c in doc["confidences"]],
            live_suffix_count=int(doc["live_suffix_count"]),
            cache_hit_positions=[int(p) for p in doc["cache_hit_positions"]],
            forward_token_count=int(doc["forward_token_count"]),
            threshold_fallback=bool(doc.get("threshold_fallback", False)),
        )


@dataclass
class DecodeTrace:
    prompt_len: int
    gen_len: int
    block_size: int
    steps: list[StepRecord] = field(default_factory=list)
    early_terminated_block: int | None = None

    @property
    def forward_passes(self) -> int:
        return len(self.steps)

    @property
    def suffix_key_visits(self) -> int:
        return sum(r.live_suffix_count for r in self.steps)

    @property
    def generated_length(self) -> int:
        return sum(len(r.unmasked_positions) for r in self.steps)

    def totals(self) -> dict:
        return {
            "forward_passes": self.forward_passes,
            "suffix_key_visits": self.suffix_key_visits,
            "generated_length": self.generated_length,
        }

    def to_json_dict(self) -> dict:
        return {
            "prompt_len": self.prompt_len,
            "gen_len": self.gen_len,
            "block_size": self.block_size,
            "early_terminated_block": self.early_terminated_block,
            "steps": [r.to_json_dict() for r in self.steps],
            "totals": self.totals(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DecodeTrace":
        return cls(
            prompt_len=int(doc["prompt_len"]),
            gen_len=int(doc["gen_len"]),
            block_size=int(doc["block_size"]),
            steps=[StepRecord.from_json_dict(s) for s in doc["steps"]],
            early_terminated_block=(
                None if doc.get("early_terminated_block") is None
                else int(doc["early_terminated_block"])
            ),
        )


def forward_mask(clean, t: float, seed: int, mask_id: int, prompt_len: int = 0,
                 block_size: int | None = None) -> SequenceState:
    """Independently mask each generation-region token with probability t."""
    if not (0.0 <= t <= 1.0):
        raise ConfigError(f"mask level t must be in [0, 1], got {t}")
    tokens = np.asarray(clean, dtype=np.int64).copy()
    gen_len = tokens.size - prompt_len
    if gen_len < 0:
        raise ConfigError("prompt_len exceeds sequence length")
    rng = np.random.default_rng(seed)
    masked = np.zeros(tokens.size, dtype=bool)
    masked[prompt_len:] = rng.random(gen_len) < t
    tokens[masked] = mask_id
    return SequenceState(
        tokens=tokens,
        masked=masked,
        prompt_len=prompt_len,
        gen_len=gen_len,
        block_size=block_size if block_size is not None else max(gen_len, 1),
    )


def diagnostic_loss(model, state: SequenceState, clean) -> float:
    """Negative log-likelihood of the original tokens at masked positions.

    Evaluation-only: nothing is ever optimized against this value.
    """
    clean = np.asarray(clean, dtype=np.int64)
    masked_pos = np.flatnonzero(state.masked)
    if masked_pos.size == 0:
        return 0.0
    out = model.forward(state.tokens, np.arange(state.total_len))
    rows = out.logits[masked_pos].astype(np.float64)
    rows -= rows.max(axis=1, keepdims=True)
    logz = np.log(np.exp(rows).sum(axis=1))
    logp = rows[np.arange(masked_pos.size), clean[masked_pos]] - logz
    return float(-logp.sum())


def _confidences(logits_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Greedy predictions and their probabilities, row-wise in float64."""
    rows = logits_rows.astype(np.float64)
    rows -= rows.max(axis=1, keepdims=True)
    np.exp(rows, out=rows)
    rows /= rows.sum(axis=1, keepdims=True)
    preds = rows.argmax(axis=1)
    conf = rows[np.arange(rows.shape[0]), preds]
    return preds, conf


def _step_in_block_quota(policy: DecodePolicy, done: int) -> int:
    """Unmask quota for a topk step, given tokens already decoded in the block."""
    cum = 0
    for k in policy.schedule():
        cum += k
        if done < cum:
            return cum - done
    return policy.block_size - done


def step_unmask(model, state: SequenceState, policy: DecodePolicy,
                plan: SuffixPlan | None = None, cache=None,
                capture_kv: bool = False):
    """One denoising step on the current block.

    Returns (new state, step record, forward output).  The forward runs over
    live positions only: uncached prefix, the current block, and -- when a
    plan is given -- the plan's surviving suffix tokens at their original
    absolute positions.
    """
    bs, be = state.block_bounds(state.current_block)
    masked_pos = np.flatnonzero(state.masked[bs:be]) + bs
    if masked_pos.size == 0:
        raise ValueError(f"current block [{bs}, {be}) has no masked positions")
    if plan is not None and plan.window_start != be:
        raise ConfigError(
            f"plan window starts at {plan.window_start}, current block ends at {be}"
        )

    if cache:
        cached_pos = cache[0].positions
        prefix_live_start = int(cached_pos[-1]) + 1 if cached_pos.size else 0
        cache_hits = cached_pos.tolist()
    else:
        cache = None
        prefix_live_start = 0
        cache_hits = []

    parts = [np.arange(prefix_live_start, be, dtype=np.int64)]
    if plan is not None:
        parts.append(plan.kept_positions)
    else:
        parts.append(np.arange(be, state.total_len, dtype=np.int64))
    live_positions = np.concatenate(parts)
    live_tokens = state.tokens[live_positions]

    out = model.forward(live_tokens, live_positions, cache=cache, capture_kv=capture_kv)

    row_of = np.searchsorted(live_positions, masked_pos)
    preds, conf = _confidences(out.logits[row_of])

    fallback = False
    if policy.mode == "topk":
        done = (be - bs) - masked_pos.size
        quota = min(_step_in_block_quota(policy, done), masked_pos.size)
        order = np.argsort(-conf, kind="stable")  # ties: lowest position wins
        chosen = order[:quota]
    else:
        chosen = np.flatnonzero(conf >= policy.confidence_threshold)
        if chosen.size == 0:
            chosen = np.array([int(np.argmax(conf))])
            fallback = True

    chosen = np.sort(chosen)
    new_state = state.clone()
    new_state.tokens[masked_pos[chosen]] = preds[chosen]
    new_state.masked[masked_pos[chosen]] = False
    new_state.step = state.step + 1

    record = StepRecord(
        step=new_state.step,
        block=state.current_block,
        unmasked_positions=[int(p) for p in masked_pos[chosen]],
        confidences=[float(c) for c in conf[chosen]],
        live_suffix_count=int(np.count_nonzero(live_positions >= be)),
        cache_hit_positions=cache_hits,
        forward_token_count=int(live_positions.size),
        threshold_fallback=fallback,
    )
    return new_state, record, out


def snapshot_state(model, prompt, gen_len: int, policy: DecodePolicy,
                   upto_block: int) -> SequenceState:
    """Decode blocks [0, upto_block) and stop at the start of that block.

    The returned state has earlier blocks resolved and everything from the
    snapshot block on still masked; analysis runs dense forwards on it.
    Caching and dropout are not applied while building the snapshot.
    """
    prompt = np.asarray(prompt, dtype=np.int64).reshape(-1)
    if gen_len % policy.block_size != 0:
        raise ConfigError(
            f"gen_len {gen_len} is not a multiple of block_size {policy.block_size}"
        )
    n_blocks = gen_len // policy.block_size
    if not (0 <= upto_block < n_blocks):
        raise ConfigError(f"snapshot block must be in [0, {n_blocks}), got {upto_block}")
    prompt_len = int(prompt.size)
    state = SequenceState(
        tokens=np.concatenate([prompt, np.full(gen_len, policy.mask_id, dtype=np.int64)]),
        masked=np.concatenate([np.zeros(prompt_len, dtype=bool), np.ones(gen_len, dtype=bool)]),
        prompt_len=prompt_len,
        gen_len=gen_len,
        block_size=policy.block_size,
    )
    for block in range(upto_block):
        state.current_block = block
        bs, be = state.block_bounds(block)
        while np.any(state.masked[bs:be]):
            state, _, _ = step_unmask(model, state, policy)
    state.current_block = upto_block
    return state


def decode(model, prompt, gen_len: int, policy: DecodePolicy,
           dropout: DropoutConfig | None = None):
    """Decode gen_len tokens after the prompt, block by block.

    Returns (tokens, DecodeTrace).  A fresh suffix plan is sampled before
    each block when dropout is enabled; the prefix cache is rebuilt at each
    block boundary (or every step under cache_refresh='step') and reused
    within the block; after each block an early-termination check may
    eos-fill the remainder.
    """
    prompt = np.asarray(prompt, dtype=np.int64).reshape(-1)
    if gen_len < 1:
        raise ConfigError(f"gen_len must be >= 1, got {gen_len}")
    if gen_len % policy.block_size != 0:
        raise ConfigError(
            f"gen_len {gen_len} is not a multiple of block_size {policy.block_size}"
        )
    if policy.use_suffix_dropout != (dropout is not None):
        raise ConfigError(
            "policy.use_suffix_dropout must match the presence of a dropout config"
        )

    prompt_len = int(prompt.size)
    total = prompt_len + gen_len
    state = SequenceState(
        tokens=np.concatenate([prompt, np.full(gen_len, policy.mask_id, dtype=np.int64)]),
        masked=np.concatenate([np.zeros(prompt_len, dtype=bool), np.ones(gen_len, dtype=bool)]),
        prompt_len=prompt_len,
        gen_len=gen_len,
        block_size=policy.block_size,
    )
    trace = DecodeTrace(prompt_len=prompt_len, gen_len=gen_len, block_size=policy.block_size)

    n_blocks = gen_len // policy.block_size
    for block in range(n_blocks):
        state.current_block = block
        bs, be = state.block_bounds(block)
        plan = sample_plan(be, total, dropout, block) if dropout is not None else None

        cache_entries = None
        first_step = True
        while np.any(state.masked[bs:be]):
            refresh = policy.use_prefix_cache and (first_step or policy.cache_refresh == "step")
            if refresh:
                state, record, out = step_unmask(
                    model, state, policy, plan=plan, cache=None, capture_kv=True
                )
                cache_entries = extract_prefix_kv(out, bs) or None
            else:
                state, record, _ = step_unmask(
                    model, state, policy, plan=plan, cache=cache_entries
                )
            trace.steps.append(record)
            first_step = False

        if policy.early_termination and np.any(state.tokens[bs:be] == policy.eos_id):
            state.tokens[be:] = policy.eos_id
            state.masked[be:] = False
            trace.early_terminated_block = block
            break

    return state.tokens.copy(), trace
