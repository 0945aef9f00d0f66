"""Suffix-attention cost accounting: closed forms and trace reconciliation.

The unit of cost is one suffix key/value slot attended in one forward pass;
FLOPs scale linearly with this count at fixed model width, and counts are
exactly checkable against decode traces.  Block b of a vanilla decode visits
L - b*B suffix slots per step; a windowed-dropout decode visits an expected
density * min(W, L - b*B).
"""

import math
from dataclasses import dataclass

from suffixdrop.errors import ReconcileError
from suffixdrop.suffix import DropoutConfig, _curve


def predict_vanilla(gen_len: int, block_size: int, steps_per_block: int) -> int:
    """Total suffix-slot visits for a full-suffix decode."""
    if gen_len % block_size != 0:
        raise ValueError(f"block_size {block_size} must divide gen_len {gen_len}")
    n_blocks = gen_len // block_size
    return steps_per_block * sum(gen_len - b * block_size for b in range(1, n_blocks + 1))


def predict_dropout(gen_len: int, block_size: int, window: int, density: float,
                    steps_per_block: int) -> float:
    """Expected suffix-slot visits under a sliding window of the given density."""
    if gen_len % block_size != 0:
        raise ValueError(f"block_size {block_size} must divide gen_len {gen_len}")
    if not (0.0 < density <= 1.0):
        raise ValueError(f"density must be in (0, 1], got {density}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    n_blocks = gen_len // block_size
    return steps_per_block * sum(
        density * min(window, gen_len - b * block_size) for b in range(1, n_blocks + 1)
    )


@dataclass(frozen=True)
class CostPrediction:
    """Per-block expectations for one decode schedule.

    per_step_mean[b] / per_step_var[b] describe the suffix-slot count of a
    single step in block b; steps_per_block of None means "take the realized
    step counts from the trace" (threshold-parallel schedules).
    """

    schedule: str
    gen_len: int
    block_size: int
    steps_per_block: int | None
    per_step_mean: tuple[float, ...]
    per_step_var: tuple[float, ...]

    @property
    def n_blocks(self) -> int:
        return self.gen_len // self.block_size

    def total(self, steps_per_block: int | None = None) -> float:
        steps = steps_per_block if steps_per_block is not None else self.steps_per_block
        if steps is None:
            raise ValueError("steps_per_block unknown; supply the realized value")
        return steps * sum(self.per_step_mean)


def vanilla_prediction(gen_len: int, block_size: int,
                       steps_per_block: int | None) -> CostPrediction:
    if gen_len % block_size != 0:
        raise ValueError(f"block_size {block_size} must divide gen_len {gen_len}")
    n_blocks = gen_len // block_size
    means = tuple(float(gen_len - b * block_size) for b in range(1, n_blocks + 1))
    return CostPrediction(
        schedule="vanilla",
        gen_len=gen_len,
        block_size=block_size,
        steps_per_block=steps_per_block,
        per_step_mean=means,
        per_step_var=(0.0,) * n_blocks,
    )


def dropout_prediction(gen_len: int, block_size: int, config: DropoutConfig,
                       steps_per_block: int | None) -> CostPrediction:
    """Exact per-block keep-count expectations for the sampler actually used
    (including the rescaled curve on truncated tail windows)."""
    if gen_len % block_size != 0:
        raise ValueError(f"block_size {block_size} must divide gen_len {gen_len}")
    n_blocks = gen_len // block_size
    means, variances = [], []
    for b in range(1, n_blocks + 1):
        remaining = gen_len - b * block_size
        window = min(config.window_w, remaining)
        if window == 0:
            means.append(0.0)
            variances.append(0.0)
            continue
        p = _curve(config, window)
        means.append(float(p.sum()))
        variances.append(float((p * (1.0 - p)).sum()))
    deterministic = all(v == 0.0 for v in variances)
    return CostPrediction(
        schedule="retain_all" if deterministic else "windowed_dropout",
        gen_len=gen_len,
        block_size=block_size,
        steps_per_block=steps_per_block,
        per_step_mean=tuple(means),
        per_step_var=tuple(variances),
    )


@dataclass
class CostReport:
    schedule: str
    gen_len: int
    block_size: int
    blocks_counted: int
    realized_steps_per_block: list[int]
    per_block_predicted: list[float]
    per_block_measured: list[int]
    predicted_total: float
    measured_total: int
    std: float
    z_score: float | None
    exact_match: bool
    truncated: bool  # early termination cut the trace short

    def to_json_dict(self) -> dict:
        return {
            "schedule": self.schedule,
            "gen_len": self.gen_len,
            "block_size": self.block_size,
            "blocks_counted": self.blocks_counted,
            "realized_steps_per_block": list(self.realized_steps_per_block),
            "per_block_predicted": list(self.per_block_predicted),
            "per_block_measured": list(self.per_block_measured),
            "predicted_total": self.predicted_total,
            "measured_total": self.measured_total,
            "std": self.std,
            "z_score": self.z_score,
            "exact_match": self.exact_match,
            "truncated": self.truncated,
        }


def reconcile(trace, prediction: CostPrediction) -> CostReport:
    """Check a decode trace's suffix-slot counters against a prediction.

    Deterministic schedules (variance zero) must match exactly; stochastic
    ones get a z-score.  Prediction and trace must describe the same decode
    geometry, or a ReconcileError is raised.  Early-terminated traces are
    reconciled over the blocks they actually ran.
    """
    if trace.gen_len != prediction.gen_len or trace.block_size != prediction.block_size:
        raise ReconcileError(
            f"trace geometry (gen_len={trace.gen_len}, block={trace.block_size}) does not "
            f"match prediction (gen_len={prediction.gen_len}, block={prediction.block_size})"
        )
    steps_by_block: dict[int, list] = {}
    for rec in trace.steps:
        steps_by_block.setdefault(rec.block, []).append(rec)
    blocks = sorted(steps_by_block)
    if blocks != list(range(len(blocks))):
        raise ReconcileError(f"trace blocks are not contiguous from zero: {blocks}")
    truncated = len(blocks) < prediction.n_blocks
    if len(blocks) > prediction.n_blocks:
        raise ReconcileError(
            f"trace has {len(blocks)} blocks, prediction models {prediction.n_blocks}"
        )

    realized_steps = []
    per_block_measured = []
    per_block_predicted = []
    variance = 0.0
    for b in blocks:
        recs = steps_by_block[b]
        steps = len(recs)
        if prediction.steps_per_block is not None and steps != prediction.steps_per_block:
            raise ReconcileError(
                f"block {b} ran {steps} steps, prediction models {prediction.steps_per_block}"
            )
        measured = sum(r.live_suffix_count for r in recs)
        # within a block the same keep set is reused by every step
        per_block_predicted.append(steps * prediction.per_step_mean[b])
        variance += (steps**2) * prediction.per_step_var[b]
        realized_steps.append(steps)
        per_block_measured.append(measured)

    predicted_total = float(sum(per_block_predicted))
    measured_total = int(sum(per_block_measured))
    std = math.sqrt(variance)
    z = (measured_total - predicted_total) / std if std > 0 else None
    exact = measured_total == predicted_total if std == 0 else False
    return CostReport(
        schedule=prediction.schedule,
        gen_len=prediction.gen_len,
        block_size=prediction.block_size,
        blocks_counted=len(blocks),
        realized_steps_per_block=realized_steps,
        per_block_predicted=per_block_predicted,
        per_block_measured=per_block_measured,
        predicted_total=predicted_total,
        measured_total=measured_total,
        std=std,
        z_score=z,
        exact_match=exact,
        truncated=truncated,
    )


def sweep_rows(gen_lens, block_size: int, window: int, density: float,
               steps_per_block: int) -> list[dict]:
    """Vanilla-vs-dropout cost grid over generation lengths at a fixed window."""
    rows = []
    for gen_len in gen_lens:
        vanilla = predict_vanilla(gen_len, block_size, steps_per_block)
        dropped = predict_dropout(gen_len, block_size, window, density, steps_per_block)
        first_block_suffix = gen_len - block_size
        rows.append(
            {
                "gen_len": int(gen_len),
                "block_size": int(block_size),
                "window": int(window),
                "density": float(density),
                "steps_per_block": int(steps_per_block),
                "vanilla_total": int(vanilla),
                "dropout_total": float(dropped),
                "ratio": float(vanilla / dropped) if dropped else float("inf"),
                # bounded per-block cost: constant in gen_len once the first
                # block's suffix reaches the window
                "per_block_cost_max": float(
                    steps_per_block * density * min(window, first_block_suffix)
                ),
            }
        )
    return rows
