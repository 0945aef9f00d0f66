"""Run configuration documents: parsing, validation, serialization.

All randomness in a run is seeded through the config, so a config file plus
the CLI flags fully determines every output byte.  Parse errors raise
ConfigError with the JSON field path (or line/column for syntax errors).
"""

import json
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from suffixdrop.decoder import DecodePolicy, even_schedule
from suffixdrop.errors import ConfigError
from suffixdrop.model import ModelConfig
from suffixdrop.suffix import DropoutConfig, preset


@dataclass(frozen=True)
class PromptSpec:
    """Literal token ids, or a seeded generator drawing `length` ids."""

    tokens: tuple[int, ...] | None = None
    length: int | None = None
    seed: int | None = None

    def __post_init__(self):
        literal = self.tokens is not None
        generated = self.length is not None
        if literal == generated:
            raise ConfigError("prompt must give exactly one of 'tokens' or 'length'")
        if generated and self.seed is None:
            raise ConfigError("generated prompt requires a 'seed'")
        if generated and self.length < 0:
            raise ConfigError(f"prompt length must be >= 0, got {self.length}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    policy: DecodePolicy
    dropout: DropoutConfig | None
    preset_key: str | None
    prompt: PromptSpec
    gen_len: int


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"missing field {where}.{key}")
    return doc[key]


@contextmanager
def _typed(where: str):
    """Report coercion failures inside a config section as config errors."""
    try:
        yield
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _only_keys(doc: dict, allowed, where: str):
    extra = set(doc) - set(allowed)
    if extra:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(sorted(extra))}")


def parse_model(doc: dict) -> ModelConfig:
    _only_keys(doc, ("vocab_size", "dim", "n_heads", "n_layers", "seed", "rope_base"), "model")
    with _typed("model"):
        return ModelConfig(
            vocab_size=int(_require(doc, "vocab_size", "model")),
            dim=int(_require(doc, "dim", "model")),
            n_heads=int(_require(doc, "n_heads", "model")),
            n_layers=int(_require(doc, "n_layers", "model")),
            seed=int(_require(doc, "seed", "model")),
            rope_base=float(doc.get("rope_base", 10000.0)),
        )


def parse_policy(doc: dict, has_dropout: bool) -> DecodePolicy:
    _only_keys(
        doc,
        (
            "mask_id", "eos_id", "block_size", "mode", "k_schedule", "steps_per_block",
            "confidence_threshold", "use_prefix_cache", "cache_refresh",
            "use_suffix_dropout", "early_termination",
        ),
        "policy",
    )
    with _typed("policy"):
        block_size = int(_require(doc, "block_size", "policy"))
        if "k_schedule" in doc and "steps_per_block" in doc:
            raise ConfigError("policy: give either k_schedule or steps_per_block, not both")
        k_schedule = None
        if "k_schedule" in doc:
            k_schedule = tuple(int(k) for k in doc["k_schedule"])
        elif "steps_per_block" in doc:
            k_schedule = even_schedule(block_size, int(doc["steps_per_block"]))
        if "use_suffix_dropout" in doc and bool(doc["use_suffix_dropout"]) != has_dropout:
            raise ConfigError(
                "policy.use_suffix_dropout contradicts the dropout/preset section"
            )
        return DecodePolicy(
            mask_id=int(_require(doc, "mask_id", "policy")),
            eos_id=int(_require(doc, "eos_id", "policy")),
            block_size=block_size,
            mode=str(doc.get("mode", "topk")),
            k_schedule=k_schedule,
            confidence_threshold=float(doc.get("confidence_threshold", 0.9)),
            use_prefix_cache=bool(doc.get("use_prefix_cache", False)),
            cache_refresh=str(doc.get("cache_refresh", "block")),
            use_suffix_dropout=has_dropout,
            early_termination=bool(doc.get("early_termination", False)),
        )


def parse_dropout_section(doc: dict, where: str = "config") -> tuple[DropoutConfig | None, str | None]:
    """Resolve the mutually exclusive dropout / preset fields."""
    has_inline = doc.get("dropout") is not None
    has_preset = doc.get("preset") is not None
    if has_inline and has_preset:
        raise ConfigError(f"{where}: give at most one of 'dropout' and 'preset'")
    if has_preset:
        key = str(doc["preset"])
        if "/" not in key:
            raise ConfigError(
                f"{where}.preset must look like 'model/benchmark', got {key!r}"
            )
        model_name, benchmark = key.split("/", 1)
        try:
            with _typed(f"{where}.preset"):
                cfg = preset(model_name, benchmark, rng_seed=int(doc.get("dropout_seed", 0)))
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        return cfg, key
    if has_inline:
        d = doc["dropout"]
        _only_keys(d, ("window_w", "decay_k", "scale_a", "sigma", "mu", "rng_seed"),
                   f"{where}.dropout")
        with _typed(f"{where}.dropout"):
            cfg = DropoutConfig(
                window_w=int(_require(d, "window_w", f"{where}.dropout")),
                decay_k=float(_require(d, "decay_k", f"{where}.dropout")),
                scale_a=float(_require(d, "scale_a", f"{where}.dropout")),
                sigma=float(d.get("sigma", 1.0)),
                mu=float(d.get("mu", 0.0)),
                rng_seed=int(d.get("rng_seed", 0)),
            )
        return cfg, None
    return None, None


def parse_prompt(doc: dict) -> PromptSpec:
    _only_keys(doc, ("tokens", "length", "seed"), "prompt")
    with _typed("prompt"):
        return PromptSpec(
            tokens=tuple(int(t) for t in doc["tokens"]) if "tokens" in doc else None,
            length=int(doc["length"]) if "length" in doc else None,
            seed=int(doc["seed"]) if "seed" in doc else None,
        )


def parse_run_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    dropout, preset_key = parse_dropout_section(doc)
    model = parse_model(_require(doc, "model", "config"))
    policy = parse_policy(_require(doc, "policy", "config"), dropout is not None)
    prompt = parse_prompt(_require(doc, "prompt", "config"))
    with _typed("config.gen_len"):
        gen_len = int(_require(doc, "gen_len", "config"))
    _check_ids(model, policy, prompt)
    return RunConfig(
        model=model,
        policy=policy,
        dropout=dropout,
        preset_key=preset_key,
        prompt=prompt,
        gen_len=gen_len,
    )


def _check_ids(model: ModelConfig, policy: DecodePolicy, prompt: PromptSpec) -> None:
    for name, tid in (("mask_id", policy.mask_id), ("eos_id", policy.eos_id)):
        if not (0 <= tid < model.vocab_size):
            raise ConfigError(f"policy.{name} {tid} outside vocab [0, {model.vocab_size})")
    if prompt.tokens is not None:
        bad = [t for t in prompt.tokens if not (0 <= t < model.vocab_size)]
        if bad:
            raise ConfigError(f"prompt tokens outside vocab: {bad}")


def run_config_to_doc(rc: RunConfig) -> dict:
    doc: dict = {
        "model": {
            "vocab_size": rc.model.vocab_size,
            "dim": rc.model.dim,
            "n_heads": rc.model.n_heads,
            "n_layers": rc.model.n_layers,
            "seed": rc.model.seed,
            "rope_base": rc.model.rope_base,
        },
        "policy": {
            "mask_id": rc.policy.mask_id,
            "eos_id": rc.policy.eos_id,
            "block_size": rc.policy.block_size,
            "mode": rc.policy.mode,
            "confidence_threshold": rc.policy.confidence_threshold,
            "use_prefix_cache": rc.policy.use_prefix_cache,
            "cache_refresh": rc.policy.cache_refresh,
            "use_suffix_dropout": rc.policy.use_suffix_dropout,
            "early_termination": rc.policy.early_termination,
        },
        "gen_len": rc.gen_len,
    }
    if rc.policy.k_schedule is not None:
        doc["policy"]["k_schedule"] = list(rc.policy.k_schedule)
    if rc.preset_key is not None:
        doc["preset"] = rc.preset_key
        doc["dropout_seed"] = rc.dropout.rng_seed
    elif rc.dropout is not None:
        doc["dropout"] = {
            "window_w": rc.dropout.window_w,
            "decay_k": rc.dropout.decay_k,
            "scale_a": rc.dropout.scale_a,
            "sigma": rc.dropout.sigma,
            "mu": rc.dropout.mu,
            "rng_seed": rc.dropout.rng_seed,
        }
    if rc.prompt.tokens is not None:
        doc["prompt"] = {"tokens": list(rc.prompt.tokens)}
    else:
        doc["prompt"] = {"length": rc.prompt.length, "seed": rc.prompt.seed}
    return doc


def materialize_prompt(spec: PromptSpec, model: ModelConfig, policy: DecodePolicy) -> np.ndarray:
    """Literal tokens, or seeded ids avoiding the mask and eos tokens."""
    if spec.tokens is not None:
        return np.asarray(spec.tokens, dtype=np.int64)
    allowed = np.array(
        [t for t in range(model.vocab_size) if t not in (policy.mask_id, policy.eos_id)],
        dtype=np.int64,
    )
    if allowed.size == 0:
        raise ConfigError("vocabulary has no ids usable in a prompt")
    rng = np.random.default_rng([int(spec.seed), 0x70726F])
    return allowed[rng.integers(0, allowed.size, size=spec.length)]


def load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
