"""Command-line entry point.

Subcommands: decode, compare, analyze, sampler-check, cost.  Every command
reads a JSON config (--config), writes its outputs under --out, and is
byte-for-byte reproducible for fixed seeds.  Exit codes: 0 success,
1 runtime failure (including failed checks), 2 config error.
"""

import argparse
import io
import os
import sys
from dataclasses import replace

import numpy as np

from suffixdrop import analysis, cost, fileio
from suffixdrop.decoder import DecodeTrace, decode, snapshot_state
from suffixdrop.errors import ConfigError, SuffixdropError
from suffixdrop.model import init_model
from suffixdrop.runconfig import (
    PromptSpec,
    load_json,
    materialize_prompt,
    parse_dropout_section,
    parse_model,
    parse_policy,
    parse_prompt,
    parse_run_config,
)
from suffixdrop.suffix import expected_density, retention_probability, sample_plan


def _out_path(args, relpath: str) -> str:
    return os.path.join(args.out, relpath)


def _apply_preset_flag(doc: dict, args) -> dict:
    if args.preset is None:
        return doc
    doc = dict(doc)
    doc.pop("dropout", None)
    doc["preset"] = args.preset
    return doc


def _derived_prompt_spec(spec: PromptSpec, sample_index: int) -> PromptSpec:
    seed = int(np.random.SeedSequence([spec.seed, sample_index]).generate_state(1)[0])
    return replace(spec, seed=seed)


def cmd_decode(args) -> int:
    doc = _apply_preset_flag(load_json(args.config), args)
    outputs = doc.pop("outputs", {})
    rc = parse_run_config(doc)
    if args.seed is not None:
        if rc.dropout is not None:
            rc = replace(rc, dropout=rc.dropout.with_seed(args.seed))
        if rc.prompt.tokens is None:
            rc = replace(rc, prompt=replace(rc.prompt, seed=args.seed))

    model = init_model(rc.model)
    prompt = materialize_prompt(rc.prompt, rc.model, rc.policy)
    tokens, trace = decode(model, prompt, rc.gen_len, rc.policy, rc.dropout)

    tokens_path = _out_path(args, outputs.get("tokens", "tokens.json"))
    trace_path = _out_path(args, outputs.get("trace", "trace.json"))
    fileio.write_json(tokens_path, {
        "prompt": prompt.tolist(),
        "generated": tokens[prompt.size:].tolist(),
        "tokens": tokens.tolist(),
    })
    fileio.write_json(trace_path, trace.to_json_dict())
    totals = trace.totals()
    print(
        f"decoded {totals['generated_length']} tokens in {totals['forward_passes']} "
        f"forward passes; suffix key visits {totals['suffix_key_visits']}"
    )
    return 0


def cmd_compare(args) -> int:
    if args.preset is not None:
        raise ConfigError("--preset is not supported for compare; set presets per side")
    doc = load_json(args.config)
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    model_cfg = parse_model(doc.get("model") or {})
    prompt_spec = parse_prompt(doc.get("prompt") or {})
    gen_len = int(doc.get("gen_len") or 0)
    expect = doc.get("expect", "may_differ")
    if expect not in ("identical", "may_differ"):
        raise ConfigError(f"expect must be 'identical' or 'may_differ', got {expect!r}")
    if args.seed is not None and prompt_spec.tokens is None:
        prompt_spec = replace(prompt_spec, seed=args.seed)

    sides = {}
    for side in ("left", "right"):
        if side not in doc:
            raise ConfigError(f"compare config needs a '{side}' section")
        sdoc = doc[side]
        dropout, _ = parse_dropout_section(sdoc, where=side)
        if args.seed is not None and dropout is not None:
            dropout = dropout.with_seed(args.seed)
        policy = parse_policy(sdoc.get("policy") or {}, dropout is not None)
        sides[side] = (policy, dropout)
    if (sides["left"][0].mask_id, sides["left"][0].eos_id) != (
        sides["right"][0].mask_id, sides["right"][0].eos_id
    ):
        raise ConfigError("compare sides must share mask_id and eos_id")

    model = init_model(model_cfg)
    prompt = materialize_prompt(prompt_spec, model_cfg, sides["left"][0])
    results = {}
    for side, (policy, dropout) in sides.items():
        tokens, _ = decode(model, prompt, gen_len, policy, dropout)
        results[side] = tokens

    diff = np.flatnonzero(results["left"] != results["right"])
    identical = diff.size == 0
    first_divergence = None if identical else int(diff[0])
    report = {
        "expect": expect,
        "result": "identical" if identical else "diverged",
        "first_divergence": first_divergence,
        "gen_len": gen_len,
        "prompt_len": int(prompt.size),
    }
    fileio.write_json(_out_path(args, doc.get("output", "compare.json")), report)
    if identical:
        print("identical")
    else:
        print(f"diverged at position {first_divergence}")
    ok = identical if expect == "identical" else True
    return 0 if ok else 1


def cmd_analyze(args) -> int:
    if args.preset is not None:
        raise ConfigError("--preset is not supported for analyze")
    doc = load_json(args.config)
    model_cfg = parse_model(doc.get("model") or {})
    policy = parse_policy(doc.get("policy") or {}, has_dropout=False)
    prompt_spec = parse_prompt(doc.get("prompt") or {})
    gen_len = int(doc.get("gen_len") or 0)
    n_samples = int(doc.get("n_samples", 1))
    snapshot_block = int(doc.get("snapshot_block", 0))
    alignment = int(doc.get("alignment", 0))
    spike_doc = doc.get("spike") or {}
    outputs = doc.get("outputs") or {}
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    if args.seed is not None and prompt_spec.tokens is None:
        prompt_spec = replace(prompt_spec, seed=args.seed)

    model = init_model(model_cfg)
    samples = []
    first_state = None
    for i in range(n_samples):
        spec = prompt_spec if prompt_spec.tokens is not None else _derived_prompt_spec(prompt_spec, i)
        prompt = materialize_prompt(spec, model_cfg, policy)
        state = snapshot_state(model, prompt, gen_len, policy, snapshot_block)
        if first_state is None:
            first_state = state
        out = model.forward(state.tokens, np.arange(state.total_len), capture_attention=True)
        bs, be = state.block_bounds(state.current_block)
        samples.append((out.attention[-1], bs, be))  # final layer, all heads

    profile = analysis.distance_profile(samples, alignment)
    buf = io.StringIO()
    analysis.profile_to_csv(profile, buf)
    fileio.write_text(_out_path(args, outputs.get("profile", "profile.csv")), buf.getvalue())

    spike = analysis.spike_prune_experiment(
        model,
        first_state,
        top_n=int(spike_doc.get("top_n", 10)),
        exclusion_prefix=int(spike_doc.get("exclusion_prefix", 128)),
    )
    fileio.write_json(_out_path(args, outputs.get("spike", "spike.json")), spike.to_json_dict())
    print(
        f"profiled {profile.sample_count} samples ({profile.skipped} skipped); "
        f"pruned {len(spike.pruned_positions)} of {spike.eligible_count} eligible suffix keys"
    )
    return 0


def cmd_sampler_check(args) -> int:
    doc = _apply_preset_flag(load_json(args.config), args)
    dropout, preset_key = parse_dropout_section(doc)
    if dropout is None:
        raise ConfigError("sampler-check needs a 'dropout' or 'preset' section")
    if args.seed is not None:
        dropout = dropout.with_seed(args.seed)
    draws = int(doc.get("draws", 10000))
    if draws < 1:
        raise ConfigError(f"draws must be >= 1, got {draws}")
    overrides = {int(k): float(v) for k, v in (doc.get("reference_overrides") or {}).items()}

    window = dropout.window_w
    counts = np.zeros(window, dtype=np.int64)
    for i in range(draws):
        plan = sample_plan(0, window, dropout, block_counter=i)
        counts[plan.kept_positions] += 1
    freq = counts / draws

    reference = np.array([retention_probability(d, dropout) for d in range(1, window + 1)])
    for d, p in overrides.items():
        if not (1 <= d <= window):
            raise ConfigError(f"reference_overrides distance {d} outside [1, {window}]")
        reference[d - 1] = p

    sigma = np.sqrt(reference * (1.0 - reference) / draws)
    deviations = np.abs(freq - reference)
    # 4-sigma binomial band; zero-variance references require exact agreement
    failed = np.flatnonzero(
        np.where(sigma > 0, deviations > 4.0 * sigma, deviations > 0)
    )
    measured_density = float(freq.mean())
    closed_form = expected_density(dropout)

    report = {
        "preset": preset_key,
        "window_w": window,
        "draws": draws,
        "measured_density": measured_density,
        "closed_form_density": closed_form,
        "failed_distances": [int(d) + 1 for d in failed],
        "max_abs_deviation": float(deviations.max()),
        "pass": failed.size == 0,
    }
    fileio.write_json(_out_path(args, doc.get("output", "sampler_check.json")), report)
    print(f"density measured {measured_density:.4f}, closed form {closed_form:.4f}")
    if failed.size:
        print(
            "FAIL: keep frequency beyond 4 sigma at distance(s) "
            + ", ".join(str(int(d) + 1) for d in failed)
        )
        return 1
    print(f"pass: all {window} distances within 4 sigma over {draws} draws")
    return 0


def cmd_cost(args) -> int:
    if args.preset is not None:
        raise ConfigError("--preset is not supported for cost")
    doc = load_json(args.config)
    if "sweep" in doc:
        sw = doc["sweep"]
        rows = cost.sweep_rows(
            gen_lens=[int(x) for x in sw.get("gen_lens") or []],
            block_size=int(sw.get("block_size") or 0),
            window=int(sw.get("window") or 0),
            density=float(sw.get("density") or 0.0),
            steps_per_block=int(sw.get("steps_per_block", 1)),
        )
        if not rows:
            raise ConfigError("sweep.gen_lens must not be empty")
        cols = list(rows[0].keys())
        lines = [",".join(cols)]
        for row in rows:
            lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                                   for c in cols))
        fileio.write_text(_out_path(args, doc.get("output", "cost_sweep.csv")),
                          "\n".join(lines) + "\n")
        print(f"swept {len(rows)} generation lengths")
        return 0

    if "reconcile" in doc:
        rdoc = doc["reconcile"]
        trace_doc = load_json(rdoc.get("trace") or "")
        trace = DecodeTrace.from_json_dict(trace_doc)
        steps_per_block = rdoc.get("steps_per_block")
        steps_per_block = None if steps_per_block is None else int(steps_per_block)
        dropout, _ = parse_dropout_section(rdoc, where="reconcile")
        if dropout is not None:
            prediction = cost.dropout_prediction(
                trace.gen_len, trace.block_size, dropout, steps_per_block
            )
        else:
            prediction = cost.vanilla_prediction(trace.gen_len, trace.block_size, steps_per_block)
        report = cost.reconcile(trace, prediction)
        fileio.write_json(_out_path(args, doc.get("output", "cost.json")), report.to_json_dict())
        print(
            f"{report.schedule}: measured {report.measured_total}, "
            f"predicted {report.predicted_total:.2f}"
            + (f", z={report.z_score:.3f}" if report.z_score is not None else "")
        )
        return 0

    gen_len = int(doc.get("gen_len") or 0)
    block_size = int(doc.get("block_size") or 0)
    window = int(doc.get("window") or 0)
    density = float(doc.get("density") or 0.0)
    steps_per_block = int(doc.get("steps_per_block", 1))
    vanilla = cost.predict_vanilla(gen_len, block_size, steps_per_block)
    dropped = cost.predict_dropout(gen_len, block_size, window, density, steps_per_block)
    report = {
        "gen_len": gen_len,
        "block_size": block_size,
        "window": window,
        "density": density,
        "steps_per_block": steps_per_block,
        "vanilla_total": vanilla,
        "dropout_total": dropped,
        "ratio": vanilla / dropped if dropped else None,
    }
    fileio.write_json(_out_path(args, doc.get("output", "cost.json")), report)
    print(f"vanilla {vanilla}, dropout {dropped:.1f}, ratio {report['ratio']:.2f}")
    return 0


_COMMANDS = {
    "decode": cmd_decode,
    "compare": cmd_compare,
    "analyze": cmd_analyze,
    "sampler-check": cmd_sampler_check,
    "cost": cmd_cost,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="suffixdrop",
        description="Masked-diffusion decoding with windowed suffix dropout: "
                    "run decodes, equivalence comparisons, attention analysis, "
                    "sampler statistics, and cost sweeps from JSON configs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "decode": "run one decode; write tokens and trace JSON",
        "compare": "decode two policies on one prompt and report divergence",
        "analyze": "emit attention distance profiles and the spike-prune report",
        "sampler-check": "Monte Carlo check of keep frequencies against the decay curve",
        "cost": "closed-form cost report, sweep CSV, or trace reconciliation",
    }
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", default=".", help="directory for output files")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's run-level seeds")
        p.add_argument("--preset", default=None,
                       help="override the dropout section with a named preset "
                            "(model/benchmark)")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SuffixdropError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
