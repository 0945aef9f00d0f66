"""Acceptance suite: one test per criterion, run at the stated tolerances.

Each test prints a PASS line once its assertions hold, so
`pytest tests/test_acceptance.py -v -s` reads as a checklist.
"""

import json

import numpy as np
import pytest

from suffixdrop.cli import main
from suffixdrop.cost import (
    dropout_prediction,
    predict_dropout,
    predict_vanilla,
    reconcile,
    sweep_rows,
    vanilla_prediction,
)
from suffixdrop.decoder import DecodePolicy, decode, even_schedule
from suffixdrop.fileio import write_json
from suffixdrop.model import ModelConfig, init_model
from suffixdrop.suffix import DropoutConfig, expected_density, retention_probability, sample_plan
from suffixdrop.tensor import matmul, softmax_rows
from suffixdrop.analysis import partition, suffix_attention_output

from conftest import ScriptedModel, scripted_constant


def ok(message):
    print(f"ACCEPTANCE PASS: {message}")


def test_criterion_1_dense_equivalence_oracle():
    """Retain-all suffix dropout equals no-dropout decode token for token."""
    rng = np.random.default_rng(0xD15E)
    triples = 0
    while triples < 20:
        model_seed = int(rng.integers(0, 2**31))
        decode_seed = int(rng.integers(0, 2**31))
        vocab = int(rng.integers(8, 16))
        gen_len = int(rng.choice([16, 32, 64, 128]))
        block = int(rng.choice([4, 8, 16]))
        if gen_len % block:
            continue
        cfg = ModelConfig(vocab_size=vocab, dim=16, n_heads=2,
                          n_layers=int(rng.integers(1, 3)), seed=model_seed)
        model = init_model(cfg)
        prompt = rng.integers(2, vocab, int(rng.integers(0, 5)))
        mode = "threshold_parallel" if triples % 3 == 0 else "topk"
        schedule = None if mode == "threshold_parallel" else even_schedule(
            block, int(rng.integers(1, block + 1)))
        base_policy = DecodePolicy(mask_id=0, eos_id=1, block_size=block,
                                   mode=mode, k_schedule=schedule)
        drop_policy = DecodePolicy(mask_id=0, eos_id=1, block_size=block,
                                   mode=mode, k_schedule=schedule,
                                   use_suffix_dropout=True)
        base_tokens, _ = decode(model, prompt, gen_len, base_policy)
        drop_tokens, _ = decode(
            model, prompt, gen_len, drop_policy,
            DropoutConfig.retain_all(gen_len, rng_seed=decode_seed),
        )
        assert np.array_equal(base_tokens, drop_tokens), (
            f"divergence for model seed {model_seed}, decode seed {decode_seed}"
        )
        triples += 1
    ok(f"criterion 1: retain-all dropout == vanilla decode for {triples} random triples")


def test_criterion_2_rope_remap_exactness():
    """Sparse-run key rotations match dense-run rotations at kept positions."""
    model = init_model(ModelConfig(vocab_size=16, dim=32, n_heads=4, n_layers=2, seed=31))
    rng = np.random.default_rng(0x20FE)
    total, prefix_len = 64, 12
    mask_id = 0
    tokens = np.concatenate([
        rng.integers(2, 16, prefix_len),
        np.full(total - prefix_len, mask_id),
    ])
    dense = model.forward(tokens, np.arange(total), capture_kv=True)
    worst = 0.0
    for _ in range(100):
        n_keep = int(rng.integers(1, total - prefix_len))
        suffix_keep = np.sort(rng.choice(
            np.arange(prefix_len, total), size=n_keep, replace=False))
        keep = np.concatenate([np.arange(prefix_len), suffix_keep])
        sparse = model.forward(tokens[keep], keep, capture_kv=True)
        dense_rows = dense.kv[0][0][keep]
        sparse_rows = sparse.kv[0][0]
        worst = max(worst, float(np.max(np.abs(sparse_rows - dense_rows))))
    assert worst < 1e-6, f"max-abs key rotation difference {worst}"
    ok(f"criterion 2: 100 sparse keep sets, max-abs key-rotation diff {worst:.2e} < 1e-6")


def test_criterion_3_suffix_output_identity():
    """Partitioned suffix output equals the full attention product (1e-6)."""
    rng = np.random.default_rng(0xE108)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 65))
        c = int(rng.integers(0, n - 1))
        s_b = int(rng.integers(c + 1, n + 1))
        width = int(rng.integers(1, 17))
        attn = softmax_rows(rng.standard_normal((n, n)).astype(np.float32))
        values = rng.standard_normal((n, width)).astype(np.float32)
        part = partition(attn, c, s_b)
        recombined = suffix_attention_output(part, values[:c], values[c:s_b], values[s_b:])
        full = matmul(attn, values)[s_b:]
        if recombined.size:
            worst = max(worst, float(np.max(np.abs(recombined - full))))
    assert worst < 1e-6, f"max-abs identity violation {worst}"
    ok(f"criterion 3: 100 random partitions up to 64 positions, max-abs diff {worst:.2e} < 1e-6")


@pytest.mark.parametrize(
    "decay_k,scale_a,window,nominal",
    [(4.0, 2.0, 256, 0.250), (3.0, 2.3, 512, 0.375)],
    ids=["k4_a2_w256", "k3_a2.3_w512"],
)
def test_criterion_4_sampler_statistics(decay_k, scale_a, window, nominal):
    """Monte Carlo keep frequencies and density against the closed form."""
    draws = 10_000
    cfg = DropoutConfig(window_w=window, decay_k=decay_k, scale_a=scale_a, rng_seed=0xACC4)
    counts = np.zeros(window, dtype=np.int64)
    for counter in range(draws):
        plan = sample_plan(0, window, cfg, counter)
        counts[plan.kept_positions] += 1
    freq = counts / draws
    probs = np.array([retention_probability(d, cfg) for d in range(1, window + 1)])
    sigma = np.sqrt(probs * (1 - probs) / draws)
    deviation = np.abs(freq - probs)
    bad = np.flatnonzero(np.where(sigma > 0, deviation > 4 * sigma, deviation > 0))
    assert bad.size == 0, f"4-sigma violations at distances {(bad + 1).tolist()}"

    closed_form = expected_density(cfg)
    measured = float(freq.mean())
    assert abs(closed_form - nominal) <= 0.01
    assert abs(measured - nominal) <= 0.01
    assert abs(measured - closed_form) <= 0.005
    ok(
        f"criterion 4: k={decay_k} a={scale_a} W={window}: all {window} distances within "
        f"4 sigma; density measured {measured:.4f} vs closed form {closed_form:.4f} "
        f"(nominal {nominal:.3f}, within 0.01)"
    )


def test_criterion_5_cost_reduction():
    """Predicted ~9x suffix-visit reduction; measured counters agree."""
    gen_len, block, window = 1024, 32, 256
    cfg = DropoutConfig(window_w=window, decay_k=4.0, scale_a=2.0)
    density = expected_density(cfg)

    vanilla = predict_vanilla(gen_len, block, 1)
    nominal_predicted = predict_dropout(gen_len, block, window, 0.25, 1)
    assert vanilla == 15872
    assert nominal_predicted == pytest.approx(1760.0)
    assert vanilla / nominal_predicted == pytest.approx(9.0, abs=0.1)

    # exact match for deterministic keep sets
    retain_policy = DecodePolicy(mask_id=0, eos_id=1, block_size=8,
                                 use_suffix_dropout=True)
    model = scripted_constant(8, 2)
    _, retain_trace = decode(model, np.full(4, 3), 64, retain_policy,
                             DropoutConfig.retain_all(64))
    retain_report = reconcile(retain_trace, vanilla_prediction(64, 8, steps_per_block=1))
    assert retain_report.exact_match

    # measured mean over 200 seeds within 4 sigma / sqrt(200) of the
    # prediction at the closed-form density (the sampler's exact expectation
    # differs from that formula only through tail-window rescaling)
    policy = DecodePolicy(mask_id=0, eos_id=1, block_size=block,
                          k_schedule=(block,), use_suffix_dropout=True)
    totals = []
    for seed in range(200):
        _, trace = decode(model, np.full(4, 3), gen_len, policy, cfg.with_seed(seed))
        totals.append(trace.suffix_key_visits)
        assert trace.suffix_key_visits == sum(r.live_suffix_count for r in trace.steps)
    measured_mean = float(np.mean(totals))

    prediction = dropout_prediction(gen_len, block, cfg, steps_per_block=1)
    sigma = np.sqrt(sum(prediction.per_step_var))
    bound = 4 * sigma / np.sqrt(200)
    formula = predict_dropout(gen_len, block, window, density, 1)
    assert abs(measured_mean - formula) <= bound, (
        f"measured mean {measured_mean:.2f} vs predicted {formula:.2f}, bound {bound:.2f}"
    )
    assert abs(measured_mean - prediction.total()) <= bound

    # bounded-per-block-cost column is constant once L - B >= W
    rows = sweep_rows([256, 512, 1024, 2048], block, window, density, 1)
    capped = {row["per_block_cost_max"] for row in rows if row["gen_len"] - block >= window}
    assert len(capped) == 1
    ok(
        f"criterion 5: ratio {vanilla}/{nominal_predicted:.0f} = "
        f"{vanilla / nominal_predicted:.2f}x; measured mean {measured_mean:.1f} within "
        f"{bound:.2f} of predicted {formula:.1f}; per-block cost constant in L"
    )


def test_criterion_6_early_termination_fixture():
    """eos in the second of eight blocks: later blocks never touched."""
    prompt_len, block, gen_len = 4, 8, 64
    eos_lo = prompt_len + block      # block index 1
    model = scripted_constant(8, 2, eos_id=1, eos_span=(eos_lo, eos_lo + block))
    policy = DecodePolicy(mask_id=0, eos_id=1, block_size=block, early_termination=True)
    tokens, trace = decode(model, np.full(prompt_len, 3), gen_len, policy)

    blocks_touched = {r.block for r in trace.steps}
    assert blocks_touched == {0, 1}, f"forward passes touched blocks {blocks_touched}"
    assert trace.early_terminated_block == 1
    tail_start = prompt_len + 2 * block
    assert (tokens[tail_start:] == policy.eos_id).all()
    assert trace.forward_passes == 2

    # without early termination every block costs forward passes
    base_policy = DecodePolicy(mask_id=0, eos_id=1, block_size=block)
    _, base_trace = decode(model, np.full(prompt_len, 3), gen_len, base_policy)
    assert trace.forward_passes < base_trace.forward_passes
    ok(
        "criterion 6: eos in block 1 of 8 -> zero forward passes for blocks 2..7, "
        "tail eos-filled"
    )


def test_criterion_7_monotone_unmasking_and_threshold_progress():
    """1000 randomized decodes: shrinking masks, guaranteed progress,
    threshold-qualified unmasks have confidence >= 0.9."""
    rng = np.random.default_rng(0xACC7)
    models = {}
    threshold_qualified = 0
    for trial in range(1000):
        block = int(rng.choice([2, 4]))
        n_blocks = int(rng.integers(1, 3))
        gen_len = block * n_blocks
        prompt_len = int(rng.integers(0, 4))
        use_threshold = trial % 2 == 0
        if trial % 4 == 0:
            # scripted decodes exercise the above-threshold parallel path
            vocab = 8
            model = scripted_constant(vocab, int(rng.integers(2, vocab)))
        else:
            vocab = int(rng.integers(6, 13))
            key = (vocab, trial % 7)
            if key not in models:
                models[key] = init_model(ModelConfig(
                    vocab_size=vocab, dim=8, n_heads=2, n_layers=1,
                    seed=int(rng.integers(0, 2**31))))
            model = models[key]
        policy = DecodePolicy(
            mask_id=0, eos_id=1, block_size=block,
            mode="threshold_parallel" if use_threshold else "topk",
            k_schedule=None if use_threshold else even_schedule(
                block, int(rng.integers(1, block + 1))),
            confidence_threshold=0.9,
        )
        prompt = rng.integers(2, vocab, prompt_len)
        tokens, trace = decode(model, prompt, gen_len, policy)

        mask_set = set(range(prompt_len, prompt_len + gen_len))
        for rec in trace.steps:
            stepped = set(rec.unmasked_positions)
            assert len(stepped) >= 1, "a step made no progress"
            assert stepped <= mask_set, "unmasked a position outside the mask set"
            mask_set -= stepped  # M_s = M_{s-1} \ U_s
            if use_threshold:
                if rec.threshold_fallback:
                    assert len(stepped) == 1
                    assert rec.confidences[0] < 0.9
                else:
                    assert all(c >= 0.9 for c in rec.confidences)
                    threshold_qualified += len(stepped)
        assert not mask_set, "decode finished with masked positions left"
        assert len(trace.steps) <= gen_len
    assert threshold_qualified > 0, "no decode exercised the >= 0.9 parallel path"
    ok(
        "criterion 7: 1000 randomized decodes monotone with guaranteed progress; "
        f"{threshold_qualified} tokens unmasked via the 0.9 threshold rule"
    )


def _run_twice_and_compare(tmp_path, command, doc, outputs):
    config = tmp_path / f"{command}-replay.json"
    write_json(config, doc)
    first = {}
    for round_no in range(2):
        code = main([command, "--config", str(config), "--out", str(tmp_path)])
        assert code == 0, f"{command} exited {code}"
        for name in outputs:
            data = (tmp_path / name).read_bytes()
            if round_no == 0:
                first[name] = data
            else:
                assert data == first[name], f"{command}: {name} differs between runs"


def test_criterion_8_determinism_replay(tmp_path):
    """Every CLI subcommand is byte-identical across two runs."""
    model = {"vocab_size": 12, "dim": 16, "n_heads": 2, "n_layers": 1, "seed": 5}
    _run_twice_and_compare(
        tmp_path, "decode",
        {
            "model": model,
            "policy": {"mask_id": 0, "eos_id": 1, "block_size": 4,
                       "steps_per_block": 2, "use_prefix_cache": True,
                       "early_termination": True},
            "preset": "llada-instruct/gsm8k",
            "dropout_seed": 3,
            "prompt": {"length": 3, "seed": 9},
            "gen_len": 12,
        },
        ["tokens.json", "trace.json"],
    )
    _run_twice_and_compare(
        tmp_path, "compare",
        {
            "model": model,
            "prompt": {"length": 3, "seed": 4},
            "gen_len": 8,
            "left": {"policy": {"mask_id": 0, "eos_id": 1, "block_size": 4}},
            "right": {"policy": {"mask_id": 0, "eos_id": 1, "block_size": 4},
                      "dropout": {"window_w": 8, "decay_k": 1.0, "scale_a": 1e9}},
            "expect": "identical",
        },
        ["compare.json"],
    )
    _run_twice_and_compare(
        tmp_path, "analyze",
        {
            "model": {"vocab_size": 16, "dim": 16, "n_heads": 2, "n_layers": 2, "seed": 3},
            "policy": {"mask_id": 0, "eos_id": 1, "block_size": 4},
            "prompt": {"length": 4, "seed": 11},
            "gen_len": 24,
            "n_samples": 2,
            "snapshot_block": 1,
            "alignment": 2,
            "spike": {"top_n": 2, "exclusion_prefix": 4},
        },
        ["profile.csv", "spike.json"],
    )
    _run_twice_and_compare(
        tmp_path, "sampler-check",
        {"dropout": {"window_w": 64, "decay_k": 3.0, "scale_a": 1.8, "rng_seed": 17},
         "draws": 3000},
        ["sampler_check.json"],
    )
    _run_twice_and_compare(
        tmp_path, "cost",
        {"gen_len": 1024, "block_size": 32, "window": 256, "density": 0.25,
         "steps_per_block": 1},
        ["cost.json"],
    )
    _run_twice_and_compare(
        tmp_path, "cost",
        {"sweep": {"gen_lens": [256, 512, 1024, 2048], "block_size": 32,
                   "window": 128, "density": 0.5, "steps_per_block": 1}},
        ["cost_sweep.csv"],
    )
    ok("criterion 8: all five subcommands byte-identical across replay")
