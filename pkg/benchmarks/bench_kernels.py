"""Benchmark the compiled matmul kernel against the pure-NumPy lane.

Times raw matmul shapes, a transformer forward pass, and a short decode,
then prints per-lane results with speedups.  Lane selection happens at
import, so `both` mode re-executes this script once per lane with
SUFFIXDROP_KERNEL set.

    python3 benchmarks/bench_kernels.py              # both lanes + summary
    python3 benchmarks/bench_kernels.py --lane numpy # one lane
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def best_of(fn, repeats, warmup=1):
    for _ in range(warmup):
        fn()
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_lane(repeats):
    from suffixdrop.decoder import DecodePolicy, decode
    from suffixdrop.kernels import backend
    from suffixdrop.model import ModelConfig, init_model
    from suffixdrop.suffix import DropoutConfig
    from suffixdrop.tensor import matmul

    results = {"backend": backend(), "cases": {}}
    rng = np.random.default_rng(0)

    shapes = [
        ("matmul 128x64 @ 64x64", (128, 64), (64, 64)),
        ("matmul 256x64 @ 64x256", (256, 64), (64, 256)),
        ("matmul 256x256 @ 256x64", (256, 256), (256, 64)),
        ("matmul 1024x64 @ 64x64", (1024, 64), (64, 64)),
    ]
    for label, sa, sb in shapes:
        a = rng.standard_normal(sa, dtype=np.float32)
        b = rng.standard_normal(sb, dtype=np.float32)
        results["cases"][label] = best_of(lambda: matmul(a, b), repeats)

    model = init_model(ModelConfig(vocab_size=64, dim=64, n_heads=4, n_layers=4, seed=3))
    tokens = rng.integers(2, 64, 256)
    results["cases"]["forward 256 tokens (dim 64, 4 layers)"] = best_of(
        lambda: model.forward(tokens), max(1, repeats // 2)
    )

    policy = DecodePolicy(mask_id=0, eos_id=1, block_size=32, k_schedule=(8,) * 4,
                          use_suffix_dropout=True)
    dropout = DropoutConfig(window_w=64, decay_k=3.0, scale_a=1.6, rng_seed=1)
    prompt = rng.integers(2, 64, 8)
    results["cases"]["decode 128 tokens (B=32, 4 steps/block, W=64)"] = best_of(
        lambda: decode(model, prompt, 128, policy, dropout), max(1, repeats // 3)
    )
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--lane", choices=["compiled", "numpy", "both"], default="both")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--json", action="store_true", help="emit one JSON object")
    args = parser.parse_args()

    if args.lane != "both":
        os.environ.setdefault("SUFFIXDROP_KERNEL", args.lane)
        results = run_lane(args.repeats)
        if args.json:
            print(json.dumps(results))
        else:
            print(f"lane: {results['backend']}")
            for label, seconds in results["cases"].items():
                print(f"  {label:<48s} {seconds * 1e3:9.3f} ms")
        return 0

    lanes = {}
    for lane in ("compiled", "numpy"):
        env = dict(os.environ, SUFFIXDROP_KERNEL=lane)
        proc = subprocess.run(
            [sys.executable, __file__, "--lane", lane, "--repeats", str(args.repeats),
             "--json"],
            capture_output=True, text=True, env=env,
        )
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            print(f"lane {lane} failed; is the extension built?")
            return 1
        lanes[lane] = json.loads(proc.stdout)

    print(f"{'case':<48s} {'compiled':>12s} {'numpy':>12s} {'speedup':>9s}")
    for label in lanes["compiled"]["cases"]:
        fast = lanes["compiled"]["cases"][label]
        slow = lanes["numpy"]["cases"][label]
        print(f"{label:<48s} {fast * 1e3:10.3f} ms {slow * 1e3:10.3f} ms "
              f"{slow / fast:8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
