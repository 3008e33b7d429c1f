#!/usr/bin/env python3
"""Benchmark the compiled residual kernel against the pure-numpy fallback.

Times the per-frame residual/Jacobian evaluation (the optimizer's inner
loop) on both backends, then a full 50-frame calibration per backend in a
subprocess (RCMCALIB_PURE_PY=1 forces the fallback).

Usage: python benchmarks/bench_kernels.py [--frames N] [--repeats R]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from rcmcalib.kernels import available_backends


def kernel_args(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return (
        q, rng.normal(scale=30, size=3) + [0, 0, 120],
        0.35, 0.35, -0.35,
        np.array([0, 0, 1, 2, 3], dtype=np.int32),
        np.array([[-20, 0, 0], [0, 0, 0], [0, 0, 0], [9.6, 0, 0], [9.6, 0, 0]], float),
        9.1, 800.0, 800.0, 320.0, 256.0,
        rng.uniform(0, 640, size=(5, 2)), None,
        rng.normal(scale=30, size=3) + [0, 0, 170],
        1.0, 10.0,
    )


def bench_kernel(repeats):
    rng = np.random.default_rng(0)
    cases = [kernel_args(rng) for _ in range(64)]
    rows = []
    for name, mod in available_backends().items():
        for want_jac in (False, True):
            for args in cases[:4]:  # warm up
                mod.frame_residuals(*args, want_jac)
            t0 = time.perf_counter()
            n = 0
            while time.perf_counter() - t0 < 0.02 * repeats:
                mod.frame_residuals(*cases[n % len(cases)], want_jac)
                n += 1
            per_call = (time.perf_counter() - t0) / n
            rows.append((name, "resid+jac" if want_jac else "resid", per_call, n))
    return rows


def bench_pipeline(frames):
    code = (
        "import time\n"
        "from rcmcalib.simdata import default_config, generate_sequence, biased_noise_model\n"
        "from rcmcalib.io import sequence_from_synthetic\n"
        "from rcmcalib.pipeline import CalibConfig, calibrate\n"
        f"cfg = default_config(n_frames={frames}, seed=1, noise=biased_noise_model())\n"
        "seq = sequence_from_synthetic(cfg, generate_sequence(cfg))\n"
        "t0 = time.perf_counter()\n"
        "calibrate(seq.frames, seq.model, seq.camera, CalibConfig())\n"
        "print(time.perf_counter() - t0)\n"
    )
    out = {}
    for name, env_val in (("cython", "0"), ("python", "1")):
        env = dict(os.environ, RCMCALIB_PURE_PY=env_val)
        r = subprocess.run([sys.executable, "-c", code], capture_output=True,
                           text=True, env=env)
        if r.returncode == 0:
            out[name] = float(r.stdout.strip().splitlines()[-1])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    backends = available_backends()
    print(f"backends available: {', '.join(backends)}")
    print("\nper-call kernel timings:")
    rows = bench_kernel(args.repeats)
    base = {}
    for name, mode, per_call, n in rows:
        base.setdefault(mode, {})[name] = per_call
        print(f"  {name:7s} {mode:10s} {per_call * 1e6:9.2f} us/call ({n} calls)")
    for mode, by in base.items():
        if "cython" in by and "python" in by:
            print(f"  speedup {mode}: {by['python'] / by['cython']:.1f}x")

    print(f"\nend-to-end {args.frames}-frame calibration (subprocess per backend):")
    walls = bench_pipeline(args.frames)
    for name, wall in walls.items():
        print(f"  {name:7s} {wall:7.2f} s")
    if "cython" in walls and "python" in walls:
        print(f"  speedup: {walls['python'] / walls['cython']:.1f}x")


if __name__ == "__main__":
    main()
