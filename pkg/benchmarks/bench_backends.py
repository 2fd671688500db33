#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Per-kernel timings at a slide-scale size (N patches x d dims) and a small-bag
size, plus one end-to-end training episode per backend. Run after building
the package:

    python benchmarks/bench_backends.py [--patches 80] [--dim 64] [--reps 300]
"""

import argparse
import importlib
import tempfile
import time

import numpy as np


def timeit(fn, *args, reps=300):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(reps):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / reps)
    return best * 1e6  # us


def kernel_cases(rng, n, d, da, dh, s):
    bag = rng.standard_normal((n, d))
    v = rng.standard_normal((da, d))
    u = rng.standard_normal((da, d))
    w = rng.standard_normal(da)
    wq, wk, wv = (rng.standard_normal((d, dh)) for _ in range(3))
    wo = rng.standard_normal((dh, d))
    token = rng.standard_normal(d)
    gamma, beta = np.ones(d), np.zeros(d)
    head_w = rng.standard_normal((s, d))
    z = rng.standard_normal(d)
    z /= np.linalg.norm(z)
    g = rng.standard_normal(d)

    def cases(mod):
        abmil_fwd = mod.abmil_forward(bag, v, u, w)
        xf_fwd = mod.xformer_forward(bag, wq, wk, wv, wo, token, gamma, beta)
        head_fwd = mod.head_forward(head_w, 0.07, z)
        bgmp_fwd = mod.bgmp_forward(bag)
        return [
            ("matmul (bag @ proj.T)", mod.matmul, (bag, np.ascontiguousarray(v.T))),
            ("bgap forward", mod.bgap_forward, (bag,)),
            ("bgmp forward", mod.bgmp_forward, (bag,)),
            ("bgmp backward", mod.bgmp_backward,
             (bgmp_fwd[0], bgmp_fwd[1], bgmp_fwd[2], n, g)),
            ("abmil forward", mod.abmil_forward, (bag, v, u, w)),
            ("abmil backward", mod.abmil_backward,
             (bag, v, u, w, abmil_fwd[1], abmil_fwd[2], abmil_fwd[3],
              abmil_fwd[0], abmil_fwd[4], g)),
            ("transformer forward", mod.xformer_forward,
             (bag, wq, wk, wv, wo, token, gamma, beta)),
            ("transformer backward", mod.xformer_backward,
             (wq, wk, wv, wo, token, gamma, beta) + tuple(xf_fwd) + (g,)),
            ("head forward", mod.head_forward, (head_w, 0.07, z)),
            ("head backward", mod.head_backward,
             (head_fwd[2], head_fwd[3], 0.07, z, head_fwd[0], head_fwd[1], 0, True)),
        ]

    return cases


def end_to_end(seconds_budget=None):
    from zsmil.aggregators import AggregatorKind
    from zsmil.dataio import SyntheticSpec, generate_synthetic
    from zsmil.head import InitStrategy
    from zsmil.trainer import TrainConfig, run_protocol

    with tempfile.TemporaryDirectory() as td:
        spec = SyntheticSpec(seed=11)
        entries, protos = generate_synthetic(spec, td)
        config = TrainConfig(aggregator=AggregatorKind.ABMIL,
                             init=InitStrategy.ZERO_SHOT)
        t0 = time.perf_counter()
        run_protocol(entries, protos, config, [4], repeats=2, base_seed=1)
        return time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--patches", type=int, default=80)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--hidden", type=int, default=128)
    parser.add_argument("--reps", type=int, default=300)
    parser.add_argument("--skip-e2e", action="store_true")
    args = parser.parse_args()

    py = importlib.import_module("zsmil._core_py")
    try:
        c = importlib.import_module("zsmil._core")
    except ImportError:
        c = None
        print("compiled extension not built; timing the numpy fallback only\n")

    rng = np.random.default_rng(0)
    sizes = [("slide-scale", args.patches, args.dim, args.hidden, args.dim),
             ("small-bag", 8, 16, 8, 8)]
    for label, n, d, da, dh in sizes:
        print(f"== {label}: N={n} d={d} attention-hidden={da} ==")
        header = f"{'kernel':<24}{'numpy (us)':>12}"
        if c is not None:
            header += f"{'compiled (us)':>15}{'speedup':>9}"
        print(header)
        case_builder = kernel_cases(rng, n, d, da, dh, s=2)
        py_cases = case_builder(py)
        c_cases = case_builder(c) if c is not None else None
        for i, (name, fn, fn_args) in enumerate(py_cases):
            t_py = timeit(fn, *fn_args, reps=args.reps)
            line = f"{name:<24}{t_py:>12.1f}"
            if c_cases is not None:
                t_c = timeit(c_cases[i][1], *c_cases[i][2], reps=args.reps)
                line += f"{t_c:>15.1f}{t_py / t_c:>8.1f}x"
            print(line)
        print()

    if not args.skip_e2e:
        import os

        print("== end-to-end: 2 training episodes, ABMIL, stock dataset ==")
        active = os.environ.get("ZSMIL_BACKEND") or ("c" if c else "python")
        print(f"active backend ({active}): {end_to_end():.2f}s")
        print("rerun under ZSMIL_BACKEND=python / ZSMIL_BACKEND=c to compare")


if __name__ == "__main__":
    main()
