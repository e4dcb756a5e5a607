"""Time the pooling kernels: compiled extension vs NumPy fallback.

    python benchmarks/bench_kernels.py [--batch 64] [--max-len 64] [--dim 32] [--repeat 20]
"""
import argparse
import sys
import timeit

import numpy as np

from dialcl import _pykernels, kernels


def make_inputs(batch, max_len, dim, vocab, seed=0):
    r = np.random.default_rng(seed)
    E = r.normal(size=(vocab, dim))
    P = r.normal(size=(max_len, dim))
    lengths = r.integers(max_len // 4, max_len + 1, batch)
    ids = r.integers(0, vocab, (batch, max_len))
    mask = r.choice([0.0, 1.0 / 0.9], p=[0.1, 0.9], size=(batch, max_len, dim))
    g = r.normal(size=(batch, dim))
    return E, P, ids, lengths, mask, g


def bench(mod, E, P, ids, lengths, mask, g, repeat):
    def fwd():
        return mod.pool_forward(E, P, ids, lengths, mask)

    _, act = fwd()

    def bwd():
        gE, gP = np.zeros_like(E), np.zeros_like(P)
        mod.pool_backward(g, ids, lengths, mask, act, gE, gP)

    t_f = min(timeit.repeat(fwd, number=1, repeat=repeat))
    t_b = min(timeit.repeat(bwd, number=1, repeat=repeat))
    return t_f, t_b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--max-len", type=int, default=64)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--vocab", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    inputs = make_inputs(args.batch, args.max_len, args.dim, args.vocab)
    py = bench(_pykernels, *inputs, args.repeat)
    cy = bench(kernels.compiled_backend, *inputs, args.repeat)
    pooled_py, _ = _pykernels.pool_forward(*inputs[:5])
    pooled_cy, _ = kernels.compiled_backend.pool_forward(*inputs[:5])
    print(f"batch={args.batch} max_len={args.max_len} dim={args.dim} (best of {args.repeat})")
    print(f"{'kernel':<10} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, a, b in (("forward", py[0], cy[0]), ("backward", py[1], cy[1])):
        print(f"{name:<10} {a * 1e3:10.3f} {b * 1e3:10.3f} {a / b:8.2f}x")
    print(f"max |forward diff| = {np.abs(pooled_py - pooled_cy).max():.2e}")
    print(f"in use: forward=numpy, backward={kernels.BACKEND}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
