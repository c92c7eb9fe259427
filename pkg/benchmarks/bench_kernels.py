"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 50]

Shapes follow the generator/discriminator layers at n=32 with batch 4, plus
all-pairs hop distances on a 116-node graph.
"""
import argparse
import timeit

import numpy as np

from sfcgan import kernels

CONV_CASES = [
    # (batch, channels, h, w, k, stride, pad)
    (4, 1, 32, 32, 3, 1, 1),
    (4, 16, 32, 32, 4, 2, 1),
    (4, 32, 16, 16, 3, 1, 1),
    (4, 16, 32, 32, 3, 1, 1),
]


def out_size(h, k, s, p):
    return (h + 2 * p - k) // s + 1


def bench(fn, repeat):
    t = timeit.repeat(fn, number=1, repeat=repeat)
    return min(t) * 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled backend unavailable; only the fallback would run")
        return
    from sfcgan import _kernels

    rng = np.random.default_rng(0)
    print(f"{'kernel':<10}{'shape':<28}{'numpy us':>10}{'cython us':>11}{'speedup':>9}")
    for b, c, h, w, k, s, p in CONV_CASES:
        x = rng.standard_normal((b, c, h, w)).astype(np.float32)
        oh, ow = out_size(h, k, s, p), out_size(w, k, s, p)
        cols = rng.standard_normal((b, c * k * k, oh * ow)).astype(np.float32)
        shape = f"{b}x{c}x{h}x{w} k{k} s{s} p{p}"
        for name, py, cy in (
            ("im2col", lambda: kernels.py_im2col(x, k, s, p, oh, ow),
             lambda: _kernels.im2col(x, k, s, p, oh, ow)),
            ("col2im", lambda: kernels.py_col2im(cols, c, h, w, k, s, p, oh, ow),
             lambda: _kernels.col2im(cols, c, h, w, k, s, p, oh, ow)),
        ):
            tp, tc = bench(py, args.repeat), bench(cy, args.repeat)
            print(f"{name:<10}{shape:<28}{tp:>10.1f}{tc:>11.1f}{tp / tc:>8.2f}x")

    a = rng.random((116, 116)) < 0.05
    a = np.triu(a, 1)
    a = a | a.T
    u8 = a.astype(np.uint8)
    tp = bench(lambda: kernels.py_hop_distances(a), max(5, args.repeat // 5))
    tc = bench(lambda: _kernels.hop_distances(u8), max(5, args.repeat // 5))
    print(f"{'hops':<10}{'116 nodes, p=0.05':<28}{tp:>10.1f}{tc:>11.1f}{tp / tc:>8.2f}x")


if __name__ == "__main__":
    main()
