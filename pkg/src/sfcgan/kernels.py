"""Hot kernels with a compiled backend and a numpy fallback.

The compiled module ``sfcgan._kernels`` is used when it imports cleanly and
``SFCGAN_PURE_PYTHON`` is unset. Both backends produce bitwise-identical
results: the loops accumulate in the same order.
"""
from __future__ import annotations

import os

import numpy as np

__all__ = ["BACKEND", "im2col", "col2im", "hop_distances", "py_im2col", "py_col2im", "py_hop_distances"]


def py_im2col(x: np.ndarray, k: int, stride: int, pad: int, oh: int, ow: int) -> np.ndarray:
    """Lower a (B, C, H, W) array, zero padded by ``pad``, to (B, C*k*k, oh*ow) patch columns."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    nb, nc = xp.shape[:2]
    cols = np.empty((nb, nc, k, k, oh, ow), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
    return cols.reshape(nb, nc * k * k, oh * ow)


def py_col2im(cols: np.ndarray, nc: int, h: int, w: int, k: int, stride: int, pad: int, oh: int,
              ow: int) -> np.ndarray:
    """Scatter-add patch columns into a zero (B, C, h, w) array; padding is dropped."""
    nb = cols.shape[0]
    hp, wp = h + 2 * pad, w + 2 * pad
    c6 = cols.reshape(nb, nc, k, k, oh, ow)
    xp = np.zeros((nb, nc, hp, wp), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += c6[:, :, ki, kj]
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])


def py_hop_distances(adj: np.ndarray) -> np.ndarray:
    """All-pairs hop counts by frontier expansion; -1 marks unreachable pairs."""
    a = np.asarray(adj, dtype=bool)
    n = a.shape[0]
    dist = np.full((n, n), -1, dtype=np.int32)
    np.fill_diagonal(dist, 0)
    reached = np.eye(n, dtype=bool)
    frontier = reached.copy()
    step = 0
    ai = a.astype(np.int32)
    while frontier.any():
        step += 1
        nxt = (frontier.astype(np.int32) @ ai > 0) & ~reached
        dist[nxt] = step
        reached |= nxt
        frontier = nxt
    return dist


def _select():
    if os.environ.get("SFCGAN_PURE_PYTHON", "") not in ("", "0"):
        return "python", py_im2col, py_col2im, py_hop_distances
    try:
        from . import _kernels
    except ImportError:
        return "python", py_im2col, py_col2im, py_hop_distances

    def c_im2col(x, k, stride, pad, oh, ow):
        return _kernels.im2col(np.ascontiguousarray(x), k, stride, pad, oh, ow)

    def c_col2im(cols, nc, h, w, k, stride, pad, oh, ow):
        return _kernels.col2im(np.ascontiguousarray(cols), nc, h, w, k, stride, pad, oh, ow)

    def c_hop_distances(adj):
        return _kernels.hop_distances(np.ascontiguousarray(adj, dtype=np.uint8))

    return "cython", c_im2col, c_col2im, c_hop_distances


BACKEND, im2col, col2im, hop_distances = _select()
