"""Brute-force reference implementations used to cross-check the fast paths.

Everything here is written as plain nested loops over definitions, on
purpose: these functions share no code with ``autodiff`` or ``ortho`` so
they can serve as independent oracles in tests and in the CLI's
``oracle-check`` subcommand. They are slow and meant for small sizes only.
"""

from __future__ import annotations

import numpy as np


def conv2d_reference(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct window-by-window cross-correlation of (C,H,W) with (M,C,kh,kw)."""
    c, h, wid = x.shape
    m, ck, kh, kw = w.shape
    assert ck == c
    s = int(stride)
    p = int(padding)
    ho = (h + 2 * p - kh) // s + 1
    wo = (wid + 2 * p - kw) // s + 1
    out = np.zeros((m, ho, wo))
    for f in range(m):
        for y in range(ho):
            for xx in range(wo):
                acc = 0.0
                for ch in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            hh = y * s + u - p
                            ww = xx * s + v - p
                            if 0 <= hh < h and 0 <= ww < wid:
                                acc += w[f, ch, u, v] * x[ch, hh, ww]
                out[f, y, xx] = acc
    return out


def self_conv_reference(w: np.ndarray, stride: int) -> np.ndarray:
    """Filter-pair correlation tensor by direct shift-and-sum.

    Entry [i,j,a,b] sums w[i,c,u,v] * w[j,c,u+S*(a-a0), v+S*(b-b0)] over all
    taps that stay inside the kernel support, where (a0, b0) is the central
    (zero-shift) position. Shifts run over all multiples of the stride with
    magnitude at most k-1 per axis.
    """
    m, c, kh, kw = w.shape
    s = int(stride)
    a0 = (kh - 1) // s
    b0 = (kw - 1) // s
    hs = 2 * a0 + 1
    ws = 2 * b0 + 1
    z = np.zeros((m, m, hs, ws))
    for i in range(m):
        for j in range(m):
            for a in range(hs):
                for b in range(ws):
                    acc = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                uu = u + s * (a - a0)
                                vv = v + s * (b - b0)
                                if 0 <= uu < kh and 0 <= vv < kw:
                                    acc += w[i, ch, u, v] * w[j, ch, uu, vv]
                    z[i, j, a, b] = acc
    return z


def identity_target_reference(m: int, kh: int, kw: int, stride: int) -> np.ndarray:
    """The target the self-convolution is pushed toward: 1 on the diagonal
    at the zero-shift position, 0 everywhere else."""
    s = int(stride)
    hs = 2 * ((kh - 1) // s) + 1
    ws = 2 * ((kw - 1) // s) + 1
    target = np.zeros((m, m, hs, ws))
    for i in range(m):
        target[i, i, (hs - 1) // 2, (ws - 1) // 2] = 1.0
    return target
