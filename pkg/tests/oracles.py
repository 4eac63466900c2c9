"""Independent scalar reference implementations used as test oracles.

Everything here is written directly from the layer definitions with plain
Python loops and the math module, deliberately sharing no code with the
engine under test.
"""

import math

import numpy as np


def dense_oracle(x, w, b):
    """y[i, q] = sum_p x[i, p] w[p, q] + b[q], triple loop."""
    n, P = x.shape
    Q = w.shape[1]
    out = np.zeros((n, Q))
    for i in range(n):
        for q in range(Q):
            acc = 0.0
            for p in range(P):
                acc += x[i, p] * w[p, q]
            out[i, q] = acc + b[q]
    return out


def conv2d_oracle(img, w, b, stride=1, padding="same"):
    """Six-loop direct convolution, NHWC / [K, K, C, F], zero padding."""
    n, H, W, C = img.shape
    K = w.shape[0]
    F = w.shape[3]
    if padding == "same":
        Ho, Wo = -(-H // stride), -(-W // stride)
        pt = max((Ho - 1) * stride + K - H, 0) // 2
        pl = max((Wo - 1) * stride + K - W, 0) // 2
    else:
        Ho, Wo = (H - K) // stride + 1, (W - K) // stride + 1
        pt = pl = 0
    out = np.zeros((n, Ho, Wo, F))
    for i in range(n):
        for lo in range(Ho):
            for mo in range(Wo):
                for f in range(F):
                    acc = 0.0
                    for dl in range(K):
                        for dm in range(K):
                            for c in range(C):
                                li = lo * stride + dl - pt
                                mi = mo * stride + dm - pl
                                if 0 <= li < H and 0 <= mi < W:
                                    acc += img[i, li, mi, c] * w[dl, dm, c, f]
                    out[i, lo, mo, f] = acc + b[f]
    return out


def bm_neuron_oracle(x, vplus, vminus, v, sentinel):
    """Four-term BM neuron for one input vector and one output unit,
    written term by term from the defining expression."""

    def ln_or_sentinel(val):
        return math.log(val) if val > 0 else sentinel

    lx_pos = [ln_or_sentinel(xj if xj >= 0 else 0.0) for xj in x]
    lx_neg = [ln_or_sentinel(-xj if xj < 0 else 0.0) for xj in x]

    def term(lx, bank):
        cands = [l + bk for l, bk in zip(lx, bank) if l > sentinel]
        return math.exp(max(cands)) if cands else 0.0

    return (term(lx_pos, vplus) - term(lx_pos, vminus)
            - term(lx_neg, vplus) + term(lx_neg, vminus) + v)


def bm_dense_oracle(x, vplus, vminus, v, sentinel):
    n, P = x.shape
    Q = vplus.shape[1]
    out = np.zeros((n, Q))
    for i in range(n):
        for q in range(Q):
            out[i, q] = bm_neuron_oracle(x[i], vplus[:, q], vminus[:, q], v[q], sentinel)
    return out


def central_diff(f, arr, idx, h=1e-5):
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2.0 * h)
