"""Numba kernels for the four-path log-domain max reductions of BM layers.

Term layout, fixed everywhere: index t in 0..3 means
    t=0: positive inputs against the positive weight bank (combined +)
    t=1: positive inputs against the negative weight bank (combined -)
    t=2: negative inputs against the positive weight bank (combined -)
    t=3: negative inputs against the negative weight bank (combined +)

Inputs arrive as lx = ln|x| with entries at or below the sentinel marking
x == 0 (or clamped underflow); those entries are skipped, so an empty sign
branch yields a max of 2*sentinel whose exp underflows to exactly 0.0.
Ties in a max resolve to the lowest input index: the scan is ascending with
a strict comparison.

Kernels are single-threaded and accumulate in a fixed order, so results are
bit-reproducible.  They release the GIL, which lets evaluation shard
batches across Python threads without data races (each call owns its
output).
"""

from __future__ import annotations

import numpy as np
from numba import njit

TERM_SIGNS = np.array([1.0, -1.0, -1.0, 1.0])


@njit(cache=True, nogil=True)
def bm_max_terms(lx, sign_pos, vplus, vminus, sentinel):
    """Max-plus reductions for all four terms.

    lx: [n, P] log-magnitudes, sign_pos: [n, P] bool, banks: [P, Q].
    Returns (m, arg): m[i, t, q] is the max of lx + bank over the term's
    sign branch (2*sentinel if the branch is empty), arg the winning input
    index (-1 if empty).
    """
    n, P = lx.shape
    Q = vplus.shape[1]
    m = np.full((n, 4, Q), 2.0 * sentinel)
    arg = np.full((n, 4, Q), -1, dtype=np.int64)
    for i in range(n):
        for j in range(P):
            l = lx[i, j]
            if l <= sentinel:
                continue
            base = 0 if sign_pos[i, j] else 2
            for q in range(Q):
                c = l + vplus[j, q]
                if c > m[i, base, q]:
                    m[i, base, q] = c
                    arg[i, base, q] = j
                c = l + vminus[j, q]
                if c > m[i, base + 1, q]:
                    m[i, base + 1, q] = c
                    arg[i, base + 1, q] = j
    return m, arg


@njit(cache=True, nogil=True)
def bm_backward_into(terms, arg, grad_pre, d_vplus, d_vminus, d_lx):
    """Route gradients through the argmax of each term, accumulating into
    caller-owned buffers.

    terms: [n, 4, Q] exp'd term values, arg: [n, 4, Q] winning indices,
    grad_pre: [n, Q] gradient at the pre-activation.  Each term contributes
    sign * grad * term to exactly one weight slot (d_vplus/d_vminus [P, Q])
    and one log-input slot (d_lx [n, P]); vanished terms contribute nothing.
    """
    n, _, Q = terms.shape
    for i in range(n):
        for t in range(4):
            sign = 1.0 if t == 0 or t == 3 else -1.0
            bank_plus = t == 0 or t == 2
            for q in range(Q):
                j = arg[i, t, q]
                if j < 0:
                    continue
                g = sign * grad_pre[i, q] * terms[i, t, q]
                if g == 0.0:
                    continue
                if bank_plus:
                    d_vplus[j, q] += g
                else:
                    d_vminus[j, q] += g
                d_lx[i, j] += g
