"""Numba kernels for dense state-vector evolution.

Every gate in the IR is a real matrix, so kernels take real coefficients
acting on a complex128 amplitude array. Basis index i encodes qubit q as
bit (i >> q) & 1. All kernels mutate in place; reductions run serially so
results are reproducible.
"""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def ry_kernel(state, c, s, q):
    stride = 1 << q
    period = stride << 1
    for base in range(0, state.shape[0], period):
        for off in range(base, base + stride):
            a = state[off]
            b = state[off + stride]
            state[off] = c * a - s * b
            state[off + stride] = s * a + c * b


@numba.njit(cache=True, fastmath=True)
def cry_kernel(state, c, s, ctrl, q):
    stride = 1 << q
    period = stride << 1
    cbit = 1 << ctrl
    for base in range(0, state.shape[0], period):
        for off in range(base, base + stride):
            if off & cbit:
                a = state[off]
                b = state[off + stride]
                state[off] = c * a - s * b
                state[off + stride] = s * a + c * b


@numba.njit(cache=True)
def cnot_kernel(state, ctrl, q):
    stride = 1 << q
    period = stride << 1
    cbit = 1 << ctrl
    for base in range(0, state.shape[0], period):
        for off in range(base, base + stride):
            if off & cbit:
                tmp = state[off]
                state[off] = state[off + stride]
                state[off + stride] = tmp


@numba.njit(cache=True)
def x_kernel(state, q):
    stride = 1 << q
    period = stride << 1
    for base in range(0, state.shape[0], period):
        for off in range(base, base + stride):
            tmp = state[off]
            state[off] = state[off + stride]
            state[off + stride] = tmp


@numba.njit(cache=True, fastmath=True)
def masked_ry_kernel(state, c, s, q, masks):
    # Apply only where every mask has at least one set bit in the index.
    stride = 1 << q
    period = stride << 1
    nm = masks.shape[0]
    for base in range(0, state.shape[0], period):
        for off in range(base, base + stride):
            ok = True
            for m in range(nm):
                if off & masks[m] == 0:
                    ok = False
                    break
            if ok:
                a = state[off]
                b = state[off + stride]
                state[off] = c * a - s * b
                state[off + stride] = s * a + c * b


@numba.njit(cache=True)
def masked_cnot_kernel(state, ctrl, q, masks):
    stride = 1 << q
    period = stride << 1
    cbit = 1 << ctrl
    nm = masks.shape[0]
    for base in range(0, state.shape[0], period):
        for off in range(base, base + stride):
            if off & cbit:
                ok = True
                for m in range(nm):
                    if off & masks[m] == 0:
                        ok = False
                        break
                if ok:
                    tmp = state[off]
                    state[off] = state[off + stride]
                    state[off + stride] = tmp


@numba.njit(cache=True)
def prob_one_kernel(state, q):
    # Serial reduction: deterministic summation order.
    stride = 1 << q
    period = stride << 1
    total = 0.0
    for base in range(0, state.shape[0], period):
        for off in range(base, base + stride):
            b = state[off + stride]
            total += b.real * b.real + b.imag * b.imag
    return total


@numba.njit(cache=True, fastmath=True)
def project_kernel(state, q, outcome, inv_norm):
    # Zero the discarded branch and renormalize the kept one.
    stride = 1 << q
    period = stride << 1
    keep = stride if outcome == 1 else 0
    drop = 0 if outcome == 1 else stride
    for base in range(0, state.shape[0], period):
        for off in range(base, base + stride):
            state[off + keep] *= inv_norm
            state[off + drop] = 0.0


@numba.njit(cache=True)
def norm_sq_kernel(state):
    total = 0.0
    for i in range(state.shape[0]):
        a = state[i]
        total += a.real * a.real + a.imag * a.imag
    return total


def warmup():
    """Compile all kernels on a toy state (first call pays JIT cost)."""
    st = np.zeros(4, dtype=np.complex128)
    st[0] = 1.0
    masks = np.array([1], dtype=np.uint64)
    ry_kernel(st, 1.0, 0.0, 0)
    cry_kernel(st, 1.0, 0.0, 0, 1)
    cnot_kernel(st, 0, 1)
    x_kernel(st, 0)
    masked_ry_kernel(st, 1.0, 0.0, 1, masks)
    masked_cnot_kernel(st, 0, 1, masks)
    prob_one_kernel(st, 0)
    project_kernel(st, 0, 1, 1.0)
    norm_sq_kernel(st)
