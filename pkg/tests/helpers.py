"""Shared test oracles: finite differences and brute-force references."""

import numpy as np

from stkit import tensor as T


def fd_check(fn, params, h=1e-5, rtol=1e-4, floor=1e-6):
    """Central finite-difference gradient check.

    `fn()` must rebuild the scalar loss from `params` (list of Tensors) on
    every call. Asserts relative error < rtol for every coordinate.
    """
    for p in params:
        p.grad = None
    loss = fn()
    T.backward(loss)
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        rel = np.abs(analytic - numeric) / denom
        assert rel.max() < rtol, f"gradient mismatch: max rel err {rel.max():.3e}"


def matmul_oracle(a, b):
    """Triple-loop matrix product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv1d_oracle(x, w, stride, padding):
    """Direct loop 1-D convolution over [C,L] input and [Cout,Cin,K] weight."""
    c_in, length = x.shape
    c_out, _, k = w.shape
    xp = np.zeros((c_in, length + 2 * padding))
    xp[:, padding:padding + length] = x
    l_out = (length + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, l_out))
    for o in range(c_out):
        for pos in range(l_out):
            acc = 0.0
            for c in range(c_in):
                for off in range(k):
                    acc += xp[c, pos * stride + off] * w[o, c, off]
            out[o, pos] = acc
    return out
