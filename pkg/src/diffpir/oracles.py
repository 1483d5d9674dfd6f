"""Brute-force reference implementations used to verify the fast paths.

Everything here trades speed for obviousness: naive double loops, dense
matrices, exact rational arithmetic. The dense solvers allocate O((h*w)^2)
memory and are only meant for tiny test instances.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable

import numpy as np

__all__ = [
    "naive_dft2",
    "direct_circular_convolve",
    "circulant_matrix",
    "decimation_matrix",
    "dense_prox_solve",
    "exact_alpha_bar",
    "linear_alpha_bar_exact",
    "central_diff_grad",
    "is_8_connected",
]


def naive_dft2(x: np.ndarray) -> np.ndarray:
    """O(n^2) direct DFT of each channel, matching the unnormalized convention."""
    x = np.asarray(x, dtype=np.complex128)
    c, h, w = x.shape
    out = np.zeros_like(x)
    for ch in range(c):
        for u in range(h):
            for v in range(w):
                acc = 0.0 + 0.0j
                for r in range(h):
                    for s in range(w):
                        phase = -2.0j * np.pi * (u * r / h + v * s / w)
                        acc += x[ch, r, s] * np.exp(phase)
                out[ch, u, v] = acc
    return out


def direct_circular_convolve(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Periodic convolution by literal index arithmetic.

    out(r, c) = sum_{u,v} k(u, v) * x((r - u + cu) mod h, (c - v + cv) mod w)
    with (cu, cv) the kernel center (floor of half extent).
    """
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    c, h, w = x.shape
    kh, kw = k.shape
    cu, cv = kh // 2, kw // 2
    out = np.zeros_like(x)
    for ch in range(c):
        for r in range(h):
            for s in range(w):
                acc = 0.0
                for u in range(kh):
                    for v in range(kw):
                        acc += k[u, v] * x[ch, (r - u + cu) % h, (s - v + cv) % w]
                out[ch, r, s] = acc
    return out


def circulant_matrix(k: np.ndarray, h: int, w: int) -> np.ndarray:
    """Dense (h*w, h*w) matrix of the periodic convolution with kernel k."""
    k = np.asarray(k, dtype=np.float64)
    kh, kw = k.shape
    cu, cv = kh // 2, kw // 2
    mat = np.zeros((h * w, h * w))
    for r in range(h):
        for s in range(w):
            row = r * w + s
            for u in range(kh):
                for v in range(kw):
                    col = ((r - u + cu) % h) * w + ((s - v + cv) % w)
                    mat[row, col] += k[u, v]
    return mat


def decimation_matrix(h: int, w: int, sf: int) -> np.ndarray:
    """Dense matrix keeping the top-left sample of each sf x sf block."""
    rows = []
    for r in range(0, h, sf):
        for s in range(0, w, sf):
            e = np.zeros(h * w)
            e[r * w + s] = 1.0
            rows.append(e)
    return np.stack(rows)


def dense_prox_solve(y: np.ndarray, h_mat: np.ndarray, z0: np.ndarray, rho: float) -> np.ndarray:
    """Exact minimizer of ||y - Hx||^2 + rho * ||x - z0||^2, channelwise.

    y is (C, m), z0 is (C, n) with flattened spatial layout; returns (C, n).
    """
    n = h_mat.shape[1]
    lhs = h_mat.T @ h_mat + rho * np.eye(n)
    out = np.zeros_like(z0)
    for ch in range(z0.shape[0]):
        rhs = h_mat.T @ y[ch] + rho * z0[ch]
        out[ch] = np.linalg.solve(lhs, rhs)
    return out


def exact_alpha_bar(beta: np.ndarray) -> list[Fraction]:
    """Exact rational running product of (1 - beta_t) over the given floats."""
    out = []
    acc = Fraction(1)
    for b in beta:
        acc *= 1 - Fraction(float(b))
        out.append(acc)
    return out


def linear_alpha_bar_exact(n_train: int, beta_start: float, beta_end: float) -> Fraction:
    """Terminal alpha_bar of the linear schedule in exact rational arithmetic.

    Mirrors the linspace formula beta_i = b0 + i * (b1 - b0) / (n - 1)
    analytically, independent of any floating-point accumulation.
    """
    b0 = Fraction(float(beta_start))
    b1 = Fraction(float(beta_end))
    acc = Fraction(1)
    if n_train == 1:
        return acc * (1 - b0)
    for i in range(n_train):
        beta_i = b0 + Fraction(i, n_train - 1) * (b1 - b0)
        acc *= 1 - beta_i
    return acc


def central_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        xp = xf.copy()
        xm = xf.copy()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return grad


def is_8_connected(support: np.ndarray) -> bool:
    """True when the nonzero cells of a 2-D array form one 8-connected component."""
    support = np.asarray(support) != 0
    coords = list(zip(*np.nonzero(support)))
    if not coords:
        return False
    seen = {coords[0]}
    stack = [coords[0]]
    cells = set(coords)
    while stack:
        r, c = stack.pop()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nb = (r + dr, c + dc)
                if nb in cells and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
    return len(seen) == len(cells)
