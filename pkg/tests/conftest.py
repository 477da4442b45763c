"""Shared oracles and helpers for the test suite.

Gradient checks use the norm-wise relative error
``|analytic - fd| / max(|fd|, 1e-12)`` (Frobenius norms for arrays),
which is robust near zero entries; scalars reduce to plain relative
error. Finite differences are central, step 1e-6 unless stated.
"""

from __future__ import annotations

import numpy as np

from fsgraph.contrastive import RawSample
from fsgraph.rng import make_rng

FD_STEP = 1e-6


def rel_err(analytic: np.ndarray | float, fd: np.ndarray | float) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(fd, dtype=np.float64)
    return float(np.linalg.norm((a - f).ravel()) / max(np.linalg.norm(f.ravel()), 1e-12))


def fd_grad(func, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    for i in range(x.size):
        xp = x.copy().ravel()
        xm = x.copy().ravel()
        xp[i] += h
        xm[i] -= h
        flat[i] = (func(xp.reshape(x.shape)) - func(xm.reshape(x.shape))) / (2 * h)
    return grad


# --- independent graph oracles -------------------------------------------


def brute_force_sparsify(s: np.ndarray, m: int, rule: str = "union") -> np.ndarray:
    """Reference top-m pruning, written without vectorized tricks.

    An off-diagonal entry is a candidate for row i's top-m iff it is not
    exactly zero (a zero edge equals no edge). Ties rank by lower column
    index. The union rule keeps (i, j) if it makes row i's top-m or row
    j's top-m; intersection requires both.
    """
    n = s.shape[0]
    if m >= n - 1:
        return s.copy()
    tops: list[set[int]] = []
    for i in range(n):
        cand = [j for j in range(n) if j != i and s[i, j] != 0.0]
        cand.sort(key=lambda j: (-s[i, j], j))
        tops.append(set(cand[:m]))
    out = np.zeros_like(s)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            in_row = j in tops[i]
            in_col = i in tops[j]
            keep = (in_row or in_col) if rule == "union" else (in_row and in_col)
            if keep:
                out[i, j] = s[i, j]
    return out


def dense_power_propagate(
    v: np.ndarray, e_norm: np.ndarray, alpha: float, gamma: int
) -> np.ndarray:
    """Explicitly materialized (alpha I + E)^gamma V."""
    n = e_norm.shape[0]
    power = np.linalg.matrix_power(alpha * np.eye(n) + e_norm, gamma)
    return power @ v


def random_symmetric(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random symmetric matrix with zero diagonal (entries can be negative)."""
    raw = rng.normal(size=(n, n))
    s = np.triu(raw, 1)
    return s + s.T


# --- synthetic sample builders --------------------------------------------


def paired_view_samples(
    count: int, dim: int = 24, seed: int = 404, noise: float = 0.05
) -> list[RawSample]:
    """Two-view samples where view2 is a fixed rotation of view1 plus noise."""
    rng = make_rng(seed)
    theta = 0.3
    rot = np.eye(dim)
    rot[0, 0] = rot[1, 1] = np.cos(theta)
    rot[0, 1] = -np.sin(theta)
    rot[1, 0] = np.sin(theta)
    samples = []
    for _ in range(count):
        v1 = rng.normal(size=dim)
        v2 = rot @ v1 + noise * rng.normal(size=dim)
        samples.append(RawSample(view1=v1, view2=v2))
    return samples


def image_samples(count: int, w: int = 4, h: int = 4, seed: int = 7) -> list[RawSample]:
    rng = make_rng(seed)
    return [RawSample(pixels=rng.random(size=(w, h, 3))) for _ in range(count)]
