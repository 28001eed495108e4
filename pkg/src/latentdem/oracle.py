"""Slow reference solutions used to check the fast paths.

Nothing here calls into the FFT helpers or the sort-based projection it is
meant to verify; convolution matrices are built entry by entry.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np

from .forward import PoseParam
from .prior import GaussianPrior


def analytic_gaussian_posterior(prior: GaussianPrior, A, y, sigma: float) -> GaussianPrior:
    """Posterior of x ~ prior given y = A x + N(0, sigma^2 I)."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    prec0 = np.linalg.inv(prior.cov)
    prec = prec0 + A.T @ A / sigma**2
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (prec0 @ prior.mean + A.T @ y / sigma**2)
    return GaussianPrior(mean, cov)


def convolution_matrix(x) -> np.ndarray:
    """Dense C with (C vec(k))[i, j] = sum_{a,b} x[i-a, j-b] k[a, b] (circular, full grid)."""
    x = np.asarray(x, dtype=np.float64)
    H, W = x.shape
    C = np.zeros((H * W, H * W))
    for i in range(H):
        for j in range(W):
            for a in range(H):
                for b in range(W):
                    C[i * W + j, a * W + b] = x[(i - a) % H, (j - b) % W]
    return C


def spatial_convolve(x, k) -> np.ndarray:
    """Direct O(n^2 k^2) circular convolution with a centered odd kernel."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    H, W = x.shape
    c = k.shape[0] // 2
    out = np.zeros_like(x)
    for i in range(H):
        for j in range(W):
            acc = 0.0
            for a in range(k.shape[0]):
                for b in range(k.shape[1]):
                    acc += k[a, b] * x[(i - a + c) % H, (j - b + c) % W]
            out[i, j] = acc
    return out


def _embed_centered(k, shape) -> np.ndarray:
    out = np.zeros(shape)
    c = k.shape[0] // 2
    for a in range(k.shape[0]):
        for b in range(k.shape[1]):
            out[(a - c) % shape[0], (b - c) % shape[1]] = k[a, b]
    return out


def _crop_centered(grid, size) -> np.ndarray:
    c = size // 2
    H, W = grid.shape
    return np.array([[grid[(a - c) % H, (b - c) % W] for b in range(size)] for a in range(size)])


def dense_hqs_solve(y, x0_hat, phi_prev, sigma: float, delta: float, crop: bool = True) -> np.ndarray:
    """Normal-equations solve of (1/2s^2)||x0 * Z - y||^2 + (delta/2)||Z - phi||^2 over the full grid."""
    y = np.asarray(y, dtype=np.float64)
    phi_prev = np.asarray(phi_prev, dtype=np.float64)
    C = convolution_matrix(x0_hat)
    n = C.shape[1]
    lhs = C.T @ C / sigma**2 + delta * np.eye(n)
    rhs = C.T @ y.ravel() / sigma**2 + delta * _embed_centered(phi_prev, y.shape).ravel()
    Z = np.linalg.solve(lhs, rhs).reshape(y.shape)
    return _crop_centered(Z, phi_prev.shape[0]) if crop else Z


def pose_grid_search(loss: Callable[[float], float], resolution_deg: float = 1.0) -> tuple[PoseParam, bool, np.ndarray]:
    """Evaluate ``loss(angle_rad)`` on a uniform grid over [0, 360).

    Returns the argmin pose, a flatness flag (all values equal to 1e-12
    relative) and the loss table.
    """
    if resolution_deg <= 0:
        raise ValueError("resolution must be positive")
    n = max(1, int(math.floor(360.0 / resolution_deg + 1e-9)))
    degs = np.arange(n) * resolution_deg
    vals = np.array([loss(math.radians(d)) for d in degs])
    spread = vals.max() - vals.min()
    flat = bool(spread <= 1e-12 * max(1.0, abs(vals.max())))
    return PoseParam.from_degrees(float(degs[int(np.argmin(vals))])), flat, vals


def simplex_project_bruteforce(v) -> np.ndarray:
    """Projection onto the simplex by enumerating every candidate support."""
    v = np.asarray(v, dtype=np.float64)
    flat = v.ravel()
    n = flat.size
    if n > 12:
        raise ValueError("brute-force projection is exponential; use at most 12 entries")
    best, best_d = None, math.inf
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            idx = list(support)
            # minimize ||x - v||^2 with x zero off-support and sum x = 1
            x = np.zeros(n)
            x[idx] = flat[idx] + (1.0 - flat[idx].sum()) / size
            if np.any(x[idx] < -1e-15):
                continue
            x = np.maximum(x, 0.0)
            d = float(np.sum((x - flat) ** 2))
            if d < best_d - 1e-15:
                best, best_d = x, d
    return best.reshape(v.shape)


def mnc_bruteforce(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    H, W = a.shape
    best = -math.inf
    for s in range(H):
        for r in range(W):
            val = 0.0
            for i in range(H):
                for j in range(W):
                    val += a[i, j] * b[(i + s) % H, (j + r) % W]
            best = max(best, val)
    return best / (math.sqrt(float(np.sum(a * a))) * math.sqrt(float(np.sum(b * b))))
