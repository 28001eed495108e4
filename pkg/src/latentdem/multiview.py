"""View-consistent score combination for pose-free sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sched import NoiseSchedule, reverse_coeffs, tweedie_estimate


@dataclass(frozen=True)
class ViewWeightSchedule:
    """Pose-model error nu_t = nu_max * t / T (nu_max may be ``inf``)."""

    nu_max: float
    T: int

    def __post_init__(self):
        if self.nu_max < 0:
            raise ValueError("nu_max must be non-negative")

    def nu(self, t: int) -> float:
        if t <= 0 or self.nu_max == 0:
            return 0.0
        if math.isinf(self.nu_max):
            return math.inf
        return self.nu_max * t / self.T


def gamma_t(beta_t: float, nu_t: float) -> float:
    """Weight of the second view: beta / (2 beta + nu^2)."""
    if beta_t <= 0:
        raise ValueError("beta_t must be positive")
    if math.isinf(nu_t):
        return 0.0
    return beta_t / (2.0 * beta_t + nu_t * nu_t)


def combined_variance(beta_t: float, nu_t: float) -> float:
    """Variance of the product of N(., beta) and N(., beta + nu^2)."""
    if math.isinf(nu_t):
        return beta_t
    nu2 = nu_t * nu_t
    return beta_t * (beta_t + nu2) / (2.0 * beta_t + nu2)


def combine_scores(s1, s2, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s1.shape != s2.shape:
        raise ValueError("scores differ in shape")
    if gamma == 0.0:
        return s1.copy()
    return (1.0 - gamma) * s1 + gamma * s2


def view_weights(beta_t: float, nus) -> np.ndarray:
    """Precision weights for a reference view (nu = 0) followed by views with errors ``nus``.

    Two views reproduce (1 - gamma_t, gamma_t).
    """
    prec = [1.0 / beta_t] + [0.0 if math.isinf(n) else 1.0 / (beta_t + n * n) for n in nus]
    prec = np.array(prec)
    return prec / prec.sum()


def combine_many(scores, weights) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if scores.shape[0] != weights.shape[0]:
        raise ValueError("one weight per score required")
    return np.tensordot(weights, scores, axes=1)


def consistent_reverse_step(
    z_t,
    t: int,
    model1,
    model2,
    sched: NoiseSchedule,
    vw: ViewWeightSchedule,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, float]:
    """One reverse step on the shared latent under the two-view combined score.

    Both view trajectories adopt the merged latent, so a single state is
    carried.  The DDPM noise is rescaled by the ratio of the combined
    transition variance to beta_t.  Returns ``(z_{t-1}, z0_hat, gamma_t)``.
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    beta = sched.beta_at(t)
    nu = vw.nu(t)
    g = gamma_t(beta, nu)
    s1 = model1.score(z_t, t)
    s = s1 if g == 0.0 else combine_scores(s1, model2.score(z_t, t), g)
    z0 = tweedie_estimate(z_t, s, sched, t)
    c_z, c_0, sig = reverse_coeffs(sched, t)
    eps = rng.standard_normal(z_t.shape)
    if not math.isinf(nu):
        sig = sig * math.sqrt(combined_variance(beta, nu) / beta)
    return c_z * z_t + c_0 * z0 + sig * eps, z0, g
