"""Discrete DDPM noise schedules and reverse-transition coefficients.

Steps are 1-based: ``beta[t - 1]`` holds beta_t, and the sampler walks
t = T, T-1, ..., 1.  ``alpha_bar_prev(t)`` returns alpha_bar_{t-1} with the
convention alpha_bar_0 = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_T = 1000
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step arrays of a variance-preserving discrete diffusion."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma_tilde: np.ndarray

    @property
    def T(self) -> int:
        return int(self.beta.shape[0])

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise IndexError(f"step {t} outside 1..{self.T}")

    def alpha_bar_at(self, t: int) -> float:
        self.check_step(t)
        return float(self.alpha_bar[t - 1])

    def alpha_bar_prev(self, t: int) -> float:
        self.check_step(t)
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])

    def beta_at(self, t: int) -> float:
        self.check_step(t)
        return float(self.beta[t - 1])


def schedule_from_betas(beta) -> NoiseSchedule:
    """Build a schedule from explicit per-step rates beta_1..beta_T."""
    beta = np.array(beta, dtype=np.float64).reshape(-1)
    if beta.size == 0:
        raise ValueError("schedule needs at least one step")
    if np.any(beta < 0) or np.any(beta >= 1):
        raise ValueError("beta_t must lie in [0, 1)")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    one_minus = 1.0 - alpha_bar
    # DDPM posterior variance; zero-noise steps (1 - alpha_bar_t = 0) get zero.
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(one_minus > 0, beta * (1.0 - alpha_bar_prev) / one_minus, 0.0)
    sigma_tilde = np.sqrt(np.maximum(var, 0.0))
    for arr in (beta, alpha, alpha_bar, sigma_tilde):
        arr.setflags(write=False)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma_tilde=sigma_tilde)


def build_linear_schedule(
    T: int = DEFAULT_T,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
) -> NoiseSchedule:
    """Linear beta from ``beta_min`` at t=1 to ``beta_max`` at t=T."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not 0.0 <= beta_min <= beta_max:
        raise ValueError("need 0 <= beta_min <= beta_max")
    if beta_max >= 1.0:
        raise ValueError("beta_max must be < 1")
    if T == 1:
        beta = np.array([beta_min], dtype=np.float64)
    else:
        beta = np.linspace(beta_min, beta_max, int(T), dtype=np.float64)
    return schedule_from_betas(beta)


def reverse_coeffs(s: NoiseSchedule, t: int) -> tuple[float, float, float]:
    """Coefficients of the DDPM posterior mean and its standard deviation.

    z_{t-1} = c_z * z_t + c_0 * z0_hat + sigma_tilde_t * eps

    Returns ``(c_z, c_0, sigma_tilde_t)``.
    """
    s.check_step(t)
    ab = s.alpha_bar_at(t)
    ab_prev = s.alpha_bar_prev(t)
    beta = s.beta_at(t)
    denom = 1.0 - ab
    if denom == 0.0:
        if beta == 0.0:
            # all-zero prefix: nothing has been noised yet, the step is the identity
            return 1.0, 0.0, 0.0
        raise ZeroDivisionError(f"degenerate schedule: 1 - alpha_bar_{t} = 0")
    if beta == 0.0:
        # c_z reduces to (1 - ab_prev)/(1 - ab) == 1 exactly; avoid round-off
        return 1.0, 0.0, 0.0
    c_z = np.sqrt(s.alpha[t - 1]) * (1.0 - ab_prev) / denom
    c_0 = np.sqrt(ab_prev) * beta / denom
    return float(c_z), float(c_0), float(s.sigma_tilde[t - 1])


def tweedie_estimate(z_t: np.ndarray, score: np.ndarray, s: NoiseSchedule, t: int) -> np.ndarray:
    """Posterior-mean estimate of z_0 from z_t and the score at step t."""
    z_t = np.asarray(z_t, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    if z_t.shape != score.shape:
        raise ValueError(f"score shape {score.shape} != latent shape {z_t.shape}")
    ab = s.alpha_bar_at(t)
    if ab <= 0.0:
        raise ZeroDivisionError(f"alpha_bar_{t} = 0, Tweedie estimate undefined")
    return (z_t + (1.0 - ab) * score) / np.sqrt(ab)
