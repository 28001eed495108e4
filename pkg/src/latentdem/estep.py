"""Annealed latent posterior sampling: one reverse step with data consistency and gluing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .codec import LinearCodec, gluing_residual
from .sched import NoiseSchedule, reverse_coeffs, tweedie_estimate


@dataclass(frozen=True)
class AnnealSchedule:
    """zeta_t: ``zeta_start`` for t >= t_start, linear down to ``zeta_end`` at t_end, then held."""

    t_start: int = 1000
    zeta_start: float = 10.0
    t_end: int = 600
    zeta_end: float = 1.0

    def __post_init__(self):
        if not self.zeta_start >= self.zeta_end >= 1.0:
            raise ValueError("need zeta_start >= zeta_end >= 1")
        if not self.t_start > self.t_end:
            raise ValueError("need t_start > t_end")

    @classmethod
    def constant(cls, zeta: float = 1.0) -> AnnealSchedule:
        return cls(t_start=1, zeta_start=zeta, t_end=0, zeta_end=zeta)


def annealing_factor(a: AnnealSchedule, t: int) -> float:
    if t >= a.t_start:
        return float(a.zeta_start)
    if t <= a.t_end:
        return float(a.zeta_end)
    frac = (t - a.t_end) / (a.t_start - a.t_end)
    return float(a.zeta_end + frac * (a.zeta_start - a.zeta_end))


def zeta_from_model_noise(nu_t: float, sigma: float) -> float:
    """Annealing factor equivalent to modelling error of std ``nu_t`` on top of noise ``sigma``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if nu_t < 0:
        raise ValueError("nu_t must be non-negative")
    return (nu_t * nu_t + sigma * sigma) / (sigma * sigma)


@dataclass
class EStepState:
    z: np.ndarray
    t: int
    rng: np.random.Generator
    x0_hat: np.ndarray | None = None


class TweedieLink:
    """z0_hat(z_t) together with its vector-Jacobian product.

    The Jacobian is (I + (1 - abar_t) H_t) / sqrt(abar_t), with H_t the
    Hessian of the log marginal, symmetric for any true score.  Models
    without ``hessian_vp`` fall back to a central difference of the score.
    """

    def __init__(self, score_model, sched: NoiseSchedule, z_t: np.ndarray, t: int, fd_eps: float = 1e-5):
        self.model = score_model
        self.z_t = np.asarray(z_t, dtype=np.float64)
        self.t = t
        self.ab = sched.alpha_bar_at(t)
        self.score = np.asarray(score_model.score(self.z_t, t), dtype=np.float64)
        self.z0_hat = tweedie_estimate(self.z_t, self.score, sched, t)
        self.fd_eps = fd_eps

    def _hvp(self, v):
        if hasattr(self.model, "hessian_vp"):
            return self.model.hessian_vp(self.z_t, self.t, v)
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return np.zeros_like(v)
        h = self.fd_eps * max(1.0, float(np.linalg.norm(self.z_t))) / nv
        plus = self.model.score(self.z_t + h * v, self.t)
        minus = self.model.score(self.z_t - h * v, self.t)
        return (plus - minus) / (2.0 * h)

    def vjp(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=np.float64)
        return (g + (1.0 - self.ab) * self._hvp(g)) / np.sqrt(self.ab)


def _data_term(y, A, codec: LinearCodec, link: TweedieLink, zeta_t: float, sigma: float):
    """Residual norm and d/dz_t of ||y - A(D(z0_hat))||^2 / (2 zeta sigma^2)."""
    if sigma <= 0:
        raise ValueError("observation noise sigma must be positive for the data term")
    x0 = codec.decode(link.z0_hat)
    r = np.asarray(y, dtype=np.float64) - A.apply(x0)
    g_x = -A.adjoint(r) / (zeta_t * sigma * sigma)
    return float(np.linalg.norm(r)), link.vjp(codec.decode_vjp(g_x)), x0


def data_consistency_gradient(
    y,
    A,
    codec: LinearCodec,
    score_model,
    sched: NoiseSchedule,
    state: EStepState,
    zeta_t: float,
    sigma: float,
) -> np.ndarray:
    """Gradient in z_t of ||y - A(D(z0_hat(z_t)))||^2 / (2 zeta_t sigma^2), chained through the score."""
    link = TweedieLink(score_model, sched, state.z, state.t)
    return _data_term(y, A, codec, link, zeta_t, sigma)[1]


WEIGHTINGS = ("literal", "sde")


def guidance_weight(sched: NoiseSchedule, t: int, scale: float, weighting: str) -> float:
    if weighting == "literal":
        return scale
    if weighting == "sde":
        return scale * sched.beta_at(t) / np.sqrt(sched.alpha[t - 1])
    raise ValueError(f"unknown guidance weighting {weighting!r}")


@dataclass
class StepInfo:
    """What happened in one reverse step; the EM driver turns this into a trace row."""

    t: int
    zeta_t: float
    skipped: bool
    residual: float | None = None
    gluing: float | None = None
    operator: object = None


def estep_reverse_step(
    state: EStepState,
    y,
    A,
    codec: LinearCodec,
    score_model,
    sched: NoiseSchedule,
    anneal: AnnealSchedule,
    gluing_weight: float,
    run_full: bool,
    sigma: float,
    guidance_scale: float = 1.0,
    update_operator: Callable | None = None,
    weighting: str = "literal",
) -> tuple[EStepState, StepInfo]:
    """Advance z_t -> z_{t-1}.

    The prior DDPM transition always runs and always draws one noise vector.
    On full steps the sample x0_hat = D(z0_hat) is formed, ``update_operator``
    (the M-step hook) may replace A, and the annealed data-consistency and
    gluing gradients are subtracted.  Skipped steps touch neither.

    ``weighting="literal"`` subtracts ``guidance_scale`` times the gradient;
    ``"sde"`` additionally multiplies by beta_t / sqrt(alpha_t), the weight a
    likelihood score receives in the discretized reverse SDE.
    """
    t = state.t
    if t < 1:
        raise ValueError("reverse step requested at t = 0")
    if gluing_weight < 0:
        raise ValueError("gluing weight must be non-negative")
    link = TweedieLink(score_model, sched, state.z, t)
    c_z, c_0, sig = reverse_coeffs(sched, t)
    eps = state.rng.standard_normal(link.z_t.shape)
    z_prev = c_z * link.z_t + c_0 * link.z0_hat + sig * eps
    zeta = annealing_factor(anneal, t)
    if not run_full:
        return EStepState(z=z_prev, t=t - 1, rng=state.rng, x0_hat=None), StepInfo(t, zeta, True)

    x0_hat = codec.decode(link.z0_hat)
    if update_operator is not None:
        A = update_operator(x0_hat, A)
    resid, grad, _ = _data_term(y, A, codec, link, zeta, sigma)
    z_prev = z_prev - guidance_weight(sched, t, guidance_scale, weighting) * grad
    glue_val = None
    if gluing_weight > 0:
        glue_val, g_glue = gluing_residual(codec, link.z0_hat, y, A)
        z_prev = z_prev - gluing_weight * link.vjp(g_glue)
    info = StepInfo(t, zeta, False, residual=resid, gluing=glue_val, operator=A)
    return EStepState(z=z_prev, t=t - 1, rng=state.rng, x0_hat=x0_hat), info


def latent_dps_step(
    state: EStepState, y, A, codec: LinearCodec, score_model, sched: NoiseSchedule, sigma: float, weight: float = 1.0
) -> EStepState:
    """Plain (non-annealed, gluing-free) latent DPS reverse step with step size ``weight``."""
    t = state.t
    link = TweedieLink(score_model, sched, state.z, t)
    c_z, c_0, sig = reverse_coeffs(sched, t)
    eps = state.rng.standard_normal(link.z_t.shape)
    z_prev = c_z * link.z_t + c_0 * link.z0_hat + sig * eps
    x0 = codec.decode(link.z0_hat)
    r = np.asarray(y, dtype=np.float64) - A.apply(x0)
    g = link.vjp(codec.decode_vjp(-A.adjoint(r) / (sigma * sigma)))
    return EStepState(z=z_prev - weight * g, t=t - 1, rng=state.rng, x0_hat=x0)


def unconditional_step(state: EStepState, score_model, sched: NoiseSchedule) -> EStepState:
    """Prior-only DDPM step."""
    t = state.t
    z = np.asarray(state.z, dtype=np.float64)
    s = score_model.score(z, t)
    z0 = tweedie_estimate(z, s, sched, t)
    c_z, c_0, sig = reverse_coeffs(sched, t)
    eps = state.rng.standard_normal(z.shape)
    return EStepState(z=c_z * z + c_0 * z0 + sig * eps, t=t - 1, rng=state.rng)
