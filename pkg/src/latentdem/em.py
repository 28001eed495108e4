"""EM drivers: blind deblurring and pose-free two-view synthesis.

Each reverse diffusion step is one EM iteration.  With a skip schedule,
most early steps run the prior transition only; full steps decode the
Tweedie sample, update the forward operator (M-step) and then apply the
annealed data-consistency and gluing gradients.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng as rngmod
from .codec import LinearCodec
from .estep import (
    WEIGHTINGS,
    AnnealSchedule,
    EStepState,
    estep_reverse_step,
    guidance_weight,
    latent_dps_step,
)
from .forward import ConvolutionOperator, PoseParam, angle_distance_deg, convolve, uniform_kernel
from .metrics import mnc
from .mstep import DENOISERS, HQSConfig, estimate_kernel, estimate_pose, lambda_delta_schedule
from .multiview import ViewWeightSchedule, consistent_reverse_step
from .prior import ConditionalViewScore
from .sched import NoiseSchedule, build_linear_schedule, tweedie_estimate

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "zeta_t", "gamma_t", "residual", "gluing", "kernel_mse", "pose_deg", "skipped", "stream_pos")


@dataclass(frozen=True)
class SkipSchedule:
    S_T: int = 500
    K: int = 8

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.S_T < 0:
            raise ValueError("S_T must be >= 0")


def should_run_full(sk: SkipSchedule | None, t: int) -> bool:
    """Full EM step above S_T only when K divides t; every step at or below S_T is full."""
    if sk is None:
        return True
    return (t > sk.S_T and t % sk.K == 0) or t <= sk.S_T


def count_skipped(sk: SkipSchedule | None, T: int) -> int:
    return sum(not should_run_full(sk, t) for t in range(T, 0, -1))


@dataclass
class EMConfig:
    seed: int
    task: str = "deblur"
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    skip: SkipSchedule | None = field(default_factory=SkipSchedule)
    hqs: HQSConfig = field(default_factory=HQSConfig)
    sigma: float = 0.01
    gluing_weight: float = 0.0
    guidance_scale: float = 1.0
    guidance_weighting: str = "literal"
    kernel_size: int = 5
    kernel_init: str = "uniform"
    denoiser: str = "projection"
    # pose-free task
    tau: float = 0.5
    nu_max: float = 1.0
    pose_lr: float = 1e-3
    pose_steps: int = 3
    ratio_start: float = 0.05
    trace: bool = True

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is mandatory")
        if self.task not in ("deblur", "posefree"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.kernel_init not in ("uniform", "random"):
            raise ValueError(f"unknown kernel init {self.kernel_init!r}")
        if self.denoiser not in DENOISERS:
            raise ValueError(f"unknown denoiser {self.denoiser!r}")
        if self.guidance_weighting not in WEIGHTINGS:
            raise ValueError(f"unknown guidance weighting {self.guidance_weighting!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def schedule(self) -> NoiseSchedule:
        return build_linear_schedule(self.T, self.beta_min, self.beta_max)


class EMStepError(RuntimeError):
    def __init__(self, t: int, cause: Exception):
        super().__init__(f"EM failed at t={t}: {cause}")
        self.t = t


@dataclass
class DeblurResult:
    x0: np.ndarray
    kernel: np.ndarray
    trace: list
    z0: np.ndarray
    initial_kernel: np.ndarray
    initial_x0: np.ndarray | None = None
    wall_ms: float = 0.0

    def residuals(self, y) -> tuple[float, float]:
        """Data residual of the starting (Tweedie at t = T, initial kernel) and final estimates."""
        return data_residual(y, self.initial_x0, self.initial_kernel), data_residual(y, self.x0, self.kernel)


def _fmt(v):
    return "" if v is None else v


def initial_kernel(cfg: EMConfig) -> np.ndarray:
    if cfg.kernel_init == "uniform":
        return uniform_kernel(cfg.kernel_size)
    r = rngmod.stream(cfg.seed, "kernel-init").random((cfg.kernel_size, cfg.kernel_size))
    return r / r.sum()


def run_blind_deblur(
    cfg: EMConfig,
    y,
    score_model,
    codec: LinearCodec,
    *,
    trial: int = 0,
    k_true=None,
    kernel_update: Callable | None = None,
    sched: NoiseSchedule | None = None,
) -> DeblurResult:
    """Joint posterior sampling of the image and MAP estimation of the blur kernel.

    ``kernel_update(y, x0_hat, k_prev) -> k`` replaces the HQS M-step when
    given (used to inject a known kernel).
    """
    start = time.perf_counter()
    y = np.asarray(y, dtype=np.float64)
    if y.shape != codec.image_shape:
        raise ValueError(f"observation {y.shape} does not match codec output {codec.image_shape}")
    sched = sched or cfg.schedule()
    rng = rngmod.stream(cfg.seed, f"trajectory-{trial}")
    denoiser = DENOISERS[cfg.denoiser]
    k0 = initial_kernel(cfg)
    hqs = HQSConfig(cfg.hqs.lam, cfg.hqs.delta, cfg.hqs.iterations, cfg.sigma)
    if kernel_update is None:
        def kernel_update(y_, x0_, k_prev):
            return estimate_kernel(y_, x0_, k_prev, hqs, denoiser)

    def m_step(x0_hat, A):
        return ConvolutionOperator(kernel_update(y, x0_hat, A.kernel), sigma=cfg.sigma)

    A = ConvolutionOperator(k0, sigma=cfg.sigma)
    state = EStepState(z=rng.standard_normal(codec.latent_dim), t=sched.T, rng=rng)
    # reference point for residual comparisons; consumes no randomness
    x_init = codec.decode(tweedie_estimate(state.z, score_model.score(state.z, sched.T), sched, sched.T))
    trace = []
    x0_hat = None
    while state.t >= 1:
        t = state.t
        full = should_run_full(cfg.skip, t)
        try:
            state, info = estep_reverse_step(
                state, y, A, codec, score_model, sched, cfg.anneal, cfg.gluing_weight,
                full, cfg.sigma, cfg.guidance_scale, update_operator=m_step,
                weighting=cfg.guidance_weighting,
            )
        except ArithmeticError as exc:
            raise EMStepError(t, exc) from exc
        if not info.skipped:
            A = info.operator
            x0_hat = state.x0_hat
        if cfg.trace:
            kmse = None
            if k_true is not None and not info.skipped:
                kmse = float(np.mean((A.kernel - k_true) ** 2))
            trace.append({
                "t": t,
                "zeta_t": info.zeta_t,
                "gamma_t": cfg.gluing_weight,
                "residual": _fmt(info.residual),
                "gluing": _fmt(info.gluing),
                "kernel_mse": _fmt(kmse),
                "pose_deg": "",
                "skipped": int(info.skipped),
                "stream_pos": rngmod.stream_position(rng),
            })
    if x0_hat is None:
        # every step skipped: fall back to the final latent
        x0_hat = codec.decode(state.z)
    wall = (time.perf_counter() - start) * 1e3
    return DeblurResult(x0=x0_hat, kernel=A.kernel, trace=trace, z0=state.z, initial_kernel=k0,
                        initial_x0=x_init, wall_ms=wall)


def run_nonblind_dps(cfg: EMConfig, y, kernel, score_model, codec: LinearCodec, *, trial: int = 0,
                     sched: NoiseSchedule | None = None) -> np.ndarray:
    """Plain latent DPS with a known kernel (no annealing, gluing, skipping or M-step)."""
    sched = sched or cfg.schedule()
    rng = rngmod.stream(cfg.seed, f"trajectory-{trial}")
    A = ConvolutionOperator(kernel, sigma=cfg.sigma)
    state = EStepState(z=rng.standard_normal(codec.latent_dim), t=sched.T, rng=rng)
    while state.t >= 1:
        w = guidance_weight(sched, state.t, cfg.guidance_scale, cfg.guidance_weighting)
        state = latent_dps_step(state, y, A, codec, score_model, sched, cfg.sigma, w)
    return state.x0_hat


def data_residual(y, x, k) -> float:
    return float(np.linalg.norm(np.asarray(y) - convolve(x, k)))


@dataclass
class PosefreeResult:
    synth: np.ndarray
    phi2: PoseParam
    trace: list
    wall_ms: float = 0.0


def run_posefree(
    cfg: EMConfig,
    y1,
    phi1: PoseParam,
    y2,
    codec: LinearCodec,
    *,
    trial: int = 0,
    pose_mstep: bool = True,
    sched: NoiseSchedule | None = None,
    theta_true_deg: float | None = None,
) -> PosefreeResult:
    """Two-view synthesis in the reference frame with joint estimation of view 2's angle."""
    start = time.perf_counter()
    sched = sched or cfg.schedule()
    rng = rngmod.stream(cfg.seed, f"trajectory-{trial}")
    vw = ViewWeightSchedule(cfg.nu_max, sched.T)
    model1 = ConditionalViewScore(y1, phi1, codec, cfg.tau, sched)
    phi2 = PoseParam(0.0)
    model2 = ConditionalViewScore(y2, phi2, codec, cfg.tau, sched)
    z = rng.standard_normal(codec.latent_dim)
    trace = []
    z0 = z
    for t in range(sched.T, 0, -1):
        z, z0, g = consistent_reverse_step(z, t, model1, model2, sched, vw, rng)
        if pose_mstep:
            lam, delta = lambda_delta_schedule(t, sched.T, cfg.ratio_start)
            est = estimate_pose(y2, codec.decode(z0), y1, phi1, phi2, lam, delta,
                                cfg.pose_lr, cfg.pose_steps, codec)
            if est.pose != phi2:
                phi2 = est.pose
                model2 = ConditionalViewScore(y2, phi2, codec, cfg.tau, sched)
        if cfg.trace:
            err = "" if theta_true_deg is None else angle_distance_deg(phi2.degrees, -theta_true_deg)
            trace.append({
                "t": t, "zeta_t": "", "gamma_t": g, "residual": err, "gluing": "",
                "kernel_mse": "", "pose_deg": phi2.signed_degrees, "skipped": 0,
                "stream_pos": rngmod.stream_position(rng),
            })
    wall = (time.perf_counter() - start) * 1e3
    return PosefreeResult(synth=codec.decode(z0), phi2=phi2, trace=trace, wall_ms=wall)


def run_single_view(cfg: EMConfig, y1, phi1: PoseParam, codec: LinearCodec, *, trial: int = 0,
                    sched: NoiseSchedule | None = None) -> np.ndarray:
    """Conditional sampling from view 1 alone (reference for the reduction tests)."""
    from .estep import unconditional_step

    sched = sched or cfg.schedule()
    rng = rngmod.stream(cfg.seed, f"trajectory-{trial}")
    model1 = ConditionalViewScore(y1, phi1, codec, cfg.tau, sched)
    state = EStepState(z=rng.standard_normal(codec.latent_dim), t=sched.T, rng=rng)
    z0 = state.z
    while state.t >= 1:
        t = state.t
        z0 = tweedie_estimate(state.z, model1.score(state.z, t), sched, t)
        state = unconditional_step(state, model1, sched)
    return codec.decode(z0)


def kernel_quality(k_hat, k_true) -> dict:
    return {"kernel_mse": float(np.mean((np.asarray(k_hat) - k_true) ** 2)), "mnc": mnc(k_hat, k_true)}


def pose_error_deg(phi2: PoseParam, theta_true_deg: float) -> float:
    return angle_distance_deg(phi2.degrees, -theta_true_deg % 360.0)

