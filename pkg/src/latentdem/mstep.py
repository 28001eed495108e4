"""Forward-operator updates: HQS kernel estimation and gradient-descent pose alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy.ndimage import gaussian_filter

from .forward import PoseParam, check_kernel, crop_kernel, embed_kernel, view_transform


class SingularSystemError(ArithmeticError):
    """The Fourier-domain kernel solve hit a zero denominator."""


@dataclass(frozen=True)
class HQSConfig:
    lam: float = 1.0
    delta: float = 5e6
    iterations: int = 20
    sigma: float = 0.01

    def __post_init__(self):
        if self.lam <= 0 or self.delta <= 0:
            raise ValueError("lambda and delta must be positive")
        if self.iterations < 1:
            raise ValueError("need at least one HQS iteration")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def sigma_d(self) -> float:
        return math.sqrt(self.lam / self.delta)


class Denoiser(Protocol):
    def __call__(self, noisy: np.ndarray, sigma_d: float) -> np.ndarray: ...


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto {k >= 0, sum k = 1} (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    flat = v.ravel()
    u = np.sort(flat)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, flat.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(flat - tau, 0.0).reshape(v.shape)


def projection_denoiser(noisy, sigma_d: float) -> np.ndarray:
    return simplex_project(noisy)


def gaussian_denoiser(noisy, sigma_d: float) -> np.ndarray:
    """Smooth with a Gaussian of width ``sigma_d`` pixels, then project."""
    noisy = np.asarray(noisy, dtype=np.float64)
    smoothed = gaussian_filter(noisy, sigma=sigma_d, mode="constant") if sigma_d > 0 else noisy
    return simplex_project(smoothed)


DENOISERS: dict[str, Callable] = {"projection": projection_denoiser, "gaussian": gaussian_denoiser}


def hqs_objective(y, x0_hat, Z_full, phi_prev_full, sigma: float, delta: float) -> float:
    """(1/2 sigma^2)||x0 * Z - y||^2 + (delta/2)||Z - phi||^2 on the full grid."""
    conv = np.real(np.fft.ifft2(np.fft.fft2(x0_hat) * np.fft.fft2(Z_full)))
    return float(
        0.5 / sigma**2 * np.sum((conv - y) ** 2) + 0.5 * delta * np.sum((Z_full - phi_prev_full) ** 2)
    )


def hqs_data_update_full(y, x0_hat, phi_prev, cfg: HQSConfig) -> np.ndarray:
    """Exact full-grid minimizer Z of the HQS quadratic subproblem."""
    y = np.asarray(y, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if y.shape != x0_hat.shape:
        raise ValueError(f"observation {y.shape} and sample {x0_hat.shape} differ in shape")
    X = np.fft.fft2(x0_hat)
    P = np.fft.fft2(embed_kernel(phi_prev, y.shape))
    reg = cfg.delta * cfg.sigma**2
    denom = np.abs(X) ** 2 + reg
    if np.any(denom == 0.0):
        raise SingularSystemError(
            "delta * sigma^2 = 0 and the sample spectrum has a zero; kernel solve is singular"
        )
    Zf = (np.conj(X) * np.fft.fft2(y) + reg * P) / denom
    return np.real(np.fft.ifft2(Zf))


def hqs_data_update(y, x0_hat, phi_prev, cfg: HQSConfig) -> np.ndarray:
    """Kernel-shaped crop of the exact minimizer of the HQS data subproblem."""
    phi_prev = check_kernel(phi_prev)
    return crop_kernel(hqs_data_update_full(y, x0_hat, phi_prev, cfg), phi_prev.shape[0])


def estimate_kernel(
    y,
    x0_hat,
    phi_prev,
    cfg: HQSConfig,
    denoiser: Callable = projection_denoiser,
    trace: list | None = None,
) -> np.ndarray:
    """Alternate the Fourier data step and the plug-in denoiser, warm-started at ``phi_prev``."""
    phi = check_kernel(phi_prev).copy()
    for i in range(cfg.iterations):
        Z = hqs_data_update(y, x0_hat, phi, cfg)
        phi = np.asarray(denoiser(Z, cfg.sigma_d), dtype=np.float64)
        if trace is not None:
            trace.append((i, phi.copy()))
    return simplex_project(phi)


# -- pose ---------------------------------------------------------------------

def pose_latent(codec, image, pose) -> np.ndarray:
    return codec.encode(view_transform(image, pose))


def pose_loss(y2, x0_hat, y1, phi1, angle: float, lam: float, delta: float, codec) -> float:
    z2 = pose_latent(codec, y2, angle)
    a = z2 - pose_latent(codec, x0_hat, 0.0)
    b = z2 - pose_latent(codec, y1, phi1)
    return float(lam * (a @ a) + delta * (b @ b))


@dataclass
class PoseEstimate:
    pose: PoseParam
    losses: list = field(default_factory=list)
    flat: bool = False


FD_STEP = 1e-3
FLAT_GRAD = 1e-4


def estimate_pose(
    y2,
    x0_hat,
    y1,
    phi1: PoseParam,
    phi2_prev: PoseParam,
    lam: float,
    delta: float,
    lr: float,
    steps: int,
    codec,
) -> PoseEstimate:
    """Gradient descent on the in-plane angle of view 2.

    Central differences (h = 1e-3 rad) stand in for the derivative; bilinear
    resampling makes the loss only piecewise smooth.  A step that raises the
    loss is rejected and the rate halved.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for img in (y2, x0_hat, y1):
        if np.ndim(img) != 2 or np.shape(img)[0] != np.shape(img)[1]:
            raise ValueError("pose estimation needs square images")
    # reference latents do not depend on the angle
    z_syn = pose_latent(codec, x0_hat, 0.0)
    z_ref = pose_latent(codec, y1, phi1)

    def loss(angle):
        z2 = pose_latent(codec, y2, angle)
        a = z2 - z_syn
        b = z2 - z_ref
        return float(lam * (a @ a) + delta * (b @ b))

    theta = phi2_prev.angle
    cur = loss(theta)
    losses = [cur]
    rate = lr
    flat = False
    for i in range(steps):
        g = (loss(theta + FD_STEP) - loss(theta - FD_STEP)) / (2 * FD_STEP)
        if abs(g) < FLAT_GRAD:
            # vanishing slope at the starting point means there is nothing to align
            flat = i == 0
            break
        cand = theta - rate * g
        val = loss(cand)
        if val <= cur:
            theta, cur = cand, val
        else:
            rate *= 0.5
        losses.append(cur)
    return PoseEstimate(PoseParam(theta), losses, flat)


def lambda_delta_schedule(t: int, T: int, ratio_start: float = 0.05) -> tuple[float, float]:
    """lambda/delta rises linearly from ``ratio_start`` at t = T to 1 at t = 0; delta = 1."""
    if T < 1 or not 0 <= t <= T:
        raise ValueError(f"step {t} outside 0..{T}")
    ratio = ratio_start + (1.0 - ratio_start) * (1.0 - t / T)
    return ratio, 1.0
