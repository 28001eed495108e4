"""Synthetic ground truth: latent models, blur kernels, observations and view pairs.

All randomness comes from named streams of one seed so every scene can be
rebuilt from its recorded seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .codec import LinearCodec, pool_codec, random_codec
from .forward import PoseParam, add_noise, convolve, delta_kernel, uniform_kernel, view_transform
from .prior import GaussianMixturePrior, GaussianPrior


def gaussian_kernel(size: int, width: float) -> np.ndarray:
    c = size // 2
    r = np.arange(size) - c
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * width**2))
    return g / g.sum()


def motion_kernel(size: int, rng: np.random.Generator, steps: int = 40) -> np.ndarray:
    """Random-walk camera-shake kernel, centered on its center of mass."""
    k = np.zeros((size, size))
    pos = np.array([size / 2.0, size / 2.0])
    vel = rng.standard_normal(2)
    vel /= np.linalg.norm(vel)
    for _ in range(steps):
        vel = vel + 0.6 * rng.standard_normal(2)
        vel /= np.linalg.norm(vel)
        pos = np.clip(pos + 0.35 * vel, 0.0, size - 1e-6)
        k[int(pos[0]), int(pos[1])] += 1.0
    # recentre on the integer center of mass so the blur does not translate the image
    rr, cc = np.nonzero(k)
    w = k[rr, cc]
    shift = (size // 2 - int(round(np.average(rr, weights=w))), size // 2 - int(round(np.average(cc, weights=w))))
    k = np.roll(k, shift, axis=(0, 1))
    return k / k.sum()


def make_kernel(spec: str, rng: np.random.Generator | None = None) -> np.ndarray:
    """Kernel from a spec string: ``gaussian,k,width``, ``motion,k``, ``uniform,k``, ``delta,k``, ``random,k``."""
    parts = [p.strip() for p in spec.split(",")]
    kind = parts[0]
    try:
        size = int(parts[1])
    except (IndexError, ValueError):
        raise ValueError(f"kernel spec {spec!r} needs a size") from None
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if kind == "gaussian":
        width = float(parts[2]) if len(parts) > 2 else 1.0
        return gaussian_kernel(size, width)
    if kind == "uniform":
        return uniform_kernel(size)
    if kind == "delta":
        return delta_kernel(size)
    if rng is None:
        raise ValueError(f"kernel kind {kind!r} needs a random stream")
    if kind == "motion":
        steps = int(parts[2]) if len(parts) > 2 else 8 * size
        return motion_kernel(size, rng, steps)
    if kind == "random":
        k = rng.random((size, size))
        return k / k.sum()
    raise ValueError(f"unknown kernel kind {kind!r}")


@dataclass
class LatentModel:
    prior: GaussianMixturePrior
    codec: LinearCodec


def make_latent_model(
    seed: int,
    image_size: int = 32,
    latent_dim: int = 64,
    components: int = 3,
    spread: float = 1.0,
    comp_var: float = 0.25,
    offset: float = 0.5,
    codec_kind: str = "random",
) -> LatentModel:
    """Seeded Gaussian-mixture latent prior with a linear decoder.

    Component means are ``spread``-scaled standard normals; each component
    covariance is ``comp_var`` times a random correlation-like matrix with
    eigenvalues in [0.25, 1].
    """
    g = rngmod.stream(seed, "model")
    shape = (image_size, image_size)
    if codec_kind == "random":
        codec = random_codec(shape, latent_dim, g, offset=offset)
    elif codec_kind == "pool":
        factor = int(round(math.sqrt(image_size * image_size / latent_dim)))
        codec = pool_codec(shape, factor, offset=offset)
        latent_dim = codec.latent_dim
    else:
        raise ValueError(f"unknown codec kind {codec_kind!r}")
    comps = []
    for _ in range(components):
        q, _ = np.linalg.qr(g.standard_normal((latent_dim, latent_dim)))
        ev = comp_var * g.uniform(0.25, 1.0, latent_dim)
        comps.append(GaussianPrior(spread * g.standard_normal(latent_dim), (q * ev) @ q.T))
    weights = np.full(components, 1.0 / components)
    return LatentModel(GaussianMixturePrior(weights, comps), codec)


@dataclass
class DeblurScene:
    x: np.ndarray
    z: np.ndarray
    kernel: np.ndarray
    y: np.ndarray
    sigma: float
    seed: int


def make_deblur_scene(
    model: LatentModel, seed: int, kernel_spec: str = "motion,5", sigma: float = 0.01, index: int = 0
) -> DeblurScene:
    """Scene ``index`` of run ``seed``: latent draw, kernel and noise each from their own stream."""
    z = model.prior.sample(rngmod.stream(seed, f"scene-{index}"))
    x = model.codec.decode(z)
    k = make_kernel(kernel_spec, rngmod.stream(seed, f"kernel-{index}"))
    y = add_noise(convolve(x, k), sigma, rngmod.stream(seed, f"noise-{index}"))
    return DeblurScene(x=x, z=z, kernel=k, y=y, sigma=sigma, seed=seed)


def blob_image(size: int, rng: np.random.Generator, blobs: int = 4, width: float = 0.08) -> np.ndarray:
    """Smooth, asymmetric test image: a sum of random Gaussian blobs in [0, 1].

    Blobs stay near the center so rotations with periodic padding do not wrap mass.
    """
    r = (np.arange(size) - (size - 1) / 2.0) / size
    yy, xx = np.meshgrid(r, r, indexing="ij")
    img = np.zeros((size, size))
    for _ in range(blobs):
        cy, cx = rng.uniform(-0.2, 0.2, 2)
        w = width * rng.uniform(0.7, 1.4)
        img += rng.uniform(0.4, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * w * w))
    return img / img.max()


@dataclass
class ViewPair:
    y1: np.ndarray
    y2: np.ndarray
    phi1: PoseParam
    theta_deg: float
    seed: int


def make_view_pair(seed: int, size: int = 32, theta_deg: float = 20.0, index: int = 0) -> ViewPair:
    y1 = blob_image(size, rngmod.stream(seed, f"views-{index}"))
    y2 = view_transform(y1, PoseParam.from_degrees(theta_deg))
    return ViewPair(y1=y1, y2=y2, phi1=PoseParam(0.0), theta_deg=theta_deg, seed=seed)
