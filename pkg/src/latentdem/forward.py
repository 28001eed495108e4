"""Forward operators: circular blur, toy view rotation, identity/zero, dense.

Kernels are odd-sized k x k grids whose center pixel sits at the grid
origin when embedded for the FFT (the psf2otf convention), so

    convolve(x, k)[i, j] = sum_{a,b} k[a, b] * x[(i - a + c) % H, (j - b + c) % W],  c = k // 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp


def fft2(x) -> np.ndarray:
    return np.fft.fft2(np.asarray(x))


def ifft2(X) -> np.ndarray:
    return np.fft.ifft2(np.asarray(X))


def check_kernel(k) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be an odd-sized square grid, got shape {k.shape}")
    return k


def is_valid_kernel(k, atol: float = 1e-9) -> bool:
    k = np.asarray(k)
    return bool(np.all(k >= 0) and abs(k.sum() - 1.0) <= atol)


def uniform_kernel(size: int) -> np.ndarray:
    return check_kernel(np.full((size, size), 1.0 / (size * size)))


def delta_kernel(size: int) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def embed_kernel(k, shape) -> np.ndarray:
    """Zero-pad a k x k kernel to ``shape`` with its center moved to (0, 0)."""
    k = check_kernel(k)
    ks = k.shape[0]
    if ks > shape[0] or ks > shape[1]:
        raise ValueError(f"kernel of size {ks} larger than image {shape}")
    out = np.zeros(shape)
    out[:ks, :ks] = k
    return np.roll(out, (-(ks // 2), -(ks // 2)), axis=(0, 1))


def crop_kernel(grid, size: int) -> np.ndarray:
    """Inverse of ``embed_kernel``: take the size x size window around the origin."""
    if size % 2 == 0:
        raise ValueError("kernel size must be odd")
    c = size // 2
    return np.roll(np.asarray(grid), (c, c), axis=(0, 1))[:size, :size].copy()


def kernel_otf(k, shape) -> np.ndarray:
    return np.fft.fft2(embed_kernel(k, shape))


def convolve(x, k) -> np.ndarray:
    """Circular 2D convolution of image ``x`` with kernel ``k`` via the FFT."""
    x = np.asarray(x, dtype=np.float64)
    return np.real(np.fft.ifft2(np.fft.fft2(x) * kernel_otf(k, x.shape)))


def add_noise(x, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """x + sigma * eps with eps drawn from ``rng``; sigma = 0 returns a copy."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return x.copy()
    return x + sigma * rng.standard_normal(x.shape)


@dataclass(frozen=True)
class PoseParam:
    """Camera pose; only the in-plane ``angle`` (radians) is used by the toy model."""

    angle: float = 0.0
    theta_polar: float = 0.0
    azimuth: float = 0.0
    radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % (2.0 * math.pi))

    @classmethod
    def from_degrees(cls, deg: float) -> PoseParam:
        return cls(math.radians(deg))

    @property
    def degrees(self) -> float:
        return math.degrees(self.angle)

    @property
    def signed_degrees(self) -> float:
        """Angle in (-180, 180]."""
        d = self.degrees
        return d - 360.0 if d > 180.0 else d


def angle_distance_deg(a: float, b: float) -> float:
    """Shortest distance between two angles in degrees."""
    d = (a - b) % 360.0
    return min(d, 360.0 - d)


@lru_cache(maxsize=64)
def _rotation_matrix(n: int, angle: float) -> sp.csr_matrix:
    # output pixel p samples the input at c + R(-angle)(p - c), bilinear, periodic wrap
    c = (n - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    dr, dc = rows - c, cols - c
    ca, sa = math.cos(angle), math.sin(angle)
    src_r = c + ca * dr - sa * dc
    src_c = c + sa * dr + ca * dc
    r0 = np.floor(src_r)
    c0 = np.floor(src_c)
    fr = src_r - r0
    fc = src_c - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    out_idx = (rows * n + cols).ravel()
    data, ii, jj = [], [], []
    for drow, dcol, w in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        src = ((r0 + drow) % n) * n + ((c0 + dcol) % n)
        data.append(w.ravel())
        ii.append(out_idx)
        jj.append(src.ravel())
    m = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(ii), np.concatenate(jj))), shape=(n * n, n * n)
    )
    return m.tocsr()


def _pose_angle(p) -> float:
    return p.angle if isinstance(p, PoseParam) else float(p) % (2.0 * math.pi)


def view_transform(x, p) -> np.ndarray:
    """Rotate a square image about its center (bilinear, periodic padding).

    ``p`` is a PoseParam or an angle in radians.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"view transform needs a square image, got shape {x.shape}")
    angle = _pose_angle(p)
    if angle == 0.0:
        return x.copy()
    n = x.shape[0]
    return (_rotation_matrix(n, angle) @ x.ravel()).reshape(n, n)


def view_transform_adjoint(y, p) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    angle = _pose_angle(p)
    if angle == 0.0:
        return y.copy()
    n = y.shape[0]
    return (_rotation_matrix(n, angle).T @ y.ravel()).reshape(n, n)


class ForwardOperator:
    """Linear A with an exact adjoint; ``sigma`` is the observation noise level."""

    sigma: float = 0.0

    def apply(self, x) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> np.ndarray:
        return self.apply(x)

    def observe(self, x, rng: np.random.Generator) -> np.ndarray:
        return add_noise(self.apply(x), self.sigma, rng)


class ConvolutionOperator(ForwardOperator):
    def __init__(self, kernel, sigma: float = 0.0):
        self.kernel = check_kernel(kernel)
        self.sigma = sigma
        self._otf = {}

    def otf(self, shape) -> np.ndarray:
        shape = tuple(shape)
        if shape not in self._otf:
            self._otf[shape] = kernel_otf(self.kernel, shape)
        return self._otf[shape]

    @staticmethod
    def _grid(x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"convolution needs a 2D image, got shape {x.shape}")
        return x

    def apply(self, x):
        x = self._grid(x)
        return np.real(np.fft.ifft2(np.fft.fft2(x) * self.otf(x.shape)))

    def adjoint(self, y):
        y = self._grid(y)
        return np.real(np.fft.ifft2(np.fft.fft2(y) * np.conj(self.otf(y.shape))))


class ViewOperator(ForwardOperator):
    def __init__(self, pose: PoseParam, sigma: float = 0.0):
        self.pose = pose
        self.sigma = sigma

    def apply(self, x):
        return view_transform(x, self.pose)

    def adjoint(self, y):
        return view_transform_adjoint(y, self.pose)


class IdentityOperator(ForwardOperator):
    def __init__(self, sigma: float = 0.0):
        self.sigma = sigma

    def apply(self, x):
        return np.array(x, dtype=np.float64)

    def adjoint(self, y):
        return np.array(y, dtype=np.float64)


class ZeroOperator(ForwardOperator):
    def __init__(self, sigma: float = 0.0):
        self.sigma = sigma

    def apply(self, x):
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    def adjoint(self, y):
        return np.zeros_like(np.asarray(y, dtype=np.float64))


class DenseOperator(ForwardOperator):
    """Matrix operator on flattened inputs; output keeps ``out_shape``."""

    def __init__(self, matrix, in_shape=None, out_shape=None, sigma: float = 0.0):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        m, n = self.matrix.shape
        self.in_shape = tuple(in_shape) if in_shape is not None else (n,)
        self.out_shape = tuple(out_shape) if out_shape is not None else (m,)
        self.sigma = sigma

    def apply(self, x):
        return (self.matrix @ np.asarray(x, dtype=np.float64).reshape(-1)).reshape(self.out_shape)

    def adjoint(self, y):
        return (self.matrix.T @ np.asarray(y, dtype=np.float64).reshape(-1)).reshape(self.in_shape)
