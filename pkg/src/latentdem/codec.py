"""Linear latent codec x = W z + b standing in for an LDM autoencoder."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class LinearCodec:
    """Decoder ``W`` (D x N), offset ``b`` and encoder ``pinv(W)``.

    ``image_shape`` is the H x W grid the decoded vector is reshaped to.
    A rank-deficient ``W`` gives a decoder that is not injective, which is
    exactly the situation the gluing term is meant to handle.
    """

    def __init__(self, decode_matrix, offset=None, image_shape=None):
        W = np.atleast_2d(np.asarray(decode_matrix, dtype=np.float64))
        D, N = W.shape
        if D < N:
            raise ValueError(f"latent dimension {N} exceeds data dimension {D}")
        b = np.zeros(D) if offset is None else np.asarray(offset, dtype=np.float64).reshape(-1)
        if b.shape != (D,):
            raise ValueError(f"offset length {b.size} != data dimension {D}")
        if image_shape is None:
            image_shape = (D,)
        image_shape = tuple(int(s) for s in image_shape)
        if int(np.prod(image_shape)) != D:
            raise ValueError(f"image shape {image_shape} does not hold {D} values")
        self.decode_matrix = W
        self.offset = b
        self.encode_matrix = np.linalg.pinv(W)
        self.image_shape = image_shape

    @property
    def latent_dim(self) -> int:
        return self.decode_matrix.shape[1]

    @property
    def data_dim(self) -> int:
        return self.decode_matrix.shape[0]

    @property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.decode_matrix))

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.shape[0] != self.latent_dim:
            raise ValueError(f"latent length {z.shape[0]} != codec latent dimension {self.latent_dim}")
        return (self.decode_matrix @ z + self.offset).reshape(self.image_shape)

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.data_dim:
            raise ValueError(f"image has {x.shape[0]} values, codec expects {self.data_dim}")
        return self.encode_matrix @ (x - self.offset)

    def decode_vjp(self, g) -> np.ndarray:
        """Pull an image-space gradient back to latent space (W^T g)."""
        return self.decode_matrix.T @ np.asarray(g, dtype=np.float64).reshape(-1)

    def encode_vjp(self, g) -> np.ndarray:
        """W^+^T g, reshaped to the image grid."""
        return (self.encode_matrix.T @ np.asarray(g, dtype=np.float64)).reshape(self.image_shape)


def decode(c: LinearCodec, z) -> np.ndarray:
    return c.decode(z)


def encode(c: LinearCodec, x) -> np.ndarray:
    return c.encode(x)


def identity_codec(image_shape) -> LinearCodec:
    image_shape = tuple(image_shape)
    return LinearCodec(np.eye(int(np.prod(image_shape))), image_shape=image_shape)


def pool_codec(image_shape, factor: int, offset: float = 0.0) -> LinearCodec:
    """Nearest-neighbour upsampling decoder; the encoder is block averaging."""
    H, W = image_shape
    if H % factor or W % factor:
        raise ValueError(f"image {image_shape} not divisible by pooling factor {factor}")
    up = np.kron(np.eye(H // factor), np.ones((factor, 1)))
    right = np.kron(np.eye(W // factor), np.ones((factor, 1)))
    return LinearCodec(np.kron(up, right), offset=np.full(H * W, offset), image_shape=(H, W))


def random_codec(
    image_shape,
    latent_dim: int,
    rng: np.random.Generator,
    rank: int | None = None,
    scale: float = 1.0,
    offset: float = 0.0,
) -> LinearCodec:
    """Seeded random decoder with orthogonal columns scaled by ``scale``.

    ``rank < latent_dim`` collapses the trailing columns onto the leading
    ones, making the decoder non-injective.
    """
    D = int(np.prod(image_shape))
    rank = latent_dim if rank is None else rank
    if not 1 <= rank <= latent_dim:
        raise ValueError("rank must lie in 1..latent_dim")
    q, _ = np.linalg.qr(rng.standard_normal((D, latent_dim)))
    W = scale * q
    if rank < latent_dim:
        mix = rng.standard_normal((rank, latent_dim - rank))
        W[:, rank:] = W[:, :rank] @ mix
    return LinearCodec(W, offset=np.full(D, offset), image_shape=image_shape)


def gluing_residual(c: LinearCodec, z0_hat, y, A) -> tuple[float, np.ndarray]:
    """Gluing penalty ||z0 - E(A^T y + (I - A^T A) D(z0))||^2 and its gradient in z0."""
    if not hasattr(A, "adjoint"):
        raise TypeError(f"operator {type(A).__name__} has no transpose")
    z0_hat = np.asarray(z0_hat, dtype=np.float64)
    x = c.decode(z0_hat)
    target = A.adjoint(y) + x - A.adjoint(A.apply(x))
    r = z0_hat - c.encode(target)
    value = float(r @ r)
    # r is affine in z0: dr/dz0 = I - W^+ (I - A^T A) W
    u = c.encode_vjp(r)
    back = u - A.adjoint(A.apply(u))
    grad = 2.0 * (r - c.decode_vjp(back))
    return value, grad


def load_matrix_text(path) -> np.ndarray:
    """Rows of whitespace-separated decimals."""
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged matrix rows")
    return np.array([[float(v) for v in r] for r in rows])


def save_matrix_text(path, m) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    Path(path).write_text("\n".join(" ".join(f"{v:.17g}" for v in row) for row in m) + "\n")
