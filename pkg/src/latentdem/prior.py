"""Analytic score models standing in for a pretrained latent diffusion prior.

Every prior here is a Gaussian or Gaussian mixture, so the VP-diffused
marginal at step t is available in closed form:

    z_t ~ N(sqrt(abar_t) mu, abar_t Sigma + (1 - abar_t) I)

and the score, its Hessian-vector product and the log density are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from .sched import NoiseSchedule

_LOG_2PI = np.log(2.0 * np.pi)


@runtime_checkable
class ScoreModel(Protocol):
    """Anything that returns grad_z log p_t(z) at a 1-based step t."""

    def score(self, z: np.ndarray, t: int) -> np.ndarray: ...


class GaussianPrior:
    """N(mean, cov) over latent vectors; eigendecomposition cached."""

    def __init__(self, mean, cov):
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {n}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
        if evals.min() <= 0:
            raise ValueError(f"covariance must be positive definite (min eigenvalue {evals.min():.3g})")
        self.mean = mean
        self.cov = cov
        self.evals = evals
        self.evecs = evecs

    @classmethod
    def isotropic(cls, mean, var: float) -> GaussianPrior:
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        return cls(mean, var * np.eye(mean.shape[0]))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def _marginal_evals(self, ab: float) -> np.ndarray:
        ev = ab * self.evals + (1.0 - ab)
        if ev.min() <= 0:
            raise np.linalg.LinAlgError("singular marginal covariance")
        return ev

    def marginal(self, s: NoiseSchedule, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of z_t (t = 0 means the undiffused prior)."""
        ab = 1.0 if t == 0 else s.alpha_bar_at(t)
        return np.sqrt(ab) * self.mean, ab * self.cov + (1.0 - ab) * np.eye(self.dim)

    def _centered(self, z, ab):
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.dim:
            raise ValueError(f"latent dimension {z.shape[-1]} != prior dimension {self.dim}")
        return z - np.sqrt(ab) * self.mean

    def _apply_precision(self, v, ev):
        # (U diag(ev) U^T)^-1 v for v of shape (..., n)
        return ((v @ self.evecs) / ev) @ self.evecs.T

    def score_ab(self, z, ab: float) -> np.ndarray:
        ev = self._marginal_evals(ab)
        return -self._apply_precision(self._centered(z, ab), ev)

    def hessian_vp_ab(self, z, ab: float, v) -> np.ndarray:
        ev = self._marginal_evals(ab)
        return -self._apply_precision(np.asarray(v, dtype=np.float64), ev)

    def log_density_ab(self, z, ab: float) -> np.ndarray:
        ev = self._marginal_evals(ab)
        d = self._centered(z, ab)
        w = d @ self.evecs
        quad = np.sum(w * w / ev, axis=-1)
        return -0.5 * (quad + np.sum(np.log(ev)) + self.dim * _LOG_2PI)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        eps = rng.standard_normal(shape)
        return self.mean + (eps * np.sqrt(self.evals)) @ self.evecs.T


@dataclass
class GaussianMixturePrior:
    """Finite mixture sum_j w_j N(mu_j, Sigma_j)."""

    weights: np.ndarray
    components: Sequence[GaussianPrior]
    log_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(self.components) == 0:
            raise ValueError("mixture needs at least one component")
        if self.weights.shape[0] != len(self.components):
            raise ValueError("one weight per component required")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be positive and sum to 1")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError(f"components disagree on dimension: {sorted(dims)}")
        self.log_weights = np.log(self.weights)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def _log_joint(self, z, ab):
        return np.stack(
            [lw + c.log_density_ab(z, ab) for lw, c in zip(self.log_weights, self.components)],
            axis=-1,
        )

    def responsibilities_ab(self, z, ab: float) -> np.ndarray:
        lj = self._log_joint(z, ab)
        norm = logsumexp(lj, axis=-1, keepdims=True)
        if not np.all(np.isfinite(norm)):
            raise FloatingPointError(
                f"all mixture component densities underflow at alpha_bar={ab:.3g} "
                f"(max log-joint {np.max(lj)!r}); latent is likely non-finite"
            )
        return np.exp(lj - norm)

    def score_ab(self, z, ab: float) -> np.ndarray:
        if len(self.components) == 1:
            return self.components[0].score_ab(z, ab)
        r = self.responsibilities_ab(z, ab)
        scores = np.stack([c.score_ab(z, ab) for c in self.components], axis=-2)
        return np.einsum("...j,...jn->...n", r, scores)

    def hessian_vp_ab(self, z, ab: float, v) -> np.ndarray:
        if len(self.components) == 1:
            return self.components[0].hessian_vp_ab(z, ab, v)
        v = np.asarray(v, dtype=np.float64)
        r = self.responsibilities_ab(z, ab)
        scores = np.stack([c.score_ab(z, ab) for c in self.components], axis=-2)
        hv = np.stack([c.hessian_vp_ab(z, ab, v) for c in self.components], axis=-2)
        s = np.einsum("...j,...jn->...n", r, scores)
        sv = np.einsum("...jn,...n->...j", scores, v)
        # Hessian of log-sum-exp: E_r[H_j] + Cov_r[s_j]
        out = np.einsum("...j,...jn->...n", r, hv)
        out = out + np.einsum("...j,...jn->...n", r * sv, scores)
        out = out - s * np.sum(s * v, axis=-1, keepdims=True)
        return out

    def log_density_ab(self, z, ab: float) -> np.ndarray:
        return logsumexp(self._log_joint(z, ab), axis=-1)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        n = 1 if size is None else size
        idx = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.stack([self.components[j].sample(rng) for j in idx])
        return out[0] if size is None else out


AnalyticPrior = GaussianPrior | GaussianMixturePrior


def _alpha_bar(s: NoiseSchedule, t: int) -> float:
    return 1.0 if t == 0 else s.alpha_bar_at(t)


def gaussian_score(p: GaussianPrior, s: NoiseSchedule, z_t, t: int) -> np.ndarray:
    """Score of the VP-diffused Gaussian prior at step t."""
    return p.score_ab(z_t, _alpha_bar(s, t))


def gmm_score(p: GaussianMixturePrior, s: NoiseSchedule, z_t, t: int) -> np.ndarray:
    """Responsibility-weighted score of the diffused mixture (log-space weights)."""
    return p.score_ab(z_t, _alpha_bar(s, t))


class PriorScore:
    """Binds an analytic prior to a schedule, exposing the ScoreModel contract.

    ``hessian_vp`` gives the exact derivative of the score, which the
    E-step uses to differentiate through the Tweedie estimate.
    """

    def __init__(self, prior: AnalyticPrior, sched: NoiseSchedule):
        self.prior = prior
        self.sched = sched

    @property
    def dim(self) -> int:
        return self.prior.dim

    def score(self, z, t: int) -> np.ndarray:
        return self.prior.score_ab(z, _alpha_bar(self.sched, t))

    def hessian_vp(self, z, t: int, v) -> np.ndarray:
        return self.prior.hessian_vp_ab(z, _alpha_bar(self.sched, t), v)

    def log_density(self, z, t: int) -> np.ndarray:
        return self.prior.log_density_ab(z, _alpha_bar(self.sched, t))


def conditional_prior(ref_image, pose, codec, tau: float) -> GaussianPrior:
    """Toy novel-view model: latent of the pose-transformed reference plus N(0, tau^2 I)."""
    from .forward import view_transform

    if tau <= 0:
        raise ValueError("tau must be positive")
    center = codec.encode(view_transform(ref_image, pose))
    return GaussianPrior.isotropic(center, tau * tau)


def conditional_view_score(ref_image, pose, s: NoiseSchedule, z_t, t: int, codec, tau: float) -> np.ndarray:
    """Score of the diffused conditional toy model at (z_t, t)."""
    return conditional_prior(ref_image, pose, codec, tau).score_ab(z_t, _alpha_bar(s, t))


class ConditionalViewScore(PriorScore):
    """ScoreModel conditioned on a reference image seen from ``pose``."""

    def __init__(self, ref_image, pose, codec, tau: float, sched: NoiseSchedule):
        super().__init__(conditional_prior(ref_image, pose, codec, tau), sched)
        self.ref_image = ref_image
        self.pose = pose
        self.tau = tau
