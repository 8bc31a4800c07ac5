"""Joint generative model for returns and call/distribution intensities.

One latent normal vector drives everything.  For a universe with ``n_ill``
illiquid assets and ``n_liq`` liquid assets the latent vector has dimension
``3 * n_ill + n_liq`` and, under the default contiguous layout, splits into
four blocks::

    z = [ z_call (n_ill) | z_dist (n_ill) | z_ill_ret (n_ill) | z_liq_ret (n_liq) ]

which map to the per-period random quantities

    lambda1 = 1 / (1 + exp(z_call))      existing-commitment call intensity
    lambda0 = lambda1 / 2                immediate call intensity
    delta   = 1 / (1 + exp(z_dist))      distribution intensity
    R_ill   = exp(z_ill_ret)             illiquid gross returns
    R_liq   = exp(z_liq_ret)             liquid gross returns

so intensities are logit-normal and returns log-normal, with dependence
between any of them carried by the latent covariance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ModelConstructionError

SYMMETRY_TOL = 1e-12
EIGENVALUE_TOL = -1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BlockLayout:
    """Maps latent coordinates to their roles.

    Each field is an index array into the latent vector.  Together the four
    blocks must partition ``0..dim-1`` exactly, with no overlap.
    """

    call: np.ndarray
    dist: np.ndarray
    ill_ret: np.ndarray
    liq_ret: np.ndarray

    def __post_init__(self):
        for name in ("call", "dist", "ill_ret", "liq_ret"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=int))

    @classmethod
    def contiguous(cls, n_ill: int, n_liq: int) -> "BlockLayout":
        return cls(
            call=np.arange(0, n_ill),
            dist=np.arange(n_ill, 2 * n_ill),
            ill_ret=np.arange(2 * n_ill, 3 * n_ill),
            liq_ret=np.arange(3 * n_ill, 3 * n_ill + n_liq),
        )

    def validate(self, dim: int, n_ill: int, n_liq: int) -> None:
        if len(self.call) != n_ill or len(self.dist) != n_ill:
            raise ModelConstructionError("call/dist blocks must each have n_ill coordinates")
        if len(self.ill_ret) != n_ill or len(self.liq_ret) != n_liq:
            raise ModelConstructionError("return blocks must have n_ill and n_liq coordinates")
        combined = np.concatenate([self.call, self.dist, self.ill_ret, self.liq_ret])
        if len(combined) != dim or not np.array_equal(np.sort(combined), np.arange(dim)):
            raise ModelConstructionError(
                "block layout must partition the latent coordinates exactly, with no overlap"
            )


@dataclass(frozen=True)
class LatentDistribution:
    """Mean and covariance of the latent normal vector, plus its block layout.

    The covariance must be symmetric (within 1e-12) and positive semidefinite
    (eigenvalues >= -1e-10); a degenerate (singular) covariance is allowed and
    is how a riskless cash asset is represented.  Instances are immutable and
    safe for concurrent reads.
    """

    mean: np.ndarray
    covariance: np.ndarray
    n_ill: int
    n_liq: int
    layout: BlockLayout = None  # type: ignore[assignment]
    _factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = _readonly(np.atleast_1d(self.mean))
        cov = _readonly(np.atleast_2d(self.covariance))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        if self.layout is None:
            object.__setattr__(self, "layout", BlockLayout.contiguous(self.n_ill, self.n_liq))
        dim = 3 * self.n_ill + self.n_liq
        if mean.shape != (dim,):
            raise ModelConstructionError(
                f"mean must have length 3*n_ill + n_liq = {dim}, got {mean.shape}"
            )
        if cov.shape != (dim, dim):
            raise ModelConstructionError(f"covariance must be {dim}x{dim}, got {cov.shape}")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ModelConstructionError("latent parameters must be finite")
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL:
            raise ModelConstructionError("covariance is not symmetric within 1e-12")
        self.layout.validate(dim, self.n_ill, self.n_liq)
        try:
            eigvals, eigvecs = np.linalg.eigh(cov)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh rarely fails
            raise ModelConstructionError(f"covariance factorization failed: {exc}") from exc
        if eigvals.min(initial=0.0) < EIGENVALUE_TOL:
            raise ModelConstructionError(
                f"covariance is not positive semidefinite (min eigenvalue {eigvals.min():.3e})"
            )
        clipped = np.clip(eigvals, 0.0, None)
        # a relative cutoff keeps numerically-zero directions exactly riskless
        keep = clipped > clipped.max(initial=0.0) * 1e-14
        factor = eigvecs[:, keep] * np.sqrt(clipped[keep])
        object.__setattr__(self, "_factor", _readonly(factor))

    @property
    def dim(self) -> int:
        return 3 * self.n_ill + self.n_liq

    def fingerprint(self) -> str:
        """Stable content hash, used as a cache key for derived quantities."""
        h = hashlib.sha256()
        h.update(np.int64([self.n_ill, self.n_liq]).tobytes())
        h.update(self.mean.tobytes())
        h.update(self.covariance.tobytes())
        for block in (self.layout.call, self.layout.dist, self.layout.ill_ret, self.layout.liq_ret):
            h.update(np.asarray(block, dtype=np.int64).tobytes())
        return h.hexdigest()

    def sample_latent(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        """Draw latent normal vectors; shape (dim,) or (count, dim)."""
        size = self._factor.shape[1]
        if count is None:
            g = rng.standard_normal(size)
            return self.mean + self._factor @ g
        g = rng.standard_normal((count, size))
        return self.mean + g @ self._factor.T

    def gross_return_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the gross returns, liquid block first.

        Returns are log-normal, so the moments have the closed form
        ``E[R_i] = exp(mu_i + S_ii / 2)`` and
        ``cov(R_i, R_j) = E[R_i] E[R_j] (exp(S_ij) - 1)`` where ``(mu, S)``
        are the latent parameters restricted to the return coordinates.
        The output ordering is ``[liquid assets..., illiquid assets...]``,
        matching the exposure vector ``y = (h, I)`` used by the planners.
        """
        idx = np.concatenate([self.layout.liq_ret, self.layout.ill_ret])
        m = self.mean[idx]
        v = self.covariance[np.ix_(idx, idx)]
        mu_g = np.exp(m + np.diag(v) / 2.0)
        sigma_g = np.outer(mu_g, mu_g) * np.expm1(v)
        return mu_g, sigma_g

    def liquid_return_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Gross-return mean and covariance of the liquid block only."""
        mu_g, sigma_g = self.gross_return_moments()
        k = self.n_liq
        return mu_g[:k], sigma_g[:k, :k]


@dataclass(frozen=True)
class JointDraw:
    """One period's realized returns and intensities.

    Intensities must lie in [0, 1] and returns must be strictly positive.
    Draws produced by :func:`sample_draw` additionally satisfy
    ``lambda0 = lambda1 / 2`` and keep intensities strictly inside (0, 1);
    hand-built draws (for instance degenerate full-call scenarios) may sit on
    the interval boundary.
    """

    R_ill: np.ndarray
    R_liq: np.ndarray
    lambda0: np.ndarray
    lambda1: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        for name in ("R_ill", "R_liq", "lambda0", "lambda1", "delta"):
            object.__setattr__(self, name, _readonly(np.atleast_1d(getattr(self, name))))
        n = len(self.R_ill)
        for name in ("lambda0", "lambda1", "delta"):
            v = getattr(self, name)
            if v.shape != (n,):
                raise ModelConstructionError(f"{name} must match the illiquid asset count")
            if np.any(v < 0.0) or np.any(v > 1.0):
                raise ModelConstructionError(f"{name} entries must lie in [0, 1]")
        if np.any(self.R_ill <= 0.0) or np.any(self.R_liq <= 0.0):
            raise ModelConstructionError("gross returns must be strictly positive")

    @property
    def n_ill(self) -> int:
        return len(self.R_ill)

    @property
    def n_liq(self) -> int:
        return len(self.R_liq)


def _blocks_from_latent(dist: LatentDistribution, z: np.ndarray):
    """Map latent samples (…, dim) to (lambda1, lambda0, delta, R_ill, R_liq)."""
    lam1 = expit(-z[..., dist.layout.call])
    lam0 = 0.5 * lam1
    delta = expit(-z[..., dist.layout.dist])
    r_ill = np.exp(z[..., dist.layout.ill_ret])
    r_liq = np.exp(z[..., dist.layout.liq_ret])
    return lam1, lam0, delta, r_ill, r_liq


def sample_draw(dist: LatentDistribution, rng: np.random.Generator) -> JointDraw:
    """Sample one period's joint draw. Deterministic given the stream state."""
    z = dist.sample_latent(rng)
    lam1, lam0, delta, r_ill, r_liq = _blocks_from_latent(dist, z)
    return JointDraw(R_ill=r_ill, R_liq=r_liq, lambda0=lam0, lambda1=lam1, delta=delta)


def sample_draw_batch(dist: LatentDistribution, rng: np.random.Generator, count: int):
    """Vectorized sampling; returns arrays (lambda1, lambda0, delta, R_ill, R_liq)
    each with leading dimension ``count``."""
    z = dist.sample_latent(rng, count)
    return _blocks_from_latent(dist, z)


def draws_from_batch(batch, t: int) -> JointDraw:
    """Extract period ``t`` of a :func:`sample_draw_batch` result as a JointDraw."""
    lam1, lam0, delta, r_ill, r_liq = batch
    return JointDraw(
        R_ill=r_ill[t], R_liq=r_liq[t], lambda0=lam0[t], lambda1=lam1[t], delta=delta[t]
    )
