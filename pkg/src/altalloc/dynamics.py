"""Random and mean linear dynamics for illiquid and joint portfolios.

Illiquid-only layout (per-asset, vectorized over ``n = n_ill`` assets):
state ``x = (I, K)`` in R^{2n}, control ``u = n`` (new commitments) in R^n,
outputs ``y = (I, K, C, D)`` in R^{4n}.  One period evolves as::

    C  = lambda0 * n + lambda1 * K          capital calls
    D  = R_ill * delta * I                  distributions
    K' = K + n - C
    I' = R_ill * I + C - D

Joint layout: state ``x = (L, I, K)`` in R^{1+2n}, control ``u = (h, n, s)``
with ``h`` the liquid dollar allocation, ``s`` outside cash.  The liquid
wealth update is ``L' = h . R_liq - sum(C) + sum(D) + s`` and is exact as a
matrix recursion whenever the budget identity ``sum(h) = L`` holds.

The mean system replaces every random matrix entry by its expectation,
estimated by Monte Carlo because products such as E[R * (1 - delta)] have no
closed form under correlated logit-/log-normal coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelConstructionError, NonConvergentSystemError
from .latent import JointDraw, LatentDistribution, _readonly, sample_draw_batch

MEAN_SAMPLE_COUNT = 10**6
MEAN_SEED = 12345
MIN_MEAN_SAMPLES = 10**4

SPECTRAL_ITERATIONS = 1000
SPECTRAL_TOL = 1e-10


@dataclass(frozen=True)
class IlliquidState:
    """Illiquid wealth I and uncalled commitments K, both nonnegative."""

    I: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "I", _readonly(np.atleast_1d(self.I)))
        object.__setattr__(self, "K", _readonly(np.atleast_1d(self.K)))
        if self.I.shape != self.K.shape:
            raise ValueError("I and K must have the same shape")
        if np.any(self.I < 0) or np.any(self.K < 0):
            raise ValueError("illiquid wealth and uncalled commitments must be nonnegative")

    @property
    def n_ill(self) -> int:
        return len(self.I)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.I, self.K])

    @classmethod
    def zero(cls, n_ill: int) -> "IlliquidState":
        return cls(I=np.zeros(n_ill), K=np.zeros(n_ill))


@dataclass(frozen=True)
class JointState:
    """Liquid wealth plus the illiquid state."""

    L: float
    illiquid: IlliquidState

    def __post_init__(self):
        object.__setattr__(self, "L", float(self.L))
        if not np.isfinite(self.L):
            raise ValueError("liquid wealth must be finite")

    @property
    def I(self) -> np.ndarray:
        return self.illiquid.I

    @property
    def K(self) -> np.ndarray:
        return self.illiquid.K

    @property
    def total_wealth(self) -> float:
        return self.L + float(self.I.sum())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.L], self.I, self.K])

    @classmethod
    def start(cls, liquid: float, n_ill: int) -> "JointState":
        return cls(L=liquid, illiquid=IlliquidState.zero(n_ill))


@dataclass(frozen=True)
class SystemMatrices:
    """One period's realized (A, B, F, G) for a given layout."""

    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    G: np.ndarray
    layout: str  # "illiquid" or "joint"

    def __post_init__(self):
        for name in ("A", "B", "F", "G"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))


@dataclass(frozen=True)
class MeanMatrices:
    """Monte Carlo estimate of the mean system, with per-entry standard errors.

    ``lambda0_mean``/``lambda1_mean`` (and ``liq_return_mean`` for the joint
    layout) are estimation byproducts kept for the planners.
    """

    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    G: np.ndarray
    se_A: np.ndarray
    se_B: np.ndarray
    se_F: np.ndarray
    se_G: np.ndarray
    sample_count: int
    seed: int
    layout: str
    n_ill: int
    n_liq: int
    lambda0_mean: np.ndarray
    lambda1_mean: np.ndarray
    liq_return_mean: np.ndarray
    _fingerprint: str = field(default="", repr=False, compare=False)

    def __post_init__(self):
        for name in ("A", "B", "F", "G", "se_A", "se_B", "se_F", "se_G",
                     "lambda0_mean", "lambda1_mean", "liq_return_mean"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        for name in ("A", "B", "F", "G"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ModelConstructionError(f"mean matrix {name} has non-finite entries")

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class SteadyStateGains:
    """Asymptotic mean response per dollar of constant commitment.

    ``alpha_C`` is identically 1 for any stable parameter set: a constant
    one-dollar commitment asymptotically produces one dollar of calls.
    """

    alpha_I: np.ndarray
    alpha_K: np.ndarray
    alpha_C: np.ndarray
    alpha_D: np.ndarray

    def __post_init__(self):
        for name in ("alpha_I", "alpha_K", "alpha_C", "alpha_D"):
            object.__setattr__(self, name, _readonly(np.atleast_1d(getattr(self, name))))


def step_illiquid(
    state: IlliquidState, n: np.ndarray, draw: JointDraw
) -> tuple[IlliquidState, np.ndarray, np.ndarray]:
    """Advance the illiquid state one period; returns (next_state, C, D)."""
    n = np.atleast_1d(np.asarray(n, dtype=float))
    if np.any(n < 0):
        raise ValueError("commitments must be nonnegative")
    if n.shape != state.I.shape:
        raise ValueError("commitment vector must match the illiquid asset count")
    C = draw.lambda0 * n + draw.lambda1 * state.K
    D = draw.R_ill * draw.delta * state.I
    K_next = state.K + n - C
    I_next = draw.R_ill * state.I + C - D
    # guard against -0.0 / 1-ulp negatives from the float arithmetic
    K_next = np.maximum(K_next, 0.0)
    I_next = np.maximum(I_next, 0.0)
    return IlliquidState(I=I_next, K=K_next), C, D


def step_joint(
    state: JointState, h: np.ndarray, n: np.ndarray, s: float, draw: JointDraw
) -> tuple[JointState, np.ndarray, np.ndarray]:
    """Advance the joint state one period; returns (next_state, C, D).

    ``h`` must allocate the full liquid wealth (budget identity); the caller
    is responsible for any forced injection if the resulting L is negative.
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    ill_next, C, D = step_illiquid(state.illiquid, n, draw)
    L_next = float(h @ draw.R_liq) - float(C.sum()) + float(D.sum()) + float(s)
    return JointState(L=L_next, illiquid=ill_next), C, D


def build_matrices(draw: JointDraw, layout: str = "illiquid") -> SystemMatrices:
    """Populate the realized system matrices for one draw."""
    n = draw.n_ill
    lam0, lam1, delta, r = draw.lambda0, draw.lambda1, draw.delta, draw.R_ill
    if layout == "illiquid":
        A = np.block([
            [np.diag(r * (1.0 - delta)), np.diag(lam1)],
            [np.zeros((n, n)), np.diag(1.0 - lam1)],
        ])
        B = np.vstack([np.diag(lam0), np.diag(1.0 - lam0)])
        F = np.block([
            [np.eye(n), np.zeros((n, n))],
            [np.zeros((n, n)), np.eye(n)],
            [np.zeros((n, n)), np.diag(lam1)],
            [np.diag(r * delta), np.zeros((n, n))],
        ])
        G = np.vstack([np.zeros((n, n)), np.zeros((n, n)), np.diag(lam0), np.zeros((n, n))])
        return SystemMatrices(A=A, B=B, F=F, G=G, layout=layout)
    if layout == "joint":
        m = draw.n_liq
        nx = 1 + 2 * n
        A = np.zeros((nx, nx))
        A[0, 1:1 + n] = delta * r
        A[0, 1 + n:] = -lam1
        A[1:1 + n, 1:1 + n] = np.diag(r * (1.0 - delta))
        A[1:1 + n, 1 + n:] = np.diag(lam1)
        A[1 + n:, 1 + n:] = np.diag(1.0 - lam1)
        B = np.zeros((nx, m + n + 1))
        B[0, :m] = draw.R_liq
        B[0, m:m + n] = -lam0
        B[0, m + n] = 1.0
        B[1:1 + n, m:m + n] = np.diag(lam0)
        B[1 + n:, m:m + n] = np.diag(1.0 - lam0)
        # outputs are the state itself in the joint layout
        F = np.eye(nx)
        G = np.zeros((nx, m + n + 1))
        return SystemMatrices(A=A, B=B, F=F, G=G, layout=layout)
    raise ValueError(f"unknown layout {layout!r}")


_MEAN_CACHE: dict[tuple, MeanMatrices] = {}


def mean_matrices(
    dist: LatentDistribution,
    sample_count: int = MEAN_SAMPLE_COUNT,
    seed: int = MEAN_SEED,
    layout: str | None = None,
) -> MeanMatrices:
    """Entrywise Monte Carlo average of the system matrices.

    Deterministic given ``seed``; results are cached per (distribution,
    sample_count, seed, layout).  ``layout`` defaults to "joint" when the
    distribution has liquid assets and "illiquid" otherwise; the illiquid
    layout of a joint distribution is also valid and is what the commitment
    planners and steady-state gains consume.
    """
    if sample_count < MIN_MEAN_SAMPLES:
        raise ValueError(f"sample_count must be at least {MIN_MEAN_SAMPLES}")
    if layout is None:
        layout = "joint" if dist.n_liq > 0 else "illiquid"
    if layout not in ("illiquid", "joint"):
        raise ValueError(f"unknown layout {layout!r}")
    key = (dist.fingerprint(), sample_count, seed, layout)
    cached = _MEAN_CACHE.get(key)
    if cached is not None:
        return cached

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    lam1, lam0, delta, r_ill, r_liq = sample_draw_batch(dist, rng, sample_count)
    sqrt_n = np.sqrt(sample_count)

    def mean_se(a):
        return a.mean(axis=0), a.std(axis=0, ddof=1) / sqrt_n

    m_l1, se_l1 = mean_se(lam1)
    m_l0, se_l0 = mean_se(lam0)
    m_r1d, se_r1d = mean_se(r_ill * (1.0 - delta))     # E[R (1 - delta)]
    m_rd, se_rd = mean_se(r_ill * delta)               # E[R delta]
    m_rliq, se_rliq = mean_se(r_liq) if dist.n_liq else (np.zeros(0), np.zeros(0))

    n = dist.n_ill
    if layout == "illiquid":
        A = np.block([
            [np.diag(m_r1d), np.diag(m_l1)],
            [np.zeros((n, n)), np.diag(1.0 - m_l1)],
        ])
        B = np.vstack([np.diag(m_l0), np.diag(1.0 - m_l0)])
        F = np.block([
            [np.eye(n), np.zeros((n, n))],
            [np.zeros((n, n)), np.eye(n)],
            [np.zeros((n, n)), np.diag(m_l1)],
            [np.diag(m_rd), np.zeros((n, n))],
        ])
        G = np.vstack([np.zeros((n, n)), np.zeros((n, n)), np.diag(m_l0), np.zeros((n, n))])
        se_A = np.block([
            [np.diag(se_r1d), np.diag(se_l1)],
            [np.zeros((n, n)), np.diag(se_l1)],
        ])
        se_B = np.vstack([np.diag(se_l0), np.diag(se_l0)])
        se_F = np.zeros((4 * n, 2 * n))  # the I/K rows of F are exact
        se_F[2 * n:3 * n, n:] = np.diag(se_l1)
        se_F[3 * n:, :n] = np.diag(se_rd)
        se_G = np.vstack([np.zeros((2 * n, n)), np.diag(se_l0), np.zeros((n, n))])
    else:
        m = dist.n_liq
        nx = 1 + 2 * n
        A = np.zeros((nx, nx))
        A[0, 1:1 + n] = m_rd
        A[0, 1 + n:] = -m_l1
        A[1:1 + n, 1:1 + n] = np.diag(m_r1d)
        A[1:1 + n, 1 + n:] = np.diag(m_l1)
        A[1 + n:, 1 + n:] = np.diag(1.0 - m_l1)
        B = np.zeros((nx, m + n + 1))
        B[0, :m] = m_rliq
        B[0, m:m + n] = -m_l0
        B[0, m + n] = 1.0
        B[1:1 + n, m:m + n] = np.diag(m_l0)
        B[1 + n:, m:m + n] = np.diag(1.0 - m_l0)
        F = np.eye(nx)
        G = np.zeros((nx, m + n + 1))
        se_A = np.zeros_like(A)
        se_A[0, 1:1 + n] = se_rd
        se_A[0, 1 + n:] = se_l1
        se_A[1:1 + n, 1:1 + n] = np.diag(se_r1d)
        se_A[1:1 + n, 1 + n:] = np.diag(se_l1)
        se_A[1 + n:, 1 + n:] = np.diag(se_l1)
        se_B = np.zeros_like(B)
        se_B[0, :m] = se_rliq
        se_B[0, m:m + n] = se_l0
        se_B[1:1 + n, m:m + n] = np.diag(se_l0)
        se_B[1 + n:, m:m + n] = np.diag(se_l0)
        se_F = np.zeros_like(F)  # joint outputs are the state itself
        se_G = np.zeros_like(G)

    mm = MeanMatrices(
        A=A, B=B, F=F, G=G, se_A=se_A, se_B=se_B, se_F=se_F, se_G=se_G,
        sample_count=sample_count, seed=seed, layout=layout,
        n_ill=n, n_liq=dist.n_liq,
        lambda0_mean=m_l0, lambda1_mean=m_l1, liq_return_mean=m_rliq,
        _fingerprint=key[0],
    )
    _MEAN_CACHE[key] = mm
    return mm


def simulate_mean(
    mm: MeanMatrices, x0: np.ndarray, controls: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Iterate the mean dynamics; returns (states (T+1, nx), outputs (T, ny))."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    T = controls.shape[0]
    states = np.zeros((T + 1, mm.state_dim))
    outputs = np.zeros((T, mm.F.shape[0]))
    states[0] = x0
    for t in range(T):
        outputs[t] = mm.F @ states[t] + mm.G @ controls[t]
        states[t + 1] = mm.A @ states[t] + mm.B @ controls[t]
    return states, outputs


def impulse_response(mm: MeanMatrices, T: int) -> np.ndarray:
    """Mean outputs for a one-time unit commitment at period 1, zero state.

    By convention the period-1 output already contains the immediate call
    ``C_1 = mean(lambda0)`` through the feedthrough term, so the response at
    period ``t`` equals ``F A^(t-2) B`` for t >= 2 and ``G`` at t = 1.
    Rows are periods 1..T; columns follow the output layout (I, K, C, D).
    """
    if T < 1:
        raise ValueError("horizon must be at least 1")
    if mm.layout != "illiquid":
        raise ValueError("responses are defined for the illiquid layout")
    controls = np.zeros((T, mm.control_dim))
    controls[0] = 1.0
    _, outputs = simulate_mean(mm, np.zeros(mm.state_dim), controls)
    return outputs


def step_response(mm: MeanMatrices, T: int) -> np.ndarray:
    """Mean outputs under a constant unit commitment from zero state.

    Computed by iterating the mean recursion; by linearity it equals the
    running sum of the impulse response.
    """
    if T < 1:
        raise ValueError("horizon must be at least 1")
    if mm.layout != "illiquid":
        raise ValueError("responses are defined for the illiquid layout")
    controls = np.ones((T, mm.control_dim))
    _, outputs = simulate_mean(mm, np.zeros(mm.state_dim), controls)
    return outputs


def spectral_radius(
    A: np.ndarray, iterations: int = SPECTRAL_ITERATIONS, tol: float = SPECTRAL_TOL
) -> float:
    """Spectral radius estimate by power iteration.

    Uses plain power iteration with a deterministic start vector; adequate for
    the nonnegative, essentially triangular transition matrices arising here.
    """
    A = np.asarray(A, dtype=float)
    k = A.shape[0]
    v = np.ones(k) + 1e-3 * np.arange(k)
    v /= np.linalg.norm(v)
    radius = 0.0
    for _ in range(iterations):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        w /= norm
        if abs(norm - radius) <= tol * max(1.0, abs(norm)):
            return norm
        radius = norm
        v = w
    return radius


def steady_state_gains(mm: MeanMatrices) -> SteadyStateGains:
    """Closed-form steady-state response ``F (I - A)^{-1} B + G``.

    Requires the mean transition matrix to have spectral radius strictly
    below one.  For the illiquid layout the result is diagonal across assets,
    so the gains are returned as per-asset vectors.
    """
    if mm.layout != "illiquid":
        raise ValueError("steady-state gains are defined for the illiquid layout")
    rho = spectral_radius(mm.A)
    if rho >= 1.0:
        raise NonConvergentSystemError(
            f"mean system does not converge (spectral radius {rho:.6f} >= 1)"
        )
    n = mm.n_ill
    M = mm.F @ np.linalg.solve(np.eye(2 * n) - mm.A, mm.B) + mm.G
    return SteadyStateGains(
        alpha_I=np.diag(M[0:n, :]),
        alpha_K=np.diag(M[n:2 * n, :]),
        alpha_C=np.diag(M[2 * n:3 * n, :]),
        alpha_D=np.diag(M[3 * n:4 * n, :]),
    )


def output_components(n_ill: int) -> dict[str, slice]:
    """Column slices of the illiquid-layout output vector (I, K, C, D)."""
    return {
        "I": slice(0, n_ill),
        "K": slice(n_ill, 2 * n_ill),
        "C": slice(2 * n_ill, 3 * n_ill),
        "D": slice(3 * n_ill, 4 * n_ill),
    }
