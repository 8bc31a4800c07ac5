"""Per-period decision policies sharing one observation/decision contract.

A policy is a pure map from :class:`PolicyObservation` to
:class:`ControlDecision`; it holds no cross-period state, so the same
instance can be evaluated concurrently across independent paths.  Anything a
policy needs from the past (for example the previously executed commitment,
used as a solver-failure fallback) travels inside the observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import conic
from .dynamics import JointState, MeanMatrices, SteadyStateGains
from .latent import _readonly
from .programs import (
    MpcConfig,
    build_commitment_mpc_qp,
    build_full_mpc,
    extract_first_control,
    extract_plan,
)


@dataclass(frozen=True)
class PolicyObservation:
    """What a policy may see: the period index (1-based), the current state,
    and optionally the previously executed commitment."""

    t: int
    state: object
    prev_n: np.ndarray | None = None


@dataclass(frozen=True)
class ControlDecision:
    """One period's control: liquid allocation h, new commitments n, outside
    cash s. All entries nonnegative; when liquid wealth is nonnegative the
    allocation satisfies the budget identity sum(h) = L."""

    h: np.ndarray
    n: np.ndarray
    s: float = 0.0
    note: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "h", _readonly(np.atleast_1d(self.h)))
        object.__setattr__(self, "n", _readonly(np.atleast_1d(self.n)))
        object.__setattr__(self, "s", float(self.s))
        if np.any(self.h < 0) or np.any(self.n < 0) or self.s < 0:
            raise ValueError("controls must be nonnegative")


@dataclass(frozen=True)
class TargetAllocation:
    """Weights over (liquid assets..., illiquid assets...), on the simplex."""

    theta: np.ndarray
    n_liq: int
    n_ill: int

    def __post_init__(self):
        theta = _readonly(np.atleast_1d(self.theta))
        object.__setattr__(self, "theta", theta)
        if theta.shape != (self.n_liq + self.n_ill,):
            raise ValueError("allocation length must be n_liq + n_ill")
        if np.any(theta < -1e-9) or abs(theta.sum() - 1.0) > 1e-9:
            raise ValueError("allocation must lie on the unit simplex (within 1e-9)")

    @property
    def liquid(self) -> np.ndarray:
        return self.theta[: self.n_liq]

    @property
    def illiquid(self) -> np.ndarray:
        return self.theta[self.n_liq:]


def _allocate_liquid(weights: np.ndarray, L: float, cash_index: int) -> np.ndarray:
    """L split proportionally to nonnegative weights; all-cash if weights vanish."""
    w = np.clip(weights, 0.0, None)
    total = w.sum()
    if total <= 0.0:
        h = np.zeros(len(w))
        if L > 0:
            h[cash_index] = L
        return h
    return L * (w / total)


def markowitz_rebalance(wealth: float, w_star: np.ndarray) -> np.ndarray:
    """Dollar allocations from rebalancing total wealth to target weights."""
    if wealth < 0:
        raise ValueError("wealth must be nonnegative")
    return wealth * np.asarray(w_star, dtype=float)


@dataclass(frozen=True)
class OpenLoopCommitmentPolicy:
    """Executes a precomputed commitment plan, ignoring the observation.

    Past the end of the plan the commitment is zero.  Liquid allocation and
    outside cash are unused (zero) in commitment-only experiments.
    """

    plan: np.ndarray  # (T, n_ill)
    n_liq: int = 0

    def __post_init__(self):
        object.__setattr__(self, "plan", _readonly(np.atleast_2d(self.plan)))

    @property
    def policy_id(self) -> str:
        return "open_loop"

    @property
    def n_ill(self) -> int:
        return self.plan.shape[1]

    def decide(self, obs: PolicyObservation) -> ControlDecision:
        if 1 <= obs.t <= len(self.plan):
            n = np.clip(self.plan[obs.t - 1], 0.0, None)
        else:
            n = np.zeros(self.n_ill)
        return ControlDecision(h=np.zeros(self.n_liq), n=n, s=0.0)


@dataclass(frozen=True)
class CommitmentMpcPolicy:
    """Re-plans the commitment QP at the realized state each period and
    executes only the first planned commitment.

    On solver failure the previously executed commitment is repeated (zero on
    the first period) and the decision carries a diagnostic note.
    """

    mm: MeanMatrices
    horizon: int
    I_targ: float
    gamma_smooth: float
    n_lim: float | None
    tol: float = conic.DEFAULT_TOL

    @property
    def policy_id(self) -> str:
        return "mpc_commitment"

    def decide(self, obs: PolicyObservation) -> ControlDecision:
        prog = build_commitment_mpc_qp(
            self.mm, obs.state, self.horizon, self.I_targ, self.gamma_smooth, self.n_lim
        )
        result = conic.solve(prog, tol=self.tol)
        n_liq = 0
        if result.ok:
            n = np.clip(extract_plan(result, self.horizon, self.mm.n_ill)[0], 0.0, None)
            if self.n_lim is not None:
                n = np.minimum(n, self.n_lim)
            return ControlDecision(h=np.zeros(n_liq), n=n, s=0.0)
        fallback = obs.prev_n if obs.prev_n is not None else np.zeros(self.mm.n_ill)
        return ControlDecision(
            h=np.zeros(n_liq), n=np.clip(fallback, 0.0, None), s=0.0,
            note=f"mpc-fallback:{result.status}",
        )


@dataclass(frozen=True)
class SteadyStateCommitmentPolicy:
    """Tracks a target allocation using the steady-state commitment gains.

    Liquid wealth is split proportionally to the liquid block of the target;
    commitments are the per-asset illiquid wealth targets divided by the
    steady-state wealth gain per dollar of constant commitment, optionally
    with a proportional feedback correction of strength ``kappa``.
    """

    target: TargetAllocation
    gains: SteadyStateGains
    kappa: float | None = None
    cash_index: int = 0

    @property
    def policy_id(self) -> str:
        return "steady_state"

    def decide(self, obs: PolicyObservation) -> ControlDecision:
        state: JointState = obs.state
        if state.L < 0:
            return ControlDecision(
                h=np.zeros(self.target.n_liq),
                n=np.zeros(self.target.n_ill),
                s=abs(state.L),
            )
        h = _allocate_liquid(self.target.liquid, state.L, self.cash_index)
        wealth = state.L + float(state.I.sum())
        I_targ = self.target.illiquid * wealth
        n = I_targ / self.gains.alpha_I
        if self.kappa is not None:
            n = n + self.kappa * (I_targ - state.I) / self.gains.alpha_I
        return ControlDecision(h=h, n=np.clip(n, 0.0, None), s=0.0)


@dataclass(frozen=True)
class FullMpcPolicy:
    """Solves the full receding-horizon planner and executes its first step.

    On any non-optimal solve the policy degrades to the steady-state policy
    (when one is attached) or to an all-liquid hold, and notes the failure.
    """

    mm: MeanMatrices
    cfg: MpcConfig
    mu_liq: np.ndarray
    Sigma_liq: np.ndarray
    Sigma_joint: np.ndarray
    lambda0_mean: np.ndarray
    lambda1_mean: np.ndarray
    fallback: SteadyStateCommitmentPolicy | None = None
    cash_index: int = 0
    tol: float = conic.DEFAULT_TOL

    @property
    def policy_id(self) -> str:
        return "full_mpc"

    def decide(self, obs: PolicyObservation) -> ControlDecision:
        state: JointState = obs.state
        prog = build_full_mpc(
            self.mm, state, self.cfg, self.mu_liq, self.Sigma_liq, self.Sigma_joint,
            self.lambda0_mean, self.lambda1_mean,
        )
        result = conic.solve(prog, tol=self.tol)
        if result.ok:
            h, n, s = extract_first_control(result, self.mm.n_liq, self.mm.n_ill)
            h = _allocate_liquid(h, max(state.L, 0.0), self.cash_index)
            n = np.clip(n, 0.0, None)
            if self.cfg.n_lim is not None:
                n = np.minimum(n, self.cfg.n_lim)
            return ControlDecision(h=h, n=n, s=max(s, 0.0))
        note = f"mpc-fallback:{result.status}"
        if self.fallback is not None:
            d = self.fallback.decide(obs)
            return ControlDecision(h=d.h, n=d.n, s=d.s, note=note)
        h = np.zeros(self.mm.n_liq)
        if state.L > 0:
            h = _allocate_liquid(np.ones(self.mm.n_liq), state.L, self.cash_index)
        return ControlDecision(h=h, n=np.zeros(self.mm.n_ill), s=0.0, note=note)


@dataclass(frozen=True)
class MarkowitzRebalancePolicy:
    """Rebalances total wealth to fixed target weights each period.

    Only meaningful under the relaxed dynamics where illiquid positions are
    directly tradeable; the simulator treats it as a single-wealth-state
    policy.
    """

    w_star: np.ndarray
    n_liq: int
    n_ill: int
    sigma_config: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "w_star", _readonly(np.atleast_1d(self.w_star)))

    @property
    def policy_id(self) -> str:
        return "relaxed_markowitz"

    def allocations(self, wealth: float) -> np.ndarray:
        return markowitz_rebalance(wealth, self.w_star)
