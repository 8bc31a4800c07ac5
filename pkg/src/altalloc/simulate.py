"""Seeded Monte Carlo simulation of portfolio trajectories.

Three worlds share one record format:

- "joint": liquid wealth plus illiquid positions, the full dynamics.  The
  harness (not the policy) guarantees nonnegative liquid wealth by injecting
  outside cash when a period ends below zero, and flags those periods.
- "commitment": illiquid-only experiments (no liquid side), driven by a
  commitment policy; used for tracking-error studies.
- "relaxed": the counterfactual where illiquid assets trade freely and total
  wealth is rebalanced to fixed weights each period; used as an unattainable
  benchmark.

Per path, all draws are sampled up front from a counter-based stream keyed on
(master_seed, path_index), so every policy evaluated under the same master
seed sees identical randomness (common random numbers) and results do not
depend on scheduling or worker count.  Every period follows the order:
observe state, decide control, sample outcome, settle calls/distributions/
returns, force an injection if needed.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import IlliquidState, JointState, step_illiquid
from .latent import LatentDistribution, draws_from_batch, sample_draw_batch
from .policies import MarkowitzRebalancePolicy, PolicyObservation
from .programs import delayed_rms, mse_tracking

ACCOUNTING_TOL = 1e-9
DEFAULT_DELAY_START = 5


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    """Independent counter-based stream for one path."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([int(master_seed), int(path_index)]))
    )


@dataclass
class TrajectoryRecord:
    """One simulated path. State arrays have T+1 rows, per-period arrays T."""

    kind: str
    policy_id: str
    master_seed: int
    path_index: int
    L: np.ndarray
    I: np.ndarray
    K: np.ndarray
    W: np.ndarray
    h: np.ndarray
    n: np.ndarray
    s_policy: np.ndarray
    s_forced: np.ndarray
    C: np.ndarray
    D: np.ndarray
    R_liq: np.ndarray
    R_ill: np.ndarray
    forced: np.ndarray
    notes: list = field(default_factory=list)
    violations: int = 0
    sigma_config: float | None = None

    @property
    def T(self) -> int:
        return self.h.shape[0]

    def returns(self) -> np.ndarray:
        """Per-period return of total wealth, with outside cash (policy plus
        forced) excluded from gains so injections do not masquerade as
        investment performance."""
        injected = self.s_policy + self.s_forced
        out = np.zeros(self.T)
        for t in range(self.T):
            if self.W[t] > 0:
                out[t] = (self.W[t + 1] - injected[t]) / self.W[t] - 1.0
        return out

    def check_accounting(self, tol: float = ACCOUNTING_TOL) -> int:
        """Count periods where the liquid-wealth update identity fails or a
        state is negative. Relaxed-world records have no such identity."""
        bad = 0
        if self.kind == "joint":
            for t in range(self.T):
                lhs = self.L[t + 1]
                rhs = (self.h[t] @ self.R_liq[t] - self.C[t].sum() + self.D[t].sum()
                       + self.s_policy[t] + self.s_forced[t])
                if abs(lhs - rhs) > tol * max(1.0, abs(self.W[t])):
                    bad += 1
        if np.any(self.L < -ACCOUNTING_TOL) or np.any(self.I < -ACCOUNTING_TOL) \
                or np.any(self.K < -ACCOUNTING_TOL):
            bad += 1
        return bad


@dataclass
class MetricsSummary:
    """Cross-path means and standard errors of per-path statistics."""

    policy_id: str
    n_paths: int
    horizon: int
    mean_return: float | None = None
    se_return: float | None = None
    mean_volatility: float | None = None
    se_volatility: float | None = None
    mse: float | None = None
    se_mse: float | None = None
    delayed_rms: float | None = None
    se_delayed_rms: float | None = None
    total_injected_mean: float = 0.0
    forced_frequency: float = 0.0
    accounting_violations: int = 0
    zero_wealth_periods: int = 0


@dataclass
class FrontierPoint:
    """One point of a risk-return frontier sweep."""

    sigma_config: float
    realized_volatility: float
    realized_return: float
    se_return: float
    se_volatility: float
    policy_id: str
    horizon: int
    n_paths: int


def simulate_trajectory(
    dist: LatentDistribution,
    policy,
    T: int,
    master_seed: int,
    path_index: int = 0,
    initial_state: JointState | None = None,
) -> TrajectoryRecord:
    """Simulate one joint liquid/illiquid path under a policy."""
    if T < 1:
        raise ValueError("horizon must be at least 1")
    n, m = dist.n_ill, dist.n_liq
    state = initial_state if initial_state is not None else JointState.start(1.0, n)
    rng = path_rng(master_seed, path_index)
    batch = sample_draw_batch(dist, rng, T)

    rec = TrajectoryRecord(
        kind="joint", policy_id=policy.policy_id, master_seed=master_seed,
        path_index=path_index,
        L=np.zeros(T + 1), I=np.zeros((T + 1, n)), K=np.zeros((T + 1, n)),
        W=np.zeros(T + 1), h=np.zeros((T, m)), n=np.zeros((T, n)),
        s_policy=np.zeros(T), s_forced=np.zeros(T),
        C=np.zeros((T, n)), D=np.zeros((T, n)),
        R_liq=np.zeros((T, m)), R_ill=np.zeros((T, n)),
        forced=np.zeros(T, dtype=bool),
        sigma_config=getattr(policy, "sigma_config", None),
    )
    rec.L[0], rec.I[0], rec.K[0] = state.L, state.I, state.K
    rec.W[0] = state.total_wealth
    prev_n = None
    for t in range(T):
        obs = PolicyObservation(t=t + 1, state=state, prev_n=prev_n)
        try:
            decision = policy.decide(obs)
        except Exception as exc:
            raise RuntimeError(
                f"policy {policy.policy_id!r} failed at period {t + 1} "
                f"(path {path_index}): {exc}"
            ) from exc
        if decision.note:
            rec.notes.append((t + 1, decision.note))
        if abs(decision.h.sum() - max(state.L, 0.0)) > ACCOUNTING_TOL * max(1.0, state.total_wealth):
            rec.violations += 1
        draw = draws_from_batch(batch, t)
        ill_next, C, D = step_illiquid(state.illiquid, decision.n, draw)
        L_next = (float(decision.h @ draw.R_liq) - float(C.sum()) + float(D.sum())
                  + decision.s)
        forced = 0.0
        if L_next < 0.0:
            forced = -L_next
            L_next = 0.0
            rec.forced[t] = True
        state = JointState(L=L_next, illiquid=ill_next)
        rec.h[t], rec.n[t] = decision.h, decision.n
        rec.s_policy[t], rec.s_forced[t] = decision.s, forced
        rec.C[t], rec.D[t] = C, D
        rec.R_liq[t], rec.R_ill[t] = draw.R_liq, draw.R_ill
        rec.L[t + 1], rec.I[t + 1], rec.K[t + 1] = state.L, state.I, state.K
        rec.W[t + 1] = state.total_wealth
        prev_n = decision.n
    rec.violations += rec.check_accounting()
    return rec


def simulate_commitment_trajectory(
    dist: LatentDistribution,
    policy,
    T: int,
    master_seed: int,
    path_index: int = 0,
    initial_state: IlliquidState | None = None,
) -> TrajectoryRecord:
    """Simulate one illiquid-only path (commitment experiments)."""
    if T < 1:
        raise ValueError("horizon must be at least 1")
    n = dist.n_ill
    state = initial_state if initial_state is not None else IlliquidState.zero(n)
    rng = path_rng(master_seed, path_index)
    batch = sample_draw_batch(dist, rng, T)

    rec = TrajectoryRecord(
        kind="commitment", policy_id=policy.policy_id, master_seed=master_seed,
        path_index=path_index,
        L=np.zeros(T + 1), I=np.zeros((T + 1, n)), K=np.zeros((T + 1, n)),
        W=np.zeros(T + 1), h=np.zeros((T, 0)), n=np.zeros((T, n)),
        s_policy=np.zeros(T), s_forced=np.zeros(T),
        C=np.zeros((T, n)), D=np.zeros((T, n)),
        R_liq=np.zeros((T, 0)), R_ill=np.zeros((T, n)),
        forced=np.zeros(T, dtype=bool),
    )
    rec.I[0], rec.K[0] = state.I, state.K
    rec.W[0] = state.I.sum()
    prev_n = None
    for t in range(T):
        obs = PolicyObservation(t=t + 1, state=state, prev_n=prev_n)
        decision = policy.decide(obs)
        if decision.note:
            rec.notes.append((t + 1, decision.note))
        draw = draws_from_batch(batch, t)
        state, C, D = step_illiquid(state, decision.n, draw)
        rec.n[t], rec.C[t], rec.D[t], rec.R_ill[t] = decision.n, C, D, draw.R_ill
        rec.I[t + 1], rec.K[t + 1] = state.I, state.K
        rec.W[t + 1] = state.I.sum()
        prev_n = decision.n
    return rec


def simulate_relaxed_trajectory(
    dist: LatentDistribution,
    policy: MarkowitzRebalancePolicy,
    T: int,
    master_seed: int,
    path_index: int = 0,
    initial_wealth: float = 1.0,
) -> TrajectoryRecord:
    """Simulate the relaxed world: wealth rebalanced to fixed weights each
    period, consuming the same draw stream as the joint world."""
    if T < 1:
        raise ValueError("horizon must be at least 1")
    n, m = dist.n_ill, dist.n_liq
    rng = path_rng(master_seed, path_index)
    lam1, lam0, delta, r_ill, r_liq = sample_draw_batch(dist, rng, T)
    w = policy.w_star
    w_liq, w_ill = w[:m], w[m:]
    W = np.zeros(T + 1)
    W[0] = initial_wealth
    for t in range(T):
        W[t + 1] = W[t] * (w_liq @ r_liq[t] + w_ill @ r_ill[t])
    rec = TrajectoryRecord(
        kind="relaxed", policy_id=policy.policy_id, master_seed=master_seed,
        path_index=path_index,
        L=W * w_liq.sum(), I=np.outer(W, w_ill), K=np.zeros((T + 1, n)),
        W=W, h=np.outer(W[:T], w_liq), n=np.zeros((T, n)),
        s_policy=np.zeros(T), s_forced=np.zeros(T),
        C=np.zeros((T, n)), D=np.zeros((T, n)),
        R_liq=r_liq, R_ill=r_ill, forced=np.zeros(T, dtype=bool),
        sigma_config=policy.sigma_config,
    )
    return rec


def infer_world(dist: LatentDistribution, policy) -> str:
    if isinstance(policy, MarkowitzRebalancePolicy):
        return "relaxed"
    return "commitment" if dist.n_liq == 0 else "joint"


def _simulate_one(dist, policy, T, master_seed, path_index, world, initial):
    if world == "joint":
        return simulate_trajectory(dist, policy, T, master_seed, path_index, initial)
    if world == "commitment":
        return simulate_commitment_trajectory(dist, policy, T, master_seed, path_index, initial)
    if world == "relaxed":
        if initial is None:
            w0 = 1.0
        elif hasattr(initial, "total_wealth"):
            w0 = initial.total_wealth  # matched start against the joint world
        else:
            w0 = float(initial)
        return simulate_relaxed_trajectory(dist, policy, T, master_seed, path_index, w0)
    raise ValueError(f"unknown world {world!r}")


_WORKER_CTX: dict = {}


def _worker_init(dist, policy, T, master_seed, world, initial):
    _WORKER_CTX.update(dist=dist, policy=policy, T=T, master_seed=master_seed,
                       world=world, initial=initial)


def _worker_run(path_index: int):
    c = _WORKER_CTX
    return _simulate_one(c["dist"], c["policy"], c["T"], c["master_seed"],
                         path_index, c["world"], c["initial"])


def run_paths(
    dist: LatentDistribution,
    policy,
    T: int,
    n_paths: int,
    master_seed: int,
    world: str | None = None,
    initial=None,
    workers: int = 1,
) -> list[TrajectoryRecord]:
    """Simulate ``n_paths`` independent paths.

    Path ``p`` always uses the stream keyed on (master_seed, p) and results
    are gathered in path order, so the output is identical for any worker
    count.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    if world is None:
        world = infer_world(dist, policy)
    if workers <= 1 or n_paths == 1:
        return [_simulate_one(dist, policy, T, master_seed, p, world, initial)
                for p in range(n_paths)]
    with ProcessPoolExecutor(
        max_workers=workers,
        initializer=_worker_init,
        initargs=(dist, policy, T, master_seed, world, initial),
    ) as pool:
        return list(pool.map(_worker_run, range(n_paths), chunksize=max(1, n_paths // (4 * workers))))


def summarize(
    records: list[TrajectoryRecord],
    I_targ: float | None = None,
    delay_start: int = DEFAULT_DELAY_START,
) -> MetricsSummary:
    """Aggregate per-path statistics into means and standard errors.

    Volatility is the per-path time-series standard deviation of per-period
    returns, averaged across paths.  Tracking metrics are computed against
    ``I_targ`` on total illiquid wealth: the mean-square error uses all T+1
    states, the delayed RMS uses periods ``delay_start``..T.
    """
    if not records:
        raise ValueError("no records to summarize")
    P = len(records)
    T = records[0].T
    first = records[0]
    out = MetricsSummary(policy_id=first.policy_id, n_paths=P, horizon=T)

    def mean_se(values):
        values = np.asarray(values, dtype=float)
        se = values.std(ddof=1) / np.sqrt(P) if P > 1 else 0.0
        return float(values.mean()), float(se)

    if first.kind != "commitment":
        rets = np.array([r.returns() for r in records])
        out.mean_return, out.se_return = mean_se(rets.mean(axis=1))
        vols = rets.std(axis=1, ddof=1) if T > 1 else np.zeros(P)
        out.mean_volatility, out.se_volatility = mean_se(vols)
        out.zero_wealth_periods = int(sum((r.W[:-1] <= 0).sum() for r in records))
    if I_targ is not None:
        totals = [r.I.sum(axis=1) for r in records]
        out.mse, out.se_mse = mean_se([mse_tracking(ti, I_targ) for ti in totals])
        out.delayed_rms, out.se_delayed_rms = mean_se(
            [delayed_rms(ti[:T], I_targ, delay_start) for ti in totals]
        )
    out.total_injected_mean, _ = mean_se(
        [r.s_policy.sum() + r.s_forced.sum() for r in records]
    )
    out.forced_frequency = float(sum(r.forced.sum() for r in records)) / (P * T)
    out.accounting_violations = int(sum(r.violations for r in records))
    return out


def run_monte_carlo(
    dist: LatentDistribution,
    policy,
    T: int,
    n_paths: int,
    master_seed: int,
    I_targ: float | None = None,
    delay_start: int = DEFAULT_DELAY_START,
    world: str | None = None,
    initial=None,
    workers: int = 1,
) -> MetricsSummary:
    """Matched-seed Monte Carlo evaluation of one policy."""
    records = run_paths(dist, policy, T, n_paths, master_seed,
                        world=world, initial=initial, workers=workers)
    return summarize(records, I_targ=I_targ, delay_start=delay_start)


def frontier_sweep(
    dist: LatentDistribution,
    policy_family,
    sigma_grid,
    T: int,
    n_paths: int,
    master_seed: int,
    initial=None,
    workers: int = 1,
    on_records=None,
) -> tuple[list[FrontierPoint], list[tuple[float, str]]]:
    """Evaluate a sigma-indexed policy family along a risk-tolerance grid.

    ``policy_family(sigma)`` builds the policy for one grid point; builds
    that raise or return None are recorded as failures and the sweep
    continues.  Every grid point uses the same master seed, so the points are
    matched-seed comparable.  ``on_records(sigma, records)``, when given, is
    called with each grid point's raw paths.  Returns (points, failures).
    """
    sigma_grid = list(sigma_grid)
    if not sigma_grid:
        raise ValueError("empty risk-tolerance grid")
    points: list[FrontierPoint] = []
    failures: list[tuple[float, str]] = []
    for sigma in sigma_grid:
        try:
            policy = policy_family(float(sigma))
        except Exception as exc:
            failures.append((float(sigma), str(exc)))
            continue
        if policy is None:
            failures.append((float(sigma), "policy build returned nothing"))
            continue
        records = run_paths(dist, policy, T, n_paths, master_seed,
                            initial=initial, workers=workers)
        if on_records is not None:
            on_records(float(sigma), records)
        summary = summarize(records)
        points.append(FrontierPoint(
            sigma_config=float(sigma),
            realized_volatility=summary.mean_volatility,
            realized_return=summary.mean_return,
            se_return=summary.se_return,
            se_volatility=summary.se_volatility,
            policy_id=summary.policy_id,
            horizon=T,
            n_paths=n_paths,
        ))
    return points, failures


def allocation_trace(records: list[TrajectoryRecord]) -> tuple[np.ndarray, int]:
    """Mean allocation weights per period across paths.

    Weights at period t are (h_t, I_t) / W_t, which sum to one whenever the
    budget identity holds.  Periods with nonpositive wealth are excluded; the
    count of exclusions is returned alongside the (T, n_liq + n_ill) trace.
    """
    if not records:
        raise ValueError("no records")
    T = records[0].T
    m = records[0].h.shape[1]
    n = records[0].I.shape[1]
    sums = np.zeros((T, m + n))
    counts = np.zeros(T)
    skipped = 0
    for r in records:
        for t in range(T):
            w_t = r.W[t]
            if w_t <= 0:
                skipped += 1
                continue
            sums[t, :m] += r.h[t] / w_t
            sums[t, m:] += r.I[t] / w_t
            counts[t] += 1
    if np.any(counts == 0):
        warnings.warn("some periods had no positive-wealth paths; weights set to 0")
        counts = np.maximum(counts, 1.0)
    return sums / counts[:, None], skipped
