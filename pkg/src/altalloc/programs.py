"""Builders for the planning problems, plus tracking-error metrics.

All builders are pure functions returning a :class:`~altalloc.conic.ConicProgram`.
Maximization problems are encoded by negating the objective, so every program
is a minimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import ConicProgram, ProgramBuilder, normal_quantile, psd_sqrt
from .dynamics import MeanMatrices
from .errors import NonConvexProblemError

RISK_HARD = "hard-constraint"
RISK_PENALIZED = "penalized"


@dataclass(frozen=True)
class MpcConfig:
    """Parameters of the full receding-horizon planning problem."""

    H: int
    gamma: float = 0.97
    sigma: float = 0.15
    epsilon_ins: float = 0.02
    lambda_risk: float = 10.0
    lambda_smooth: float = 0.1
    lambda_cash: float = 1000.0
    n_lim: float | None = None
    risk_mode: str = RISK_PENALIZED

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("planning horizon must be at least 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if self.sigma < 0.0:
            raise ValueError("risk tolerance must be nonnegative")
        if not 0.0 < self.epsilon_ins <= 0.5:
            raise NonConvexProblemError(
                "insolvency probability bound must lie in (0, 1/2]; larger values "
                "make the chance constraint non-convex"
            )
        for name in ("lambda_risk", "lambda_smooth", "lambda_cash"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.n_lim is not None and self.n_lim <= 0.0:
            raise ValueError("commitment cap must be positive when given")
        if self.risk_mode not in (RISK_HARD, RISK_PENALIZED):
            raise ValueError(f"unknown risk mode {self.risk_mode!r}")


def _dense_triplets(M: np.ndarray, row_idx: np.ndarray, col_idx: np.ndarray):
    """Triplets of a small dense block placed at given absolute rows/cols."""
    r, c = np.nonzero(M)
    return row_idx[r], col_idx[c], M[r, c]


def _commitment_qp(
    mm: MeanMatrices,
    x0: np.ndarray,
    T: int,
    I_targ: float,
    gamma_smooth: float,
    n_lim: float | None,
) -> ConicProgram:
    if mm.layout != "illiquid":
        raise ValueError("commitment planning uses the illiquid-layout mean system")
    if T < 2:
        raise ValueError("planning horizon must be at least 2")
    if I_targ < 0:
        raise ValueError("illiquid wealth target must be nonnegative")
    if gamma_smooth < 0:
        raise ValueError("smoothing weight must be nonnegative")
    n = mm.n_ill
    nx = 2 * n
    b = ProgramBuilder()
    n_idx = b.new_vars("n", T * n).reshape(T, n)
    x_idx = b.new_vars("x", (T + 1) * nx).reshape(T + 1, nx)
    b.add_nonneg(n_idx.ravel())
    if n_lim is not None:
        # upper bound via slack: n + cap = n_lim, cap >= 0
        cap_idx = b.new_vars("n_cap", T * n).reshape(T, n)
        b.add_nonneg(cap_idx.ravel())
        k = T * n
        b.add_eq(np.concatenate([np.arange(k), np.arange(k)]),
                 np.concatenate([n_idx.ravel(), cap_idx.ravel()]),
                 np.ones(2 * k), np.full(k, float(n_lim)))

    # initial condition
    b.add_eq(np.arange(nx), x_idx[0], np.ones(nx), np.asarray(x0, dtype=float))
    # dynamics x_{t+1} = A x_t + B n_t
    for t in range(T):
        rows = [np.arange(nx)]
        cols = [x_idx[t + 1]]
        vals = [np.ones(nx)]
        for M, cidx in ((mm.A, x_idx[t]), (mm.B, n_idx[t])):
            r, c, v = _dense_triplets(M, np.arange(nx), cidx)
            rows.append(r)
            cols.append(c)
            vals.append(-v)
        b.add_eq(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), np.zeros(nx))

    # tracking term: mean((I_t - I_targ)^2) over all T+1 planned states
    k = (T + 1) * n
    i_coords = x_idx[:, :n].ravel()
    b.add_quad(1.0 / (T + 1), np.arange(k), i_coords, np.ones(k), k,
               np.full(k, float(I_targ)), label="tracking")
    # smoothing term over consecutive planned commitments
    if gamma_smooth > 0 and T >= 2:
        kd = (T - 1) * n
        rows = np.concatenate([np.arange(kd), np.arange(kd)])
        cols = np.concatenate([n_idx[1:].ravel(), n_idx[:-1].ravel()])
        vals = np.concatenate([np.ones(kd), -np.ones(kd)])
        b.add_quad(gamma_smooth / (T - 1), rows, cols, vals, kd, np.zeros(kd), label="smoothing")
    return b.build()


def build_open_loop_qp(
    mm: MeanMatrices, T: int, I_targ: float, gamma_smooth: float, n_lim: float | None
) -> ConicProgram:
    """Commitment plan from zero state under the mean dynamics.

    Minimizes mean-square tracking of the illiquid wealth target over T+1
    planned states plus a mean-square commitment smoothing penalty, subject
    to the mean dynamics and the per-period commitment cap.
    """
    return _commitment_qp(mm, np.zeros(2 * mm.n_ill), T, I_targ, gamma_smooth, n_lim)


def build_commitment_mpc_qp(
    mm: MeanMatrices,
    x_now,
    H: int,
    I_targ: float,
    gamma_smooth: float,
    n_lim: float | None,
) -> ConicProgram:
    """Same structure as the open-loop plan, but re-anchored at the realized
    state, closing the feedback loop."""
    x0 = x_now.as_vector() if hasattr(x_now, "as_vector") else np.asarray(x_now, dtype=float)
    return _commitment_qp(mm, x0, H, I_targ, gamma_smooth, n_lim)


def extract_plan(result, T: int, n_ill: int) -> np.ndarray:
    """Planned commitments (T, n_ill) from a commitment-QP solve result."""
    return result.value("n").reshape(T, n_ill)


def build_markowitz(mu: np.ndarray, Sigma: np.ndarray, sigma: float) -> ConicProgram:
    """One-period risk-constrained allocation problem.

    maximize mu.w  subject to  sum(w) = 1, w >= 0, ||Sigma^(1/2) w|| <= sigma.
    """
    mu = np.asarray(mu, dtype=float)
    if sigma < 0:
        raise ValueError("risk bound must be nonnegative")
    S = psd_sqrt(Sigma)
    k = len(mu)
    b = ProgramBuilder()
    w_idx = b.new_vars("w", k)
    b.add_cost(w_idx, -mu)
    b.add_nonneg(w_idx)
    b.add_eq(np.zeros(k, dtype=int), w_idx, np.ones(k), [1.0])
    vr, vc, vv = _dense_triplets(S, np.arange(k), w_idx)
    b.add_soc([w_idx[0]], [0.0], float(sigma), vr, vc, vv, k, np.zeros(k), label="risk")
    return b.build()


def build_full_mpc(
    mm: MeanMatrices,
    x_now,
    cfg: MpcConfig,
    mu_liq: np.ndarray,
    Sigma_liq: np.ndarray,
    Sigma_joint: np.ndarray,
    lambda0_mean: np.ndarray,
    lambda1_mean: np.ndarray,
) -> ConicProgram:
    """Full receding-horizon allocation/commitment planning problem.

    Maximizes discounted total wealth minus an outside-cash penalty and a
    discounted commitment smoothing penalty, subject to the mean dynamics,
    the budget identity, per-stage homogeneous risk (hard cone or penalized
    with one nonnegative slack per stage), and the per-stage insolvency
    chance constraint in second-order-cone form.  ``Sigma_joint`` is the
    gross-return covariance over (liquid, illiquid) exposure; ``mu_liq`` and
    ``Sigma_liq`` are the gross liquid-return mean and covariance used by the
    insolvency constraint.
    """
    if mm.layout != "joint":
        raise ValueError("full planning uses the joint-layout mean system")
    if not 0.0 < cfg.epsilon_ins <= 0.5:
        raise NonConvexProblemError("insolvency probability bound must lie in (0, 1/2]")
    n = mm.n_ill
    m = mm.n_liq
    nx = 1 + 2 * n
    H = cfg.H
    x0 = x_now.as_vector() if hasattr(x_now, "as_vector") else np.asarray(x_now, dtype=float)
    mu_liq = np.asarray(mu_liq, dtype=float)
    lam0 = np.asarray(lambda0_mean, dtype=float)
    lam1 = np.asarray(lambda1_mean, dtype=float)
    S_joint = psd_sqrt(Sigma_joint)
    S_liq = psd_sqrt(Sigma_liq)
    quantile_scale = -normal_quantile(cfg.epsilon_ins)  # 0 exactly at eps = 1/2
    discounts = cfg.gamma ** np.arange(H + 1)

    b = ProgramBuilder()
    x_idx = b.new_vars("x", (H + 2) * nx).reshape(H + 2, nx)
    h_idx = b.new_vars("h", (H + 1) * m).reshape(H + 1, m)
    n_idx = b.new_vars("n", (H + 1) * n).reshape(H + 1, n)
    s_idx = b.new_vars("s", H + 1)
    slack_idx = None
    if cfg.risk_mode == RISK_PENALIZED:
        slack_idx = b.new_vars("risk_slack", H + 1)
        b.add_nonneg(slack_idx)
        b.add_cost(slack_idx, cfg.lambda_risk * discounts)
    b.add_nonneg(h_idx.ravel())
    b.add_nonneg(n_idx.ravel())
    b.add_nonneg(s_idx)
    b.add_nonneg(x_idx[:, 0])  # planned liquid wealth stays nonnegative

    # discounted wealth objective (maximize -> negate)
    b.add_cost(x_idx[: H + 1, 0], -discounts)
    for i in range(n):
        b.add_cost(x_idx[: H + 1, 1 + i], -discounts)
    b.add_cost(s_idx, cfg.lambda_cash * discounts)

    if cfg.n_lim is not None:
        cap_idx = b.new_vars("n_cap", (H + 1) * n).reshape(H + 1, n)
        b.add_nonneg(cap_idx.ravel())
        k = (H + 1) * n
        b.add_eq(np.concatenate([np.arange(k), np.arange(k)]),
                 np.concatenate([n_idx.ravel(), cap_idx.ravel()]),
                 np.ones(2 * k), np.full(k, float(cfg.n_lim)))

    # initial condition and dynamics
    b.add_eq(np.arange(nx), x_idx[0], np.ones(nx), x0)
    a_r, a_c, a_v = np.nonzero(mm.A)[0], np.nonzero(mm.A)[1], mm.A[np.nonzero(mm.A)]
    b_r, b_c, b_v = np.nonzero(mm.B)[0], np.nonzero(mm.B)[1], mm.B[np.nonzero(mm.B)]
    for tau in range(H + 1):
        u_cols = np.concatenate([h_idx[tau], n_idx[tau], [s_idx[tau]]])
        rows = np.concatenate([np.arange(nx), a_r, b_r])
        cols = np.concatenate([x_idx[tau + 1], x_idx[tau][a_c], u_cols[b_c]])
        vals = np.concatenate([np.ones(nx), -a_v, -b_v])
        b.add_eq(rows, cols, vals, np.zeros(nx))
    # budget: sum(h_tau) = L_tau
    for tau in range(H + 1):
        b.add_eq_row(np.concatenate([h_idx[tau], [x_idx[tau, 0]]]),
                     np.concatenate([np.ones(m), [-1.0]]), 0.0)

    # smoothing penalty sum_tau gamma^tau ||n_{tau+1} - n_tau||^2
    if cfg.lambda_smooth > 0 and H >= 1:
        kd = H * n
        w = np.repeat(np.sqrt(discounts[:H]), n)
        rows = np.concatenate([np.arange(kd), np.arange(kd)])
        cols = np.concatenate([n_idx[1:].ravel(), n_idx[:-1].ravel()])
        vals = np.concatenate([w, -w])
        b.add_quad(cfg.lambda_smooth, rows, cols, vals, kd, np.zeros(kd), label="smoothing")

    k_y = m + n
    sj_r, sj_c = np.nonzero(S_joint)
    sj_v = S_joint[sj_r, sj_c]
    sl_r, sl_c = np.nonzero(S_liq)
    sl_v = S_liq[sl_r, sl_c]
    for tau in range(H + 1):
        y_cols = np.concatenate([h_idx[tau], x_idx[tau, 1:1 + n]])
        # per-stage risk: ||S_joint y|| <= sigma * sum(y) (+ slack in penalized mode)
        t_cols = y_cols
        t_vals = np.full(k_y, cfg.sigma)
        if slack_idx is not None:
            t_cols = np.concatenate([t_cols, [slack_idx[tau]]])
            t_vals = np.concatenate([t_vals, [1.0]])
        b.add_soc(t_cols, t_vals, 0.0, sj_r, y_cols[sj_c], sj_v, k_y,
                  np.zeros(k_y), label=f"risk[{tau}]")
        # insolvency: lam1.K + lam0.n - mu_liq.h <= Phi^-1(eps) ||S_liq h||
        t_cols = np.concatenate([h_idx[tau], x_idx[tau, 1 + n:], n_idx[tau]])
        t_vals = np.concatenate([mu_liq, -lam1, -lam0])
        b.add_soc(t_cols, t_vals, 0.0, sl_r, h_idx[tau][sl_c], quantile_scale * sl_v,
                  m, np.zeros(m), label=f"insolvency[{tau}]")
    return b.build()


def extract_first_control(result, n_liq: int, n_ill: int):
    """First-stage (h, n, s) from a full-planner solve result."""
    h = result.value("h")[:n_liq]
    n = result.value("n")[:n_ill]
    s = float(result.value("s")[0])
    return h, n, s


def delayed_rms(I_seq, I_targ: float, start: int) -> float:
    """Root-mean-square tracking error over periods start..end (1-indexed).

    Ignores the ramp-up before ``start`` so the error is comparable to the
    target level itself.
    """
    I_seq = np.atleast_1d(np.asarray(I_seq, dtype=float))
    if not 1 <= start <= len(I_seq):
        raise ValueError(f"start period {start} outside trajectory of length {len(I_seq)}")
    window = I_seq[start - 1:]
    return float(np.sqrt(np.mean((window - I_targ) ** 2)))


def mse_tracking(I_seq, I_targ: float) -> float:
    """Mean-square tracking error over the whole passed trajectory."""
    I_seq = np.atleast_1d(np.asarray(I_seq, dtype=float))
    if len(I_seq) == 0:
        raise ValueError("empty trajectory")
    return float(np.mean((I_seq - I_targ) ** 2))
