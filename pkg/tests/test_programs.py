import numpy as np
import pytest

from altalloc import conic
from altalloc.conic import psd_sqrt, solve
from altalloc.dynamics import IlliquidState, JointState
from altalloc.errors import NonConvexProblemError
from altalloc.programs import (
    MpcConfig,
    build_commitment_mpc_qp,
    build_full_mpc,
    build_markowitz,
    build_open_loop_qp,
    delayed_rms,
    extract_first_control,
    extract_plan,
    mse_tracking,
)


def markowitz_grid_oracle(mu, Sigma, sigma, step=0.005):
    """Brute-force maximum of mu.w over the 3-asset simplex grid inside the
    risk ball; independent of the conic route."""
    grid = np.arange(0.0, 1.0 + step / 2, step)
    w1, w2 = np.meshgrid(grid, grid, indexing="ij")
    w3 = 1.0 - w1 - w2
    keep = w3 >= -1e-12
    W = np.stack([w1[keep], w2[keep], np.clip(w3[keep], 0.0, None)], axis=1)
    risk = np.sqrt(np.einsum("ij,jk,ik->i", W, Sigma, W))
    feasible = risk <= sigma + 1e-12
    if not feasible.any():
        return None
    vals = W[feasible] @ mu
    return float(vals.max())


def random_markowitz_instance(rng):
    # gross returns within 10% of flat: the 0.005 weight grid then resolves
    # the objective to well under the 1e-3 agreement bound
    mu = rng.uniform(1.0, 1.1, 3)
    M = rng.normal(size=(3, 3)) * 0.2
    Sigma = M @ M.T
    # anchor sigma to a grid-feasible point so the oracle is nonempty
    grid_min = None
    step = 0.005
    grid = np.arange(0.0, 1.0 + step / 2, step)
    w1, w2 = np.meshgrid(grid, grid, indexing="ij")
    w3 = 1.0 - w1 - w2
    keep = w3 >= -1e-12
    W = np.stack([w1[keep], w2[keep], np.clip(w3[keep], 0.0, None)], axis=1)
    risk = np.sqrt(np.einsum("ij,jk,ik->i", W, Sigma, W))
    grid_min = risk.min()
    sigma = grid_min * (1.0 + rng.uniform(0.1, 1.0))
    return mu, Sigma, sigma


class TestMarkowitz:
    def test_slack_risk_constraint_gives_vertex(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            mu = rng.uniform(0.9, 1.4, 4)
            M = rng.normal(size=(4, 4)) * 0.1
            Sigma = M @ M.T
            result = solve(build_markowitz(mu, Sigma, sigma=10.0))
            assert result.ok
            w = result.value("w")
            j = int(np.argmax(mu))
            assert w[j] == pytest.approx(1.0, abs=1e-6)
            # argmax invariance under positive rescaling of mu
            result2 = solve(build_markowitz(3.0 * mu, Sigma, sigma=10.0))
            assert int(np.argmax(result2.value("w"))) == j

    def test_zero_risk_with_riskless_asset(self, joint_dist):
        mu_g, sigma_g = joint_dist.gross_return_moments()
        result = solve(build_markowitz(mu_g, sigma_g, sigma=0.0))
        assert result.ok
        w = result.value("w")
        assert w[0] == pytest.approx(1.0, abs=1e-5)  # cash is the first liquid asset
        assert result.objective == pytest.approx(-1.0, abs=1e-6)

    def test_grid_oracle_agreement(self):
        rng = np.random.default_rng(1234)
        for _ in range(20):
            mu, Sigma, sigma = random_markowitz_instance(rng)
            grid_best = markowitz_grid_oracle(mu, Sigma, sigma)
            result = solve(build_markowitz(mu, Sigma, sigma))
            assert result.ok
            solver_best = -result.objective
            # the solver may sit a solver-tolerance below the true optimum
            assert solver_best >= grid_best - 1e-6
            assert solver_best - grid_best <= 1e-3

    def test_frontier_monotone_and_concave(self, joint_dist):
        mu_g, sigma_g = joint_dist.gross_return_moments()
        sigmas = np.linspace(0.0, 0.3, 30)
        values = []
        for s in sigmas:
            result = solve(build_markowitz(mu_g, sigma_g, s))
            assert result.ok
            values.append(-result.objective)
        values = np.array(values)
        assert np.all(np.diff(values) >= -1e-7)
        # value function of a growing feasible set is concave in sigma
        second = np.diff(values, 2)
        assert np.all(second <= 1e-6)

    def test_infeasible_when_sigma_below_minimum_risk(self):
        Sigma = np.eye(2) * 0.04
        result = solve(build_markowitz(np.array([1.1, 1.2]), Sigma, sigma=0.01))
        assert result.status == "infeasible"


class TestCommitmentQp:
    def test_zero_target_zero_plan(self, mm_single):
        result = solve(build_open_loop_qp(mm_single, 10, 0.0, 1.0, 0.5))
        assert result.ok
        # the objective is flat near zero, so the argument is looser than it
        assert np.allclose(extract_plan(result, 10, 1), 0.0, atol=1e-3)
        assert result.objective == pytest.approx(0.0, abs=1e-8)

    def test_reference_instance_shape(self, mm_single, gains_single):
        T = 20
        result = solve(build_open_loop_qp(mm_single, T, 1.0, 1.0, 0.5))
        assert result.ok
        plan = extract_plan(result, T, 1).ravel()
        assert plan[0] == pytest.approx(0.5, abs=1e-6)
        assert plan[1] == pytest.approx(0.5, abs=1e-6)
        assert abs(plan[-1] - 1.0 / gains_single.alpha_I[0]) < 0.03
        assert np.all(plan <= 0.5 + 1e-9)

    def test_mpc_from_zero_state_equals_open_loop(self, mm_single):
        T = 12
        open_prog = build_open_loop_qp(mm_single, T, 1.0, 1.0, 0.5)
        mpc_prog = build_commitment_mpc_qp(mm_single, IlliquidState.zero(1), T, 1.0, 1.0, 0.5)
        r1, r2 = solve(open_prog), solve(mpc_prog)
        assert np.allclose(extract_plan(r1, T, 1), extract_plan(r2, T, 1), atol=1e-7)

    def test_commitment_drops_when_ahead_of_target(self, mm_single):
        T = 20
        open_first = extract_plan(solve(build_open_loop_qp(mm_single, T, 1.0, 1.0, 0.5)),
                                  T, 1)[0, 0]
        rich = IlliquidState(I=np.array([1.5]), K=np.array([1.0]))
        mpc_first = extract_plan(
            solve(build_commitment_mpc_qp(mm_single, rich, T, 1.0, 1.0, 0.5)), T, 1
        )[0, 0]
        assert mpc_first < open_first - 1e-6

    def test_requires_two_periods(self, mm_single):
        with pytest.raises(ValueError):
            build_open_loop_qp(mm_single, 1, 1.0, 1.0, 0.5)


def default_cfg(**kw):
    base = dict(H=8, gamma=0.97, sigma=0.2, epsilon_ins=0.02, lambda_risk=10.0,
                lambda_smooth=0.1, lambda_cash=1000.0, n_lim=None,
                risk_mode="penalized")
    base.update(kw)
    return MpcConfig(**base)


@pytest.fixture(scope="module")
def joint_inputs(joint_dist, mm_joint):
    mu_g, sigma_g = joint_dist.gross_return_moments()
    mu_l, sigma_l = joint_dist.liquid_return_moments()
    return dict(mm=mm_joint, mu_liq=mu_l, Sigma_liq=sigma_l, Sigma_joint=sigma_g,
                lambda0_mean=mm_joint.lambda0_mean, lambda1_mean=mm_joint.lambda1_mean)


class TestFullMpc:
    def test_nonconvex_epsilon_refused(self):
        with pytest.raises(NonConvexProblemError):
            default_cfg(epsilon_ins=0.6)

    def test_insolvency_linear_at_half(self, joint_inputs):
        cfg = default_cfg(epsilon_ins=0.5, risk_mode="hard-constraint")
        prog = build_full_mpc(x_now=JointState.start(1.0, 1), cfg=cfg, **joint_inputs)
        ins_blocks = [b for b in prog.soc_blocks if b.label.startswith("insolvency")]
        assert len(ins_blocks) == cfg.H + 1
        for blk in ins_blocks:
            assert np.all(blk.v_vals == 0.0)  # cone coefficient is exactly zero
            assert np.any(blk.t_vals != 0.0)

    def test_insolvency_cone_active_below_half(self, joint_inputs):
        prog = build_full_mpc(x_now=JointState.start(1.0, 1),
                              cfg=default_cfg(epsilon_ins=0.02), **joint_inputs)
        ins_blocks = [b for b in prog.soc_blocks if b.label.startswith("insolvency")]
        assert all(np.any(b.v_vals != 0.0) for b in ins_blocks)

    def test_feasible_from_generic_states(self, joint_inputs):
        rng = np.random.default_rng(3)
        for _ in range(5):
            state = JointState(L=rng.uniform(1.0, 3.0),
                               illiquid=IlliquidState(I=rng.uniform(0, 1, 1),
                                                      K=rng.uniform(0, 1, 1)))
            result = solve(build_full_mpc(x_now=state, cfg=default_cfg(), **joint_inputs))
            assert result.ok

    def test_degenerate_reduces_to_linear_program(self, joint_inputs):
        # risk slack and a median insolvency bound: solution matches the plain
        # LP obtained by dropping every cone block with nonzero coefficients
        cfg = default_cfg(epsilon_ins=0.5, sigma=10.0, lambda_smooth=0.0,
                          risk_mode="hard-constraint")
        state = JointState.start(1.0, 1)
        prog = build_full_mpc(x_now=state, cfg=cfg, **joint_inputs)
        full = solve(prog)
        import dataclasses

        lp = dataclasses.replace(
            prog,
            soc_blocks=[b for b in prog.soc_blocks if b.label.startswith("insolvency")],
        )
        lp_result = solve(lp)
        assert full.ok and lp_result.ok
        assert full.objective == pytest.approx(lp_result.objective, rel=1e-6, abs=1e-6)
        # all liquid wealth rides the best expected liquid return
        h0 = full.value("h")[:5]
        best = int(np.argmax(joint_inputs["mu_liq"]))
        assert h0[best] == pytest.approx(h0.sum(), rel=1e-4)

    def test_zero_state_zero_control(self, joint_inputs):
        cfg = default_cfg(risk_mode="hard-constraint")
        result = solve(build_full_mpc(x_now=JointState.start(0.0, 1), cfg=cfg,
                                      **joint_inputs))
        assert result.ok
        h, n, s = extract_first_control(result, 5, 1)
        assert np.allclose(h, 0.0, atol=1e-7)
        assert np.allclose(n, 0.0, atol=1e-7)
        assert s == pytest.approx(0.0, abs=1e-7)

    def test_positive_homogeneity_single_instance(self, joint_inputs):
        cfg = default_cfg(risk_mode="hard-constraint", lambda_smooth=0.0, sigma=0.25)
        base = JointState(L=2.0, illiquid=IlliquidState(I=np.array([0.5]),
                                                        K=np.array([0.4])))
        scaled = JointState(L=4.0, illiquid=IlliquidState(I=np.array([1.0]),
                                                          K=np.array([0.8])))
        r1 = solve(build_full_mpc(x_now=base, cfg=cfg, **joint_inputs))
        r2 = solve(build_full_mpc(x_now=scaled, cfg=cfg, **joint_inputs))
        assert r1.ok and r2.ok
        u1 = np.concatenate([r1.value("h")[:5], r1.value("n")[:1], r1.value("s")[:1]])
        u2 = np.concatenate([r2.value("h")[:5], r2.value("n")[:1], r2.value("s")[:1]])
        assert np.linalg.norm(u2 / 2.0 - u1) <= 1e-5 * max(1.0, np.linalg.norm(u1))

    def test_risk_cone_scale_invariance(self, joint_inputs):
        S = psd_sqrt(joint_inputs["Sigma_joint"])
        rng = np.random.default_rng(12)
        sigma = 0.2
        for _ in range(200):
            y = rng.uniform(0, 2, 6)
            margin = sigma * y.sum() - np.linalg.norm(S @ y)
            for c in (0.5, 2.0, 10.0):
                scaled = sigma * (c * y).sum() - np.linalg.norm(S @ (c * y))
                assert (margin >= 0) == (scaled >= -1e-12 * c) or abs(margin) < 1e-12

    def test_insolvency_feasible_set_shrinks_with_epsilon(self, joint_inputs):
        # a point satisfying the tighter bound satisfies every looser one
        mu_l = joint_inputs["mu_liq"]
        S_l = psd_sqrt(joint_inputs["Sigma_liq"])
        lam0 = joint_inputs["lambda0_mean"]
        lam1 = joint_inputs["lambda1_mean"]
        rng = np.random.default_rng(23)
        eps_levels = [0.01, 0.05, 0.2, 0.5]
        quantiles = [conic.normal_quantile(e) for e in eps_levels]
        count_feasible = np.zeros(len(eps_levels), dtype=int)
        for _ in range(400):
            h = rng.uniform(0, 0.3, 5)
            K = rng.uniform(0, 2, 1)
            n = rng.uniform(0, 2, 1)
            cbar = float(lam1 @ K + lam0 @ n)
            margins = [h @ mu_l - cbar + q * np.linalg.norm(S_l @ h) for q in quantiles]
            feas = [mg >= 0 for mg in margins]
            # monotone: feasibility at a smaller epsilon implies it at a larger one
            for a in range(len(eps_levels) - 1):
                assert not feas[a] or feas[a + 1]
            count_feasible += np.array(feas, dtype=int)
        assert count_feasible[0] < count_feasible[-1]  # the sets genuinely shrink


class TestTrackingMetrics:
    def test_perfect_tracking(self):
        assert delayed_rms(np.ones(10), 1.0, 5) == 0.0

    def test_single_element_window(self):
        assert delayed_rms([1.0, 1.0, 3.0], 1.0, 3) == pytest.approx(2.0)

    def test_start_out_of_range(self):
        with pytest.raises(ValueError):
            delayed_rms([1.0, 2.0], 1.0, 3)
        with pytest.raises(ValueError):
            delayed_rms([1.0, 2.0], 1.0, 0)

    def test_mse(self):
        assert mse_tracking([1.0, 2.0], 1.0) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            mse_tracking([], 1.0)
