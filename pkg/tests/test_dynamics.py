import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from altalloc.dynamics import (
    IlliquidState,
    JointState,
    build_matrices,
    impulse_response,
    mean_matrices,
    output_components,
    spectral_radius,
    steady_state_gains,
    step_illiquid,
    step_joint,
    step_response,
)
from altalloc.errors import NonConvergentSystemError
from altalloc.latent import JointDraw, LatentDistribution, sample_draw
from altalloc.simulate import path_rng


def _draw(R=1.1, delta=0.5, lam1=0.4, lam0=None, R_liq=()):
    lam0 = lam1 / 2 if lam0 is None else lam0
    return JointDraw(R_ill=[R], R_liq=list(R_liq), lambda0=[lam0], lambda1=[lam1],
                     delta=[delta])


def test_step_illiquid_call_formula():
    # zero state, unit commitment: the immediate intensity is called at once
    draw = _draw(R=1.17, delta=0.33, lam1=0.256, lam0=0.128)
    state, C, D = step_illiquid(IlliquidState.zero(1), np.array([1.0]), draw)
    assert C[0] == pytest.approx(0.128, abs=1e-12)
    assert state.K[0] == pytest.approx(0.872, abs=1e-12)
    assert D[0] == 0.0


def test_step_illiquid_zero_fixed_point():
    draw = _draw()
    state, C, D = step_illiquid(IlliquidState.zero(1), np.array([0.0]), draw)
    assert state.I[0] == 0.0 and state.K[0] == 0.0 and C[0] == 0.0 and D[0] == 0.0


def test_step_illiquid_full_immediate_call():
    draw = _draw(R=1.3, delta=0.2, lam1=1.0, lam0=1.0)
    st0 = IlliquidState(I=np.array([2.0]), K=np.array([0.0]))
    state, C, D = step_illiquid(st0, np.array([1.0]), draw)
    assert C[0] == pytest.approx(1.0)
    assert state.K[0] == pytest.approx(0.0)
    assert state.I[0] == pytest.approx(1.3 * 2.0 + 1.0 - D[0])


def test_negative_commitment_rejected():
    with pytest.raises(ValueError):
        step_illiquid(IlliquidState.zero(1), np.array([-0.1]), _draw())


def test_build_matrices_worked_example():
    draw = _draw(R=1.1, delta=0.5, lam1=0.4, lam0=0.2)
    sm = build_matrices(draw, "illiquid")
    assert np.allclose(sm.A, [[0.55, 0.4], [0.0, 0.6]], atol=1e-15)
    assert np.allclose(sm.B.ravel(), [0.2, 0.8], atol=1e-15)
    assert np.allclose(sm.F, [[1, 0], [0, 1], [0, 0.4], [0.55, 0]], atol=1e-15)
    assert np.allclose(sm.G.ravel(), [0, 0, 0.2, 0], atol=1e-15)


def test_illiquid_input_matrix_columns_sum_to_one(single_dist):
    rng = np.random.default_rng(3)
    for _ in range(20):
        sm = build_matrices(sample_draw(single_dist, rng), "illiquid")
        assert np.allclose(sm.B.sum(axis=0), 1.0, atol=1e-15)


def test_joint_matrix_first_row(joint_dist):
    rng = np.random.default_rng(4)
    draw = sample_draw(joint_dist, rng)
    sm = build_matrices(draw, "joint")
    m, n = draw.n_liq, draw.n_ill
    assert np.array_equal(sm.B[0, :m], draw.R_liq)
    assert np.array_equal(sm.B[0, m:m + n], -draw.lambda0)
    assert sm.B[0, m + n] == 1.0
    assert sm.A[0, 0] == 0.0


def test_matrix_recursion_matches_component_update(joint_dist):
    rng = np.random.default_rng(11)
    for _ in range(1000):
        draw = sample_draw(joint_dist, rng)
        n = draw.n_ill
        I = rng.uniform(0, 3, n)
        K = rng.uniform(0, 3, n)
        commit = rng.uniform(0, 2, n)
        state = IlliquidState(I=I, K=K)
        nxt, C, D = step_illiquid(state, commit, draw)
        sm = build_matrices(draw, "illiquid")
        via_matrix = sm.A @ state.as_vector() + sm.B @ commit
        assert np.allclose(via_matrix, nxt.as_vector(), atol=1e-12)
        y = sm.F @ state.as_vector() + sm.G @ commit
        assert np.allclose(y, np.concatenate([I, K, C, D]), atol=1e-12)

        # joint layout, with the budget identity satisfied
        L = rng.uniform(0, 5)
        h = rng.dirichlet(np.ones(draw.n_liq)) * L
        s = rng.uniform(0, 0.5)
        jstate = JointState(L=L, illiquid=state)
        jnext, _, _ = step_joint(jstate, h, commit, s, draw)
        sj = build_matrices(draw, "joint")
        u = np.concatenate([h, commit, [s]])
        assert np.allclose(sj.A @ jstate.as_vector() + sj.B @ u,
                           jnext.as_vector(), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    I=st.floats(0, 1e6), K=st.floats(0, 1e6), n=st.floats(0, 1e6),
    lam1=st.floats(0, 1), delta=st.floats(0, 1),
    R=st.floats(1e-6, 1e3),
)
def test_nonnegativity_preserved(I, K, n, lam1, delta, R):
    draw = JointDraw(R_ill=[R], R_liq=[], lambda0=[lam1 / 2], lambda1=[lam1], delta=[delta])
    state, C, D = step_illiquid(IlliquidState(I=[I], K=[K]), np.array([n]), draw)
    assert state.I[0] >= 0 and state.K[0] >= 0 and C[0] >= 0 and D[0] >= 0


def test_mean_matrices_zero_covariance_degenerate():
    dist = LatentDistribution(mean=np.array([-0.7, -0.423, 0.158]),
                              covariance=np.zeros((3, 3)), n_ill=1, n_liq=0)
    mm = mean_matrices(dist, 10**4, 5, layout="illiquid")
    sm = build_matrices(sample_draw(dist, np.random.default_rng(0)), "illiquid")
    assert np.allclose(mm.A, sm.A, atol=1e-15)
    assert np.allclose(mm.B, sm.B, atol=1e-15)
    assert np.all(mm.se_A < 1e-15)  # identical samples, up to float rounding


def test_mean_of_product_differs_from_product_of_means(single_dist, mm_single):
    # E[R(1-delta)] vs E[R]E[1-delta]: the latent correlation makes them differ
    from altalloc.latent import sample_draw_batch

    rng = np.random.default_rng(21)
    lam1, lam0, delta, r_ill, _ = sample_draw_batch(single_dist, rng, 10**6)
    prod_of_means = r_ill.mean() * (1 - delta).mean()
    se = mm_single.se_A[0, 0]
    assert abs(mm_single.A[0, 0] - prod_of_means) > 3 * se


def test_mean_impulse_peak_ordering(mm_single):
    # calls peak strictly before illiquid wealth
    resp = impulse_response(mm_single, 20)
    comp = output_components(1)
    t_calls = int(np.argmax(resp[:, comp["C"]]))
    t_wealth = int(np.argmax(resp[:, comp["I"]]))
    assert t_calls < t_wealth


def test_impulse_first_period_is_feedthrough(mm_single):
    resp = impulse_response(mm_single, 1)
    comp = output_components(1)
    assert resp[0, comp["I"]][0] == 0.0
    assert resp[0, comp["K"]][0] == 0.0
    assert resp[0, comp["C"]][0] == pytest.approx(mm_single.lambda0_mean[0], abs=1e-15)
    assert resp[0, comp["D"]][0] == 0.0


def test_step_response_is_cumulative_impulse(mm_single):
    T = 30
    imp = impulse_response(mm_single, T)
    step = step_response(mm_single, T)
    assert np.allclose(step, np.cumsum(imp, axis=0), atol=1e-10)


def test_step_response_near_gains_by_period_eight(mm_single, gains_single):
    step = step_response(mm_single, 8)
    target = np.concatenate([gains_single.alpha_I, gains_single.alpha_K,
                             gains_single.alpha_C, gains_single.alpha_D])
    assert np.all(np.abs(step[-1] - target) <= 0.05 * np.abs(target))


def test_long_horizon_step_matches_gains(mm_single, gains_single):
    step = step_response(mm_single, 200)
    target = np.concatenate([gains_single.alpha_I, gains_single.alpha_K,
                             gains_single.alpha_C, gains_single.alpha_D])
    assert np.allclose(step[-1], target, atol=1e-6)


def test_alpha_c_is_one(gains_single):
    assert gains_single.alpha_C[0] == pytest.approx(1.0, abs=1e-9)


def test_degenerate_gains_full_call_full_distribution():
    # lambda0 = lambda1 = 1, delta = 1: everything is called and distributed
    R = 1.37
    draw = JointDraw(R_ill=[R], R_liq=[], lambda0=[1.0], lambda1=[1.0], delta=[1.0])
    sm = build_matrices(draw, "illiquid")
    from altalloc.dynamics import MeanMatrices

    mm = MeanMatrices(A=sm.A, B=sm.B, F=sm.F, G=sm.G,
                      se_A=np.zeros_like(sm.A), se_B=np.zeros_like(sm.B),
                      se_F=np.zeros_like(sm.F), se_G=np.zeros_like(sm.G),
                      sample_count=10**4, seed=0, layout="illiquid", n_ill=1, n_liq=0,
                      lambda0_mean=np.array([1.0]), lambda1_mean=np.array([1.0]),
                      liq_return_mean=np.zeros(0))
    g = steady_state_gains(mm)
    assert g.alpha_K[0] == pytest.approx(0.0, abs=1e-12)
    assert g.alpha_C[0] == pytest.approx(1.0, abs=1e-12)
    assert g.alpha_I[0] == pytest.approx(1.0, abs=1e-12)
    assert g.alpha_D[0] == pytest.approx(R, abs=1e-12)


def test_gains_match_long_step_for_random_parameters():
    rng = np.random.default_rng(2718)
    found = 0
    while found < 20:
        mu = rng.uniform([-1.5, -1.5, -0.3], [0.5, 0.5, 0.3])
        M = rng.normal(size=(3, 3)) * 0.2
        cov = M @ M.T
        dist = LatentDistribution(mean=mu, covariance=cov, n_ill=1, n_liq=0)
        mm = mean_matrices(dist, 10**4, int(rng.integers(1 << 30)), layout="illiquid")
        if spectral_radius(mm.A) >= 0.999:
            continue
        found += 1
        g = steady_state_gains(mm)
        target = np.concatenate([g.alpha_I, g.alpha_K, g.alpha_C, g.alpha_D])
        assert np.allclose(step_response(mm, 200)[-1], target, atol=1e-6)
        assert g.alpha_C[0] == pytest.approx(1.0, abs=1e-9)


def test_unstable_system_rejected():
    # deterministic huge return with tiny distribution intensity: E[R(1-d)] > 1
    dist = LatentDistribution(mean=np.array([-0.7, 5.0, 1.1]),
                              covariance=np.zeros((3, 3)), n_ill=1, n_liq=0)
    mm = mean_matrices(dist, 10**4, 1, layout="illiquid")
    with pytest.raises(NonConvergentSystemError):
        steady_state_gains(mm)


def test_spectral_radius_matches_eigenvalues():
    # power iteration needs a spectral gap; the transition matrices it gates
    # have two well-separated eigenvalue groups by construction
    rng = np.random.default_rng(5)
    for _ in range(20):
        A = np.triu(rng.uniform(0, 0.3, (4, 4)), k=1) + np.diag([0.9, 0.55, 0.3, 0.1])
        assert spectral_radius(A) == pytest.approx(np.abs(np.linalg.eigvals(A)).max(),
                                                   abs=1e-6)
    assert spectral_radius(np.zeros((3, 3))) == 0.0


def test_empirical_impulse_mean_within_three_se(single_dist, mm_single):
    # quick version of the mean-dynamics law (the acceptance suite runs 10^4 paths)
    T, P = 8, 2000
    from altalloc.latent import sample_draw_batch

    comp = output_components(1)
    outs = np.zeros((P, T, 4))
    for p in range(P):
        batch = sample_draw_batch(single_dist, path_rng(77, p), T)
        state = IlliquidState.zero(1)
        for t in range(T):
            from altalloc.latent import draws_from_batch

            draw = draws_from_batch(batch, t)
            commit = np.array([1.0]) if t == 0 else np.array([0.0])
            outs[p, t, 0] = state.I[0]
            outs[p, t, 1] = state.K[0]
            state, C, D = step_illiquid(state, commit, draw)
            outs[p, t, 2] = C[0]
            outs[p, t, 3] = D[0]
    mean_resp = impulse_response(mm_single, T)
    emp = outs.mean(axis=0)
    se = outs.std(axis=0, ddof=1) / np.sqrt(P)
    for j, name in enumerate(("I", "K", "C", "D")):
        ref = mean_resp[:, comp[name]].ravel()
        assert np.all(np.abs(emp[:, j] - ref) <= 3 * se[:, j] + 1e-12), name


def test_mean_matrices_requires_min_samples(single_dist):
    with pytest.raises(ValueError):
        mean_matrices(single_dist, 10**3, 1)


def test_mean_matrices_cached(single_dist):
    a = mean_matrices(single_dist, 10**4, 99, layout="illiquid")
    b = mean_matrices(single_dist, 10**4, 99, layout="illiquid")
    assert a is b
