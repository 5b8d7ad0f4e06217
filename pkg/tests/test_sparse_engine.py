import numpy as np
import pytest

from dapd.errors import ConfigurationError, StructuralError
from dapd.matrix import build_matrix, matvec
from dapd.proxlib import (
    kl_reg,
    l1_reg,
    l2_reg,
    lasso_problem,
    make_problem,
    ridge_problem,
    squared_loss,
)
from dapd.sparse_engine import (
    finalize_x,
    init_lazy,
    lazy_primal_coord,
    materialize_s,
    rebase,
    run_sparse,
    sparse_iterate,
)
from dapd.stochastic import (
    StochasticParams,
    init_stochastic,
    params_for_problem,
    perturb_problem,
    run_sdapd,
    sdapd_iterate_dense,
)


def sparse_problem(rng, n, d, density, reg, row_scale=1.0):
    triplets = []
    for i in range(n):
        k = max(1, int(round(density * d)))
        cols = rng.choice(d, size=k, replace=False)
        for j in sorted(cols):
            triplets.append((i, int(j), row_scale * rng.normal()))
    A = build_matrix(triplets, n, d)
    b = rng.normal(size=n)
    return make_problem(A, squared_loss(b), reg, "finite_sum")


def unit_params(n=1, xi=2.0):
    return StochasticParams(eta=1.0, tau=1.0, beta0=1.0, xi=xi, n=n)


class TestInit:
    def test_zero_dual_start(self):
        A = build_matrix([(0, 0, 1.0)], 1, 1)
        state = init_lazy(np.zeros(1), np.zeros(1), A, unit_params())
        assert state.v[0] == 0.0 and state.w[0] == 0.0 and state.u[0] == 0.0

    def test_nonzero_dual_seeds_constants(self):
        # theta = 0.5, beta0 = 1, n = 1, A = [1], y0 = 1:
        # v = -beta0*theta/(n(1-theta)) = -1,  w = 1/(n(1-theta)) = 2
        A = build_matrix([(0, 0, 1.0)], 1, 1)
        state = init_lazy(np.zeros(1), np.ones(1), A, unit_params())
        assert state.v[0] == pytest.approx(-1.0, abs=0)
        assert state.w[0] == pytest.approx(2.0, abs=0)
        assert state.u[0] == pytest.approx(1.0, abs=0)

    def test_materialize_empty_sum_is_zero(self):
        A = build_matrix([(0, 0, 1.0)], 1, 1)
        state = init_lazy(np.zeros(1), np.ones(1), A, unit_params())
        assert np.allclose(materialize_s(state), 0.0, atol=1e-15)

    def test_invalid_theta_rejected(self):
        A = build_matrix([(0, 0, 1.0)], 1, 1)
        with pytest.raises(ConfigurationError):
            init_lazy(np.zeros(1), np.zeros(1), A, StochasticParams(1.0, 1.0, 1.0, 1.0, 1))


class TestLemmaBaseCase:
    def test_hand_traced_first_step(self):
        # engineered so the dual step is dy = 0.2: v1 = -1.2, w1 = 2.4,
        # s1 = 1.2 = (beta0/n) * ybar^1
        A = build_matrix([(0, 0, 1.0)], 1, 1)
        prob = make_problem(A, squared_loss([-0.4]), l2_reg(1.0), "finite_sum")
        state = init_lazy(np.array([3.0]), np.array([1.0]), A, unit_params())
        sparse_iterate(state, prob, unit_params())
        assert state.y[0] == pytest.approx(1.2, abs=1e-15)
        assert state.v[0] == pytest.approx(-1.2, abs=1e-14)
        assert state.w[0] == pytest.approx(2.4, abs=1e-14)
        assert materialize_s(state)[0] == pytest.approx(1.2, abs=1e-14)


class TestLazyRecovery:
    def test_fresh_state_identity(self):
        A = build_matrix([(0, 0, 1.0), (0, 1, 2.0)], 1, 2)
        reg = l1_reg(0.5)
        state = init_lazy(np.array([1.5, -2.0]), np.zeros(1), A, unit_params())
        x0_j, _ = lazy_primal_coord(state, 0, reg)
        assert x0_j == 1.5  # B_{-1} = 0 serves x0 directly
        assert state.touch_counter == 2

    def test_out_of_range(self):
        A = build_matrix([(0, 0, 1.0)], 1, 1)
        state = init_lazy(np.zeros(1), np.zeros(1), A, unit_params())
        with pytest.raises(StructuralError):
            lazy_primal_coord(state, 5, l1_reg(0.1))

    def test_matches_dense_shadow(self):
        rng = np.random.default_rng(3)
        prob = sparse_problem(rng, 8, 12, 0.4, l1_reg(0.05))
        prob = perturb_problem(prob, 0.01)
        params = params_for_problem(prob)
        dense = init_stochastic(prob, params, seed=11)
        lazy = init_lazy(np.zeros(12), np.zeros(8), prob.matrix, params, seed=11)
        for _ in range(300):
            sdapd_iterate_dense(dense, params, prob)
            sparse_iterate(lazy, prob, params)
        for j in range(12):
            x_j, _ = lazy_primal_coord(lazy, j, prob.reg)
            assert x_j == pytest.approx(dense.x[j], abs=1e-10)

    def test_soft_threshold_kill_zone(self):
        rng = np.random.default_rng(4)
        prob = sparse_problem(rng, 6, 10, 0.5, l1_reg(50.0))
        prob = perturb_problem(prob, 1e-3)
        params = params_for_problem(prob)
        lazy = init_lazy(np.zeros(10), np.zeros(6), prob.matrix, params, seed=0)
        for _ in range(200):
            sparse_iterate(lazy, prob, params)
        assert np.all(finalize_x(lazy, prob.reg) == 0.0)
        assert np.any(materialize_s(lazy) != 0.0)


class TestSparseIterate:
    def test_touch_count_audit(self):
        # 3-nonzero row in a million-dimensional space: per-iteration touches
        # stay <= 8*nnz + O(1)
        d = 1_000_000
        A = build_matrix([(0, 10, 1.0), (0, 500_000, -2.0), (0, d - 1, 0.5)], 1, d)
        prob = make_problem(A, squared_loss([1.0]), l2_reg(0.1), "finite_sum")
        params = params_for_problem(prob)
        state = init_lazy(np.zeros(d), np.zeros(1), A, params, seed=0)
        before = state.touch_counter
        sparse_iterate(state, prob, params)
        assert state.touch_counter - before <= 8 * 3 + 4

    def test_empty_row_updates_only_dual(self):
        A = build_matrix([], 1, 3)
        prob = make_problem(A, squared_loss([2.0]), l2_reg(0.3), "finite_sum")
        params = unit_params(n=1)
        state = init_lazy(np.zeros(3), np.zeros(1), A, params, seed=0)
        sparse_iterate(state, prob, params)
        assert state.y[0] != 0.0
        assert np.all(state.v == 0) and np.all(state.w == 0) and np.all(state.u == 0)

    def test_no_writes_off_support(self):
        rng = np.random.default_rng(5)
        prob = sparse_problem(rng, 10, 30, 0.15, l2_reg(0.2))
        params = params_for_problem(prob)
        state = init_lazy(np.zeros(30), np.zeros(10), prob.matrix, params, seed=9)
        for _ in range(40):
            v0, w0, u0 = state.v.copy(), state.w.copy(), state.u.copy()
            sparse_iterate(state, prob, params)
            cols = prob.matrix.row(state.last_sample)[0]
            mask = np.ones(30, dtype=bool)
            mask[cols] = False
            assert np.array_equal(state.v[mask], v0[mask])
            assert np.array_equal(state.w[mask], w0[mask])
            assert np.array_equal(state.u[mask], u0[mask])


class TestMaterialize:
    def test_matches_dense_accumulation(self):
        rng = np.random.default_rng(6)
        prob = sparse_problem(rng, 10, 15, 0.3, l2_reg(0.4))
        params = params_for_problem(prob)
        lazy = init_lazy(np.zeros(15), np.zeros(10), prob.matrix, params, seed=21)
        # dense shadow accumulates s directly with the same sample stream
        rng_shadow = np.random.default_rng(21)
        y = np.zeros(10)
        u = np.zeros(15)
        s = np.zeros(15)
        beta = params.beta0
        from dapd.proxlib import prox_conjugate, prox_reg, recover_primal

        B = 0.0
        x0 = np.zeros(15)
        for t in range(200):
            sparse_iterate(lazy, prob, params)
            i = int(rng_shadow.integers(10))
            x = recover_primal(prob.reg, x0, s, B, 1.0)
            xbar = prox_reg(prob.reg, params.eta, x - params.eta * u)
            cols, vals = prob.matrix.row(i)
            dot = float(vals @ xbar[cols])
            ynew = prox_conjugate(prob.loss, i, params.tau, y[i] + params.tau * dot)
            dy = ynew - y[i]
            y[i] = ynew
            s += beta * u
            s[cols] += beta * dy * vals
            u[cols] += (dy / 10) * vals
            B += beta
            beta *= params.xi
        got = materialize_s(lazy)
        scale = 1.0 + np.abs(s).max()
        assert np.abs(got - s).max() <= 1e-9 * scale


class TestRebase:
    def test_rebase_right_after_init_is_noop(self):
        A = build_matrix([(0, 0, 1.0)], 1, 1)
        reg = l2_reg(0.5)
        state = init_lazy(np.array([2.0]), np.zeros(1), A, unit_params())
        before = lazy_primal_coord(state, 0, reg)
        rebase(state)
        assert lazy_primal_coord(state, 0, reg) == before

    def test_recovery_unchanged_at_arbitrary_t(self):
        rng = np.random.default_rng(7)
        for reg in [l1_reg(0.1), l2_reg(0.3), kl_reg(1.0)]:
            prob = sparse_problem(rng, 8, 12, 0.4, reg)
            prob = perturb_problem(prob, 1e-3)
            params = params_for_problem(prob)
            x0 = np.ones(12) if reg.kind == "kl" else np.zeros(12)
            state = init_lazy(x0, np.zeros(8), prob.matrix, params, seed=3)
            for _ in range(137):
                sparse_iterate(state, prob, params)
            before = finalize_x(state, prob.reg)
            coords_before = [lazy_primal_coord(state, j, prob.reg) for j in range(12)]
            rebase(state)
            after = finalize_x(state, prob.reg)
            coords_after = [lazy_primal_coord(state, j, prob.reg) for j in range(12)]
            assert np.allclose(after, before, rtol=1e-12, atol=1e-12)
            for (xa, xba), (xb, xbb) in zip(coords_after, coords_before):
                assert xa == pytest.approx(xb, rel=1e-12, abs=1e-12)
            assert state.rebase_count == 1

    def test_threshold_triggers_and_values_stay_finite(self):
        rng = np.random.default_rng(8)
        prob = sparse_problem(rng, 6, 8, 0.5, l2_reg(0.5))
        params = params_for_problem(prob)
        res = run_sparse(prob, params, 4000, seed=1, rebase_threshold=1e6, rebase_period=0)
        assert res.resolved["rebase_count"] >= 1
        assert np.isfinite(res.x).all()

    def test_long_run_stress_never_goes_nonfinite(self):
        # slow geometric growth (xi = 1.001) over a horizon long enough that
        # the accumulated scale exp(log_scale) overflows any double and
        # inv_scale underflows to exactly 0; every stored quantity and every
        # recovery must stay finite throughout
        rng = np.random.default_rng(12)
        prob = sparse_problem(rng, 4, 5, 0.6, l2_reg(0.3))
        params = StochasticParams(eta=0.5, tau=0.5, beta0=0.5, xi=1.001, n=4)
        state = init_lazy(np.zeros(5), np.zeros(4), prob.matrix, params, seed=6,
                          rebase_threshold=1e20, rebase_period=0)
        checkpoints = {200_000, 400_000, 800_000}
        for t in range(800_000):
            sparse_iterate(state, prob, params)
            if t + 1 in checkpoints:
                x = finalize_x(state, prob.reg)
                assert np.isfinite(x).all()
                assert np.isfinite(state.v).all() and np.isfinite(state.w).all()
        assert state.rebase_count >= 10
        assert state.inv_scale == 0.0  # deep-scale regime really was exercised
        assert np.isfinite(finalize_x(state, prob.reg)).all()


class TestFinalize:
    def test_t0_identity(self):
        A = build_matrix([(0, 0, 1.0)], 1, 2)
        state = init_lazy(np.array([0.7, -0.2]), np.zeros(1), A, unit_params())
        assert np.array_equal(finalize_x(state, l1_reg(0.5)), [0.7, -0.2])

    def test_matches_dense_last_iterate(self):
        rng = np.random.default_rng(9)
        prob = sparse_problem(rng, 12, 20, 0.3, l1_reg(0.02))
        prob = perturb_problem(prob, 1e-3)
        params = params_for_problem(prob)
        dense = run_sdapd(prob, params, 600, seed=17)
        sparse = run_sparse(prob, params, 600, seed=17)
        assert np.abs(sparse.x - dense.x).max() <= 1e-8

    def test_kl_regularizer_supported(self):
        rng = np.random.default_rng(10)
        prob = sparse_problem(rng, 6, 9, 0.5, kl_reg(0.8))
        prob = perturb_problem(prob, 1e-2)
        params = params_for_problem(prob)
        x0 = np.ones(9)
        dense = run_sdapd(prob, params, 400, seed=23, x0=x0)
        sparse = run_sparse(prob, params, 400, seed=23, x0=x0)
        assert np.all(sparse.x > 0)
        assert np.abs(sparse.x - dense.x).max() <= 1e-9

    def test_l1_support_matches_reference(self):
        rng = np.random.default_rng(11)
        prob = sparse_problem(rng, 20, 10, 0.6, l1_reg(0.05), row_scale=1.0)
        prob_p = perturb_problem(prob, 1e-7)
        params = params_for_problem(prob_p)
        res = run_sparse(prob_p, params, 60_000, seed=2)
        # high-accuracy dense reference on the same perturbed problem
        ref = run_sdapd(prob_p, params, 200_000, seed=5)
        support = np.abs(res.x) > 1e-12
        ref_support = np.abs(ref.x) > 1e-12
        assert np.array_equal(support, ref_support)
