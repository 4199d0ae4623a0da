import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nacbench.ampc.armijo import armijo_search
from nacbench.ampc.controller import AmpcController, adapt_model_online
from nacbench.ampc.mpc import (
    MpcProblem,
    TrajectoryLinearization,
    clamp_move,
    hildreth,
    least_distance_qp,
    nplpt_step,
    predict_trajectory,
    qp_objective,
    sensitivity_matrix,
    solve_qp,
)
from nacbench.ann.elman import ElmanModel
from nacbench.exceptions import NonFiniteSensitivity

from oracles import (
    feasible,
    grid_qp,
    linear_mpc_law,
    random_elman,
    random_linear_elman,
    random_qp_instance,
    sensitivity_fd_error,
)

UNBOUNDED = dict(u_min=-1e6, u_max=1e6, du_max=1e6, y_min=-math.inf, y_max=math.inf)


def toy_elman():
    m = ElmanModel(1, 1)
    m.W_in[:] = 1.0
    m.W_ctx[:] = 0.5
    m.w_out[:] = 1.0
    m.reset_state()
    return m


def scalar_lin(h, y0, u_prev_lin=0.0):
    return TrajectoryLinearization(np.array([y0]), np.array([[h]]), np.array([u_prev_lin]))


class TestProblem:
    def test_defaults_are_table_values(self):
        p = MpcProblem()
        assert (p.N, p.Nu, p.lam, p.u_min, p.u_max, p.du_max) == (15, 3, 1.0, -1.5, 1.5, 0.3)
        assert (p.du_tol, p.err_tol, p.max_internal_iters) == (1e-7, 1e-15, 10)

    @pytest.mark.parametrize("kw", [
        dict(Nu=0), dict(N=2, Nu=3), dict(lam=-1.0), dict(u_min=1.0, u_max=1.0),
        dict(du_max=0.0), dict(y_min=2.0, y_max=1.0), dict(du_tol=0.0), dict(max_internal_iters=0),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            MpcProblem(**kw)

    def test_linearization_shapes_checked(self):
        with pytest.raises(ValueError):
            TrajectoryLinearization(np.zeros(3), np.zeros((3, 2)), np.zeros(3))

    def test_linearization_rejects_nan(self):
        with pytest.raises(NonFiniteSensitivity):
            TrajectoryLinearization(np.zeros(1), np.array([[np.nan]]), np.zeros(1))


class TestPrediction:
    def test_zero_model(self):
        m = ElmanModel(4, 1)
        assert np.array_equal(predict_trajectory(m, [0.3, -0.2], 6, 0.0), np.zeros(6))

    def test_hand_rollout(self):
        m = toy_elman()
        ref = m.copy()
        expected = [ref.forward([1.0]), ref.forward([1.0])]
        Y = predict_trajectory(m, [1.0, 1.0], 2, m.last_output)
        assert Y.tolist() == pytest.approx(expected, rel=1e-15)
        assert expected[1] == pytest.approx(math.tanh(1 + 0.5 * math.tanh(1)), rel=1e-15)

    def test_disturbance_offset(self):
        m = toy_elman()
        base = predict_trajectory(m, [1.0], 3, m.last_output)
        assert np.allclose(predict_trajectory(m, [1.0], 3, m.last_output + 0.25), base + 0.25)

    def test_controls_held_past_horizon(self, rng):
        m = random_elman(rng, max_delay=0)
        ref = m.copy()
        expected = [ref.forward([u]) for u in (0.2, -0.4, -0.4, -0.4)]
        assert np.allclose(predict_trajectory(m, [0.2, -0.4], 4, m.last_output), expected, atol=1e-15)

    def test_free_response(self, rng):
        m = random_elman(rng, max_delay=0)
        ref = m.copy()
        free = [ref.forward([0.3]) for _ in range(5)]
        assert np.allclose(predict_trajectory(m, [0.3] * 3, 5, m.last_output), free, atol=1e-15)

    def test_model_state_untouched(self, rng):
        m = random_elman(rng)
        before = m.get_state()
        predict_trajectory(m, [0.5, 0.1], 8, 0.0)
        after = m.get_state()
        assert np.array_equal(before[0], after[0]) and np.array_equal(before[1], after[1])


class TestSensitivity:
    def test_zero_input_weights(self, rng):
        m = ElmanModel.random(rng, 4, 1)
        m.W_in[:] = 0.0
        assert np.array_equal(sensitivity_matrix(m, [0.1, 0.2, 0.3], 15), np.zeros((15, 3)))

    def test_shape(self, rng):
        assert sensitivity_matrix(ElmanModel.random(rng, 5, 1), np.zeros(3), 15, 3).shape == (15, 3)

    def test_length_mismatch(self, rng):
        with pytest.raises(ValueError):
            sensitivity_matrix(ElmanModel.random(rng, 2, 1), np.zeros(3), 5, Nu=2)

    @given(st.integers(0, 2**32 - 1))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        m = random_elman(rng, max_hidden=5)
        Nu = int(rng.integers(1, 4))
        N = int(rng.integers(Nu + m.input_delay, 12))
        U = rng.uniform(-1, 1, Nu)
        assert sensitivity_fd_error(m, sensitivity_matrix(m, U, N), U, N) < 1e-4

    @given(st.integers(0, 2**32 - 1))
    def test_causal_structure(self, seed):
        rng = np.random.default_rng(seed)
        m = random_elman(rng, max_hidden=4, max_delay=3)
        d = m.input_delay
        H = sensitivity_matrix(m, rng.uniform(-1, 1, 3), 10)
        for p in range(10):
            for q in range(3):
                if p < q + d:
                    assert H[p, q] == 0.0
        assert np.all(H[:d] == 0.0)


class TestQp:
    def test_scalar_closed_form(self):
        h, y0, ysp, lam = 0.7, 0.1, 0.3, 0.5
        p = MpcProblem(N=1, Nu=1, lam=lam, **UNBOUNDED)
        dU = solve_qp(scalar_lin(h, y0), [ysp], p, 0.0)
        assert dU[0] == pytest.approx(h * (ysp - y0) / (h * h + lam), rel=1e-12)

    def test_rate_clamp(self):
        p = MpcProblem(N=1, Nu=1, lam=1.0)
        # unconstrained optimum 0.5
        assert solve_qp(scalar_lin(1.0, 0.0), [1.0], p, 0.0)[0] == pytest.approx(0.3, abs=1e-12)

    def test_huge_lambda(self, rng):
        lin = TrajectoryLinearization(rng.normal(size=5), rng.normal(size=(5, 2)), np.zeros(2))
        dU = solve_qp(lin, np.ones(5), MpcProblem(N=5, Nu=2, lam=1e12), 0.0)
        assert np.max(np.abs(dU)) < 1e-10

    def test_box_binding(self):
        p = MpcProblem(N=1, Nu=1, lam=0.0, u_min=-1.0, u_max=1.0, du_max=5.0)
        assert solve_qp(scalar_lin(1.0, 0.0), [3.0], p, 0.4)[0] == pytest.approx(0.6, abs=1e-12)

    def test_output_limit_binding(self):
        p = MpcProblem(N=1, Nu=1, lam=0.0, u_min=-5, u_max=5, du_max=5, y_min=-1, y_max=0.5)
        assert solve_qp(scalar_lin(1.0, 0.0), [2.0], p, 0.0)[0] == pytest.approx(0.5, abs=1e-9)

    def test_infeasible_output_limit_softened(self):
        # y >= 0.5 needs du >= 0.5, but the rate limit allows 0.3
        p = MpcProblem(N=1, Nu=1, lam=0.0, du_max=0.3, y_min=0.5, y_max=2.0)
        dU = solve_qp(scalar_lin(1.0, 0.0), [0.0], p, 0.0)
        assert dU[0] == pytest.approx(0.3, abs=1e-6)

    @pytest.mark.parametrize("Nu", [1, 2])
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_grid(self, Nu, seed):
        lin, Y_sp, p, u_prev = random_qp_instance(np.random.default_rng([Nu, seed]), Nu)
        dU = solve_qp(lin, Y_sp, p, u_prev)
        assert feasible(p, u_prev, dU, tol=1e-12)[0]
        _, j_grid = grid_qp(lin, Y_sp, p, u_prev)
        assert abs(qp_objective(lin, Y_sp, p, u_prev, dU) - j_grid) <= 2e-3

    def test_singular_hessian_regularized(self):
        lin = TrajectoryLinearization(np.zeros(2), np.zeros((2, 2)), np.zeros(2))
        dU = solve_qp(lin, np.ones(2), MpcProblem(N=2, Nu=2, lam=0.0), 0.0)
        assert np.all(np.isfinite(dU))

    def test_hildreth_and_least_distance_agree(self, rng):
        for _ in range(20):
            A = rng.normal(size=(3, 3))
            E = A @ A.T + 0.1 * np.eye(3)
            F = rng.normal(size=3)
            M = rng.normal(size=(5, 3))
            g = rng.uniform(0.0, 1.0, 5)
            x, status = hildreth(E, F, M, g)
            exact = least_distance_qp(E, F, M, g)
            assert status == 1
            assert np.allclose(x, exact, atol=1e-7)

    def test_least_distance_infeasible(self):
        M = np.array([[1.0], [-1.0]])
        assert least_distance_qp(np.eye(1), np.zeros(1), M, np.array([-1.0, -1.0])) is None


class TestClamp:
    @given(
        st.floats(-10, 10), st.floats(-2, 2),
        st.floats(0.5, 3), st.floats(1e-6, 1),
    )
    def test_exact_limits(self, u, u_prev, box, du):
        p = MpcProblem(u_min=-box, u_max=box, du_max=du)
        u_prev = min(max(u_prev, -box), box)
        out = clamp_move(u, u_prev, p)
        assert -box <= out <= box
        assert abs(out - u_prev) <= du

    def test_inside_untouched(self):
        assert clamp_move(0.1, 0.0, MpcProblem()) == 0.1


class TestNplpt:
    def test_linear_model_matches_closed_form(self, rng):
        m = random_linear_elman(rng)
        p = MpcProblem(N=8, Nu=3, lam=0.4, **UNBOUNDED)
        Y_sp = rng.uniform(-1, 1, 8)
        res = nplpt_step(m, Y_sp, m.last_output + 0.05, 0.2, p)
        u_ref, dU_ref = linear_mpc_law(m, Y_sp, m.last_output + 0.05, 0.2, p)
        assert res.u == pytest.approx(u_ref, abs=1e-8)
        assert res.step_norms[1] <= 1e-12 * max(1.0, res.step_norms[0])

    @given(st.integers(0, 2**32 - 1))
    def test_linear_iterates_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        m = random_linear_elman(rng, int(rng.integers(1, 5)), int(rng.integers(0, 2)))
        p = MpcProblem(N=10, Nu=3, lam=float(rng.uniform(0.1, 2)))
        res = nplpt_step(m, rng.uniform(-1, 1, 10), m.last_output, 0.0, p)
        norms = res.step_norms
        assert all(b <= a + 1e-15 for a, b in zip(norms[1:], norms[2:]))

    def test_stops_on_du_tol(self, rng):
        m = ElmanModel.random(rng, 4, 1)
        res = nplpt_step(m, np.full(15, 0.2), m.last_output, 0.0, MpcProblem())
        assert res.converged and res.iterations <= 10
        assert res.step_norms[-1] < 1e-7 or res.iterations == len(res.step_norms)

    def test_toy_step_beats_grid(self):
        m = toy_elman()
        p = MpcProblem(N=1, Nu=1, lam=0.0, du_max=1.5)
        res = nplpt_step(m, [0.4], m.last_output, 0.0, p)
        grid = np.round(np.arange(-1.5, 1.5005, 1e-3), 12)
        errs = [abs(0.4 - m.copy().forward([u])) for u in grid]
        best = grid[int(np.argmin(errs))]
        assert abs(res.u - best) <= 1e-3
        # each iterate moves the one-step prediction toward the setpoint
        assert abs(0.4 - m.copy().forward([res.u])) <= min(errs) + 1e-6


class TestArmijo:
    def test_quadratic_accepts_full_step(self):
        assert armijo_search(lambda e: 0.5 * (e - 1) ** 2, 1.0, 1.0, 0.5, 1e-4) == 1.0

    def test_zero_gradient(self):
        assert armijo_search(lambda e: 3.0, 0.0, eta0=0.7) == 0.7

    def test_no_progress(self):
        assert armijo_search(lambda e: 1.0 + 1e6 * e, 1.0) == 0.0

    def test_shrinks(self):
        # needs (e - 0.2)^2 <= 0.04 - 0.2 e: rejects 1, 0.5, 0.25, accepts 0.125
        assert armijo_search(lambda e: (e - 0.2) ** 2, 0.4, 1.0, 0.5, 0.5) == 0.125

    @pytest.mark.parametrize("kw", [dict(eta0=0.0), dict(shrink=1.0), dict(c=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            armijo_search(lambda e: 0.0, 1.0, **kw)


class TestOnlineAdaptation:
    def test_zero_error_keeps_weights(self, rng):
        m = ElmanModel.random(rng, 3, 1)
        y = m.copy().forward([0.4])
        theta = m.get_flat()
        err, eta = adapt_model_online(m, 0.4, y)
        assert err == 0.0 and eta == 0.0
        assert np.array_equal(m.get_flat(), theta)

    def test_scalar_hand_gradient(self):
        m = toy_elman()
        m.b_out = 0.1
        u, y_meas = 0.8, 0.2
        a = 1.0 * u
        h = math.tanh(a)
        y_hat = h + 0.1
        err = y_meas - y_hat
        dh = 1 - h * h
        # dy/d[W_in, W_ctx, b_h, w_out, b_out], context starts at 0
        jac = np.array([dh * u, 0.0, dh, h, 1.0])
        grad = -err * jac
        theta0 = np.array([1.0, 0.5, 0.0, 1.0, 0.1])

        def loss(e):
            th = theta0 - e * grad
            yy = th[3] * math.tanh(th[0] * u + th[2]) + th[4]
            return 0.5 * (y_meas - yy) ** 2

        eta = armijo_search(loss, float(grad @ grad))
        got_err, got_eta = adapt_model_online(m, u, y_meas)
        assert got_err == pytest.approx(err, rel=1e-14)
        assert got_eta == eta
        assert np.allclose(m.get_flat(), theta0 - eta * grad, rtol=0, atol=1e-15)

    def test_repeated_sample_error_non_increasing(self, rng):
        m = ElmanModel.random(rng, 4, 1, scale=0.5)
        h0 = m.context.copy()
        errs = []
        for _ in range(30):
            m.reset_state(h0)
            errs.append(abs(adapt_model_online(m, 0.6, 0.9)[0]))
        assert all(b <= a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < errs[0]

    def test_context_advances(self, rng):
        m = ElmanModel.random(rng, 3, 1)
        ref = m.copy()
        ref.set_flat(m.get_flat())
        adapt_model_online(m, 0.5, 0.0)
        assert not np.array_equal(m.context, ref.context)


class TestController:
    def model(self, rng):
        return ElmanModel.random(rng, 5, 1, scale=0.5)

    def test_setpoint_modes(self, rng):
        c = AmpcController(self.model(rng), MpcProblem(N=3, Nu=1), setpoint_mode="hold")
        assert c.setpoints([0.5, 1.0, 2.0, 3.0]).tolist() == [0.5] * 3
        c = AmpcController(self.model(rng), MpcProblem(N=3, Nu=1), setpoint_mode="preview")
        assert c.setpoints([0.5, 1.0, 2.0, 3.0]).tolist() == [1.0, 2.0, 3.0]
        assert c.setpoints([0.5, 1.0]).tolist() == [1.0, 1.0, 1.0]
        assert c.setpoints(0.5).tolist() == [0.5] * 3

    def test_bad_mode(self, rng):
        with pytest.raises(ValueError):
            AmpcController(self.model(rng), setpoint_mode="oracle")

    def test_owns_model_copy(self, rng):
        m = self.model(rng)
        theta = m.get_flat()
        c = AmpcController(m, MpcProblem(N=4, Nu=2))
        for k in range(5):
            c.step(0.1 * k, 0.5)
        assert np.array_equal(m.get_flat(), theta)

    def test_closed_loop_respects_limits(self, rng):
        p = MpcProblem(N=6, Nu=2, du_max=0.05, u_min=-0.2, u_max=0.2)
        c = AmpcController(self.model(rng), p)
        us = [0.0]
        for k in range(50):
            us.append(c.step(math.sin(0.3 * k), 1.0))
        us = np.array(us)
        assert np.all(np.abs(np.diff(us)) <= 0.05)
        assert np.all(np.abs(us) <= 0.2)

    def test_no_model(self):
        with pytest.raises(ValueError):
            AmpcController(None).step(0.0, 0.0)
