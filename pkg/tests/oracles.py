"""Independent reference computations shared by unit and acceptance tests.

Nothing here calls the code under test for the quantity being checked.
"""

import itertools
import math

import numpy as np

from nacbench.ampc.mpc import MpcProblem, TrajectoryLinearization, predict_trajectory
from nacbench.ann.elman import ElmanModel
from nacbench.ann.numdiff import finite_diff_jacobian


def brute_plant_step(x1, x2, u, a1, a2, a3):
    """One step of the discrete-time plant, written out term by term."""
    return a1 * x1 + a2 * x2 + u, x1 / (a3 + x1 * x1 + x2 * x2)


def random_elman(rng, max_hidden=8, max_delay=2, scale=0.8):
    nh = int(rng.integers(1, max_hidden + 1))
    d = int(rng.integers(0, max_delay + 1))
    m = ElmanModel.random(rng, nh, 1, d, scale=scale)
    if d:
        m.reset_state(m.context, rng.uniform(-1, 1, (d, 1)))
    return m


def sensitivity_fd_error(model, H, U, N, eps=1e-6):
    """Relative Frobenius error of ``H`` against central differences of the rollout."""
    y = model.last_output
    num = finite_diff_jacobian(lambda v: predict_trajectory(model, v, N, y), U, eps)
    scale = max(np.linalg.norm(num), 1e-12)
    return float(np.linalg.norm(H - num) / scale)


# -- QP ----------------------------------------------------------------------


def random_qp_instance(rng, Nu):
    """Random linearization and limits; bounds lie on the 1e-3 grid."""
    N = int(rng.integers(Nu, 5))
    H = rng.uniform(-0.6, 0.6, (N, Nu))
    U_prev = rng.uniform(-0.5, 0.5, Nu)
    lin = TrajectoryLinearization(rng.uniform(-0.5, 0.5, N), H, U_prev)
    Y_sp = rng.uniform(-1.0, 1.0, N)
    u_max = round(float(rng.uniform(0.2, 1.5)), 3)
    problem = MpcProblem(
        N=N, Nu=Nu, lam=float(rng.uniform(0.05, 2.0)),
        u_min=-u_max, u_max=u_max,
        du_max=round(float(rng.uniform(0.05, 0.5)), 3),
        y_min=-math.inf, y_max=math.inf,
    )
    u_prev = round(float(rng.uniform(-u_max, u_max)), 3)
    return lin, Y_sp, problem, u_prev


def objective(lin, Y_sp, problem, u_prev, dU):
    """Cost of increments ``dU`` (rows of a 2-D array) under the linear predictor."""
    dU = np.atleast_2d(dU)
    U = np.cumsum(dU, axis=1) + u_prev
    Y = lin.Y_prev[None, :] + (U - lin.U_prev[None, :]) @ lin.H.T
    return np.sum((Y_sp[None, :] - Y) ** 2, axis=1) + problem.lam * np.sum(dU**2, axis=1)


def feasible(problem, u_prev, dU, tol=0.0):
    dU = np.atleast_2d(dU)
    U = np.cumsum(dU, axis=1) + u_prev
    return (
        np.all(np.abs(dU) <= problem.du_max + tol, axis=1)
        & np.all(U <= problem.u_max + tol, axis=1)
        & np.all(U >= problem.u_min - tol, axis=1)
    )


def grid_qp(lin, Y_sp, problem, u_prev, resolution=1e-3):
    """Brute-force minimum over a regular grid of increments."""
    n = int(round(problem.du_max / resolution))
    axis = np.arange(-n, n + 1) * resolution
    Nu = lin.H.shape[1]
    pts = np.array(list(itertools.product(axis, repeat=Nu))) if Nu > 1 else axis[:, None]
    ok = feasible(problem, u_prev, pts, tol=1e-12)
    pts = pts[ok]
    J = objective(lin, Y_sp, problem, u_prev, pts)
    i = int(np.argmin(J))
    return pts[i], float(J[i])


# -- linear MPC ----------------------------------------------------------------


def linear_mpc_law(model, Y_sp, y_measured, u_prev, problem):
    """Unconstrained MPC for an exactly linear model, by superposition.

    The free response and one step response per decision variable come from
    plain rollouts of model copies.
    """
    N, Nu = problem.N, problem.Nu

    def rollout(controls):
        m = model.copy()
        return np.array([m.forward([c]) for c in controls])

    def horizon_controls(U):
        return [U[min(p, Nu - 1)] for p in range(N)]

    base = np.full(Nu, u_prev)
    free = rollout(horizon_controls(base)) + (y_measured - model.last_output)
    cols = []
    for q in range(Nu):
        U = base.copy()
        U[q:] += 1.0
        cols.append(rollout(horizon_controls(U)) + (y_measured - model.last_output) - free)
    G = np.column_stack(cols)
    dU = np.linalg.solve(G.T @ G + problem.lam * np.eye(Nu), G.T @ (Y_sp - free))
    return u_prev + dU[0], dU


def random_linear_elman(rng, n_hidden=3, input_delay=0):
    m = ElmanModel(n_hidden, 1, input_delay, activation="linear")
    m.set_flat(rng.uniform(-0.5, 0.5, m.n_params))
    # keep the context recursion stable
    radius = max(abs(np.linalg.eigvals(m.W_ctx)))
    if radius > 0.8:
        m.W_ctx *= 0.8 / radius
    m.reset_state(rng.uniform(-0.3, 0.3, n_hidden))
    return m
