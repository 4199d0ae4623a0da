"""Predictive-control core: horizon prediction, trajectory linearization, QP.

The control sequence over the horizon is parametrised by its increments
``dU`` relative to the last applied control ``u_prev``::

    U = L @ dU + u_prev        (L: all-ones lower-triangular)

Controls beyond the control horizon hold the last decision value.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import nnls

from ..exceptions import NonFinitePrediction, NonFiniteSensitivity

log = logging.getLogger(__name__)

SOFT_OUTPUT_WEIGHT = 1e6
HILDRETH_SWEEPS = 200
HILDRETH_TOL = 1e-12


@dataclass(frozen=True)
class MpcProblem:
    """Horizons, weights, bounds and stop thresholds of the predictive controller."""

    N: int = 15
    Nu: int = 3
    lam: float = 1.0
    u_min: float = -1.5
    u_max: float = 1.5
    du_max: float = 0.3
    y_min: float = -1.5
    y_max: float = 1.5
    max_internal_iters: int = 10
    du_tol: float = 1e-7
    err_tol: float = 1e-15

    def __post_init__(self):
        if not 1 <= self.Nu <= self.N:
            raise ValueError("need 1 <= Nu <= N")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not self.u_min < self.u_max:
            raise ValueError("need u_min < u_max")
        if not self.du_max > 0:
            raise ValueError("du_max must be > 0")
        if not self.y_min < self.y_max:
            raise ValueError("need y_min < y_max")
        if self.max_internal_iters < 1:
            raise ValueError("max_internal_iters must be >= 1")
        if not (self.du_tol > 0 and self.err_tol > 0):
            raise ValueError("tolerances must be > 0")


@dataclass
class TrajectoryLinearization:
    """Predicted outputs along ``U_prev`` and their sensitivity ``H``."""

    Y_prev: np.ndarray
    H: np.ndarray
    U_prev: np.ndarray

    def __post_init__(self):
        N, Nu = self.H.shape
        if self.Y_prev.shape != (N,) or self.U_prev.shape != (Nu,):
            raise ValueError("inconsistent linearization shapes")
        if not (np.all(np.isfinite(self.Y_prev)) and np.all(np.isfinite(self.H))):
            raise NonFiniteSensitivity("linearization contains non-finite values")


def lower_ones(n):
    return np.tril(np.ones((n, n)))


def horizon_inputs(model, U, N):
    """Inputs fed to ``model`` over ``N`` steps and their decision-variable index."""
    Nu = len(U)
    d = model.input_delay
    xs = np.empty(N)
    src = np.empty(N, dtype=np.int64)
    for p in range(N):
        if p < d:
            xs[p] = model.pending[p, 0]
            src[p] = -1
        else:
            q = min(p - d, Nu - 1)
            xs[p] = U[q]
            src[p] = q
    return xs, src


def _rollout(model, U, N, y_measured):
    U = np.asarray(U, dtype=float)
    xs, src = horizon_inputs(model, U, N)
    Y, H = model.horizon(xs, src, len(U))
    # constant output-disturbance correction
    Y = Y + (y_measured - model.last_output)
    return Y, H


def predict_trajectory(model, U, N, y_measured):
    """Predicted outputs ``y(k+1..k+N)`` along the control sequence ``U``.

    The model is not advanced; the prediction starts from its current state.
    """
    Y, _ = _rollout(model, U, N, y_measured)
    if not np.all(np.isfinite(Y)):
        raise NonFinitePrediction("horizon prediction is not finite")
    return Y


def sensitivity_matrix(model, U, N, Nu=None):
    """``H[p, q] = d y(k+p+1) / d u(k+q)`` along ``U`` (shape ``N x Nu``)."""
    U = np.asarray(U, dtype=float)
    if Nu is not None and len(U) != Nu:
        raise ValueError("len(U) must equal Nu")
    _, H = _rollout(model, U, N, model.last_output)
    if not np.all(np.isfinite(H)):
        raise NonFiniteSensitivity("sensitivity matrix is not finite")
    return H


def linearize(model, U, N, y_measured):
    Y, H = _rollout(model, U, N, y_measured)
    if not np.all(np.isfinite(Y)):
        raise NonFinitePrediction("horizon prediction is not finite")
    return TrajectoryLinearization(Y, H, np.asarray(U, dtype=float).copy())


@njit(cache=True)
def _hildreth(P, K, lam, n_sweeps, tol, blowup):
    """Dual coordinate ascent for ``min 0.5 l'Pl + K'l, l >= 0`` (in place).

    Returns 1 on convergence, -1 when the multipliers blow up (the primal
    problem is infeasible), 0 otherwise.
    """
    m = K.shape[0]
    for sweep in range(n_sweeps):
        change = 0.0
        scale = 0.0
        for i in range(m):
            w = K[i]
            for j in range(m):
                if j != i:
                    w += P[i, j] * lam[j]
            new = max(0.0, -w / P[i, i])
            change += (new - lam[i]) ** 2
            scale += new * new
            lam[i] = new
        if scale > blowup * blowup:
            return -1
        if change <= tol * tol * max(scale, 1.0):
            return 1
    return 0


def least_distance_qp(E, F, M, gamma):
    """Exact solution of ``min 0.5 x'Ex + F'x s.t. Mx <= gamma`` or ``None``.

    With ``E = L L'`` and ``z = L'x + L^-1 F`` the problem becomes the
    least-distance program ``min |z| s.t. G z <= h``, which is solved through
    one non-negative least-squares problem. ``None`` means infeasible.
    """
    L = cholesky(E, lower=True)
    Linv_F = solve_triangular(L, F, lower=True)
    G = solve_triangular(L, M.T, lower=True).T
    h = gamma + G @ Linv_F
    n = E.shape[0]
    A = np.vstack([-G.T, -h[None, :]])
    target = np.zeros(n + 1)
    target[n] = 1.0
    u, _ = nnls(A, target, maxiter=50 * A.shape[1])
    r = A @ u - target
    if abs(r[n]) < 1e-14:
        return None
    z = -r[:n] / r[n]
    return solve_triangular(L.T, z - Linv_F, lower=False)


def hildreth(E, F, M, gamma, max_sweeps=HILDRETH_SWEEPS, tol=HILDRETH_TOL):
    """Solve ``min 0.5 x'Ex + F'x s.t. Mx <= gamma``.

    Starts from the unconstrained minimiser; if that violates a constraint,
    runs dual coordinate ascent. If the sweeps do not converge the problem
    is finished exactly by ``least_distance_qp``. Returns ``(x, status)``
    with status 1 (solved) or -1 (infeasible).
    """
    x0 = -np.linalg.solve(E, F)
    if M.shape[0] == 0 or np.all(M @ x0 <= gamma):
        return x0, 1
    EinvMt = np.linalg.solve(E, M.T)
    P = M @ EinvMt
    K = gamma - M @ x0
    # rows with P_ii == 0 carry no information about x
    keep = np.diag(P) > 1e-14
    Pk = np.ascontiguousarray(P[np.ix_(keep, keep)])
    Kk = np.ascontiguousarray(K[keep])
    lam_k = np.zeros(Kk.shape[0])
    blowup = 1e12 * max(1.0, float(np.max(np.abs(Kk))))
    status = _hildreth(Pk, Kk, lam_k, max_sweeps, tol, blowup)
    lam = np.zeros(M.shape[0])
    lam[keep] = lam_k
    x = x0 - EinvMt @ lam
    if status == -1:
        return x, -1
    if status == 1:
        return x, 1
    exact = least_distance_qp(E, F, M, gamma)
    if exact is None:
        return x, -1
    return exact, 1


def _constraints(L, G, c, problem, u_prev):
    """Rows of ``M dU <= gamma`` for the box, rate and output limits."""
    Nu = L.shape[0]
    eye = np.eye(Nu)
    M_u = np.vstack([L, -L, eye, -eye])
    g_u = np.concatenate([
        np.full(Nu, problem.u_max - u_prev),
        np.full(Nu, u_prev - problem.u_min),
        np.full(Nu, problem.du_max),
        np.full(Nu, problem.du_max),
    ])
    # outputs not reachable by any decision (pure delay) cannot be constrained
    live = np.linalg.norm(G, axis=1) > 1e-12
    rows, rhs = [], []
    if math.isfinite(problem.y_max):
        rows.append(G[live])
        rhs.append(problem.y_max - c[live])
    if math.isfinite(problem.y_min):
        rows.append(-G[live])
        rhs.append(c[live] - problem.y_min)
    M_y = np.vstack(rows) if rows else np.zeros((0, Nu))
    g_y = np.concatenate(rhs) if rhs else np.zeros(0)
    return M_u, g_u, M_y, g_y


def solve_qp(lin, Y_sp, problem, u_prev):
    """Optimal increments ``dU`` for one linearization.

    Minimises ``||Y_sp - Y||^2 + lam * ||dU||^2`` with
    ``Y = Y_prev + H @ (L @ dU + u_prev - U_prev)`` under the control box,
    rate and output limits. When the output limits cannot be met they are
    relaxed through one slack variable with quadratic weight 1e6.
    """
    H = lin.H
    N, Nu = H.shape
    Y_sp = np.asarray(Y_sp, dtype=float)
    L = lower_ones(Nu)
    G = H @ L
    c = lin.Y_prev + H @ (np.full(Nu, u_prev) - lin.U_prev)
    hess = G.T @ G + problem.lam * np.eye(Nu)
    if np.linalg.cond(hess) > 1e14:
        log.warning("singular QP Hessian; adding 1e-8 ridge")
        hess = hess + 1e-8 * np.eye(Nu)
    E = 2.0 * hess
    F = -2.0 * G.T @ (Y_sp - c)
    M_u, g_u, M_y, g_y = _constraints(L, G, c, problem, u_prev)

    M = np.vstack([M_u, M_y])
    gamma = np.concatenate([g_u, g_y])
    dU, status = hildreth(E, F, M, gamma)
    if status == 1:
        return dU
    if M_y.shape[0] == 0:
        log.warning("QP: dual iteration did not converge")
        return dU

    # soften the output limits with one slack s = v / sqrt(weight), v >= 0;
    # optimising over v keeps the Hessian well conditioned
    m_y = M_y.shape[0]
    E_s = np.zeros((Nu + 1, Nu + 1))
    E_s[:Nu, :Nu] = E
    E_s[Nu, Nu] = 2.0
    F_s = np.concatenate([F, [0.0]])
    M_s = np.zeros((M_u.shape[0] + m_y + 1, Nu + 1))
    M_s[: M_u.shape[0], :Nu] = M_u
    M_s[M_u.shape[0] : -1, :Nu] = M_y
    M_s[M_u.shape[0] : -1, Nu] = -1.0 / math.sqrt(SOFT_OUTPUT_WEIGHT)
    M_s[-1, Nu] = -1.0
    g_s = np.concatenate([g_u, g_y, [0.0]])
    x, status = hildreth(E_s, F_s, M_s, g_s)
    if status != 1:
        log.warning("QP: softened dual iteration did not converge")
    return x[:Nu]


def qp_objective(lin, Y_sp, problem, u_prev, dU):
    Nu = lin.H.shape[1]
    U = lower_ones(Nu) @ dU + u_prev
    Y = lin.Y_prev + lin.H @ (U - lin.U_prev)
    return float(np.sum((Y_sp - Y) ** 2) + problem.lam * np.sum(np.asarray(dU) ** 2))


def clamp_move(u, u_prev, problem):
    """Project ``u`` onto the box and rate limits with exact float guarantees."""
    lo = max(problem.u_min, u_prev - problem.du_max)
    hi = min(problem.u_max, u_prev + problem.du_max)
    u = min(max(u, lo), hi)
    # u_prev +/- du_max can round past the rate limit; step back ulp by ulp
    while abs(u - u_prev) > problem.du_max:
        u = np.nextafter(u, u_prev)
    while u > problem.u_max:
        u = np.nextafter(u, -np.inf)
    while u < problem.u_min:
        u = np.nextafter(u, np.inf)
    return float(u)


@dataclass
class NplptResult:
    u: float
    U: np.ndarray
    iterations: int
    converged: bool
    step_norms: list


def nplpt_step(model, Y_sp, y_measured, u_prev, problem):
    """One control step: repeated linearization along the predicted trajectory.

    Iteration ``i`` linearizes the model along ``U^{i-1}`` (the first one
    along ``u_prev`` held constant), solves the QP and forms ``U^i``. Stops
    when ``max|U^i - U^{i-1}| < du_tol`` or the mean squared tracking error
    predicted by the model along ``U^i`` falls below ``err_tol``.
    """
    Nu, N = problem.Nu, problem.N
    L = lower_ones(Nu)
    U_prev = np.full(Nu, float(u_prev))
    Y_sp = np.asarray(Y_sp, dtype=float)
    norms = []
    converged = False
    i = 0
    for i in range(1, problem.max_internal_iters + 1):
        lin = linearize(model, U_prev, N, y_measured)
        # the model's own prediction along the current iterate, not the linear one
        if i > 1 and float(np.sum((Y_sp - lin.Y_prev) ** 2)) / N < problem.err_tol:
            converged = True
            i -= 1
            break
        dU = solve_qp(lin, Y_sp, problem, u_prev)
        U = L @ dU + u_prev
        step = float(np.max(np.abs(U - U_prev)))
        norms.append(step)
        U_prev = U
        if step < problem.du_tol:
            converged = True
            break
    u = clamp_move(float(U_prev[0]), float(u_prev), problem)
    return NplptResult(u, U_prev, i, converged, norms)
