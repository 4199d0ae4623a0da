"""Closed-loop adaptive predictive controller around an Elman process model."""

from __future__ import annotations

import logging
import math
from collections import deque

import numpy as np
from sklearn.base import BaseEstimator

from ..ann.elman import _run
from ..exceptions import NonFiniteGradient, SimulationAbort
from .armijo import backtrack
from .mpc import MpcProblem, nplpt_step

log = logging.getLogger(__name__)

SETPOINT_MODES = ("hold", "preview")


def adapt_model_online(model, u_applied, y_measured, depth=1, history=None,
                       eta0=1.0, shrink=0.5, c=1e-4):
    """One Armijo gradient step on ``0.5 * (y - y_hat)^2``, then advance the model.

    ``y_hat`` is the model's response to ``u_applied``. Gradients are
    truncated to ``depth`` steps: the context ``depth`` steps back is held
    constant. ``history`` is a deque of ``(context, effective_input)`` pairs
    maintained across calls (needed only for ``depth > 1``).
    Returns ``(prediction_error_before, step_size)``.
    """
    x_now = model._shift_in(np.array([float(u_applied)]))
    if history is None:
        history = deque(maxlen=depth)
    history.append((model.context.copy(), x_now.copy()))
    h_start = history[0][0]
    X_eff = np.array([x for _, x in history])
    theta = model.get_flat()
    Y, Jac = model.param_jacobian(X_eff, theta, h_start)
    err = float(y_measured - Y[-1])
    grad = -err * Jac[-1]
    g2 = float(grad @ grad)
    eta = 0.0
    if not (math.isfinite(g2) and math.isfinite(err)):
        log.warning("online adaptation: non-finite gradient, step skipped")
    elif g2 > 0.0:
        f0 = 0.5 * err * err

        def loss(e):
            r = y_measured - model.outputs(X_eff, theta - e * grad, h_start)[-1]
            return 0.5 * r * r

        eta, _ = backtrack(loss, g2, eta0, shrink, c, loss0=f0)
        if eta > 0.0:
            model.set_flat(theta - eta * grad)
    # advance the context with the (possibly updated) weights
    Yn, h = _advance(model, model.context, x_now)
    model.context = h
    model.last_output = Yn
    return err, eta


def _advance(model, context, x_eff):
    Y, h = _run(*model._weights(), context, x_eff[None, :], model.linear)
    return float(Y[0]), h


def adapt_step(model, u_applied, y_measured):
    """Single-sample adaptation with depth-1 truncation (see ``adapt_model_online``)."""
    if not (math.isfinite(u_applied) and math.isfinite(y_measured)):
        raise NonFiniteGradient("non-finite adaptation sample")
    return adapt_model_online(model, u_applied, y_measured)


class AmpcController(BaseEstimator):
    """Adaptive MPC with repeated linearization along the predicted trajectory.

    Parameters
    ----------
    model : ElmanModel
        Pretrained process model; the controller works on its own copy.
    problem : MpcProblem
    adapt : bool
        Adapt the model online every step.
    truncation_depth : int
        Steps of backpropagation for the online gradient.
    setpoint_mode : {"hold", "preview"}
        ``hold`` repeats the current setpoint over the horizon; ``preview``
        uses the known reference samples ``r(k+1..k+N)``.
    """

    def __init__(self, model=None, problem=None, adapt=True, truncation_depth=1,
                 setpoint_mode="preview", armijo_eta0=1.0, armijo_shrink=0.5, armijo_c=1e-4):
        self.model = model
        self.problem = problem
        self.adapt = adapt
        self.truncation_depth = truncation_depth
        self.setpoint_mode = setpoint_mode
        self.armijo_eta0 = armijo_eta0
        self.armijo_shrink = armijo_shrink
        self.armijo_c = armijo_c
        self.reset()

    def reset(self):
        if self.setpoint_mode not in SETPOINT_MODES:
            raise ValueError(f"setpoint_mode must be one of {SETPOINT_MODES}")
        if int(self.truncation_depth) < 1:
            raise ValueError("truncation_depth must be >= 1")
        self.problem_ = self.problem or MpcProblem()
        self.model_ = self.model.copy() if self.model is not None else None
        self.u_prev_ = 0.0
        self.started_ = False
        self.history_ = deque(maxlen=int(self.truncation_depth))
        self.last_result_ = None
        return self

    def setpoints(self, reference):
        """Horizon setpoint vector from ``reference = r(k), r(k+1), ...``."""
        N = self.problem_.N
        ref = np.asarray(reference, dtype=float).ravel()
        if self.setpoint_mode == "hold" or ref.size == 1:
            return np.full(N, ref[0])
        ahead = ref[1 : N + 1]
        if ahead.size < N:
            ahead = np.concatenate([ahead, np.full(N - ahead.size, ref[-1])])
        return ahead

    def step(self, y_measured, reference):
        """Control for the current step given the measured output.

        ``reference`` holds ``r(k)`` first, optionally followed by future
        samples. On a prediction or QP failure the last control is held.
        """
        if self.model_ is None:
            raise ValueError("controller has no process model")
        y_measured = float(y_measured)
        if self.started_:
            if self.adapt:
                adapt_model_online(
                    self.model_, self.u_prev_, y_measured, int(self.truncation_depth),
                    self.history_, self.armijo_eta0, self.armijo_shrink, self.armijo_c,
                )
            else:
                self.model_.forward([self.u_prev_])
        self.started_ = True
        try:
            res = nplpt_step(
                self.model_, self.setpoints(reference), y_measured, self.u_prev_, self.problem_
            )
        except (SimulationAbort, np.linalg.LinAlgError) as exc:
            log.warning("predictive step failed (%s); holding last control", exc)
            return self.u_prev_
        self.last_result_ = res
        self.u_prev_ = res.u
        return res.u
