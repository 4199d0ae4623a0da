"""Offline identification of the Elman process model before closed-loop use."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_sequence, check_vector
from ..ann.elman import ElmanModel
from ..plant import NOMINAL_PARAMS, ParamSchedule, Plant
from .armijo import backtrack

log = logging.getLogger(__name__)

DIRECTIONS = ("gauss_newton", "gradient")


@dataclass(frozen=True)
class PretrainSpec:
    """Excitation and stopping rule for model pretraining.

    The plant is driven open loop by ``amplitude * sin(w * t)`` for each
    amplitude in turn, one ``segment_duration`` per amplitude.
    """

    amplitudes: tuple = (0.8, 0.6, 0.5)
    angular_frequency: float = math.pi / 4
    segment_duration: float = 8.0
    mse_target: float = 1e-15
    max_passes: int = 5000
    direction: str = "gauss_newton"
    eta0: float = 1.0
    shrink: float = 0.5
    c: float = 1e-4
    restarts: int = 10
    probe_passes: int = 100
    plateau_ratio: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")
        if self.restarts < 1 or self.probe_passes < 1:
            raise ValueError("restarts and probe_passes must be >= 1")
        if not 0 < self.plateau_ratio < 1:
            raise ValueError("plateau_ratio must be in (0, 1)")


def excitation_data(spec, ts, delay_steps=0, params=NOMINAL_PARAMS):
    """Simulate the open-loop plant under the excitation; return ``(u, y)``.

    ``y[k]`` is the measured output one step after ``u[k]`` was applied.
    """
    n_seg = int(round(spec.segment_duration / ts))
    u = np.concatenate(
        [a * np.sin(spec.angular_frequency * np.arange(n_seg) * ts) for a in spec.amplitudes]
    )
    plant = Plant(ParamSchedule(((0.0, params),)), delay_steps=delay_steps, ts=ts)
    y = np.array([plant.step(uk) for uk in u])
    return u, y


@dataclass
class PretrainResult:
    model: ElmanModel
    mse_history: list
    passes: int
    reached_target: bool
    draws: list = None

    @property
    def final_mse(self):
        return self.mse_history[-1]


def fit_sequence(model, U, y, mse_target=1e-15, max_passes=5000, direction="gauss_newton",
                 eta0=1.0, shrink=0.5, c=1e-4, damping=100.0, max_step=0.5):
    """Batch identification of ``model`` on one input/output record.

    Each pass computes the full-record output Jacobian (forward-mode through
    the recurrence), forms a search direction and takes the Armijo step.
    ``direction="gradient"`` is plain steepest descent; ``"gauss_newton"``
    uses the damped Gauss-Newton (Levenberg-Marquardt) direction. The model
    is updated in place; its context is restored to the initial one.
    """
    X = check_sequence(U, "U")
    y = check_vector(y, X.shape[0], "y")
    X_eff = model.delayed_inputs(X)
    h0 = model.context.copy()
    n = y.shape[0]
    theta = model.get_flat()

    def mse(th):
        r = model.outputs(X_eff, th, h0) - y
        value = float(r @ r) / n
        return value if math.isfinite(value) else math.inf

    Y, Jac = model.param_jacobian(X_eff, theta, h0)
    r = Y - y
    f = float(r @ r) / n
    history = [f]
    passes = 0
    while f > mse_target and passes < max_passes:
        passes += 1
        g = (2.0 / n) * (Jac.T @ r)
        if direction == "gradient":
            d = -g
        else:
            A = Jac.T @ Jac
            diag = np.diag(A).copy()
            diag[diag == 0] = 1.0
            d = -np.linalg.solve(A + damping * np.diag(diag), Jac.T @ r)
        # keep any single weight from jumping into tanh saturation
        big = np.max(np.abs(d))
        if big > max_step:
            d *= max_step / big
        slope = -float(g @ d)
        if not slope > 0:
            log.warning("pretraining: no descent direction at pass %d", passes)
            break
        eta, f_new = backtrack(lambda e: mse(theta + e * d), slope, eta0, shrink, c, loss0=f)
        # sufficient decrease must hold for every accepted step
        assert f_new <= f - c * eta * slope, "Armijo condition violated"
        if direction == "gauss_newton":
            predicted = f - float(np.sum((r + Jac @ d) ** 2)) / n
            ratio = (f - f_new) / predicted if predicted > 0 else 0.0
            if eta == eta0 and ratio > 0.75:
                damping = max(damping / 3.0, 1e-15)
            elif eta < eta0 or ratio < 0.25:
                damping = min(damping * 2.0, 1e10)
        if eta == 0.0:
            if direction == "gradient" or damping >= 1e10:
                history.append(f)
                break
            history.append(f)
            continue
        theta = theta + eta * d
        Y, Jac = model.param_jacobian(X_eff, theta, h0)
        r = Y - y
        f = float(r @ r) / n
        history.append(f)
    model.set_flat(theta)
    model.reset_state(h0)
    return PretrainResult(model, history, passes, f <= mse_target)


def pretrain_elman(model, spec=None, ts=0.01, delay_steps=0, params=NOMINAL_PARAMS, rng=None):
    """Pretrain ``model`` on the sinusoidal excitation record.

    See ``fit_with_restarts`` for the role of ``rng``. Running out of passes
    is not an error: the result reports whether the target was reached and
    the final MSE.
    """
    spec = spec or PretrainSpec()
    u, y = excitation_data(spec, ts, delay_steps, params)
    return fit_with_restarts(model, u, y, spec, rng)


def fit_with_restarts(model, U, y, spec, rng=None):
    """``fit_sequence`` with fresh weight draws for starts that stall.

    Some initial weights stall on a plateau where the hidden layer saturates.
    With ``rng`` given, a draw whose MSE has not fallen by ``plateau_ratio``
    after ``probe_passes`` is replaced by a fresh draw of the same shape, up
    to ``restarts`` draws; all draws share the ``max_passes`` budget. The
    best draw is returned.
    """
    budget = spec.max_passes
    draws = []
    best = None
    for draw in range(spec.restarts if rng is not None else 1):
        if draw:
            model = ElmanModel.random(
                rng, model.n_hidden, model.n_inputs, model.input_delay, model.activation
            )
        result = _fit(model, U, y, spec, min(spec.probe_passes, budget) if rng is not None else budget)
        budget -= result.passes
        history = list(result.mse_history)
        left_plateau = result.final_mse < spec.plateau_ratio * history[0]
        if not result.reached_target and left_plateau and budget > 0:
            result = _fit(model, U, y, spec, budget)
            budget -= result.passes
            history.extend(result.mse_history[1:])
        draws.append(history)
        if best is None or history[-1] < best[1][-1]:
            best = (result.model, history, result.reached_target)
        if result.reached_target or left_plateau or budget <= 0:
            break
    model, history, reached = best
    out = PretrainResult(model, history, spec.max_passes - budget, reached, draws)
    if not reached:
        log.info(
            "pretraining budget exhausted after %d passes, final MSE %.3g (target %.1g)",
            out.passes, out.final_mse, spec.mse_target,
        )
    return out


def _fit(model, U, y, spec, passes):
    return fit_sequence(
        model, U, y, spec.mse_target, max(passes, 1), spec.direction,
        spec.eta0, spec.shrink, spec.c,
    )


class ElmanRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` identifies an Elman model on a sequence.

    ``X`` is the input sequence (one row per step), ``y`` the output one step
    after each input. Sequences are treated as one contiguous record.
    Stalled starts are redrawn as in ``fit_with_restarts``.
    """

    def __init__(self, n_hidden=5, input_delay=0, activation="tanh", mse_target=1e-15,
                 max_passes=5000, direction="gauss_newton", restarts=10, random_state=None):
        self.n_hidden = n_hidden
        self.input_delay = input_delay
        self.activation = activation
        self.mse_target = mse_target
        self.max_passes = max_passes
        self.direction = direction
        self.restarts = restarts
        self.random_state = random_state

    def fit(self, X, y):
        X = check_sequence(X, "X")
        rng = np.random.default_rng(self.random_state)
        model = ElmanModel.random(
            rng, self.n_hidden, X.shape[1], self.input_delay, self.activation
        )
        spec = PretrainSpec(
            mse_target=self.mse_target, max_passes=self.max_passes,
            direction=self.direction, restarts=self.restarts,
        )
        result = fit_with_restarts(model, X, y, spec, rng)
        self.model_ = result.model
        self.mse_history_ = result.mse_history
        self.n_passes_ = result.passes
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_sequence(X, "X")
        return self.model_.copy().run(X)
