"""Elman recurrent network with an optional input delay.

One hidden layer whose previous activation is fed back as context::

    h(k+1) = f(W_in @ x(k - d) + W_ctx @ h(k) + b_h)
    y(k+1) = w_out @ h(k+1) + b_out

``d`` is ``input_delay``; with ``d > 0`` the model carries its own FIFO of
past inputs. The recurrences are compiled with numba because they sit in
the innermost loop of both pretraining and the predictive controller.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .._validation import check_sequence, check_vector
from ..exceptions import DimensionMismatch

ACTIVATIONS = ("tanh", "linear")


@njit(cache=True)
def _act(a, linear):
    if linear:
        return a.copy(), np.ones_like(a)
    h = np.tanh(a)
    return h, 1.0 - h * h


@njit(cache=True)
def _run(W_in, W_ctx, b_h, w_out, b_out, h0, X, linear):
    n = X.shape[0]
    Y = np.empty(n)
    h = h0.copy()
    for k in range(n):
        a = W_in @ X[k] + W_ctx @ h + b_h
        h, _ = _act(a, linear)
        Y[k] = w_out @ h + b_out
    return Y, h


@njit(cache=True)
def _param_jacobian(W_in, W_ctx, b_h, w_out, b_out, h0, X, linear):
    """Outputs and their forward-mode derivatives w.r.t. the flat parameters.

    Flat order: W_in (row-major), W_ctx (row-major), b_h, w_out, b_out.
    The initial context ``h0`` is treated as a constant.
    """
    n, ni = X.shape
    nh = b_h.shape[0]
    o_ctx = nh * ni
    o_bh = o_ctx + nh * nh
    o_out = o_bh + nh
    n_par = o_out + nh + 1
    Y = np.empty(n)
    Jac = np.zeros((n, n_par))
    S = np.zeros((nh, n_par))
    h = h0.copy()
    for k in range(n):
        x = X[k]
        a = W_in @ x + W_ctx @ h + b_h
        dA = W_ctx @ S
        for i in range(nh):
            for j in range(ni):
                dA[i, i * ni + j] += x[j]
            for j in range(nh):
                dA[i, o_ctx + i * nh + j] += h[j]
            dA[i, o_bh + i] += 1.0
        h, fp = _act(a, linear)
        for i in range(nh):
            for p in range(n_par):
                S[i, p] = fp[i] * dA[i, p]
        Y[k] = w_out @ h + b_out
        row = w_out @ S
        for i in range(nh):
            row[o_out + i] += h[i]
        row[n_par - 1] += 1.0
        Jac[k] = row
    return Y, Jac


@njit(cache=True)
def _horizon(W_in, W_ctx, b_h, w_out, b_out, h0, xs, src, n_ctrl, linear):
    """Roll a single-input model over a horizon with input sensitivities.

    ``xs[p]`` is the input applied at horizon step ``p``; ``src[p]`` is the
    index of the decision variable it comes from, or -1 for inputs already
    committed (still travelling through the model's input delay).
    Returns ``Y[p] = y(k+p+1)`` and ``H[p, q] = dY[p] / d(control q)``.
    """
    n = xs.shape[0]
    nh = b_h.shape[0]
    win = W_in[:, 0]
    Y = np.empty(n)
    H = np.zeros((n, n_ctrl))
    S = np.zeros((nh, n_ctrl))
    h = h0.copy()
    for p in range(n):
        a = win * xs[p] + W_ctx @ h + b_h
        dA = W_ctx @ S
        q = src[p]
        if q >= 0:
            dA[:, q] += win
        h, fp = _act(a, linear)
        for i in range(nh):
            for c in range(n_ctrl):
                S[i, c] = fp[i] * dA[i, c]
        Y[p] = w_out @ h + b_out
        H[p] = w_out @ S
    return Y, H


class ElmanModel:
    """Stateful Elman network; weights and context are plain arrays.

    Parameters
    ----------
    n_hidden : int
        Width of the hidden (and context) layer.
    n_inputs : int
        Width of the input vector.
    input_delay : int
        Number of steps each input waits before entering the network.
    activation : {"tanh", "linear"}
        Hidden-layer activation; "linear" gives an exactly linear model.
    """

    def __init__(self, n_hidden=5, n_inputs=1, input_delay=0, activation="tanh"):
        if n_hidden < 1 or n_inputs < 1:
            raise ValueError("n_hidden and n_inputs must be >= 1")
        if int(input_delay) != input_delay or input_delay < 0:
            raise ValueError("input_delay must be a non-negative integer")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.n_hidden = int(n_hidden)
        self.n_inputs = int(n_inputs)
        self.input_delay = int(input_delay)
        self.activation = activation
        self.W_in = np.zeros((n_hidden, n_inputs))
        self.W_ctx = np.zeros((n_hidden, n_hidden))
        self.b_h = np.zeros(n_hidden)
        self.w_out = np.zeros(n_hidden)
        self.b_out = 0.0
        self.reset_state()

    @classmethod
    def random(cls, rng, n_hidden=5, n_inputs=1, input_delay=0, activation="tanh", scale=0.1):
        """Weights and initial context drawn uniformly from ``(-scale, scale)``."""
        model = cls(n_hidden, n_inputs, input_delay, activation)
        model.set_flat(rng.uniform(-scale, scale, model.n_params))
        model.reset_state(rng.uniform(-scale, scale, n_hidden))
        return model

    @property
    def linear(self):
        return self.activation == "linear"

    @property
    def n_params(self):
        nh, ni = self.n_hidden, self.n_inputs
        return nh * ni + nh * nh + 2 * nh + 1

    def get_flat(self):
        return np.concatenate(
            [self.W_in.ravel(), self.W_ctx.ravel(), self.b_h, self.w_out, [self.b_out]]
        )

    def set_flat(self, theta):
        theta = check_vector(theta, self.n_params, "theta")
        nh, ni = self.n_hidden, self.n_inputs
        i = 0
        self.W_in = theta[i : i + nh * ni].reshape(nh, ni).copy()
        i += nh * ni
        self.W_ctx = theta[i : i + nh * nh].reshape(nh, nh).copy()
        i += nh * nh
        self.b_h = theta[i : i + nh].copy()
        i += nh
        self.w_out = theta[i : i + nh].copy()
        self.b_out = float(theta[-1])

    def _weights(self, theta=None):
        if theta is None:
            return self.W_in, self.W_ctx, self.b_h, self.w_out, self.b_out
        nh, ni = self.n_hidden, self.n_inputs
        a, b = nh * ni, nh * ni + nh * nh
        return (
            theta[:a].reshape(nh, ni),
            theta[a:b].reshape(nh, nh),
            theta[b : b + nh],
            theta[b + nh : b + 2 * nh],
            float(theta[-1]),
        )

    # -- state -----------------------------------------------------------

    def reset_state(self, context=None, pending=None):
        """Set the context vector and the inputs still inside the delay line."""
        if context is None:
            context = np.zeros(self.n_hidden)
        self.context = check_vector(context, self.n_hidden, "context").copy()
        if pending is None:
            pending = np.zeros((self.input_delay, self.n_inputs))
        pending = np.asarray(pending, dtype=float).reshape(self.input_delay, self.n_inputs)
        self.pending = pending.copy()
        self.last_output = float(self.w_out @ self.context + self.b_out)

    def get_state(self):
        return self.context.copy(), self.pending.copy()

    def copy(self):
        other = ElmanModel(self.n_hidden, self.n_inputs, self.input_delay, self.activation)
        other.set_flat(self.get_flat())
        other.reset_state(*self.get_state())
        return other

    def _shift_in(self, x):
        if self.input_delay == 0:
            return x
        out = self.pending[0].copy()
        self.pending[:-1] = self.pending[1:]
        self.pending[-1] = x
        return out

    def forward(self, u_in):
        """Feed one input sample, advance the context, return ``y(k+1)``."""
        x = check_vector(u_in, self.n_inputs, "u_in")
        x = self._shift_in(x)
        Y, h = _run(*self._weights(), self.context, x[None, :], self.linear)
        self.context = h
        self.last_output = float(Y[0])
        return self.last_output

    def run(self, U, advance=False):
        """Outputs for a whole input sequence starting from the current state."""
        X = check_sequence(U, "U")
        if X.shape[1] != self.n_inputs:
            raise DimensionMismatch(f"expected {self.n_inputs} input columns, got {X.shape[1]}")
        X_eff = self.delayed_inputs(X)
        Y, h = _run(*self._weights(), self.context, X_eff, self.linear)
        if advance:
            self.context = h
            if self.input_delay:
                full = np.vstack([self.pending, X])
                self.pending = full[-self.input_delay :].copy()
            self.last_output = float(Y[-1])
        return Y

    def delayed_inputs(self, X):
        """The inputs the hidden layer actually sees for a sequence ``X``."""
        if self.input_delay == 0:
            return np.ascontiguousarray(X)
        full = np.vstack([self.pending, X])
        return np.ascontiguousarray(full[: X.shape[0]])

    def param_jacobian(self, X_eff, theta=None, context=None):
        """Outputs and ``dY/dtheta`` for already-delayed inputs ``X_eff``."""
        h0 = self.context if context is None else context
        return _param_jacobian(*self._weights(theta), h0, X_eff, self.linear)

    def outputs(self, X_eff, theta=None, context=None):
        h0 = self.context if context is None else context
        return _run(*self._weights(theta), h0, X_eff, self.linear)[0]

    def horizon(self, xs, src, n_ctrl):
        """Rollout + input sensitivities over a horizon (single-input models)."""
        if self.n_inputs != 1:
            raise DimensionMismatch("horizon sensitivities need a single-input model")
        return _horizon(
            *self._weights(),
            self.context,
            np.ascontiguousarray(xs, dtype=float),
            np.ascontiguousarray(src, dtype=np.int64),
            int(n_ctrl),
            self.linear,
        )

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "kind": "elman",
            "n_hidden": self.n_hidden,
            "n_inputs": self.n_inputs,
            "input_delay": self.input_delay,
            "activation": self.activation,
            "W_in": self.W_in.tolist(),
            "W_ctx": self.W_ctx.tolist(),
            "b_h": self.b_h.tolist(),
            "w_out": self.w_out.tolist(),
            "b_out": self.b_out,
            "context": self.context.tolist(),
            "pending": self.pending.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("kind") != "elman":
            raise ValueError(f"not an Elman snapshot: kind={doc.get('kind')!r}")
        model = cls(doc["n_hidden"], doc["n_inputs"], doc["input_delay"], doc["activation"])
        model.W_in = np.asarray(doc["W_in"], dtype=float).reshape(model.n_hidden, model.n_inputs)
        model.W_ctx = np.asarray(doc["W_ctx"], dtype=float).reshape(model.n_hidden, model.n_hidden)
        model.b_h = np.asarray(doc["b_h"], dtype=float)
        model.w_out = np.asarray(doc["w_out"], dtype=float)
        model.b_out = float(doc["b_out"])
        pending = np.asarray(doc.get("pending", []), dtype=float)
        model.reset_state(np.asarray(doc["context"], dtype=float), pending if pending.size else None)
        return model


def elman_forward(model, u_in):
    return model.forward(u_in)
