"""Dense, self-organizing and Hebbian layers.

Weights are stored ``(n_inputs, n_outputs)`` so a forward pass is
``activation(x @ W)``. A neuron's prototype is the column ``W[:, j]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .._validation import check_vector
from ..exceptions import DimensionMismatch

ACTIVATIONS = ("tanh", "linear")


def _activate(a, activation):
    return np.tanh(a) if activation == "tanh" else a


def _check_weights(weights):
    W = np.array(weights, dtype=float, ndmin=2)
    if W.ndim != 2:
        raise ValueError("weights must be a 2-D matrix")
    if not np.all(np.isfinite(W)):
        raise ValueError("weights must be finite")
    return W


@dataclass
class DenseLayer:
    weights: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.weights = _check_weights(self.weights)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def n_inputs(self):
        return self.weights.shape[0]

    @property
    def n_outputs(self):
        return self.weights.shape[1]

    @classmethod
    def random(cls, rng, n_inputs, n_outputs, activation="tanh", scale=0.1):
        return cls(rng.uniform(-scale, scale, (n_inputs, n_outputs)), activation)

    def forward(self, x):
        return dense_forward(self, x)

    def derivative(self, out):
        """Elementwise activation derivative given the layer output."""
        if self.activation == "tanh":
            return 1.0 - out * out
        return np.ones_like(out)

    def to_dict(self):
        return {"kind": "dense", "activation": self.activation, "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["weights"], dtype=float), doc["activation"])


def dense_forward(layer, x):
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != layer.n_inputs:
        raise DimensionMismatch(f"expected {layer.n_inputs} inputs, got {x.shape[0]}")
    return _activate(x @ layer.weights, layer.activation)


@dataclass
class SomLayer(DenseLayer):
    """Winner-takes-most layer on a 1-D neuron line.

    The neighbourhood strength decays as ``l0 * exp(-k / K_L)`` and its
    width shrinks geometrically from ``xi0`` to ``xif`` over ``K_L`` steps.
    """

    l0: float = 5e-5
    xi0: float = 7e-5
    xif: float = 5e-5
    K_L: int = 150_000

    def __post_init__(self):
        super().__post_init__()
        if not 0 < self.l0 <= 1:
            raise ValueError("l0 must lie in (0, 1]")
        if not (0 < self.xif <= self.xi0 <= 1):
            raise ValueError("need 0 < xif <= xi0 <= 1")
        if not self.K_L > 0:
            raise ValueError("K_L must be > 0")

    @classmethod
    def random(cls, rng, n_inputs, n_outputs, activation="tanh", scale=0.1, **schedule):
        return cls(rng.uniform(-scale, scale, (n_inputs, n_outputs)), activation, **schedule)

    def strength(self, k):
        return self.l0 * math.exp(-k / self.K_L)

    def width(self, k):
        return self.xi0 * (self.xif / self.xi0) ** (k / self.K_L)

    def winner(self, x):
        """Index of the closest prototype (lowest index on ties)."""
        x = check_vector(x, self.n_inputs, "x")
        dist = np.linalg.norm(self.weights - x[:, None], axis=0)
        return int(np.argmin(dist))

    def to_dict(self):
        doc = super().to_dict()
        doc.update(kind="som", l0=self.l0, xi0=self.xi0, xif=self.xif, K_L=self.K_L)
        return doc

    @classmethod
    def from_dict(cls, doc):
        return cls(
            np.asarray(doc["weights"], dtype=float), doc["activation"],
            doc["l0"], doc["xi0"], doc["xif"], doc["K_L"],
        )


def som_neighborhood(layer, k, r):
    """``l(k) * exp(-r^2 / (2 xi(k)^2))`` for grid distance ``r`` at step ``k``."""
    xi = layer.width(k)
    r2 = np.square(np.asarray(r, dtype=float))
    # far past K_L the width underflows to 0; the winner keeps exponent 0
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = np.where(r2 == 0.0, 0.0, -r2 / (2.0 * xi * xi))
    return layer.strength(k) * np.exp(expo)


def som_update(layer, x, k):
    """Move every prototype toward ``x``; return the winner index.

    ``h`` stays within ``[0, l0]`` with ``l0 <= 1``, so each step is a convex
    combination and can never push a prototype past ``x``.
    """
    x = check_vector(x, layer.n_inputs, "x")
    win = layer.winner(x)
    r = np.abs(np.arange(layer.n_outputs) - win)
    h = som_neighborhood(layer, k, r)
    layer.weights = layer.weights + h[None, :] * (x[:, None] - layer.weights)
    return win


@dataclass
class HebbianLayer(DenseLayer):
    """Linear layer trained by Hebb's rule with a forgetting term."""

    activation: str = "linear"
    gamma_h: float = 1e-4
    delta_h: float = 1e-6

    def __post_init__(self):
        super().__post_init__()
        if not (0 < self.gamma_h < 1 and 0 < self.delta_h < 1):
            raise ValueError("gamma_h and delta_h must lie in (0, 1)")

    @classmethod
    def random(cls, rng, n_inputs, n_outputs, activation="linear", scale=0.1, **rates):
        return cls(rng.uniform(-scale, scale, (n_inputs, n_outputs)), activation, **rates)

    def to_dict(self):
        doc = super().to_dict()
        doc.update(kind="hebbian", gamma_h=self.gamma_h, delta_h=self.delta_h)
        return doc

    @classmethod
    def from_dict(cls, doc):
        return cls(
            np.asarray(doc["weights"], dtype=float), doc["activation"],
            doc["gamma_h"], doc["delta_h"],
        )


def hebbian_update(layer, x, y_prev):
    """``W += gamma_h * outer(x, y_prev) - delta_h * W * y_prev`` (column-wise decay)."""
    x = check_vector(x, layer.n_inputs, "x")
    y_prev = check_vector(y_prev, layer.n_outputs, "y_prev")
    W = layer.weights
    layer.weights = W + layer.gamma_h * np.outer(x, y_prev) - layer.delta_h * W * y_prev[None, :]
    return layer
