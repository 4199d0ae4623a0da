"""Diagonal recurrent network: one tanh hidden layer, one self-loop per neuron."""

from __future__ import annotations

import numpy as np

from .._validation import check_vector


class DrnnModel:
    """``h' = tanh(I @ x + D * h)``, ``y = O @ h'``; no biases.

    ``input_weights`` is ``(n_hidden, n_inputs)``; ``recurrent_weights``
    holds only the diagonal, so there are no cross-neuron recurrences.
    """

    def __init__(self, input_weights, recurrent_weights, output_weights, hidden=None):
        self.input_weights = np.array(input_weights, dtype=float, ndmin=2)
        self.recurrent_weights = check_vector(recurrent_weights, self.n_hidden, "recurrent_weights").copy()
        self.output_weights = check_vector(output_weights, self.n_hidden, "output_weights").copy()
        self.hidden = np.zeros(self.n_hidden) if hidden is None else check_vector(hidden, self.n_hidden, "hidden").copy()

    @classmethod
    def random(cls, rng, n_hidden, n_inputs, scale=0.1):
        return cls(
            rng.uniform(-scale, scale, (n_hidden, n_inputs)),
            rng.uniform(-scale, scale, n_hidden),
            rng.uniform(-scale, scale, n_hidden),
            rng.uniform(-scale, scale, n_hidden),
        )

    @property
    def n_hidden(self):
        return self.input_weights.shape[0]

    @property
    def n_inputs(self):
        return self.input_weights.shape[1]

    def pre_activation(self, x, hidden=None):
        h = self.hidden if hidden is None else hidden
        return self.input_weights @ x + self.recurrent_weights * h

    def forward(self, u_in):
        return drnn_forward(self, u_in)

    def input_jacobian(self, x, index=0):
        """``d y / d x[index]`` for the next step from the current hidden state."""
        x = check_vector(x, self.n_inputs, "x")
        hn = np.tanh(self.pre_activation(x))
        return float(self.output_weights @ ((1.0 - hn * hn) * self.input_weights[:, index]))

    def copy(self):
        return DrnnModel(self.input_weights, self.recurrent_weights, self.output_weights, self.hidden)

    def to_dict(self):
        return {
            "kind": "drnn",
            "input_weights": self.input_weights.tolist(),
            "recurrent_weights": self.recurrent_weights.tolist(),
            "output_weights": self.output_weights.tolist(),
            "hidden": self.hidden.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["input_weights"], doc["recurrent_weights"], doc["output_weights"], doc["hidden"])


def drnn_forward(model, u_in):
    """Advance the hidden state by one input sample and return the output."""
    x = check_vector(u_in, model.n_inputs, "u_in")
    model.hidden = np.tanh(model.pre_activation(x))
    return float(model.output_weights @ model.hidden)
