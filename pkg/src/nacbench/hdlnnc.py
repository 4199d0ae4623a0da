"""Hybrid deep-learning neural controller with a DRNN plant model.

Signal path per step::

    [e, de, d2e] -> SOM -> SOM -> Hebbian -> MLFF (tanh, tanh, linear) -> CV

The SOM and Hebbian stages learn unsupervised. The MLFF stage follows the
tracking error through the plant Jacobian estimated by an online diagonal
recurrent network, with per-weight step sizes that keep a quadratic error
energy non-increasing.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_positive, check_unit_interval
from .ann.drnn import DrnnModel
from .ann.layers import DenseLayer, HebbianLayer, SomLayer, hebbian_update, som_update
from .exceptions import NonFiniteGradient, NonFiniteOutput

log = logging.getLogger(__name__)

CV_MODES = ("incremental", "absolute")
GRADIENT_TIMINGS = ("previous", "current")
INPUT_NORMS = ("signal", "weights")


def adaptive_rate(alpha, beta, phi, de_dw):
    """``alpha / (phi * (1 + (beta / phi) * de_dw**2))``, elementwise."""
    if not np.all(np.asarray(phi) > 0):
        raise ValueError("phi must be > 0")
    g = np.asarray(de_dw, dtype=float)
    return alpha / (phi * (1.0 + (beta / phi) * g * g))


def _max_abs_or_one(W):
    m = float(np.max(np.abs(W))) if np.size(W) else 0.0
    return m if m > 0 else 1.0


def drnn_rates(model, x=None, input_norm="signal"):
    """Per-layer step sizes ``(eta_O, eta_D, eta_I)`` of the online DRNN.

    ``eta_I`` is scaled by the largest absolute entry of the current input
    ``x`` (``input_norm="signal"``) or of the input weights
    (``input_norm="weights"``). Zero maxima count as 1.
    """
    net = model.net if isinstance(model, DrnnOnlineModel) else model
    n_h = net.n_hidden
    if n_h < 1:
        raise ValueError("need at least one hidden neuron")
    if input_norm not in INPUT_NORMS:
        raise ValueError(f"input_norm must be one of {INPUT_NORMS}")
    if input_norm == "signal" and x is None:
        raise ValueError("the signal norm needs the current input vector")
    eta_o = 2.0 / n_h
    wo = _max_abs_or_one(net.output_weights)
    wi = _max_abs_or_one(x if input_norm == "signal" else net.input_weights)
    eta_d = eta_o / wo**2
    eta_i = eta_d / wi**2
    return eta_o, eta_d, eta_i


class DrnnOnlineModel:
    """DRNN identified online, with recursive sensitivities for the diagonal and
    input weights. Input vector is ``[cv(k-1), pv(k-1)]`` and the target is
    ``pv(k)``.
    """

    def __init__(self, net, input_norm="signal"):
        if input_norm not in INPUT_NORMS:
            raise ValueError(f"input_norm must be one of {INPUT_NORMS}")
        self.net = net
        self.input_norm = input_norm
        self.P = np.zeros(net.n_hidden)
        self.Q = np.zeros((net.n_hidden, net.n_inputs))
        self.jacobian = 0.0
        self.last_error = 0.0

    @classmethod
    def random(cls, rng, n_hidden, n_inputs=2, scale=0.1, input_norm="signal"):
        return cls(DrnnModel.random(rng, n_hidden, n_inputs, scale), input_norm)

    def update(self, x, pv, advance=True):
        """One gradient step on ``0.5 * e_mod^2``; return ``e_mod`` before the step.

        With ``advance=False`` the hidden state and sensitivities are left
        untouched, which lets a sample be presented repeatedly.
        """
        net = self.net
        x = np.asarray(x, dtype=float)
        h_prev = net.hidden
        hn = np.tanh(net.pre_activation(x, h_prev))
        e_mod = float(pv - net.output_weights @ hn)
        fp = 1.0 - hn * hn
        D = net.recurrent_weights
        P = fp * (h_prev + D * self.P)
        Q = fp[:, None] * (x[None, :] + D[:, None] * self.Q)
        eta_o, eta_d, eta_i = drnn_rates(net, x, self.input_norm)
        O = net.output_weights
        g_o, g_d, g_i = hn, O * P, O[:, None] * Q
        if not (math.isfinite(e_mod) and np.all(np.isfinite(g_d)) and np.all(np.isfinite(g_i))):
            log.warning("DRNN: non-finite gradient, update skipped")
            raise NonFiniteGradient("DRNN gradient is not finite")
        net.output_weights = O + eta_o * e_mod * g_o
        net.recurrent_weights = D + eta_d * e_mod * g_d
        net.input_weights = net.input_weights + eta_i * e_mod * g_i
        if advance:
            net.hidden = hn
            self.P, self.Q = P, Q
        self.last_error = e_mod
        return e_mod

    def estimate_jacobian(self, x, index=0):
        self.jacobian = self.net.input_jacobian(x, index)
        return self.jacobian


def drnn_online_update(model, cv, pv, pv_prev=None):
    """Update the DRNN on sample ``([cv, pv_prev] -> pv)``; return ``(model, jacobian)``.

    The returned Jacobian is ``d(model output)/d cv`` at the new state.
    """
    pv_prev = pv if pv_prev is None else pv_prev
    try:
        model.update(np.array([cv, pv_prev]), pv)
    except NonFiniteGradient:
        pass
    return model, model.estimate_jacobian(np.array([cv, pv]))


class HdlnncController(BaseEstimator):
    """HDL feature stage + MLFF output stage + DRNN plant model.

    Parameters
    ----------
    som_sizes : tuple of int
        Widths of the two SOM layers.
    n_features : int
        Width of the Hebbian output (and of the error-feature vector).
    mlff_hidden : tuple of int
        Hidden widths of the MLFF stage; its output width is 1.
    drnn_hidden : int
        Hidden width of the DRNN plant model.
    alpha, beta, phi : float
        Coefficients of the adaptive MLFF step size.
    cv_mode : {"incremental", "absolute"}
        ``incremental`` adds the MLFF output to the previous CV.
    error_gain, output_gain : float
        Scale the error features entering the HDL stage and the MLFF output.
    cv_limit : float or None
        Symmetric saturation of CV; ``None`` disables it.
    gradient_timing : {"previous", "current"}
        Which forward pass the MLFF update differentiates: the one that
        produced the CV behind the current error, or the one just computed.
    drnn_input_norm : {"signal", "weights"}
        What scales the DRNN input-layer step size (see ``drnn_rates``).
    """

    def __init__(self, som_sizes=(10, 10), n_features=3, mlff_hidden=(10, 5), drnn_hidden=10,
                 alpha=0.09, beta=0.9, phi=0.1, l0=5e-5, xi0=7e-5, xif=5e-5, K_L=150_000,
                 gamma_h=1e-4, delta_h=1e-6, cv_mode="incremental", error_gain=100.0,
                 output_gain=1.0, cv_limit=None, gradient_timing="previous",
                 drnn_input_norm="signal", random_state=None):
        self.som_sizes = som_sizes
        self.n_features = n_features
        self.mlff_hidden = mlff_hidden
        self.drnn_hidden = drnn_hidden
        self.alpha = alpha
        self.beta = beta
        self.phi = phi
        self.l0 = l0
        self.xi0 = xi0
        self.xif = xif
        self.K_L = K_L
        self.gamma_h = gamma_h
        self.delta_h = delta_h
        self.cv_mode = cv_mode
        self.error_gain = error_gain
        self.output_gain = output_gain
        self.cv_limit = cv_limit
        self.gradient_timing = gradient_timing
        self.drnn_input_norm = drnn_input_norm
        self.random_state = random_state

    # -- construction ------------------------------------------------------

    def initialize(self):
        """Draw all weights; hidden states start at random values too."""
        check_unit_interval(self.alpha, "alpha")
        check_unit_interval(self.beta, "beta")
        check_unit_interval(self.phi, "phi")
        if self.cv_mode not in CV_MODES:
            raise ValueError(f"cv_mode must be one of {CV_MODES}")
        if self.gradient_timing not in GRADIENT_TIMINGS:
            raise ValueError(f"gradient_timing must be one of {GRADIENT_TIMINGS}")
        check_positive(self.error_gain, "error_gain")
        check_positive(self.output_gain, "output_gain")
        if self.cv_limit is not None:
            check_positive(self.cv_limit, "cv_limit")
        rng = np.random.default_rng(self.random_state)
        sched = dict(l0=self.l0, xi0=self.xi0, xif=self.xif, K_L=self.K_L)
        s1, s2 = self.som_sizes
        nf = int(self.n_features)
        self.som1_ = SomLayer.random(rng, nf, s1, **sched)
        self.som2_ = SomLayer.random(rng, s1, s2, **sched)
        self.hebb_ = HebbianLayer.random(rng, s2, nf, gamma_h=self.gamma_h, delta_h=self.delta_h)
        widths = (nf, *self.mlff_hidden, 1)
        self.mlff_ = [
            DenseLayer.random(rng, a, b, "tanh" if i < len(widths) - 2 else "linear")
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))
        ]
        self.drnn_ = DrnnOnlineModel.random(
            rng, int(self.drnn_hidden), input_norm=self.drnn_input_norm
        )
        self.drnn_.net.hidden = rng.uniform(-0.1, 0.1, int(self.drnn_hidden))
        self.reset_signals()
        return self

    def reset_signals(self):
        self.errors_ = np.zeros(3)
        self.hdl_out_ = np.zeros(int(self.n_features))
        self.cv_ = 0.0
        self.pv_prev_ = 0.0
        self.k_ = 0
        self.cache_ = None
        self.jac_prev_ = 0.0
        return self

    # -- pieces --------------------------------------------------------------

    def features(self, e_con):
        """Scaled ``[e, de, d2e]`` given the new error and the stored history."""
        e1, e2 = self.errors_[0], self.errors_[1]
        return self.error_gain * np.array([e_con, e_con - e1, e_con - 2.0 * e1 + e2])

    def hdl_forward(self, x):
        a1 = self.som1_.forward(x)
        a2 = self.som2_.forward(a1)
        return a1, a2, self.hebb_.forward(a2)

    def mlff_forward(self, z):
        acts = [np.asarray(z, dtype=float)]
        for layer in self.mlff_:
            acts.append(layer.forward(acts[-1]))
        return acts

    def mlff_gradients(self, acts):
        """``d(output) / dW`` for every MLFF layer by backpropagation."""
        grads = [None] * len(self.mlff_)
        delta = np.ones(1)
        for i in range(len(self.mlff_) - 1, -1, -1):
            layer = self.mlff_[i]
            delta = delta * layer.derivative(acts[i + 1])
            grads[i] = np.outer(acts[i], delta)
            delta = layer.weights @ delta
        return grads

    # -- per-step operations --------------------------------------------------

    def step(self, y_measured, reference):
        """Full control step for measured output ``y_measured`` and setpoint ``r(k)``."""
        r = float(np.ravel(reference)[0])
        y = float(y_measured)
        e = r - y
        if self.k_ > 0:
            drnn_online_update(self.drnn_, self.cv_, y, self.pv_prev_)
        else:
            self.drnn_.estimate_jacobian(np.array([self.cv_, y]))
        jac = self.drnn_.jacobian
        prev_acts, prev_jac = self.cache_, self.jac_prev_
        hdl_learn(self, self.features(e), self.k_)
        cv = hdlnnc_control(self, e)
        if self.gradient_timing == "current":
            mlffnn_update(self, e, jac)
        elif prev_acts is not None:
            # e(k) was produced by CV(k-1): differentiate that forward pass
            mlffnn_update(self, e, prev_jac, prev_acts)
        self.jac_prev_ = jac
        self.pv_prev_ = y
        self.k_ += 1
        return cv


def hdl_learn(ctrl, x, k):
    """SOM layers move toward their current inputs; the Hebbian layer learns
    from its input and the previous HDL output."""
    som_update(ctrl.som1_, x, k)
    a1 = ctrl.som1_.forward(x)
    som_update(ctrl.som2_, a1, k)
    a2 = ctrl.som2_.forward(a1)
    hebbian_update(ctrl.hebb_, a2, ctrl.hdl_out_)
    return ctrl


def hdlnnc_control(ctrl, e_con):
    """Compute CV from the new tracking error and push it into the history."""
    x = ctrl.features(e_con)
    _, _, z = ctrl.hdl_forward(x)
    acts = ctrl.mlff_forward(z)
    out = ctrl.output_gain * float(acts[-1][0])
    cv = ctrl.cv_ + out if ctrl.cv_mode == "incremental" else out
    if ctrl.cv_limit is not None:
        cv = min(max(cv, -ctrl.cv_limit), ctrl.cv_limit)
    if not math.isfinite(cv):
        raise NonFiniteOutput(f"controller output is not finite at step {ctrl.k_}")
    ctrl.errors_ = np.array([e_con, ctrl.errors_[0], ctrl.errors_[1]])
    ctrl.hdl_out_ = z
    ctrl.cache_ = acts
    ctrl.cv_ = cv
    return cv


def mlffnn_update(ctrl, e_con, plant_jacobian, acts=None):
    """``W += eta * e * J * dCV/dW`` with per-weight Lyapunov step sizes.

    ``acts`` are the MLFF activations to differentiate; by default those
    cached by the last ``hdlnnc_control`` call.
    """
    acts = ctrl.cache_ if acts is None else acts
    if acts is None:
        raise ValueError("no forward pass to update from")
    grads = ctrl.mlff_gradients(acts)
    scale = ctrl.output_gain
    new = []
    for layer, g in zip(ctrl.mlff_, grads):
        dcv = scale * g
        de_dw = -plant_jacobian * dcv
        if not np.all(np.isfinite(de_dw)):
            log.warning("MLFF: non-finite gradient at step %d, update skipped", ctrl.k_)
            return ctrl
        eta = adaptive_rate(ctrl.alpha, ctrl.beta, ctrl.phi, de_dw)
        new.append(layer.weights + eta * e_con * plant_jacobian * dcv)
    for layer, W in zip(ctrl.mlff_, new):
        layer.weights = W
    return ctrl
