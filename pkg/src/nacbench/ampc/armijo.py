"""Backtracking step-size selection with the Armijo sufficient-decrease rule."""

import math

MAX_SHRINKS = 50


def backtrack(loss, slope, eta0=1.0, shrink=0.5, c=1e-4, loss0=None, max_shrinks=MAX_SHRINKS):
    """Largest ``eta0 * shrink**m`` with ``loss(eta) <= loss(0) - c * eta * slope``.

    ``slope`` is the magnitude of the directional derivative along the search
    direction; for steepest descent it is the squared gradient norm.
    Returns ``(eta, loss(eta))``. After ``max_shrinks`` rejected trials the
    step is abandoned and ``(0.0, loss(0))`` is returned.
    """
    if not eta0 > 0:
        raise ValueError("eta0 must be > 0")
    if not 0 < shrink < 1:
        raise ValueError("shrink must lie in (0, 1)")
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    f0 = loss(0.0) if loss0 is None else loss0
    eta = eta0
    for _ in range(max_shrinks + 1):
        f = loss(eta)
        if math.isfinite(f) and f <= f0 - c * eta * slope:
            return eta, f
        eta *= shrink
    return 0.0, f0


def armijo_search(loss, grad_norm_sq, eta0=1.0, shrink=0.5, c=1e-4):
    """Accepted step size for a steepest-descent step (0.0 when none is found)."""
    return backtrack(loss, grad_norm_sq, eta0, shrink, c)[0]
