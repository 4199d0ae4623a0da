import numpy as np


def finite_diff_jacobian(f, x, eps=1e-6):
    """Central-difference Jacobian of ``f`` at ``x``; shape ``(len(f(x)), len(x))``."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    x = np.asarray(x, dtype=float).ravel()
    cols = []
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = eps
        hi = np.atleast_1d(np.asarray(f(x + step), dtype=float)).ravel()
        lo = np.atleast_1d(np.asarray(f(x - step), dtype=float)).ravel()
        cols.append((hi - lo) / (2.0 * eps))
    return np.column_stack(cols)
