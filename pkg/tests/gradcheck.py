"""Central finite-difference gradient oracle used across the test suite."""

import numpy as np


def fd_gradient(f, x, h=1e-5):
    """Numeric gradient of scalar f at x by central differences, perturbing in place."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        keep = flat_x[i]
        flat_x[i] = keep + h
        f_plus = f(x)
        flat_x[i] = keep - h
        f_minus = f(x)
        flat_x[i] = keep
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def rel_error(analytic, numeric):
    """Max absolute difference, normalized by the larger gradient magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-10)
    return float(np.abs(analytic - numeric).max() / scale)
