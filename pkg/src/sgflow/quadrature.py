"""Quadrature rules on the reference triangle and reference edge.

Triangle rules are conical-product (Duffy) rules built from Gauss-Legendre
and Gauss-Jacobi nodes, so a rule of any requested polynomial degree is
generated exactly rather than copied from tables.  The reference triangle
is {(x, y) : x >= 0, y >= 0, x + y <= 1}.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (points, weights) exact for polynomials of total degree <= degree.

    points has shape (nq, 2), weights shape (nq,); weights sum to 1/2
    (the reference-triangle area).
    """
    if degree < 1:
        degree = 1
    n = (degree + 2) // 2  # 2n-1 >= degree in each collapsed direction
    xg, wg = np.polynomial.legendre.leggauss(n)
    # map from [-1, 1] to [0, 1]
    xg = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    # Gauss-Jacobi with weight (1 - t) on [0, 1] absorbs the Duffy Jacobian
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xj = 0.5 * (xj + 1.0)
    wj = 0.25 * wj  # interval scaling 1/2 and weight scaling (1-t)/2
    pts = np.empty((n * n, 2))
    wts = np.empty(n * n)
    k = 0
    for i in range(n):
        for j in range(n):
            eta = xj[i]
            xi = xg[j]
            pts[k] = (xi * (1.0 - eta), eta)
            wts[k] = wj[i] * wg[j]
            k += 1
    return pts, wts


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1], exact to the given degree."""
    n = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
