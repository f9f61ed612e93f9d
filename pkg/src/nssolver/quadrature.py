"""Gauss quadrature rules on the reference interval, triangle, and mapped
triangles.

These rules are used for projections, error norms, and as an independent
check of the exactly precomputed reference tensors.  The time loop itself
never calls them.
"""

import numpy as np


def gauss_01(n):
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def interval_rule(degree):
    """Rule exact for 1D polynomials up to the given degree."""
    return gauss_01(max(1, (degree + 2) // 2))


def triangle_rule(degree):
    """Tensor rule on T_std via the Duffy map, exact to the given degree.

    Returns (points (n, 2), weights (n,)); weights sum to 1/2.
    """
    n = max(1, (degree + 3) // 2)
    a, wa = gauss_01(n)
    b, wb = gauss_01(n)
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    xi = (A * (1.0 - B)).ravel()
    eta = B.ravel()
    w = (WA * WB * (1.0 - B)).ravel()
    return np.stack([xi, eta], axis=1), w


def mapped_triangle_rule(corners, degree):
    """Quadrature on the triangle with the given corners (3, 2)."""
    pts, w = triangle_rule(degree)
    corners = np.asarray(corners, dtype=float)
    jac = np.stack([corners[1] - corners[0], corners[2] - corners[0]], axis=1)
    det = abs(np.linalg.det(jac))
    phys = pts @ jac.T + corners[0]
    return phys, w * det, pts


def map_points(corners, ref_pts):
    """Affine image of reference-triangle points for the given corners."""
    corners = np.asarray(corners, dtype=float)
    jac = np.stack([corners[1] - corners[0], corners[2] - corners[0]], axis=1)
    return np.asarray(ref_pts) @ jac.T + corners[0]
