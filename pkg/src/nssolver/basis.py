"""Nodal Lagrange bases on the reference triangle, the split reference square,
and the reference time interval, plus their space-time tensor products.

All bases interpolate on equidistant nodes.  Coefficients are obtained once
per degree by solving the node-interpolation system in exact rational
arithmetic, then rounded to float64; evaluation is a dense
coefficient-times-monomial product.

Reference domains:
  T_std   triangle  {(xi, eta): xi >= 0, eta >= 0, xi + eta <= 1}
  R_std   square    [0, 1]^2, split along the diagonal xi + eta = 1 into
          T_I = {xi + eta <= 1} and T_II = {xi + eta >= 1}
  I_std   interval  [0, 1]

Node orderings (fixed, relied upon everywhere else):
  triangle:  (k1/p, k2/p) listed with k2 as the outer loop, k1 inner
  square:    the full tensor grid (i/p, j/p), j outer, i inner
  temporal:  k/p_gamma ascending (a single node at tau = 1 for p_gamma = 0)
  space-time: index = spatial_index * N_gamma + temporal_index
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

P_MAX = 4
P_GAMMA_MAX = 4

_EDGE_TOL = 1e-12


class BasisError(ValueError):
    """Raised for unsupported degrees or points outside the reference element."""


@dataclass(frozen=True)
class DiscretizationOrder:
    """Spatial degree p and temporal degree p_gamma of the discretization."""

    p: int
    p_gamma: int

    def __post_init__(self):
        if not 1 <= self.p <= P_MAX:
            raise BasisError(
                f"spatial degree p={self.p} outside the supported range "
                f"[1, {P_MAX}] (p=0 gives pressure no room to couple with "
                "the staggered velocity space)")
        if not 0 <= self.p_gamma <= P_GAMMA_MAX:
            raise BasisError(
                f"temporal degree p_gamma={self.p_gamma} outside the "
                f"supported range [0, {P_GAMMA_MAX}]")

    @property
    def n_phi(self):
        return (self.p + 1) * (self.p + 2) // 2

    @property
    def n_psi(self):
        return (self.p + 1) ** 2

    @property
    def n_gamma(self):
        return self.p_gamma + 1


# ---------------------------------------------------------------------------
# exact rational helpers
# ---------------------------------------------------------------------------

def _solve_exact(a_rows, b_rows):
    """Solve A X = B with Fraction entries by Gauss-Jordan elimination."""
    n = len(a_rows)
    m = len(b_rows[0])
    a = [list(row) for row in a_rows]
    b = [list(row) for row in b_rows]
    for col in range(n):
        piv = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        b[col], b[piv] = b[piv], b[col]
        inv = Fraction(1, 1) / a[col][col]
        a[col] = [v * inv for v in a[col]]
        b[col] = [v * inv for v in b[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [vr - f * vc for vr, vc in zip(a[r], a[col])]
                b[r] = [vr - f * vc for vr, vc in zip(b[r], b[col])]
    return b


def triangle_multi_indices(p):
    """Multi-indices (k1, k2) of the triangle nodes, in canonical order."""
    return [(k1, k2) for k2 in range(p + 1) for k1 in range(p + 1 - k2)]


def _tri_monomials(p):
    """Exponent pairs spanning polynomials of total degree <= p."""
    return triangle_multi_indices(p)


@lru_cache(maxsize=None)
def _tri_coeffs_exact(p):
    """Exact monomial coefficients of the triangle Lagrange basis.

    Returns a list of dicts {(a, b): Fraction}, one per basis function,
    ordered like the nodes.
    """
    if p < 1:
        raise BasisError("triangle basis requires p >= 1")
    idx = triangle_multi_indices(p)
    monos = _tri_monomials(p)
    nodes = [(Fraction(k1, p), Fraction(k2, p)) for k1, k2 in idx]
    vand = [[x ** a * y ** b for a, b in monos] for x, y in nodes]
    eye = [[Fraction(1 if i == j else 0) for j in range(len(idx))]
           for i in range(len(idx))]
    cols = _solve_exact(vand, eye)
    # cols[m][k] = coefficient of monomial m in phi_k
    return [{monos[m]: cols[m][k] for m in range(len(monos))
             if cols[m][k] != 0}
            for k in range(len(idx))]


def _poly_eval_exact(poly, x, y):
    return sum(c * x ** a * y ** b for (a, b), c in poly.items())


def _poly_compose_affine(poly, ax, bx, cx, ay, by, cy):
    """Substitute xi -> ax*u + bx*v + cx, eta -> ay*u + by*v + cy exactly."""
    from itertools import product as _product

    def expand_power(coefs_u, coefs_v, coefs_c, n):
        # multinomial expansion of (cu*u + cv*v + cc)^n as a dict poly
        out = {}
        from math import comb
        for i in range(n + 1):
            for j in range(n - i + 1):
                k = n - i - j
                c = comb(n, i) * comb(n - i, j)
                out[(i, j)] = out.get((i, j), Fraction(0)) + \
                    Fraction(c) * coefs_u ** i * coefs_v ** j * coefs_c ** k
        return out

    result = {}
    cache_x, cache_y = {}, {}
    for (a, b), c in poly.items():
        if a not in cache_x:
            cache_x[a] = expand_power(ax, bx, cx, a)
        if b not in cache_y:
            cache_y[b] = expand_power(ay, by, cy, b)
        for (i1, j1), c1 in cache_x[a].items():
            for (i2, j2), c2 in cache_y[b].items():
                key = (i1 + i2, j1 + j2)
                result[key] = result.get(key, Fraction(0)) + c * c1 * c2
    return {k: v for k, v in result.items() if v != 0}


def _poly_mul(p1, p2):
    out = {}
    for (a1, b1), c1 in p1.items():
        for (a2, b2), c2 in p2.items():
            key = (a1 + a2, b1 + b2)
            out[key] = out.get(key, Fraction(0)) + c1 * c2
    return out


def _poly_diff(poly, var):
    out = {}
    for (a, b), c in poly.items():
        if var == 0 and a > 0:
            out[(a - 1, b)] = out.get((a - 1, b), Fraction(0)) + a * c
        elif var == 1 and b > 0:
            out[(a, b - 1)] = out.get((a, b - 1), Fraction(0)) + b * c
    return out


def _tri_moment(a, b):
    """Exact integral of xi^a eta^b over T_std: a! b! / (a+b+2)!."""
    from math import factorial
    return Fraction(factorial(a) * factorial(b), factorial(a + b + 2))


def _poly_integrate_tstd(poly):
    return sum(c * _tri_moment(a, b) for (a, b), c in poly.items())


@lru_cache(maxsize=None)
def _square_coeffs_exact(p):
    """Exact piecewise coefficients of the split-square basis.

    For each of the (p+1)^2 tensor nodes returns a pair of dict polynomials
    (restriction to T_I, restriction to T_II), both written in square
    coordinates.  Nodes strictly inside one sub-triangle get the zero
    polynomial on the other; functions of diagonal nodes are nonzero on both
    sides and continuous across the diagonal by the shared 1D trace.
    """
    tri = _tri_coeffs_exact(p)
    pos = {k: i for i, k in enumerate(triangle_multi_indices(p))}
    basis = []
    for j in range(p + 1):
        for i in range(p + 1):
            if i + j <= p:
                on_i = tri[pos[(i, j)]]
            else:
                on_i = {}
            if i + j >= p:
                mirrored = tri[pos[(p - i, p - j)]]
                on_ii = _poly_compose_affine(
                    mirrored,
                    Fraction(-1), Fraction(0), Fraction(1),
                    Fraction(0), Fraction(-1), Fraction(1))
            else:
                on_ii = {}
            basis.append((on_i, on_ii))
    return basis


@lru_cache(maxsize=None)
def _temporal_coeffs_exact(p_gamma):
    """Exact 1D monomial coefficients of the temporal Lagrange basis."""
    if p_gamma == 0:
        return [[Fraction(1)]]
    nodes = [Fraction(k, p_gamma) for k in range(p_gamma + 1)]
    vand = [[t ** a for a in range(p_gamma + 1)] for t in nodes]
    eye = [[Fraction(1 if i == j else 0) for j in range(p_gamma + 1)]
           for i in range(p_gamma + 1)]
    cols = _solve_exact(vand, eye)
    return [[cols[a][k] for a in range(p_gamma + 1)]
            for k in range(p_gamma + 1)]


# ---------------------------------------------------------------------------
# float evaluation tables
# ---------------------------------------------------------------------------

def _as_longdouble(frac):
    # splitting numerator/denominator keeps ~18 significant digits
    return np.longdouble(frac.numerator) / np.longdouble(frac.denominator)


@lru_cache(maxsize=None)
def _tri_tables(p):
    monos = _tri_monomials(p)
    mono_pos = {m: i for i, m in enumerate(monos)}
    polys = _tri_coeffs_exact(p)
    n = len(polys)
    coeff = np.zeros((n, len(monos)), dtype=np.longdouble)
    for k, poly in enumerate(polys):
        for m, c in poly.items():
            coeff[k, mono_pos[m]] = _as_longdouble(c)
    dcoeff = np.zeros((2, n, len(monos)), dtype=np.longdouble)
    for k, poly in enumerate(polys):
        for var in (0, 1):
            for m, c in _poly_diff(poly, var).items():
                dcoeff[var, k, mono_pos[m]] = _as_longdouble(c)
    exps = np.array(monos)
    return coeff, dcoeff, exps


@lru_cache(maxsize=None)
def _square_tables(p):
    monos = _tri_monomials(p)
    mono_pos = {m: i for i, m in enumerate(monos)}
    pairs = _square_coeffs_exact(p)
    n = len(pairs)
    coeff = np.zeros((2, n, len(monos)), dtype=np.longdouble)
    dcoeff = np.zeros((2, 2, n, len(monos)), dtype=np.longdouble)
    for k, (on_i, on_ii) in enumerate(pairs):
        for side, poly in enumerate((on_i, on_ii)):
            for m, c in poly.items():
                coeff[side, k, mono_pos[m]] = _as_longdouble(c)
            for var in (0, 1):
                for m, c in _poly_diff(poly, var).items():
                    dcoeff[side, var, k, mono_pos[m]] = _as_longdouble(c)
    exps = np.array(monos)
    return coeff, dcoeff, exps


def _monomial_values(exps, x, y):
    x = np.longdouble(x)
    y = np.longdouble(y)
    return (x ** exps[:, 0]) * (y ** exps[:, 1])


# ---------------------------------------------------------------------------
# public node layouts
# ---------------------------------------------------------------------------

def triangle_nodes(p):
    """Equidistant interpolation nodes (k1/p, k2/p) on T_std."""
    if not 1 <= p <= P_MAX:
        raise BasisError(f"triangle nodes require 1 <= p <= {P_MAX}, got {p}")
    return np.array([(k1 / p, k2 / p) for k1, k2 in triangle_multi_indices(p)])


def square_nodes(p):
    """The (p+1)^2 tensor-grid nodes of the split square."""
    if not 1 <= p <= P_MAX:
        raise BasisError(f"square nodes require 1 <= p <= {P_MAX}, got {p}")
    return np.array([(i / p, j / p)
                     for j in range(p + 1) for i in range(p + 1)])


def temporal_nodes(p_gamma):
    """Equidistant nodes on I_std = [0, 1]; a single node at 1 for degree 0."""
    if not 0 <= p_gamma <= P_GAMMA_MAX:
        raise BasisError(
            f"temporal nodes require 0 <= p_gamma <= {P_GAMMA_MAX}, "
            f"got {p_gamma}")
    if p_gamma == 0:
        return np.array([1.0])
    return np.linspace(0.0, 1.0, p_gamma + 1)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def eval_triangle_basis(p, point):
    """Values and gradients of the triangle basis at a reference point.

    Returns (values, gradients) with shapes (N_phi,) and (N_phi, 2).
    """
    xi, eta = float(point[0]), float(point[1])
    if xi < -_EDGE_TOL or eta < -_EDGE_TOL or xi + eta > 1.0 + _EDGE_TOL:
        raise BasisError(f"point ({xi}, {eta}) lies outside T_std")
    coeff, dcoeff, exps = _tri_tables(p)
    mono = _monomial_values(exps, xi, eta)
    values = (coeff @ mono).astype(float)
    grads = np.stack([dcoeff[0] @ mono, dcoeff[1] @ mono], axis=1)
    return values, grads.astype(float)


def eval_square_basis(p, point, side=None):
    """Values and gradients of the split-square basis at a reference point.

    ``side`` may force the sub-triangle polynomial ("I" or "II") for points
    on the diagonal; by default the T_I polynomial is used there (the two
    agree in value by continuity, gradients may differ).
    """
    xi, eta = float(point[0]), float(point[1])
    if not (-_EDGE_TOL <= xi <= 1.0 + _EDGE_TOL
            and -_EDGE_TOL <= eta <= 1.0 + _EDGE_TOL):
        raise BasisError(f"point ({xi}, {eta}) lies outside R_std")
    if side is None:
        s = 0 if xi + eta <= 1.0 + _EDGE_TOL else 1
    else:
        s = {"I": 0, "II": 1, 0: 0, 1: 1}[side]
    coeff, dcoeff, exps = _square_tables(p)
    mono = _monomial_values(exps, xi, eta)
    values = (coeff[s] @ mono).astype(float)
    grads = np.stack([dcoeff[s, 0] @ mono, dcoeff[s, 1] @ mono], axis=1)
    return values, grads.astype(float)


def eval_temporal_basis(p_gamma, tau):
    """Values and first derivatives of the temporal basis at tau in [0, 1]."""
    t = float(tau)
    coeffs = _temporal_coeffs_exact(p_gamma)
    n = p_gamma + 1
    values = np.empty(n)
    derivs = np.empty(n)
    for k, poly in enumerate(coeffs):
        values[k] = sum(float(c) * t ** a for a, c in enumerate(poly))
        derivs[k] = sum(a * float(c) * t ** (a - 1)
                        for a, c in enumerate(poly) if a > 0)
    return values, derivs


def tri_batch_eval(p, pts, gradients=False):
    """Triangle basis at many points: (npts, N_phi) values and, optionally,
    (npts, N_phi, 2) gradients.  Points are not range-checked."""
    coeff, dcoeff, exps = _tri_tables(p)
    pts = np.asarray(pts, dtype=np.longdouble)
    mono = (pts[:, 0:1] ** exps[:, 0]) * (pts[:, 1:2] ** exps[:, 1])
    values = (mono @ coeff.T).astype(float)
    if not gradients:
        return values
    grads = np.stack([mono @ dcoeff[0].T, mono @ dcoeff[1].T],
                     axis=2).astype(float)
    return values, grads


def square_batch_eval(p, pts, side, gradients=False):
    """Split-square basis at many points of one forced sub-triangle."""
    s = {"I": 0, "II": 1, 0: 0, 1: 1}[side]
    coeff, dcoeff, exps = _square_tables(p)
    pts = np.asarray(pts, dtype=np.longdouble)
    mono = (pts[:, 0:1] ** exps[:, 0]) * (pts[:, 1:2] ** exps[:, 1])
    values = (mono @ coeff[s].T).astype(float)
    if not gradients:
        return values
    grads = np.stack([mono @ dcoeff[s, 0].T, mono @ dcoeff[s, 1].T],
                     axis=2).astype(float)
    return values, grads


def temporal_batch_eval(p_gamma, taus):
    """Temporal basis values at many points: (ntau, N_gamma)."""
    coeffs = _temporal_coeffs_exact(p_gamma)
    taus = np.asarray(taus, dtype=float)
    out = np.zeros((len(taus), p_gamma + 1))
    for k, poly in enumerate(coeffs):
        for a, c in enumerate(poly):
            out[:, k] += float(c) * taus ** a
    return out


def eval_spacetime_basis(order, element_kind, point):
    """Tensor-product space-time basis at (xi, eta, tau).

    Index convention: spatial-major, i.e. function (a, b) sits at
    a * N_gamma + b.  Returns (values, space_gradients, time_derivatives)
    with shapes (N,), (N, 2) and (N,).
    """
    xi, eta, tau = point
    if element_kind == "triangle":
        sv, sg = eval_triangle_basis(order.p, (xi, eta))
    elif element_kind == "square":
        sv, sg = eval_square_basis(order.p, (xi, eta))
    else:
        raise BasisError(f"unknown element kind {element_kind!r}")
    tv, td = eval_temporal_basis(order.p_gamma, tau)
    values = np.outer(sv, tv).ravel()
    grads = (sg[:, None, :] * tv[None, :, None]).reshape(-1, 2)
    tderivs = np.outer(sv, td).ravel()
    return values, grads, tderivs
