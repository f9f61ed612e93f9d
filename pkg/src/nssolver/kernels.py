"""Reference-element integral tensors and quadrature-free element assembly.

Every integral the time loop needs is computed here once, in exact rational
arithmetic, on the reference elements (triangle, split square, interval).
Physical element matrices are then pure contractions of these tensors with
per-element geometric coefficients (determinants, inverse Jacobians, edge
normals and lengths), so no quadrature loop ever runs during time stepping.

The coupling between the two staggered function spaces happens in a finite
set of reference configurations.  A dual quad half lives inside one primary
triangle; pulled back to that triangle's frame it is always the sub-triangle
spanned by the centroid and one of the three edges, and the change of frame
between the triangle's coordinates and the quad's coordinates is one of six
fixed affine maps (three local edges, seen from the left or from the right
triangle).  The mixed tensors are precomputed per configuration.

Reference boundary segments of a quad (quad-frame paths, parameter sigma
runs from the barycenter corner to the vertex corner):

    0: (sigma, 0)        side I,  towards E0
    1: (0, sigma)        side I,  towards E1
    2: (1, 1 - sigma)    side II, towards E0
    3: (1 - sigma, 1)    side II, towards E1
"""

from dataclasses import dataclass, fields
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .basis import (
    DiscretizationOrder,
    _poly_compose_affine,
    _poly_diff,
    _poly_eval_exact,
    _poly_integrate_tstd,
    _poly_mul,
    _square_coeffs_exact,
    _temporal_coeffs_exact,
    _tri_coeffs_exact,
    square_nodes,
    temporal_nodes,
    triangle_multi_indices,
    triangle_nodes,
)

TENSOR_FORMAT_VERSION = "nssolver-tensors-1"

_F = Fraction
_CENTROID = (_F(1, 3), _F(1, 3))
_CORNERS = ((_F(0), _F(0)), (_F(1), _F(0)), (_F(0), _F(1)))


# ---------------------------------------------------------------------------
# exact helpers
# ---------------------------------------------------------------------------

def _affine_from_points(src, dst):
    """Exact affine map (m, t) with dst_i = m @ src_i + t for three points."""
    (x0, y0), (x1, y1), (x2, y2) = src
    (u0, v0), (u1, v1), (u2, v2) = dst
    dx1, dy1 = x1 - x0, y1 - y0
    dx2, dy2 = x2 - x0, y2 - y0
    det = dx1 * dy2 - dx2 * dy1
    du1, dv1 = u1 - u0, v1 - v0
    du2, dv2 = u2 - u0, v2 - v0
    m00 = (du1 * dy2 - du2 * dy1) / det
    m01 = (du2 * dx1 - du1 * dx2) / det
    m10 = (dv1 * dy2 - dv2 * dy1) / det
    m11 = (dv2 * dx1 - dv1 * dx2) / det
    t0 = u0 - m00 * x0 - m01 * y0
    t1 = v0 - m10 * x0 - m11 * y0
    return (m00, m01, m10, m11), (t0, t1)


def _compose_with_map(poly, m, t):
    m00, m01, m10, m11 = m
    return _poly_compose_affine(poly, m00, m01, t[0], m10, m11, t[1])


def _region_moments(corners, max_deg):
    """Exact integrals of xi^a eta^b over the triangle with given corners."""
    (p0, p1, p2) = corners
    mx = (p1[0] - p0[0], p2[0] - p0[0], p0[0])
    my = (p1[1] - p0[1], p2[1] - p0[1], p0[1])
    det = abs(mx[0] * my[1] - mx[1] * my[0])
    moments = {}
    for a in range(max_deg + 1):
        for b in range(max_deg + 1 - a):
            composed = _poly_compose_affine(
                {(a, b): _F(1)}, mx[0], mx[1], mx[2], my[0], my[1], my[2])
            moments[(a, b)] = det * _poly_integrate_tstd(composed)
    return moments


def _integrate_region(p1, p2, moments):
    total = _F(0)
    for (a1, b1), c1 in p1.items():
        for (a2, b2), c2 in p2.items():
            total += c1 * c2 * moments[(a1 + a2, b1 + b2)]
    return total


def _line_poly(poly, x0, dx, y0, dy, max_deg):
    """Restrict a 2D polynomial to the segment (x0 + s*dx, y0 + s*dy)."""
    from math import comb
    out = [_F(0)] * (max_deg + 1)
    pow_cache = {}

    def lin_pow(c0, c1, n):
        key = (c0, c1, n)
        if key not in pow_cache:
            pow_cache[key] = [comb(n, k) * c0 ** (n - k) * c1 ** k
                              for k in range(n + 1)]
        return pow_cache[key]

    for (a, b), c in poly.items():
        pa = lin_pow(x0, dx, a)
        pb = lin_pow(y0, dy, b)
        for i, ca in enumerate(pa):
            for j, cb in enumerate(pb):
                out[i + j] += c * ca * cb
    return out


def _line_integral(c1, c2):
    total = _F(0)
    for i, a in enumerate(c1):
        for j, b in enumerate(c2):
            if a and b:
                total += a * b / (i + j + 1)
    return total


def _to_float(x):
    if isinstance(x, list):
        return [_to_float(v) for v in x]
    return float(x)


# ---------------------------------------------------------------------------
# reference tensors
# ---------------------------------------------------------------------------

@dataclass
class ReferenceTensors:
    """All reference-element integrals needed by the scheme, exact to
    float64 rounding; see the module docstring for the conventions."""

    p: int
    p_gamma: int
    tri_nodes: np.ndarray      # (N_phi, 2)
    sq_nodes: np.ndarray       # (N_psi, 2)
    sq_node_side: np.ndarray   # (N_psi,) 0 if on T_I (diagonal included)
    tau_nodes: np.ndarray      # (N_gamma,)
    tri_mass: np.ndarray       # (N_phi, N_phi)
    sq_mass: np.ndarray        # (2, N_psi, N_psi) per side
    sq_grad: np.ndarray        # (2, 2, N_psi, N_psi) [side, dir]
    sq_stiff: np.ndarray       # (2, 2, 2, N_psi, N_psi) [side, d1, d2]
    mixed_vol: np.ndarray      # (2, 3, 2, N_psi, N_phi) [side, edge, dir]
    mixed_edge: np.ndarray     # (2, 3, N_psi, N_phi)
    seg_trace: np.ndarray      # (4, p+1, N_psi)
    seg_dtrace: np.ndarray     # (4, 2, p+1, N_psi)
    seg_ref_nodes: np.ndarray  # (4, p+1, 2) quad-frame node coordinates
    line_mass: np.ndarray      # (p+1, p+1)
    tau_mass: np.ndarray       # (N_gamma, N_gamma)
    tau_adv: np.ndarray        # (N_gamma, N_gamma)  int gamma_b gamma_d'
    tau_kup: np.ndarray        # tau_adv + g0 g0^T (upwind time operator)
    tau_g0: np.ndarray
    tau_g1: np.ndarray
    tau_extrap: np.ndarray     # (N_gamma, N_gamma) gamma_b at 1 + tau_d

    @property
    def order(self):
        return DiscretizationOrder(self.p, self.p_gamma)

    def save(self, path):
        arrays = {f.name: getattr(self, f.name) for f in fields(self)}
        np.savez(path, __version__=TENSOR_FORMAT_VERSION, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            version = str(data["__version__"])
            if version != TENSOR_FORMAT_VERSION:
                raise ValueError(
                    f"tensor file {path} has version {version!r}, "
                    f"expected {TENSOR_FORMAT_VERSION!r}")
            kwargs = {f.name: data[f.name] for f in fields(cls)}
        kwargs["p"] = int(kwargs["p"])
        kwargs["p_gamma"] = int(kwargs["p_gamma"])
        return cls(**kwargs)


@lru_cache(maxsize=None)
def _precompute_cached(p, p_gamma):
    n_phi = (p + 1) * (p + 2) // 2
    n_psi = (p + 1) ** 2

    tri = _tri_coeffs_exact(p)
    sq = _square_coeffs_exact(p)  # per node: (poly on T_I, poly on T_II)

    # moments of the two quad-frame side regions
    side_regions = (
        _CORNERS,                                     # T_I = T_std
        ((_F(1), _F(0)), (_F(1), _F(1)), (_F(0), _F(1))),  # T_II
    )
    max_deg = 2 * p + 2
    side_moments = [_region_moments(c, max_deg) for c in side_regions]

    sq_mass = [[[None] * n_psi for _ in range(n_psi)] for _ in range(2)]
    sq_grad = [[[[None] * n_psi for _ in range(n_psi)]
                for _ in range(2)] for _ in range(2)]
    sq_stiff = [[[[[None] * n_psi for _ in range(n_psi)]
                  for _ in range(2)] for _ in range(2)] for _ in range(2)]
    for s in range(2):
        mom = side_moments[s]
        polys = [pair[s] for pair in sq]
        dpolys = [[_poly_diff(q, d) for d in range(2)] for q in polys]
        for a in range(n_psi):
            for c in range(n_psi):
                sq_mass[s][a][c] = _integrate_region(polys[a], polys[c], mom)
                for d in range(2):
                    sq_grad[s][d][a][c] = _integrate_region(
                        dpolys[a][d], polys[c], mom)
                for d1 in range(2):
                    for d2 in range(2):
                        sq_stiff[s][d1][d2][a][c] = _integrate_region(
                            dpolys[a][d1], dpolys[c][d2], mom)

    # mixed tensors: dual basis against primary basis, per configuration
    cen = _CENTROID
    mixed_vol = np.zeros((2, 3, 2, n_psi, n_phi))
    mixed_edge = np.zeros((2, 3, n_psi, n_phi))
    dtri = [[_poly_diff(q, d) for d in range(2)] for q in tri]
    diag_traces = [  # psi on the quad diagonal (1-s, s); side I polynomial
        _line_poly(pair[0], _F(1), _F(-1), _F(0), _F(1), p) for pair in sq]
    for loc in range(3):
        r0 = _CORNERS[loc]
        r1 = _CORNERS[(loc + 1) % 3]
        sub_moments = _region_moments((cen, r0, r1), max_deg)
        for s in range(2):
            if s == 0:
                # left triangle: quad side I, edge traversed forward
                m, t = _affine_from_points(
                    (cen, r0, r1),
                    ((_F(0), _F(0)), (_F(1), _F(0)), (_F(0), _F(1))))
                e_start, e_end = r0, r1
            else:
                # right triangle: quad side II, edge traversed backwards
                m, t = _affine_from_points(
                    (cen, r1, r0),
                    ((_F(1), _F(1)), (_F(1), _F(0)), (_F(0), _F(1))))
                e_start, e_end = r1, r0
            composed = [_compose_with_map(pair[s], m, t) for pair in sq]
            for a in range(n_psi):
                for k in range(n_phi):
                    for d in range(2):
                        mixed_vol[s, loc, d, a, k] = float(_integrate_region(
                            composed[a], dtri[k][d], sub_moments))
            edge_traces = [
                _line_poly(tri[k], e_start[0], e_end[0] - e_start[0],
                           e_start[1], e_end[1] - e_start[1], p)
                for k in range(n_phi)]
            for a in range(n_psi):
                for k in range(n_phi):
                    mixed_edge[s, loc, a, k] = float(
                        _line_integral(diag_traces[a], edge_traces[k]))

    # boundary segment traces at the p+1 equidistant parameter nodes
    seg_paths = (
        ((_F(0), _F(0)), (_F(1), _F(0)), 0),
        ((_F(0), _F(0)), (_F(0), _F(1)), 0),
        ((_F(1), _F(1)), (_F(1), _F(0)), 1),
        ((_F(1), _F(1)), (_F(0), _F(1)), 1),
    )
    sigma = [_F(q, p) for q in range(p + 1)]
    seg_trace = np.zeros((4, p + 1, n_psi))
    seg_dtrace = np.zeros((4, 2, p + 1, n_psi))
    seg_ref_nodes = np.zeros((4, p + 1, 2))
    for r, (start, end, s) in enumerate(seg_paths):
        for qn, sg in enumerate(sigma):
            x = start[0] + sg * (end[0] - start[0])
            y = start[1] + sg * (end[1] - start[1])
            seg_ref_nodes[r, qn] = (float(x), float(y))
            for a in range(n_psi):
                seg_trace[r, qn, a] = float(_poly_eval_exact(sq[a][s], x, y))
                for d in range(2):
                    seg_dtrace[r, d, qn, a] = float(
                        _poly_eval_exact(_poly_diff(sq[a][s], d), x, y))

    line_coeffs = _temporal_coeffs_exact(p)  # 1D Lagrange on q/p nodes
    line_mass = np.array(
        [[float(_line_integral(ca, cb)) for cb in line_coeffs]
         for ca in line_coeffs])

    tri_mass = np.array(
        [[float(_poly_integrate_tstd(_poly_mul(tri[a], tri[b])))
          for b in range(n_phi)] for a in range(n_phi)])

    # temporal tensors
    gam = _temporal_coeffs_exact(p_gamma)
    n_gamma = p_gamma + 1

    def d1(c):
        return [a * c[a] for a in range(1, len(c))]

    def eval1(c, t):
        return sum(cc * t ** a for a, cc in enumerate(c))

    tau_mass = np.array([[float(_line_integral(gb, gd)) for gd in gam]
                         for gb in gam])
    tau_adv = np.array([[float(_line_integral(gb, d1(gd))) for gd in gam]
                        for gb in gam])
    tau_g0 = np.array([float(eval1(g, _F(0))) for g in gam])
    tau_g1 = np.array([float(eval1(g, _F(1))) for g in gam])
    tau_kup = tau_adv + np.outer(tau_g0, tau_g0)
    t_nodes = ([_F(1)] if p_gamma == 0
               else [_F(k, p_gamma) for k in range(n_gamma)])
    tau_extrap = np.array([[float(eval1(gb, 1 + td)) for gb in gam]
                           for td in t_nodes])

    sq_pts = square_nodes(p)
    ij = np.rint(sq_pts * p).astype(int)
    node_side = np.where(ij.sum(axis=1) <= p, 0, 1)

    return ReferenceTensors(
        p=p, p_gamma=p_gamma,
        tri_nodes=triangle_nodes(p),
        sq_nodes=sq_pts,
        sq_node_side=node_side,
        tau_nodes=temporal_nodes(p_gamma),
        tri_mass=tri_mass,
        sq_mass=np.array(_to_float(sq_mass)),
        sq_grad=np.array(_to_float(sq_grad)),
        sq_stiff=np.array(_to_float(sq_stiff)),
        mixed_vol=mixed_vol,
        mixed_edge=mixed_edge,
        seg_trace=seg_trace,
        seg_dtrace=seg_dtrace,
        seg_ref_nodes=seg_ref_nodes,
        line_mass=line_mass,
        tau_mass=tau_mass,
        tau_adv=tau_adv,
        tau_kup=tau_kup,
        tau_g0=tau_g0,
        tau_g1=tau_g1,
        tau_extrap=tau_extrap,
    )


def precompute_reference_tensors(order):
    """All reference tensors for one (p, p_gamma), exact then rounded."""
    return _precompute_cached(order.p, order.p_gamma)


# ---------------------------------------------------------------------------
# per-element assembly
# ---------------------------------------------------------------------------

def _batch_kron(a, b):
    """Kronecker product of a batch of matrices with one fixed matrix."""
    n, p_, q_ = a.shape
    r_, s_ = b.shape
    return (a[:, :, None, :, None] * b[None, None, :, None, :]).reshape(
        n, p_ * r_, q_ * s_)


@dataclass
class ElementMatrices:
    """Per-element matrices for one (nu, dt), contracted from reference
    tensors and geometry only."""

    nu: float
    dt: float
    mass_spatial: np.ndarray      # (NQ, N_psi, N_psi) dual spatial mass
    mass_spatial_inv: np.ndarray  # (NQ, N_psi, N_psi)
    mass_st: np.ndarray           # (NQ, B, B) space-time mass (dt included)
    time_op: np.ndarray           # (NQ, B, B) upwind time operator
    grad_blocks: np.ndarray       # (NQ, 2, 2, N_psi, N_phi) [side, comp]
    visc_indptr: np.ndarray       # viscous space-time blocks, BSR layout
    visc_indices: np.ndarray
    visc_blocks: np.ndarray       # (nnzb, B, B) already scaled by nu*dt

    def divergence_block(self, quad, side, comp):
        """Divergence blocks are minus the transposed gradient blocks."""
        return -self.grad_blocks[quad, side, comp].T


class ElementAssembler:
    """Builds all geometry contractions once; per-step matrices are then a
    scalar rescale plus one addition."""

    def __init__(self, tensors, mesh, dual, geom, eta_penalty=10.0):
        if (dual.quad_tris[:, 1] < 0).any():
            raise ValueError(
                "assembly requires a fully two-sided dual grid "
                "(periodic boundaries)")
        self.tensors = tensors
        self.mesh = mesh
        self.dual = dual
        self.geom = geom
        self.eta_penalty = float(eta_penalty)
        t = tensors
        self.n_phi = t.tri_mass.shape[0]
        self.n_psi = t.sq_mass.shape[1]
        self.n_gamma = t.tau_mass.shape[0]
        self.block_q = self.n_psi * self.n_gamma
        self.block_p = self.n_phi * self.n_gamma
        self._build_spatial()
        self._build_spacetime()

    # -- spatial contractions ------------------------------------------------

    def _build_spatial(self):
        t, dual, geom = self.tensors, self.dual, self.geom
        nq = dual.n_quads
        det = geom.side_det                     # (NQ, 2)
        inv = geom.side_inv                     # (NQ, 2, 2, 2)

        self.mass_spatial = np.einsum("qs,sac->qac", det, t.sq_mass)
        self.mass_spatial_inv = np.linalg.inv(self.mass_spatial)

        # convective volume derivative operators, physical directions
        # d_x psi = sum_d inv[d, x] d_ref_d psi
        self.dvol = np.einsum("qs,qsdc,sdak->qcak", det, inv, t.sq_grad)

        # SIP volume stiffness: metric g = inv inv^T per side
        metric = np.einsum("qsab,qscb->qsac", inv, inv)
        self.kvol = np.einsum("qs,qsde,sdeac->qac", det, metric, t.sq_stiff)

        # pressure gradient blocks
        tris = dual.quad_tris
        locs = dual.quad_local_edge
        edge = dual.quad_edge
        tdet = geom.tri_det
        tinv = geom.tri_inv
        elen = geom.edge_length[edge]
        enrm = geom.edge_normal[edge]
        grad = np.zeros((nq, 2, 2, self.n_psi, self.n_phi))
        for s in range(2):
            vol = t.mixed_vol[s, locs[:, s]]       # (NQ, 2, N_psi, N_phi)
            ti = tinv[tris[:, s]]                  # (NQ, 2, 2)
            vol_phys = np.einsum("q,qdc,qdak->qcak", tdet[tris[:, s]], ti, vol)
            edge_part = np.einsum(
                "qc,qak->qcak", enrm, t.mixed_edge[s, locs[:, s]])
            sign = -1.0 if s == 0 else 1.0
            grad[:, s] = vol_phys + sign * elen[:, None, None, None] * edge_part
        self.grad_blocks = grad

        # segment trace data in physical form
        ns = dual.n_segments
        refs = dual.seg_ref                      # (NS, 2)
        self.seg_trace_a = t.seg_trace[refs[:, 0]]   # (NS, p+1, N_psi)
        self.seg_trace_b = t.seg_trace[refs[:, 1]]
        nrm = dual.seg_normal
        side_of_ref = np.array([0, 0, 1, 1])
        w = np.zeros((ns, 2, 2))  # [segment, (A, B)] J^-1 n
        for half, (qcol, rcol) in enumerate(((0, 0), (1, 1))):
            quads = dual.seg_quads[:, half]
            sides = side_of_ref[refs[:, half]]
            jinv = inv[quads, sides]             # (NS, 2, 2)
            w[:, half] = np.einsum("sdc,sc->sd", jinv, nrm)
        self.seg_ndtrace_a = np.einsum(
            "sd,sdqa->sqa", w[:, 0], t.seg_dtrace[refs[:, 0]])
        self.seg_ndtrace_b = np.einsum(
            "sd,sdqa->sqa", w[:, 1], t.seg_dtrace[refs[:, 1]])

        # viscous SIP blocks on the quad adjacency structure; the jump is
        # (A - B), the normal points A -> B, penalty eta (p+1)^2 / length
        mu = self.eta_penalty * (self.tensors.p + 1) ** 2 / dual.seg_length
        entries = {}

        def add(row, col, block):
            key = (int(row), int(col))
            if key in entries:
                entries[key] = entries[key] + block
            else:
                entries[key] = block.copy()

        for q in range(nq):
            add(q, q, self.kvol[q])
        lw = dual.seg_length[:, None, None] * t.line_mass[None]
        ta, tb = self.seg_trace_a, self.seg_trace_b
        ga, gb = self.seg_ndtrace_a, self.seg_ndtrace_b
        taw = np.einsum("sqa,sqr->sar", ta, lw)    # tA^T W
        tbw = np.einsum("sqa,sqr->sar", tb, lw)
        gaw = np.einsum("sqa,sqr->sar", ga, lw)    # gA^T W
        gbw = np.einsum("sqa,sqr->sar", gb, lw)

        def mm(x, y):
            return np.einsum("sar,src->sac", x, y)

        blk_aa = (-0.5 * mm(taw, ga) - 0.5 * mm(gaw, ta)
                  + mu[:, None, None] * mm(taw, ta))
        blk_ab = (-0.5 * mm(taw, gb) + 0.5 * mm(gaw, tb)
                  - mu[:, None, None] * mm(taw, tb))
        blk_bb = (0.5 * mm(tbw, gb) + 0.5 * mm(gbw, tb)
                  + mu[:, None, None] * mm(tbw, tb))
        for i in range(dual.n_segments):
            qa, qb = map(int, dual.seg_quads[i])
            add(qa, qa, blk_aa[i])
            add(qa, qb, blk_ab[i])
            add(qb, qa, blk_ab[i].T)
            add(qb, qb, blk_bb[i])

        indptr = np.zeros(nq + 1, dtype=np.int64)
        cols_per_row = [[] for _ in range(nq)]
        for (r, c) in entries:
            cols_per_row[r].append(c)
        indices = []
        blocks = []
        for r in range(nq):
            cols = sorted(cols_per_row[r])
            indptr[r + 1] = indptr[r] + len(cols)
            for c in cols:
                indices.append(c)
                blocks.append(entries[(r, c)])
        self.visc_indptr = indptr
        self.visc_indices = np.array(indices, dtype=np.int64)
        self.visc_spatial = np.array(blocks)
        self.visc_diag_pos = np.array(
            [next(k for k in range(indptr[r], indptr[r + 1])
                  if self.visc_indices[k] == r) for r in range(nq)],
            dtype=np.int64)

        # physical coordinates of every quad node (its own half's chart)
        ref = np.asarray(self.tensors.sq_nodes)
        side = self.tensors.sq_node_side
        jac = geom.side_jac[:, side]             # (NQ, N_psi, 2, 2)
        shf = geom.side_shift[:, side]           # (NQ, N_psi, 2)
        self.quad_node_xy = np.einsum("qnab,nb->qna", jac, ref) + shf

    # -- space-time blocks ---------------------------------------------------

    def _build_spacetime(self):
        t = self.tensors
        self.time_op = _batch_kron(self.mass_spatial, t.tau_kup)
        self.mass_st_unit = _batch_kron(self.mass_spatial, t.tau_mass)
        self.visc_st = _batch_kron(self.visc_spatial, t.tau_mass)
        self._mom_blocks_buf = np.empty_like(self.visc_st)

    def matrices(self, nu, dt):
        """Per-step element matrices; a cheap rescale of stored arrays."""
        np.multiply(self.visc_st, nu * dt, out=self._mom_blocks_buf)
        return ElementMatrices(
            nu=nu, dt=dt,
            mass_spatial=self.mass_spatial,
            mass_spatial_inv=self.mass_spatial_inv,
            mass_st=dt * self.mass_st_unit,
            time_op=self.time_op,
            grad_blocks=self.grad_blocks,
            visc_indptr=self.visc_indptr,
            visc_indices=self.visc_indices,
            visc_blocks=self._mom_blocks_buf,
        )


def assemble_element_matrices(tensors, geom, dual, nu, dt, eta_penalty=10.0):
    """One-shot assembly of the per-element matrices (see ElementAssembler
    for the amortized per-step path)."""
    assembler = ElementAssembler(tensors, None, dual, geom, eta_penalty)
    return assembler.matrices(nu, dt)


def contract_flux_terms(tensors, segment, flux_values):
    """Contract nodal numerical-flux values on one segment into the two
    adjacent dual elements' residuals.

    segment: (ref_a, ref_b, length); flux_values: (p+1, N_gamma) nodal values
    of the normal flux (normal pointing from element A to element B).
    Returns (contribution_a, contribution_b), each (N_psi, N_gamma); the
    contraction is linear in flux_values and excludes the overall dt factor.
    """
    ref_a, ref_b, length = segment
    f = np.asarray(flux_values, dtype=float)
    w = length * tensors.line_mass
    fa = tensors.seg_trace[ref_a].T @ w @ f @ tensors.tau_mass
    fb = tensors.seg_trace[ref_b].T @ w @ f @ tensors.tau_mass
    return fa, -fb
