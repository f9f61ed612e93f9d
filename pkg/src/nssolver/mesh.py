"""Primary triangular grid, staggered edge-based dual grid, and geometry.

The primary grid carries the pressure; the dual grid has one quadrilateral
per edge, with corners at the edge endpoints and the barycenters of the two
adjacent triangles.  Each quad splits along the primary edge into a left and
a right sub-triangle.  Under periodic boundary conditions the two partner
boundary edges share a single dual quad whose halves live on opposite sides
of the domain, each expressed in its own triangle's coordinates.

Edge enumeration is canonical: edges are sorted by their (min, max) vertex
pair.  Each edge is stored directed so that its left triangle (the one that
traverses it counterclockwise) comes first; boundary edges keep their single
triangle on the left.  The mesh file format relies on this enumeration.

Reference-quad conventions used by the dual grid (matching the split square
of the basis module): corner map (0,0) -> left barycenter, (1,0) -> E0,
(0,1) -> E1, (1,1) -> right barycenter; the primary edge is the diagonal.
The four boundary segments of a quad are numbered

    0: side I,  barycenter -> E0        1: side I,  barycenter -> E1
    2: side II, barycenter -> E0        3: side II, barycenter -> E1

and every physical interface segment (triangle barycenter to triangle
vertex) is parameterized from the barycenter towards the vertex by both
adjacent quads, so trace nodes line up without reindexing.
"""

from dataclasses import dataclass, field

import numpy as np

_PAIR_TOL = 1e-9


class MeshError(ValueError):
    """Invalid mesh topology, geometry or file contents."""


@dataclass
class PrimaryMesh:
    vertices: np.ndarray          # (NV, 2)
    triangles: np.ndarray         # (NT, 3) vertex indices, counterclockwise
    edges: np.ndarray             # (NE, 2) directed vertex pairs
    edge_tris: np.ndarray         # (NE, 2) left/right triangle, right -1
    tri_edges: np.ndarray         # (NT, 3) edge index of local edge k
    tri_edge_signs: np.ndarray    # (NT, 3) +1 if stored direction matches
    periodic_partner: np.ndarray  # (NE,) partner edge index or -1

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def boundary_tags(self):
        """Per-edge tag: -1 interior, partner index if periodic, -2 if an
        unpaired boundary edge."""
        tags = np.where(self.edge_tris[:, 1] >= 0, -1, -2)
        paired = self.periodic_partner >= 0
        tags[paired] = self.periodic_partner[paired]
        return tags

    def triangle_areas(self):
        v = self.vertices[self.triangles]
        return 0.5 * np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)

    def edge_lengths(self):
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])


def _build_edges(vertices, triangles):
    """Derive the canonical edge arrays from triangle connectivity."""
    nt = len(triangles)
    keys = {}
    for t in range(nt):
        tri = triangles[t]
        for k in range(3):
            u, v = int(tri[k]), int(tri[(k + 1) % 3])
            keys.setdefault((min(u, v), max(u, v)), []).append((t, k, u, v))
    order = sorted(keys)
    ne = len(order)
    edges = np.zeros((ne, 2), dtype=np.int64)
    edge_tris = np.full((ne, 2), -1, dtype=np.int64)
    tri_edges = np.zeros((nt, 3), dtype=np.int64)
    tri_edge_signs = np.zeros((nt, 3), dtype=np.int64)
    for e, key in enumerate(order):
        occ = keys[key]
        if len(occ) > 2:
            raise MeshError(
                f"edge {key} is shared by {len(occ)} triangles")
        t0, k0, u0, v0 = occ[0]
        edges[e] = (u0, v0)
        edge_tris[e, 0] = t0
        tri_edges[t0, k0] = e
        tri_edge_signs[t0, k0] = 1
        if len(occ) == 2:
            t1, k1, u1, v1 = occ[1]
            if (u1, v1) == (u0, v0):
                raise MeshError(
                    f"triangles {t0} and {t1} traverse edge {key} in the "
                    "same direction; inconsistent orientation")
            edge_tris[e, 1] = t1
            tri_edges[t1, k1] = e
            tri_edge_signs[t1, k1] = -1
    return edges, edge_tris, tri_edges, tri_edge_signs


def _make_mesh(vertices, triangles, periodic_pairs):
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if triangles.min(initial=0) < 0 or triangles.max(initial=-1) >= len(vertices):
        raise MeshError("triangle vertex index out of range")
    v = vertices[triangles]
    areas = 0.5 * np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    bad = np.nonzero(areas <= 0)[0]
    if len(bad):
        raise MeshError(
            f"triangle {bad[0]} has non-positive area {areas[bad[0]]:.3e} "
            "(vertices must be counterclockwise)")
    edges, edge_tris, tri_edges, signs = _build_edges(vertices, triangles)
    partner = np.full(len(edges), -1, dtype=np.int64)
    for ea, eb in periodic_pairs:
        ea, eb = int(ea), int(eb)
        if not (0 <= ea < len(edges) and 0 <= eb < len(edges)) or ea == eb:
            raise MeshError(f"invalid periodic pair ({ea}, {eb})")
        partner[ea] = eb
        partner[eb] = ea
    mesh = PrimaryMesh(vertices, triangles, edges, edge_tris,
                       tri_edges, signs, partner)
    validate_mesh(mesh)
    return mesh


def validate_mesh(mesh):
    """Check the mesh invariants, raising MeshError with the culprit index."""
    areas = mesh.triangle_areas()
    bad = np.nonzero(areas <= 0)[0]
    if len(bad):
        raise MeshError(f"triangle {bad[0]} has non-positive area")
    lengths = mesh.edge_lengths()
    for e in range(mesh.n_edges):
        p = mesh.periodic_partner[e]
        if p < 0:
            continue
        if mesh.periodic_partner[p] != e:
            raise MeshError(
                f"periodic pairing is not an involution at edge {e}")
        if mesh.edge_tris[e, 1] >= 0 or mesh.edge_tris[p, 1] >= 0:
            raise MeshError(
                f"periodic pair ({e}, {p}) involves a non-boundary edge")
        if abs(lengths[e] - lengths[p]) > _PAIR_TOL * max(lengths[e], 1.0):
            raise MeshError(
                f"periodic pair ({e}, {p}) has unequal lengths "
                f"{lengths[e]:.6g} vs {lengths[p]:.6g}")


def generate_structured_mesh(n, bounds=(0.0, 0.0, 1.0, 1.0)):
    """Uniform triangulation of a rectangle: n x n cells, each split along
    the same diagonal, with boundary vertices aligned for periodic pairing.

    bounds = (xmin, ymin, xmax, ymax).
    """
    if n < 1:
        raise MeshError(f"subdivision count must be >= 1, got {n}")
    xmin, ymin, xmax, ymax = map(float, bounds)
    if xmax - xmin <= 0 or ymax - ymin <= 0:
        raise MeshError(f"degenerate rectangle {bounds}")
    xs = np.linspace(xmin, xmax, n + 1)
    ys = np.linspace(ymin, ymax, n + 1)

    def vid(i, j):
        return j * (n + 1) + i

    vertices = np.array([(x, y) for y in ys for x in xs])
    triangles = []
    for j in range(n):
        for i in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            triangles.append((a, b, c))
            triangles.append((a, c, d))
    mesh = _make_mesh(vertices, triangles, [])

    # pair opposite boundary edges (bottom/top by column, left/right by row)
    lookup = {}
    for e in range(mesh.n_edges):
        u, v = sorted(map(int, mesh.edges[e]))
        lookup[(u, v)] = e
    pairs = []
    for i in range(n):
        eb = lookup[tuple(sorted((vid(i, 0), vid(i + 1, 0))))]
        et = lookup[tuple(sorted((vid(i, n), vid(i + 1, n))))]
        pairs.append((eb, et))
    for j in range(n):
        el = lookup[tuple(sorted((vid(0, j), vid(0, j + 1))))]
        er = lookup[tuple(sorted((vid(n, j), vid(n, j + 1))))]
        pairs.append((el, er))
    partner = np.full(mesh.n_edges, -1, dtype=np.int64)
    for ea, eb in pairs:
        partner[ea] = eb
        partner[eb] = ea
    mesh.periodic_partner = partner
    validate_mesh(mesh)
    return mesh


# ---------------------------------------------------------------------------
# mesh file I/O
# ---------------------------------------------------------------------------

def save_mesh(mesh, path):
    """Write the ASCII mesh format (see module docstring of harness)."""
    pairs = [(e, int(mesh.periodic_partner[e]))
             for e in range(mesh.n_edges)
             if 0 <= mesh.periodic_partner[e] and e < mesh.periodic_partner[e]]
    with open(path, "w") as f:
        f.write(f"{mesh.n_vertices} {mesh.n_triangles} {len(pairs)}\n")
        for x, y in mesh.vertices:
            f.write(f"{x!r} {y!r}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")
        for ea, eb in pairs:
            f.write(f"{ea} {eb}\n")


def load_mesh(path):
    """Read and validate a mesh from the ASCII node/element format.

    Format: first data line `NV NT NPERIODIC`, then NV lines `x y`, NT lines
    `i j k` (0-based, counterclockwise), NPERIODIC lines `edgeA edgeB`
    referring to the canonical edge enumeration.  `#` starts a comment.
    """
    tokens = []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            body = line.split("#", 1)[0].strip()
            if body:
                tokens.extend((line_no, t) for t in body.split())
    pos = 0

    def take(count, conv, what):
        nonlocal pos
        if pos + count > len(tokens):
            raise MeshError(f"{path}: unexpected end of file reading {what}")
        out = []
        for _ in range(count):
            line_no, tok = tokens[pos]
            pos += 1
            try:
                out.append(conv(tok))
            except ValueError:
                raise MeshError(
                    f"{path}:{line_no}: cannot parse {what} from {tok!r}")
        return out

    nv, nt, nper = take(3, int, "header counts")
    if nv < 3 or nt < 1 or nper < 0:
        raise MeshError(f"{path}: implausible header ({nv}, {nt}, {nper})")
    coords = take(2 * nv, float, "vertex coordinates")
    vertices = np.array(coords).reshape(nv, 2)
    conn = take(3 * nt, int, "triangle connectivity")
    triangles = np.array(conn, dtype=np.int64).reshape(nt, 3)
    pair_data = take(2 * nper, int, "periodic pairs")
    pairs = np.array(pair_data, dtype=np.int64).reshape(nper, 2)
    if pos != len(tokens):
        raise MeshError(f"{path}: trailing tokens after mesh data")
    return _make_mesh(vertices, triangles, pairs)


# ---------------------------------------------------------------------------
# dual grid
# ---------------------------------------------------------------------------

@dataclass
class DualMesh:
    n_quads: int
    quad_edge: np.ndarray        # (NQ,) representative primary edge
    quad_partner_edge: np.ndarray  # (NQ,) merged partner edge or -1
    quad_tris: np.ndarray        # (NQ, 2) left/right triangle (-1 degenerate)
    quad_local_edge: np.ndarray  # (NQ, 2) local edge index within each tri
    quad_corners: np.ndarray     # (NQ, 2, 3, 2) per side: (bary, E0, E1) xy
    quad_areas: np.ndarray       # (NQ, 2) sub-triangle areas (0 if absent)
    edge_to_quad: np.ndarray     # (NE,)
    # interface segments between neighboring quads
    seg_tri: np.ndarray          # (NS,)
    seg_quads: np.ndarray        # (NS, 2) quad left/right of bary->vertex
    seg_ref: np.ndarray          # (NS, 2) reference boundary segment 0..3
    seg_normal: np.ndarray       # (NS, 2) unit normal, left -> right
    seg_length: np.ndarray       # (NS,)
    seg_points: np.ndarray       # (NS, 2, 2) barycenter, vertex

    @property
    def n_segments(self):
        return len(self.seg_tri)


def build_dual_grid(mesh, periodic=True):
    """Construct the edge-based dual grid.

    With periodic=True every boundary edge must have a periodic partner and
    each partner pair shares a single quad.  With periodic=False unpaired
    boundary edges get a degenerate one-sided element (left half only).
    """
    verts = mesh.vertices
    bary = mesh.barycenters()
    ne = mesh.n_edges

    edge_to_quad = np.full(ne, -1, dtype=np.int64)
    rows = []  # (edge, partner_edge, triL, triR, locL, locR, cornersL, cornersR)

    def local_edge_in(tri, e):
        for k in range(3):
            if mesh.tri_edges[tri, k] == e:
                return k
        raise MeshError(f"edge {e} not found in triangle {tri}")

    for e in range(ne):
        if edge_to_quad[e] >= 0:
            continue
        tl, tr = map(int, mesh.edge_tris[e])
        u, v = map(int, mesh.edges[e])
        e0, e1 = verts[u], verts[v]
        loc_l = local_edge_in(tl, e)
        corners_l = np.array([bary[tl], e0, e1])
        if tr >= 0:
            loc_r = local_edge_in(tr, e)
            corners_r = np.array([bary[tr], e0, e1])
            rows.append((e, -1, tl, tr, loc_l, loc_r, corners_l, corners_r))
            edge_to_quad[e] = len(rows) - 1
            continue
        p = int(mesh.periodic_partner[e])
        if not periodic or p < 0:
            if periodic:
                raise MeshError(
                    f"boundary edge {e} has no periodic partner")
            rows.append((e, -1, tl, -1, loc_l, -1, corners_l,
                         np.full((3, 2), np.nan)))
            edge_to_quad[e] = len(rows) - 1
            continue
        # merged periodic quad; partner endpoints matched by translation
        tp = int(mesh.edge_tris[p, 0])
        up, vp = map(int, mesh.edges[p])
        shift = verts[vp] - e0
        if np.linalg.norm((verts[up] - e1) - shift) < _PAIR_TOL:
            m0, m1 = vp, up  # crossed match: consistent orientations
        else:
            shift = verts[up] - e0
            if np.linalg.norm((verts[vp] - e1) - shift) < _PAIR_TOL:
                raise MeshError(
                    f"periodic pair ({e}, {p}) has matching directions; "
                    "the two boundary triangles lie on the same side")
            raise MeshError(
                f"periodic pair ({e}, {p}) endpoints do not correspond "
                "under a common translation")
        loc_r = local_edge_in(tp, p)
        corners_r = np.array([bary[tp], verts[m0], verts[m1]])
        rows.append((e, p, tl, tp, loc_l, loc_r, corners_l, corners_r))
        edge_to_quad[e] = len(rows) - 1
        edge_to_quad[p] = len(rows) - 1

    nq = len(rows)
    quad_edge = np.array([r[0] for r in rows], dtype=np.int64)
    quad_partner = np.array([r[1] for r in rows], dtype=np.int64)
    quad_tris = np.array([(r[2], r[3]) for r in rows], dtype=np.int64)
    quad_local = np.array([(r[4], r[5]) for r in rows], dtype=np.int64)
    quad_corners = np.stack(
        [np.stack([r[6], r[7]]) for r in rows])  # (NQ, 2, 3, 2)

    areas = np.zeros((nq, 2))
    for q in range(nq):
        b, e0, e1 = quad_corners[q, 0]
        areas[q, 0] = 0.5 * np.cross(e0 - b, e1 - b)
        if quad_tris[q, 1] >= 0:
            b, e0, e1 = quad_corners[q, 1]
            areas[q, 1] = 0.5 * np.cross(e1 - b, e0 - b)
    if (areas[:, 0] <= 0).any() or (areas[quad_tris[:, 1] >= 0, 1] <= 0).any():
        q = int(np.argmin(np.where(quad_tris[:, 1] >= 0, areas.min(1),
                                   areas[:, 0])))
        raise MeshError(f"dual quad {q} has a non-positive sub-triangle")

    # one interface segment per (triangle, vertex slot)
    side_of = {}
    for q in range(nq):
        for s in range(2):
            if quad_tris[q, s] >= 0:
                side_of[(int(quad_tris[q, s]), int(quad_local[q, s]))] = (q, s)

    seg_tri, seg_quads, seg_ref, seg_normal, seg_length, seg_points = \
        [], [], [], [], [], []
    nt = mesh.n_triangles
    for t in range(nt):
        b = bary[t]
        for k in range(3):
            vtx = int(mesh.triangles[t, k])
            pv = verts[vtx]
            # quad across local edge k lies left of b -> v_k, across
            # local edge k-1 lies right
            ql, sl = side_of[(t, k)]
            qr, sr = side_of[(t, (k + 2) % 3)]
            # reference segment: side I uses 0 (to E0) / 1 (to E1),
            # side II uses 2 (to E0) / 3 (to E1)
            refl = (0 if sl == 0 else 3)   # v_k is E0 on a left side, E1 on right
            refr = (1 if sr == 0 else 2)   # v_k is E1 on a left side, E0 on right
            d = pv - b
            length = float(np.hypot(*d))
            seg_tri.append(t)
            seg_quads.append((ql, qr))
            seg_ref.append((refl, refr))
            seg_normal.append((d[1] / length, -d[0] / length))
            seg_length.append(length)
            seg_points.append((b, pv))

    return DualMesh(
        n_quads=nq,
        quad_edge=quad_edge,
        quad_partner_edge=quad_partner,
        quad_tris=quad_tris,
        quad_local_edge=quad_local,
        quad_corners=quad_corners,
        quad_areas=areas,
        edge_to_quad=edge_to_quad,
        seg_tri=np.array(seg_tri, dtype=np.int64),
        seg_quads=np.array(seg_quads, dtype=np.int64),
        seg_ref=np.array(seg_ref, dtype=np.int64),
        seg_normal=np.array(seg_normal),
        seg_length=np.array(seg_length),
        seg_points=np.array(seg_points),
    )


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

@dataclass
class ElementGeometry:
    tri_jac: np.ndarray       # (NT, 2, 2) affine map matrix, T_std -> tri
    tri_shift: np.ndarray     # (NT, 2)
    tri_det: np.ndarray       # (NT,)
    tri_inv: np.ndarray       # (NT, 2, 2) inverse Jacobian
    side_jac: np.ndarray      # (NQ, 2, 2, 2) per quad side
    side_shift: np.ndarray    # (NQ, 2, 2)
    side_det: np.ndarray      # (NQ, 2)
    side_inv: np.ndarray      # (NQ, 2, 2, 2)
    edge_normal: np.ndarray   # (NE, 2) unit normal, left tri -> right
    edge_length: np.ndarray   # (NE,)
    tri_inradius: np.ndarray  # (NT,)
    h_min: float


def compute_geometry(mesh, dual):
    """Affine maps, Jacobians, normals, and the CFL length h_min."""
    verts = mesh.vertices
    tv = verts[mesh.triangles]
    tri_jac = np.stack([tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0]], axis=2)
    tri_shift = tv[:, 0].copy()
    tri_det = np.linalg.det(tri_jac)
    if (tri_det <= 0).any():
        raise MeshError(
            f"triangle {int(np.argmin(tri_det))} has non-positive Jacobian")
    tri_inv = np.linalg.inv(tri_jac)

    nq = dual.n_quads
    side_jac = np.zeros((nq, 2, 2, 2))
    side_shift = np.zeros((nq, 2, 2))
    side_det = np.zeros((nq, 2))
    c = dual.quad_corners
    # side I: reference (0,0),(1,0),(0,1) -> (b, E0, E1)
    side_jac[:, 0, :, 0] = c[:, 0, 1] - c[:, 0, 0]
    side_jac[:, 0, :, 1] = c[:, 0, 2] - c[:, 0, 0]
    side_shift[:, 0] = c[:, 0, 0]
    # side II: reference (1,0),(1,1),(0,1) -> (E0, b, E1)
    side_jac[:, 1, :, 0] = c[:, 1, 0] - c[:, 1, 2]
    side_jac[:, 1, :, 1] = c[:, 1, 0] - c[:, 1, 1]
    side_shift[:, 1] = c[:, 1, 1] + c[:, 1, 2] - c[:, 1, 0]
    degenerate = dual.quad_tris[:, 1] < 0
    ok = ~degenerate
    side_det = np.full((nq, 2), np.nan)
    side_det[:, 0] = np.linalg.det(side_jac[:, 0])
    side_det[ok, 1] = np.linalg.det(side_jac[ok, 1])
    side_inv = np.full_like(side_jac, np.nan)
    side_inv[:, 0] = np.linalg.inv(side_jac[:, 0])
    side_inv[ok, 1] = np.linalg.inv(side_jac[ok, 1])

    d = verts[mesh.edges[:, 1]] - verts[mesh.edges[:, 0]]
    edge_length = np.hypot(d[:, 0], d[:, 1])
    edge_normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / edge_length[:, None]

    areas = mesh.triangle_areas()
    side_lengths = np.stack(
        [np.hypot(*(tv[:, (k + 1) % 3] - tv[:, k]).T) for k in range(3)],
        axis=1)
    inradius = 2.0 * areas / side_lengths.sum(axis=1)

    return ElementGeometry(
        tri_jac=tri_jac, tri_shift=tri_shift, tri_det=tri_det,
        tri_inv=tri_inv, side_jac=side_jac, side_shift=side_shift,
        side_det=side_det, side_inv=side_inv,
        edge_normal=edge_normal, edge_length=edge_length,
        tri_inradius=inradius, h_min=float(inradius.min()))
