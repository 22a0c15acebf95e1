"""Exact 2D convex polygon operations.

Everything here works on counter-clockwise vertex lists.  Cells of an upper
envelope of affine functions are built by sequential half-plane clipping,
which in 2D is simpler than vertex enumeration by reverse search and gives
edge provenance (which constraint generated each edge) for free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Relative tolerances, scaled by domain diameter (or its square for areas).
# Instance data carries ~3 significant digits, so these sit far below noise.
VERTEX_TOL = 1e-9
EMPTY_AREA_TOL = 1e-12

# Origin ids < 0 denote domain facets, >= 0 denote contract ids.
DOMAIN_FACET = -1


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class HalfPlane:
    """Closed half-plane {x : <normal, x> <= offset}."""

    normal: np.ndarray
    offset: float
    origin: int = DOMAIN_FACET

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (2,):
            raise GeometryError(f"normal must be a 2-vector, got shape {n.shape}")
        if float(np.hypot(n[0], n[1])) <= 1e-12:
            raise GeometryError("degenerate half-plane: normal too small")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def contains(self, x, tol: float = 0.0) -> bool:
        return float(self.normal @ np.asarray(x, dtype=float)) <= self.offset + tol


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex polygon as CCW vertex array of shape (k, 2); k = 0 means empty."""

    vertices: np.ndarray
    # Origin id of the edge from vertex i to vertex i+1 (cyclic), same length
    # as vertices.  Filled by the clipping routines; DOMAIN_FACET by default.
    edge_origins: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.size == 0:
            v = v.reshape(0, 2)
        if v.ndim != 2 or v.shape[1] != 2:
            raise GeometryError(f"vertices must be (k, 2), got {v.shape}")
        object.__setattr__(self, "vertices", v)
        eo = self.edge_origins
        if eo is None:
            eo = np.full(len(v), DOMAIN_FACET, dtype=int)
        else:
            eo = np.asarray(eo, dtype=int)
            if eo.shape != (len(v),):
                raise GeometryError("edge_origins length must match vertices")
        object.__setattr__(self, "edge_origins", eo)

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    def area(self) -> float:
        return polygon_area(self.vertices)

    def diameter(self) -> float:
        if self.is_empty:
            return 0.0
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    def contains(self, x, tol: float = 1e-9) -> bool:
        """Point membership, tolerance in absolute units."""
        if self.is_empty:
            return False
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        edge = nxt - v
        rel = np.asarray(x, dtype=float) - v
        cross = edge[:, 0] * rel[:, 1] - edge[:, 1] * rel[:, 0]
        return bool(np.all(cross >= -tol))


EMPTY_POLYGON = ConvexPolygon(np.zeros((0, 2)))


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area (positive for CCW input)."""
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def make_polygon(points, scale: float | None = None) -> ConvexPolygon:
    """Build a polygon from unordered or ordered vertices of a convex set.

    Orients CCW, removes duplicate consecutive vertices, returns the empty
    polygon when the input is degenerate.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return EMPTY_POLYGON
    if scale is None:
        span = pts.max(axis=0) - pts.min(axis=0)
        scale = max(float(np.hypot(*span)), 1.0)
    # Order by angle around the centroid; stable for convex inputs.
    c = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    pts = pts[np.argsort(ang, kind="stable")]
    pts = _dedup_ring(pts, VERTEX_TOL * scale)
    if polygon_area(pts) < EMPTY_AREA_TOL * scale * scale:
        return EMPTY_POLYGON
    return ConvexPolygon(pts)


def rectangle(x_lo: float, x_hi: float, y_lo: float, y_hi: float) -> ConvexPolygon:
    if not (x_hi > x_lo and y_hi > y_lo):
        raise GeometryError("rectangle bounds must be increasing")
    v = np.array([[x_lo, y_lo], [x_hi, y_lo], [x_hi, y_hi], [x_lo, y_hi]])
    return ConvexPolygon(v, np.array([-1, -2, -3, -4]))


def _dedup_ring(v: np.ndarray, tol: float) -> np.ndarray:
    if len(v) == 0:
        return v
    keep = [0]
    for i in range(1, len(v)):
        if abs(v[i, 0] - v[keep[-1], 0]) > tol or abs(v[i, 1] - v[keep[-1], 1]) > tol:
            keep.append(i)
    # close the ring
    if len(keep) > 1 and abs(v[keep[-1], 0] - v[keep[0], 0]) <= tol and abs(
        v[keep[-1], 1] - v[keep[0], 1]
    ) <= tol:
        keep.pop()
    return v[keep]


def _clip_arrays(v: np.ndarray, eo: np.ndarray, normal, offset: float,
                 origin: int, scale: float):
    """Sutherland-Hodgman step for one half-plane, tracking edge origins.

    Returns (vertices, edge_origins).  Each vertex v[i] starts the edge with
    origin eo[i].  New edges created along the cutting line get `origin`.
    """
    k = len(v)
    if k == 0:
        return v, eo
    d = v @ np.asarray(normal, dtype=float) - offset
    tol = VERTEX_TOL * scale
    if np.all(d <= tol):
        return v, eo            # no cut; plane redundant or grazing
    if np.all(d >= -tol):
        return v[:0], eo[:0]    # fully outside
    out_v: list[np.ndarray] = []
    out_o: list[int] = []
    for i in range(k):
        j = (i + 1) % k
        di, dj = d[i], d[j]
        inside_i = di <= 0.0
        inside_j = dj <= 0.0
        if inside_i:
            out_v.append(v[i])
            out_o.append(eo[i] if inside_j else eo[i])
            if not inside_j:
                t = di / (di - dj)
                out_v.append(v[i] + t * (v[j] - v[i]))
                out_o.append(origin)  # edge running along the cut
        elif inside_j:
            t = di / (di - dj)
            out_v.append(v[i] + t * (v[j] - v[i]))
            out_o.append(eo[i])       # remainder of the old edge
    nv = np.asarray(out_v, dtype=float).reshape(-1, 2)
    no = np.asarray(out_o, dtype=int)
    nv, no = _dedup_ring_with_origins(nv, no, tol)
    if polygon_area(nv) < EMPTY_AREA_TOL * scale * scale:
        return nv[:0], no[:0]
    return nv, no


def _dedup_ring_with_origins(v: np.ndarray, eo: np.ndarray, tol: float):
    if len(v) == 0:
        return v, eo
    eo = eo.copy()
    keep = [0]
    for i in range(1, len(v)):
        if abs(v[i, 0] - v[keep[-1], 0]) > tol or abs(v[i, 1] - v[keep[-1], 1]) > tol:
            keep.append(i)
        else:
            # collapse: the merged vertex takes the dropped vertex's outgoing
            # edge, since the edge into the duplicate has zero length
            eo[keep[-1]] = eo[i]
    if len(keep) > 1 and abs(v[keep[-1], 0] - v[keep[0], 0]) <= tol and abs(
        v[keep[-1], 1] - v[keep[0], 1]
    ) <= tol:
        # last vertex duplicates the first: drop it, its zero-length outgoing
        # edge disappears and the previous edge now ends at vertex 0
        keep.pop()
    return v[keep], eo[keep]


def clip(poly: ConvexPolygon, h: HalfPlane) -> ConvexPolygon:
    """Intersection of a convex polygon with one closed half-plane."""
    if poly.is_empty:
        return EMPTY_POLYGON
    scale = max(poly.diameter(), 1e-30)
    nv, no = _clip_arrays(poly.vertices, poly.edge_origins, h.normal, h.offset,
                          h.origin, scale)
    if len(nv) == 0:
        return EMPTY_POLYGON
    return ConvexPolygon(nv, no)


def clip_halfplanes(domain: ConvexPolygon, halfplanes,
                    scale: float | None = None) -> ConvexPolygon:
    """Clip a polygon by a sequence of half-planes (deterministic order)."""
    if domain.is_empty:
        return EMPTY_POLYGON
    if scale is None:
        scale = max(domain.diameter(), 1e-30)
    v, eo = domain.vertices, domain.edge_origins
    for h in halfplanes:
        v, eo = _clip_arrays(v, eo, h.normal, h.offset, h.origin, scale)
        if len(v) == 0:
            return EMPTY_POLYGON
    return ConvexPolygon(v, eo)


def cell_vrep(basis, i: int, domain: ConvexPolygon):
    """Vertex representation of the dominance cell of basis function i.

    `basis` is a sequence of objects with `.g` (2-vector), `.intercept`
    (scalar) and `.id` (int): each represents the affine map
    x -> <g, x> + intercept.  The cell is the subset of `domain` where
    function i attains the pointwise maximum.  Returns (polygon, active_ids)
    where active_ids contains the ids of the functions whose constraint
    contributes an edge of positive length to the cell.

    Ties between numerically identical functions go to the lower id, so the
    higher-index duplicate receives an empty cell.
    """
    if not 0 <= i < len(basis):
        raise GeometryError(f"cell index {i} out of range")
    if domain.is_empty:
        return EMPTY_POLYGON, set()
    bi = basis[i]
    gi = np.asarray(bi.g, dtype=float)
    ci = float(bi.intercept)
    scale = max(domain.diameter(), 1e-30)

    n_basis = len(basis)
    normals = np.empty((n_basis, 2))
    offsets = np.empty(n_basis)
    ids = np.empty(n_basis, dtype=int)
    m = 0
    for j, bj in enumerate(basis):
        if j == i:
            continue
        gj = np.asarray(bj.g, dtype=float)
        dn = gj - gi
        dc = ci - float(bj.intercept)
        if max(abs(dn[0]), abs(dn[1])) <= 1e-12:
            # (near-)parallel functions: constant gap dc = intercept_i - intercept_j
            if abs(dc) <= 1e-12:
                if bj.id < bi.id:
                    return EMPTY_POLYGON, set()   # exact duplicate, lower id wins
                continue
            if dc < 0.0:
                return EMPTY_POLYGON, set()       # j strictly dominates i
            continue                              # i strictly dominates j here
        normals[m] = dn
        offsets[m] = dc
        ids[m] = bj.id
        m += 1

    v, eo = domain.vertices, domain.edge_origins
    order = np.arange(m)
    processed = np.zeros(m, dtype=bool)
    while True:
        if len(v) == 0:
            return EMPTY_POLYGON, set()
        # batch redundancy test against the current polygon
        pending = order[~processed]
        if len(pending) == 0:
            break
        d = v @ normals[pending].T - offsets[pending]
        cuts = np.max(d, axis=0) > VERTEX_TOL * scale
        processed[pending[~cuts]] = True
        cutting = pending[cuts]
        if len(cutting) == 0:
            break
        k = cutting[0]
        v, eo = _clip_arrays(v, eo, normals[k], offsets[k], ids[k], scale)
        processed[k] = True
    if len(v) == 0:
        return EMPTY_POLYGON, set()
    poly = ConvexPolygon(v, eo)
    active = {int(o) for o in eo if o >= 0}
    return poly, active


def intersect(p: ConvexPolygon, q: ConvexPolygon) -> ConvexPolygon:
    """Intersection of two convex polygons (clip p by the edges of q)."""
    if p.is_empty or q.is_empty:
        return EMPTY_POLYGON
    scale = max(p.diameter(), q.diameter(), 1e-30)
    v, eo = p.vertices, p.edge_origins
    qv = q.vertices
    for k in range(len(qv)):
        a = qv[k]
        b = qv[(k + 1) % len(qv)]
        e = b - a
        # inward normal for CCW polygon is (-e_y, e_x); outward is (e_y, -e_x)
        normal = np.array([e[1], -e[0]])
        offset = float(normal @ a)
        v, eo = _clip_arrays(v, eo, normal, offset, int(q.edge_origins[k]), scale)
        if len(v) == 0:
            return EMPTY_POLYGON
    return ConvexPolygon(v, eo)


def integrate_affine(poly: ConvexPolygon, a: float, b: float, c: float) -> float:
    """Exact integral of a*x + b*y + c over the polygon.

    Uses the signed first moments of the boundary (shoelace form), which
    avoids the per-edge slope division that degenerates on axis-parallel
    edges in the contour formulation.
    """
    if poly.is_empty or len(poly.vertices) < 3:
        return 0.0
    v = poly.vertices
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(np.sum(cross))
    sx = float(np.sum((x + xn) * cross)) / 6.0
    sy = float(np.sum((y + yn) * cross)) / 6.0
    return a * sx + b * sy + c * area


def max_affine_gap(poly: ConvexPolygon, a: float, b: float, c: float):
    """Maximum of a*x + b*y + c over the polygon, with a maximizing vertex.

    By linearity the maximum over a polygon is attained at a vertex.
    """
    if poly.is_empty:
        raise GeometryError("max_affine_gap on empty polygon")
    vals = poly.vertices @ np.array([a, b], dtype=float) + c
    k = int(np.argmax(vals))
    return float(vals[k]), poly.vertices[k].copy()
