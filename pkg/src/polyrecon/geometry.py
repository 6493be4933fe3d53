"""
Geometric value types and kernels.

Planes, convex polygons and convex polyhedral cells, plus the operations the
reconstruction relies on: least-squares plane fitting, 3D convex hulls,
plane/cell clipping, 2D alpha shapes and two winding-number kernels (the
face-center monopole sum used for labeling, and an exact solid-angle sum used
as a reference).

Cells store an indexed vertex table and index rings so that vertices shared by
neighboring faces are the same floating point values; clipping reuses those
indices, which keeps every cut watertight.
"""
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import shapely
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .errors import DegenerateInput, SingularEvaluation

#: coplanar face merging threshold (radians)
ANGLE_TOL = 1e-6
#: relative point-on-plane tolerance for exact synthetic geometry
REL_PLANE_TOL = 1e-9
#: default distance below which winding kernels refuse to evaluate
EPS_DIST = 1e-12


def as_points(points, dim=3):
    """Return ``points`` as a finite float array of shape (n, dim)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected an array of shape (n, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points contain NaN or infinite coordinates")
    return arr


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


def bbox_diagonal(points):
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return 0.0
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def plane_tolerance(points):
    """Scale-aware point-on-plane tolerance for exact geometry."""
    return REL_PLANE_TOL * max(bbox_diagonal(points), 1e-300)


# ---------------------------------------------------------------------------
# planes and polygons
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Plane:
    """Oriented plane ``{x : normal . x = offset}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        off = float(self.offset)
        if not (np.all(np.isfinite(n)) and math.isfinite(off)):
            raise ValueError("plane parameters must be finite")
        norm = float(np.linalg.norm(n))
        if norm == 0.0:
            raise DegenerateInput("plane normal has zero length")
        if abs(norm - 1.0) > 1e-12:
            n = n / norm
            off = off / norm
        object.__setattr__(self, "normal", _frozen(n))
        object.__setattr__(self, "offset", off)

    @classmethod
    def from_point_normal(cls, point, normal):
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(n, float(n @ np.asarray(point, dtype=float)))

    def signed_distance(self, points):
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def project(self, points):
        pts = np.asarray(points, dtype=float)
        d = self.signed_distance(pts)
        return pts - np.multiply.outer(d, self.normal)

    def flipped(self):
        return Plane(-self.normal, -self.offset)

    def angle_to(self, other):
        """Acute angle between the two planes (normal signs ignored), radians."""
        c = abs(float(self.normal @ other.normal))
        return math.acos(min(1.0, c))

    @cached_property
    def basis(self):
        """``(origin, u, v)`` with ``u x v = normal``; deterministic in the normal."""
        n = self.normal
        axis = np.zeros(3)
        axis[int(np.argmin(np.abs(n)))] = 1.0
        u = np.cross(n, axis)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return n * self.offset, u, v

    def to_2d(self, points):
        origin, u, v = self.basis
        rel = np.asarray(points, dtype=float) - origin
        return np.stack([rel @ u, rel @ v], axis=-1)

    def to_3d(self, uv):
        origin, u, v = self.basis
        uv = np.asarray(uv, dtype=float)
        return origin + np.multiply.outer(uv[..., 0], u) + np.multiply.outer(uv[..., 1], v)

    def __repr__(self):
        n = ", ".join(f"{c:.6g}" for c in self.normal)
        return f"Plane(normal=({n}), offset={self.offset:.6g})"


def _ring_area_vector(vertices):
    v = np.asarray(vertices, dtype=float)
    return 0.5 * np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0)


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Planar convex polygon, counter-clockwise seen from the normal side."""

    plane: Plane
    vertices: np.ndarray

    def __post_init__(self):
        v = as_points(self.vertices)
        if len(v) < 3:
            raise DegenerateInput("a polygon needs at least 3 vertices")
        object.__setattr__(self, "vertices", _frozen(v))

    @cached_property
    def area(self):
        return float(_ring_area_vector(self.vertices) @ self.plane.normal)

    @cached_property
    def centroid(self):
        v = self.vertices
        a, b, c = v[0], v[1:-1], v[2:]
        w = np.cross(b - a, c - a) @ self.plane.normal
        total = w.sum()
        if total == 0.0:
            return v.mean(axis=0)
        return ((a + b + c) / 3.0 * w[:, None]).sum(axis=0) / total

    @property
    def normal(self):
        return self.plane.normal

    def reversed(self):
        return ConvexPolygon(self.plane.flipped(), self.vertices[::-1])

    def to_2d(self):
        return self.plane.to_2d(self.vertices)


def fit_plane(points):
    """Total-least-squares plane through ``points``.

    The normal sign is chosen so the first point has a non-negative residual;
    when that residual vanishes, the largest normal component is made positive.
    """
    pts = as_points(points)
    if len(pts) < 3:
        raise DegenerateInput("plane fitting needs at least 3 points")
    center = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - center, full_matrices=False)
    if s[0] == 0.0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateInput("points are collinear")
    normal = vt[2] / np.linalg.norm(vt[2])
    offset = float(normal @ center)
    r0 = float(normal @ pts[0]) - offset
    scale = max(float(np.abs(pts).max()), 1.0)
    if abs(r0) <= 1e-12 * scale:
        if normal[int(np.argmax(np.abs(normal)))] < 0:
            normal, offset = -normal, -offset
    elif r0 < 0:
        normal, offset = -normal, -offset
    return Plane(normal, offset)


# ---------------------------------------------------------------------------
# convex cells
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConvexCell:
    """Convex polyhedron as an indexed vertex table plus outward face rings.

    ``source_planes[i]`` records which input plane produced face ``i``
    (``-1`` when there is none, e.g. faces of a raw convex hull).
    """

    vertices: np.ndarray
    rings: tuple
    face_planes: tuple
    source_planes: tuple

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(as_points(self.vertices)))
        object.__setattr__(self, "rings", tuple(tuple(int(i) for i in r) for r in self.rings))
        object.__setattr__(self, "face_planes", tuple(self.face_planes))
        object.__setattr__(self, "source_planes", tuple(int(s) for s in self.source_planes))
        if not (len(self.rings) == len(self.face_planes) == len(self.source_planes)):
            raise ValueError("rings, face_planes and source_planes must have equal length")

    @cached_property
    def faces(self):
        return [ConvexPolygon(p, self.vertices[list(r)]) for r, p in zip(self.rings, self.face_planes)]

    @cached_property
    def eps(self):
        return plane_tolerance(self.vertices)

    @cached_property
    def _tets(self):
        ref = self.vertices.mean(axis=0)
        vols, cents = [], []
        for ring in self.rings:
            v = self.vertices[list(ring)]
            a, b, c = v[0], v[1:-1], v[2:]
            vols.append(np.cross(b - ref, c - ref) @ (a - ref) / 6.0)
            cents.append((ref + a + b + c) / 4.0)
        return np.concatenate(vols), np.concatenate(cents)

    @cached_property
    def volume(self):
        return float(math.fsum(self._tets[0]))

    @cached_property
    def centroid(self):
        vols, cents = self._tets
        return (cents * vols[:, None]).sum(axis=0) / vols.sum()

    def __repr__(self):
        return f"ConvexCell({len(self.vertices)} vertices, {len(self.rings)} faces, volume={self.volume:.6g})"

    def directed_edges(self):
        return [(r[k], r[(k + 1) % len(r)]) for r in self.rings for k in range(len(r))]

    def is_watertight(self):
        edges = self.directed_edges()
        if len(set(edges)) != len(edges):
            return False
        es = set(edges)
        return all((b, a) in es for a, b in edges)

    def is_convex(self, tol=None):
        tol = self.eps * 10 if tol is None else tol
        for plane in self.face_planes:
            if np.any(plane.signed_distance(self.vertices) > tol):
                return False
        return True

    def contains(self, points, tol=0.0):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ok = np.ones(len(pts), dtype=bool)
        for plane in self.face_planes:
            ok &= plane.signed_distance(pts) <= tol
        return ok

    def face_triples(self):
        """(center, area, outward normal) triples for every face."""
        return [(f.centroid, f.area, f.normal) for f in self.faces]


def _order_ring(indices, points, plane):
    uv = plane.to_2d(points[indices])
    c = uv.mean(axis=0)
    ang = np.arctan2(uv[:, 1] - c[1], uv[:, 0] - c[0])
    return [indices[i] for i in np.argsort(ang, kind="stable")]


def convex_hull(points):
    """Convex hull of ``points`` with coplanar facets merged into polygons."""
    pts = as_points(points)
    if len(pts) < 4:
        raise DegenerateInput("convex hull needs at least 4 points")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateInput("points are coplanar or otherwise degenerate") from exc
    eps = plane_tolerance(pts)
    cos_tol = math.cos(ANGLE_TOL)
    groups = []  # [normal_sum, offsets, count, vertex set]
    for simplex, eq in zip(hull.simplices, hull.equations):
        n, off = eq[:3], -eq[3]
        for g in groups:
            gn = g[0] / np.linalg.norm(g[0])
            if gn @ n > cos_tol and abs(g[1] / g[2] - off) < eps:
                g[0] = g[0] + n
                g[1] += off
                g[2] += 1
                g[3].update(int(i) for i in simplex)
                break
        else:
            groups.append([n.copy(), off, 1, {int(i) for i in simplex}])

    verts = np.array(sorted(int(i) for i in hull.vertices))
    remap = {int(v): k for k, v in enumerate(verts)}
    hv = pts[verts]
    rings, planes = [], []
    for g in groups:
        normal = g[0] / np.linalg.norm(g[0])
        plane = Plane(normal, g[1] / g[2])
        on = np.flatnonzero(np.abs(plane.signed_distance(hv)) <= eps)
        members = sorted(set(on.tolist()) | {remap[i] for i in g[3] if i in remap})
        if len(members) < 3:
            continue
        rings.append(_order_ring(members, hv, plane))
        planes.append(plane)
    return ConvexCell(hv, rings, planes, [-1] * len(rings))


def box_cell(lo, hi, sources=None):
    """Axis-aligned box as a cell; faces ordered -x, +x, -y, +y, -z, +z."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi <= lo):
        raise DegenerateInput("box must have positive extent")
    v = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    # vertex index = 4*ix + 2*iy + iz
    rings = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    planes = [
        Plane([-1, 0, 0], -lo[0]), Plane([1, 0, 0], hi[0]),
        Plane([0, -1, 0], -lo[1]), Plane([0, 1, 0], hi[1]),
        Plane([0, 0, -1], -lo[2]), Plane([0, 0, 1], hi[2]),
    ]
    return ConvexCell(v, rings, planes, [-1] * 6 if sources is None else sources)


def _chain_cap(edges):
    """Chain directed cap edges into one ring, or None if they do not form one."""
    nxt = {}
    for u, v in edges:
        if u in nxt:
            return None
        nxt[u] = v
    if len(nxt) < 3:
        return None
    start = min(nxt)
    ring = [start]
    cur = nxt[start]
    while cur != start:
        if cur not in nxt or len(ring) > len(nxt):
            return None
        ring.append(cur)
        cur = nxt[cur]
    return ring if len(ring) == len(nxt) else None


def _split(cell, plane, eps):
    verts = cell.vertices
    n = len(verts)
    d = plane.signed_distance(verts)
    side = np.where(d > eps, 1, np.where(d < -eps, -1, 0))
    if not (side < 0).any():
        return None, cell, None
    if not (side > 0).any():
        return cell, None, None

    new_points = []
    cuts = {}

    def cut(a, b):
        key = (a, b) if a < b else (b, a)
        idx = cuts.get(key)
        if idx is None:
            i, j = key
            t = d[i] / (d[i] - d[j])
            new_points.append(verts[i] + t * (verts[j] - verts[i]))
            idx = n + len(new_points) - 1
            cuts[key] = idx
        return idx

    halves = {-1: [], 1: []}
    for ring, fplane, src in zip(cell.rings, cell.face_planes, cell.source_planes):
        sides = side[list(ring)]
        if not sides.any():
            continue
        neg, pos = [], []
        m = len(ring)
        for k in range(m):
            a, b = ring[k], ring[(k + 1) % m]
            sa, sb = side[a], side[b]
            if sa <= 0:
                neg.append(a)
            if sa >= 0:
                pos.append(a)
            if sa * sb < 0:
                x = cut(a, b)
                neg.append(x)
                pos.append(x)
        if len(neg) >= 3 and (sides < 0).any():
            halves[-1].append((neg, fplane, src))
        if len(pos) >= 3 and (sides > 0).any():
            halves[1].append((pos, fplane, src))

    all_points = np.vstack([verts, np.array(new_points).reshape(-1, 3)])

    def on_plane(i):
        return i >= n or side[i] == 0

    caps = {}
    for s in (-1, 1):
        edges = set()
        for ring, _, _ in halves[s]:
            m = len(ring)
            for k in range(m):
                a, b = ring[k], ring[(k + 1) % m]
                if on_plane(a) and on_plane(b):
                    if (a, b) in edges:
                        edges.remove((a, b))
                    else:
                        edges.add((b, a))
        cap = _chain_cap(sorted(edges))
        if cap is None:
            members = sorted({i for e in edges for i in e})
            cap_plane = plane if s < 0 else plane.flipped()
            cap = _order_ring(members, all_points, cap_plane) if len(members) >= 3 else None
        caps[s] = cap

    out = []
    for s in (-1, 1):
        faces = halves[s]
        cap = caps[s]
        if cap is None or len(faces) < 3:
            out.append(None)
            continue
        faces = faces + [(cap, plane if s < 0 else plane.flipped(), None)]
        used = sorted({i for ring, _, _ in faces for i in ring})
        remap = {old: k for k, old in enumerate(used)}
        out.append((
            all_points[used],
            [[remap[i] for i in ring] for ring, _, _ in faces],
            [fp for _, fp, _ in faces],
            [src for _, _, src in faces],
        ))
    cap_points = all_points[caps[-1]] if caps[-1] is not None else None
    return out[0], out[1], cap_points


def clip_cell(cell, plane, eps=None, source=-1):
    """Split ``cell`` by ``plane`` into its negative and positive parts.

    Either part is ``None`` when the plane misses (or only touches) the cell.
    Vertices within ``eps`` of the plane count as lying on it. The new face
    carries ``source`` as its source plane id; its outward normal is
    ``plane.normal`` on the negative part and ``-plane.normal`` on the
    positive part.
    """
    eps = cell.eps if eps is None else eps
    neg, pos, _ = _split(cell, plane, eps)
    result = []
    for part in (neg, pos):
        if part is None or isinstance(part, ConvexCell):
            result.append(part)
            continue
        v, rings, planes, sources = part
        sources = [source if s is None else s for s in sources]
        result.append(ConvexCell(v, rings, planes, sources))
    return result[0], result[1]


def section_polygon(cell, plane, eps=None):
    """Cross-section of ``cell`` by ``plane`` (normal = ``plane.normal``), or None."""
    eps = cell.eps if eps is None else eps
    neg, pos, cap = _split(cell, plane, eps)
    if cap is None or neg is None or pos is None or isinstance(neg, ConvexCell):
        return None
    return ConvexPolygon(plane, cap)


def polygon_area_2d_signed(ring):
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def clip_convex_2d(subject, clip, eps=0.0):
    """Intersection of two convex 2D polygons (Sutherland-Hodgman), counter-clockwise.

    Points within ``eps`` of a clip edge count as inside, so polygons that
    only touch yield a degenerate sliver rather than a spurious overlap.
    """
    out = np.asarray(subject, dtype=float)
    clip = np.asarray(clip, dtype=float)
    if polygon_area_2d_signed(out) < 0:
        out = out[::-1]
    if polygon_area_2d_signed(clip) < 0:
        clip = clip[::-1]
    for a, b in zip(clip, np.roll(clip, -1, axis=0)):
        if len(out) == 0:
            break
        e = b - a
        length = math.hypot(e[0], e[1])
        if length == 0.0:
            continue
        side = (e[0] * (out[:, 1] - a[1]) - e[1] * (out[:, 0] - a[0])) / length
        keep = []
        for i in range(len(out)):
            j = (i + 1) % len(out)
            si, sj = side[i], side[j]
            if si >= -eps:
                keep.append(out[i])
            if (si >= -eps) != (sj >= -eps):
                t = si / (si - sj)
                keep.append(out[i] + t * (out[j] - out[i]))
        out = np.array(keep).reshape(-1, 2)
    return out


# ---------------------------------------------------------------------------
# 2D alpha shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AlphaShape2D:
    """Alpha complex of a planar point set.

    ``triangles`` index the retained Delaunay triangles (counter-clockwise),
    ``boundary_loops`` are closed polylines along edges used by exactly one of
    them and ``boundary_indices`` lists the points on those loops.
    """

    points: np.ndarray
    triangles: np.ndarray
    boundary_loops: tuple
    boundary_indices: np.ndarray
    area: float
    alpha: float

    @cached_property
    def polygon(self):
        """Union of the retained triangles as a shapely geometry."""
        if len(self.triangles) == 0:
            return shapely.Polygon()
        tris = shapely.polygons(self.points[self.triangles])
        return shapely.union_all(tris, grid_size=None)


def _boundary_loops(triangles):
    count = {}
    for tri in triangles:
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    directed = []
    for tri in triangles:
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            if count[(min(a, b), max(a, b))] == 1:
                directed.append((a, b))
    outgoing = {}
    for a, b in sorted(directed):
        outgoing.setdefault(a, []).append(b)
    loops = []
    while outgoing:
        start = min(outgoing)
        loop = [start]
        cur = start
        while True:
            nbrs = outgoing.get(cur)
            if not nbrs:
                break
            nxt = nbrs.pop(0)
            if not nbrs:
                del outgoing[cur]
            if nxt == start:
                break
            loop.append(nxt)
            cur = nxt
        loops.append(loop)
    return loops


def alpha_shape_2d(points2d, alpha):
    """Alpha complex of 2D points: Delaunay triangles with circumradius^2 <= alpha."""
    pts = as_points(points2d, dim=2)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if len(pts) < 3:
        raise DegenerateInput("alpha shape needs at least 3 points")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateInput("points are collinear") from exc
    simp = tri.simplices
    a, b, c = pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    simp = np.where((cross < 0)[:, None], simp[:, [0, 2, 1]], simp)
    area2 = np.abs(cross)
    la = np.sum((b - c) ** 2, axis=1)
    lb = np.sum((c - a) ** 2, axis=1)
    lc = np.sum((a - b) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(area2 > 0, la * lb * lc / (4.0 * area2**2), np.inf)
    keep = r2 <= alpha
    kept = simp[keep]
    area = float(math.fsum(0.5 * area2[keep]))
    loops = _boundary_loops(kept)
    bidx = np.unique(np.concatenate([np.asarray(l, dtype=int) for l in loops])) if loops else np.zeros(0, int)
    return AlphaShape2D(
        points=_frozen(pts),
        triangles=_frozen(kept, dtype=int),
        boundary_loops=tuple(_frozen(pts[l]) for l in loops),
        boundary_indices=_frozen(bidx, dtype=int),
        area=area,
        alpha=float(alpha),
    )


# ---------------------------------------------------------------------------
# distances and winding numbers
# ---------------------------------------------------------------------------

def _inside_ring_2d(pts, ring):
    """Even-odd point in polygon test, vectorized over ``pts``."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    x0, y0 = ring[:, 0], ring[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for i in range(len(ring)):
        cond = (y0[i] > y) != (y1[i] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0[i] + (y - y0[i]) * (x1[i] - x0[i]) / (y1[i] - y0[i])
        inside ^= cond & (x < xint)
    return inside


def segment_distance(points, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(len(points)) if denom == 0 else np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + np.multiply.outer(t, ab)), axis=1)


def point_polygon_distance(points, vertices, plane):
    """Exact distance from each point to a planar (possibly non-convex) polygon."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ring = np.asarray(vertices, dtype=float)
    inside = _inside_ring_2d(plane.to_2d(pts), plane.to_2d(ring))
    dist = np.abs(plane.signed_distance(pts))
    out = ~inside
    if out.any():
        sub = pts[out]
        best = np.full(len(sub), np.inf)
        for k in range(len(ring)):
            best = np.minimum(best, segment_distance(sub, ring[k], ring[(k + 1) % len(ring)]))
        dist = dist.copy()
        dist[out] = best
    return dist


def _face_arrays(faces):
    faces = list(faces)
    if not faces:
        return np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3))
    centers = np.array([f[0] for f in faces], dtype=float).reshape(-1, 3)
    areas = np.array([f[1] for f in faces], dtype=float)
    normals = np.array([f[2] for f in faces], dtype=float).reshape(-1, 3)
    return centers, areas, normals


def winding_number_approx(q, faces, eps_dist=EPS_DIST):
    """Face-center winding number ``sum a_i (p_i - q).n_i / (4 pi |p_i - q|^3)``.

    ``faces`` is a sequence of ``(center, area, normal)``; the sum runs in face
    order with compensated summation.
    """
    centers, areas, normals = _face_arrays(faces)
    return float(winding_field_approx(np.asarray(q, dtype=float).reshape(1, 3), centers, areas, normals, eps_dist)[0])


def winding_field_approx(queries, centers, areas, normals, eps_dist=EPS_DIST):
    """Vectorized :func:`winding_number_approx` over many query points."""
    qs = np.atleast_2d(np.asarray(queries, dtype=float))
    out = np.zeros(len(qs))
    if len(centers) == 0:
        return out
    for k, q in enumerate(qs):
        rel = centers - q
        dist = np.linalg.norm(rel, axis=1)
        if np.any(dist <= eps_dist):
            i = int(np.argmax(dist <= eps_dist))
            raise SingularEvaluation(f"query point coincides with the center of face {i}")
        terms = areas * np.einsum("ij,ij->i", rel, normals) / (4.0 * math.pi * dist**3)
        out[k] = math.fsum(terms)
    return out


def _solid_angles(q, tris):
    a = tris[:, 0] - q
    b = tris[:, 1] - q
    c = tris[:, 2] - q
    la, lb, lc = (np.linalg.norm(x, axis=1) for x in (a, b, c))
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = (la * lb * lc + np.einsum("ij,ij->i", a, b) * lc
           + np.einsum("ij,ij->i", a, c) * lb + np.einsum("ij,ij->i", b, c) * la)
    return 2.0 * np.arctan2(num, den)


def winding_number_exact(q, faces, eps_dist=EPS_DIST):
    """Signed solid angle of oriented polygons around ``q`` divided by 4 pi."""
    q = np.asarray(q, dtype=float).reshape(3)
    faces = list(faces)
    if not faces:
        return 0.0
    tris = []
    for face in faces:
        v = face.vertices
        near_plane = abs(face.plane.signed_distance(q)) <= eps_dist
        if near_plane and point_polygon_distance(q, v, face.plane)[0] <= eps_dist:
            raise SingularEvaluation("query point lies on a face")
        for k in range(1, len(v) - 1):
            tris.append((v[0], v[k], v[k + 1]))
    return float(math.fsum(_solid_angles(q, np.array(tris))) / (4.0 * math.pi))


def polygon_area_2d(ring):
    r = np.asarray(ring, dtype=float)
    return 0.5 * float(np.sum(r[:, 0] * np.roll(r[:, 1], -1) - np.roll(r[:, 0], -1) * r[:, 1]))
