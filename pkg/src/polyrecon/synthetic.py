"""Synthetic polyhedral models and point sampling, for tests and demos."""
import numpy as np
import shapely

from .cloud import PolyMesh
from .geometry import Plane


def box_mesh(lo=(0, 0, 0), hi=(1, 1, 1)):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    faces = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    return PolyMesh(v, faces)


def prism_mesh(outline, z0, z1):
    """Extrude a counter-clockwise 2D outline between heights ``z0`` and ``z1``."""
    outline = np.asarray(outline, dtype=float)
    n = len(outline)
    v = np.vstack([np.column_stack([outline, np.full(n, z0)]), np.column_stack([outline, np.full(n, z1)])])
    faces = [tuple(range(n - 1, -1, -1)), tuple(range(n, 2 * n))]
    for i in range(n):
        j = (i + 1) % n
        faces.append((i, j, n + j, n + i))
    return PolyMesh(v, faces)


def l_shape_mesh():
    """L-shaped prism over [0,2]^2 x [0,1] with the [1,2]^2 corner removed (8 faces)."""
    return prism_mesh([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)], 0.0, 1.0)


def hollow_box_mesh(outer=3.0, inner=(1.0, 2.0)):
    """Cube shell with a closed cubic void; void faces point into the void."""
    out = box_mesh((0, 0, 0), (outer,) * 3)
    inn = box_mesh((inner[0],) * 3, (inner[1],) * 3)
    faces = list(out.faces) + [tuple(8 + i for i in reversed(f)) for f in inn.faces]
    return PolyMesh(np.vstack([out.vertices, inn.vertices]), faces)


def house_mesh(length=4.0, width=3.0, wall=2.0, ridge=3.0):
    """Box walls with a symmetric gable roof (7 planar faces)."""
    L, W, H, R = length, width, wall, ridge
    v = np.array([
        [0, 0, 0], [L, 0, 0], [L, W, 0], [0, W, 0],
        [0, 0, H], [L, 0, H], [L, W, H], [0, W, H],
        [0, W / 2, R], [L, W / 2, R],
    ], dtype=float)
    faces = [
        (3, 2, 1, 0),          # floor
        (0, 1, 5, 4),          # y = 0 wall
        (2, 3, 7, 6),          # y = W wall
        (1, 2, 6, 9, 5),       # x = L gable
        (3, 0, 4, 8, 7),       # x = 0 gable
        (4, 5, 9, 8),          # roof towards y = 0
        (6, 7, 8, 9),          # roof towards y = W
    ]
    return PolyMesh(v, faces)


def _face_triangles(vertices):
    """Triangulate one planar face ring (convex or not) into (k, 3, 3)."""
    n = np.cross(vertices, np.roll(vertices, -1, axis=0)).sum(axis=0)
    plane = Plane.from_point_normal(vertices[0], n)
    uv = plane.to_2d(vertices)
    tris = shapely.constrained_delaunay_triangles(shapely.Polygon(uv))
    out = []
    for tri in shapely.get_parts(tris):
        coords = np.asarray(tri.exterior.coords)[:3]
        out.append(plane.to_3d(coords))
    return np.array(out)


def sample_mesh(mesh, n, rng, noise=0.0):
    """``n`` area-uniform samples on the mesh faces plus isotropic Gaussian noise."""
    tris = np.concatenate([_face_triangles(mesh.vertices[list(f)]) for f in mesh.faces])
    areas = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
    pick = rng.choice(len(tris), size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    flip = r1 + r2 > 1
    r1[flip], r2[flip] = 1 - r1[flip], 1 - r2[flip]
    t = tris[pick]
    pts = t[:, 0] + r1[:, None] * (t[:, 1] - t[:, 0]) + r2[:, None] * (t[:, 2] - t[:, 0])
    if noise > 0:
        pts = pts + rng.normal(scale=noise, size=pts.shape)
    return pts


def cube_grid_points(n=50, lo=0.0, hi=1.0):
    """Cell-centered ``n x n`` grid on each face of a cube; returns points and face labels."""
    s = lo + (np.arange(n) + 0.5) * (hi - lo) / n
    a, b = (x.ravel() for x in np.meshgrid(s, s))
    pts, labels = [], []
    for axis in range(3):
        for k, value in enumerate((lo, hi)):
            p = np.empty((n * n, 3))
            others = [i for i in range(3) if i != axis]
            p[:, axis] = value
            p[:, others[0]] = a
            p[:, others[1]] = b
            pts.append(p)
            labels.append(np.full(n * n, 2 * axis + k))
    return np.vstack(pts), np.concatenate(labels)


def volume_outliers(lo, hi, count, rng):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return lo + rng.random((count, 3)) * (hi - lo)


def noisy_cube_cloud(n=10_000, noise=0.002, outlier_fraction=0.01, seed=0):
    """Unit cube surface samples plus volumetric outliers; returns (all, surface)."""
    rng = np.random.default_rng(seed)
    n_out = int(round(n * outlier_fraction))
    surface = sample_mesh(box_mesh(), n - n_out, rng, noise)
    outliers = volume_outliers((0, 0, 0), (1, 1, 1), n_out, rng)
    return np.vstack([surface, outliers]), surface


def grid_patch(origin, e1, e2, n=20):
    """Cell-centered ``n x n`` grid over the parallelogram ``origin + [0,1]e1 + [0,1]e2``."""
    s = (np.arange(n) + 0.5) / n
    a, b = (x.ravel() for x in np.meshgrid(s, s))
    return np.asarray(origin, float) + a[:, None] * np.asarray(e1, float) + b[:, None] * np.asarray(e2, float)


def patch_plane(origin, e1, e2, n=20, alpha=None):
    """A detected plane built from a grid patch, with the exact patch plane.

    The footprint of a cell-centered grid stops half a spacing short of the
    patch edges.
    """
    from .planes import DetectedPlane

    pts = grid_patch(origin, e1, e2, n)
    step = max(np.linalg.norm(e1), np.linalg.norm(e2)) / n
    alpha = (2.0 * step) ** 2 if alpha is None else alpha
    plane = Plane.from_point_normal(origin, np.cross(e1, e2))
    return DetectedPlane.from_points(pts, alpha, plane=plane)


def box_planes(lo=(0, 0, 0), hi=(1, 1, 1), n=20):
    """The six face patches of an axis-aligned box, outward normals, order -x +x -y +y -z +z."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    ext = hi - lo
    out = []
    for axis in range(3):
        i, j = [k for k in range(3) if k != axis]
        e1, e2 = np.zeros(3), np.zeros(3)
        e1[i], e2[j] = ext[i], ext[j]
        for high in (False, True):
            o = lo.copy()
            if high:
                o[axis] = hi[axis]
            a, b = (e1, e2) if high == (axis != 1) else (e2, e1)
            out.append(patch_plane(o, a, b, n))
    return out


def face_grid_points(mesh, spacing):
    """Cell-centered grid samples inside every mesh face; returns points and face labels."""
    pts, labels = [], []
    for k, f in enumerate(mesh.faces):
        ring = mesh.vertices[list(f)]
        plane = Plane.from_point_normal(ring[0], np.cross(ring, np.roll(ring, -1, axis=0)).sum(axis=0))
        uv = plane.to_2d(ring)
        lo, hi = uv.min(axis=0), uv.max(axis=0)
        xs = np.arange(lo[0] + spacing / 2, hi[0], spacing)
        ys = np.arange(lo[1] + spacing / 2, hi[1], spacing)
        grid = np.array(np.meshgrid(xs, ys)).reshape(2, -1).T
        inside = shapely.contains_xy(shapely.Polygon(uv), grid[:, 0], grid[:, 1])
        pts.append(plane.to_3d(grid[inside]))
        labels.append(np.full(int(inside.sum()), k))
    return np.vstack(pts), np.concatenate(labels)


def mesh_planes(mesh, spacing, alpha=None):
    """One detected plane per mesh face from grid samples, using the exact face planes."""
    from .planes import DetectedPlane

    pts, labels = face_grid_points(mesh, spacing)
    alpha = (2.0 * spacing) ** 2 if alpha is None else alpha
    out = []
    for k, f in enumerate(mesh.faces):
        ring = mesh.vertices[list(f)]
        plane = Plane.from_point_normal(ring[0], np.cross(ring, np.roll(ring, -1, axis=0)).sum(axis=0))
        idx = np.flatnonzero(labels == k)
        out.append(DetectedPlane.from_points(pts[idx], alpha, inliers=idx, plane=plane))
    return out
