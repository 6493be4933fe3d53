"""
Plane detection without per-point normals, and merging of near-duplicate planes.

Detection is a seeded greedy multi-plane RANSAC. Each round proposes planes
from three-point samples (a random seed point plus two of its nearest
neighbors), scores every proposal by fidelity, coverage and a per-plane
simplicity penalty, claims the winner's inliers and refits it. A final
assignment pass hands every point to its nearest plane within the inlier band.

Merging combines two planes when their normals are within ``theta`` degrees
and they share more than ``min(|A|, |B|) / merge_divisor`` points, where a
shared point lies within the inlier band of both planes.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateInput, NoPlanesFound
from .geometry import AlphaShape2D, Plane, alpha_shape_2d, fit_plane, _frozen

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionParams:
    """Parameters for :func:`detect_planes` and :func:`refine_planes`.

    ``theta`` is in degrees. ``alpha`` (squared radius) controls the plane
    footprints.
    """

    eps_inlier: float
    min_support: int = 50
    theta: float = 10.0
    merge_divisor: int = 5
    w_fidelity: float = 1.0
    w_simplicity: float = 1.0
    w_completeness: float = 1.0
    seed: int = 0
    alpha: float = None
    n_proposals: int = 300
    sample_neighbors: int = 16

    def __post_init__(self):
        if not self.eps_inlier > 0:
            raise ConfigError("eps_inlier must be positive")
        if self.min_support < 3:
            raise ConfigError("min_support must be at least 3")
        if not 0 < self.theta < 90:
            raise ConfigError("theta must lie in (0, 90) degrees")
        if self.merge_divisor < 1:
            raise ConfigError("merge_divisor must be at least 1")
        if self.n_proposals < 1 or self.sample_neighbors < 2:
            raise ConfigError("need n_proposals >= 1 and sample_neighbors >= 2")
        if self.alpha is None:
            object.__setattr__(self, "alpha", float(self.eps_inlier * 2.0) ** 2)
        elif not self.alpha > 0:
            raise ConfigError("alpha must be positive")

    @classmethod
    def for_cloud(cls, cloud, **overrides):
        """Scale-adaptive defaults: band 2x spacing, alpha (4x spacing)^2."""
        s = cloud.avg_spacing
        defaults = dict(
            eps_inlier=2.0 * s,
            min_support=max(50, math.ceil(0.001 * len(cloud))),
            alpha=(4.0 * s) ** 2,
        )
        defaults.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**defaults)


@dataclass(frozen=True, eq=False)
class DetectedPlane:
    """A fitted plane with its inlier points and alpha-shape footprint.

    ``inliers`` are sorted indices into the detection cloud and ``points``
    the matching coordinates. The footprint lives in ``plane.to_2d``
    coordinates.
    """

    plane: Plane
    inliers: np.ndarray
    points: np.ndarray
    footprint: AlphaShape2D
    score: float = 0.0

    def __len__(self):
        return len(self.inliers)

    def __repr__(self):
        return f"DetectedPlane({self.plane!r}, {len(self)} inliers, area={self.footprint.area:.4g})"

    @property
    def boundary_points(self):
        """Original 3D inlier points lying on the footprint boundary."""
        return self.points[self.footprint.boundary_indices]

    @classmethod
    def from_points(cls, points, alpha, inliers=None, plane=None, score=0.0):
        pts = np.asarray(points, dtype=float)
        idx = np.arange(len(pts)) if inliers is None else np.asarray(inliers, dtype=int)
        order = np.argsort(idx, kind="stable")
        idx, pts = idx[order], pts[order]
        plane = fit_plane(pts) if plane is None else plane
        footprint = alpha_shape_2d(plane.to_2d(pts), alpha)
        return cls(plane, _frozen(idx, dtype=int), _frozen(pts), footprint, float(score))


def _score(dist, eps, n_free, params):
    cnt = len(dist)
    if cnt == 0:
        return -math.inf
    fidelity = 1.0 - float(np.mean(dist)) / eps
    return params.w_fidelity * fidelity + params.w_completeness * cnt / n_free - params.w_simplicity / cnt


def _propose(pts, free, nbrs, rng, params):
    """Random local three-point plane proposals; returns (normals, offsets)."""
    free_idx = np.flatnonzero(free)
    seeds = rng.choice(free_idx, size=params.n_proposals, replace=True)
    cand = nbrs[seeds]
    keys = rng.random(cand.shape)
    keys[~free[cand]] = 2.0
    pick = np.argsort(keys, axis=1, kind="stable")[:, :2]
    valid = np.take_along_axis(keys, pick, axis=1).max(axis=1) < 2.0
    rows = np.arange(len(seeds))
    a, b, c = pts[seeds], pts[cand[rows, pick[:, 0]]], pts[cand[rows, pick[:, 1]]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    scale = np.maximum(np.linalg.norm(b - a, axis=1) * np.linalg.norm(c - a, axis=1), 1e-300)
    valid &= norms > 1e-6 * scale
    normals = normals[valid] / norms[valid, None]
    offsets = np.einsum("ij,ij->i", normals, a[valid])
    return normals, offsets


def _refit(pts, members_of, plane, rounds=3):
    for _ in range(rounds):
        members = members_of(plane)
        if len(members) < 3:
            break
        try:
            new = fit_plane(pts[members])
        except DegenerateInput:
            break
        if np.allclose(new.normal, plane.normal, rtol=0, atol=1e-15) and new.offset == plane.offset:
            break
        plane = new
    return plane


def _assign(pts, planes, eps):
    dist = np.abs(np.stack([p.signed_distance(pts) for p in planes], axis=1))
    nearest = np.argmin(dist, axis=1)
    within = dist[np.arange(len(pts)), nearest] < eps
    return np.where(within, nearest, -1), dist


def detect_planes(cloud, params):
    """Greedy multi-plane detection; each point ends up in at most one plane."""
    pts = cloud.points
    n = len(pts)
    eps = params.eps_inlier
    if n < params.min_support:
        raise NoPlanesFound(f"{n} points is below min_support={params.min_support}")
    rng = np.random.default_rng(params.seed)
    k = min(params.sample_neighbors, n - 1)
    _, nbrs = cloud.kdtree.query(pts, k=k + 1)
    nbrs = nbrs[:, 1:]

    free = np.ones(n, dtype=bool)
    planes = []
    while free.sum() >= params.min_support:
        free_idx = np.flatnonzero(free)
        q = pts[free_idx]
        normals, offsets = _propose(pts, free, nbrs, rng, params)
        if len(normals) == 0:
            break
        dist = np.abs(q @ normals.T - offsets)
        inside = dist < eps
        cnt = inside.sum(axis=0)
        mean = np.where(inside, dist, 0.0).sum(axis=0) / np.maximum(cnt, 1)
        score = (params.w_fidelity * (1.0 - mean / eps) + params.w_completeness * cnt / len(q)
                 - params.w_simplicity / np.maximum(cnt, 1))
        score[cnt < 3] = -np.inf
        best = int(np.argmax(score))
        if not np.isfinite(score[best]):
            break
        plane = Plane(normals[best], offsets[best])

        def members_of(pl):
            return free_idx[np.abs(pl.signed_distance(q)) < eps]

        plane = _refit(pts, members_of, plane)
        members = members_of(plane)
        if len(members) < params.min_support:
            break
        planes.append(plane)
        free[members] = False
        log.debug("plane %d: %s with %d inliers", len(planes) - 1, plane, len(members))

    if not planes:
        raise NoPlanesFound("no plane reached min_support")

    # nearest-plane assignment, then refit; repeated to settle points near edges
    for _ in range(2):
        assign, _ = _assign(pts, planes, eps)
        refit = []
        for i, plane in enumerate(planes):
            members = np.flatnonzero(assign == i)
            if len(members) >= 3:
                try:
                    plane = fit_plane(pts[members])
                except DegenerateInput:
                    pass
            refit.append(plane)
        planes = refit
    while True:
        assign, dist = _assign(pts, planes, eps)
        counts = np.bincount(assign[assign >= 0], minlength=len(planes))
        weak = counts < params.min_support
        if not weak.any():
            break
        planes = [p for p, w in zip(planes, weak) if not w]
        if not planes:
            raise NoPlanesFound("no plane kept min_support after reassignment")

    out = []
    for i, plane in enumerate(planes):
        members = np.flatnonzero(assign == i)
        try:
            det = DetectedPlane.from_points(pts[members], params.alpha, inliers=members, plane=plane,
                                            score=_score(dist[members, i], eps, n, params))
        except DegenerateInput:
            continue
        if det.footprint.area > 0:
            out.append(det)
    if not out:
        raise NoPlanesFound("no plane has a non-degenerate footprint")
    return out


def shared_point_count(a, b, eps):
    pts = np.vstack([a.points, b.points])
    near_a = np.abs(a.plane.signed_distance(pts)) < eps
    near_b = np.abs(b.plane.signed_distance(pts)) < eps
    return int(np.count_nonzero(near_a & near_b))


def prr_should_merge(a, b, params):
    """Merge test: acute normal angle below ``theta`` and enough shared points."""
    if math.degrees(a.plane.angle_to(b.plane)) >= params.theta:
        return False
    threshold = min(len(a), len(b)) / params.merge_divisor
    return shared_point_count(a, b, params.eps_inlier) > threshold


def merge_planes(a, b, params):
    idx = np.concatenate([a.inliers, b.inliers])
    pts = np.vstack([a.points, b.points])
    idx, first = np.unique(idx, return_index=True)
    return DetectedPlane.from_points(pts[first], params.alpha, inliers=idx, score=max(a.score, b.score))


def refine_planes(planes, params):
    """Merge the first mergeable pair (index order) until none is left."""
    planes = list(planes)
    if not planes:
        raise ValueError("refine_planes needs at least one plane")
    merged = True
    while merged:
        merged = False
        for i in range(len(planes)):
            for j in range(i + 1, len(planes)):
                if prr_should_merge(planes[i], planes[j], params):
                    planes[i] = merge_planes(planes[i], planes[j], params)
                    del planes[j]
                    merged = True
                    break
            if merged:
                break
    return planes


# ---------------------------------------------------------------------------
# serialization and debug output
# ---------------------------------------------------------------------------

def planes_to_dict(planes, cloud=None, params=None):
    data = {
        "planes": [
            {
                "normal": p.plane.normal.tolist(),
                "offset": p.plane.offset,
                "inliers": p.inliers.tolist(),
                "score": p.score,
                "footprint_area": p.footprint.area,
            }
            for p in planes
        ]
    }
    if cloud is not None:
        data["points"] = cloud.points.tolist()
    if params is not None:
        data["params"] = asdict(params)
    return data


def planes_from_dict(data, points, alpha):
    pts = np.asarray(points, dtype=float)
    out = []
    for rec in data["planes"]:
        idx = np.asarray(rec["inliers"], dtype=int)
        plane = Plane(rec["normal"], rec["offset"])
        out.append(DetectedPlane.from_points(pts[idx], alpha, inliers=idx, plane=plane, score=rec["score"]))
    return out


def dump_planes(planes, cloud, directory):
    """Write one colored PLY per plane plus a JSON manifest of plane equations."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    manifest = []
    for i, p in enumerate(planes):
        color = rng.integers(40, 256, size=3)
        dtype = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
        rec = np.zeros(len(p.points), dtype=dtype)
        rec["x"], rec["y"], rec["z"] = p.points.T
        rec["red"], rec["green"], rec["blue"] = color
        head = ("ply\nformat binary_little_endian 1.0\n"
                f"element vertex {len(rec)}\n"
                "property double x\nproperty double y\nproperty double z\n"
                "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
        name = f"plane_{i:03d}.ply"
        (directory / name).write_bytes(head.encode("ascii") + rec.tobytes())
        manifest.append({"id": i, "file": name, "normal": p.plane.normal.tolist(), "offset": p.plane.offset,
                         "inliers": len(p), "footprint_area": p.footprint.area, "score": p.score})
    (directory / "planes.json").write_text(json.dumps({"planes": manifest}, indent=1) + "\n")


def with_seed(params, seed):
    return replace(params, seed=seed)
