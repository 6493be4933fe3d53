import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polyrecon.cloud import PointCloud
from polyrecon.errors import ConfigError, NoPlanesFound
from polyrecon.geometry import Plane
from polyrecon.planes import (DetectedPlane, DetectionParams, detect_planes, dump_planes, planes_from_dict,
                              planes_to_dict, prr_should_merge, refine_planes, shared_point_count)
from polyrecon.synthetic import cube_grid_points, grid_patch, volume_outliers


def membership(planes, labels):
    """Fraction of each true face's samples held by its best matching plane."""
    out = []
    for face in np.unique(labels):
        idx = set(np.flatnonzero(labels == face).tolist())
        best = max(len(idx & set(p.inliers.tolist())) for p in planes)
        out.append(best / len(idx))
    return out


def tilted_patch(angle_deg, n=10, size=1.0, pivot=0.5):
    """``n x n`` grid on a plane through the line x = pivot, z = 0, tilted about y."""
    a = math.radians(angle_deg)
    s = (np.arange(n) + 0.5) / n * size
    x, y = (g.ravel() for g in np.meshgrid(s, s))
    u = x - pivot
    return np.column_stack([pivot + u * math.cos(a), y, u * math.sin(a)])


def as_detected(points, offset=0, alpha=0.1):
    return DetectedPlane.from_points(points, alpha, inliers=np.arange(len(points)) + offset)


# ---------------------------------------------------------------- params

def test_params_validation():
    with pytest.raises(ConfigError):
        DetectionParams(eps_inlier=0)
    with pytest.raises(ConfigError):
        DetectionParams(eps_inlier=1, theta=90)
    with pytest.raises(ConfigError):
        DetectionParams(eps_inlier=1, min_support=2)
    with pytest.raises(ConfigError):
        DetectionParams(eps_inlier=1, merge_divisor=0)
    p = DetectionParams(eps_inlier=0.1)
    assert p.alpha == pytest.approx(0.04) and p.theta == 10.0 and p.merge_divisor == 5


def test_params_scale_with_cloud():
    pts, _ = cube_grid_points(50)
    c = PointCloud(pts)
    p = DetectionParams.for_cloud(c)
    assert p.eps_inlier == pytest.approx(2 * c.avg_spacing)
    assert p.alpha == pytest.approx((4 * c.avg_spacing) ** 2)
    assert p.min_support == 50


# ---------------------------------------------------------------- detection

def test_cube_grid_gives_six_planes():
    pts, labels = cube_grid_points(50)
    cloud = PointCloud(pts)
    planes = detect_planes(cloud, DetectionParams.for_cloud(cloud))
    assert len(planes) == 6
    assert min(membership(planes, labels)) >= 0.95
    for p in planes:
        assert np.all(np.abs(p.plane.signed_distance(p.points)) < 2 * cloud.avg_spacing)
        assert p.footprint.area > 0


def test_single_patch_gives_one_plane():
    pts = grid_patch((0, 0, 1), (2, 0, 0), (0, 1, 1), n=30)
    cloud = PointCloud(pts)
    planes = detect_planes(cloud, DetectionParams.for_cloud(cloud))
    assert len(planes) == 1
    assert planes[0].inliers.tolist() == list(range(len(pts)))


def test_cube_with_volume_noise():
    rng = np.random.default_rng(4)
    pts, labels = cube_grid_points(50)
    noise = volume_outliers((0, 0, 0), (1, 1, 1), int(0.01 * len(pts)), rng)
    cloud = PointCloud(np.vstack([pts, noise]))
    params = DetectionParams.for_cloud(cloud)
    planes = detect_planes(cloud, params)
    assert len(planes) == 6
    assert min(membership(planes, labels)) >= 0.95
    claimed = np.concatenate([p.inliers for p in planes])
    noisy = claimed[claimed >= len(pts)]
    for p in planes:
        hit = np.intersect1d(p.inliers, noisy)
        assert np.all(np.abs(p.plane.signed_distance(cloud.points[hit])) < params.eps_inlier)


def test_points_claimed_at_most_once():
    pts, _ = cube_grid_points(30)
    cloud = PointCloud(pts)
    planes = detect_planes(cloud, DetectionParams.for_cloud(cloud))
    claimed = np.concatenate([p.inliers for p in planes])
    assert len(claimed) == len(np.unique(claimed))


def test_detection_deterministic():
    rng = np.random.default_rng(1)
    pts = np.vstack([cube_grid_points(30)[0], rng.random((50, 3))])
    cloud = PointCloud(pts)
    params = DetectionParams.for_cloud(cloud, seed=7)
    a, b = detect_planes(cloud, params), detect_planes(cloud, params)
    assert [p.plane.normal.tobytes() + np.float64(p.plane.offset).tobytes() for p in a] == \
           [p.plane.normal.tobytes() + np.float64(p.plane.offset).tobytes() for p in b]


def test_too_few_points():
    cloud = PointCloud(np.random.default_rng(0).random((20, 3)))
    with pytest.raises(NoPlanesFound):
        detect_planes(cloud, DetectionParams(eps_inlier=0.01, min_support=50))


def test_random_blob_has_no_planes():
    cloud = PointCloud(np.random.default_rng(0).normal(size=(300, 3)))
    with pytest.raises(NoPlanesFound):
        detect_planes(cloud, DetectionParams(eps_inlier=1e-4, min_support=50))


# ---------------------------------------------------------------- merge rule

def test_shared_strip_of_forty_merges():
    # two 10x10 patches 5 degrees apart crossing at x = 0.5; with this band two
    # columns of each patch sit within eps of both planes: 40 shared points
    a = as_detected(tilted_patch(0.0))
    b = as_detected(tilted_patch(5.0), offset=100)
    eps = 0.0095
    oracle = sum(
        1 for p in np.vstack([a.points, b.points])
        if abs(p[2]) < eps and abs(-math.sin(math.radians(5)) * (p[0] - 0.5) + math.cos(math.radians(5)) * p[2]) < eps
    )
    assert oracle == 40
    params = DetectionParams(eps_inlier=eps)
    assert shared_point_count(a, b, eps) == 40
    assert prr_should_merge(a, b, params)


def test_shared_count_at_threshold_does_not_merge():
    # pivot on a grid column: only that column of each patch is shared, 20 = 100 / 5
    a = as_detected(tilted_patch(0.0, pivot=0.45))
    b = as_detected(tilted_patch(5.0, pivot=0.45), offset=100)
    eps = 0.005
    assert shared_point_count(a, b, eps) == 20
    assert not prr_should_merge(a, b, DetectionParams(eps_inlier=eps))
    assert prr_should_merge(a, b, DetectionParams(eps_inlier=eps, merge_divisor=6))


def test_angle_threshold():
    base = as_detected(tilted_patch(0.0))
    eps = 0.05
    params = DetectionParams(eps_inlier=eps)
    assert prr_should_merge(base, as_detected(tilted_patch(5.0), 100), params)
    assert not prr_should_merge(base, as_detected(tilted_patch(11.0), 100), params)
    # sign of normals is irrelevant
    flipped = DetectedPlane.from_points(tilted_patch(5.0), 0.1, plane=Plane([math.sin(math.radians(5)), 0, -math.cos(math.radians(5))], 0.5 * math.sin(math.radians(5))))
    assert prr_should_merge(base, flipped, params)


def test_perpendicular_never_merges():
    a = as_detected(grid_patch((0, 0, 0), (1, 0, 0), (0, 1, 0), 10))
    b = as_detected(grid_patch((0, 0, 0), (1, 0, 0), (0, 0, 1), 10), 100)
    assert not prr_should_merge(a, b, DetectionParams(eps_inlier=10.0))


def test_parallel_offset_planes_do_not_merge():
    eps = 0.01
    a = as_detected(grid_patch((0, 0, 0), (1, 0, 0), (0, 1, 0), 10))
    b = as_detected(grid_patch((0, 0, 10 * eps), (1, 0, 0), (0, 1, 0), 10), 100)
    assert shared_point_count(a, b, eps) == 0
    assert not prr_should_merge(a, b, DetectionParams(eps_inlier=eps))


@given(st.floats(0.5, 30.0), st.floats(1e-3, 0.2))
def test_merge_rule_matches_definition(angle, eps):
    a = as_detected(tilted_patch(0.0))
    b = as_detected(tilted_patch(angle), offset=100)
    params = DetectionParams(eps_inlier=eps)
    pts = np.vstack([a.points, b.points])
    near = (np.abs(a.plane.signed_distance(pts)) < eps) & (np.abs(b.plane.signed_distance(pts)) < eps)
    acute = math.degrees(math.acos(min(1.0, abs(float(a.plane.normal @ b.plane.normal)))))
    expected = acute < 10.0 and near.sum() > 100 / 5
    assert prr_should_merge(a, b, params) == expected


# ---------------------------------------------------------------- refinement

def split_face_planes(n=20):
    """Each cube face split into two coplanar halves: 12 detections."""
    pts, labels = cube_grid_points(n)
    out = []
    for face in range(6):
        idx = np.flatnonzero(labels == face)
        axis = face // 2
        other = (axis + 1) % 3
        for half in (pts[idx, other] < 0.5, pts[idx, other] >= 0.5):
            out.append(DetectedPlane.from_points(pts[idx[half]], 0.01, inliers=idx[half]))
    return out, pts


def test_over_segmented_cube_refines_to_six():
    planes, pts = split_face_planes()
    params = DetectionParams(eps_inlier=0.01)
    out = refine_planes(planes, params)
    assert len(out) == 6
    before = np.sort(np.concatenate([p.inliers for p in planes]))
    after = np.sort(np.concatenate([p.inliers for p in out]))
    assert np.array_equal(before, after)
    assert refine_planes(out, params) == out


def test_three_fragments_become_one():
    frags = [grid_patch((x, 0, 0), (0.4, 0, 0), (0, 1, 0), 10) for x in (0.0, 0.3, 0.6)]
    planes = [as_detected(f, 100 * k) for k, f in enumerate(frags)]
    out = refine_planes(planes, DetectionParams(eps_inlier=0.01))
    assert len(out) == 1 and len(out[0]) == 300


def test_irreducible_set_unchanged():
    pts, labels = cube_grid_points(10)
    planes = [DetectedPlane.from_points(pts[labels == f], 0.1, inliers=np.flatnonzero(labels == f)) for f in range(6)]
    out = refine_planes(planes, DetectionParams(eps_inlier=0.01))
    assert out == planes


def test_refine_merges_first_pair_in_index_order():
    a = as_detected(grid_patch((0, 0, 0), (1, 0, 0), (0, 1, 0), 10))
    b = as_detected(grid_patch((0, 0, 5), (1, 0, 0), (0, 1, 0), 10), 100)
    c = as_detected(grid_patch((0.5, 0, 0), (1, 0, 0), (0, 1, 0), 10), 200)
    out = refine_planes([a, b, c], DetectionParams(eps_inlier=0.01))
    assert len(out) == 2
    assert sorted(out[0].inliers.tolist()) == list(range(100)) + list(range(200, 300))
    assert out[1] is b


# ---------------------------------------------------------------- serialization

def test_planes_dict_round_trip(tmp_path):
    pts, _ = cube_grid_points(20)
    cloud = PointCloud(pts)
    params = DetectionParams.for_cloud(cloud)
    planes = detect_planes(cloud, params)
    back = planes_from_dict(planes_to_dict(planes, cloud, params), pts, params.alpha)
    for p, q in zip(planes, back):
        assert np.array_equal(p.inliers, q.inliers)
        assert p.plane.offset == q.plane.offset and np.array_equal(p.plane.normal, q.plane.normal)
        assert p.footprint.area == q.footprint.area
    dump_planes(planes, cloud, tmp_path)
    assert len(list(tmp_path.glob("plane_*.ply"))) == len(planes)
    assert (tmp_path / "planes.json").exists()
