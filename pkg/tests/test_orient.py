import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyrecon import orient
from polyrecon.cloud import PointCloud
from polyrecon.errors import EmptySelection, NonConvergence
from polyrecon.geometry import ConvexPolygon, Plane, box_cell, winding_number_exact
from polyrecon.orient import (CutGraph, Label, LabelState, OrientParams, assign_coverage, build_faces,
                              compute_coverage, energy_terms, enumerate_labels, extract_mesh,
                              initialize_orientation, iterate_orientation, label_complex, mesh_polygons,
                              solve_labels)
from polyrecon.partition import adaptive_partition, assemble_complex, build_convex_space, classify_planes
from polyrecon.synthetic import box_mesh, face_grid_points, hollow_box_mesh, l_shape_mesh, mesh_planes

SPACING = 0.05


def reconstruct_fixture(mesh, spacing=SPACING, **kw):
    pts, _ = face_grid_points(mesh, spacing)
    planes = mesh_planes(mesh, spacing)
    c = classify_planes(planes, 0.01)
    space = build_convex_space(c, planes)
    cplx = adaptive_partition(space, planes, c.internal)
    params = OrientParams(eps_assoc=0.01, alpha=(2 * spacing) ** 2, **kw)
    return cplx, PointCloud(pts), params


def square_face(size=1.0):
    v = np.array([[0, 0, 0], [size, 0, 0], [size, size, 0], [0, size, 0]], float)
    return ConvexPolygon(Plane([0, 0, 1], 0.0), v)


def grid(lo, hi, step):
    g = np.arange(lo + step / 2, hi, step)
    return g


# ---------------------------------------------------------------- coverage

def test_coverage_full_grid():
    g = grid(0, 1, 0.02)
    pts = np.array(np.meshgrid(g, g, [0.0])).reshape(3, -1).T
    assert compute_coverage(square_face(), PointCloud(pts), 0.01, 0.04 ** 2) >= 0.9


def test_coverage_empty():
    pts = np.array([[5.0, 5, 5], [6, 5, 5], [5, 6, 5]])
    assert compute_coverage(square_face(), PointCloud(pts), 0.01, 1.0) == 0.0


def test_coverage_ignores_off_plane_points():
    g = grid(0, 1, 0.02)
    pts = np.array(np.meshgrid(g, g, [0.5])).reshape(3, -1).T
    assert compute_coverage(square_face(), PointCloud(pts), 0.01, 0.04 ** 2) == 0.0


def test_coverage_half_grid():
    g = grid(0, 1, 0.02)
    h = grid(0, 0.5, 0.02)
    pts = np.array(np.meshgrid(h, g, [0.0])).reshape(3, -1).T
    assert 0.4 <= compute_coverage(square_face(), PointCloud(pts), 0.01, 0.04 ** 2) <= 0.6


def test_coverage_clamped():
    g = np.linspace(-1, 2, 80)
    pts = np.array(np.meshgrid(g, g, [0.0])).reshape(3, -1).T
    c = compute_coverage(square_face(), PointCloud(pts), 0.01, 0.1)
    assert 0.9 <= c <= 1.0


# ---------------------------------------------------------------- initialization

def test_init_single_cube():
    cplx = assemble_complex([box_cell((0, 0, 0), (1, 1, 1), sources=range(6))], set(), space=None)
    faces = build_faces(cplx)
    state = initialize_orientation(cplx, faces)
    assert len(state.oriented) == 6 and all(s == 1 for s in state.oriented.values())
    assert (state.labels == Label.UNDECIDED).all()


def test_init_two_slabs():
    a = box_cell((0, 0, 0), (0.5, 1, 1), sources=[0, 6, 2, 3, 4, 5])
    b = box_cell((0.5, 0, 0), (1, 1, 1), sources=[6, 1, 2, 3, 4, 5])
    cplx = assemble_complex([a, b], {6})
    faces = build_faces(cplx)
    state = initialize_orientation(cplx, faces)
    assert len(state.oriented) == 10
    assert all(faces[k].is_hull for k in state.oriented)
    for k in state.oriented:
        f = faces[k]
        out = f.polygon.centroid + 1e-3 * f.polygon.normal
        assert not cplx.cells[f.cells[0]].contains(out[None])[0]


def test_init_l_shape_counts_hull_faces():
    cplx, cloud, params = reconstruct_fixture(l_shape_mesh())
    faces = build_faces(cplx)
    state = initialize_orientation(cplx, faces)
    assert len(state.oriented) == len(cplx.hull_faces)
    assert sum(not f.is_hull for f in faces) == len(cplx.adjacency)


# ---------------------------------------------------------------- energy

def covered(cplx, value=1.0):
    faces = build_faces(cplx)
    for f in faces:
        f.coverage = value
    return faces


def test_energy_single_cube():
    cplx = assemble_complex([box_cell((0, 0, 0), (1, 1, 1), sources=range(6))], set())
    faces = covered(cplx)
    state = initialize_orientation(cplx, faces)
    g = energy_terms(state, cplx, faces)
    assert g.winding[0] == pytest.approx(6 / math.pi, abs=1e-12)
    assert g.cost_in[0] == 0.0 and g.cost_out[0] == 1.0
    assert solve_labels(g).tolist() == [Label.IN]


def test_energy_far_cell_is_out():
    near = box_cell((0, 0, 0), (1, 1, 1), sources=range(6))
    state = LabelState(np.array([Label.UNDECIDED]))
    faces = covered(assemble_complex([near], set()))
    state.oriented = {k: 1 for k in range(6)}
    far = box_cell((100, 0, 0), (101, 1, 1))
    cplx = assemble_complex([far], set())
    g = energy_terms(state, cplx, faces)
    assert abs(g.winding[0]) < 1e-3
    assert g.cost_in[0] == pytest.approx(1.0, abs=1e-3)


def test_energy_full_coverage_face_is_free():
    a = box_cell((0, 0, 0), (0.5, 1, 1), sources=[0, 6, 2, 3, 4, 5])
    b = box_cell((0.5, 0, 0), (1, 1, 1), sources=[6, 1, 2, 3, 4, 5])
    cplx = assemble_complex([a, b], {6})
    faces = covered(cplx)
    g = energy_terms(initialize_orientation(cplx, faces), cplx, faces)
    assert g.pairwise == [(0, 1, 0.0)]
    faces = covered(cplx, 0.25)
    g = energy_terms(initialize_orientation(cplx, faces), cplx, faces, lambda_v=2.0)
    assert g.pairwise == [(0, 1, 1.5)]
    # five hull faces each add 2 * 0.75 to the inside cost
    assert g.cost_in[0] == pytest.approx(1 - min(1.0, g.winding[0]) + 7.5)


def test_energy_folds_labeled_neighbors():
    a = box_cell((0, 0, 0), (0.5, 1, 1), sources=[0, 6, 2, 3, 4, 5])
    b = box_cell((0.5, 0, 0), (1, 1, 1), sources=[6, 1, 2, 3, 4, 5])
    cplx = assemble_complex([a, b], {6})
    faces = covered(cplx, 0.5)
    state = initialize_orientation(cplx, faces)
    state.labels[0] = Label.IN
    g = energy_terms(state, cplx, faces)
    assert g.nodes.tolist() == [1] and g.pairwise == []
    w = min(1.0, max(0.0, g.winding[0]))
    assert g.cost_out[0] == pytest.approx(w + 0.5)
    assert g.cost_in[0] == pytest.approx(1 - w + 5 * 0.5)


# ---------------------------------------------------------------- min-cut

def test_cut_trivial():
    g = CutGraph(np.array([0]), np.array([0.0]), np.array([1.0]), [])
    assert solve_labels(g).tolist() == [Label.IN]


def test_cut_free_disagreement():
    g = CutGraph(np.array([0, 1]), np.array([0.0, 1.0]), np.array([1.0, 0.0]), [(0, 1, 0.0)])
    assert solve_labels(g).tolist() == [Label.IN, Label.OUT]


def test_cut_strong_coupling_agrees():
    g = CutGraph(np.array([0, 1]), np.array([0.0, 0.6]), np.array([1.0, 0.4]), [(0, 1, 5.0)])
    assert solve_labels(g).tolist() == [Label.IN, Label.IN]


def test_cut_ties_prefer_out():
    g = CutGraph(np.array([0, 1]), np.array([0.5, 0.0]), np.array([0.5, 0.0]), [(0, 1, 0.0)])
    assert solve_labels(g).tolist() == [Label.OUT, Label.OUT]


def random_graph(rng, n):
    cin, cout = rng.random(n), rng.random(n)
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.3:
                pairs.append((i, j, float(rng.random() * rng.choice([0.0, 0.5, 2.0]))))
    return CutGraph(np.arange(n), cin, cout, pairs)


@settings(max_examples=80)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_cut_matches_enumeration(seed, n):
    g = random_graph(np.random.default_rng(seed), n)
    best, _ = enumerate_labels(g)
    assert g.energy(solve_labels(g)) == pytest.approx(best, abs=1e-9)


# ---------------------------------------------------------------- iteration

def test_cube_in_after_one_iteration():
    cplx, cloud, params = reconstruct_fixture(box_mesh())
    state, faces = label_complex(cplx, cloud, params)
    assert state.labels.tolist() == [Label.IN] and len(state.history) == 1


def test_l_shape_labels():
    cplx, cloud, params = reconstruct_fixture(l_shape_mesh())
    state, faces = label_complex(cplx, cloud, params)
    centroids = np.array([c.centroid for c in cplx.cells])
    corner = (centroids[:, 0] > 1) & (centroids[:, 1] > 1)
    assert (state.labels[corner] == Label.OUT).all()
    assert (state.labels[~corner] == Label.IN).all()


def optimal_every_iteration(cplx, faces, params):
    energies = []
    original = orient.solve_labels

    def checked(graph):
        labels = original(graph)
        best, _ = enumerate_labels(graph)
        energies.append((graph.energy(labels), best))
        return labels

    orient.solve_labels = checked
    try:
        final = iterate_orientation(cplx, faces, params)
    finally:
        orient.solve_labels = original
    return final, energies


@pytest.mark.parametrize("mesh", [l_shape_mesh(), hollow_box_mesh()], ids=["l-shape", "hollow-box"])
def test_iterations_optimal(mesh):
    cplx, cloud, params = reconstruct_fixture(mesh)
    assert len(cplx.cells) <= 12
    faces = assign_coverage(build_faces(cplx), cloud, params)
    final, energies = optimal_every_iteration(cplx, faces, params)
    assert energies
    for got, best in energies:
        assert got == pytest.approx(best, abs=1e-9)


def test_hollow_box_core_out():
    cplx, cloud, params = reconstruct_fixture(hollow_box_mesh())
    state, faces = label_complex(cplx, cloud, params)
    centroids = np.array([c.centroid for c in cplx.cells])
    core = np.all((centroids > 1) & (centroids < 2), axis=1)
    assert core.sum() == 1
    assert state.labels[core].tolist() == [Label.OUT]
    assert (state.labels[~core] == Label.IN).all()
    assert len(state.history) == 2
    core_id = int(np.flatnonzero(core)[0])
    assert state.history[0]["cells"][core_id]["w"] > 0.5
    assert state.history[1]["cells"][core_id]["w"] < 0.5


def test_labels_are_append_only():
    cplx, cloud, params = reconstruct_fixture(hollow_box_mesh())
    state, _ = label_complex(cplx, cloud, params)
    seen = {}
    for rec in state.history:
        for c, info in rec["cells"].items():
            assert c not in seen
            if info["committed"]:
                seen[c] = info["label"]
    assert all(Label[seen[c]] == state.labels[c] for c in seen)


def test_lambda_zero_is_threshold():
    cplx, cloud, params = reconstruct_fixture(hollow_box_mesh(), lambda_v=0.0)
    state, _ = label_complex(cplx, cloud, params)
    for rec in state.history:
        for c, info in rec["cells"].items():
            expected = "IN" if min(1.0, max(0.0, info["w"])) > 0.5 else "OUT"
            assert info["label"] == expected


def test_max_iter_one_commits_everything():
    cplx, cloud, params = reconstruct_fixture(hollow_box_mesh(), max_iter=1)
    state, _ = label_complex(cplx, cloud, params)
    assert (state.labels != Label.UNDECIDED).all()
    assert len(state.history) == 1


def test_stalled_frontier_raises():
    # a cell with no faces at all can never join the frontier
    lone = box_cell((0, 0, 0), (1, 1, 1), sources=range(6))
    cplx = assemble_complex([lone, box_cell((5, 5, 5), (6, 6, 6), sources=range(6))], set())
    faces = covered(cplx)
    faces = [f for f in faces if f.cells[0] == 0]
    with pytest.raises(NonConvergence) as exc:
        iterate_orientation(cplx, faces, OrientParams(eps_assoc=0.01, alpha=0.01, max_iter=5))
    assert len(exc.value.states) == 2


# ---------------------------------------------------------------- extraction

def test_extract_cube():
    cplx, cloud, params = reconstruct_fixture(box_mesh())
    state, faces = label_complex(cplx, cloud, params)
    mesh = extract_mesh(state, cplx, faces)
    assert len(mesh.vertices) == 8 and len(mesh.faces) == 6
    assert mesh.is_watertight() and mesh.volume() == pytest.approx(1.0)


def test_extract_l_shape():
    cplx, cloud, params = reconstruct_fixture(l_shape_mesh())
    state, faces = label_complex(cplx, cloud, params)
    mesh = extract_mesh(state, cplx, faces)
    assert len(mesh.faces) == 8 and len(mesh.vertices) == 12
    assert mesh.is_watertight() and mesh.euler_characteristic() == 2
    assert mesh.volume() == pytest.approx(3.0)
    polys = mesh_polygons(mesh)
    for k, cell in enumerate(cplx.cells):
        expected = 1.0 if state.labels[k] == Label.IN else 0.0
        assert winding_number_exact(cell.centroid, polys) == pytest.approx(expected, abs=1e-6)
    assert winding_number_exact([8.0, 8.0, 3.0], polys) == pytest.approx(0.0, abs=1e-6)


def test_extract_hollow_box_keeps_inner_walls():
    cplx, cloud, params = reconstruct_fixture(hollow_box_mesh())
    state, faces = label_complex(cplx, cloud, params)
    mesh = extract_mesh(state, cplx, faces)
    assert len(mesh.faces) == 12 and mesh.is_watertight()
    assert mesh.euler_characteristic() == 4
    assert mesh.volume() == pytest.approx(26.0)
    polys = mesh_polygons(mesh)
    assert winding_number_exact([1.5, 1.5, 1.5], polys) == pytest.approx(0.0, abs=1e-6)
    assert winding_number_exact([0.5, 0.5, 0.5], polys) == pytest.approx(1.0, abs=1e-6)


def test_extract_all_out_raises():
    cplx, cloud, params = reconstruct_fixture(box_mesh())
    faces = build_faces(cplx)
    state = LabelState(np.array([Label.OUT]))
    with pytest.raises(EmptySelection):
        extract_mesh(state, cplx, faces)


def test_candidate_flags_follow_coverage():
    cplx, cloud, params = reconstruct_fixture(l_shape_mesh())
    state, faces = label_complex(cplx, cloud, params)
    for f in faces:
        assert (f.coverage > params.t_r) == f.candidate
        assert 0.0 <= f.coverage <= 1.0
    mesh = extract_mesh(state, cplx, faces)
    assert all(mesh.candidate)


def test_debug_dump(tmp_path):
    cplx, cloud, params = reconstruct_fixture(hollow_box_mesh())
    label_complex(cplx, cloud, params, debug_dir=tmp_path)
    rec = json.loads((tmp_path / "orient_iter01.json").read_text())
    assert set(rec["cells"]["0"]) >= {"label", "w", "cost_in", "cost_out"}
    assert (tmp_path / "oriented_iter02.ply").exists()
