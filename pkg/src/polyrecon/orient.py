"""
Cell labeling by a face-based winding field and min-cut, and surface extraction.

Every cell face becomes a :class:`FaceRecord` with a point-coverage score.
Labeling alternates between evaluating the winding number at the centroid of
each undecided cell from the current set of oriented faces, solving a binary
labeling by min-cut, and committing the labels of cells on the frontier (cells
touching the outside of the space or an already labeled cell). Each commit
orients more faces, which sharpens the field for the cells further inside.
"""
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np
from networkx.algorithms.flow import edmonds_karp
from scipy.spatial import cKDTree

from .cloud import PolyMesh
from .errors import DegenerateInput, EmptySelection, NonConvergence
from .geometry import (ConvexPolygon, Plane, alpha_shape_2d, bbox_diagonal, segment_distance,
                       winding_field_approx)

log = logging.getLogger(__name__)

EXTERIOR = -1


class Label(enum.IntEnum):
    UNDECIDED = -1
    OUT = 0
    IN = 1


@dataclass(frozen=True)
class OrientParams:
    """Labeling parameters: association distance, alpha, candidate threshold, pairwise weight."""

    eps_assoc: float
    alpha: float
    t_r: float = 0.5
    lambda_v: float = 1.0
    max_iter: int = 10


@dataclass
class FaceRecord:
    """One cell face; ``polygon``'s normal points from ``cells[0]`` to ``cells[1]``."""

    polygon: ConvexPolygon
    cells: tuple
    source: int
    coverage: float = 0.0
    candidate: bool = False
    oriented_normal: np.ndarray = None

    @property
    def is_hull(self):
        return self.cells[1] == EXTERIOR


@dataclass
class LabelState:
    """Per-cell labels and the oriented face set ``S`` as ``{face index: sign}``.

    A sign of +1 means the face normal is the polygon's own normal.
    """

    labels: np.ndarray
    oriented: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def copy(self):
        return LabelState(self.labels.copy(), dict(self.oriented), list(self.history))

    @property
    def undecided(self):
        return np.flatnonzero(self.labels == Label.UNDECIDED)


@dataclass
class CutGraph:
    """Binary labeling energy over ``nodes`` (cell ids).

    ``pairwise`` holds ``(i, j, cost)`` in local node indices, paid when the
    two labels differ.
    """

    nodes: np.ndarray
    cost_in: np.ndarray
    cost_out: np.ndarray
    pairwise: list
    winding: np.ndarray = None

    def energy(self, labels):
        labels = np.asarray(labels, dtype=int)
        total = math.fsum(np.where(labels == Label.IN, self.cost_in, self.cost_out))
        return total + math.fsum(c for i, j, c in self.pairwise if labels[i] != labels[j])


# ---------------------------------------------------------------------------
# faces and coverage
# ---------------------------------------------------------------------------

def build_faces(cplx):
    """Face records for all adjacency pieces followed by all hull faces."""
    faces = [FaceRecord(a.polygon, (a.cell_a, a.cell_b), a.plane_id) for a in cplx.adjacency]
    faces += [FaceRecord(h.polygon, (h.cell, EXTERIOR), h.plane_id) for h in cplx.hull_faces]
    return faces


def compute_coverage(face, cloud, eps_assoc, alpha, tree=None):
    """Alpha-shape area of the points supporting ``face`` over the face area, in [0, 1]."""
    poly = face.polygon if isinstance(face, FaceRecord) else face
    area = poly.area
    if area <= 0:
        raise DegenerateInput("face has zero area")
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=float)
    tree = tree if tree is not None else (cloud.kdtree if hasattr(cloud, "kdtree") else cKDTree(pts))
    c = poly.centroid
    radius = float(np.max(np.linalg.norm(poly.vertices - c, axis=1))) + eps_assoc
    idx = np.array(sorted(tree.query_ball_point(c, radius)), dtype=int)
    if len(idx) < 3:
        return 0.0
    near = pts[idx]
    near = near[np.abs(poly.plane.signed_distance(near)) <= eps_assoc]
    if len(near) < 3:
        return 0.0
    uv = poly.plane.to_2d(near)
    ring = poly.plane.to_2d(poly.vertices)
    edge = np.roll(ring, -1, axis=0) - ring
    rel = uv[:, None, :] - ring[None, :, :]
    inside = np.all(edge[None, :, 0] * rel[:, :, 1] - edge[None, :, 1] * rel[:, :, 0] >= 0, axis=1)
    uv = uv[inside]
    if len(uv) < 3:
        return 0.0
    try:
        shape = alpha_shape_2d(uv, alpha)
    except DegenerateInput:
        return 0.0
    return min(1.0, max(0.0, shape.area / area))


def assign_coverage(faces, cloud, params):
    tree = cloud.kdtree if hasattr(cloud, "kdtree") else None
    for f in faces:
        f.coverage = compute_coverage(f, cloud, params.eps_assoc, params.alpha, tree=tree)
        f.candidate = f.coverage > params.t_r
    return faces


# ---------------------------------------------------------------------------
# energy and min-cut
# ---------------------------------------------------------------------------

def initialize_orientation(cplx, faces=None):
    """All cells undecided; ``S`` holds the hull faces pointing out of the space."""
    faces = build_faces(cplx) if faces is None else faces
    state = LabelState(np.full(len(cplx.cells), int(Label.UNDECIDED)))
    for k, f in enumerate(faces):
        if f.is_hull:
            state.oriented[k] = 1
            f.oriented_normal = f.polygon.normal
    return state


def _oriented_arrays(state, faces):
    keys = sorted(state.oriented)
    centers = np.array([faces[k].polygon.centroid for k in keys]).reshape(-1, 3)
    areas = np.array([faces[k].polygon.area for k in keys])
    normals = np.array([state.oriented[k] * faces[k].polygon.normal for k in keys]).reshape(-1, 3)
    return centers, areas, normals


def energy_terms(state, cplx, faces, lambda_v=1.0):
    """Unary winding costs and pairwise coverage costs over the undecided cells."""
    nodes = state.undecided
    local = {int(c): i for i, c in enumerate(nodes)}
    centroids = np.array([cplx.cells[c].centroid for c in nodes]).reshape(-1, 3)
    w = winding_field_approx(centroids, *_oriented_arrays(state, faces))
    wc = np.clip(w, 0.0, 1.0)
    cost_in, cost_out = 1.0 - wc, wc.copy()
    pair = {}
    for f in faces:
        a, b = f.cells
        cut = lambda_v * (1.0 - f.coverage)
        ia, ib = local.get(a), local.get(b)
        if ia is None and ib is None:
            continue
        if ia is not None and ib is not None:
            key = (min(ia, ib), max(ia, ib))
            pair[key] = pair.get(key, 0.0) + cut
            continue
        i, other = (ia, b) if ia is not None else (ib, a)
        if other == EXTERIOR or state.labels[other] == Label.OUT:
            cost_in[i] += cut
        else:
            cost_out[i] += cut
    pairwise = [(i, j, c) for (i, j), c in sorted(pair.items())]
    return CutGraph(nodes, cost_in, cost_out, pairwise, winding=w)


def solve_labels(graph):
    """Exact minimizer of ``graph.energy`` by min-cut.

    Among optimal labelings the one with the smallest IN set is returned.
    """
    n = len(graph.nodes)
    if n == 0:
        return np.zeros(0, dtype=int)
    g = nx.DiGraph()
    src, snk = "in", "out"
    g.add_nodes_from([src, snk])
    g.add_nodes_from(range(n))
    for i in range(n):
        # cutting source->i labels i OUT, cutting i->sink labels i IN
        if graph.cost_out[i] > 0:
            g.add_edge(src, i, capacity=float(graph.cost_out[i]))
        if graph.cost_in[i] > 0:
            g.add_edge(i, snk, capacity=float(graph.cost_in[i]))
    for i, j, c in graph.pairwise:
        if c > 0:
            for u, v in ((i, j), (j, i)):
                if g.has_edge(u, v):
                    g[u][v]["capacity"] += c
                else:
                    g.add_edge(u, v, capacity=float(c))
    residual = edmonds_karp(g, src, snk)
    # cells reachable from the source in the residual graph form the minimal IN set
    seen, stack = {src}, [src]
    while stack:
        u = stack.pop()
        for v, attr in residual[u].items():
            if v not in seen and attr["capacity"] - attr["flow"] > 1e-12:
                seen.add(v)
                stack.append(v)
    return np.array([int(Label.IN) if i in seen else int(Label.OUT) for i in range(n)], dtype=int)


def enumerate_labels(graph):
    """Brute-force minimum energy over all 2^n labelings; returns (energy, labels)."""
    n = len(graph.nodes)
    best, arg = math.inf, None
    for mask in range(1 << n):
        labels = [(mask >> i) & 1 for i in range(n)]
        e = graph.energy(labels)
        if e < best - 1e-12:
            best, arg = e, labels
    return best, np.array(arg, dtype=int)


# ---------------------------------------------------------------------------
# iteration
# ---------------------------------------------------------------------------

def _frontier(state, faces):
    out = set()
    for f in faces:
        a, b = f.cells
        for u, v in ((a, b), (b, a)):
            if u != EXTERIOR and state.labels[u] == Label.UNDECIDED:
                if v == EXTERIOR or state.labels[v] != Label.UNDECIDED:
                    out.add(u)
    return sorted(out)


def _rebuild_oriented(state, faces, labels):
    """Oriented set: surviving hull faces, IN|OUT faces and candidate faces leaving IN cells."""
    s = {}
    for k, f in enumerate(faces):
        a, b = f.cells
        la = labels[a]
        if f.is_hull:
            if la != Label.OUT:
                s[k] = 1
            continue
        lb = labels[b]
        if {la, lb} == {Label.IN, Label.OUT}:
            s[k] = 1 if la == Label.IN else -1
        elif f.candidate and Label.IN in (la, lb) and Label.UNDECIDED in (la, lb):
            s[k] = 1 if la == Label.IN else -1
    for k, f in enumerate(faces):
        f.oriented_normal = s[k] * f.polygon.normal if k in s else None
    state.oriented = s


def iterate_orientation(cplx, faces, params, debug_dir=None):
    """Label every cell IN or OUT, growing the oriented face set between rounds."""
    state = initialize_orientation(cplx, faces)
    for it in range(1, params.max_iter + 1):
        pending = state.undecided
        if len(pending) == 0:
            break
        graph = energy_terms(state, cplx, faces, params.lambda_v)
        solved = solve_labels(graph)
        last = it == params.max_iter
        commit = set(pending.tolist()) if last else set(_frontier(state, faces))
        before = state.copy()
        for i, c in enumerate(graph.nodes):
            if int(c) in commit:
                state.labels[c] = solved[i]
        state.history.append({
            "iteration": it,
            "cells": {int(c): {"label": Label(int(solved[i])).name, "w": float(graph.winding[i]),
                               "cost_in": float(graph.cost_in[i]), "cost_out": float(graph.cost_out[i]),
                               "committed": int(c) in commit}
                      for i, c in enumerate(graph.nodes)},
            "energy": graph.energy(solved),
        })
        log.debug("iteration %d: committed %d of %d undecided cells", it, len(commit), len(pending))
        if debug_dir is not None:
            dump_iteration(state, faces, debug_dir, it)
        if np.array_equal(before.labels, state.labels):
            raise NonConvergence(f"no cell could be labeled in iteration {it}", [before, state])
        _rebuild_oriented(state, faces, state.labels)
    if len(state.undecided):
        raise NonConvergence("cells left undecided", [state])
    return state


def label_complex(cplx, cloud, params, debug_dir=None):
    faces = assign_coverage(build_faces(cplx), cloud, params)
    return iterate_orientation(cplx, faces, params, debug_dir), faces


# ---------------------------------------------------------------------------
# surface extraction
# ---------------------------------------------------------------------------

def _weld(points, tol):
    """Cluster coordinates closer than ``tol``; returns (representatives, index map)."""
    tree = cKDTree(points)
    rep = np.full(len(points), -1)
    out = []
    for i in range(len(points)):
        if rep[i] >= 0:
            continue
        for j in tree.query_ball_point(points[i], tol):
            if rep[j] < 0:
                rep[j] = len(out)
        out.append(points[i])
    return np.array(out), rep


def _insert_junctions(rings, verts, tol):
    """Add vertices lying inside polygon edges so neighboring faces share edges."""
    tree = cKDTree(verts)
    out = []
    for ring in rings:
        new = []
        for k, a in enumerate(ring):
            b = ring[(k + 1) % len(ring)]
            new.append(a)
            pa, pb = verts[a], verts[b]
            length = float(np.linalg.norm(pb - pa))
            mid = 0.5 * (pa + pb)
            cand = [j for j in tree.query_ball_point(mid, 0.5 * length + tol) if j not in (a, b)]
            if not cand:
                continue
            cand = np.array(cand)
            d = segment_distance(verts[cand], pa, pb)
            t = (verts[cand] - pa) @ (pb - pa) / (length * length)
            on = (d <= tol) & (t > 0) & (t < 1)
            new.extend(int(j) for j in cand[on][np.argsort(t[on], kind="stable")])
        out.append(new)
    return out


def _trace_loops(rings):
    """Boundary loops of a set of same-orientation rings after cancelling shared edges."""
    edges = set()
    for r in rings:
        for k in range(len(r)):
            e = (r[k], r[(k + 1) % len(r)])
            if (e[1], e[0]) in edges:
                edges.discard((e[1], e[0]))
            else:
                edges.add(e)
    nxt = {}
    for a, b in sorted(edges):
        if a in nxt:
            return None  # pinched boundary
        nxt[a] = b
    loops = []
    while nxt:
        start = min(nxt)
        loop = [start]
        cur = nxt.pop(start)
        while cur != start:
            loop.append(cur)
            cur = nxt.pop(cur)
        loops.append(loop)
    return loops


def _loop_area(loop, verts, normal):
    v = verts[loop]
    return float(0.5 * np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0) @ normal)


def _drop_collinear(rings, verts, tol):
    """Remove vertices that are straight-through in every face using them."""
    corner = set()
    users = {}
    for r in rings:
        n = len(r)
        for k, v in enumerate(r):
            users.setdefault(v, 0)
            users[v] += 1
            a, b = verts[r[k - 1]], verts[r[(k + 1) % n]]
            if segment_distance(verts[v][None], a, b)[0] > tol:
                corner.add(v)
    keep = [[v for v in r if v in corner] for r in rings]
    return keep


def extract_mesh(state, cplx, faces, weld_tol=None):
    """Outward polygon mesh of the IN cells, with coplanar pieces merged per plane."""
    labels = state.labels
    if not np.any(labels == Label.IN):
        raise EmptySelection("no cell is labeled inside")
    pieces = []
    for f in faces:
        a, b = f.cells
        la = labels[a]
        lb = Label.OUT if b == EXTERIOR else labels[b]
        if la == lb:
            continue
        poly = f.polygon if la == Label.IN else f.polygon.reversed()
        pieces.append((f.source, poly, f.candidate))
    scale = bbox_diagonal(np.vstack([c.vertices for c in cplx.cells]))
    tol = 1e-7 * scale if weld_tol is None else weld_tol
    coords = np.vstack([p.vertices for _, p, _ in pieces])
    verts, rep = _weld(coords, tol)
    rings, pos = [], 0
    for _, p, _ in pieces:
        ring = [int(i) for i in rep[pos:pos + len(p.vertices)]]
        pos += len(p.vertices)
        rings.append([v for k, v in enumerate(ring) if v != ring[k - 1]])
    rings = _insert_junctions(rings, verts, tol)

    groups = {}
    for k, (src, poly, _) in enumerate(pieces):
        key = (src, tuple(np.round(poly.normal, 6)))
        groups.setdefault(key, []).append(k)
    out_rings, out_ids, out_cand = [], [], []
    for (src, _), members in sorted(groups.items(), key=lambda kv: (kv[0][0], min(kv[1]))):
        normal = pieces[members[0]][1].normal
        loops = _trace_loops([rings[k] for k in members])
        if loops is None or any(_loop_area(l, verts, normal) <= 0 for l in loops):
            merged = [rings[k] for k in members]  # holes or pinches: keep the pieces
        else:
            merged = loops
        cand = all(pieces[k][2] for k in members)
        for r in merged:
            out_rings.append(r)
            out_ids.append(src)
            out_cand.append(cand)
    out_rings = _drop_collinear(out_rings, verts, tol)
    used = sorted({v for r in out_rings for v in r})
    remap = {v: i for i, v in enumerate(used)}
    mesh = PolyMesh(verts[used], [[remap[v] for v in r] for r in out_rings], out_ids, out_cand)
    if not mesh.is_watertight():
        log.warning("extracted mesh is not watertight")
    return mesh


def mesh_polygons(mesh):
    """Mesh faces as oriented polygons for winding-number queries."""
    out = []
    for f in mesh.faces:
        v = mesh.vertices[list(f)]
        n = np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0)
        out.append(ConvexPolygon(Plane.from_point_normal(v.mean(axis=0), n), v))
    return out


# ---------------------------------------------------------------------------
# debug output
# ---------------------------------------------------------------------------

def dump_iteration(state, faces, directory, iteration):
    """JSON of the iteration's per-cell terms and a PLY of the oriented faces."""
    from .cloud import save_mesh

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    record = state.history[-1]
    (directory / f"orient_iter{iteration:02d}.json").write_text(json.dumps(record, indent=1) + "\n")
    keys = sorted(state.oriented)
    if not keys:
        return
    verts, rings = [], []
    for k in keys:
        poly = faces[k].polygon if state.oriented[k] > 0 else faces[k].polygon.reversed()
        rings.append(list(range(len(verts), len(verts) + len(poly.vertices))))
        verts.extend(poly.vertices)
    mesh = PolyMesh(np.array(verts), rings, [faces[k].source for k in keys])
    save_mesh(mesh, directory / f"oriented_iter{iteration:02d}.ply")
