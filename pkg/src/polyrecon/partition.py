"""
External plane classification, convex space construction and adaptive
binary space partitioning into convex cells.

A plane is external when the boundary points of every other plane (ignoring
points within ``sigma`` of it) sit on one consistent side. The external
half-spaces bound the convex space, which is then split recursively: at each
node the resident plane whose extension crosses the fewest other resident
footprints becomes the splitter (ties: larger clipped footprint, then lower
plane id), and the remaining planes move to the child regions their
footprints reach into.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely

from .errors import DegenerateConfiguration, UnboundedSpace
from .geometry import (ConvexCell, ConvexPolygon, Plane, bbox_diagonal, box_cell, clip_cell, clip_convex_2d,
                       polygon_area_2d_signed, section_polygon)

log = logging.getLogger(__name__)

_BOX_DIRECTIONS = ("-x", "+x", "-y", "+y", "-z", "+z")
_BOX_SOURCE = -2  # box face k gets source id _BOX_SOURCE - k


@dataclass(frozen=True)
class PlaneClassification:
    """External/internal split of plane ids.

    ``inside`` maps each external id to the sign (+1/-1) of the side where
    the other planes lie.
    """

    external: tuple
    internal: tuple
    inside: dict = field(default_factory=dict)


@dataclass
class PartitionNode:
    region: ConvexCell
    resident_planes: tuple
    splitter: int = None
    children: tuple = ()
    cell_id: int = None
    footprints: dict = field(default=None, repr=False, compare=False)

    @property
    def is_leaf(self):
        return not self.children


@dataclass(frozen=True)
class Adjacency:
    """Two cells touching through ``polygon``; its normal points from ``cell_a`` to ``cell_b``."""

    cell_a: int
    cell_b: int
    polygon: ConvexPolygon
    plane_id: int


@dataclass(frozen=True)
class HullFace:
    cell: int
    face: int
    polygon: ConvexPolygon
    plane_id: int


@dataclass
class CellComplex:
    cells: list
    adjacency: list
    hull_faces: list
    space: ConvexCell = None
    tree: PartitionNode = None

    def neighbors(self, cell):
        out = []
        for adj in self.adjacency:
            if adj.cell_a == cell:
                out.append(adj.cell_b)
            elif adj.cell_b == cell:
                out.append(adj.cell_a)
        return sorted(set(out))

    def total_volume(self):
        return math.fsum(c.volume for c in self.cells)


# ---------------------------------------------------------------------------
# external planes and the convex space
# ---------------------------------------------------------------------------

def default_sigma(points):
    return 0.005 * bbox_diagonal(points)


def classify_planes(planes, sigma):
    """Split planes into external (bounding) and internal ones."""
    if len(planes) < 4:
        raise DegenerateConfiguration("need at least 4 planes to bound a volume")
    boundary = [p.boundary_points for p in planes]
    external, internal, inside = [], [], {}
    for i, f in enumerate(planes):
        side = 0
        ok = True
        for j, pts in enumerate(boundary):
            if j == i or len(pts) == 0:
                continue
            d = f.plane.signed_distance(pts)
            d = d[np.abs(d) >= sigma]
            if len(d) == 0:
                continue
            if np.all(d > 0):
                s = 1
            elif np.all(d < 0):
                s = -1
            else:
                ok = False
                break
            if side == 0:
                side = s
            elif side != s:
                ok = False
                break
        if ok and side != 0:
            external.append(i)
            inside[i] = side
        else:
            internal.append(i)
    if len(external) < 4:
        raise DegenerateConfiguration(f"only {len(external)} external planes found; at least 4 are needed")
    return PlaneClassification(tuple(external), tuple(internal), inside)


def build_convex_space(classification, planes, margin=10.0):
    """Intersect the inward half-spaces of all external planes."""
    pts = np.vstack([p.points for p in planes])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = margin * max(bbox_diagonal(pts), 1e-12)
    cell = box_cell(lo - pad, hi + pad, sources=[_BOX_SOURCE - k for k in range(6)])
    eps = 1e-9 * bbox_diagonal(pts)
    for i in classification.external:
        plane = planes[i].plane
        if classification.inside[i] > 0:
            plane = plane.flipped()
        cell, _ = clip_cell(cell, plane, eps=eps, source=i)
        if cell is None:
            raise DegenerateConfiguration(f"external plane {i} excludes the whole space")
    open_dirs = sorted({s for s in cell.source_planes if s <= _BOX_SOURCE}, reverse=True)
    if open_dirs:
        raise UnboundedSpace([_BOX_DIRECTIONS[_BOX_SOURCE - s] for s in open_dirs])
    return cell


# ---------------------------------------------------------------------------
# adaptive partition
# ---------------------------------------------------------------------------

def clipped_footprint(plane, region):
    """Footprint of ``plane`` restricted to ``region``, in plane coordinates."""
    sec = section_polygon(region, plane.plane)
    if sec is None:
        return shapely.Polygon()
    return shapely.intersection(plane.footprint.polygon, shapely.Polygon(plane.plane.to_2d(sec.vertices)))


def _reaches(geom, tol):
    return not geom.is_empty and not shapely.buffer(geom, -tol).is_empty


def intersection_line(p, q):
    """Point and unit direction of the line where two planes meet, or None if parallel."""
    n1, n2 = p.normal, q.normal
    d = np.cross(n1, n2)
    s = float(d @ d)
    if s < 1e-24:
        return None
    c = float(n1 @ n2)
    x0 = ((p.offset - q.offset * c) * n1 + (q.offset - p.offset * c) * n2) / (1.0 - c * c)
    return x0, d / math.sqrt(s)


def _crosses(cutter, target, geom, center, reach, tol):
    """Does the infinite plane ``cutter`` cut the footprint ``geom`` of ``target`` along a segment longer than ``tol``?"""
    line = intersection_line(cutter, target.plane)
    if line is None:
        return False
    x0, d = line
    x0 = x0 + float((center - x0) @ d) * d
    eroded = shapely.buffer(geom, -tol)
    if eroded.is_empty:
        return False
    ends = target.plane.to_2d(np.array([x0 - reach * d, x0 + reach * d]))
    return shapely.intersection(eroded, shapely.LineString(ends)).length > tol


def count_intersections(planes, region, tol=None, footprints=None):
    """For each plane, how many other planes' region-clipped footprints its extension cuts."""
    tol = 1e-9 * bbox_diagonal(region.vertices) if tol is None else tol
    if footprints is None:
        footprints = [clipped_footprint(p, region) for p in planes]
    center = region.centroid
    reach = 2.0 * bbox_diagonal(region.vertices)
    counts = []
    for i, p in enumerate(planes):
        counts.append(sum(
            _crosses(p.plane, q, footprints[j], center, reach, tol)
            for j, q in enumerate(planes) if j != i
        ))
    return counts


def _split_node(node, planes, tol, min_volume, leaves):
    ids = list(node.resident_planes)
    region = node.region
    if not ids:
        node.cell_id = len(leaves)
        leaves.append(region)
        return
    if node.footprints is None:
        node.footprints = {i: clipped_footprint(planes[i], region) for i in ids}
    geoms = [node.footprints[i] for i in ids]
    counts = count_intersections([planes[i] for i in ids], region, tol, geoms)
    areas = [g.area for g in geoms]
    k = min(range(len(ids)), key=lambda m: (counts[m], -areas[m], ids[m]))
    sid = ids[k]
    rest = [i for i in ids if i != sid]
    neg, pos = clip_cell(region, planes[sid].plane, source=sid)
    if neg is None or pos is None or neg.volume < min_volume or pos.volume < min_volume:
        # the splitter does not cut this region into two proper cells
        node.resident_planes = tuple(rest)
        del node.footprints[sid]
        _split_node(node, planes, tol, min_volume, leaves)
        return
    node.splitter = sid
    children = []
    for part in (neg, pos):
        fp = {}
        for i in rest:
            g = clipped_footprint(planes[i], part)
            if _reaches(g, tol):
                fp[i] = g
        children.append(PartitionNode(part, tuple(i for i in rest if i in fp), footprints=fp))
    node.children = tuple(children)
    for child in children:
        _split_node(child, planes, tol, min_volume, leaves)


def adaptive_partition(space, planes, internal=None, tol=None, min_volume_ratio=1e-10):
    """Recursively split ``space`` by the internal planes.

    ``planes`` is the full detected plane list (ids are list positions) and
    ``internal`` the ids allowed to split; by default all of them.
    """
    tol = 1e-6 * bbox_diagonal(space.vertices) if tol is None else tol
    internal = list(range(len(planes))) if internal is None else list(internal)
    resident = [i for i in internal if _reaches(clipped_footprint(planes[i], space), tol)]
    root = PartitionNode(space, tuple(resident))
    leaves = []
    _split_node(root, planes, tol, min_volume_ratio * space.volume, leaves)
    return assemble_complex(leaves, set(internal), space=space, tree=root)


def _dedupe_ring(ring, tol):
    keep = [p for p, q in zip(ring, np.roll(ring, -1, axis=0)) if np.hypot(*(q - p)) > tol]
    return np.array(keep)


def assemble_complex(cells, internal_ids, space=None, tree=None):
    """Find hull faces and shared faces between cells."""
    hull, by_source = [], {}
    for k, cell in enumerate(cells):
        for f, (src, poly) in enumerate(zip(cell.source_planes, cell.faces)):
            if src in internal_ids:
                by_source.setdefault(src, []).append((k, f, poly))
            else:
                hull.append(HullFace(k, f, poly, src))
    scale = max(bbox_diagonal(c.vertices) for c in cells)
    tol = 1e-9 * scale
    area_tol = 1e-6 * scale * tol
    adjacency = []
    for src in sorted(by_source):
        faces = by_source[src]
        ref = faces[0][2].normal
        front = [x for x in faces if x[2].normal @ ref > 0]
        back = [x for x in faces if x[2].normal @ ref <= 0]
        for ka, fa, pa in front:
            frame = pa.plane
            ra = frame.to_2d(pa.vertices)
            lo_a, hi_a = pa.vertices.min(axis=0), pa.vertices.max(axis=0)
            for kb, fb, pb in back:
                lo_b, hi_b = pb.vertices.min(axis=0), pb.vertices.max(axis=0)
                if np.any(lo_b > hi_a + tol) or np.any(lo_a > hi_b + tol):
                    continue
                ring = clip_convex_2d(ra, frame.to_2d(pb.vertices), tol)
                if len(ring) < 3 or polygon_area_2d_signed(ring) <= area_tol:
                    continue
                poly = ConvexPolygon(frame, frame.to_3d(_dedupe_ring(ring, tol)))
                if ka < kb:
                    adjacency.append(Adjacency(ka, kb, poly, src))
                else:
                    adjacency.append(Adjacency(kb, ka, poly.reversed(), src))
    adjacency.sort(key=lambda a: (a.cell_a, a.cell_b, a.plane_id, tuple(np.round(a.polygon.centroid, 12))))
    return CellComplex(list(cells), adjacency, hull, space=space, tree=tree)


def exhaustive_arrangement(space, planes):
    """Every plane cuts every cell; the reference for partition size."""
    cells = [space]
    for i, p in enumerate(planes):
        nxt = []
        for c in cells:
            neg, pos = clip_cell(c, p.plane if hasattr(p, "plane") else p, source=i)
            nxt.extend(x for x in (neg, pos) if x is not None)
        cells = nxt
    return cells


# ---------------------------------------------------------------------------
# serialization and debug output
# ---------------------------------------------------------------------------

def _cell_to_dict(cell):
    return {
        "vertices": cell.vertices.tolist(),
        "rings": [list(r) for r in cell.rings],
        "planes": [[*p.normal.tolist(), p.offset] for p in cell.face_planes],
        "sources": list(cell.source_planes),
    }


def _cell_from_dict(d):
    return ConvexCell(d["vertices"], d["rings"], [Plane(p[:3], p[3]) for p in d["planes"]], d["sources"])


def complex_to_dict(cplx, internal_ids):
    return {
        "internal": sorted(int(i) for i in internal_ids),
        "space": _cell_to_dict(cplx.space) if cplx.space is not None else None,
        "cells": [_cell_to_dict(c) for c in cplx.cells],
        "adjacency": [[a.cell_a, a.cell_b, a.plane_id] for a in cplx.adjacency],
    }


def complex_from_dict(data):
    cells = [_cell_from_dict(c) for c in data["cells"]]
    space = _cell_from_dict(data["space"]) if data.get("space") else None
    return assemble_complex(cells, set(data["internal"]), space=space)


def dump_complex(cplx, directory):
    """Cells as one OBJ (an ``o`` group per cell) and adjacency as a JSON edge list."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines, base = [], 1
    for k, cell in enumerate(cplx.cells):
        lines.append(f"o cell_{k}\n")
        lines.extend(f"v {x!r} {y!r} {z!r}\n" for x, y, z in cell.vertices.tolist())
        lines.extend("f " + " ".join(str(base + i) for i in r) + "\n" for r in cell.rings)
        base += len(cell.vertices)
    with open(directory / "cells.obj", "w", newline="\n") as fh:
        fh.write("".join(lines))
    edges = [{"a": a.cell_a, "b": a.cell_b, "plane": a.plane_id, "area": a.polygon.area} for a in cplx.adjacency]
    (directory / "adjacency.json").write_text(json.dumps({"edges": edges}, indent=1) + "\n")
