"""
End-to-end reconstruction, configuration, stage bundles and evaluation metrics.
"""
import dataclasses
import json
import logging
import math
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .cloud import PointCloud, load_cloud, poisson_resample, remove_outliers, save_mesh
from .errors import ConfigError, ReconstructionError
from .geometry import Plane, point_polygon_distance
from .orient import OrientParams, extract_mesh, label_complex
from .partition import (adaptive_partition, build_convex_space, classify_planes, complex_from_dict,
                        complex_to_dict, default_sigma, dump_complex)
from .planes import DetectionParams, detect_planes, dump_planes, planes_from_dict, planes_to_dict, refine_planes

log = logging.getLogger(__name__)

_SECTIONS = {
    "io": ("input", "output", "report", "mesh_format"),
    "preprocess": ("resample", "resample_radius", "outlier_k"),
    "detection": ("eps_inlier", "min_support", "theta", "merge_divisor", "w_fidelity", "w_simplicity",
                  "w_completeness", "n_proposals", "sample_neighbors", "alpha"),
    "partition": ("sigma",),
    "orient": ("t_r", "lambda_v", "max_iter"),
    "metrics": ("metrics_cloud", "symmetric"),
    "run": ("seed", "debug_dir"),
}


@dataclass
class PipelineConfig:
    """Every stage parameter. ``None`` means derived from the cloud at run time."""

    input: str = None
    output: str = None
    report: str = None
    mesh_format: str = None
    resample: bool = True
    resample_radius: float = None
    outlier_k: int = 16
    eps_inlier: float = None
    min_support: int = None
    theta: float = 10.0
    merge_divisor: int = 5
    w_fidelity: float = 1.0
    w_simplicity: float = 1.0
    w_completeness: float = 1.0
    n_proposals: int = 300
    sample_neighbors: int = 16
    alpha: float = None
    sigma: float = None
    t_r: float = 0.5
    lambda_v: float = 1.0
    max_iter: int = 10
    metrics_cloud: str = "preprocessed"
    symmetric: bool = False
    seed: int = 0
    debug_dir: str = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        def positive_or_none(name):
            v = getattr(self, name)
            if v is not None and not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"{name} must be positive, got {v!r}")

        for name in ("resample_radius", "eps_inlier", "alpha", "sigma"):
            positive_or_none(name)
        if not 0.0 <= self.t_r <= 1.0:
            raise ConfigError(f"t_r must lie in [0, 1], got {self.t_r!r}")
        if self.lambda_v < 0:
            raise ConfigError(f"lambda_v must be non-negative, got {self.lambda_v!r}")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.outlier_k < 1:
            raise ConfigError("outlier_k must be at least 1")
        if self.min_support is not None and self.min_support < 3:
            raise ConfigError("min_support must be at least 3")
        if not 0 < self.theta < 90:
            raise ConfigError("theta must lie in (0, 90) degrees")
        if self.merge_divisor < 1:
            raise ConfigError("merge_divisor must be at least 1")
        if self.metrics_cloud not in ("preprocessed", "raw"):
            raise ConfigError("metrics_cloud must be 'preprocessed' or 'raw'")
        if self.mesh_format not in (None, "obj", "ply"):
            raise ConfigError("mesh_format must be 'obj' or 'ply'")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")

    @classmethod
    def from_dict(cls, data):
        flat = {}
        names = {f.name for f in fields(cls)}
        for key, value in data.items():
            if isinstance(value, dict):
                if key not in _SECTIONS:
                    raise ConfigError(f"unknown config section [{key}]")
                for k, v in value.items():
                    if k not in _SECTIONS[key]:
                        raise ConfigError(f"unknown key {k!r} in section [{key}]")
                    flat[k] = v
            elif key in names:
                flat[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(**flat)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_toml(cls, path):
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self):
        """Sectioned dict; unset values are omitted since TOML has no null."""
        out = {}
        for section, keys in _SECTIONS.items():
            table = {k: getattr(self, k) for k in keys if getattr(self, k) is not None}
            if table:
                out[section] = table
        return out

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())

    def replace(self, **changes):
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass(frozen=True)
class MetricsReport:
    dis_h: float
    dis_m: float
    n_points_out: int
    n_faces_out: int
    r: float
    rh: float

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=1) + "\n"


@dataclass
class StageTimer:
    """Wall time per stage; stage errors get the stage name and elapsed time attached."""

    times: dict = field(default_factory=dict)

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        except ReconstructionError as exc:
            elapsed = time.perf_counter() - start
            exc.stage, exc.elapsed = name, elapsed
            if exc.args and isinstance(exc.args[0], str):
                exc.args = (f"{name} stage failed after {elapsed:.2f}s: {exc.args[0]}",) + exc.args[1:]
            raise
        finally:
            self.times[name] = time.perf_counter() - start
        log.info("%s: %.3fs", name, self.times[name])


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _mesh_faces(mesh):
    for f in mesh.faces:
        v = mesh.vertices[list(f)]
        n = np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0)
        yield v, Plane.from_point_normal(v.mean(axis=0), n)


def point_mesh_distances(points, mesh):
    """Exact distance from each point to the nearest mesh polygon."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    best = np.full(len(pts), np.inf)
    for v, plane in _mesh_faces(mesh):
        best = np.minimum(best, point_polygon_distance(pts, v, plane))
    return best


def hausdorff_and_mean(cloud, mesh, symmetric=False):
    """One-sided cloud-to-mesh Hausdorff and mean distance.

    With ``symmetric`` the Hausdorff term also covers mesh vertices to cloud.
    """
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=float)
    if len(pts) == 0 or len(mesh.faces) == 0:
        raise ValueError("need a non-empty cloud and mesh")
    d = point_mesh_distances(pts, mesh)
    dis_h, dis_m = float(np.max(d)), math.fsum(d) / len(d)
    if symmetric:
        tree = cloud.kdtree if hasattr(cloud, "kdtree") else PointCloud(pts).kdtree
        dis_h = max(dis_h, float(np.max(tree.query(mesh.vertices)[0])))
    return dis_h, min(dis_m, dis_h)


def simplification_metrics(raw_count, mesh, dis_h):
    """Vertex-to-raw-point ratio ``r``, ``rh = dis_h * r`` and (vertices, faces)."""
    raw_count = raw_count if isinstance(raw_count, (int, np.integer)) else len(raw_count)
    r = len(mesh.vertices) / raw_count
    return r, dis_h * r, (len(mesh.vertices), len(mesh.faces))


def metrics_report(cloud, mesh, raw_count, symmetric=False):
    dis_h, dis_m = hausdorff_and_mean(cloud, mesh, symmetric)
    r, rh, (nv, nf) = simplification_metrics(raw_count, mesh, dis_h)
    return MetricsReport(dis_h, dis_m, nv, nf, r, rh)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def preprocess(raw, config):
    """Poisson resampling followed by one pass of mutual-neighbor outlier removal."""
    cloud = raw
    if config.resample:
        radius = config.resample_radius or 2.0 * raw.avg_spacing
        cloud = poisson_resample(cloud, radius, seed=config.seed)
    if len(cloud) > config.outlier_k:
        cloud = remove_outliers(cloud, config.outlier_k)
    return cloud


def detection_params(cloud, config):
    return DetectionParams.for_cloud(
        cloud,
        eps_inlier=config.eps_inlier, min_support=config.min_support, theta=config.theta,
        merge_divisor=config.merge_divisor, w_fidelity=config.w_fidelity,
        w_simplicity=config.w_simplicity, w_completeness=config.w_completeness,
        seed=config.seed, alpha=config.alpha, n_proposals=config.n_proposals,
        sample_neighbors=config.sample_neighbors,
    )


def find_planes(cloud, config):
    params = detection_params(cloud, config)
    return refine_planes(detect_planes(cloud, params), params), params


def build_partition(planes, cloud, config):
    sigma = config.sigma or default_sigma(cloud.points)
    classes = classify_planes(planes, sigma)
    space = build_convex_space(classes, planes)
    return adaptive_partition(space, planes, classes.internal), classes


def orient_params(params, config):
    return OrientParams(eps_assoc=params.eps_inlier, alpha=params.alpha, t_r=config.t_r,
                        lambda_v=config.lambda_v, max_iter=config.max_iter)


def reconstruct_from_complex(cplx, cloud, params, config, debug_dir=None):
    state, faces = label_complex(cplx, cloud, orient_params(params, config), debug_dir)
    return extract_mesh(state, cplx, faces), state


# ---------------------------------------------------------------------------
# bundles passed between subcommands
# ---------------------------------------------------------------------------

def make_bundle(raw_count, raw, cloud, planes, params, config, cplx=None, internal=None):
    """JSON-ready state after plane detection, and optionally after partitioning."""
    data = {"raw_count": int(raw_count)}
    data.update(planes_to_dict(planes, cloud, params))
    if config.metrics_cloud == "raw" and raw is not None:
        data["raw_points"] = raw.points.tolist()
    if cplx is not None:
        data["complex"] = complex_to_dict(cplx, internal)
    return data


def read_bundle(data):
    """Rebuild (raw_count, metrics points, cloud, planes, params, complex or None)."""
    cloud = PointCloud(np.asarray(data["points"], dtype=float))
    params = DetectionParams(**data["params"])
    planes = planes_from_dict(data, cloud.points, params.alpha)
    cplx = complex_from_dict(data["complex"]) if "complex" in data else None
    raw_points = np.asarray(data["raw_points"]) if "raw_points" in data else None
    return data["raw_count"], raw_points, cloud, planes, params, cplx


def write_json(data, path):
    Path(path).write_text(json.dumps(data) + "\n")


def is_bundle(path):
    return str(path).lower().endswith(".json")


def load_input(path, config, timer):
    """Load a cloud or a stage bundle and run whatever stages the input still needs."""
    debug = Path(config.debug_dir) if config.debug_dir else None
    if is_bundle(path):
        with timer.stage("load"):
            data = json.loads(Path(path).read_text())
            raw_count, raw_points, cloud, planes, params, cplx = read_bundle(data)
        raw = PointCloud(raw_points) if raw_points is not None else None
        return raw_count, raw, cloud, planes, params, cplx
    with timer.stage("load"):
        raw = load_cloud(path)
    with timer.stage("preprocess"):
        cloud = preprocess(raw, config)
    with timer.stage("detect"):
        planes, params = find_planes(cloud, config)
    if debug is not None:
        dump_planes(planes, cloud, debug / "planes")
    return len(raw), raw, cloud, planes, params, None


def run_pipeline(config, timer=None):
    """Reconstruct ``config.input``; writes the mesh and report when paths are set."""
    if config.input is None:
        raise ConfigError("no input path configured")
    timer = timer or StageTimer()
    debug = Path(config.debug_dir) if config.debug_dir else None
    raw_count, raw, cloud, planes, params, cplx = load_input(config.input, config, timer)
    if cplx is None:
        with timer.stage("partition"):
            cplx, _ = build_partition(planes, cloud, config)
        if debug is not None:
            dump_complex(cplx, debug / "partition")
    with timer.stage("orient"):
        mesh, _ = reconstruct_from_complex(cplx, cloud, params, config,
                                           debug / "orient" if debug is not None else None)
    with timer.stage("metrics"):
        target = raw if config.metrics_cloud == "raw" and raw is not None else cloud
        report = metrics_report(target, mesh, raw_count, config.symmetric)
    if config.output:
        save_mesh(mesh, config.output, fmt=config.mesh_format)
        report_path = config.report or str(Path(config.output).with_suffix(".json"))
        Path(report_path).write_text(report.to_json())
    elif config.report:
        Path(config.report).write_text(report.to_json())
    return mesh, report
