"""Polygonal surface reconstruction from point clouds.

Planes are detected in a preprocessed cloud, the space they bound is split
into convex cells by an adaptive binary partition, and cells are labeled
inside or outside with a face-based winding field and a min-cut.
"""
from .cloud import PointCloud, PolyMesh, load_cloud, load_mesh, save_mesh
from .errors import (ConfigError, DegenerateConfiguration, DegenerateInput, EmptyCloud, EmptySelection,
                     MeshIOError, NoPlanesFound, NonConvergence, ParseError, ReconstructionError,
                     SingularEvaluation, UnboundedSpace)
from .geometry import ConvexCell, ConvexPolygon, Plane
from .pipeline import MetricsReport, PipelineConfig, hausdorff_and_mean, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConvexCell", "ConvexPolygon", "DegenerateConfiguration", "DegenerateInput", "EmptyCloud",
    "EmptySelection", "MeshIOError", "MetricsReport", "NoPlanesFound", "NonConvergence", "ParseError",
    "PipelineConfig", "Plane", "PointCloud", "PolyMesh", "ReconstructionError", "SingularEvaluation",
    "UnboundedSpace", "hausdorff_and_mean", "load_cloud", "load_mesh", "run_pipeline", "save_mesh",
]
