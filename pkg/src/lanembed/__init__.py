"""Spatial-embedding lane instance segmentation: losses, direct field fitting and clustering."""

__version__ = "0.1.0"

from .cluster import ClusterParams, DbscanParams, GridDBSCAN, SeedClusterer, dbscan, fast_cluster, match_instances
from .core import instance_stats, make_coordinate_maps, spatial_embedding
from .losses import LossConfig, total_loss_and_gradients
from .optimize import FieldState, FitConfig, SpatialEmbeddingFitter, fit
from .synth import SynthConfig, generate_scene

__all__ = [
    "ClusterParams",
    "DbscanParams",
    "FieldState",
    "FitConfig",
    "GridDBSCAN",
    "LossConfig",
    "SeedClusterer",
    "SpatialEmbeddingFitter",
    "SynthConfig",
    "dbscan",
    "fast_cluster",
    "fit",
    "generate_scene",
    "instance_stats",
    "make_coordinate_maps",
    "match_instances",
    "spatial_embedding",
    "total_loss_and_gradients",
]
