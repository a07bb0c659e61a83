"""Terrain-aware task-driven 3D scene graphs from metric-semantic point clouds."""

from tsg.model import (
    CameraModel,
    Embedding,
    Pose,
    SemanticPoint,
    SemanticPointCloud,
    cosine_similarity,
    fold_embedding,
)

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "Embedding",
    "Pose",
    "SemanticPoint",
    "SemanticPointCloud",
    "cosine_similarity",
    "fold_embedding",
    "__version__",
]
