"""Fuse per-scan segment embeddings onto a fixed global point map.

Each scan is projected into the camera, points pick up the embedding of the
segment mask they land in, and every embedded scan point folds its embedding
into its nearest global map point within a match radius. Map geometry never
changes; only embeddings and observation counts do.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from tsg.ingest import MASK_TERRAIN, ScanFrame, SegmentMask
from tsg.model import (
    CameraModel,
    DimensionMismatchError,
    Embedding,
    SemanticPoint,
    SemanticPointCloud,
    fold_embedding,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProjectedPoint:
    """A scan point that landed inside the image, with its source index."""

    source_index: int
    pixel: tuple[float, float]
    depth: float


@dataclass(frozen=True)
class AssociationConfig:
    """Scan-to-map and point-to-mask association knobs.

    ``interior_erosion`` shrinks masks before lookup so that mask borders,
    which tend to be cast onto scenery behind the segmented object, do not
    contaminate the map; 0 disables it.
    """

    match_radius: float = 0.25
    interior_erosion: int = 2

    def __post_init__(self):
        if self.match_radius <= 0:
            raise ValueError("match radius must be positive")
        if self.interior_erosion < 0:
            raise ValueError("interior erosion must be non-negative")


def project_points(scan_points: np.ndarray, camera: CameraModel) -> list[ProjectedPoint]:
    """Pinhole-project sensor-frame points; drops behind-camera and off-image."""
    pts = np.asarray(scan_points, dtype=np.float64)
    if len(pts) == 0:
        return []
    cam = camera.extrinsic.apply(pts)
    out = []
    for i, (x, y, z) in enumerate(cam):
        if z <= 0:
            continue
        u = camera.fx * x / z + camera.cx
        v = camera.fy * y / z + camera.cy
        if 0 <= u < camera.width and 0 <= v < camera.height:
            out.append(ProjectedPoint(i, (float(u), float(v)), float(z)))
    return out


def back_project(pixel: tuple[float, float], depth: float, camera: CameraModel) -> np.ndarray:
    """Inverse pinhole map: pixel plus depth back to a camera-frame point."""
    u, v = pixel
    return np.array([
        (u - camera.cx) * depth / camera.fx,
        (v - camera.cy) * depth / camera.fy,
        depth,
    ])


def _eroded(mask: SegmentMask, radius: int) -> np.ndarray:
    if radius == 0:
        return mask.bitmap
    elem = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_erosion(mask.bitmap, structure=elem)


def associate_masks(
    projected: list[ProjectedPoint],
    masks: list[SegmentMask] | tuple[SegmentMask, ...],
    cfg: AssociationConfig,
) -> dict[int, Embedding]:
    """Map each projected point's source index to the embedding of its mask.

    A point belongs to a mask when its rounded pixel lies in the eroded
    bitmap. Overlaps resolve terrain first, then smaller (eroded) area, then
    lower mask index. Points landing in no mask are absent from the result.
    """
    if not projected or not masks:
        return {}
    shape = masks[0].bitmap.shape
    for m in masks:
        if m.bitmap.shape != shape:
            raise ValueError(f"mask raster {m.bitmap.shape} does not match {shape}")
    eroded = [_eroded(m, cfg.interior_erosion) for m in masks]
    order = sorted(
        range(len(masks)),
        key=lambda i: (0 if masks[i].kind == MASK_TERRAIN else 1,
                       int(eroded[i].sum()), i),
    )
    # Paint winners lowest priority first so the best mask lands last.
    winner = np.full(shape, -1, dtype=np.int64)
    for i in reversed(order):
        winner[eroded[i]] = i
    out = {}
    h, w = shape
    for p in projected:
        u = int(np.floor(p.pixel[0] + 0.5))
        v = int(np.floor(p.pixel[1] + 0.5))
        if not (0 <= u < w and 0 <= v < h):
            continue
        idx = winner[v, u]
        if idx >= 0:
            out[p.source_index] = masks[idx].embedding
    return out


def _nearest_within(
    tree: cKDTree, positions: np.ndarray, queries: np.ndarray, radius: float
) -> list[int | None]:
    """Nearest map index within radius per query, ties to the lower index."""
    hits = tree.query_ball_point(queries, r=radius)
    out: list[int | None] = []
    for q, cand in zip(queries, hits):
        if not cand:
            out.append(None)
            continue
        cand = sorted(cand)
        d2 = np.sum((positions[cand] - q) ** 2, axis=1)
        out.append(int(cand[int(np.argmin(d2))]))
    return out


@dataclass(frozen=True)
class FrameFuseStats:
    index: int
    timestamp: float
    scan_points: int
    associated: int
    folded: int


def _fuse_frame(
    cloud: SemanticPointCloud,
    frame: ScanFrame,
    camera: CameraModel,
    cfg: AssociationConfig,
    tree: cKDTree | None,
    positions: np.ndarray | None,
) -> tuple[SemanticPointCloud, int, int]:
    if len(cloud) == 0:
        return cloud, 0, 0
    for m in frame.masks:
        if m.embedding.dim != cloud.dim:
            raise DimensionMismatchError(
                f"mask embedding dim {m.embedding.dim} != cloud dim {cloud.dim}"
            )
    projected = project_points(frame.points, camera)
    assoc = associate_masks(projected, frame.masks, cfg)
    if not assoc:
        return cloud, 0, 0
    if positions is None:
        positions = cloud.positions()
    if tree is None:
        tree = cKDTree(positions)
    scan_indices = sorted(assoc)
    world = frame.pose.apply(frame.points[scan_indices])
    nearest = _nearest_within(tree, positions, world, cfg.match_radius)

    # Deterministic single-writer pass: folds grouped by global index,
    # ordered by contributing scan index within each group.
    folds: dict[int, list[int]] = {}
    for scan_i, global_i in zip(scan_indices, nearest):
        if global_i is not None:
            folds.setdefault(global_i, []).append(scan_i)
    points = list(cloud.points)
    n_folded = 0
    for global_i in sorted(folds):
        p = points[global_i]
        emb, count = p.embedding, p.observations
        for scan_i in folds[global_i]:
            emb, count = fold_embedding(emb, count, assoc[scan_i])
            n_folded += 1
        points[global_i] = SemanticPoint(p.position, emb, count)
    out = SemanticPointCloud(points=points, dim=cloud.dim, frame=cloud.frame)
    return out, len(assoc), n_folded


def fuse_frame(
    cloud: SemanticPointCloud,
    frame: ScanFrame,
    camera: CameraModel,
    cfg: AssociationConfig,
) -> SemanticPointCloud:
    """Fold one frame's mask embeddings into the global cloud."""
    out, _, _ = _fuse_frame(cloud, frame, camera, cfg, None, None)
    return out


def fuse_all(
    cloud: SemanticPointCloud,
    frames: Iterable[ScanFrame],
    camera: CameraModel,
    cfg: AssociationConfig,
    progress: Callable[[FrameFuseStats], None] | None = None,
) -> SemanticPointCloud:
    """Left-fold of fuse_frame over a frame sequence.

    The map spatial index is built once since fusion never moves points.
    """
    positions = cloud.positions()
    tree = cKDTree(positions) if len(cloud) else None
    for i, frame in enumerate(frames):
        cloud, n_assoc, n_folded = _fuse_frame(cloud, frame, camera, cfg, tree, positions)
        if progress is not None:
            progress(FrameFuseStats(i, frame.timestamp, len(frame.points),
                                    n_assoc, n_folded))
    return cloud
