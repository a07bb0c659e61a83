"""Core domain types shared by the whole pipeline.

Embeddings are fixed-dimension unit vectors in a shared latent space;
semantic similarity is approximated by cosine similarity. A point's
embedding is the running arithmetic mean of everything observed for it,
stored renormalized to unit length. The norm of the raw (pre-normalization)
mean is kept alongside so that further averaging stays exact.

All types are immutable values after construction and safe to share across
threads; the fold operation is pure and callers serialize updates per point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DIM = 512

UNIT_NORM_TOL = 1e-6
QUAT_NORM_TOL = 1e-9


class DimensionMismatchError(ValueError):
    """Embedding dimensions disagree."""


class NullEmbeddingError(ValueError):
    """An operation received the all-zeros 'no semantics observed' embedding."""


@dataclass(frozen=True)
class Embedding:
    """Unit-norm semantic vector, or the all-zeros null embedding.

    ``values`` is a read-only float32 array (float32 matches typical encoder
    precision and makes file round trips bit-exact). ``raw_norm`` is the L2
    norm of the raw running mean this unit vector was normalized from; it is
    1.0 for a single observation and 0.0 for the null embedding.
    """

    values: np.ndarray
    raw_norm: float = 1.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1:
            raise ValueError(f"embedding must be 1-D, got shape {vals.shape}")
        n = float(np.linalg.norm(vals.astype(np.float64)))
        if self.raw_norm == 0.0 or n == 0.0:
            if n != 0.0 or self.raw_norm != 0.0:
                raise ValueError("null embedding must be all zeros with raw_norm 0")
        elif abs(n - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"embedding norm {n} not within {UNIT_NORM_TOL} of 1")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def is_null(self) -> bool:
        return self.raw_norm == 0.0

    @staticmethod
    def null(dim: int = DEFAULT_DIM) -> "Embedding":
        return Embedding(np.zeros(dim, dtype=np.float32), raw_norm=0.0)

    @staticmethod
    def unit(raw: np.ndarray) -> "Embedding":
        """Normalize a raw vector into a single-observation embedding."""
        raw = np.asarray(raw, dtype=np.float64)
        n = float(np.linalg.norm(raw))
        if n == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return Embedding((raw / n).astype(np.float32), raw_norm=1.0)

    def raw(self) -> np.ndarray:
        """The raw (pre-normalization) mean vector, float64."""
        return self.values.astype(np.float64) * self.raw_norm

    def __eq__(self, other) -> bool:
        if not isinstance(other, Embedding):
            return NotImplemented
        return self.raw_norm == other.raw_norm and np.array_equal(self.values, other.values)


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Cosine of the angle between two non-null embeddings, in [-1, 1]."""
    if a.is_null or b.is_null:
        raise NullEmbeddingError("cosine similarity is undefined for the null embedding")
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    num = float(np.dot(a.values.astype(np.float64), b.values.astype(np.float64)))
    den = float(np.linalg.norm(a.values.astype(np.float64)) * np.linalg.norm(b.values.astype(np.float64)))
    return max(-1.0, min(1.0, num / den))


def fold_embedding(current: Embedding, count: int, incoming: Embedding) -> tuple[Embedding, int]:
    """Fold one more observation into a per-point running mean.

    Returns the renormalized arithmetic mean of all ``count + 1`` raw
    observations, together with the new count. ``current`` must be the null
    embedding exactly when ``count`` is 0.
    """
    if incoming.is_null:
        raise NullEmbeddingError("cannot fold the null embedding")
    if count < 0:
        raise ValueError("count must be non-negative")
    if current.is_null != (count == 0):
        raise ValueError("current must be null exactly when count is 0")
    if not current.is_null and current.dim != incoming.dim:
        raise DimensionMismatchError(f"dimension mismatch: {current.dim} vs {incoming.dim}")
    mean = (count * current.raw() + incoming.raw()) / (count + 1)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        # Observations cancelled exactly; keep the mean magnitude, direction undefined.
        return Embedding.null(incoming.dim), count + 1
    emb = Embedding((mean / norm).astype(np.float32), raw_norm=norm)
    return emb, count + 1


@dataclass(frozen=True)
class SemanticPoint:
    """A 3D world-frame point with an averaged semantic embedding."""

    position: np.ndarray
    embedding: Embedding
    observations: int = 0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)
        if pos.shape != (3,):
            raise ValueError(f"position must be a 3-vector, got shape {pos.shape}")
        if self.observations < 0:
            raise ValueError("observations must be non-negative")
        if (self.observations == 0) != self.embedding.is_null:
            raise ValueError("observations == 0 iff embedding is null")


@dataclass
class SemanticPointCloud:
    """Ordered point list; indices are stable identifiers.

    Immutable by convention: operations that update embeddings return a new
    cloud sharing the untouched points.
    """

    points: list[SemanticPoint] = field(default_factory=list)
    dim: int = DEFAULT_DIM
    frame: str = "world"

    def __post_init__(self):
        for i, p in enumerate(self.points):
            if p.embedding.dim != self.dim:
                raise DimensionMismatchError(
                    f"point {i} embedding dim {p.embedding.dim} != cloud dim {self.dim}"
                )

    def __len__(self) -> int:
        return len(self.points)

    def positions(self) -> np.ndarray:
        """(N, 3) float64 array of point positions."""
        if not self.points:
            return np.zeros((0, 3), dtype=np.float64)
        return np.stack([p.position for p in self.points])

    def embedding_matrix(self) -> np.ndarray:
        """(N, D) float64 matrix of stored unit embeddings (zeros for null)."""
        if not self.points:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.stack([p.embedding.values.astype(np.float64) for p in self.points])

    def observation_counts(self) -> np.ndarray:
        return np.array([p.observations for p in self.points], dtype=np.int64)


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class Pose:
    """Rigid transform as unit quaternion (w, x, y, z) plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        if q.shape != (4,):
            raise ValueError("rotation must be a quaternion (w, x, y, z)")
        if t.shape != (3,):
            raise ValueError("translation must be a 3-vector")
        if abs(float(np.linalg.norm(q)) - 1.0) > QUAT_NORM_TOL:
            raise ValueError("quaternion norm must be 1 within 1e-9")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 3) points by this pose."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix().T + self.translation

    def inverse(self) -> "Pose":
        w, x, y, z = self.rotation
        conj = np.array([w, -x, -y, -z])
        conj /= np.linalg.norm(conj)
        rinv = _quat_to_matrix(conj)
        return Pose(conj, -(rinv @ self.translation))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus extrinsic mapping sensor frame to camera frame."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def ray_directions(self) -> np.ndarray:
        """(H, W, 3) camera-frame unit rays through each pixel center."""
        us, vs = np.meshgrid(np.arange(self.width), np.arange(self.height))
        d = np.stack(
            [(us - self.cx) / self.fx, (vs - self.cy) / self.fy, np.ones_like(us, dtype=np.float64)],
            axis=-1,
        )
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def renormalized_mean(embeddings: list[Embedding]) -> Embedding:
    """Renormalized mean direction of a non-empty list of unit embeddings."""
    if not embeddings:
        raise ValueError("need at least one embedding")
    mean = np.mean([e.values.astype(np.float64) for e in embeddings], axis=0)
    n = float(np.linalg.norm(mean))
    if n == 0.0:
        return Embedding.null(embeddings[0].dim)
    return Embedding((mean / n).astype(np.float32), raw_norm=n)
