"""Cluster prompt-matched points into axis-aligned bounding-box object nodes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from tsg.model import Embedding, SemanticPointCloud, renormalized_mean
from tsg.prompt import PromptResult


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.5
    min_pts: int = 5

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be at least 1")


def dbscan(points: np.ndarray, params: DbscanParams) -> tuple[list[set[int]], set[int]]:
    """Density-based clustering with the Euclidean metric.

    A core point has at least ``min_pts`` neighbors within ``eps`` (inclusive,
    counting itself); clusters are maximal density-connected sets. Seeds are
    visited in ascending index order, so border points reachable from several
    clusters deterministically join the first one discovered.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n == 0:
        return [], set()
    tree = cKDTree(pts)
    neighborhoods = [sorted(tree.query_ball_point(pts[i], r=params.eps)) for i in range(n)]
    is_core = np.array([len(nb) >= params.min_pts for nb in neighborhoods])

    labels = np.full(n, -1, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    clusters: list[set[int]] = []
    for seed in range(n):
        if visited[seed] or not is_core[seed]:
            continue
        cluster = set()
        queue = [seed]
        visited[seed] = True
        while queue:
            i = queue.pop(0)
            cluster.add(i)
            labels[i] = len(clusters)
            if not is_core[i]:
                continue
            for j in neighborhoods[i]:
                if not visited[j]:
                    visited[j] = True
                    queue.append(j)
        clusters.append(cluster)
    noise = {int(i) for i in range(n) if labels[i] == -1}
    return clusters, noise


@dataclass(frozen=True)
class ObjectNode:
    """Class-labeled axis-aligned box over one density cluster of points."""

    id: int
    label: str
    aabb_min: np.ndarray
    aabb_max: np.ndarray
    members: frozenset[int]
    embedding: Embedding

    def __post_init__(self):
        lo = np.asarray(self.aabb_min, dtype=np.float64)
        hi = np.asarray(self.aabb_max, dtype=np.float64)
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "aabb_min", lo)
        object.__setattr__(self, "aabb_max", hi)
        object.__setattr__(self, "members", frozenset(self.members))
        if not self.members:
            raise ValueError("object node must have members")
        if np.any(lo > hi):
            raise ValueError("aabb min must not exceed max")

    @property
    def center(self) -> np.ndarray:
        return (self.aabb_min + self.aabb_max) / 2

    def contains(self, point: np.ndarray) -> bool:
        return bool(np.all(point >= self.aabb_min) and np.all(point <= self.aabb_max))


def build_object_nodes(
    cloud: SemanticPointCloud, result: PromptResult, params: DbscanParams
) -> list[ObjectNode]:
    """One node per density cluster of the prompt's matched points.

    The box is the tight hull of member positions, the embedding the
    renormalized mean of member embeddings, and the label the query's class.
    Noise points produce no node. Ids ascend with the minimum member index.
    """
    matched = sorted(result.matches)
    if not matched:
        return []
    positions = np.stack([cloud.points[i].position for i in matched])
    clusters, _ = dbscan(positions, params)
    global_clusters = [sorted(matched[i] for i in c) for c in clusters]
    global_clusters.sort(key=lambda c: c[0])
    nodes = []
    for node_id, member_ids in enumerate(global_clusters):
        member_pos = np.stack([cloud.points[i].position for i in member_ids])
        emb = renormalized_mean([cloud.points[i].embedding for i in member_ids])
        nodes.append(ObjectNode(
            id=node_id,
            label=result.query.label,
            aabb_min=member_pos.min(axis=0),
            aabb_max=member_pos.max(axis=0),
            members=frozenset(member_ids),
            embedding=emb,
        ))
    return nodes
