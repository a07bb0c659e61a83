"""Open-set prompting of a fused cloud by cosine-similarity thresholding.

Query vectors arrive from a prompt-bank file rather than a text encoder,
keeping the library model-free. ``hash_embedding`` is a deterministic
stand-in encoder (seeded hash to unit vector) so tests and demos need no
external assets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tsg.model import DimensionMismatchError, Embedding, SemanticPointCloud

KIND_TERRAIN = "terrain"
KIND_OBJECT = "object"

# Default similarity thresholds: terrain prompts reuse the exact label
# vectors from fusion, so only averaging pulls them below 1; object prompts
# bridge text to image content and sit much lower.
TERRAIN_THRESHOLD = 0.95
OBJECT_THRESHOLD = 0.28

OBJECT_PROMPT_TEMPLATE = "image of a {}"


def hash_embedding(text: str, dim: int, salt: int = 0) -> Embedding:
    """Deterministic unit vector for a string; stable across runs and hosts."""
    digest = hashlib.sha256(f"{salt}:{text}".encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(seed)
    return Embedding.unit(rng.standard_normal(dim))


@dataclass(frozen=True)
class PromptQuery:
    """One prompt: a text, its embedding, a match threshold, and a kind.

    ``label`` is the class name attached to downstream nodes; it defaults to
    the prompt text (object prompts conventionally read "image of a {class}"
    with label set to the bare class).
    """

    text: str
    embedding: Embedding
    threshold: float
    kind: str
    label: str = ""

    def __post_init__(self):
        if not (0.0 < self.threshold <= 1.0):
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.kind not in (KIND_TERRAIN, KIND_OBJECT):
            raise ValueError(f"unknown query kind {self.kind!r}")
        if self.embedding.is_null:
            raise ValueError("query embedding must be non-null")
        if not self.label:
            object.__setattr__(self, "label", self.text)


@dataclass(frozen=True)
class PromptResult:
    query: PromptQuery
    matches: frozenset[int]
    scores: dict[int, float]

    def __post_init__(self):
        if set(self.scores) != set(self.matches):
            raise ValueError("matches and scores must share the same key set")


def classify(cloud: SemanticPointCloud, query: PromptQuery) -> PromptResult:
    """Indices of cloud points whose similarity to the query passes its threshold.

    Points that were never observed (null embedding) never match.
    """
    if cloud.dim != query.embedding.dim:
        raise DimensionMismatchError(
            f"cloud dim {cloud.dim} != query dim {query.embedding.dim}"
        )
    emb = cloud.embedding_matrix()
    scores = emb @ query.embedding.values.astype(np.float64)
    observed = cloud.observation_counts() > 0
    hits = np.flatnonzero(observed & (scores >= query.threshold))
    return PromptResult(
        query=query,
        matches=frozenset(int(i) for i in hits),
        scores={int(i): float(scores[i]) for i in hits},
    )


def partition_terrain(
    cloud: SemanticPointCloud, queries: list[PromptQuery]
) -> dict[int, str]:
    """Assign each point the label of its best-scoring passing terrain query.

    Returns labels for classified points only; absent indices are
    unclassified. Ties break to the earlier query in the list.
    """
    labels = [q.label for q in queries]
    if len(set(labels)) != len(labels):
        raise ValueError("terrain query labels must be pairwise distinct")
    for q in queries:
        if q.kind != KIND_TERRAIN:
            raise ValueError(f"partition_terrain got a {q.kind!r} query")
        if cloud.dim != q.embedding.dim:
            raise DimensionMismatchError(
                f"cloud dim {cloud.dim} != query dim {q.embedding.dim}"
            )
    if not queries or len(cloud) == 0:
        return {}
    emb = cloud.embedding_matrix()
    qmat = np.stack([q.embedding.values.astype(np.float64) for q in queries])
    scores = emb @ qmat.T  # (N, Q)
    passing = scores >= np.array([q.threshold for q in queries])[None, :]
    passing &= (cloud.observation_counts() > 0)[:, None]
    # argmax returns the first maximum, which is the earlier query on ties.
    best = np.argmax(np.where(passing, scores, -np.inf), axis=1)
    out = {}
    for i in np.flatnonzero(passing.any(axis=1)):
        out[int(i)] = queries[int(best[i])].label
    return out


def make_query(text: str, kind: str, dim: int, threshold: float | None = None,
               label: str = "", embedding: Embedding | None = None) -> PromptQuery:
    """Build a query, hash-encoding its label when no embedding is supplied."""
    if threshold is None:
        threshold = TERRAIN_THRESHOLD if kind == KIND_TERRAIN else OBJECT_THRESHOLD
    if embedding is None:
        embedding = hash_embedding(label or text, dim)
    return PromptQuery(text=text, embedding=embedding, threshold=threshold,
                       kind=kind, label=label)


def query_from_dict(entry: dict, dim: int) -> PromptQuery:
    emb = None
    if entry.get("embedding") is not None:
        emb = Embedding.unit(np.array(entry["embedding"], dtype=np.float64))
    return make_query(
        text=entry["text"],
        kind=entry["kind"],
        dim=dim,
        threshold=entry.get("threshold"),
        label=entry.get("label", ""),
        embedding=emb,
    )


def load_prompt_bank(path: str | Path, dim: int) -> list[PromptQuery]:
    """Prompt bank: JSON array of {text, kind, threshold, embedding} objects."""
    entries = json.loads(Path(path).read_text())
    return [query_from_dict(e, dim) for e in entries]


def save_prompt_bank(queries: list[PromptQuery], path: str | Path) -> None:
    entries = [
        {
            "text": q.text,
            "kind": q.kind,
            "threshold": q.threshold,
            "label": q.label,
            "embedding": [float(v) for v in q.embedding.values],
        }
        for q in queries
    ]
    Path(path).write_text(json.dumps(entries, indent=1))
