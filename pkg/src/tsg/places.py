"""Per-terrain topological place graphs from a labeled point cloud.

Pipeline (one terrain type at a time, all stages deterministic):

    rasterize -> morph_smooth -> brushfire -> extract_gvd -> prune_spurs
              -> designate_nodes -> refine_graph

The occupancy grid marks terrain presence; the brushfire wavefront computes
the exact Euclidean distance and identity of each cell's nearest
non-terrain cell; grid cells where two distinct wavefronts meet form the
generalized Voronoi diagram, thinned to unit width. Junction and corner
cells become nodes, and iterative refinement splits long or poorly fit
edge chains until a fixpoint.

Grid coordinates are (x, y) with rasters indexed ``cells[y, x]``; all
tie-breaking is lexicographic in (x, y) or row-major in (y, x) as noted,
so identical inputs always produce identical graphs.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from tsg.model import SemanticPointCloud
from tsg.objects import ObjectNode

log = logging.getLogger(__name__)

EDGE = "edge"
NODE = "node"

_N8 = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
_N4 = [(0, -1), (-1, 0), (1, 0), (0, 1)]


class EmptyTerrainError(ValueError):
    """No points carry the requested terrain label."""


class NoNodesError(ValueError):
    """Refinement needs at least one designated node."""


@dataclass(frozen=True)
class PlaceConfig:
    """Knobs for the place pipeline; lengths are in grid cells."""

    resolution: float = 0.25
    morph_radius: int = 1
    min_clearance: float = 1.0
    spur_length: int = 5
    deviation_threshold: float = 2.0
    max_edge_length: int = 20
    max_refine_iterations: int = 10

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.morph_radius < 0:
            raise ValueError("morph radius must be non-negative")
        if self.min_clearance <= 0 or self.spur_length <= 0:
            raise ValueError("clearance and spur length must be positive")
        if self.deviation_threshold <= 0 or self.max_edge_length <= 0:
            raise ValueError("deviation threshold and max edge length must be positive")
        if self.max_refine_iterations < 1:
            raise ValueError("max refine iterations must be at least 1")


@dataclass(frozen=True)
class OccupancyGrid:
    """Binary terrain-presence raster; ``origin`` is the world xy of the
    (0, 0) cell corner and cells are indexed ``cells[y, x]``."""

    origin: np.ndarray
    resolution: float
    cells: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        c = np.asarray(self.cells, dtype=bool)
        o.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "cells", c)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if c.ndim != 2:
            raise ValueError("cells must be 2-D")

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def cell_center(self, cell: tuple[int, int]) -> np.ndarray:
        return self.origin + (np.array(cell, dtype=np.float64) + 0.5) * self.resolution


@dataclass(frozen=True)
class DistanceMap:
    """Exact Euclidean distance (cell units) and identity of the nearest
    obstacle (non-terrain) cell, per cell."""

    grid: OccupancyGrid
    distance: np.ndarray
    nearest: np.ndarray  # (H, W, 2) int64, (x, y) of nearest obstacle


@dataclass
class GvdSkeleton:
    """Thinned set of equidistant cells, each tagged edge or node.

    Carries grid geometry and per-cell clearance so downstream stages can
    emit world positions without re-deriving the distance map.
    """

    kinds: dict[tuple[int, int], str]
    clearance: dict[tuple[int, int], float]
    origin: np.ndarray
    resolution: float

    def cells(self) -> set[tuple[int, int]]:
        return set(self.kinds)

    def node_cells(self) -> list[tuple[int, int]]:
        return sorted((c for c, k in self.kinds.items() if k == NODE),
                      key=lambda c: (c[1], c[0]))

    def cell_center(self, cell: tuple[int, int]) -> np.ndarray:
        return self.origin + (np.array(cell, dtype=np.float64) + 0.5) * self.resolution


@dataclass(frozen=True)
class PlaceNode:
    id: int
    cell: tuple[int, int]
    position: np.ndarray  # world xy, meters
    clearance: float  # meters


@dataclass(frozen=True)
class PlaceEdge:
    a: int
    b: int
    chain_cells: int


@dataclass
class PlaceGraph:
    terrain: str
    nodes: list[PlaceNode] = field(default_factory=list)
    edges: list[PlaceEdge] = field(default_factory=list)
    cell_owner: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        ids = {n.id for n in self.nodes}
        for e in self.edges:
            if e.a == e.b:
                raise ValueError("place graphs carry no self-edges")
            if e.a not in ids or e.b not in ids:
                raise ValueError(f"edge ({e.a}, {e.b}) references a missing node")


# ---------------------------------------------------------------------------
# Rasterization and morphology
# ---------------------------------------------------------------------------


def rasterize(
    cloud: SemanticPointCloud,
    labels: dict[int, str],
    label: str,
    cfg: PlaceConfig,
) -> OccupancyGrid:
    """Bin labeled points into a binary grid padded by one cell of absence."""
    idx = [i for i, lab in labels.items() if lab == label]
    if not idx:
        raise EmptyTerrainError(f"empty terrain: no points labeled {label!r}")
    pos = np.stack([cloud.points[i].position for i in sorted(idx)])[:, :2]
    res = cfg.resolution
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    origin = lo - res
    width = int(np.floor((hi[0] - lo[0]) / res)) + 3
    height = int(np.floor((hi[1] - lo[1]) / res)) + 3
    ix = np.floor((pos[:, 0] - origin[0]) / res).astype(np.int64)
    iy = np.floor((pos[:, 1] - origin[1]) / res).astype(np.int64)
    ix = np.clip(ix, 0, width - 1)
    iy = np.clip(iy, 0, height - 1)
    cells = np.zeros((height, width), dtype=bool)
    cells[iy, ix] = True
    return OccupancyGrid(origin=origin, resolution=res, cells=cells)


def morph_smooth(grid: OccupancyGrid, radius: int) -> OccupancyGrid:
    """Morphological closing then opening with a (2r+1)-square element.

    Radius 0 is the identity. Cells outside the raster count as absent for
    every dilation and erosion step.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0:
        return grid
    elem = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    closed = ndimage.binary_erosion(
        ndimage.binary_dilation(grid.cells, structure=elem), structure=elem
    )
    opened = ndimage.binary_dilation(
        ndimage.binary_erosion(closed, structure=elem), structure=elem
    )
    return OccupancyGrid(origin=grid.origin, resolution=grid.resolution, cells=opened)


# ---------------------------------------------------------------------------
# Brushfire distance map
# ---------------------------------------------------------------------------


def brushfire(grid: OccupancyGrid) -> DistanceMap:
    """Priority-queue wavefront expansion from every obstacle cell.

    Distances are exact Euclidean cell-center distances (squared-integer
    arithmetic internally); nearest-obstacle ties break to the
    lexicographically smallest (x, y) obstacle coordinate.
    """
    free = grid.cells
    h, w = free.shape
    obstacles = np.argwhere(~free)  # rows of (y, x)
    if len(obstacles) == 0:
        raise ValueError("brushfire needs at least one obstacle cell")

    d2 = np.full((h, w), -1, dtype=np.int64)
    nearest = np.full((h, w, 2), -1, dtype=np.int64)
    heap: list[tuple[int, int, int, int, int]] = []
    for y, x in obstacles:
        d2[y, x] = 0
        nearest[y, x] = (x, y)
        heap.append((0, int(x), int(y), int(x), int(y)))
    heapq.heapify(heap)

    while heap:
        dd, ox, oy, x, y = heapq.heappop(heap)
        if dd != d2[y, x] or ox != nearest[y, x, 0] or oy != nearest[y, x, 1]:
            continue
        for dx, dy in _N8:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h):
                continue
            nd = (nx - ox) * (nx - ox) + (ny - oy) * (ny - oy)
            cur = d2[ny, nx]
            if cur == -1 or nd < cur or (
                nd == cur and (ox, oy) < (nearest[ny, nx, 0], nearest[ny, nx, 1])
            ):
                d2[ny, nx] = nd
                nearest[ny, nx] = (ox, oy)
                heapq.heappush(heap, (nd, ox, oy, nx, ny))

    return DistanceMap(grid=grid, distance=np.sqrt(d2.astype(np.float64)),
                       nearest=nearest)


# ---------------------------------------------------------------------------
# GVD extraction and thinning
# ---------------------------------------------------------------------------


def _ring_components(occupied: list[bool]) -> int:
    """8-connected components among the 8 ring positions around a cell."""
    offsets = _N8
    parent = list(range(8))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(8):
        if not occupied[i]:
            continue
        for j in range(i + 1, 8):
            if not occupied[j]:
                continue
            if max(abs(offsets[i][0] - offsets[j][0]),
                   abs(offsets[i][1] - offsets[j][1])) == 1:
                pi, pj = find(i), find(j)
                if pi != pj:
                    parent[pi] = pj
    roots = {find(i) for i in range(8) if occupied[i]}
    return len(roots)


def _thin(cells: set[tuple[int, int]], shape: tuple[int, int]) -> set[tuple[int, int]]:
    """Reduce a cell set to 8-connected unit width, preserving connectivity.

    Directional border subpasses (north, south, west, east): a subpass only
    considers cells whose neighbor in that direction lies inside the raster
    and was already absent when the subpass began, so each band erodes from
    one side only and keeps its other side intact end to end. A cell is
    removed only when it has at least two neighbors that stay in one
    8-connected ring piece, which protects chain interiors, endpoints, and
    topology.
    """
    h, w = shape
    cells = set(cells)
    changed = True
    while changed:
        changed = False
        for dx, dy in [(0, -1), (0, 1), (-1, 0), (1, 0)]:
            border = [
                c for c in sorted(cells, key=lambda c: (c[1], c[0]))
                if 0 <= c[0] + dx < w and 0 <= c[1] + dy < h
                and (c[0] + dx, c[1] + dy) not in cells
            ]
            for cell in border:
                if cell not in cells:
                    continue
                x, y = cell
                ring = [(x + ddx, y + ddy) in cells for ddx, ddy in _N8]
                if sum(ring) < 2 or _ring_components(ring) != 1:
                    continue
                cells.remove(cell)
                changed = True
    return cells


def extract_gvd(dm: DistanceMap, min_clearance: float = 1.0) -> GvdSkeleton:
    """Cells where two distinct wavefronts meet, thinned to unit width.

    A free cell joins when its clearance is at least ``min_clearance`` and
    some free 8-neighbor lies on a different wavefront (nearest-obstacle
    cells more than one Chebyshev step apart) at no larger distance. The
    no-larger-distance condition keeps only the ridge side of each front
    boundary: odd-width corridors reduce to their exact centerline before
    thinning, even widths to the two center rows. All cells start tagged
    edge.
    """
    free = dm.grid.cells
    h, w = free.shape
    candidate = np.zeros((h, w), dtype=bool)
    near_x = dm.nearest[:, :, 0]
    near_y = dm.nearest[:, :, 1]
    for dx, dy in _N8:
        src_y = slice(max(0, -dy), min(h, h - dy))
        src_x = slice(max(0, -dx), min(w, w - dx))
        dst_y = slice(max(0, dy), min(h, h + dy))
        dst_x = slice(max(0, dx), min(w, w + dx))
        cheb = np.maximum(
            np.abs(near_x[dst_y, dst_x] - near_x[src_y, src_x]),
            np.abs(near_y[dst_y, dst_x] - near_y[src_y, src_x]),
        )
        two_front = free[dst_y, dst_x] & (cheb > 1)
        ridge_side = dm.distance[src_y, src_x] >= dm.distance[dst_y, dst_x]
        candidate[src_y, src_x] |= two_front & ridge_side
    candidate &= free & (dm.distance >= min_clearance)

    cells = {(int(x), int(y)) for y, x in np.argwhere(candidate)}
    thin = _thin(cells, (h, w))
    return GvdSkeleton(
        kinds={c: EDGE for c in thin},
        clearance={c: float(dm.distance[c[1], c[0]]) for c in thin},
        origin=dm.grid.origin,
        resolution=dm.grid.resolution,
    )


# ---------------------------------------------------------------------------
# Pruning and node designation
# ---------------------------------------------------------------------------


def _degree(cell: tuple[int, int], cells: set[tuple[int, int]]) -> int:
    x, y = cell
    return sum((x + dx, y + dy) in cells for dx, dy in _N8)


def prune_spurs(skel: GvdSkeleton, spur_length: int) -> GvdSkeleton:
    """Iteratively drop leaf chains shorter than ``spur_length`` cells."""
    cells = skel.cells()
    changed = True
    while changed:
        changed = False
        leaves = sorted((c for c in cells if _degree(c, cells) <= 1),
                        key=lambda c: (c[1], c[0]))
        for leaf in leaves:
            if leaf not in cells:
                continue
            chain = [leaf]
            prev = None
            cur = leaf
            while True:
                nxt = [
                    (cur[0] + dx, cur[1] + dy)
                    for dx, dy in _N8
                    if (cur[0] + dx, cur[1] + dy) in cells
                    and (cur[0] + dx, cur[1] + dy) != prev
                ]
                if len(nxt) != 1 or _degree(nxt[0], cells) >= 3:
                    break
                chain.append(nxt[0])
                prev, cur = cur, nxt[0]
            if len(chain) < spur_length:
                cells.difference_update(chain)
                changed = True
    return GvdSkeleton(
        kinds={c: EDGE for c in cells},
        clearance={c: skel.clearance[c] for c in cells},
        origin=skel.origin,
        resolution=skel.resolution,
    )


def designate_nodes(skel: GvdSkeleton) -> GvdSkeleton:
    """Tag junction and corner cells as nodes, never orthogonally adjacent.

    A junction has three or more skeleton cells among its 8 neighbors; a
    corner has exactly one orthogonally adjacent skeleton cell. Cells are
    scanned in row-major order and a qualifying cell is skipped when marking
    it would put two nodes orthogonally adjacent (first marked wins).
    """
    cells = skel.cells()
    kinds = dict(skel.kinds)
    nodes: set[tuple[int, int]] = set()
    for cell in sorted(cells, key=lambda c: (c[1], c[0])):
        x, y = cell
        n8 = _degree(cell, cells)
        n4 = sum((x + dx, y + dy) in cells for dx, dy in _N4)
        if n8 >= 3 or n4 == 1:
            if any((x + dx, y + dy) in nodes for dx, dy in _N4):
                continue
            nodes.add(cell)
            kinds[cell] = NODE
    return GvdSkeleton(kinds=kinds, clearance=dict(skel.clearance),
                       origin=skel.origin, resolution=skel.resolution)


# ---------------------------------------------------------------------------
# Refinement into a place graph
# ---------------------------------------------------------------------------


def flood_fill(
    cells: set[tuple[int, int]], node_ids: dict[tuple[int, int], int]
) -> dict[tuple[int, int], tuple[int, int]]:
    """Assign every skeleton cell its closest node: cell -> (hops, node id).

    Multi-source BFS along skeleton 8-connectivity; equal hop counts go to
    the lower node id.
    """
    best: dict[tuple[int, int], tuple[int, int]] = {}
    heap = []
    for cell, nid in node_ids.items():
        best[cell] = (0, nid)
        heap.append((0, nid, cell[1], cell[0]))
    heapq.heapify(heap)
    while heap:
        hops, nid, y, x = heapq.heappop(heap)
        if best.get((x, y)) != (hops, nid):
            continue
        for dx, dy in _N8:
            n = (x + dx, y + dy)
            if n not in cells:
                continue
            cand = (hops + 1, nid)
            if n not in best or cand < best[n]:
                best[n] = cand
                heapq.heappush(heap, (hops + 1, nid, n[1], n[0]))
    return best


def _chains(
    cells_kinds: dict[tuple[int, int], str],
    node_ids: dict[tuple[int, int], int],
) -> list[tuple[int, int, list[tuple[int, int]]]]:
    """Cell chains joining pairs of nodes, endpoints included.

    Walks leave each node through every skeleton neighbor and follow edge
    cells until the next node cell; branching edge cells fork the walk. Each
    chain is reported once, oriented from its lower-id endpoint.
    """
    cells = set(cells_kinds)
    seen: set[tuple] = set()
    chains = []
    for start in sorted(node_ids, key=lambda c: node_ids[c]):
        stack = [[start, n] for n in _sorted_neighbors(start, cells)]
        while stack:
            path = stack.pop()
            cur = path[-1]
            if cells_kinds[cur] == NODE:
                a, b = node_ids[path[0]], node_ids[cur]
                if (a, b, tuple(path)) in seen:
                    continue
                fwd, rev = tuple(path), tuple(reversed(path))
                if (b, a) < (a, b) or ((a, b) == (b, a) and rev < fwd):
                    canonical = (b, a, rev)
                else:
                    canonical = (a, b, fwd)
                if canonical in seen:
                    continue
                seen.add(canonical)
                chains.append((canonical[0], canonical[1], list(canonical[2])))
                continue
            for n in _sorted_neighbors(cur, cells):
                if n != path[-2] and n not in path[1:]:
                    stack.append(path + [n])
    return chains


def _sorted_neighbors(cell, cells):
    x, y = cell
    return sorted(
        ((x + dx, y + dy) for dx, dy in _N8 if (x + dx, y + dy) in cells),
        key=lambda c: (c[1], c[0]),
    )


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = max(0.0, min(1.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + t * ab)))


def refine_graph(skel: GvdSkeleton, cfg: PlaceConfig, terrain: str = "") -> PlaceGraph:
    """Iteratively split node-to-node chains, then emit the place graph.

    Each pass re-floods from the current nodes and, per chain, promotes the
    most line-deviating cell when the max perpendicular distance to the
    endpoint segment exceeds the deviation threshold, else the chain's
    midpoint cell when the chain is longer than the max edge length. Stops
    at a promotion-free pass or after the configured iteration budget.
    """
    kinds = dict(skel.kinds)
    if NODE not in kinds.values():
        raise NoNodesError("no nodes to refine")
    cells = set(kinds)

    owner: dict[tuple[int, int], tuple[int, int]] = {}
    chains: list[tuple[int, int, list[tuple[int, int]]]] = []
    node_ids: dict[tuple[int, int], int] = {}
    for _ in range(cfg.max_refine_iterations):
        node_cells = sorted((c for c, k in kinds.items() if k == NODE),
                            key=lambda c: (c[1], c[0]))
        node_ids = {c: i for i, c in enumerate(node_cells)}
        owner = flood_fill(cells, node_ids)
        chains = _chains(kinds, node_ids)
        promoted = False
        for _, _, chain in chains:
            a = np.array(chain[0], dtype=np.float64)
            b = np.array(chain[-1], dtype=np.float64)
            devs = [_segment_distance(np.array(c, dtype=np.float64), a, b)
                    for c in chain]
            max_dev = max(devs)
            if max_dev > cfg.deviation_threshold:
                pick = chain[int(np.argmax(devs))]
                if kinds[pick] == EDGE:
                    kinds[pick] = NODE
                    promoted = True
            elif len(chain) > cfg.max_edge_length:
                pick = chain[len(chain) // 2]
                if kinds[pick] == EDGE:
                    kinds[pick] = NODE
                    promoted = True
        if not promoted:
            break
    else:
        # Budget exhausted: re-derive the final assignment and chains.
        node_cells = sorted((c for c, k in kinds.items() if k == NODE),
                            key=lambda c: (c[1], c[0]))
        node_ids = {c: i for i, c in enumerate(node_cells)}
        owner = flood_fill(cells, node_ids)
        chains = _chains(kinds, node_ids)

    nodes = []
    for cell, nid in sorted(node_ids.items(), key=lambda kv: kv[1]):
        pos = skel.cell_center(cell)
        nodes.append(PlaceNode(
            id=nid, cell=cell, position=pos,
            clearance=skel.clearance[cell] * skel.resolution,
        ))
    edges = []
    for a, b, chain in chains:
        if a == b:
            log.debug("dropping self-loop chain of %d cells at node %d", len(chain), a)
            continue
        edges.append(PlaceEdge(a=a, b=b, chain_cells=len(chain)))
    edges.sort(key=lambda e: (e.a, e.b, e.chain_cells))
    return PlaceGraph(
        terrain=terrain,
        nodes=nodes,
        edges=edges,
        cell_owner={c: v[1] for c, v in owner.items()},
    )


# ---------------------------------------------------------------------------
# End-to-end per-terrain build and object attachment
# ---------------------------------------------------------------------------


def build_places(
    cloud: SemanticPointCloud,
    labels: dict[int, str],
    label: str,
    cfg: PlaceConfig,
) -> PlaceGraph:
    """Full per-terrain pipeline; empty skeletons yield an empty graph."""
    grid = rasterize(cloud, labels, label, cfg)
    grid = morph_smooth(grid, cfg.morph_radius)
    if not grid.cells.any() or grid.cells.all():
        log.warning("terrain %r grid degenerate after smoothing; empty place graph", label)
        return PlaceGraph(terrain=label)
    dm = brushfire(grid)
    skel = extract_gvd(dm, cfg.min_clearance)
    skel = prune_spurs(skel, cfg.spur_length)
    if not skel.kinds:
        log.warning("terrain %r produced an empty skeleton; empty place graph", label)
        return PlaceGraph(terrain=label)
    skel = designate_nodes(skel)
    return refine_graph(skel, cfg, terrain=label)


def attach_objects(
    graphs: list[PlaceGraph], objects: list[ObjectNode]
) -> list[tuple[int, str, int]]:
    """Attach each object to the globally nearest place node in the xy plane.

    Exact distance ties break to the lexicographically lower
    (terrain label, node id). Requires at least one place node overall.
    """
    flat = []
    for g in graphs:
        for n in g.nodes:
            flat.append((g.terrain, n))
    if not flat:
        raise ValueError("no place nodes to attach objects to")
    flat.sort(key=lambda tn: (tn[0], tn[1].id))
    out = []
    for obj in objects:
        center = obj.center[:2]
        best = None
        best_d = math.inf
        for terrain, node in flat:
            d = float(np.linalg.norm(node.position - center))
            if d < best_d:
                best_d = d
                best = (obj.id, terrain, node.id)
        out.append(best)
    return out
