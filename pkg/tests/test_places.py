import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsg.model import Embedding, SemanticPoint, SemanticPointCloud
from tsg.objects import ObjectNode
from tsg.places import (
    EDGE,
    NODE,
    DistanceMap,
    EmptyTerrainError,
    GvdSkeleton,
    NoNodesError,
    OccupancyGrid,
    PlaceConfig,
    PlaceGraph,
    attach_objects,
    brushfire,
    build_places,
    designate_nodes,
    extract_gvd,
    flood_fill,
    morph_smooth,
    prune_spurs,
    rasterize,
    refine_graph,
)
from tsg.prompt import hash_embedding

DIM = 8


def brute_force_distance(cells):
    """Exhaustive min-over-obstacles Euclidean distance, cell units."""
    h, w = cells.shape
    obst = np.argwhere(~cells)  # (K, 2) rows of (y, x)
    assert len(obst)
    ys, xs = np.mgrid[0:h, 0:w]
    d2 = np.full((h, w), np.inf)
    for oy, ox in obst:
        d2 = np.minimum(d2, (xs - ox) ** 2 + (ys - oy) ** 2)
    return np.sqrt(d2)


def cloud_xy(points_xy, label_for_all="grass"):
    emb = hash_embedding(label_for_all, DIM)
    pts = [SemanticPoint(np.array([x, y, 0.0]), emb, 1) for x, y in points_xy]
    cloud = SemanticPointCloud(points=pts, dim=DIM)
    labels = {i: label_for_all for i in range(len(pts))}
    return cloud, labels


def grid_from_bool(cells, origin=(0.0, 0.0), res=1.0):
    return OccupancyGrid(origin=np.array(origin), resolution=res,
                         cells=np.asarray(cells, dtype=bool))


def skeleton_from_cells(cells, kinds=None, res=1.0):
    cells = list(cells)
    kind_map = {c: EDGE for c in cells}
    if kinds:
        kind_map.update(kinds)
    return GvdSkeleton(
        kinds=kind_map,
        clearance={c: 1.0 for c in cells},
        origin=np.zeros(2),
        resolution=res,
    )


class TestRasterize:
    CFG = PlaceConfig(resolution=0.5)

    def test_square_block_with_padding_ring(self):
        xs = np.arange(0.25, 10.0, 0.5)
        pts = [(x, y) for x in xs for y in xs]
        cloud, labels = cloud_xy(pts)
        grid = rasterize(cloud, labels, "grass", self.CFG)
        assert grid.cells.shape == (22, 22)
        assert grid.cells[1:21, 1:21].all()
        assert not grid.cells[0, :].any() and not grid.cells[-1, :].any()
        assert not grid.cells[:, 0].any() and not grid.cells[:, -1].any()

    def test_single_point(self):
        cloud, labels = cloud_xy([(3.0, 4.0)])
        grid = rasterize(cloud, labels, "grass", self.CFG)
        assert grid.cells.sum() == 1

    def test_l_shape_matches_binning_oracle(self):
        rng = np.random.default_rng(0)
        pts = []
        for _ in range(400):
            x, y = rng.uniform(0, 6), rng.uniform(0, 6)
            if x < 2 or y < 2:
                pts.append((x, y))
        cloud, labels = cloud_xy(pts)
        grid = rasterize(cloud, labels, "grass", self.CFG)
        res = grid.resolution
        expected = np.zeros_like(grid.cells)
        for x, y in pts:
            ix = int(np.floor((x - grid.origin[0]) / res))
            iy = int(np.floor((y - grid.origin[1]) / res))
            expected[iy, ix] = True
        assert np.array_equal(grid.cells, expected)

    def test_empty_terrain(self):
        cloud, labels = cloud_xy([(0.0, 0.0)])
        with pytest.raises(EmptyTerrainError):
            rasterize(cloud, labels, "asphalt", self.CFG)

    def test_label_filtering(self):
        emb = hash_embedding("x", DIM)
        pts = [SemanticPoint(np.array([0.0, 0.0, 0.0]), emb, 1),
               SemanticPoint(np.array([5.0, 5.0, 0.0]), emb, 1)]
        cloud = SemanticPointCloud(points=pts, dim=DIM)
        grid = rasterize(cloud, {0: "grass", 1: "asphalt"}, "grass", self.CFG)
        assert grid.cells.sum() == 1


class TestMorphSmooth:
    def test_radius_zero_identity(self):
        rng = np.random.default_rng(0)
        grid = grid_from_bool(rng.random((20, 20)) > 0.5)
        out = morph_smooth(grid, 0)
        assert np.array_equal(out.cells, grid.cells)

    def test_closing_fills_hole(self):
        cells = np.zeros((24, 24), dtype=bool)
        cells[2:22, 2:22] = True
        cells[10, 10] = False
        out = morph_smooth(grid_from_bool(cells), 1)
        assert out.cells[10, 10]

    def test_opening_removes_isolated_cell(self):
        cells = np.zeros((20, 20), dtype=bool)
        cells[5, 5] = True
        out = morph_smooth(grid_from_bool(cells), 1)
        assert not out.cells.any()

    def test_equals_direct_composition(self):
        from scipy import ndimage

        rng = np.random.default_rng(7)
        cells = rng.random((30, 30)) > 0.4
        radius = 1
        elem = np.ones((3, 3), dtype=bool)
        closed = ndimage.binary_erosion(ndimage.binary_dilation(cells, elem), elem)
        want = ndimage.binary_dilation(ndimage.binary_erosion(closed, elem), elem)
        got = morph_smooth(grid_from_bool(cells), radius)
        assert np.array_equal(got.cells, want)


class TestBrushfire:
    def test_single_center_obstacle(self):
        cells = np.ones((3, 3), dtype=bool)
        cells[1, 1] = False
        dm = brushfire(grid_from_bool(cells))
        assert dm.distance[1, 1] == 0
        for y, x in [(0, 1), (1, 0), (1, 2), (2, 1)]:
            assert dm.distance[y, x] == pytest.approx(1.0)
        for y, x in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert dm.distance[y, x] == pytest.approx(math.sqrt(2))
        assert tuple(dm.nearest[0, 0]) == (1, 1)

    def test_all_obstacle(self):
        dm = brushfire(grid_from_bool(np.zeros((4, 5), dtype=bool)))
        assert np.all(dm.distance == 0)

    def test_all_free_rejected(self):
        with pytest.raises(ValueError):
            brushfire(grid_from_bool(np.ones((4, 4), dtype=bool)))

    def test_zero_exactly_on_obstacles(self):
        rng = np.random.default_rng(5)
        cells = rng.random((20, 20)) > 0.3
        dm = brushfire(grid_from_bool(cells))
        assert np.array_equal(dm.distance == 0, ~cells)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 100_000), st.integers(4, 40), st.floats(0.05, 0.5))
    def test_matches_brute_force(self, seed, size, density):
        rng = np.random.default_rng(seed)
        cells = rng.random((size, size)) > density
        if cells.all():
            cells[0, 0] = False
        dm = brushfire(grid_from_bool(cells))
        want = brute_force_distance(cells)
        np.testing.assert_allclose(dm.distance, want, atol=1e-9)

    def test_nearest_is_consistent_and_tie_breaks_lexicographic(self):
        rng = np.random.default_rng(11)
        cells = rng.random((24, 24)) > 0.2
        cells[0, 0] = False
        dm = brushfire(grid_from_bool(cells))
        h, w = cells.shape
        obst = [(int(x), int(y)) for y, x in np.argwhere(~cells)]
        for y in range(h):
            for x in range(w):
                nx, ny = dm.nearest[y, x]
                d = math.hypot(x - nx, y - ny)
                assert d == pytest.approx(dm.distance[y, x], abs=1e-12)
                best = min(
                    ((math.hypot(x - ox, y - oy), (ox, oy)) for ox, oy in obst),
                    key=lambda t: (round(t[0] ** 2), t[1]),
                )
                assert (int(nx), int(ny)) == best[1]


def corridor_grid(width_cells, length=21):
    """Free corridor of the given width between two full-length walls."""
    h = width_cells + 2
    cells = np.ones((h, length), dtype=bool)
    cells[0, :] = False
    cells[h - 1, :] = False
    return grid_from_bool(cells)


class TestExtractGvd:
    def test_corridor_centerline(self):
        grid = corridor_grid(5, length=21)  # rows 0 and 6 obstacle
        skel = extract_gvd(brushfire(grid), min_clearance=1.0)
        cells = skel.cells()
        assert cells == {(x, 3) for x in range(21)}
        for c in cells:
            assert skel.kinds[c] == EDGE

    def test_even_corridor_single_center_row(self):
        grid = corridor_grid(4, length=15)  # rows 0 and 5 obstacle
        skel = extract_gvd(brushfire(grid), min_clearance=1.0)
        rows = {y for _, y in skel.cells()}
        assert len(rows) == 1
        assert rows <= {2, 3}

    def test_convex_blob_near_empty(self):
        cells = np.zeros((21, 21), dtype=bool)
        ys, xs = np.mgrid[0:21, 0:21]
        cells[(xs - 10) ** 2 + (ys - 10) ** 2 <= 64] = True
        skel = extract_gvd(brushfire(grid_from_bool(cells)), min_clearance=1.0)
        assert len(skel.cells()) <= 0.15 * cells.sum()

    def test_plus_region_has_junction(self):
        cells = np.zeros((23, 23), dtype=bool)
        cells[9:14, 1:22] = True  # horizontal corridor, width 5
        cells[1:22, 9:14] = True  # vertical corridor, width 5
        skel = extract_gvd(brushfire(grid_from_bool(cells)), min_clearance=1.0)
        cs = skel.cells()
        junctions = [c for c in cs
                     if sum((c[0] + dx, c[1] + dy) in cs
                            for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                            if (dx, dy) != (0, 0)) >= 3]
        assert junctions

    def test_min_clearance_respected(self):
        grid = corridor_grid(7)
        for clearance in (1.0, 2.0, 3.0):
            skel = extract_gvd(brushfire(grid), min_clearance=clearance)
            for c in skel.cells():
                assert skel.clearance[c] >= clearance

    def test_unit_width(self):
        # No skeleton cell keeps a full 2x2 block: thinned to unit width.
        grid = corridor_grid(6, length=25)
        skel = extract_gvd(brushfire(grid), min_clearance=1.0)
        cs = skel.cells()
        for x, y in cs:
            block = {(x + 1, y), (x, y + 1), (x + 1, y + 1)}
            assert not block <= cs

    def test_two_front_witness(self):
        # Every skeleton cell sees two obstacles, Chebyshev-separated by > 1,
        # within its clearance + sqrt(2) cells.
        rng = np.random.default_rng(3)
        cells = rng.random((32, 32)) > 0.25
        dm = brushfire(grid_from_bool(cells))
        skel = extract_gvd(dm, min_clearance=1.0)
        obst = [(int(x), int(y)) for y, x in np.argwhere(~cells)]
        for x, y in skel.cells():
            d = dm.distance[y, x]
            near = [(ox, oy) for ox, oy in obst
                    if math.hypot(x - ox, y - oy) <= d + math.sqrt(2) + 1e-9]
            assert any(
                max(abs(a[0] - b[0]), abs(a[1] - b[1])) > 1
                for i, a in enumerate(near) for b in near[i + 1:]
            )


def chain_cells(n, y=0):
    return [(x, y) for x in range(n)]


class TestPruneSpurs:
    def test_loop_unchanged(self):
        loop = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
        skel = skeleton_from_cells(loop)
        out = prune_spurs(skel, 5)
        assert out.cells() == set(loop)

    def test_branch_removed_main_kept(self):
        main = [(i, i) for i in range(20)]  # diagonal chain, each degree 2
        branch = [(11, 9), (12, 8)]  # hangs off (10, 10) by one diagonal link
        skel = skeleton_from_cells(main + branch)
        out = prune_spurs(skel, 5)
        assert out.cells() == set(main)

    def test_short_isolated_component_removed(self):
        skel = skeleton_from_cells(chain_cells(3))
        out = prune_spurs(skel, 5)
        assert out.cells() == set()

    def test_long_chain_kept(self):
        skel = skeleton_from_cells(chain_cells(10))
        out = prune_spurs(skel, 5)
        assert out.cells() == set(chain_cells(10))

    def test_never_disconnects(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            cells = {(int(x), int(y)) for x, y in rng.integers(0, 12, size=(40, 2))}
            skel = skeleton_from_cells(cells)
            out = prune_spurs(skel, 4)
            before = _components(cells)
            after = _components(out.cells())
            # surviving cells must not split a component they belonged to
            for comp in before:
                survivors = comp & out.cells()
                if survivors:
                    sub = [c for c in after if c <= comp and c & survivors]
                    joined = set().union(*sub) if sub else set()
                    assert survivors <= joined
                    assert len(sub) <= 1


def _components(cells):
    cells = set(cells)
    comps = []
    left = set(cells)
    while left:
        seed = left.pop()
        comp = {seed}
        frontier = [seed]
        while frontier:
            x, y = frontier.pop()
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    n = (x + dx, y + dy)
                    if n in left:
                        left.remove(n)
                        comp.add(n)
                        frontier.append(n)
        comps.append(comp)
    return comps


class TestDesignateNodes:
    def test_straight_chain_endpoints(self):
        skel = skeleton_from_cells(chain_cells(8))
        out = designate_nodes(skel)
        nodes = {c for c, k in out.kinds.items() if k == NODE}
        assert nodes == {(0, 0), (7, 0)}

    def test_plus_center_is_node(self):
        arms = [(2, 0), (2, 1), (2, 2), (2, 3), (2, 4), (0, 2), (1, 2), (3, 2), (4, 2)]
        out = designate_nodes(skeleton_from_cells(arms))
        assert out.kinds[(2, 2)] == NODE

    def test_no_orthogonally_adjacent_nodes(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            cells = {(int(x), int(y)) for x, y in rng.integers(0, 10, size=(30, 2))}
            out = designate_nodes(skeleton_from_cells(cells))
            nodes = {c for c, k in out.kinds.items() if k == NODE}
            for x, y in nodes:
                for dx, dy in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
                    assert (x + dx, y + dy) not in nodes

    def test_adjacent_qualifiers_first_row_major_wins(self):
        # Two corner cells side by side: (0,0)-(1,0) plus separated tails make
        # both qualify; only the first in row-major order may be marked.
        cells = [(0, 0), (1, 0), (0, 1), (1, 1), (0, 2), (1, 2)]
        # (0,0) has orthogonal neighbors (1,0) and (0,1): not a corner.
        # Use an explicit pair of qualifying cells instead:
        cells = [(0, 0), (1, 0), (2, 0), (3, 0), (1, 1), (2, 1)]
        out = designate_nodes(skeleton_from_cells(cells))
        nodes = {c for c, k in out.kinds.items() if k == NODE}
        for x, y in nodes:
            for dx, dy in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
                assert (x + dx, y + dy) not in nodes

    def test_diagonal_staircase_flagged(self):
        # Literal corner rule: staircase tips have no orthogonal neighbor,
        # so a pure diagonal chain designates no nodes at all.
        stairs = [(i, i) for i in range(6)]
        out = designate_nodes(skeleton_from_cells(stairs))
        assert all(k == EDGE for k in out.kinds.values())


class TestFloodFill:
    def test_assignment_minimal_hops(self):
        cells = set(chain_cells(11))
        node_ids = {(0, 0): 0, (10, 0): 1}
        got = flood_fill(cells, node_ids)
        # all-pairs BFS oracle
        for cell in cells:
            hops_to = {}
            for nc, nid in node_ids.items():
                frontier = {nc}
                seen = {nc}
                h = 0
                while cell not in seen:
                    nxt = set()
                    for x, y in frontier:
                        for dx in (-1, 0, 1):
                            for dy in (-1, 0, 1):
                                n = (x + dx, y + dy)
                                if n in cells and n not in seen:
                                    nxt.add(n)
                                    seen.add(n)
                    frontier = nxt
                    h += 1
                hops_to[nid] = h if cell != nc else 0
            want = min((h, nid) for nid, h in hops_to.items())
            assert got[cell] == want

    def test_every_cell_assigned_once(self):
        cells = set(chain_cells(9)) | {(4, 1), (4, 2)}
        got = flood_fill(cells, {(0, 0): 0, (8, 0): 1})
        assert set(got) == cells

    def test_tie_to_lower_node_id(self):
        cells = set(chain_cells(5))
        got = flood_fill(cells, {(0, 0): 1, (4, 0): 0})
        assert got[(2, 0)] == (2, 0)


class TestRefineGraph:
    CFG = PlaceConfig(resolution=1.0, deviation_threshold=2.0,
                      max_edge_length=50, max_refine_iterations=10)

    def straight(self, n=10):
        cells = chain_cells(n)
        return skeleton_from_cells(
            cells, kinds={cells[0]: NODE, cells[-1]: NODE})

    def test_short_straight_chain_untouched(self):
        g = refine_graph(self.straight(10), self.CFG, terrain="t")
        assert len(g.nodes) == 2
        assert len(g.edges) == 1
        assert g.edges[0].chain_cells == 10

    def test_midpoint_promotion_fixpoint(self):
        cfg = PlaceConfig(resolution=1.0, deviation_threshold=2.0,
                          max_edge_length=4, max_refine_iterations=10)
        g = refine_graph(self.straight(10), cfg, terrain="t")
        xs = sorted(n.cell[0] for n in g.nodes)
        assert xs == [0, 3, 5, 7, 9]
        assert len(g.edges) == 4
        assert all(e.chain_cells <= 4 for e in g.edges)

    def test_l_chain_corner_promoted(self):
        cells = [(x, 0) for x in range(6)] + [(5, y) for y in range(1, 6)]
        skel = skeleton_from_cells(cells, kinds={(0, 0): NODE, (5, 5): NODE})
        cfg = PlaceConfig(resolution=1.0, deviation_threshold=1.0,
                          max_edge_length=50, max_refine_iterations=10)
        g = refine_graph(skel, cfg, terrain="t")
        cells_of_nodes = {n.cell for n in g.nodes}
        assert (5, 0) in cells_of_nodes  # the corner has max deviation

    def test_zero_nodes_rejected(self):
        skel = skeleton_from_cells(chain_cells(5))
        with pytest.raises(NoNodesError):
            refine_graph(skel, self.CFG)

    def test_fixpoint_satisfies_constraints(self):
        rng = np.random.default_rng(0)
        # random monotone staircase-ish chains with ortho steps
        cells = [(0, 0)]
        for _ in range(40):
            x, y = cells[-1]
            if rng.random() < 0.3:
                cells.append((x, y + 1))
            else:
                cells.append((x + 1, y))
        cells = list(dict.fromkeys(cells))
        skel = skeleton_from_cells(cells,
                                   kinds={cells[0]: NODE, cells[-1]: NODE})
        cfg = PlaceConfig(resolution=1.0, deviation_threshold=2.0,
                          max_edge_length=12, max_refine_iterations=20)
        g = refine_graph(skel, cfg, terrain="t")
        from tsg.places import _chains, _segment_distance

        node_ids = {n.cell: n.id for n in g.nodes}
        for a, b, chain in _chains({c: (NODE if c in node_ids else EDGE)
                                    for c in cells}, node_ids):
            pa = np.array(chain[0], dtype=float)
            pb = np.array(chain[-1], dtype=float)
            assert len(chain) <= cfg.max_edge_length
            for c in chain:
                assert _segment_distance(np.array(c, dtype=float), pa, pb) \
                    <= cfg.deviation_threshold + 1e-12

    def test_clearance_and_world_position(self):
        skel = self.straight(6)
        skel.origin = np.array([10.0, 20.0])
        skel.resolution = 0.5
        skel.clearance = {c: 4.0 for c in skel.kinds}
        g = refine_graph(skel, self.CFG, terrain="t")
        n0 = [n for n in g.nodes if n.cell == (0, 0)][0]
        np.testing.assert_allclose(n0.position, [10.25, 20.25])
        assert n0.clearance == pytest.approx(2.0)


def dense_strip(x0, x1, y0, y1, step=0.2):
    xs = np.arange(x0 + step / 2, x1, step)
    ys = np.arange(y0 + step / 2, y1, step)
    return [(x, y) for x in xs for y in ys]


class TestBuildPlaces:
    CFG = PlaceConfig(resolution=0.25, morph_radius=1, min_clearance=1.0,
                      spur_length=5, deviation_threshold=2.0,
                      max_edge_length=20, max_refine_iterations=10)

    def test_sidewalk_strip_centerline(self):
        cloud, labels = cloud_xy(dense_strip(0, 20, 0, 4))
        g = build_places(cloud, labels, "grass", self.CFG)
        assert g.nodes
        for n in g.nodes:
            assert abs(n.clearance - 2.0) <= self.CFG.resolution + 1e-9
            assert abs(n.position[1] - 2.0) <= 2 * self.CFG.resolution

    def test_disjoint_patches_disconnected(self):
        pts = dense_strip(0, 4, 0, 4) + dense_strip(20, 24, 0, 4)
        cloud, labels = cloud_xy(pts)
        g = build_places(cloud, labels, "grass", self.CFG)
        ids = {n.id for n in g.nodes}
        parent = {i: i for i in ids}

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for e in g.edges:
            parent[find(e.a)] = find(e.b)
        assert len({find(i) for i in ids}) >= 2

    def test_t_intersection_has_junction_node(self):
        pts = dense_strip(0, 20, 8, 12) + dense_strip(8, 12, 0, 8)
        cloud, labels = cloud_xy(pts)
        g = build_places(cloud, labels, "grass", self.CFG)
        degree = {n.id: 0 for n in g.nodes}
        for e in g.edges:
            degree[e.a] += 1
            degree[e.b] += 1
        assert max(degree.values()) >= 3

    def test_deterministic(self):
        pts = dense_strip(0, 10, 0, 4) + dense_strip(4, 8, 4, 10)
        cloud, labels = cloud_xy(pts)
        a = build_places(cloud, labels, "grass", self.CFG)
        b = build_places(cloud, labels, "grass", self.CFG)
        assert [(n.id, n.cell, n.clearance) for n in a.nodes] == \
            [(n.id, n.cell, n.clearance) for n in b.nodes]
        assert [(e.a, e.b, e.chain_cells) for e in a.edges] == \
            [(e.a, e.b, e.chain_cells) for e in b.edges]

    def test_translation_invariance(self):
        pts = dense_strip(0, 12, 0, 4)
        shift = np.array([113.7, -41.3])
        cloud_a, labels = cloud_xy(pts)
        cloud_b, _ = cloud_xy([(x + shift[0], y + shift[1]) for x, y in pts])
        ga = build_places(cloud_a, labels, "grass", self.CFG)
        gb = build_places(cloud_b, labels, "grass", self.CFG)
        assert len(ga.nodes) == len(gb.nodes)
        for na, nb in zip(ga.nodes, gb.nodes):
            assert na.cell == nb.cell
            np.testing.assert_allclose(nb.position - na.position, shift,
                                       atol=self.CFG.resolution)


def obj_at(obj_id, x, y, label="car"):
    return ObjectNode(
        id=obj_id, label=label,
        aabb_min=np.array([x - 0.5, y - 0.5, 0.0]),
        aabb_max=np.array([x + 0.5, y + 0.5, 1.0]),
        members=frozenset({0}),
        embedding=hash_embedding(label, DIM),
    )


def place_graph(terrain, nodes_xy):
    nodes = [
        type("N", (), {})  # placeholder, replaced below
        for _ in nodes_xy
    ]
    from tsg.places import PlaceNode

    nodes = [PlaceNode(i, (i, 0), np.array(xy, dtype=float), 1.0)
             for i, xy in enumerate(nodes_xy)]
    return PlaceGraph(terrain=terrain, nodes=nodes, edges=[])


class TestAttachObjects:
    def test_single_node(self):
        out = attach_objects([place_graph("grass", [(0.0, 0.0)])],
                             [obj_at(0, 5.0, 5.0)])
        assert out == [(0, "grass", 0)]

    def test_nearest_wins(self):
        graphs = [
            place_graph("grass", [(100.0, 0.0), (101.0, 0.0)]),
            place_graph("sidewalk", [(1.0, 1.0)]),
        ]
        out = attach_objects(graphs, [obj_at(0, 1.0, 1.2)])
        assert out == [(0, "sidewalk", 0)]

    def test_tie_lexicographic(self):
        graphs = [
            place_graph("b", [(1.0, 0.0)]),
            place_graph("a", [(-1.0, 0.0)]),
        ]
        out = attach_objects(graphs, [obj_at(0, 0.0, 0.0)])
        assert out == [(0, "a", 0)]

    def test_no_nodes_rejected(self):
        with pytest.raises(ValueError):
            attach_objects([PlaceGraph(terrain="x")], [obj_at(0, 0, 0)])
