import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emkit.errors import FormatError, InvalidParameterError, UnknownVertexError
from emkit.gradient import BinaryVolume
from emkit.graph import (
    CompactGraph,
    build_from_binary_volume,
    build_from_edge_list,
    component_sizes,
    connected_components,
    dumps,
    load,
    loads,
    save,
    stencil,
)
from emkit.volume import Extent3D
from oracles import adjacency_sets, bfs_labels, matrix_dot, stencil_pairs

PATH = [(0, 1), (1, 2)]
TRIANGLE = [(0, 1), (1, 2), (2, 0)]

edge_lists = st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40)), max_size=120)


def random_pairs(rng, nv, density):
    pairs = []
    for u in range(nv):
        for v in range(u + 1, nv):
            if rng.random() < density:
                pairs.append((u, v) if rng.random() < 0.5 else (v, u))
    return pairs


class TestBuild:
    def test_path(self):
        g = build_from_edge_list(PATH)
        assert (g.vertex_count, g.slot_count) == (3, 4)
        assert g.neighbors(1).tolist() == [0, 2]
        assert g.offsets.tolist() == [0, 1, 3, 4]
        assert g.edges.tolist() == [1, 0, 2, 1]
        assert adjacency_sets(PATH)[1] == {0, 2}

    def test_empty(self):
        g = build_from_edge_list([])
        assert (g.vertex_count, g.slot_count) == (0, 0)
        assert g.offsets.tolist() == [0]

    def test_dirty_input(self):
        g = build_from_edge_list([(5, 5), (1, 2), (2, 1)])
        assert (g.vertex_count, g.slot_count) == (2, 2)
        assert 5 not in g

    def test_sparse_large_ids(self):
        g = build_from_edge_list([(10**12, 3), (3, 2**62)])
        assert g.vertex_ids.tolist() == [3, 10**12, 2**62]
        assert g.neighbors(3).tolist() == [10**12, 2**62]

    @given(edge_lists)
    def test_invariants_and_oracle(self, pairs):
        g = build_from_edge_list(pairs)
        g.check_invariants()
        adj = adjacency_sets(pairs)
        assert g.vertex_ids.tolist() == sorted(adj)
        for v, nbrs in adj.items():
            assert g.neighbors(v).tolist() == sorted(nbrs)
        assert g.memory_footprint() == len(g.edges) + 2 * len(g.vertex_ids)

    def test_immutable(self):
        g = build_from_edge_list(PATH)
        with pytest.raises(ValueError):
            g.edges[0] = 7


class TestQueries:
    def test_degree_path_triangle(self):
        assert build_from_edge_list(PATH).degree(1) == 2
        t = build_from_edge_list(TRIANGLE)
        assert [t.degree(v) for v in (0, 1, 2)] == [2, 2, 2]

    def test_unknown_vertex(self):
        g = build_from_edge_list(PATH)
        with pytest.raises(UnknownVertexError):
            g.neighbors(3)
        with pytest.raises(UnknownVertexError):
            g.degree(-1)
        with pytest.raises(UnknownVertexError):
            g.dot_product(0, 99)

    def test_dot_example(self):
        # N(u) = {1,2,3}, N(v) = {2,3,5}
        g = build_from_edge_list([(10, 1), (10, 2), (10, 3), (20, 2), (20, 3), (20, 5)])
        assert g.dot_product(10, 20) == 2
        assert matrix_dot(adjacency_sets(g.iter_edges()), 10, 20) == 2

    def test_dot_self_is_degree(self):
        g = build_from_edge_list(TRIANGLE + [(2, 3)])
        for v in g.vertex_ids.tolist():
            assert g.dot_product(v, v) == g.degree(v)

    def test_dot_disjoint(self):
        g = build_from_edge_list([(0, 1), (2, 3)])
        assert g.dot_product(0, 2) == 0

    @given(edge_lists)
    def test_dot_matches_matrix(self, pairs):
        g = build_from_edge_list(pairs)
        adj = adjacency_sets(pairs)
        for u in adj:
            for v in adj:
                assert g.dot_product(u, v) == matrix_dot(adj, u, v) == g.dot_product(v, u)

    @pytest.mark.parametrize("pairs, expected", [(PATH, 10), ([], 0), (TRIANGLE, 12)])
    def test_memory_footprint(self, pairs, expected):
        assert build_from_edge_list(pairs).memory_footprint() == expected


class TestProps:
    def test_node_props(self):
        g = build_from_edge_list(PATH).attach_node_props([b"a", b"bb", b"ccc"])
        assert g.node_prop(1) == b"bb"
        assert g.edges.tolist() == build_from_edge_list(PATH).edges.tolist()

    def test_node_props_length(self):
        with pytest.raises(InvalidParameterError):
            build_from_edge_list(PATH).attach_node_props([b"a", b"b"])

    def test_edge_props(self):
        g = build_from_edge_list(PATH).attach_edge_props([b"%d" % i for i in range(4)])
        assert len(g.edge_props) == 4
        assert g.edge_prop(g.edge_slot(1, 2)) == b"2"

    def test_edge_props_length(self):
        with pytest.raises(InvalidParameterError):
            build_from_edge_list(PATH).attach_edge_props([b""] * 3)

    def test_missing_props(self):
        with pytest.raises(LookupError):
            build_from_edge_list(PATH).node_prop(0)


def mask_volume(shape, coords):
    nz, ny, nx = shape
    bits = np.zeros(shape, bool)
    for z, y, x in coords:
        bits[z, y, x] = True
    return BinaryVolume(Extent3D.from_shape(nx, ny, nz), bits)


class TestFromVolume:
    def test_adjacent_x(self):
        b = mask_volume((1, 1, 2), [(0, 0, 0), (0, 0, 1)])
        g = build_from_binary_volume(b, 6)
        assert (g.vertex_count, g.slot_count) == (2, 2)

    def test_diagonal_xy(self):
        b = mask_volume((1, 2, 2), [(0, 0, 0), (0, 1, 1)])
        assert build_from_binary_volume(b, 6).slot_count == 0
        assert build_from_binary_volume(b, 6).vertex_count == 2
        assert build_from_binary_volume(b, 18).slot_count == 2

    def test_body_diagonal_needs_26(self):
        b = mask_volume((2, 2, 2), [(0, 0, 0), (1, 1, 1)])
        assert [build_from_binary_volume(b, c).slot_count for c in (6, 18, 26)] == [0, 0, 2]

    def test_all_background(self):
        g = build_from_binary_volume(mask_volume((3, 3, 3), []), 26)
        assert g.vertex_count == 0 and g.slot_count == 0

    def test_bad_connectivity(self):
        with pytest.raises(InvalidParameterError):
            build_from_binary_volume(mask_volume((1, 1, 1), [(0, 0, 0)]), 8)

    def test_stencil_sizes(self):
        assert [len(stencil(c)) for c in (6, 18, 26)] == [3, 9, 13]

    @settings(max_examples=40)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1),
           st.floats(0, 1))
    def test_matches_stencil_oracle(self, nx, ny, nz, seed, density):
        rng = np.random.default_rng(seed)
        bits = rng.random(nx * ny * nz) < density
        b = BinaryVolume(Extent3D.from_shape(nx, ny, nz), bits)
        counts = []
        for c in (6, 18, 26):
            g = build_from_binary_volume(b, c)
            g.check_invariants()
            assert g.vertex_count == int(bits.sum())
            assert g.vertex_ids.tolist() == np.flatnonzero(bits).tolist()
            assert set(g.iter_edges()) == stencil_pairs(bits.tolist(), (nz, ny, nx), c)
            counts.append(g.slot_count)
        assert counts[0] <= counts[1] <= counts[2]

    def test_deterministic(self, rng):
        bits = rng.random(6 * 6 * 6) < 0.4
        b = BinaryVolume(Extent3D.from_shape(6, 6, 6), bits)
        assert build_from_binary_volume(b, 18) == build_from_binary_volume(b, 18)


class TestComponents:
    def test_path_plus_pair(self):
        g = build_from_edge_list(PATH + [(7, 8)])
        assert connected_components(g).tolist() == [0, 0, 0, 1, 1]

    def test_empty(self):
        labels = connected_components(build_from_edge_list([]))
        assert len(labels) == 0 and len(component_sizes(labels)) == 0

    def test_triangle(self):
        assert set(connected_components(build_from_edge_list(TRIANGLE)).tolist()) == {0}

    def test_label_order_by_smallest_id(self):
        g = build_from_edge_list([(50, 51), (3, 90), (10, 11)])
        labels = dict(zip(g.vertex_ids.tolist(), connected_components(g).tolist()))
        assert labels == {3: 0, 90: 0, 10: 1, 11: 1, 50: 2, 51: 2}

    @given(edge_lists)
    def test_matches_bfs(self, pairs):
        g = build_from_edge_list(pairs)
        expect = bfs_labels(adjacency_sets(pairs))
        got = dict(zip(g.vertex_ids.tolist(), connected_components(g).tolist()))
        assert got == expect


class TestSaveLoad:
    def test_round_trip_with_props(self, tmp_path):
        g = build_from_edge_list(TRIANGLE).attach_node_props([b"x", b"", b"\x00\xff"])
        g = g.attach_edge_props([bytes([i]) * i for i in range(6)])
        save(g, tmp_path / "g.bin")
        assert load(tmp_path / "g.bin") == g

    def test_empty_round_trip(self, tmp_path):
        save(CompactGraph.empty(), tmp_path / "e.bin")
        h = load(tmp_path / "e.bin")
        assert h == CompactGraph.empty() and h.vertex_count == 0

    def test_layout(self):
        blob = dumps(build_from_edge_list(PATH))
        assert blob[:8] == b"EMKGRAPH"
        assert len(blob) == 8 + 4 * 8 + (3 + 4 + 4) * 8

    def test_truncated(self):
        blob = dumps(build_from_edge_list(PATH))
        for cut in (3, 20, len(blob) - 1):
            with pytest.raises(FormatError):
                loads(blob[:cut])

    def test_bad_magic(self):
        blob = dumps(build_from_edge_list(PATH))
        with pytest.raises(FormatError):
            loads(b"NOTGRAPH" + blob[8:])

    def test_trailing_garbage(self):
        with pytest.raises(FormatError):
            loads(dumps(build_from_edge_list(PATH)) + b"\x00")

    def test_corrupt_adjacency_rejected(self):
        g = build_from_edge_list(PATH)
        bad = CompactGraph(g.vertex_ids, g.offsets, [1, 0, 2, 0])
        with pytest.raises(FormatError):
            loads(dumps(bad))

    @given(edge_lists, st.booleans())
    def test_round_trip_property(self, pairs, with_props):
        g = build_from_edge_list(pairs)
        if with_props:
            g = g.attach_node_props([b"n%d" % v for v in g.vertex_ids.tolist()])
            g = g.attach_edge_props([b"e%d" % i for i in range(g.slot_count)])
        assert loads(dumps(g)) == g
