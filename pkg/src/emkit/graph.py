"""Compact graph engine: sorted vertex ids, an offset array, one packed edge array.

For ``V`` vertices and ``E`` stored adjacency entries the graph holds
``vertex_ids`` (V), ``offsets`` (V + 1, ``offsets[0] == 0``) and ``edges``
(E), all int64.  The neighbours of the i-th vertex are
``edges[offsets[i]:offsets[i + 1]]``, strictly ascending.  Undirected edges
are stored once in each endpoint's range.

No V x V structure is ever allocated; common-neighbour counts come from a
merge scan of two sorted ranges.

Binary file layout (all fields little-endian 64-bit)::

    magic        8 bytes  b"EMKGRAPH"
    version      u64      1
    V            u64
    E            u64
    flags        u64      bit 0: node props present, bit 1: edge props present
    vertex_ids   V   x i64
    offsets      V+1 x i64
    edges        E   x i64
    [node props] V x u64 record lengths, then the records back to back
    [edge props] E x u64 record lengths, then the records back to back
"""

from __future__ import annotations

import struct
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _cc

from emkit.errors import FormatError, InvalidParameterError, UnknownVertexError
from emkit.fsutil import atomic_write

MAGIC = b"EMKGRAPH"
VERSION = 1
_HEADER = struct.Struct("<8sQQQQ")
_NODE_PROPS = 1
_EDGE_PROPS = 2

CONNECTIVITIES = (6, 18, 26)


def _readonly(arr):
    arr = np.array(arr, dtype=np.int64, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


def _as_records(props):
    return tuple(bytes(p) for p in props)


class CompactGraph:
    """Immutable undirected graph in offset-array form."""

    __slots__ = ("vertex_ids", "offsets", "edges", "node_props", "edge_props", "_ev")

    def __init__(self, vertex_ids, offsets, edges, node_props=None, edge_props=None):
        self.vertex_ids = _readonly(vertex_ids)
        self.offsets = _readonly(offsets)
        self.edges = _readonly(edges)
        self.node_props = None if node_props is None else _as_records(node_props)
        self.edge_props = None if edge_props is None else _as_records(edge_props)
        if len(self.offsets) != len(self.vertex_ids) + 1:
            raise FormatError(
                f"offsets has {len(self.offsets)} entries for {len(self.vertex_ids)} vertices"
            )
        if self.node_props is not None and len(self.node_props) != self.vertex_count:
            raise InvalidParameterError(
                f"{len(self.node_props)} node records for {self.vertex_count} vertices"
            )
        if self.edge_props is not None and len(self.edge_props) != self.slot_count:
            raise InvalidParameterError(
                f"{len(self.edge_props)} edge records for {self.slot_count} edge slots"
            )
        # memoryview indexing yields plain ints, which keeps the merge scan cheap
        self._ev = memoryview(self.edges).cast("B").cast("q") if len(self.edges) else ()

    @classmethod
    def empty(cls):
        return cls(np.empty(0, np.int64), np.zeros(1, np.int64), np.empty(0, np.int64))

    @property
    def vertex_count(self):
        return len(self.vertex_ids)

    @property
    def slot_count(self):
        """Stored adjacency entries (each undirected edge counts twice)."""
        return len(self.edges)

    @property
    def edge_count(self):
        return self.slot_count // 2

    def index_of(self, v):
        i = int(np.searchsorted(self.vertex_ids, v))
        if i == len(self.vertex_ids) or self.vertex_ids[i] != v:
            raise UnknownVertexError(v)
        return i

    def __contains__(self, v):
        i = int(np.searchsorted(self.vertex_ids, v))
        return i < len(self.vertex_ids) and self.vertex_ids[i] == v

    def _range(self, v):
        i = self.index_of(v)
        return int(self.offsets[i]), int(self.offsets[i + 1])

    def neighbors(self, v):
        lo, hi = self._range(v)
        return self.edges[lo:hi]

    def degree(self, v):
        lo, hi = self._range(v)
        return hi - lo

    def degrees(self):
        return np.diff(self.offsets)

    def dot_product(self, u, v):
        """Number of common neighbours of ``u`` and ``v``.

        Walks both sorted neighbour ranges together, advancing the smaller
        side and counting matches.
        """
        i, i_end = self._range(u)
        j, j_end = self._range(v)
        ev = self._ev
        count = 0
        while i < i_end and j < j_end:
            a = ev[i]
            b = ev[j]
            if a < b:
                i += 1
            elif b < a:
                j += 1
            else:
                count += 1
                i += 1
                j += 1
        return count

    def memory_footprint(self):
        """Stored slots: ``#edges + 2 * #vertices`` (edges counted as adjacency entries)."""
        return self.slot_count + 2 * self.vertex_count

    def edge_slot(self, u, w):
        lo, hi = self._range(u)
        k = lo + int(np.searchsorted(self.edges[lo:hi], w))
        if k == hi or self.edges[k] != w:
            raise UnknownVertexError((u, w))
        return k

    def node_prop(self, v):
        if self.node_props is None:
            raise LookupError("graph has no node properties")
        return self.node_props[self.index_of(v)]

    def edge_prop(self, slot):
        if self.edge_props is None:
            raise LookupError("graph has no edge properties")
        return self.edge_props[slot]

    def attach_node_props(self, props):
        props = list(props)
        if len(props) != self.vertex_count:
            raise InvalidParameterError(
                f"{len(props)} node records for {self.vertex_count} vertices"
            )
        return CompactGraph(self.vertex_ids, self.offsets, self.edges, props, self.edge_props)

    def attach_edge_props(self, props):
        props = list(props)
        if len(props) != self.slot_count:
            raise InvalidParameterError(
                f"{len(props)} edge records for {self.slot_count} edge slots"
            )
        return CompactGraph(self.vertex_ids, self.offsets, self.edges, self.node_props, props)

    def iter_edges(self):
        """Each undirected edge once, as ``(u, w)`` with ``u < w``."""
        src = np.repeat(self.vertex_ids, self.degrees())
        keep = src < self.edges
        return zip(src[keep].tolist(), self.edges[keep].tolist())

    def check_invariants(self):
        """Raise ``FormatError`` unless every structural invariant holds."""
        ids, off, edges = self.vertex_ids, self.offsets, self.edges
        if off[0] != 0 or off[-1] != len(edges):
            raise FormatError("offsets must start at 0 and end at the slot count")
        if np.any(np.diff(off) < 0):
            raise FormatError("offsets must be nondecreasing")
        if np.any(np.diff(ids) <= 0):
            raise FormatError("vertex ids must be strictly ascending")
        if len(edges) == 0:
            return
        src = np.repeat(ids, np.diff(off))
        # within-range strict ascent: consecutive slots of one source must increase
        same = src[1:] == src[:-1]
        if np.any(edges[1:][same] <= edges[:-1][same]):
            raise FormatError("neighbour ranges must be strictly ascending")
        if np.any(src == edges):
            raise FormatError("self-loop present")
        pos = np.searchsorted(ids, edges)
        if np.any(pos >= len(ids)) or np.any(ids[np.minimum(pos, len(ids) - 1)] != edges):
            raise FormatError("edge endpoint is not a vertex")
        fwd = np.stack([src, edges], axis=1)
        rev = np.stack([edges, src], axis=1)
        order = np.lexsort((rev[:, 1], rev[:, 0]))
        if not np.array_equal(fwd, rev[order]):
            raise FormatError("adjacency is not symmetric")

    def __eq__(self, other):
        if not isinstance(other, CompactGraph):
            return NotImplemented
        return (
            np.array_equal(self.vertex_ids, other.vertex_ids)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.edges, other.edges)
            and self.node_props == other.node_props
            and self.edge_props == other.edge_props
        )

    __hash__ = None

    def __repr__(self):
        return f"CompactGraph(V={self.vertex_count}, E_slots={self.slot_count})"


def _from_pairs(pairs, vertices=None):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    both = np.concatenate([pairs, pairs[:, ::-1]])
    if len(both):
        both = np.unique(both, axis=0)  # lexicographic (src, dst), duplicates collapsed
    ids = np.unique(both[:, 0]) if vertices is None else np.unique(np.asarray(vertices, np.int64))
    if vertices is not None and len(both):
        ids = np.union1d(ids, both[:, 0])
    src_idx = np.searchsorted(ids, both[:, 0])
    offsets = np.zeros(len(ids) + 1, dtype=np.int64)
    np.cumsum(np.bincount(src_idx, minlength=len(ids)), out=offsets[1:])
    return CompactGraph(ids, offsets, both[:, 1].copy())


def build_from_edge_list(pairs):
    """Undirected graph over the distinct endpoints of ``pairs``.

    Self-loops are dropped and repeated edges (in either direction) collapse
    to one.  A vertex that only appears in self-loops is not kept.
    """
    if isinstance(pairs, Sequence) and len(pairs) == 0:
        return CompactGraph.empty()
    return _from_pairs(pairs)


def stencil(connectivity):
    """Half of the neighbourhood offsets ``(dz, dy, dx)``; the other half is implied."""
    if connectivity not in CONNECTIVITIES:
        raise InvalidParameterError(f"connectivity must be one of {CONNECTIVITIES}, got {connectivity!r}")
    max_l1 = {6: 1, 18: 2, 26: 3}[connectivity]
    out = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                d = (dz, dy, dx)
                if d > (0, 0, 0) and abs(dz) + abs(dy) + abs(dx) <= max_l1:
                    out.append(d)
    return out


def _shifted(n, d):
    """Source and target slices along one axis for offset ``d``."""
    if d >= 0:
        return slice(0, n - d), slice(d, n)
    return slice(-d, n), slice(0, n + d)


def build_from_binary_volume(b, connectivity=6):
    """One vertex per foreground voxel (id = flat voxel index), edges per the stencil."""
    offsets = stencil(connectivity)
    mask = b.as_array()
    nz, ny, nx = mask.shape
    flat = np.arange(mask.size, dtype=np.int64).reshape(mask.shape)
    chunks = []
    for dz, dy, dx in offsets:
        sz, tz = _shifted(nz, dz)
        sy, ty = _shifted(ny, dy)
        sx, tx = _shifted(nx, dx)
        hit = mask[sz, sy, sx] & mask[tz, ty, tx]
        if hit.any():
            chunks.append(np.stack([flat[sz, sy, sx][hit], flat[tz, ty, tx][hit]], axis=1))
    pairs = np.concatenate(chunks) if chunks else np.empty((0, 2), np.int64)
    vertices = np.flatnonzero(mask.reshape(-1))
    if len(vertices) == 0:
        return CompactGraph.empty()
    return _from_pairs(pairs, vertices=vertices)


def connected_components(g):
    """Component label per entry of ``g.vertex_ids``.

    Labels are dense ``0..C-1`` and ordered by each component's smallest
    vertex id.
    """
    n = g.vertex_count
    if n == 0:
        return np.empty(0, dtype=np.int64)
    cols = np.searchsorted(g.vertex_ids, g.edges)
    adj = csr_matrix((np.ones(len(cols), dtype=np.int8), cols, g.offsets), shape=(n, n))
    _, raw = _cc(adj, directed=False)
    # vertex_ids ascend, so a label's first position is its smallest member
    _, first = np.unique(raw, return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[raw]


def component_sizes(labels):
    if len(labels) == 0:
        return np.empty(0, dtype=np.int64)
    return np.bincount(labels)


# ------------------------------------------------------------------ file IO


def _encode_props(records):
    lengths = np.array([len(r) for r in records], dtype="<u8")
    return lengths.tobytes() + b"".join(records)


def dumps(g):
    flags = (_NODE_PROPS if g.node_props is not None else 0) | (
        _EDGE_PROPS if g.edge_props is not None else 0
    )
    parts = [
        _HEADER.pack(MAGIC, VERSION, g.vertex_count, g.slot_count, flags),
        g.vertex_ids.astype("<i8").tobytes(),
        g.offsets.astype("<i8").tobytes(),
        g.edges.astype("<i8").tobytes(),
    ]
    if g.node_props is not None:
        parts.append(_encode_props(g.node_props))
    if g.edge_props is not None:
        parts.append(_encode_props(g.edge_props))
    return b"".join(parts)


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if n < 0 or self.pos + n > len(self.blob):
            raise FormatError(f"truncated while reading {what}", self.path)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def array(self, count, dtype, what):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(count * dt.itemsize, what), dtype=dt)

    def props(self, count, what):
        lengths = self.array(count, "<u8", f"{what} lengths").tolist()
        return [self.take(n, what) for n in lengths]


def loads(blob, path=None):
    r = _Reader(blob, path)
    magic, version, nv, ne, flags = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", path)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", path)
    if nv > len(blob) or ne > len(blob):
        raise FormatError("section lengths exceed file size", path)
    ids = r.array(nv, "<i8", "vertex_ids").astype(np.int64)
    off = r.array(nv + 1, "<i8", "offsets").astype(np.int64)
    edges = r.array(ne, "<i8", "edges").astype(np.int64)
    node_props = r.props(nv, "node props") if flags & _NODE_PROPS else None
    edge_props = r.props(ne, "edge props") if flags & _EDGE_PROPS else None
    if r.pos != len(blob):
        raise FormatError(f"{len(blob) - r.pos} trailing bytes", path)
    g = CompactGraph(ids, off, edges, node_props, edge_props)
    g.check_invariants()
    return g


def save(g, path):
    with atomic_write(path) as fh:
        fh.write(dumps(g))


def load(path):
    path = Path(path)
    return loads(path.read_bytes(), path)
