"""Graph containers, sensitive-group bookkeeping, splitting and pair enumeration.

Nodes are dense 0-based indices. Edges are unordered pairs stored canonically
(i < j, lexicographically sorted, no duplicates, no self-loops). Bipartite
graphs carry a per-node side array, in which case only cross-side pairs are
candidate pairs.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "Graph",
    "SensitivePartition",
    "PairUniverse",
    "DataSplit",
    "GraphError",
    "load_edge_list",
    "split",
    "enumerate_pairs",
    "edge_indicator",
    "pair_block_ids",
    "block_label",
]


class GraphError(ValueError):
    """Malformed graph input or an unsatisfiable request."""


def _edge_array(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError("edges must be an (m, 2) array of node pairs")
    return arr


@dataclass(eq=False)
class Graph:
    """Undirected graph without self-loops or duplicate edges.

    side, when present, assigns every node to one of two sides and every edge
    must cross sides. node_names optionally keeps the original string ids so
    reports can refer back to the source files.
    """

    n: int
    edges: np.ndarray
    side: np.ndarray | None = None
    node_names: list[str] | None = None
    _keys: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("graph needs at least one node")
        edges = _edge_array(self.edges)
        if len(edges):
            if edges.min() < 0 or edges.max() >= self.n:
                raise GraphError("edge endpoint out of range")
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            if np.any(lo == hi):
                raise GraphError("self-loops are not allowed")
            keys = lo * self.n + hi
            order = np.argsort(keys, kind="stable")
            edges = np.stack([lo[order], hi[order]], axis=1)
            keys = keys[order]
            if np.any(np.diff(keys) == 0):
                raise GraphError("duplicate edges are not allowed")
            self._keys = keys
        else:
            self._keys = np.zeros(0, dtype=np.int64)
        self.edges = edges
        if self.side is not None:
            side = np.asarray(self.side, dtype=np.int64)
            if side.shape != (self.n,) or not np.isin(side, (0, 1)).all():
                raise GraphError("side must assign 0 or 1 to every node")
            if len(edges) and np.any(side[edges[:, 0]] == side[edges[:, 1]]):
                raise GraphError("bipartite graph has an edge within one side")
            self.side = side

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def edge_keys(self) -> np.ndarray:
        """Packed i*n+j edge keys, ascending."""
        return self._keys

    def degrees(self) -> np.ndarray:
        deg = np.bincount(self.edges[:, 0], minlength=self.n)
        deg += np.bincount(self.edges[:, 1], minlength=self.n)
        return deg

    def has_edge(self, i: int, j: int) -> bool:
        lo, hi = (i, j) if i < j else (j, i)
        key = lo * self.n + hi
        pos = int(np.searchsorted(self._keys, key))
        return pos < len(self._keys) and self._keys[pos] == key


@dataclass(eq=False)
class SensitivePartition:
    """Assignment of every node to exactly one sensitive group."""

    group_of: np.ndarray
    labels: list[str]

    def __post_init__(self):
        g = np.asarray(self.group_of, dtype=np.int64)
        if g.ndim != 1 or g.size < 1:
            raise GraphError("group assignment must cover at least one node")
        k = len(self.labels)
        if k < 1 or g.min() < 0 or g.max() >= k:
            raise GraphError("group id out of range")
        counts = np.bincount(g, minlength=k)
        if np.any(counts == 0):
            empty = self.labels[int(np.flatnonzero(counts == 0)[0])]
            raise GraphError(f"sensitive group '{empty}' has no members")
        self.group_of = g

    @property
    def n_groups(self) -> int:
        return len(self.labels)

    def members(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.group_of == s)


@dataclass(eq=False)
class PairUniverse:
    """All candidate vertex pairs, indexed by unordered group-pair blocks.

    block_keys enumerates every unordered group pair (s, t), s <= t, in
    lexicographic order; block_sizes may contain zeros (e.g. same-side blocks
    of a bipartite graph). Pairs are stored with ascending packed keys so
    pair lookups are a binary search.
    """

    n: int
    row: np.ndarray
    col: np.ndarray
    block_of_pair: np.ndarray
    block_keys: list[tuple[int, int]]
    block_sizes: np.ndarray
    _keys: np.ndarray | None = field(init=False, repr=False, default=None)

    @property
    def size(self) -> int:
        return len(self.row)

    @property
    def keys(self) -> np.ndarray:
        if self._keys is None:
            self._keys = self.row * self.n + self.col
        return self._keys

    def pair_indices(self, pairs) -> np.ndarray:
        """Universe index of each given pair; raises if a pair is not a candidate."""
        pairs = _edge_array(pairs)
        if not len(pairs):
            return np.zeros(0, dtype=np.int64)
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        want = lo * self.n + hi
        pos = np.searchsorted(self.keys, want)
        pos_clip = np.minimum(pos, self.size - 1)
        if not np.all((pos < self.size) & (self.keys[pos_clip] == want)):
            raise GraphError("pair outside the candidate universe")
        return pos


@dataclass(eq=False)
class DataSplit:
    """Train graph plus held-out positive edges and matched non-edges."""

    train_graph: Graph
    test_pos: np.ndarray
    test_neg: np.ndarray
    seed: int


def enumerate_pairs(graph: Graph, partition: SensitivePartition) -> PairUniverse:
    """Enumerate candidate pairs (all unordered pairs, or cross-side for bipartite)."""
    if len(partition.group_of) != graph.n:
        raise GraphError("partition does not match the graph's node count")
    n = graph.n
    if graph.side is None:
        row, col = np.triu_indices(n, k=1)
        row = row.astype(np.int64)
        col = col.astype(np.int64)
    else:
        left = np.flatnonzero(graph.side == 0)
        right = np.flatnonzero(graph.side == 1)
        a = np.repeat(left, len(right))
        b = np.tile(right, len(left))
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        order = np.argsort(lo * n + hi, kind="stable")
        row, col = lo[order], hi[order]
    k = partition.n_groups
    block_keys = [(s, t) for s in range(k) for t in range(s, k)]
    lookup = np.zeros((k, k), dtype=np.int64)
    for idx, (s, t) in enumerate(block_keys):
        lookup[s, t] = idx
        lookup[t, s] = idx
    block = lookup[partition.group_of[row], partition.group_of[col]]
    sizes = np.bincount(block, minlength=len(block_keys))
    return PairUniverse(
        n=n, row=row, col=col, block_of_pair=block,
        block_keys=block_keys, block_sizes=sizes,
    )


def edge_indicator(graph: Graph, universe: PairUniverse) -> np.ndarray:
    """Boolean per-pair array marking the graph's edges within the universe."""
    ind = np.zeros(universe.size, dtype=bool)
    if graph.m:
        ind[universe.pair_indices(graph.edges)] = True
    return ind


def pair_block_ids(partition: SensitivePartition, pairs) -> np.ndarray:
    """Canonical group-block id (s*k + t with s <= t) for arbitrary pairs."""
    pairs = _edge_array(pairs)
    k = partition.n_groups
    a = partition.group_of[pairs[:, 0]]
    b = partition.group_of[pairs[:, 1]]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return lo * k + hi


def block_label(partition: SensitivePartition, block_id: int) -> str:
    s, t = divmod(int(block_id), partition.n_groups)
    return f"{partition.labels[s]}|{partition.labels[t]}"


def split(graph: Graph, test_frac: float, seed: int) -> DataSplit:
    """Hold out floor(test_frac * m) edges plus equally many uniform non-edges.

    An edge pick is rejected when it would strand one of its endpoints with no
    remaining train edge, so every node incident to a test pair stays covered
    by the train graph. Non-edges are sampled uniformly among covered nodes
    (cross-side only for bipartite graphs). Deterministic given the seed.
    """
    if not 0 < test_frac < 1:
        raise GraphError("test_frac must lie in (0, 1)")
    if graph.m < 2:
        raise GraphError("need at least two edges to split")
    target = int(test_frac * graph.m)
    rng = np.random.default_rng(seed)
    deg = graph.degrees()
    picked = np.zeros(graph.m, dtype=bool)
    n_picked = 0
    for e in rng.permutation(graph.m):
        if n_picked >= target:
            break
        i, j = graph.edges[e]
        if deg[i] > 1 and deg[j] > 1:
            picked[e] = True
            n_picked += 1
            deg[i] -= 1
            deg[j] -= 1
    if n_picked < target:
        raise GraphError(
            f"could not hold out {target} edges while keeping every test node "
            f"covered after {graph.m} attempts; use a smaller test_frac"
        )
    test_pos = graph.edges[picked]
    train_graph = Graph(
        n=graph.n, edges=graph.edges[~picked],
        side=graph.side, node_names=graph.node_names,
    )
    covered = deg > 0
    test_neg = _sample_non_edges(graph, covered, len(test_pos), rng)
    return DataSplit(train_graph=train_graph, test_pos=test_pos, test_neg=test_neg, seed=seed)


# below this many candidate pairs, non-edges are enumerated exactly instead of
# rejection-sampled
_ENUMERATE_LIMIT = 2_000_000


def _sample_non_edges(graph: Graph, covered: np.ndarray, k: int, rng) -> np.ndarray:
    n = graph.n
    if k == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if graph.side is None:
        cand = np.flatnonzero(covered)
        total = len(cand) * (len(cand) - 1) // 2
    else:
        cand0 = np.flatnonzero(covered & (graph.side == 0))
        cand1 = np.flatnonzero(covered & (graph.side == 1))
        total = len(cand0) * len(cand1)
    # nodes that lost all edges in the split never existed in any edge, so all
    # m edges lie inside the covered set and this count is exact
    available = total - graph.m
    if available < k:
        raise GraphError(
            f"only {max(available, 0)} candidate non-edges exist among covered "
            f"nodes but {k} are needed"
        )
    if total <= _ENUMERATE_LIMIT:
        if graph.side is None:
            ii, jj = np.triu_indices(len(cand), k=1)
            row, col = cand[ii], cand[jj]
        else:
            a = np.repeat(cand0, len(cand1))
            b = np.tile(cand1, len(cand0))
            row, col = np.minimum(a, b), np.maximum(a, b)
        keys = row * n + col
        pool = np.flatnonzero(~np.isin(keys, graph.edge_keys))
        chosen = np.sort(rng.choice(pool, size=k, replace=False))
        return np.stack([row[chosen], col[chosen]], axis=1).astype(np.int64)
    seen: set[int] = set()
    out: list[tuple[int, int]] = []
    for _ in range(1000):
        if len(out) >= k:
            break
        need = max(k - len(out), 256) * 2
        if graph.side is None:
            a = rng.choice(cand, size=need)
            b = rng.choice(cand, size=need)
            ok = a != b
            a, b = a[ok], b[ok]
        else:
            a = rng.choice(cand0, size=need)
            b = rng.choice(cand1, size=need)
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        keys = lo * n + hi
        fresh = ~np.isin(keys, graph.edge_keys)
        for key, i, j in zip(keys[fresh], lo[fresh], hi[fresh]):
            if key not in seen:
                seen.add(int(key))
                out.append((int(i), int(j)))
                if len(out) == k:
                    break
    if len(out) < k:
        raise GraphError("negative sampling failed to find enough non-edges")
    return np.array(sorted(out), dtype=np.int64)


def load_edge_list(edge_path, attr_path, bipartite: bool = False):
    """Load a whitespace-separated edge list plus a node_id,group_label CSV.

    Node ids may be arbitrary strings; a dense 0-based index is built in the
    attribute file's order (so every node must appear there). Duplicate edges
    and self-loops are dropped and counted. For bipartite graphs the side of a
    node is its edge-file column; nodes without edges default to side 0.

    Returns (Graph, SensitivePartition).
    """
    names: list[str] = []
    index: dict[str, int] = {}
    group_ids: dict[str, int] = {}
    labels: list[str] = []
    group_of: list[int] = []
    try:
        fh = open(attr_path, newline="", encoding="utf-8")
    except OSError as exc:
        raise GraphError(f"cannot read attribute file: {exc}") from exc
    with fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if len(fields) != 2:
                raise GraphError(f"{attr_path}:{lineno}: expected 'node_id,group_label'")
            name, label = fields[0].strip(), fields[1].strip()
            if name in index:
                raise GraphError(f"{attr_path}:{lineno}: duplicate attribute row for node '{name}'")
            index[name] = len(names)
            names.append(name)
            gid = group_ids.setdefault(label, len(labels))
            if gid == len(labels):
                labels.append(label)
            group_of.append(gid)
    if not names:
        raise GraphError(f"attribute file {attr_path} is empty")
    n = len(names)

    raw: list[tuple[int, int]] = []
    side = np.full(n, -1, dtype=np.int64) if bipartite else None
    try:
        fh = open(edge_path, encoding="utf-8")
    except OSError as exc:
        raise GraphError(f"cannot read edge file: {exc}") from exc
    n_self = 0
    with fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 2:
                raise GraphError(f"{edge_path}:{lineno}: expected 'u v'")
            try:
                u, v = index[tokens[0]], index[tokens[1]]
            except KeyError as exc:
                raise GraphError(
                    f"{edge_path}:{lineno}: node {exc} has no attribute row"
                ) from None
            if bipartite:
                for node, s in ((u, 0), (v, 1)):
                    if side[node] == 1 - s:
                        raise GraphError(
                            f"node '{names[node]}' appears in both edge-file columns; "
                            "not bipartite-consistent"
                        )
                    side[node] = s
            if u == v:
                n_self += 1
                continue
            raw.append((u, v) if u < v else (v, u))
    if raw:
        pairs = np.unique(np.array(raw, dtype=np.int64), axis=0)
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    n_dup = len(raw) - len(pairs)
    if n_dup or n_self:
        logger.warning(
            "dropped %d duplicate edge(s) and %d self-loop(s) from %s",
            n_dup, n_self, edge_path,
        )
    if bipartite:
        unplaced = int(np.sum(side == -1))
        if unplaced:
            logger.debug("%d node(s) without edges assigned to side 0", unplaced)
        side[side == -1] = 0
    graph = Graph(n=n, edges=pairs, side=side, node_names=names)
    partition = SensitivePartition(group_of=np.array(group_of, dtype=np.int64), labels=labels)
    return graph, partition
