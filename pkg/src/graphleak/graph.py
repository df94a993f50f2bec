"""Graph containers, induced subgraphs and on-disk dataset bundles.

Adjacency is kept CSR-style: ``indptr``/``indices`` with each neighbor list
sorted ascending, no self-loops and no duplicates. Encoders add self-loops
on the fly, so a stored self-loop would be counted twice.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


class InvalidSubsetError(GraphError):
    pass


class BundleError(GraphError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph on nodes ``0..node_count-1``."""

    node_count: int
    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges, *, allow_duplicates: bool = True) -> "Graph":
        """Build a graph from an iterable/array of ``(u, v)`` pairs.

        Pairs may appear in either orientation; they are symmetrized and
        deduplicated. Self-loops and out-of-range ids raise ``GraphError``.
        """
        g, dups = cls._from_edges_counted(n, edges)
        if dups and not allow_duplicates:
            raise GraphError(f"{dups} duplicate edges")
        return g

    @classmethod
    def _from_edges_counted(cls, n: int, edges) -> tuple["Graph", int]:
        if n < 0:
            raise GraphError("node_count must be nonnegative")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise GraphError(f"edge endpoint out of range [0, {n})")
        if np.any(e[:, 0] == e[:, 1]):
            bad = e[e[:, 0] == e[:, 1]][0]
            raise GraphError(f"self-loop ({bad[0]}, {bad[1]}) not allowed")
        lo = np.minimum(e[:, 0], e[:, 1])
        hi = np.maximum(e[:, 0], e[:, 1])
        key = np.unique(lo * max(n, 1) + hi)
        duplicates = len(e) - len(key)
        lo, hi = key // max(n, 1), key % max(n, 1)
        return cls._from_unique_pairs(n, lo, hi), duplicates

    @classmethod
    def _from_unique_pairs(cls, n: int, lo: np.ndarray, hi: np.ndarray) -> "Graph":
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(n, _frozen(indptr), _frozen(cols.astype(np.int64)))

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(n, _frozen(np.zeros(n + 1, dtype=np.int64)), _frozen(np.zeros(0, dtype=np.int64)))

    @classmethod
    def from_dense(cls, adj: np.ndarray) -> "Graph":
        """Sparsify a symmetric 0/1 matrix; the diagonal must be zero."""
        adj = np.asarray(adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.array_equal(adj, adj.T):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise GraphError("adjacency has self-loops")
        lo, hi = np.nonzero(np.triu(adj, 1))
        return cls._from_unique_pairs(adj.shape[0], lo.astype(np.int64), hi.astype(np.int64))

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def edge_array(self) -> np.ndarray:
        """Unordered edges as an ``(m, 2)`` array with ``u < v``, sorted."""
        rows = np.repeat(np.arange(self.node_count), self.degrees())
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def adjacency(self, self_loops: bool = False) -> sp.csr_matrix:
        a = sp.csr_matrix(
            (np.ones(len(self.indices)), self.indices, self.indptr),
            shape=(self.node_count, self.node_count),
        )
        if self_loops:
            a = (a + sp.identity(self.node_count, format="csr")).tocsr()
            a.sort_indices()
        return a

    def to_dense(self) -> np.ndarray:
        return self.adjacency().toarray().astype(np.int8)

    def with_edge(self, u: int, v: int, present: bool) -> "Graph":
        """Copy of the graph with the pair ``{u, v}`` toggled on or off."""
        e = self.edge_array()
        lo, hi = min(u, v), max(u, v)
        e = e[~((e[:, 0] == lo) & (e[:, 1] == hi))]
        if present:
            e = np.vstack([e, [[lo, hi]]])
        return Graph.from_edges(self.node_count, e)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __repr__(self):
        return f"Graph(n={self.node_count}, m={self.num_edges})"


def degrees(g: Graph) -> np.ndarray:
    return g.degrees()


@dataclass(frozen=True, eq=False)
class NodeSubset:
    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).ravel()
        if len(ids) > 1 and np.any(np.diff(ids) <= 0):
            raise InvalidSubsetError("subset ids must be strictly increasing")
        object.__setattr__(self, "ids", _frozen(ids.copy()))

    @classmethod
    def of(cls, ids) -> "NodeSubset":
        """Sorted, deduplicated subset from arbitrary ids."""
        return cls(np.unique(np.asarray(ids, dtype=np.int64)))

    def check(self, n: int) -> None:
        if len(self.ids) and (self.ids[0] < 0 or self.ids[-1] >= n):
            raise InvalidSubsetError(f"subset id out of range [0, {n})")

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        return isinstance(other, NodeSubset) and np.array_equal(self.ids, other.ids)


def induced_subgraph(g: Graph, s: NodeSubset) -> tuple[Graph, dict[int, int]]:
    """Subgraph induced by ``s`` and the order-preserving old->new id map."""
    s.check(g.node_count)
    new_id = np.full(g.node_count, -1, dtype=np.int64)
    new_id[s.ids] = np.arange(len(s.ids))
    e = g.edge_array()
    keep = (new_id[e[:, 0]] >= 0) & (new_id[e[:, 1]] >= 0)
    sub = Graph._from_unique_pairs(len(s.ids), new_id[e[keep, 0]], new_id[e[keep, 1]])
    return sub, {int(old): i for i, old in enumerate(s.ids)}


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    masks: dict[str, NodeSubset] = field(default_factory=dict)
    num_classes: int | None = None

    def __post_init__(self):
        n = self.graph.node_count
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise BundleError(f"features must be {n} x d, got {feats.shape}")
        if labels.shape != (n,):
            raise BundleError(f"labels must have length {n}")
        if not np.all(np.isfinite(feats)):
            raise BundleError("features contain NaN/Inf")
        for name, m in self.masks.items():
            try:
                m.check(n)
            except InvalidSubsetError as exc:
                raise BundleError(f"mask {name!r}: {exc}") from None
        if "train" in self.masks and "test" in self.masks:
            if np.intersect1d(self.masks["train"].ids, self.masks["test"].ids).size:
                raise BundleError("train and test masks overlap")
        classes = self.num_classes
        if classes is None:
            classes = int(labels.max()) + 1 if n else 0
        if n and (labels.min() < 0 or labels.max() >= classes):
            raise BundleError(f"labels outside [0, {classes})")
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "num_classes", classes)

    @property
    def n(self) -> int:
        return self.graph.node_count

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, DatasetBundle):
            return NotImplemented
        return (
            self.graph == other.graph
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.num_classes == other.num_classes
            and self.masks.keys() == other.masks.keys()
            and all(self.masks[k] == other.masks[k] for k in self.masks)
        )


@dataclass
class LoadReport:
    duplicate_edges: int = 0


def _read_meta(path: Path) -> dict[str, int]:
    meta = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise BundleError(f"{path}:{lineno}: expected key=value, got {line!r}")
        try:
            meta[key.strip()] = int(value)
        except ValueError:
            raise BundleError(f"{path}:{lineno}: non-integer value {value!r}") from None
    for key in ("n", "d"):
        if key not in meta:
            raise BundleError(f"{path}: missing key {key!r}")
    return meta


def _read_ints(path: Path, width: int) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != width:
            raise BundleError(f"{path}:{lineno}: expected {width} field(s), got {line!r}")
        try:
            rows.append([int(p) for p in parts])
        except ValueError:
            raise BundleError(f"{path}:{lineno}: malformed line {line!r}") from None
    return np.asarray(rows, dtype=np.int64).reshape(-1, width)


def _require(path: Path) -> Path:
    if not path.is_file():
        raise BundleError(f"missing bundle file {path}")
    return path


def load_bundle_with_report(path) -> tuple[DatasetBundle, LoadReport]:
    root = Path(path)
    meta = _read_meta(_require(root / "meta.txt"))
    n, d = meta["n"], meta["d"]

    edges = _read_ints(_require(root / "edges.tsv"), 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise BundleError(f"{root / 'edges.tsv'}: node id out of range [0, {n})")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise BundleError(f"{root / 'edges.tsv'}: self-loop lines are not allowed")
    graph, dups = Graph._from_edges_counted(n, edges)
    report = LoadReport(duplicate_edges=dups)
    if dups:
        log.warning("%s: dropped %d duplicate edge line(s)", root, dups)

    raw = np.fromfile(_require(root / "features.bin"), dtype="<f4")
    if raw.size != n * d:
        raise BundleError(f"features.bin holds {raw.size} values, expected {n}*{d}")
    features = raw.reshape(n, d).astype(np.float64)

    labels = _read_ints(_require(root / "labels.tsv"), 1).ravel()
    if len(labels) != n:
        raise BundleError(f"labels.tsv has {len(labels)} lines, expected {n}")

    masks = {}
    for name in ("train", "test", "val"):
        f = root / f"mask_{name}.tsv"
        if name != "val":
            _require(f)
        if f.is_file():
            ids = _read_ints(f, 1).ravel()
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise BundleError(f"{f}: mask id out of range [0, {n})")
            masks[name] = NodeSubset.of(ids)

    bundle = DatasetBundle(graph, features, labels, masks, num_classes=meta.get("classes"))
    return bundle, report


def load_bundle(path) -> DatasetBundle:
    return load_bundle_with_report(path)[0]


def save_bundle(bundle: DatasetBundle, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "meta.txt").write_text(f"n={bundle.n}\nd={bundle.d}\nclasses={bundle.num_classes}\n")
    with open(root / "edges.tsv", "w") as fh:
        for u, v in bundle.graph.edge_array():
            fh.write(f"{u}\t{v}\n")
    bundle.features.astype("<f4").tofile(root / "features.bin")
    (root / "labels.tsv").write_text("".join(f"{y}\n" for y in bundle.labels))
    for name, m in bundle.masks.items():
        (root / f"mask_{name}.tsv").write_text("".join(f"{i}\n" for i in m.ids))
