"""Graph data model: TSV ingestion, sparse adjacency kernels, and node splitting.

A dataset directory holds three files:

* ``nodes.tsv``  — header ``node_id<TAB>label<TAB>f1..fs``, then one row per node.
  ``label`` is an integer class id or -1 for unlabeled nodes.
* ``edges.tsv``  — one ``src<TAB>dst`` pair per line, 0-based node ids.
* ``meta.json``  — ``{"n_nodes": int, "n_features": int, "n_classes": int}``.

Edge lists are undirected: asymmetric input is symmetrized by union and
self-loops are dropped on ingestion (the normalization step re-adds them).
"""

from __future__ import annotations

import json
import os
import pickle
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

UNLABELED = -1


class DatasetError(ValueError):
    """Raised when a dataset directory is malformed."""


@dataclass(frozen=True)
class Graph:
    """Immutable node-attributed undirected graph.

    ``adjacency`` is a symmetric CSR matrix with no stored self-loops and
    unit edge weights. ``labels`` holds class ids in ``0..n_known_classes-1``
    or ``UNLABELED``.
    """

    n_nodes: int
    features: np.ndarray
    adjacency: sp.csr_matrix
    labels: np.ndarray
    n_known_classes: int

    def __post_init__(self):
        if self.features.shape[0] != self.n_nodes:
            raise ValueError(
                f"feature rows {self.features.shape[0]} != n_nodes {self.n_nodes}")
        if self.labels.shape != (self.n_nodes,):
            raise ValueError("labels must be a vector of length n_nodes")
        if self.adjacency.shape != (self.n_nodes, self.n_nodes):
            raise ValueError("adjacency shape mismatch")
        if self.adjacency.diagonal().any():
            raise ValueError("adjacency must not store self-loops")
        if (self.adjacency != self.adjacency.T).nnz != 0:
            raise ValueError("adjacency must be symmetric")
        labeled = self.labels[self.labels != UNLABELED]
        if labeled.size and (labeled.min() < 0 or labeled.max() >= self.n_known_classes):
            raise ValueError("labels must lie in [0, n_known_classes)")

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def labeled_ids(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNLABELED)


@dataclass(frozen=True)
class SplitSpec:
    """Per-class stratified train/val/test fractions plus the shuffle seed."""

    train_fraction: float = 0.70
    val_fraction: float = 0.10
    test_fraction: float = 0.20
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f <= 0 for f in fracs):
            raise ValueError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def build_adjacency(n_nodes: int, edges: np.ndarray) -> sp.csr_matrix:
    """Build a symmetric unit-weight CSR adjacency from an edge list.

    Duplicate edges collapse to weight 1, self-loops are discarded, and the
    pair set is closed under reversal (union symmetrization).
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= n_nodes:
            bad = edges[(edges < 0) | (edges >= n_nodes)].flat[0]
            raise DatasetError(f"edge endpoint {bad} outside [0, {n_nodes})")
        keep = edges[:, 0] != edges[:, 1]
        edges = edges[keep]
    if not edges.size:
        return sp.csr_matrix((n_nodes, n_nodes), dtype=np.float64)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    a = sp.csr_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(n_nodes, n_nodes))
    a.data[:] = 1.0  # duplicates were summed by the COO->CSR conversion
    return a


def load_dataset(path: str, fmt: str = "tsv") -> Graph:
    """Load a dataset directory into a :class:`Graph`.

    Raises :class:`DatasetError` on missing files, dangling edge endpoints,
    out-of-range labels, or non-numeric features.
    """
    if fmt != "tsv":
        raise ValueError(f"unsupported format {fmt!r}")
    meta_path = os.path.join(path, "meta.json")
    nodes_path = os.path.join(path, "nodes.tsv")
    edges_path = os.path.join(path, "edges.tsv")
    for p in (meta_path, nodes_path, edges_path):
        if not os.path.exists(p):
            raise DatasetError(f"missing dataset file: {p}")

    with open(meta_path) as f:
        meta = json.load(f)
    n_nodes = int(meta["n_nodes"])
    n_features = int(meta["n_features"])
    n_classes = int(meta["n_classes"])

    features = np.zeros((n_nodes, n_features), dtype=np.float64)
    labels = np.full(n_nodes, UNLABELED, dtype=np.int64)
    seen = np.zeros(n_nodes, dtype=bool)
    with open(nodes_path) as f:
        header = f.readline()
        if not header.startswith("node_id"):
            raise DatasetError("nodes.tsv must start with a node_id header line")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 + n_features:
                raise DatasetError(
                    f"nodes.tsv line {lineno}: expected {2 + n_features} fields, "
                    f"got {len(parts)}")
            try:
                nid = int(parts[0])
                label = int(parts[1])
                feats = np.array(parts[2:], dtype=np.float64)
            except ValueError as exc:
                raise DatasetError(f"nodes.tsv line {lineno}: {exc}") from None
            if not 0 <= nid < n_nodes:
                raise DatasetError(f"nodes.tsv line {lineno}: node id {nid} out of range")
            if seen[nid]:
                raise DatasetError(f"nodes.tsv line {lineno}: duplicate node id {nid}")
            if label != UNLABELED and not 0 <= label < n_classes:
                raise DatasetError(
                    f"nodes.tsv line {lineno}: label {label} >= n_classes {n_classes}")
            seen[nid] = True
            features[nid] = feats
            labels[nid] = label
    if not seen.all():
        raise DatasetError(f"nodes.tsv is missing {int((~seen).sum())} node rows")

    edge_list = []
    with open(edges_path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"edges.tsv line {lineno}: expected src<TAB>dst")
            edge_list.append((int(parts[0]), int(parts[1])))
    edges = np.array(edge_list, dtype=np.int64).reshape(-1, 2)
    adjacency = build_adjacency(n_nodes, edges)
    return Graph(n_nodes=n_nodes, features=features, adjacency=adjacency,
                 labels=labels, n_known_classes=n_classes)


def save_dataset(g: Graph, path: str) -> None:
    """Write a graph back out in the TSV interchange layout."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "meta.json"), "w") as f:
        json.dump({"n_nodes": g.n_nodes, "n_features": g.n_features,
                   "n_classes": g.n_known_classes}, f)
        f.write("\n")
    with open(os.path.join(path, "nodes.tsv"), "w") as f:
        cols = "\t".join(f"f{i+1}" for i in range(g.n_features))
        f.write(f"node_id\tlabel\t{cols}\n")
        for i in range(g.n_nodes):
            feats = "\t".join(format(v, ".17g") for v in g.features[i])
            f.write(f"{i}\t{int(g.labels[i])}\t{feats}\n")
    coo = sp.triu(g.adjacency, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(os.path.join(path, "edges.tsv"), "w") as f:
        for r, c in zip(coo.row[order], coo.col[order]):
            f.write(f"{r}\t{c}\n")


def normalize_adjacency(g: Graph) -> sp.csr_matrix:
    """Symmetrically normalized adjacency with self-loops.

    Returns ``D^{-1/2} (A + I) D^{-1/2}`` where ``D`` is the degree diagonal
    of ``A + I``. All stored values are positive, the diagonal is present for
    every node, and an isolated node's diagonal entry is exactly 1.
    """
    a_tilde = (g.adjacency + sp.identity(g.n_nodes, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    d_inv_sqrt = 1.0 / np.sqrt(deg)  # deg >= 1 because of the added identity
    d = sp.diags(d_inv_sqrt)
    return (d @ a_tilde @ d).tocsr()


def spmm(m: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    """Sparse-dense matrix product with explicit dimension checking."""
    x = np.asarray(x)
    if m.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {m.shape} @ {x.shape}")
    return np.asarray(m @ x)


def split_nodes(g: Graph, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified train/val/test partition of the labeled nodes.

    Every class contributes to each split (classes need at least 3 labeled
    nodes). The partition is disjoint, covers all labeled nodes, and is
    deterministic for a fixed seed.
    """
    rng = np.random.default_rng(spec.seed)
    train, val, test = [], [], []
    for c in range(g.n_known_classes):
        ids = np.flatnonzero(g.labels == c)
        if ids.size == 0:
            continue
        if ids.size < 3:
            raise ValueError(
                f"class {c} has only {ids.size} labeled nodes; cannot stratify")
        ids = rng.permutation(ids)
        n_train = max(1, round(spec.train_fraction * ids.size))
        n_val = max(1, round(spec.val_fraction * ids.size))
        while ids.size - n_train - n_val < 1:
            if n_train >= n_val and n_train > 1:
                n_train -= 1
            else:
                n_val -= 1
        train.append(ids[:n_train])
        val.append(ids[n_train:n_train + n_val])
        test.append(ids[n_train + n_val:])
    return (np.sort(np.concatenate(train)),
            np.sort(np.concatenate(val)),
            np.sort(np.concatenate(test)))


def induced_subgraph(g: Graph, ids: np.ndarray) -> Graph:
    """Subgraph on ``ids`` (order preserved); labels/features are copied."""
    ids = np.asarray(ids, dtype=np.int64)
    sub = g.adjacency[ids][:, ids].tocsr()
    return Graph(n_nodes=ids.size,
                 features=g.features[ids].copy(),
                 adjacency=sub,
                 labels=g.labels[ids].copy(),
                 n_known_classes=g.n_known_classes)


# ---------------------------------------------------------------------------
# Raw-format conversion (the `rogpl prepare` backend)

_PLANETOID_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def convert_planetoid(raw_dir: str, name: str, out_dir: str,
                      sample: int | None = None, seed: int = 0) -> Graph:
    """Convert planetoid-style raw files (``ind.<name>.*``) to the TSV layout.

    ``sample`` keeps a per-class stratified subset of that many nodes total
    (with the induced edges), which is how large sources are trimmed down to
    committable fixture size. The conversion is deterministic per seed.
    """
    import warnings

    objs = {}
    for part in _PLANETOID_PARTS:
        p = os.path.join(raw_dir, f"ind.{name}.{part}")
        if not os.path.exists(p):
            raise DatasetError(f"missing raw file: {p}")
        with open(p, "rb") as f, warnings.catch_warnings():
            # the pickles reference long-deprecated scipy submodule paths
            warnings.simplefilter("ignore", DeprecationWarning)
            objs[part] = pickle.load(f, encoding="latin1")
    test_idx = np.loadtxt(os.path.join(raw_dir, f"ind.{name}.test.index"),
                          dtype=np.int64)

    allx = sp.csr_matrix(objs["allx"])
    tx = sp.csr_matrix(objs["tx"])
    n_nodes = max(int(test_idx.max()) + 1, allx.shape[0] + tx.shape[0])
    n_feat = allx.shape[1]
    n_classes = objs["ally"].shape[1]

    features = np.zeros((n_nodes, n_feat), dtype=np.float64)
    labels = np.full(n_nodes, UNLABELED, dtype=np.int64)
    features[:allx.shape[0]] = allx.toarray()
    labels[:allx.shape[0]] = np.argmax(objs["ally"], axis=1)
    # test rows land at their shuffled positions; gaps (isolated ids present
    # in the graph but absent from tx) stay zero-featured and unlabeled
    features[test_idx] = tx.toarray()
    ty = np.asarray(objs["ty"])
    has_label = ty.sum(axis=1) > 0
    labels[test_idx[has_label]] = np.argmax(ty[has_label], axis=1)

    edge_list = []
    for u, nbrs in objs["graph"].items():
        for v in nbrs:
            if u != v and u < n_nodes and v < n_nodes:
                edge_list.append((u, v))
    edges = np.array(edge_list, dtype=np.int64)

    if sample is not None:
        rng = np.random.default_rng(seed)
        keep = []
        per_class = sample // n_classes
        for c in range(n_classes):
            ids = np.flatnonzero(labels == c)
            take = min(per_class, ids.size)
            keep.append(rng.choice(ids, size=take, replace=False))
        keep = np.sort(np.concatenate(keep))
        remap = np.full(n_nodes, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        features = features[keep]
        labels = labels[keep]
        mask = (remap[edges[:, 0]] >= 0) & (remap[edges[:, 1]] >= 0)
        edges = remap[edges[mask]]
        n_nodes = keep.size

    g = Graph(n_nodes=n_nodes, features=features,
              adjacency=build_adjacency(n_nodes, edges),
              labels=labels, n_known_classes=n_classes)
    save_dataset(g, out_dir)
    return g
