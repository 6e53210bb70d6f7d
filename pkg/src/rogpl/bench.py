"""Noise injection, open-set scenarios, and experiment orchestration.

Scenario protocol (class indices refer to the raw dataset ordering):

* ``near``  — the last class is held out as the test-time unknown class; the
  second-last class's nodes are injected into training as OOD noise under
  uniformly random known labels; the remaining classes are the known classes.
* ``far``   — same holdout of the last class, the second-last class's nodes
  are removed, and OOD noise comes from an unrelated source graph (its first
  two classes), with extra source class-3 nodes appended to the test set as
  far unknowns in proportion to the OOD rate.
* ``none``  — the far protocol at rate zero: holdout only, no OOD noise.

IND noise uniformly flips a fraction of the known-class training labels to a
different known class. Every injector is deterministic per seed and leaves
untouched labels and all original edges intact.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .graph import UNLABELED, Graph, SplitSpec, build_adjacency, split_nodes
from .metrics import UNKNOWN, Metrics, auroc, macro_f1
from .pipeline import AblationFlags, Model, TrainConfig, predict, train

PROV_CLEAN = 0
PROV_IND = 1
PROV_OOD = 2
PROV_UNKNOWN_TEST = 3

CSV_COLUMNS = ["dataset", "ood_mode", "ind_rate", "ood_rate", "variant", "seed",
               "macro_f1", "auroc", "known_acc", "unknown_acc", "overall_acc",
               "n_clean_final", "wall_seconds"]


@dataclass(frozen=True)
class NoiseSpec:
    ind_rate: float = 0.05
    ood_mode: str = "near"          # none | near | far
    ood_rate: float = 0.0           # far mode only
    far_source: str | None = None   # dataset path, required iff far
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ind_rate < 1.0:
            raise ValueError("ind_rate must lie in [0, 1)")
        if not 0.0 <= self.ood_rate < 1.0:
            raise ValueError("ood_rate must lie in [0, 1)")
        if self.ood_mode not in ("none", "near", "far"):
            raise ValueError(f"unknown ood_mode {self.ood_mode!r}")
        if (self.ood_mode == "far") != (self.far_source is not None):
            raise ValueError("far_source is required exactly when ood_mode is 'far'")


@dataclass
class NoisyDataset:
    """Working graph plus per-node provenance and the experiment splits.

    ``y_true`` holds each node's ground-truth class in the known-class label
    space, or UNKNOWN for nodes whose true class is held out (OOD noise and
    test unknowns). The working graph's ``labels`` are the possibly-noised
    training labels; test unknowns are unlabeled there.
    """

    graph: Graph
    provenance: np.ndarray
    y_true: np.ndarray
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    n_known: int

    def known_train_ids(self) -> np.ndarray:
        """Training nodes that genuinely belong to a known class."""
        return self.train_ids[self.provenance[self.train_ids] != PROV_OOD]


def _as_noisy(g: Graph, split: SplitSpec) -> NoisyDataset:
    train, val, test = split_nodes(g, split)
    return NoisyDataset(graph=g,
                        provenance=np.zeros(g.n_nodes, dtype=np.int8),
                        y_true=g.labels.copy(),
                        train_ids=train, val_ids=val, test_ids=test,
                        n_known=g.n_known_classes)


def inject_ind_noise(dataset: Graph | NoisyDataset, train_ids: np.ndarray | None,
                     rate: float, seed: int) -> NoisyDataset:
    """Flip the labels of round(rate * |train_ids|) training nodes.

    Victims are chosen uniformly without replacement from the clean
    known-class training nodes; each gets a uniformly random *different*
    known-class label. Provenance is recorded; deterministic per seed.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    nd = dataset if isinstance(dataset, NoisyDataset) else _as_noisy(dataset, SplitSpec())
    if nd.n_known < 2:
        raise ValueError("need at least 2 known classes to inject a wrong label")
    if train_ids is None:
        train_ids = nd.known_train_ids()
    train_ids = np.asarray(train_ids, dtype=np.int64)
    n_flip = int(round(rate * train_ids.size))
    labels = nd.graph.labels.copy()
    provenance = nd.provenance.copy()
    if n_flip:
        rng = np.random.default_rng(seed)
        candidates = train_ids[provenance[train_ids] == PROV_CLEAN]
        if n_flip > candidates.size:
            raise ValueError("not enough clean training nodes to flip")
        victims = rng.choice(candidates, size=n_flip, replace=False)
        offsets = rng.integers(1, nd.n_known, size=n_flip)
        labels[victims] = (labels[victims] + offsets) % nd.n_known
        provenance[victims] = PROV_IND
    graph = replace(nd.graph, labels=labels)
    return NoisyDataset(graph=graph, provenance=provenance, y_true=nd.y_true.copy(),
                        train_ids=nd.train_ids.copy(), val_ids=nd.val_ids.copy(),
                        test_ids=nd.test_ids.copy(), n_known=nd.n_known)


def _holdout(g: Graph, split: SplitSpec, drop_second_last: bool
             ) -> tuple[NoisyDataset, np.ndarray]:
    """Hold out the last class as test unknowns; optionally drop the
    second-last class's nodes entirely. Returns the scenario plus the ids of
    the second-last class's nodes (empty when dropped)."""
    c_total = g.n_known_classes
    if c_total < 3:
        raise ValueError("need at least 3 classes to build an open-set scenario")
    n_known = c_total - 2
    unknown_ids = np.flatnonzero(g.labels == c_total - 1)
    pool_ids = np.flatnonzero(g.labels == c_total - 2)

    if drop_second_last:
        keep = np.setdiff1d(np.arange(g.n_nodes), pool_ids)
        remap = np.full(g.n_nodes, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        adj = g.adjacency[keep][:, keep].tocsr()
        labels = g.labels[keep].copy()
        features = g.features[keep].copy()
        unknown_ids = remap[unknown_ids]
        pool_ids = np.zeros(0, dtype=np.int64)
    else:
        adj = g.adjacency.copy()
        labels = g.labels.copy()
        features = g.features.copy()

    y_true = labels.copy()
    y_true[labels >= n_known] = UNKNOWN
    labels[labels >= n_known] = UNLABELED

    work = Graph(n_nodes=labels.size, features=features, adjacency=adj,
                 labels=labels, n_known_classes=n_known)
    train, val, test = split_nodes(work, split)
    provenance = np.zeros(labels.size, dtype=np.int8)
    provenance[unknown_ids] = PROV_UNKNOWN_TEST
    nd = NoisyDataset(graph=work, provenance=provenance, y_true=y_true,
                      train_ids=train, val_ids=val,
                      test_ids=np.sort(np.concatenate([test, unknown_ids])),
                      n_known=n_known)
    return nd, pool_ids


def build_near_ood_scenario(g: Graph, seed: int,
                            split: SplitSpec | None = None) -> NoisyDataset:
    """Near-OOD protocol: last class becomes the test unknown class, the
    second-last class's nodes join the training set as OOD noise with
    uniformly random known labels."""
    split = split or SplitSpec(seed=seed)
    nd, pool_ids = _holdout(g, split, drop_second_last=False)
    rng = np.random.default_rng(seed)
    labels = nd.graph.labels.copy()
    labels[pool_ids] = rng.integers(0, nd.n_known, size=pool_ids.size)
    provenance = nd.provenance.copy()
    provenance[pool_ids] = PROV_OOD
    graph = replace(nd.graph, labels=labels)
    return NoisyDataset(graph=graph, provenance=provenance, y_true=nd.y_true,
                        train_ids=np.sort(np.concatenate([nd.train_ids, pool_ids])),
                        val_ids=nd.val_ids, test_ids=nd.test_ids,
                        n_known=nd.n_known)


def _reconcile_width(features: np.ndarray, width: int) -> np.ndarray:
    """Zero-pad (or truncate) source features to the target width."""
    if features.shape[1] == width:
        return features.copy()
    out = np.zeros((features.shape[0], width))
    keep = min(width, features.shape[1])
    out[:, :keep] = features[:, :keep]
    return out


def inject_far_ood(dataset: Graph | NoisyDataset, source: Graph, rate: float,
                   seed: int, test_unknown_rate: float | None = None
                   ) -> NoisyDataset:
    """Append far-OOD nodes sampled from an unrelated source graph.

    round(rate * |known train|) nodes from the source's first two classes
    join the training set under uniformly random known labels; each is wired
    to its k nearest training nodes by feature cosine similarity with k drawn
    uniformly from {1..5}. Source class-3 nodes are appended to the test set
    as far unknowns in corresponding proportion (round(rate * |known test|)
    unless ``test_unknown_rate`` overrides the rate).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    nd = dataset if isinstance(dataset, NoisyDataset) else _as_noisy(dataset, SplitSpec())
    if rate == 0.0 and not test_unknown_rate:
        return nd
    if source.n_known_classes < 3:
        raise ValueError("far-OOD source needs at least 3 classes")
    rng = np.random.default_rng(seed)
    g = nd.graph
    known_train = nd.known_train_ids()
    known_test = nd.test_ids[nd.provenance[nd.test_ids] != PROV_UNKNOWN_TEST]
    n_noise = int(round(rate * known_train.size))
    t_rate = rate if test_unknown_rate is None else test_unknown_rate
    n_unknown = int(round(t_rate * known_test.size))

    noise_pool = np.flatnonzero((source.labels == 0) | (source.labels == 1))
    unknown_pool = np.flatnonzero(source.labels == 2)
    if n_noise > noise_pool.size or n_unknown > unknown_pool.size:
        raise ValueError("source graph exhausted: not enough nodes to sample")
    noise_src = rng.choice(noise_pool, size=n_noise, replace=False)
    unknown_src = rng.choice(unknown_pool, size=n_unknown, replace=False)

    new_feats = _reconcile_width(
        source.features[np.concatenate([noise_src, unknown_src])], g.n_features)
    new_ids = g.n_nodes + np.arange(n_noise + n_unknown)

    # attach each new node to its k nearest anchors by feature cosine;
    # noise nodes anchor to training nodes, test unknowns to any original node
    edges = []
    for idx, row in enumerate(new_feats):
        anchors = known_train if idx < n_noise else np.flatnonzero(
            nd.provenance != PROV_UNKNOWN_TEST)
        anchor_feats = g.features[anchors]
        sims = anchor_feats @ row
        norms = np.linalg.norm(anchor_feats, axis=1) * max(np.linalg.norm(row), 1e-12)
        sims = sims / np.where(norms > 0, norms, 1.0)
        k = int(rng.integers(1, 6))
        k = min(k, anchors.size)
        nearest = anchors[np.argsort(-sims, kind="stable")[:k]]
        edges.extend((int(new_ids[idx]), int(a)) for a in nearest)

    n_new = g.n_nodes + n_noise + n_unknown
    old = g.adjacency.tocoo()
    old_edges = np.column_stack([old.row, old.col])
    all_edges = np.vstack([old_edges, np.array(edges, dtype=np.int64).reshape(-1, 2)])
    adjacency = build_adjacency(n_new, all_edges)

    labels = np.concatenate([
        g.labels,
        rng.integers(0, nd.n_known, size=n_noise),
        np.full(n_unknown, UNLABELED, dtype=np.int64)])
    features = np.vstack([g.features, new_feats])
    provenance = np.concatenate([
        nd.provenance,
        np.full(n_noise, PROV_OOD, dtype=np.int8),
        np.full(n_unknown, PROV_UNKNOWN_TEST, dtype=np.int8)])
    y_true = np.concatenate([nd.y_true,
                             np.full(n_noise + n_unknown, UNKNOWN, dtype=np.int64)])
    graph = Graph(n_nodes=n_new, features=features, adjacency=adjacency,
                  labels=labels, n_known_classes=nd.n_known)
    return NoisyDataset(
        graph=graph, provenance=provenance, y_true=y_true,
        train_ids=np.sort(np.concatenate([nd.train_ids, new_ids[:n_noise]])),
        val_ids=nd.val_ids.copy(),
        test_ids=np.sort(np.concatenate([nd.test_ids, new_ids[n_noise:]])),
        n_known=nd.n_known)


def build_scenario(g: Graph, noise: NoiseSpec, split: SplitSpec | None = None,
                   far_source: Graph | None = None) -> NoisyDataset:
    """Compose holdout, IND flips, and OOD injection per the noise spec."""
    split = split or SplitSpec(seed=noise.seed)
    ind_seed = noise.seed * 7919 + 1
    ood_seed = noise.seed * 7919 + 2
    if noise.ood_mode == "near":
        nd = build_near_ood_scenario(g, noise.seed, split)
        nd = inject_ind_noise(nd, nd.known_train_ids(), noise.ind_rate, ind_seed)
    elif noise.ood_mode == "far":
        if far_source is None:
            from .graph import load_dataset
            far_source = load_dataset(noise.far_source)
        nd, _ = _holdout(g, split, drop_second_last=True)
        nd = inject_ind_noise(nd, nd.known_train_ids(), noise.ind_rate, ind_seed)
        nd = inject_far_ood(nd, far_source, noise.ood_rate, ood_seed)
    else:  # none: holdout only
        nd, _ = _holdout(g, split, drop_second_last=True)
        nd = inject_ind_noise(nd, nd.known_train_ids(), noise.ind_rate, ind_seed)
    return nd


def evaluate(model: Model, nd: NoisyDataset) -> Metrics:
    """Open-set metrics on the scenario's test split."""
    preds = predict(model, nd.graph, nd.test_ids)
    truth = np.where(nd.provenance[nd.test_ids] == PROV_UNKNOWN_TEST,
                     UNKNOWN, nd.y_true[nd.test_ids])
    is_unknown = truth == UNKNOWN
    known = ~is_unknown
    if is_unknown.any():
        auc = auroc(1.0 - preds.confidence, is_unknown)
        unknown_acc = float((preds.labels[is_unknown] == UNKNOWN).mean())
    else:
        auc = float("nan")
        unknown_acc = float("nan")
    return Metrics(
        macro_f1=macro_f1(preds.labels, truth, c_plus_one=True),
        auroc=auc,
        known_acc=float((preds.labels[known] == truth[known]).mean()),
        unknown_acc=unknown_acc,
        overall_acc=float((preds.labels == truth).mean()))


def run_experiment(g: Graph, noise: NoiseSpec, cfg: TrainConfig,
                   variant: AblationFlags | None = None, n_seeds: int = 3,
                   out_csv: str | None = None, dataset_name: str = "dataset",
                   far_source: Graph | None = None) -> list[dict]:
    """Train and evaluate over ``n_seeds`` seeds; emit one CSV row per seed
    plus a median-aggregate row."""
    variant = variant or AblationFlags()
    writer = _CsvAppender(out_csv) if out_csv else None
    rows = []
    for i in range(n_seeds):
        run_noise = replace(noise, seed=noise.seed + i)
        run_cfg = replace(cfg, seed=cfg.seed + i)
        nd = build_scenario(g, run_noise, SplitSpec(seed=run_noise.seed),
                            far_source=far_source)
        t0 = time.perf_counter()
        model = train(nd.graph, nd.train_ids, nd.val_ids, run_cfg, variant)
        wall = time.perf_counter() - t0
        metrics = evaluate(model, nd)
        row = {"dataset": dataset_name, "ood_mode": noise.ood_mode,
               "ind_rate": noise.ind_rate, "ood_rate": noise.ood_rate,
               "variant": variant.name, "seed": run_cfg.seed,
               "macro_f1": metrics.macro_f1, "auroc": metrics.auroc,
               "known_acc": metrics.known_acc, "unknown_acc": metrics.unknown_acc,
               "overall_acc": metrics.overall_acc,
               "n_clean_final": model.diagnostics["n_clean_final"],
               "wall_seconds": round(wall, 3)}
        rows.append(row)
        if writer:
            writer.write(row)
    agg = dict(rows[0])
    agg["seed"] = "median"
    for col in ("macro_f1", "auroc", "known_acc", "unknown_acc", "overall_acc",
                "n_clean_final", "wall_seconds"):
        agg[col] = float(np.median([r[col] for r in rows]))
    rows.append(agg)
    if writer:
        writer.write(agg)
    return rows


class _CsvAppender:
    """Append-only CSV writer with a per-row flush."""

    def __init__(self, path: str):
        self.path = path
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        self._fh = open(path, "a", newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=CSV_COLUMNS)
        if new:
            self._writer.writeheader()
            self._fh.flush()

    def write(self, row: dict) -> None:
        self._writer.writerow(row)
        self._fh.flush()
