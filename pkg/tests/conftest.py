import os

import numpy as np
import pytest

from rogpl.graph import Graph, build_adjacency

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "data")
CORA_DIR = os.path.join(DATA_DIR, "cora")
PUBMED_DIR = os.path.join(DATA_DIR, "pubmed3000")


def make_graph(n_nodes, edges, labels, features=None, n_classes=None):
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if (labels >= 0).any() else 1
    if features is None:
        rng = np.random.default_rng(0)
        features = rng.normal(size=(n_nodes, 4))
    return Graph(n_nodes=n_nodes,
                 features=np.asarray(features, dtype=np.float64),
                 adjacency=build_adjacency(n_nodes, np.asarray(edges).reshape(-1, 2)),
                 labels=labels, n_known_classes=n_classes)


def two_blob_graph(n_per_blob=100, dim=8, separation=20.0, k_intra=5, seed=0):
    """Two well-separated unit-variance Gaussian blobs with intra-blob kNN edges.

    Blob membership is the class label; features are the blob coordinates.
    Centers sit on distinct axes so each blob has a well-defined direction
    (cosine scoring is degenerate for a blob centered at the origin).
    """
    rng = np.random.default_rng(seed)
    n = 2 * n_per_blob
    centers = np.zeros((2, dim))
    centers[0, 0] = separation / np.sqrt(2.0)
    centers[1, 1] = separation / np.sqrt(2.0)
    feats = np.vstack([rng.normal(centers[b], 1.0, size=(n_per_blob, dim))
                       for b in range(2)])
    labels = np.repeat([0, 1], n_per_blob)
    edges = []
    for b in range(2):
        idx = np.arange(b * n_per_blob, (b + 1) * n_per_blob)
        block = feats[idx]
        d2 = ((block[:, None] - block[None, :]) ** 2).sum(-1)
        np.fill_diagonal(d2, np.inf)
        for local, i in enumerate(idx):
            for j in np.argsort(d2[local])[:k_intra]:
                edges.append((i, idx[j]))
    return make_graph(n, edges, labels, features=feats, n_classes=2)


@pytest.fixture(scope="session")
def cora():
    from rogpl.graph import load_dataset
    return load_dataset(CORA_DIR)
