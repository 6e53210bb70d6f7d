"""Label-propagation denoising over a latent-space affinity graph.

Three stages: build a kNN affinity matrix from latent vectors, diffuse seed
labels by solving ``(I - a·S) Ybar = Ytilde`` with conjugate gradient (where
``S`` is the symmetrically normalized affinity), and keep the nodes whose
propagated labels either support their assigned label or are confidently
peaked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class AffinityGraph:
    """Symmetric nonnegative affinity matrix with zero diagonal."""

    matrix: sp.csr_matrix
    k_nn: int
    beta: float
    zero_rows: np.ndarray  # nodes with all-zero embeddings (no neighbors)


@dataclass
class SoftLabels:
    """Row-per-node label distribution; ``role`` is "seed" or "propagated"."""

    values: np.ndarray
    role: str
    cg_iterations: int = 0


@dataclass
class CleanMask:
    mask: np.ndarray
    eta: float
    iteration: int = 0

    @property
    def n_clean(self) -> int:
        return int(self.mask.sum())


def build_knn_affinity(z: np.ndarray, k: int, beta: float,
                       block: int = 2048) -> AffinityGraph:
    """Rectified dot-product kNN affinity, symmetrized by elementwise max.

    ``W_ij = max(z_i·z_j, 0)^beta`` for j among the k most similar rows to i
    (by dot product, i != j), zero otherwise; the result is then symmetrized
    so the propagation operator is well defined. Rows whose embedding is all
    zero get no neighbors and are reported in ``zero_rows``.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of rows {n}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not np.isfinite(z).all():
        raise ValueError("embeddings must be finite")
    zero_rows = np.flatnonzero(~z.any(axis=1))

    rows, cols, vals = [], [], []
    for start in range(0, n, block):
        stop = min(start + block, n)
        sims = z[start:stop] @ z.T
        for local, i in enumerate(range(start, stop)):
            sims[local, i] = -np.inf  # exclude the diagonal
        nbr = np.argpartition(sims, -k, axis=1)[:, -k:]
        for local, i in enumerate(range(start, stop)):
            w = np.maximum(sims[local, nbr[local]], 0.0) ** beta
            keep = w > 0
            rows.append(np.full(int(keep.sum()), i))
            cols.append(nbr[local, keep])
            vals.append(w[keep])
    rows = np.concatenate(rows) if rows else np.array([], dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.array([], dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.array([], dtype=np.float64)
    w = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    w = w.maximum(w.T).tocsr()
    w.setdiag(0.0)
    w.eliminate_zeros()
    return AffinityGraph(matrix=w, k_nn=k, beta=beta, zero_rows=zero_rows)


def assemble_seed_labels(labels: np.ndarray, prev_clean: CleanMask,
                         prev_scores: np.ndarray | None, n_classes: int,
                         temperature: float) -> SoftLabels:
    """Seed rows: one-hot assigned labels for clean nodes, tempered softmax
    of the model's class scores for the rest."""
    n = labels.shape[0]
    seeds = np.zeros((n, n_classes))
    clean = prev_clean.mask
    seeds[np.flatnonzero(clean), labels[clean]] = 1.0
    dirty = np.flatnonzero(~clean)
    if dirty.size:
        if prev_scores is None:
            raise ValueError("scores are required for nodes outside the clean set")
        seeds[dirty] = _softmax(prev_scores[dirty] / temperature)
    return SoftLabels(values=seeds, role="seed")


def propagate_labels(w: AffinityGraph, y_tilde: SoftLabels, alpha: float,
                     tol: float = 1e-6, max_iter: int = 200) -> SoftLabels:
    """Solve ``(I - alpha·S) Ybar = Ytilde`` column by column with CG.

    ``S = D^{-1/2} W D^{-1/2}`` with ``D`` the row-sum degree of ``W``;
    isolated nodes (zero degree) pass their seed row through unchanged. The
    system matrix is symmetric positive definite for ``0 <= alpha < 1``.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    mat = w.matrix
    if (mat != mat.T).nnz != 0:
        raise ValueError("affinity matrix must be symmetric")
    seeds = y_tilde.values
    deg = np.asarray(mat.sum(axis=1)).ravel()
    d_inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    d_half = sp.diags(d_inv_sqrt)
    s = (d_half @ mat @ d_half).tocsr()

    def matvec(v: np.ndarray) -> np.ndarray:
        return v - alpha * (s @ v)

    out = np.empty_like(seeds)
    total_iters = 0
    for c in range(seeds.shape[1]):
        out[:, c], iters = _conjugate_gradient(matvec, seeds[:, c], tol, max_iter)
        total_iters += iters
    return SoftLabels(values=out, role="propagated", cg_iterations=total_iters)


def _conjugate_gradient(matvec, b: np.ndarray, tol: float,
                        max_iter: int) -> tuple[np.ndarray, int]:
    """Plain CG for an SPD operator; stops at ||r|| <= tol * ||b||."""
    x = np.zeros_like(b)
    r = b - matvec(x)
    p = r.copy()
    rs = float(r @ r)
    threshold = (tol * np.linalg.norm(b)) ** 2
    if rs <= threshold:
        return x, 0
    for it in range(1, max_iter + 1):
        ap = matvec(p)
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if rs_new <= threshold:
            return x, it
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, max_iter


def row_renormalize(values: np.ndarray) -> np.ndarray:
    """Clip negatives to zero and rescale each row to sum to 1.

    Rows that clip to all zeros fall back to the uniform distribution so the
    downstream threshold comparison stays well defined.
    """
    clipped = np.maximum(values, 0.0)
    sums = clipped.sum(axis=1, keepdims=True)
    n_classes = values.shape[1]
    uniform = np.full(n_classes, 1.0 / n_classes)
    out = np.where(sums > 0, clipped / np.where(sums > 0, sums, 1.0), uniform)
    return out


def select_clean(y_bar: SoftLabels, labels: np.ndarray, eta: float,
                 iteration: int = 0) -> tuple[CleanMask, np.ndarray]:
    """Keep nodes whose propagated label mass supports their assigned label
    (strictly above 1/C) or whose peak confidence strictly exceeds ``eta``.

    Returns the mask plus hard pseudo-labels (row argmax, lowest id on ties).
    Rows are renormalized onto the simplex before thresholding.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    probs = row_renormalize(y_bar.values)
    n, n_classes = probs.shape
    assigned = probs[np.arange(n), labels]
    peak = probs.max(axis=1)
    mask = (assigned > 1.0 / n_classes) | (peak > eta)
    pseudo = probs.argmax(axis=1)
    return CleanMask(mask=mask, eta=eta, iteration=iteration), pseudo


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
