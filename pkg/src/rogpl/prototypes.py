"""Region-based prototype learning: clustering, scoring, and the two losses.

Each known class is represented by one trainable interior prototype plus any
number of border prototypes. Borders are class-conditional means harvested
from K-means clusters that mix classes; they are recomputed buffers, never
trained. Class scores are the per-class maximum cosine similarity between a
latent vector and that class's prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClusterAssignment:
    """K-means partition of the clean latent vectors with class bookkeeping.

    ``cluster_class[k]`` is the shared label of a homogeneous cluster and -1
    for mixed ones; ``members_by_class[k]`` maps class id -> member indices
    (into the clustered array) for every class present in cluster ``k``.
    """

    cluster_of: np.ndarray
    n_clusters: int
    homogeneous: np.ndarray
    cluster_class: np.ndarray
    members_by_class: list[dict[int, np.ndarray]]
    centers: np.ndarray
    sse_history: list[float] = field(default_factory=list)


@dataclass
class PrototypePool:
    """Interior prototype matrix (C x D, trainable) plus per-class border lists."""

    interior: np.ndarray
    border: list[np.ndarray]        # per class: (n_border_c, D), possibly empty
    border_clusters: list[np.ndarray]  # per class: source cluster id of each border

    @classmethod
    def interior_only(cls, interior: np.ndarray) -> "PrototypePool":
        c, d = interior.shape
        return cls(interior=interior,
                   border=[np.zeros((0, d)) for _ in range(c)],
                   border_clusters=[np.zeros(0, dtype=np.int64) for _ in range(c)])

    @property
    def n_classes(self) -> int:
        return self.interior.shape[0]

    def class_stack(self, c: int) -> np.ndarray:
        """All prototypes of class ``c``, interior first."""
        return np.vstack([self.interior[c:c + 1], self.border[c]])


def init_interior(n_classes: int, dim: int, seed: int) -> np.ndarray:
    """He-initialized interior prototype matrix."""
    rng = np.random.default_rng(seed)
    interior = rng.normal(0.0, np.sqrt(2.0 / dim), size=(n_classes, dim))
    if not interior.any(axis=1).all():  # pragma: no cover - probability zero
        raise RuntimeError("degenerate all-zero prototype row")
    return interior


# ---------------------------------------------------------------------------
# Region discovery


def cluster_regions(z_clean: np.ndarray, labels: np.ndarray, k_clusters: int,
                    seed: int, max_iter: int = 100) -> ClusterAssignment:
    """Lloyd's K-means with k-means++ seeding over the clean latent vectors.

    Within-cluster SSE is recorded per iteration (non-increasing); clusters
    that empty out are re-seeded at the point farthest from its assigned
    center. Homogeneity flags come from the hard pseudo-labels.
    """
    z_clean = np.asarray(z_clean, dtype=np.float64)
    n = z_clean.shape[0]
    if n < k_clusters:
        raise ValueError(f"{n} clean nodes < {k_clusters} clusters")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(z_clean, k_clusters, rng)

    sse_history: list[float] = []
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _sq_dists(z_clean, centers)
        new_assign = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), new_assign]
        for k in range(k_clusters):
            if not (new_assign == k).any():
                far = int(point_d2.argmax())
                centers[k] = z_clean[far]
                new_assign[far] = k
                point_d2[far] = 0.0
        sse_history.append(float(point_d2.sum()))
        if (new_assign == assign).all():
            break
        assign = new_assign
        for k in range(k_clusters):
            members = assign == k
            if members.any():
                centers[k] = z_clean[members].mean(axis=0)

    homogeneous = np.zeros(k_clusters, dtype=bool)
    cluster_class = np.full(k_clusters, -1, dtype=np.int64)
    members_by_class: list[dict[int, np.ndarray]] = []
    for k in range(k_clusters):
        ids = np.flatnonzero(assign == k)
        classes = np.unique(labels[ids])
        members_by_class.append({int(c): ids[labels[ids] == c] for c in classes})
        if classes.size == 1:
            homogeneous[k] = True
            cluster_class[k] = classes[0]
    return ClusterAssignment(cluster_of=assign, n_clusters=k_clusters,
                             homogeneous=homogeneous, cluster_class=cluster_class,
                             members_by_class=members_by_class, centers=centers,
                             sse_history=sse_history)


def _kmeans_pp_init(z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = z.shape[0]
    centers = np.empty((k, z.shape[1]))
    centers[0] = z[rng.integers(n)]
    d2 = _sq_dists(z, centers[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a chosen center
            centers[j] = z[rng.integers(n)]
            continue
        idx = rng.choice(n, p=d2 / total)
        centers[j] = z[idx]
        d2 = np.minimum(d2, _sq_dists(z, centers[j:j + 1]).ravel())
    return centers


def _sq_dists(z: np.ndarray, centers: np.ndarray) -> np.ndarray:
    zz = (z * z).sum(axis=1, keepdims=True)
    cc = (centers * centers).sum(axis=1)
    return np.maximum(zz + cc - 2.0 * (z @ centers.T), 0.0)


def compute_border_prototypes(ca: ClusterAssignment, z: np.ndarray
                              ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Class-conditional mean vectors from every non-homogeneous cluster.

    Returns per-class arrays of border vectors plus the source cluster id of
    each, ordered by (cluster id, class id). Homogeneous clusters emit
    nothing.
    """
    n_classes = int(max((c for m in ca.members_by_class for c in m), default=-1)) + 1
    per_class: list[list[np.ndarray]] = [[] for _ in range(n_classes)]
    src: list[list[int]] = [[] for _ in range(n_classes)]
    for k in range(ca.n_clusters):
        if ca.homogeneous[k]:
            continue
        for c, ids in sorted(ca.members_by_class[k].items()):
            per_class[c].append(z[ids].mean(axis=0))
            src[c].append(k)
    dim = z.shape[1]
    border = [np.vstack(v) if v else np.zeros((0, dim)) for v in per_class]
    clusters = [np.asarray(s, dtype=np.int64) for s in src]
    return border, clusters


# ---------------------------------------------------------------------------
# Scoring


def score(z_i: np.ndarray, pool: PrototypePool) -> np.ndarray:
    """Per-class maximum cosine similarity between ``z_i`` and the prototypes."""
    z_i = np.asarray(z_i, dtype=np.float64)
    if np.linalg.norm(z_i) == 0:
        raise ValueError("zero-norm input vector")
    scores, _ = score_batch(z_i[None, :], pool)
    return scores[0]


def score_batch(z: np.ndarray, pool: PrototypePool, allow_zero: bool = False
                ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized scoring.

    Returns ``(scores, route)``: scores[i, c] is the class-c similarity of
    row i, route[i, c] the index of the prototype that achieved it within the
    class stack (0 = interior; ties resolve to the interior). Zero-norm rows
    are an error unless ``allow_zero``, in which case they score 0 for every
    class (the training loop can transiently produce exact-zero latents).
    """
    z = np.asarray(z, dtype=np.float64)
    z_norm = np.linalg.norm(z, axis=1)
    zero = z_norm == 0
    if zero.any() and not allow_zero:
        raise ValueError("zero-norm input vector")
    safe_norm = np.where(zero, 1.0, z_norm)
    n, n_classes = z.shape[0], pool.n_classes
    scores = np.empty((n, n_classes))
    route = np.zeros((n, n_classes), dtype=np.int64)
    for c in range(n_classes):
        protos = pool.class_stack(c)
        p_norm = np.linalg.norm(protos, axis=1)
        if (p_norm == 0).any():
            raise ValueError(f"zero-norm prototype in class {c}")
        cos = (z @ protos.T) / np.outer(safe_norm, p_norm)
        route[:, c] = cos.argmax(axis=1)
        scores[:, c] = cos[np.arange(n), route[:, c]]
    return scores, route


def classify(score_vec: np.ndarray) -> int:
    """Predicted class: argmax score, lowest class id on ties."""
    return int(np.argmax(score_vec))


# ---------------------------------------------------------------------------
# Losses and gradients


def classification_loss(scores: np.ndarray, labels: np.ndarray,
                        temperature: float) -> tuple[float, np.ndarray]:
    """Temperature-scaled softmax cross-entropy over the class scores.

    Returns the mean loss and its exact gradient with respect to ``scores``.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    n = scores.shape[0]
    logits = scores / temperature
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = -float(log_probs[np.arange(n), labels].mean())
    probs = np.exp(log_probs)
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= temperature * n
    return loss, grad


def diversity_loss(p_int: np.ndarray) -> tuple[float, np.ndarray]:
    """Orthogonality penalty ``||P P^T - I||_F^2`` with its gradient."""
    gram = p_int @ p_int.T - np.eye(p_int.shape[0])
    loss = float((gram * gram).sum())
    grad = 4.0 * gram @ p_int
    return loss, grad


def scoring_backward(z: np.ndarray, pool: PrototypePool, route: np.ndarray,
                     grad_scores: np.ndarray,
                     proto_sample_mask: np.ndarray | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate score gradients through the max-of-cosines scoring.

    Each (sample, class) gradient flows to exactly the prototype selected in
    ``route``. Returns gradients for ``z`` (from every sample) and for the
    interior matrix. ``proto_sample_mask`` (n x C bool) restricts which
    (sample, class) terms may contribute to the interior gradient — border
    prototypes are buffers and never receive gradient. Zero-norm rows carry
    zero gradient (matching their zero score under ``allow_zero``).
    """
    n, n_classes = grad_scores.shape
    z_norm = np.linalg.norm(z, axis=1)
    zero = z_norm == 0
    z_norm = np.where(zero, 1.0, z_norm)
    grad_z = np.zeros_like(z)
    grad_interior = np.zeros_like(pool.interior)
    for c in range(n_classes):
        protos = pool.class_stack(c)
        p_norm = np.linalg.norm(protos, axis=1)
        sel = route[:, c]
        p_sel = protos[sel]
        pn_sel = p_norm[sel]
        cos = (z * p_sel).sum(axis=1) / (z_norm * pn_sel)
        g = np.where(zero, 0.0, grad_scores[:, c])
        # d cos / d z = p/(|z||p|) - cos * z/|z|^2
        grad_z += g[:, None] * (p_sel / (z_norm * pn_sel)[:, None]
                                - (cos / z_norm ** 2)[:, None] * z)
        to_interior = (sel == 0) & ~zero
        if proto_sample_mask is not None:
            to_interior = to_interior & proto_sample_mask[:, c]
        if to_interior.any():
            zi = z[to_interior]
            gi = g[to_interior]
            cos_i = cos[to_interior]
            zn_i = z_norm[to_interior]
            p0 = pool.interior[c]
            p0n = p_norm[0]
            # d cos / d p = z/(|z||p|) - cos * p/|p|^2
            grad_interior[c] = ((gi / (zn_i * p0n)) @ zi
                                - (gi * cos_i).sum() * p0 / p0n ** 2)
    return grad_z, grad_interior


def update_interior(p_int: np.ndarray, grad: np.ndarray, phi: float) -> np.ndarray:
    """Plain gradient step on the interior prototypes."""
    if phi < 0:
        raise ValueError("phi must be nonnegative")
    if not np.isfinite(grad).all():
        raise ValueError("non-finite prototype gradient")
    return p_int - phi * grad


def homogeneity_mask(ca: ClusterAssignment, n_samples: int,
                     n_classes: int) -> np.ndarray:
    """(n x C) mask: sample i may update class c's interior prototype iff it
    sits in a homogeneous cluster whose shared class is c."""
    mask = np.zeros((n_samples, n_classes), dtype=bool)
    for k in range(ca.n_clusters):
        if not ca.homogeneous[k]:
            continue
        c = int(ca.cluster_class[k])
        if 0 <= c < n_classes:
            mask[ca.cluster_of == k, c] = True
    return mask


def dump_prototypes(pool: PrototypePool, path: str) -> None:
    """Debug TSV: one prototype per row (interior rows use cluster_id -1)."""
    with open(path, "w") as f:
        dim = pool.interior.shape[1]
        cols = "\t".join(f"d{i+1}" for i in range(dim))
        f.write(f"class_id\tkind\tcluster_id\t{cols}\n")
        for c in range(pool.n_classes):
            vals = "\t".join(format(v, ".17g") for v in pool.interior[c])
            f.write(f"{c}\tinterior\t-1\t{vals}\n")
            for b, src in zip(pool.border[c], pool.border_clusters[c]):
                vals = "\t".join(format(v, ".17g") for v in b)
                f.write(f"{c}\tborder\t{int(src)}\t{vals}\n")
