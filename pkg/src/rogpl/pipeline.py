"""End-to-end training loop and the thresholded open-set predictor.

Training alternates two phases on the subgraph induced by the train and
validation nodes: a periodic refresh (denoise the training labels, recluster
the clean latent vectors, rebuild border prototypes) and a per-epoch
full-batch gradient step on ``L = L_cls + lambda * L_div`` that updates the
encoder with Adam and the interior prototypes with a plain small-step rule.
During warm-up every training node counts as clean and scoring uses interior
prototypes only. The returned model is the snapshot with the best validation
macro-F1 over known classes among the epochs where the full method is active.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .denoise import (
    AffinityGraph,
    CleanMask,
    assemble_seed_labels,
    build_knn_affinity,
    propagate_labels,
    row_renormalize,
    select_clean,
)
from .encoder import AdamState, adam_step, backward, forward, init_params
from .graph import Graph, induced_subgraph, normalize_adjacency
from .metrics import UNKNOWN, macro_f1
from .prototypes import (
    PrototypePool,
    classification_loss,
    cluster_regions,
    compute_border_prototypes,
    diversity_loss,
    homogeneity_mask,
    init_interior,
    score_batch,
    scoring_backward,
    update_interior,
)


class TrainingError(RuntimeError):
    """Raised when training cannot proceed (collapsed clean set, divergence)."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    warmup_epochs: int = 20
    refresh_period: int = 5
    lr: float = 1e-3
    phi: float = 1e-4
    lambda_div: float = 1e-2
    temperature: float = 0.1
    alpha: float = 0.99
    beta: float = 3.0
    k_nn: int = 30
    eta: float = 1.0
    tau: float = 0.5
    k_clusters: int | None = None  # None -> 5 * n_classes
    hidden_dim: int = 128
    latent_dim: int = 128
    lp_tol: float = 1e-6
    lp_max_iter: int = 200
    weight_decay: float = 0.0  # decoupled decay on encoder weights (not biases)
    row_normalize_features: bool = False
    # raw dot-product neighbor selection is norm-biased: nodes with large
    # embeddings attract cross-class edges and the propagation never recovers;
    # cosine selection is the robust default (set False for raw dots)
    affinity_cosine: bool = True
    tau_sweep: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.lr, self.phi, self.temperature, self.beta) <= 0:
            raise ValueError("rates and temperature must be positive")
        if self.lambda_div < 0:
            raise ValueError("lambda_div must be nonnegative")
        if not 0.0 <= self.eta <= 1.0 or not 0.0 <= self.tau <= 1.0:
            raise ValueError("eta and tau must lie in [0, 1]")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must not exceed epochs")
        if self.refresh_period < 1:
            raise ValueError("refresh_period must be >= 1")


@dataclass(frozen=True)
class AblationFlags:
    """Switches for the ablation variants; all off reproduces the full method."""

    no_knn_graph: bool = False   # propagate over the original graph instead of kNN
    no_denoise: bool = False     # keep every training node, skip propagation
    no_region: bool = False      # no clustering, no borders, unmasked updates
    no_ldiv: bool = False        # drop the diversity term

    NAMES = ("no-gn", "no-denoise", "no-region", "no-ldiv")

    @classmethod
    def from_name(cls, name: str | None) -> "AblationFlags":
        if not name or name == "full":
            return cls()
        mapping = {
            "no-gn": cls(no_knn_graph=True),
            "no-denoise": cls(no_denoise=True),
            "no-region": cls(no_region=True),
            "no-ldiv": cls(no_ldiv=True),
        }
        if name not in mapping:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(mapping)}")
        return mapping[name]

    @property
    def name(self) -> str:
        for flag, name in zip(
                (self.no_knn_graph, self.no_denoise, self.no_region, self.no_ldiv),
                self.NAMES):
            if flag:
                return name
        return "full"


@dataclass
class Model:
    params: object
    pool: PrototypePool
    config: TrainConfig
    n_classes: int
    diagnostics: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    noise_config: dict | None = None
    clean_mask: np.ndarray | None = None  # over the training ids, final refresh


@dataclass
class OpenSetPredictions:
    labels: np.ndarray       # class id or UNKNOWN
    confidence: np.ndarray   # max of the temperature-softmaxed scores
    scores: np.ndarray       # raw per-class max cosine similarities


def _softmax_confidence(scores: np.ndarray, temperature: float) -> np.ndarray:
    logits = scores / temperature
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).max(axis=1)


def _prepare_features(x: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    if not cfg.row_normalize_features:
        return x
    sums = x.sum(axis=1, keepdims=True)
    return x / np.where(sums != 0, sums, 1.0)


def train(g: Graph, train_ids: np.ndarray, val_ids: np.ndarray,
          cfg: TrainConfig, variant: AblationFlags | None = None,
          log_path: str | None = None,
          diagnostics_path: str | None = None) -> Model:
    """Train on the subgraph induced by the train and validation nodes.

    Test nodes never participate: the propagation operator, the affinity
    graph, and every loss are computed without them. Deterministic for a
    fixed config seed; returns the best-validation snapshot.
    """
    variant = variant or AblationFlags()
    train_ids = np.asarray(train_ids, dtype=np.int64)
    val_ids = np.asarray(val_ids, dtype=np.int64)
    if train_ids.size == 0 or val_ids.size == 0:
        raise ValueError("train and validation sets must be non-empty")
    if (g.labels[train_ids] < 0).any():
        raise ValueError("all training nodes must carry labels")
    n_classes = g.n_known_classes
    n_train = train_ids.size
    k_clusters = cfg.k_clusters if cfg.k_clusters is not None else 5 * n_classes

    sub = induced_subgraph(g, np.concatenate([train_ids, val_ids]))
    x = _prepare_features(sub.features, cfg)
    a_hat = normalize_adjacency(sub)
    given = g.labels[train_ids].copy()
    val_labels = g.labels[val_ids].copy()
    train_adj = sub.adjacency[:n_train][:, :n_train].tocsr()

    params = init_params(x.shape[1], cfg.hidden_dim, cfg.latent_dim, cfg.seed)
    interior = init_interior(n_classes, cfg.latent_dim, cfg.seed + 1)
    pool = PrototypePool.interior_only(interior)
    adam = AdamState.fresh(params)
    lam = 0.0 if variant.no_ldiv else cfg.lambda_div

    clean = CleanMask(mask=np.ones(n_train, dtype=bool), eta=cfg.eta)
    pseudo = given.copy()
    clean_rows = np.arange(n_train)
    proto_mask = None
    refresh_count = 0
    mean_max_conf, cg_iters = 1.0, 0

    best: dict | None = None
    history: list[dict] = []
    diag_rows: list[str] = []

    for epoch in range(cfg.epochs):
        z, cache = forward(params, a_hat, x)
        warm = epoch < cfg.warmup_epochs
        # no_denoise keeps the every-epoch refresh cadence of warm-up so that
        # warmup_epochs == epochs and the no-denoise variant coincide exactly
        do_refresh = (warm or variant.no_denoise
                      or (epoch - cfg.warmup_epochs) % cfg.refresh_period == 0)
        if do_refresh:
            z_tr = z[:n_train]
            if warm or variant.no_denoise:
                clean = CleanMask(mask=np.ones(n_train, dtype=bool), eta=cfg.eta,
                                  iteration=refresh_count)
                pseudo = given.copy()
                mean_max_conf, cg_iters = 1.0, 0
            else:
                if variant.no_knn_graph:
                    w = AffinityGraph(matrix=train_adj, k_nn=0, beta=cfg.beta,
                                      zero_rows=np.zeros(0, dtype=np.int64))
                else:
                    z_aff = z_tr
                    if cfg.affinity_cosine:
                        norms = np.linalg.norm(z_tr, axis=1, keepdims=True)
                        z_aff = z_tr / np.where(norms > 0, norms, 1.0)
                    w = build_knn_affinity(z_aff, min(cfg.k_nn, n_train - 1), cfg.beta)
                scores_tr, _ = score_batch(z_tr, pool, allow_zero=True)
                seeds = assemble_seed_labels(given, clean, scores_tr, n_classes,
                                             cfg.temperature)
                y_bar = propagate_labels(w, seeds, cfg.alpha, cfg.lp_tol,
                                         cfg.lp_max_iter)
                clean, pseudo = select_clean(y_bar, given, cfg.eta,
                                             iteration=refresh_count)
                mean_max_conf = float(row_renormalize(y_bar.values).max(axis=1).mean())
                cg_iters = y_bar.cg_iterations
            if clean.n_clean < n_classes:
                raise TrainingError(
                    f"clean set collapsed to {clean.n_clean} nodes at epoch {epoch}; "
                    "eta is likely too high for this data")
            clean_rows = np.flatnonzero(clean.mask)
            if variant.no_region:
                pool = PrototypePool.interior_only(interior)
                proto_mask = None
            else:
                kc = min(k_clusters, clean_rows.size)
                assignment = cluster_regions(
                    z_tr[clean_rows], pseudo[clean_rows], kc,
                    seed=cfg.seed * 100003 + refresh_count)
                if not warm:
                    border, border_src = compute_border_prototypes(
                        assignment, z_tr[clean_rows])
                    pool = PrototypePool(
                        interior=interior,
                        border=_pad_classes(border, n_classes, cfg.latent_dim),
                        border_clusters=_pad_classes(border_src, n_classes, None))
                else:
                    # before denoising has vetted any labels, mixed clusters
                    # reflect label noise, and borders computed from them sit
                    # at the cluster means: both classes' max-similarity then
                    # saturates at the same value and learning stalls. Score
                    # against the interior prototypes until the clean set is
                    # trustworthy.
                    pool = PrototypePool.interior_only(interior)
                proto_mask = homogeneity_mask(assignment, clean_rows.size, n_classes)
            refresh_count += 1
        diag_rows.append(f"{epoch}\t{clean.n_clean}\t{n_train - clean.n_clean}"
                         f"\t{mean_max_conf:.6f}\t{cg_iters}")

        z_cln = z[:n_train][clean_rows]
        scores, routes = score_batch(z_cln, pool, allow_zero=True)
        l_cls, d_scores = classification_loss(scores, pseudo[clean_rows],
                                              cfg.temperature)
        l_div, d_div = diversity_loss(interior)
        total = l_cls + lam * l_div
        if not np.isfinite(total):
            raise TrainingError(f"loss diverged at epoch {epoch}")

        dz_cln, d_interior = scoring_backward(z_cln, pool, routes, d_scores,
                                              proto_sample_mask=proto_mask)
        dz = np.zeros_like(z)
        dz[clean_rows] = dz_cln
        grads = backward(cache, dz, params=params)
        params, adam = adam_step(params, grads, adam, cfg.lr)
        if cfg.weight_decay:
            decay = 1.0 - cfg.lr * cfg.weight_decay
            params = replace(params, w1=params.w1 * decay, w2=params.w2 * decay)
        interior = update_interior(interior, d_interior + lam * d_div, cfg.phi)
        pool = replace(pool, interior=interior)

        z_eval, _ = forward(params, a_hat, x)
        val_scores, _ = score_batch(z_eval[n_train:], pool, allow_zero=True)
        val_pred = val_scores.argmax(axis=1)
        val_conf = _softmax_confidence(val_scores, cfg.temperature)
        val_pred = np.where(val_conf < cfg.tau, UNKNOWN, val_pred)
        val_f1 = macro_f1(val_pred, val_labels, c_plus_one=False)

        history.append({"epoch": epoch, "loss": total, "l_cls": l_cls,
                        "l_div": l_div, "n_clean": clean.n_clean,
                        "val_macro_f1": val_f1})
        # warm-up snapshots are scaffolding (no denoising, no borders); the
        # selected model must come from epochs where the method is active,
        # unless the whole run is warm-up
        candidate = not warm or cfg.warmup_epochs >= cfg.epochs
        if candidate and (best is None or val_f1 > best["val_f1"]):
            best = {"val_f1": val_f1, "epoch": epoch, "params": params,
                    "pool": pool, "n_clean": clean.n_clean}

    if log_path:
        with open(log_path, "w") as f:
            for rec in history:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    if diagnostics_path:
        with open(diagnostics_path, "w") as f:
            f.write("epoch\tn_clean\tn_removed\tmean_max_confidence\tcg_iterations\n")
            f.write("\n".join(diag_rows) + "\n")

    model = Model(params=best["params"], pool=best["pool"], config=cfg,
                  n_classes=n_classes,
                  diagnostics={"best_epoch": best["epoch"],
                               "best_val_macro_f1": best["val_f1"],
                               "n_clean_final": clean.n_clean,
                               "variant": variant.name},
                  history=history,
                  clean_mask=clean.mask.copy())
    if cfg.tau_sweep:
        chosen = _sweep_tau(model, sub, x, n_train, val_labels)
        model.config = replace(cfg, tau=chosen)
        model.diagnostics["tau_swept"] = chosen
    return model


def _pad_classes(per_class: list, n_classes: int, dim: int | None) -> list:
    """Extend a per-class list to length n_classes with empty entries."""
    out = list(per_class)
    while len(out) < n_classes:
        out.append(np.zeros((0, dim)) if dim is not None
                   else np.zeros(0, dtype=np.int64))
    return out


def _sweep_tau(model: Model, sub: Graph, x: np.ndarray, n_train: int,
               val_labels: np.ndarray) -> float:
    """Pick tau from {0.1..0.9} by validation macro-F1 over known classes."""
    a_hat = normalize_adjacency(sub)
    z, _ = forward(model.params, a_hat, x)
    scores, _ = score_batch(z[n_train:], model.pool, allow_zero=True)
    conf = _softmax_confidence(scores, model.config.temperature)
    arg = scores.argmax(axis=1)
    best_tau, best_f1 = model.config.tau, -1.0
    for tau in [round(0.1 * i, 1) for i in range(1, 10)]:
        pred = np.where(conf < tau, UNKNOWN, arg)
        f1 = macro_f1(pred, val_labels, c_plus_one=False)
        if f1 > best_f1:
            best_tau, best_f1 = tau, f1
    return best_tau


def predict(model: Model, g: Graph, ids: np.ndarray) -> OpenSetPredictions:
    """Open-set predictions for ``ids``: argmax class when the softmaxed
    confidence reaches the model threshold, UNKNOWN otherwise."""
    ids = np.asarray(ids, dtype=np.int64)
    if g.features.shape[1] != model.params.w1.shape[0]:
        raise ValueError("feature width does not match the trained encoder")
    x = _prepare_features(g.features, model.config)
    a_hat = normalize_adjacency(g)
    z, _ = forward(model.params, a_hat, x)
    scores, _ = score_batch(z[ids], model.pool, allow_zero=True)
    confidence = _softmax_confidence(scores, model.config.temperature)
    labels = scores.argmax(axis=1).astype(np.int64)
    labels[confidence < model.config.tau] = UNKNOWN
    return OpenSetPredictions(labels=labels, confidence=confidence, scores=scores)
