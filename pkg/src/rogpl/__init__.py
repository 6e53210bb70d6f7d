"""Robust open-set node classification on noisy graphs.

The pipeline alternates two phases over a GCN latent space: label-propagation
denoising that keeps only reliably-labeled training nodes, and region-based
prototype learning that represents each known class by one trainable interior
prototype plus border prototypes harvested from mixed clusters. Test nodes
whose prototype-similarity confidence falls below a threshold are rejected as
UNKNOWN.
"""

from .graph import (
    UNLABELED,
    DatasetError,
    Graph,
    SplitSpec,
    build_adjacency,
    load_dataset,
    normalize_adjacency,
    save_dataset,
    split_nodes,
    spmm,
)
from .encoder import AdamState, ForwardCache, GcnParams, adam_step, backward, forward, init_params
from .denoise import (
    AffinityGraph,
    CleanMask,
    SoftLabels,
    assemble_seed_labels,
    build_knn_affinity,
    propagate_labels,
    select_clean,
)
from .prototypes import (
    ClusterAssignment,
    PrototypePool,
    classification_loss,
    classify,
    cluster_regions,
    compute_border_prototypes,
    diversity_loss,
    init_interior,
    score,
    score_batch,
    scoring_backward,
    update_interior,
)
from .pipeline import (
    UNKNOWN,
    AblationFlags,
    Model,
    OpenSetPredictions,
    TrainConfig,
    predict,
    train,
)
from .model_io import ModelFormatError, load_model, save_model
from .metrics import Metrics, auroc, macro_f1
from .bench import (
    NoiseSpec,
    NoisyDataset,
    build_near_ood_scenario,
    build_scenario,
    evaluate,
    inject_far_ood,
    inject_ind_noise,
    run_experiment,
)

__version__ = "0.1.0"
