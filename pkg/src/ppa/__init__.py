"""Group-robust linear probing over precomputed feature vectors.

Project out class-proxy directions to train a deliberately biased head,
infer pseudo-groups from its mistakes, probe group targets with a prior
offset, and aggregate group weights back into a class head.
"""

from .data import (
    ClassProxyMatrix,
    ContainerError,
    FeatureDataset,
    GroupPrior,
    SyntheticSpec,
    ValidationError,
    balanced_bayes_worst_group_accuracy,
    build_preset,
    empirical_class_prior,
    generate_synthetic,
    inject_pseudo_label_noise,
    load_dataset,
    load_proxies,
    save_dataset,
    save_proxies,
)
from .evaluation import EvalReport, IdentificationReport, evaluate, identification_quality, select_model
from .pipeline import (
    DebiasedClassifier,
    PipelineRun,
    PseudoGrouping,
    infer_pseudo_groups,
    run_ppa,
    train_biased,
    train_debiased,
    train_erm,
    train_gt_gla,
    train_jtt,
)
from .probe import (
    DivergenceError,
    LinearScorer,
    TrainConfig,
    ce_loss,
    gla_loss,
    la_loss,
    load_model,
    save_model,
    train,
)
from .projection import ProjectionOperator, build_projection, project_features

__version__ = "0.1.0"
