"""Networks built from infinity-distance neurons: training, attacks and
certified robustness."""

from .attack import AttackConfig, EvalReport, evaluate, pgd_attack
from .certify import (Certificate, Interval, certify_batch, certify_composite,
                      certify_lipschitz, ibp_affine, ibp_margin_merge,
                      ibp_monotone, interval_from_lipschitz, margin)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (AugmentPolicy, Dataset, augment, load_cifar_binary,
                   load_dataset, load_idx, read_metrics, write_metrics)
from .estimator import LInfDistClassifier
from .layers import (AffineLayer, ConvLpDistLayer, LpDistLayer, MeanShiftNorm,
                     build_base_map, gaussian_init, identity_init)
from .losses import cross_entropy, hinge_loss, ibp_loss
from .network import Network, build_network, parse_arch
from .numerics import affine, batch_mean, pnorm_grad, stable_pnorm
from .optim import Adam, lp_weight_decay
from .schedules import TrainPlan, eps_schedule, lr_schedule, p_schedule
from .training import fit, train_epoch

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "EvalReport", "evaluate", "pgd_attack",
    "Certificate", "Interval", "certify_batch", "certify_composite",
    "certify_lipschitz", "ibp_affine", "ibp_margin_merge", "ibp_monotone",
    "interval_from_lipschitz", "margin",
    "load_checkpoint", "save_checkpoint",
    "AugmentPolicy", "Dataset", "augment", "load_cifar_binary",
    "load_dataset", "load_idx", "read_metrics", "write_metrics",
    "LInfDistClassifier",
    "AffineLayer", "ConvLpDistLayer", "LpDistLayer", "MeanShiftNorm",
    "build_base_map", "gaussian_init", "identity_init",
    "cross_entropy", "hinge_loss", "ibp_loss",
    "Network", "build_network", "parse_arch",
    "affine", "batch_mean", "pnorm_grad", "stable_pnorm",
    "Adam", "lp_weight_decay",
    "TrainPlan", "eps_schedule", "lr_schedule", "p_schedule",
    "fit", "train_epoch",
]
