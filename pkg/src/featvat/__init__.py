"""Feature-space virtual adversarial training for unsupervised domain
adaptation on pre-extracted frame-feature sequences."""

from .config import PathsConfig, RunConfig, load_config
from .data import (Batch, Dataset, Domain, DomainSplits, FeatureSequence,
                   SyntheticConfig, UNLABELED, gen_synthetic, load_features,
                   normalize_dataset, save_features, zscore_normalize)
from .losses import LossWeights
from .network import BatchOutputs, Network, NetworkConfig, forward, forward_classifier, init
from .tensor import Tensor, grl, stop_gradient
from .trainer import TrainConfig, TrainState, evaluate, train
from .vat import VatConfig, adversarial_perturbation, kl_divergence, lds

__version__ = "0.1.0"

__all__ = [
    "Batch", "BatchOutputs", "Dataset", "Domain", "DomainSplits",
    "FeatureSequence", "LossWeights", "Network", "NetworkConfig",
    "PathsConfig", "RunConfig", "SyntheticConfig", "Tensor", "TrainConfig",
    "TrainState", "UNLABELED", "VatConfig", "adversarial_perturbation",
    "evaluate", "forward", "forward_classifier", "gen_synthetic", "grl",
    "init", "kl_divergence", "lds", "load_config", "load_features",
    "normalize_dataset", "save_features", "stop_gradient", "train",
    "zscore_normalize",
]
