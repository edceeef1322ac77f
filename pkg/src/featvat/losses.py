"""Scalar training objectives: entropy, classification, domain, attentive entropy.

All logarithms are natural, using the clamped log of the tensor engine, so
analytic test values are exact.  Distribution arguments are probability
rows (last axis sums to 1); callers that start from logits must apply
softmax first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .network import BatchOutputs
from .tensor import LOG_CLAMP, Tensor, log, stop_gradient, tmean, tsum

ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lambda_spatial: float = 0.5
    lambda_relation: float = 0.5
    lambda_temporal: float = 0.5
    lambda_attentive: float = 0.1
    lambda_ce: float = 0.0
    grl_beta: float = 1.0

    def validate(self) -> "LossWeights":
        for name in ("lambda_spatial", "lambda_relation", "lambda_temporal",
                     "lambda_attentive", "lambda_ce", "grl_beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        return self


def _check_rows(p: Tensor, what: str) -> None:
    sums = p.data.sum(axis=-1)
    if not np.all(np.abs(sums - 1.0) <= ROW_SUM_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ContractError(f"{what} rows must sum to 1 (worst deviation {worst:.3e})")


def entropy(p) -> Tensor:
    """Per-row entropy -sum_k p_k ln p_k. Shape drops the last axis."""
    p = p if isinstance(p, Tensor) else Tensor(p)
    _check_rows(p, "entropy input")
    return -tsum(p * log(p), axis=-1)


def entropy_values(p: np.ndarray) -> np.ndarray:
    """Plain-array entropy with the same clamp, for gradient-detached factors."""
    clamped = np.maximum(p, LOG_CLAMP)
    return -(p * np.log(clamped)).sum(axis=-1)


def cross_entropy(p, labels) -> Tensor:
    """Mean over rows of -ln p[label]."""
    p = p if isinstance(p, Tensor) else Tensor(p)
    _check_rows(p, "cross_entropy input")
    labels = np.asarray(labels, dtype=np.int64)
    k = p.data.shape[-1]
    if labels.ndim != 1 or labels.shape[0] != p.data.shape[0]:
        raise ContractError(
            f"labels shape {labels.shape} does not match {p.data.shape[0]} rows"
        )
    if np.any((labels < 0) | (labels >= k)):
        bad = int(np.argmax((labels < 0) | (labels >= k)))
        raise ContractError(f"label {labels[bad]} at row {bad} outside [0, {k})")
    onehot = np.eye(k)[labels]
    return tmean(-tsum(Tensor(onehot) * log(p), axis=-1))


def masked_cross_entropy(p: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean of -ln p[label] over rows where mask is true."""
    _check_rows(p, "cross_entropy input")
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ContractError("masked_cross_entropy over an empty selection")
    k = p.data.shape[-1]
    picked = labels[mask]
    if np.any((picked < 0) | (picked >= k)):
        raise ContractError(f"labels of selected rows outside [0, {k})")
    onehot = np.zeros(p.data.shape)
    onehot[np.nonzero(mask)[0], labels[mask]] = 1.0
    return tsum(-tsum(Tensor(onehot) * log(p), axis=-1)) / float(count)


def _domain_onehot(domains: np.ndarray, n: int) -> np.ndarray:
    domains = np.asarray(domains, dtype=np.int64)
    if domains.shape != (n,):
        raise ContractError(f"domain labels shape {domains.shape}, expected ({n},)")
    if np.any((domains < 0) | (domains > 1)):
        raise ContractError("domain labels must be 0 (source) or 1 (target)")
    return np.eye(2)[domains]


def _per_sample_domain_ce(dist: Tensor, onehot: np.ndarray) -> Tensor:
    """Cross-entropy against the sample's domain, averaged over any middle axis.

    dist is (B, 2) or (B, M, 2) where M indexes frames or windows; the
    one-hot target broadcasts across M.  Returns a (B,) tensor.
    """
    _check_rows(dist, "domain distribution")
    target = onehot if dist.data.ndim == 2 else onehot[:, None, :]
    ce = -tsum(Tensor(target) * log(dist), axis=-1)
    if dist.data.ndim == 3:
        ce = tmean(ce, axis=1)
    return ce


def domain_discriminator_loss(outputs: BatchOutputs, domains, w: LossWeights) -> Tensor:
    """Weighted domain cross-entropy, the value the discriminators minimize.

    Per sample: lambda_spatial * CE(spatial) + lambda_relation * CE(relation)
    + lambda_temporal * CE(temporal), averaged over the batch.  Spatial and
    relation terms average their per-frame and per-window cross-entropies
    within the sample.  The gradient reversal layer inside the forward pass
    is what turns this minimization adversarial for the feature extractors.
    """
    n = outputs.class_probs.data.shape[0]
    onehot = _domain_onehot(domains, n)
    sp = _per_sample_domain_ce(outputs.domain_spatial, onehot)
    rel = _per_sample_domain_ce(outputs.domain_relation, onehot)
    tmp = _per_sample_domain_ce(outputs.domain_temporal, onehot)
    per_sample = w.lambda_spatial * sp + w.lambda_relation * rel + w.lambda_temporal * tmp
    return tmean(per_sample)


def domain_loss(outputs: BatchOutputs, domains, w: LossWeights) -> Tensor:
    """Signed domain-alignment summary: the negated discriminator loss.

    Fully confused discriminators (uniform output everywhere) give
    -(lambda_spatial + lambda_relation + lambda_temporal) * ln 2.  The
    training objective adds domain_discriminator_loss, not this value; the
    sign here reports alignment (closer to 0 means the discriminators are
    winning).
    """
    return -domain_discriminator_loss(outputs, domains, w)


def attentive_entropy(outputs: BatchOutputs, w: LossWeights) -> Tensor:
    """Prediction entropy weighted by domain uncertainty.

    Per sample: lambda_attentive * (1 + H(domain_temporal)) * H(class_probs),
    averaged over the batch.  The attention factor is treated as a constant
    (no gradient flows through the domain branch here); otherwise the model
    could shrink this loss by making domain predictions confident.
    """
    attention = 1.0 + entropy_values(outputs.domain_temporal.data)
    return w.lambda_attentive * tmean(Tensor(attention) * entropy(outputs.class_probs))


def conditional_entropy(outputs: BatchOutputs, domains) -> Tensor:
    """Mean class-prediction entropy over target-domain samples; 0 if none."""
    domains = np.asarray(domains, dtype=np.int64)
    mask = (domains == 1).astype(np.float64)
    count = float(mask.sum())
    if count == 0:
        return Tensor(0.0)
    return tsum(entropy(outputs.class_probs) * Tensor(mask)) / count
