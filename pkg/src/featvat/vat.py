"""Virtual adversarial training on feature sequences.

The smoothness penalty for a sample is the KL divergence between the class
distribution at the clean input and at the worst norm-bounded perturbation
of it (local distributional smoothness).  The worst direction is
approximated by power iteration: evaluate the gradient of the divergence
at a small probe offset along the current direction, normalize, repeat.
The probe scale xi is meaningful because inputs are standardized to unit
variance before any module sees them.

The returned perturbation is treated as a constant during the outer
gradient step, and the clean-branch prediction is gradient-detached, so
the regularizer only pushes the perturbed branch toward the current
prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Batch
from .errors import ConfigError, ContractError
from .losses import (LossWeights, attentive_entropy, conditional_entropy,
                     domain_discriminator_loss, masked_cross_entropy, _check_rows)
from .network import BatchOutputs, Network, forward_classifier
from .tensor import Tensor, stop_gradient, tmean, tsum

ZERO_GRAD_FLOOR = 1e-30


@dataclass(frozen=True)
class VatConfig:
    epsilon: float = 1.0
    lambda_vat: float = 0.01
    power_iterations: int = 1
    xi: float = 0.1

    def validate(self) -> "VatConfig":
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.xi <= 0:
            raise ConfigError(f"xi must be positive, got {self.xi}")
        if self.power_iterations < 1:
            raise ConfigError(
                f"power_iterations must be >= 1, got {self.power_iterations}"
            )
        if self.lambda_vat < 0:
            raise ConfigError(f"lambda_vat must be non-negative, got {self.lambda_vat}")
        return self


def kl_divergence(p, q) -> Tensor:
    """Per-row D_KL(p || q) = sum_k p_k (ln p_k - ln q_k), clamped logs."""
    p = p if isinstance(p, Tensor) else Tensor(p)
    q = q if isinstance(q, Tensor) else Tensor(q)
    if p.data.shape != q.data.shape:
        raise ContractError(
            f"kl_divergence shape mismatch: {p.shape} vs {q.shape}"
        )
    _check_rows(p, "kl_divergence p")
    _check_rows(q, "kl_divergence q")
    return tsum(p * (log(p) - log(q)), axis=-1)


def _sample_norms(d: np.ndarray) -> np.ndarray:
    """L2 norm over the flattened (T, D) entries of each sample, kept broadcastable."""
    return np.sqrt((d * d).sum(axis=(1, 2), keepdims=True))


def adversarial_perturbation(net: Network, x: np.ndarray, cfg: VatConfig,
                             rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Approximate worst-case perturbation per sample, norm exactly epsilon.

    Returns (r, fallback_count) where r has the shape of x and
    fallback_count is the number of sample-iterations that hit a flat
    region (zero gradient) and kept their previous random direction.
    """
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    clean = forward_classifier(net, Tensor(x)).data

    d = rng.standard_normal(x.shape)
    d = d / _sample_norms(d)
    fallbacks = 0
    for _ in range(cfg.power_iterations):
        probe = Tensor(cfg.xi * d, requires_grad=True)
        perturbed = forward_classifier(net, Tensor(x) + probe)
        divergence = tsum(kl_divergence(Tensor(clean), perturbed))
        divergence.backward()
        grad = probe.grad
        norms = _sample_norms(grad)
        flat = (norms < ZERO_GRAD_FLOOR).ravel()
        fallbacks += int(flat.sum())
        with np.errstate(invalid="ignore", divide="ignore"):
            candidate = grad / norms
        d = np.where(flat[:, None, None], d, candidate)
    return cfg.epsilon * d, fallbacks


def lds_value(net: Network, x: np.ndarray, r: np.ndarray) -> Tensor:
    """Mean KL between detached clean predictions and predictions at x + r.

    r is a constant here: gradients flow to the network parameters only
    through the perturbed branch.
    """
    x = np.asarray(x, dtype=np.float64)
    clean = stop_gradient(forward_classifier(net, Tensor(x)))
    perturbed = forward_classifier(net, Tensor(x + r))
    return tmean(kl_divergence(clean, perturbed))


def lds(net: Network, x: np.ndarray, cfg: VatConfig,
        rng: np.random.Generator) -> Tensor:
    """Local distributional smoothness of the batch (search + evaluate)."""
    r, _ = adversarial_perturbation(net, x, cfg, rng)
    return lds_value(net, x, r)


def mean_lds(net: Network, features: np.ndarray, cfg: VatConfig,
             rng: np.random.Generator) -> float:
    """Measurement helper: mean LDS over a set of samples, no gradients kept."""
    return float(lds(net, features, cfg, rng).item())


def total_loss(outputs: BatchOutputs, batch: Batch, net: Network, w: LossWeights,
               cfg: VatConfig, rng: np.random.Generator, *,
               use_vat: bool = True, use_ce: bool = False,
               source_only: bool = False) -> tuple[Tensor, dict[str, float], int]:
    """Aggregate objective plus a labeled component breakdown.

    Components, each already weighted as added: source classification
    cross-entropy, domain discriminator loss, attentive entropy,
    lambda_vat * LDS over all samples (source and target), and the
    optional conditional-entropy term on target samples.  The breakdown
    values sum to the total exactly (same float additions).
    """
    domains = np.asarray(batch.domains, dtype=np.int64)
    src_mask = domains == 0
    if not src_mask.any():
        raise ContractError("training batch contains no source samples")

    total = masked_cross_entropy(outputs.class_probs, batch.labels, src_mask)
    components = {"cls": float(total.item())}
    fallbacks = 0

    adversarial = not source_only and bool(
        w.lambda_spatial or w.lambda_relation or w.lambda_temporal
    )
    if adversarial:
        dom = domain_discriminator_loss(outputs, domains, w)
        total = total + dom
        components["domain"] = float(dom.item())
    else:
        components["domain"] = 0.0

    if not source_only and w.lambda_attentive > 0:
        ae = attentive_entropy(outputs, w)
        total = total + ae
        components["attentive"] = float(ae.item())
    else:
        components["attentive"] = 0.0

    if not source_only and use_vat and cfg.lambda_vat > 0:
        r, fallbacks = adversarial_perturbation(net, batch.features, cfg, rng)
        vat_term = cfg.lambda_vat * lds_value(net, batch.features, r)
        total = total + vat_term
        components["vat"] = float(vat_term.item())
    else:
        components["vat"] = 0.0

    if not source_only and use_ce and w.lambda_ce > 0:
        ce = w.lambda_ce * conditional_entropy(outputs, domains)
        total = total + ce
        components["cond_entropy"] = float(ce.item())
    else:
        components["cond_entropy"] = 0.0

    components["total"] = float(total.item())
    return total, components, fallbacks
