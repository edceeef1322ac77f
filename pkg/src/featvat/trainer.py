"""Optimization loop: Adam updates, EMA shadow weights, evaluation, metrics.

Each step pairs a source minibatch with a target minibatch (the shorter
domain is cycled), runs the full forward pass, backpropagates the
aggregate objective, applies one Adam update with a constant learning rate
and no weight decay, then refreshes the exponential moving average of the
weights.  Evaluation can use either the student or the EMA shadow.

Metric records are line-delimited with a fixed field order (see
METRIC_FIELDS).  Training rows leave the accuracy fields empty; dedicated
evaluation rows leave the loss fields empty.  Records contain only
deterministic quantities so identical configs and seeds produce
byte-identical logs; wall-clock timing is reported separately by the CLI.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .data import Batch, Dataset, normalize_dataset, zscore_frames
from .errors import ConfigError, ContractError, NumericalError, TrainAbort
from .losses import LossWeights
from .network import Network, NetworkConfig, forward, forward_classifier, init, \
    network_from_arrays, save_checkpoint
from .rng import STREAM_SHUFFLE, STREAM_VAT, make_rng
from .tensor import Tensor
from .vat import VatConfig, total_loss

METRIC_FIELDS = ("step", "epoch", "loss_total", "loss_cls", "loss_domain",
                 "loss_attentive", "loss_vat", "loss_cond_entropy",
                 "vat_fallbacks", "acc_source", "acc_target")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_per_domain: int = 8
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_decay: float = 0.999
    seed: int = 0
    eval_every: int = 10
    checkpoint_every: int = 0
    grl_ramp: bool = False
    use_vat: bool = True
    use_ema_eval: bool = True
    use_zscore: bool = True
    use_ce: bool = False
    source_only: bool = False
    loss: LossWeights = field(default_factory=LossWeights)
    vat: VatConfig = field(default_factory=VatConfig)

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_per_domain < 1:
            raise ConfigError(f"batch_per_domain must be >= 1, got {self.batch_per_domain}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        self.loss.validate()
        self.vat.validate()
        return self


@dataclass
class TrainState:
    net: Network
    net_cfg: NetworkConfig
    cfg: TrainConfig
    ema: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    vat_fallbacks: int = 0
    history: list[dict] = field(default_factory=list)


def init_state(net_cfg: NetworkConfig, cfg: TrainConfig) -> TrainState:
    net = init(net_cfg, cfg.seed)
    zeros = {name: np.zeros_like(t.data) for name, t in net.params.items()}
    ema = {name: t.data.copy() for name, t in net.params.items()}
    return TrainState(net=net, net_cfg=net_cfg, cfg=cfg, ema=ema,
                      m=zeros, v={k: z.copy() for k, z in zeros.items()})


def adam_step(state: TrainState, grads: dict[str, np.ndarray | None],
              cfg: TrainConfig) -> TrainState:
    """One Adam update with bias correction; missing gradients count as zero."""
    t = state.step + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name in sorted(state.net.params):
        g = grads.get(name)
        if g is None:
            g = 0.0
        elif not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)
        state.net.params[name].data -= cfg.learning_rate * update
    state.step = t
    return state


def ema_update(state: TrainState, decay: float) -> TrainState:
    """shadow <- decay * shadow + (1 - decay) * student, every parameter."""
    for name, tensor in state.net.params.items():
        shadow = state.ema[name]
        shadow *= decay
        shadow += (1.0 - decay) * tensor.data
    return state


def effective_beta(cfg: TrainConfig, progress: float) -> float:
    """Constant reversal strength, or the standard sigmoid ramp over progress."""
    base = cfg.loss.grl_beta
    if not cfg.grl_ramp:
        return base
    return base * (2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0)


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[int, float]
    counts: dict[int, int]


def _predict(net: Network, features: np.ndarray, chunk: int = 512) -> np.ndarray:
    preds = []
    for start in range(0, len(features), chunk):
        probs = forward_classifier(net, Tensor(features[start:start + chunk]))
        preds.append(np.argmax(probs.data, axis=-1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _eval_net(state: TrainState, use_ema: bool) -> Network:
    arrays = state.ema if use_ema else {n: t.data for n, t in state.net.params.items()}
    return network_from_arrays(state.net_cfg, arrays, requires_grad=False)


def evaluate(state: TrainState, ds: Dataset, use_ema: bool) -> EvalResult:
    """Top-1 accuracy and per-class breakdown on a labeled dataset."""
    labels = ds.labels()
    if len(ds) == 0:
        raise ContractError("cannot evaluate an empty dataset")
    if np.any(labels < 0):
        raise ContractError("evaluation dataset has unlabeled samples")
    feats = ds.features()
    if state.cfg.use_zscore:
        feats = zscore_frames(feats)
    preds = _predict(_eval_net(state, use_ema), feats)
    correct = preds == labels
    per_class: dict[int, float] = {}
    counts: dict[int, int] = {}
    for cls in range(ds.num_classes):
        mask = labels == cls
        counts[cls] = int(mask.sum())
        per_class[cls] = float(correct[mask].mean()) if counts[cls] else float("nan")
    return EvalResult(float(correct.mean()), per_class, counts)


def _quick_accuracy(state: TrainState, feats: np.ndarray, labels: np.ndarray) -> float:
    preds = _predict(_eval_net(state, use_ema=False), feats)
    return float((preds == labels).mean())


def _format_record(record: dict) -> str:
    cells = []
    for name in METRIC_FIELDS:
        value = record.get(name)
        if value is None:
            cells.append("")
        elif isinstance(value, float):
            cells.append(repr(value))
        else:
            cells.append(str(value))
    return ",".join(cells)


class MetricWriter:
    """Append-only line writer; flushes every record so logs survive crashes."""

    def __init__(self, path=None, header_lines: tuple[str, ...] = ()):
        self._fh = None
        if path is not None:
            self._fh = open(path, "w")
            for line in header_lines:
                self._fh.write(line.rstrip("\n") + "\n")
            self._fh.write(",".join(METRIC_FIELDS) + "\n")
            self._fh.flush()

    def write(self, record: dict) -> None:
        if self._fh is not None:
            self._fh.write(_format_record(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _epoch_order(rng: np.random.Generator, n: int, needed: int) -> np.ndarray:
    return np.resize(rng.permutation(n), needed)


def checkpoint_tensors(state: TrainState) -> dict[str, np.ndarray]:
    tensors = {f"student/{n}": t.data for n, t in state.net.params.items()}
    tensors.update({f"ema/{n}": arr for n, arr in state.ema.items()})
    tensors["meta/step"] = np.array(float(state.step))
    return tensors


def train(source: Dataset, target: Dataset | None, cfg: TrainConfig,
          net_cfg: NetworkConfig, *, target_eval: Dataset | None = None,
          metrics_path=None, metrics_header: tuple[str, ...] = (),
          checkpoint_dir=None) -> tuple[TrainState, list[dict]]:
    """Run the adaptation (or source-only) loop; deterministic given seed.

    target may be omitted only in source_only mode.  Target training labels
    are ignored even if present.  target_eval, when given and labeled, adds
    diagnostic target accuracy at the evaluation cadence.
    """
    cfg.validate()
    net_cfg.validate()
    if len(source) == 0:
        raise ConfigError("source dataset is empty")
    adapting = not cfg.source_only
    if adapting and (target is None or len(target) == 0):
        raise ConfigError("adaptation training requires a non-empty target dataset")
    for name, ds in (("source", source), ("target", target)):
        if ds is None:
            continue
        if (ds.frames_per_sample, ds.feature_dim) != (net_cfg.frames, net_cfg.feature_dim):
            raise ConfigError(
                f"{name} dataset (T={ds.frames_per_sample}, D={ds.feature_dim}) does not "
                f"match network (T={net_cfg.frames}, D={net_cfg.feature_dim})"
            )
        if ds.num_classes != net_cfg.num_classes:
            raise ConfigError(
                f"{name} dataset has {ds.num_classes} classes, network expects "
                f"{net_cfg.num_classes}"
            )

    if cfg.use_zscore:
        source = normalize_dataset(source)
        target = normalize_dataset(target) if target is not None else None

    src_feats, src_labels = source.features(), source.labels()
    if adapting:
        tgt_feats = target.features()

    state = init_state(net_cfg, cfg)
    writer = MetricWriter(metrics_path, metrics_header)
    bs = cfg.batch_per_domain
    pool = max(len(source), len(target)) if adapting else len(source)
    steps_per_epoch = math.ceil(pool / bs)
    total_steps = max(cfg.epochs * steps_per_epoch, 1)

    eval_feats = eval_labels = None
    if target_eval is not None and len(target_eval) and not np.any(target_eval.labels() < 0):
        eval_feats = target_eval.features()
        if cfg.use_zscore:
            eval_feats = zscore_frames(eval_feats)
        eval_labels = target_eval.labels()

    try:
        for epoch in range(cfg.epochs):
            shuffle_rng = make_rng(cfg.seed, STREAM_SHUFFLE, epoch)
            src_order = _epoch_order(shuffle_rng, len(source), steps_per_epoch * bs)
            if adapting:
                tgt_order = _epoch_order(shuffle_rng, len(target), steps_per_epoch * bs)
            for si in range(steps_per_epoch):
                sel = slice(si * bs, (si + 1) * bs)
                ids_s = src_order[sel]
                if adapting:
                    ids_t = tgt_order[sel]
                    feats = np.concatenate([src_feats[ids_s], tgt_feats[ids_t]])
                    labels = np.concatenate(
                        [src_labels[ids_s], np.full(bs, -1, dtype=np.int64)]
                    )
                    domains = np.concatenate(
                        [np.zeros(bs, dtype=np.int64), np.ones(bs, dtype=np.int64)]
                    )
                else:
                    feats = src_feats[ids_s]
                    labels = src_labels[ids_s]
                    domains = np.zeros(len(ids_s), dtype=np.int64)
                batch = Batch(feats, labels, domains)

                beta = effective_beta(cfg, state.step / total_steps)
                try:
                    outputs = forward(state.net, Tensor(feats), beta)
                    total, components, fallbacks = total_loss(
                        outputs, batch, state.net, cfg.loss, cfg.vat,
                        make_rng(cfg.seed, STREAM_VAT, state.step),
                        use_vat=cfg.use_vat, use_ce=cfg.use_ce,
                        source_only=cfg.source_only,
                    )
                    total.backward()
                    grads = {n: t.grad for n, t in state.net.params.items()}
                    adam_step(state, grads, cfg)
                except NumericalError as err:
                    path = None
                    if checkpoint_dir is not None:
                        path = os.path.join(checkpoint_dir, "ckpt_abort.fvck")
                        save_checkpoint(path, checkpoint_tensors(state))
                    raise TrainAbort(
                        f"non-finite value at step {state.step}: {err}",
                        checkpoint_path=path,
                    ) from err
                ema_update(state, cfg.ema_decay)
                state.vat_fallbacks += fallbacks

                record = {
                    "step": state.step,
                    "epoch": epoch,
                    "loss_total": components["total"],
                    "loss_cls": components["cls"],
                    "loss_domain": components["domain"],
                    "loss_attentive": components["attentive"],
                    "loss_vat": components["vat"],
                    "loss_cond_entropy": components["cond_entropy"],
                    "vat_fallbacks": fallbacks,
                }
                state.history.append(record)
                writer.write(record)

            if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
                eval_record = {
                    "step": state.step,
                    "epoch": epoch,
                    "acc_source": _quick_accuracy(state, src_feats, src_labels),
                }
                if eval_feats is not None:
                    eval_record["acc_target"] = _quick_accuracy(
                        state, eval_feats, eval_labels
                    )
                state.history.append(eval_record)
                writer.write(eval_record)

            if (checkpoint_dir is not None and cfg.checkpoint_every > 0
                    and (epoch + 1) % cfg.checkpoint_every == 0):
                path = os.path.join(checkpoint_dir, f"ckpt_epoch{epoch + 1:05d}.fvck")
                save_checkpoint(path, checkpoint_tensors(state))
    finally:
        writer.close()

    return state, state.history
