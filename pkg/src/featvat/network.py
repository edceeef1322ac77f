"""Adversarial adaptation network over frame-feature sequences.

The trainable stack:

    spatial module    per-frame MLP turning input features into task
                      features (one hidden layer, relu)
    relation modules  for each configured order n, every contiguous
                      time-ordered window of n frames is concatenated and
                      passed through that order's MLP; all window outputs
                      (all orders) are summed into one video feature
    classifier        single affine layer + softmax over classes
    discriminators    2-way softmax MLPs fed through a gradient reversal
                      layer at three levels: per-frame task features,
                      per-window relation features, and the video feature

Parameter count is a closed-form function of the config:

    spatial:      D_in*H_s + H_s
    relation:     sum over orders n of (n*H_s*H_r + H_r)
    classifier:   H_r*K + K
    discriminators (spatial, relation, temporal):
                  (F*H_d + H_d + H_d*2 + 2) with F = H_s, H_r, H_r

Checkpoint container (FVCK, little-endian):

    magic "FVCK", version u32 = 1, tensor count u64, then per tensor:
    name length u16, UTF-8 name, rank u8, extents u64 each, float64 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError
from .rng import STREAM_INIT, make_rng
from .tensor import Tensor, concat, grl, relu, reshape, softmax

CKPT_MAGIC = b"FVCK"
CKPT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    feature_dim: int = 16
    num_classes: int = 4
    frames: int = 5
    relation_orders: tuple[int, ...] = (2, 3, 4, 5)
    hidden_spatial: int = 64
    hidden_relation: int = 64
    hidden_discriminator: int = 64

    def validate(self) -> "NetworkConfig":
        if self.feature_dim < 1 or self.num_classes < 2 or self.frames < 2:
            raise ConfigError(
                f"invalid dims: feature_dim={self.feature_dim} "
                f"num_classes={self.num_classes} frames={self.frames}"
            )
        orders = tuple(self.relation_orders)
        if not orders:
            raise ConfigError("relation_orders must be non-empty")
        for n in orders:
            if not 2 <= n <= self.frames:
                raise ConfigError(
                    f"relation order {n} outside [2, {self.frames}]"
                )
        if len(set(orders)) != len(orders):
            raise ConfigError(f"duplicate relation orders in {orders}")
        if min(self.hidden_spatial, self.hidden_relation, self.hidden_discriminator) < 1:
            raise ConfigError("hidden widths must be positive")
        return self

    def window_count(self) -> int:
        return sum(self.frames - n + 1 for n in self.relation_orders)

    def parameter_count(self) -> int:
        d, hs, hr, hd = (self.feature_dim, self.hidden_spatial,
                         self.hidden_relation, self.hidden_discriminator)
        k = self.num_classes
        total = d * hs + hs
        total += sum(n * hs * hr + hr for n in self.relation_orders)
        total += hr * k + k
        for feat in (hs, hr, hr):
            total += feat * hd + hd + hd * 2 + 2
        return total


@dataclass
class Network:
    cfg: NetworkConfig
    params: dict[str, Tensor]

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}


def _param_shapes(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in their canonical (creation) order."""
    hs, hr, hd = cfg.hidden_spatial, cfg.hidden_relation, cfg.hidden_discriminator
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("g_sf/w", (cfg.feature_dim, hs)),
        ("g_sf/b", (hs,)),
    ]
    for n in sorted(cfg.relation_orders):
        shapes.append((f"g_rel/n{n}/w", (n * hs, hr)))
        shapes.append((f"g_rel/n{n}/b", (hr,)))
    shapes.append(("g_y/w", (hr, cfg.num_classes)))
    shapes.append(("g_y/b", (cfg.num_classes,)))
    for prefix, feat in (("d_sp", hs), ("d_rel", hr), ("d_tmp", hr)):
        shapes.append((f"{prefix}/w1", (feat, hd)))
        shapes.append((f"{prefix}/b1", (hd,)))
        shapes.append((f"{prefix}/w2", (hd, 2)))
        shapes.append((f"{prefix}/b2", (2,)))
    return shapes


def init(cfg: NetworkConfig, seed: int) -> Network:
    """Scaled-uniform fan-in weights (uniform in +-sqrt(6/fan_in)), zero biases."""
    cfg.validate()
    rng = make_rng(seed, STREAM_INIT)
    params: dict[str, Tensor] = {}
    for name, shape in _param_shapes(cfg):
        if name.rsplit("/", 1)[-1].startswith("b"):
            arr = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(arr, requires_grad=True)
    return Network(cfg, params)


def network_from_arrays(cfg: NetworkConfig, arrays: dict[str, np.ndarray],
                        requires_grad: bool = False) -> Network:
    """Build a network from named arrays, validating names and shapes."""
    cfg.validate()
    expected = dict(_param_shapes(cfg))
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise ConfigError(
            f"parameter names mismatch: missing {missing}, unexpected {extra}"
        )
    params = {}
    for name, shape in expected.items():
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != shape:
            raise ConfigError(
                f"parameter {name} has shape {arr.shape}, expected {shape}"
            )
        params[name] = Tensor(arr, requires_grad=requires_grad)
    return Network(cfg, params)


@dataclass
class BatchOutputs:
    frame_features: Tensor  # (B, T, H_s)
    relation_features: Tensor  # (B, W, H_r)
    video_features: Tensor  # (B, H_r)
    class_probs: Tensor  # (B, K)
    domain_spatial: Tensor  # (B, T, 2)
    domain_relation: Tensor  # (B, W, 2)
    domain_temporal: Tensor  # (B, 2)


def _check_batch(cfg: NetworkConfig, x: Tensor) -> tuple[int, int, int]:
    if x.data.ndim != 3:
        raise ConfigError(f"batch must be (B, T, D), got shape {x.shape}")
    b, t, d = x.data.shape
    if t != cfg.frames or d != cfg.feature_dim:
        raise ConfigError(
            f"batch shape (B={b}, T={t}, D={d}) does not match config "
            f"(T={cfg.frames}, D={cfg.feature_dim})"
        )
    return b, t, d


def _video_path(net: Network, x: Tensor):
    """Shared forward through spatial and relation modules.

    Returns (per-frame task features flattened to (B*T, H_s), the same as
    (B, T, H_s), the list of (B, H_r) window outputs, and the (B, H_r)
    video feature).
    """
    cfg = net.cfg
    b, t, _ = _check_batch(cfg, x)
    p = net.params
    flat = reshape(x, (b * t, cfg.feature_dim))
    t_flat = relu(flat @ p["g_sf/w"] + p["g_sf/b"])
    t_seq = reshape(t_flat, (b, t, cfg.hidden_spatial))
    window_outs: list[Tensor] = []
    for n in sorted(cfg.relation_orders):
        w, bias = p[f"g_rel/n{n}/w"], p[f"g_rel/n{n}/b"]
        for start in range(t - n + 1):
            window = reshape(t_seq[:, start:start + n, :], (b, n * cfg.hidden_spatial))
            window_outs.append(relu(window @ w + bias))
    video = window_outs[0]
    for out in window_outs[1:]:
        video = video + out
    return t_flat, t_seq, window_outs, video


def forward_classifier(net: Network, x) -> Tensor:
    """Class distribution from the classification path only (no discriminators)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    _, _, _, video = _video_path(net, x)
    return softmax(video @ net.params["g_y/w"] + net.params["g_y/b"])


def _discriminate(net: Network, prefix: str, h: Tensor) -> Tensor:
    p = net.params
    hidden = relu(h @ p[f"{prefix}/w1"] + p[f"{prefix}/b1"])
    return softmax(hidden @ p[f"{prefix}/w2"] + p[f"{prefix}/b2"])


def forward(net: Network, batch, beta: float) -> BatchOutputs:
    """Full forward pass; beta scales the gradient reversal into the extractors."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    cfg = net.cfg
    b, t, _ = _check_batch(cfg, x)
    t_flat, t_seq, window_outs, video = _video_path(net, x)
    class_probs = softmax(video @ net.params["g_y/w"] + net.params["g_y/b"])

    w_total = len(window_outs)
    dom_spatial = reshape(_discriminate(net, "d_sp", grl(t_flat, beta)), (b, t, 2))
    rel_stack = reshape(concat(window_outs), (b * w_total, cfg.hidden_relation))
    dom_relation = reshape(_discriminate(net, "d_rel", grl(rel_stack, beta)), (b, w_total, 2))
    dom_temporal = _discriminate(net, "d_tmp", grl(video, beta))

    return BatchOutputs(
        frame_features=t_seq,
        relation_features=reshape(concat(window_outs), (b, w_total, cfg.hidden_relation)),
        video_features=video,
        class_probs=class_probs,
        domain_spatial=dom_spatial,
        domain_relation=dom_relation,
        domain_temporal=dom_temporal,
    )


# ---------------------------------------------------------------------------
# FVCK checkpoint container

_CKPT_HEADER = struct.Struct("<4sIQ")


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    payload = bytearray()
    payload += _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(tensors))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        payload += struct.pack("<H", len(encoded))
        payload += encoded
        payload += struct.pack("<B", arr.ndim)
        for extent in arr.shape:
            payload += struct.pack("<Q", extent)
        payload += arr.astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(payload))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _CKPT_HEADER.size:
        raise CorruptionError(
            f"file too short for checkpoint header ({len(blob)} bytes)", offset=len(blob)
        )
    magic, version, count = _CKPT_HEADER.unpack_from(blob, 0)
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = _CKPT_HEADER.size
    tensors: dict[str, np.ndarray] = {}

    def need(nbytes: int, what: str):
        nonlocal offset
        if offset + nbytes > len(blob):
            raise CorruptionError(
                f"truncated checkpoint: {what} at byte offset {offset}", offset=offset
            )

    for i in range(count):
        need(2, f"name length of tensor {i}")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        need(name_len, f"name of tensor {i}")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        need(1, f"rank of tensor {name}")
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        need(8 * rank, f"extents of tensor {name}")
        shape = struct.unpack_from(f"<{rank}Q", blob, offset) if rank else ()
        offset += 8 * rank
        size = int(np.prod(shape)) if rank else 1
        need(8 * size, f"values of tensor {name}")
        values = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).copy()
        offset += 8 * size
        tensors[name] = values.reshape(shape)
    if offset != len(blob):
        raise CorruptionError(
            f"{len(blob) - offset} trailing bytes after last tensor", offset=offset
        )
    return tensors
