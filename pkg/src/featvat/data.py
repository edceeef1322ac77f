"""Feature ingestion, per-vector standardization, and synthetic benchmarks.

Feature container (FVAT, little-endian throughout):

    magic   4 bytes ASCII "FVAT"
    version u32 = 1
    N       u64 sample count
    T       u32 frames per sample
    D       u32 feature dimension
    K       u32 number of classes
    then per sample:
        label   i32 (-1 = unlabeled)
        domain  u8  (0 = source, 1 = target)
        padding 3 zero bytes
        values  T*D float32, row-major (frame-major)

A line-delimited text twin exists for debugging; the binary form is
canonical.  Text files start with the header line

    FVAT-TEXT 1 <N> <T> <D> <K>

followed by N lines of "label,domain,v1,v2,...,v{T*D}".
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .errors import ConfigError, ContractError, CorruptionError, FormatError
from .rng import STREAM_DATA, make_rng

UNLABELED = -1

MAGIC = b"FVAT"
VERSION = 1
TEXT_HEADER = "FVAT-TEXT"

SIGMA_FLOOR = 1e-8


class Domain(IntEnum):
    SOURCE = 0
    TARGET = 1


@dataclass
class FeatureSequence:
    """One sample: T frame-feature vectors of dimension D."""

    frames: np.ndarray  # (T, D) float64
    label: int
    domain: Domain

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ContractError(f"frames must be (T, D), got shape {self.frames.shape}")
        self.label = int(self.label)
        self.domain = Domain(self.domain)


@dataclass
class Dataset:
    samples: list[FeatureSequence]
    num_classes: int
    frames_per_sample: int
    feature_dim: int
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    def validate(self) -> "Dataset":
        if self.num_classes < 1:
            raise ContractError(f"num_classes must be positive, got {self.num_classes}")
        for i, s in enumerate(self.samples):
            if s.frames.shape != (self.frames_per_sample, self.feature_dim):
                raise ContractError(
                    f"sample {i} has frame shape {s.frames.shape}, expected "
                    f"({self.frames_per_sample}, {self.feature_dim})"
                )
            if s.label != UNLABELED and not 0 <= s.label < self.num_classes:
                raise ContractError(
                    f"sample {i} has label {s.label} outside [0, {self.num_classes})"
                )
        return self

    def features(self) -> np.ndarray:
        """Stacked (N, T, D) array; empty datasets give a (0, T, D) array."""
        if not self.samples:
            return np.zeros((0, self.frames_per_sample, self.feature_dim))
        return np.stack([s.frames for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def domains(self) -> np.ndarray:
        return np.array([int(s.domain) for s in self.samples], dtype=np.int64)


# ---------------------------------------------------------------------------
# per-vector standardization


def zscore_frames(frames: np.ndarray) -> np.ndarray:
    """Standardize each frame vector to zero mean, unit variance.

    Statistics are computed per vector over its D entries, with the
    population standard deviation.  A sigma floor keeps constant vectors
    total: they map to all zeros.
    """
    frames = np.asarray(frames, dtype=np.float64)
    mean = frames.mean(axis=-1, keepdims=True)
    std = frames.std(axis=-1, keepdims=True)
    return (frames - mean) / np.maximum(std, SIGMA_FLOOR)


def zscore_normalize(x: FeatureSequence) -> FeatureSequence:
    return FeatureSequence(zscore_frames(x.frames), x.label, x.domain)


def normalize_dataset(ds: Dataset) -> Dataset:
    samples = [zscore_normalize(s) for s in ds.samples]
    return replace(ds, samples=samples, provenance=ds.provenance + "+zscore")


# ---------------------------------------------------------------------------
# FVAT container

_HEADER = struct.Struct("<4sIQIII")
_SAMPLE_HEAD = struct.Struct("<iB3x")


def save_features(ds: Dataset, path) -> None:
    ds.validate()
    payload = bytearray()
    payload += _HEADER.pack(MAGIC, VERSION, len(ds.samples), ds.frames_per_sample,
                            ds.feature_dim, ds.num_classes)
    for s in ds.samples:
        payload += _SAMPLE_HEAD.pack(s.label, int(s.domain))
        payload += s.frames.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(payload))


def load_features(path) -> Dataset:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] == MAGIC and not blob.startswith(TEXT_HEADER.encode()):
        return _load_binary(blob, str(path))
    return _load_text(blob, str(path))


def _load_binary(blob: bytes, provenance: str) -> Dataset:
    if len(blob) < _HEADER.size:
        raise CorruptionError(
            f"file too short for header ({len(blob)} bytes)", offset=len(blob)
        )
    magic, version, n, t, d, k = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}")
    if t < 1 or d < 1 or k < 1:
        raise FormatError(f"invalid header fields T={t} D={d} K={k}")
    offset = _HEADER.size
    frame_bytes = t * d * 4
    samples: list[FeatureSequence] = []
    for i in range(n):
        if offset + _SAMPLE_HEAD.size > len(blob):
            raise CorruptionError(
                f"truncated sample header for sample {i} at byte offset {offset}",
                offset=offset,
            )
        label, domain = _SAMPLE_HEAD.unpack_from(blob, offset)
        offset += _SAMPLE_HEAD.size
        if offset + frame_bytes > len(blob):
            raise CorruptionError(
                f"truncated payload for sample {i} at byte offset {offset}",
                offset=offset,
            )
        if label != UNLABELED and not 0 <= label < k:
            raise FormatError(f"sample {i} has label {label} outside [0, {k})")
        if domain not in (0, 1):
            raise FormatError(f"sample {i} has invalid domain byte {domain}")
        values = np.frombuffer(blob, dtype="<f4", count=t * d, offset=offset)
        offset += frame_bytes
        samples.append(
            FeatureSequence(values.astype(np.float64).reshape(t, d), label, Domain(domain))
        )
    if offset != len(blob):
        raise CorruptionError(
            f"{len(blob) - offset} trailing bytes after sample {n - 1}", offset=offset
        )
    return Dataset(samples, k, t, d, provenance).validate()


def save_features_text(ds: Dataset, path) -> None:
    ds.validate()
    lines = [f"{TEXT_HEADER} {VERSION} {len(ds.samples)} {ds.frames_per_sample} "
             f"{ds.feature_dim} {ds.num_classes}"]
    for s in ds.samples:
        # store the float32-rounded values so text and binary twins agree
        vals = s.frames.astype(np.float32).astype(np.float64).ravel()
        lines.append(",".join([str(s.label), str(int(s.domain))] + [repr(v) for v in vals]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _load_text(blob: bytes, provenance: str) -> Dataset:
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"not an FVAT file (bad magic and not text): {e}") from None
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(TEXT_HEADER):
        head = blob[:4]
        raise FormatError(f"bad magic {head!r}, expected {MAGIC!r} or '{TEXT_HEADER}'")
    header = lines[0].split()
    if len(header) != 6 or header[1] != str(VERSION):
        raise FormatError(f"bad text header {lines[0]!r}")
    n, t, d, k = (int(v) for v in header[2:])
    if len(lines) - 1 != n:
        raise CorruptionError(
            f"text file declares {n} records but has {len(lines) - 1}", offset=None
        )
    samples = []
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != 2 + t * d:
            raise CorruptionError(
                f"record {i} has {len(parts) - 2} values, expected {t * d}", offset=None
            )
        label, domain = int(parts[0]), int(parts[1])
        if label != UNLABELED and not 0 <= label < k:
            raise FormatError(f"sample {i} has label {label} outside [0, {k})")
        if domain not in (0, 1):
            raise FormatError(f"sample {i} has invalid domain {domain}")
        values = np.array([float(v) for v in parts[2:]], dtype=np.float64)
        samples.append(FeatureSequence(values.reshape(t, d), label, Domain(domain)))
    return Dataset(samples, k, t, d, provenance).validate()


# ---------------------------------------------------------------------------
# synthetic domain-shift benchmark


@dataclass(frozen=True)
class SyntheticConfig:
    """Gaussian class clusters with temporal drift, shifted for the target.

    The source domain draws, per class, a length-T sequence whose frame t
    is centered on mean_k + (t - (T-1)/2) * drift_k, so frame order carries
    class signal.  The target domain applies a fixed rotation in a seeded
    random 2-plane plus a translation to every frame vector.
    """

    num_classes: int = 4
    feature_dim: int = 16
    frames: int = 5
    train_per_class: int = 50
    test_per_class: int = 25
    rotation_deg: float = 45.0
    translation: float = 2.0
    noise_scale: float = 0.25
    class_scale: float = 0.5
    drift_scale: float = 0.1

    def validate(self) -> "SyntheticConfig":
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.feature_dim < 2:
            raise ConfigError(f"need feature_dim >= 2, got {self.feature_dim}")
        if self.frames < 2:
            raise ConfigError(f"need frames >= 2, got {self.frames}")
        if self.train_per_class < 2:
            raise ConfigError(
                f"need at least 2 training samples per class, got {self.train_per_class}"
            )
        if self.test_per_class < 1:
            raise ConfigError(f"need test_per_class >= 1, got {self.test_per_class}")
        if self.noise_scale < 0 or self.class_scale < 0 or self.drift_scale < 0:
            raise ConfigError("scales must be non-negative")
        return self


@dataclass
class DomainSplits:
    train: Dataset
    test: Dataset


def _orthonormal_pair(rng: np.random.Generator, dim: int) -> tuple[np.ndarray, np.ndarray]:
    e1 = rng.standard_normal(dim)
    e1 /= np.linalg.norm(e1)
    e2 = rng.standard_normal(dim)
    e2 -= (e2 @ e1) * e1
    e2 /= np.linalg.norm(e2)
    return e1, e2


def _apply_shift(frames: np.ndarray, e1, e2, theta_rad, translation, t_dir) -> np.ndarray:
    """Rotate every frame vector in the (e1, e2) plane, then translate."""
    a = frames @ e1
    b = frames @ e2
    c, s = np.cos(theta_rad), np.sin(theta_rad)
    rotated = (
        frames
        + np.multiply.outer(a * (c - 1.0) - b * s, e1)
        + np.multiply.outer(a * s + b * (c - 1.0), e2)
    )
    return rotated + translation * t_dir


def gen_synthetic(cfg: SyntheticConfig, seed: int) -> tuple[DomainSplits, DomainSplits]:
    """Deterministic (source, target) benchmark with train and test splits.

    Target training labels are stripped to UNLABELED; target test labels
    remain for evaluation.
    """
    cfg.validate()
    struct_rng = make_rng(seed, STREAM_DATA, 0)
    k, d, t = cfg.num_classes, cfg.feature_dim, cfg.frames
    means = cfg.class_scale * struct_rng.standard_normal((k, d))
    drifts = cfg.drift_scale * struct_rng.standard_normal((k, d))
    e1, e2 = _orthonormal_pair(struct_rng, d)
    t_dir = struct_rng.standard_normal(d)
    t_dir /= np.linalg.norm(t_dir)
    theta = np.deg2rad(cfg.rotation_deg)
    time_offsets = np.arange(t, dtype=np.float64) - (t - 1) / 2.0

    def draw_split(domain: Domain, split_id: int, per_class: int, labeled: bool) -> Dataset:
        rng = make_rng(seed, STREAM_DATA, int(domain) + 1, split_id)
        samples = []
        for cls in range(k):
            centers = means[cls] + np.multiply.outer(time_offsets, drifts[cls])  # (T, D)
            noise = cfg.noise_scale * rng.standard_normal((per_class, t, d))
            frames = centers[None, :, :] + noise
            if domain == Domain.TARGET:
                frames = _apply_shift(frames, e1, e2, theta, cfg.translation, t_dir)
            for j in range(per_class):
                label = cls if labeled else UNLABELED
                samples.append(FeatureSequence(frames[j], label, domain))
        name = f"synthetic(seed={seed},domain={domain.name},split={split_id})"
        return Dataset(samples, k, t, d, name).validate()

    source = DomainSplits(
        train=draw_split(Domain.SOURCE, 0, cfg.train_per_class, labeled=True),
        test=draw_split(Domain.SOURCE, 1, cfg.test_per_class, labeled=True),
    )
    target = DomainSplits(
        train=draw_split(Domain.TARGET, 0, cfg.train_per_class, labeled=False),
        test=draw_split(Domain.TARGET, 1, cfg.test_per_class, labeled=True),
    )
    return source, target


@dataclass
class Batch:
    """One training minibatch of stacked sequences."""

    features: np.ndarray  # (B, T, D)
    labels: np.ndarray  # (B,), -1 where unlabeled
    domains: np.ndarray  # (B,), 0 source / 1 target
