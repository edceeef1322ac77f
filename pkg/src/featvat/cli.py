"""Command-line entry point.

Commands:

    gen-data   write the synthetic benchmark as four FVAT files
               (source_train, source_test, target_train, target_test)
    train      run training, writing metrics.csv and ckpt_final.fvck
    eval       accuracy of a checkpoint on a labeled FVAT file
    inspect    print header fields and statistics of FVAT/FVCK files

Common flags: --config PATH, --seed N, --set KEY=VALUE (repeatable),
--out DIR.  Exit codes: 0 ok, 2 config or contract error, 3 I/O or format
error, 4 numerical abort.

The metrics file starts with '# config {json}' followed by a CSV header
line; field order is featvat.trainer.METRIC_FIELDS.  Training rows leave
accuracy fields empty, evaluation rows leave loss fields empty.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from . import data as datamod
from . import network as netmod
from . import trainer as trainmod
from .errors import ConfigError, ContractError, FormatError, NumericalError

DATA_FILES = ("source_train", "source_test", "target_train", "target_test")


def _load_run_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load_config(getattr(args, "config", None))
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "source_only", False):
        overrides.append("train.source_only=true")
    if overrides:
        cfg = cfgmod.apply_overrides(cfg, overrides)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _load_run_config(args)
    out_dir = args.out or cfg.paths.data_dir
    source, target = datamod.gen_synthetic(cfg.synthetic, cfg.train.seed)
    splits = {
        "source_train": source.train,
        "source_test": source.test,
        "target_train": target.train,
        "target_test": target.test,
    }
    for name in DATA_FILES:
        ds = splits[name]
        path = os.path.join(out_dir, f"{name}.fvat")
        datamod.save_features(ds, path)
        labeled = sum(1 for s in ds.samples if s.label != datamod.UNLABELED)
        print(f"wrote {path}: N={len(ds)} T={ds.frames_per_sample} "
              f"D={ds.feature_dim} K={ds.num_classes} labeled={labeled}")
    return 0


def _load_split(data_dir: str, name: str) -> datamod.Dataset:
    return datamod.load_features(os.path.join(data_dir, f"{name}.fvat"))


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    data_dir = args.data or cfg.paths.data_dir
    out_dir = args.out or cfg.paths.out_dir
    source_train = _load_split(data_dir, "source_train")
    target_train = None
    if not cfg.train.source_only:
        target_train = _load_split(data_dir, "target_train")
    target_eval = None
    eval_path = os.path.join(data_dir, "target_test.fvat")
    if os.path.exists(eval_path):
        target_eval = datamod.load_features(eval_path)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    header = (f"# config {cfgmod.resolved_json(cfg)}",)
    started = time.perf_counter()
    state, _ = trainmod.train(
        source_train, target_train, cfg.train, cfg.network,
        target_eval=target_eval, metrics_path=metrics_path,
        metrics_header=header, checkpoint_dir=out_dir,
    )
    elapsed = time.perf_counter() - started

    ckpt_path = os.path.join(out_dir, "ckpt_final.fvck")
    netmod.save_checkpoint(ckpt_path, trainmod.checkpoint_tensors(state))
    print(f"trained {state.step} steps in {elapsed:.1f}s; "
          f"wrote {metrics_path} and {ckpt_path}")
    for split, label in (("source_test", "source test"), ("target_test", "target test")):
        path = os.path.join(data_dir, f"{split}.fvat")
        if not os.path.exists(path):
            continue
        ds = datamod.load_features(path)
        student = trainmod.evaluate(state, ds, use_ema=False)
        ema = trainmod.evaluate(state, ds, use_ema=True)
        print(f"{label} accuracy: student={student.accuracy:.4f} ema={ema.accuracy:.4f}")
    return 0


def _state_from_checkpoint(cfg: cfgmod.RunConfig, ckpt_path: str) -> trainmod.TrainState:
    tensors = netmod.load_checkpoint(ckpt_path)
    student = {k[len("student/"):]: v for k, v in tensors.items() if k.startswith("student/")}
    ema = {k[len("ema/"):]: v for k, v in tensors.items() if k.startswith("ema/")}
    if not student or not ema:
        raise FormatError(f"checkpoint {ckpt_path} lacks student/ or ema/ tensors")
    net = netmod.network_from_arrays(cfg.network, student, requires_grad=False)
    state = trainmod.TrainState(
        net=net, net_cfg=cfg.network, cfg=cfg.train, ema=ema,
        m={}, v={}, step=int(tensors.get("meta/step", np.array(0.0)).item()),
    )
    netmod.network_from_arrays(cfg.network, ema, requires_grad=False)  # shape check
    return state


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    state = _state_from_checkpoint(cfg, args.ckpt)
    ds = datamod.load_features(args.data)
    result = trainmod.evaluate(state, ds, use_ema=args.ema)
    which = "ema" if args.ema else "student"
    print(f"top-1 accuracy ({which}): {result.accuracy:.4f} on N={len(ds)}")
    for cls in sorted(result.per_class):
        print(f"class {cls}: accuracy={result.per_class[cls]:.4f} n={result.counts[cls]}")
    return 0


def _inspect_dataset(path: str) -> None:
    ds = datamod.load_features(path)
    labeled = sum(1 for s in ds.samples if s.label != datamod.UNLABELED)
    domains = ds.domains()
    print(f"{path}: FVAT N={len(ds)} T={ds.frames_per_sample} D={ds.feature_dim} "
          f"K={ds.num_classes} labeled={labeled} "
          f"source={int((domains == 0).sum())} target={int((domains == 1).sum())}")
    if len(ds):
        feats = ds.features()
        frame_means = feats.mean(axis=-1)
        frame_vars = feats.var(axis=-1)
        print(f"per-frame mean: avg={frame_means.mean():.6f} "
              f"max|.|={np.abs(frame_means).max():.6f}")
        print(f"per-frame variance: avg={frame_vars.mean():.6f} "
              f"min={frame_vars.min():.6f} max={frame_vars.max():.6f}")


def _inspect_checkpoint(path: str) -> None:
    tensors = netmod.load_checkpoint(path)
    print(f"{path}: FVCK tensors={len(tensors)}")
    for name in sorted(tensors):
        arr = tensors[name]
        print(f"{name}: shape={tuple(arr.shape)} mean={arr.mean():.6f} "
              f"std={arr.std():.6f}")


def cmd_inspect(args) -> int:
    with open(args.path, "rb") as f:
        magic = f.read(4)
    if magic == netmod.CKPT_MAGIC:
        _inspect_checkpoint(args.path)
    else:
        _inspect_dataset(args.path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featvat",
        description="Feature-space virtual adversarial training for "
                    "unsupervised domain adaptation on frame-feature sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="YAML config file (defaults when omitted)")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config leaf (repeatable)")
        p.add_argument("--out", help=out_help)

    p = sub.add_parser("gen-data", help="write the synthetic benchmark as FVAT files")
    common(p, "output directory (default: paths.data_dir)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train and write metrics + checkpoints")
    common(p, "run directory for metrics and checkpoints (default: paths.out_dir)")
    p.add_argument("--data", help="directory with the four FVAT files "
                                  "(default: paths.data_dir)")
    p.add_argument("--source-only", action="store_true",
                   help="classification-only baseline (no adaptation terms)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled FVAT file")
    common(p, "(unused)")
    p.add_argument("--ckpt", required=True, help="FVCK checkpoint path")
    p.add_argument("--data", required=True, help="labeled FVAT file")
    p.add_argument("--ema", action="store_true", help="use the EMA shadow weights")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="print header fields and statistics")
    p.add_argument("path", help="FVAT or FVCK file")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (ConfigError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
