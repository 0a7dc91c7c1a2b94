"""Command-line front end: reproducible experiments from flags to artifacts.

Four subcommands: `gen-data` writes a synthetic dataset, `train` runs one
configuration into an output directory (resolved config, checkpoints, epoch
log, predictions), `noise-sweep` trains a grid of (variant, noise level,
seed) cells and tabulates accuracies, and `analyze` inspects checkpoints
and prediction files. Every command that draws randomness takes --seed and
is bit-reproducible. SKGCN_THREADS caps sweep worker threads (default 1).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .analysis import (
    export_edges,
    misclassification_diff,
    residual_report,
    write_diff_csv,
)
from .data import (
    PreprocessConfig,
    load_manifest,
    load_split,
    prepare_dataset,
    synth_generate,
    write_dataset,
)
from .errors import ParseError, TrainingDiverged
from .graph import AdjacencyVariant, NoiseKind, NoiseSpec, add_wrong_edges
from .model import ModelConfig, from_checkpoint, load_checkpoint, save_checkpoint
from .training import (
    TrainConfig,
    evaluate,
    read_predictions,
    train,
    write_epoch_log,
    write_predictions,
)

VARIANT_CHOICES = [v.value for v in AdjacencyVariant if v is not AdjacencyVariant.ST_BLOCK]
NOISE_CHOICES = [k.value for k in NoiseKind]


# ---------------------------------------------------------------------------
# Config files: flat key = value lines under [section] headers.


def _fmt_value(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def write_config(path, sections: dict[str, dict]) -> None:
    lines = []
    for section, entries in sections.items():
        lines.append(f"[{section}]")
        for key, value in entries.items():
            lines.append(f"{key} = {_fmt_value(value)}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def read_config(path) -> dict[str, dict[str, str]]:
    path = Path(path)
    sections: dict[str, dict[str, str]] = {}
    current = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], {})
            continue
        if "=" not in line or current is None:
            raise ParseError(path, lineno, f"malformed config line: {line!r}")
        key, _, value = line.partition("=")
        current[key.strip()] = value.strip()
    return sections


# ---------------------------------------------------------------------------
# Shared helpers


def _int_at_least(minimum: int):
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {value}")
        return value

    return parse


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from None


def _parse_noise(text: str) -> NoiseSpec:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError(f"noise spec must be kind:count[:seed], got {text!r}")
    try:
        kind = NoiseKind(parts[0])
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown noise kind {parts[0]!r}; choose from {NOISE_CHOICES}"
        ) from None
    try:
        count = int(parts[1])
        seed = int(parts[2]) if len(parts) == 3 else 0
    except ValueError:
        raise argparse.ArgumentTypeError(f"noise count/seed must be integers: {text!r}") from None
    return NoiseSpec(kind, count, seed)


def _prepare_out(out, force: bool) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"output directory {out} is not empty; pass --force to reuse it")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_manifest_path(data) -> Path:
    data = Path(data)
    return data / "manifest.txt" if data.is_dir() else data


def _worker_count() -> int:
    raw = os.environ.get("SKGCN_THREADS", "").strip()
    if not raw:
        return 1
    return max(1, int(raw))


@dataclass
class LoadedData:
    manifest: object
    train_seqs: list
    test_seqs: list
    pre_cfg: PreprocessConfig


def _load_data(args) -> LoadedData:
    manifest = load_manifest(_resolve_manifest_path(args.data))
    train_seqs = load_split(manifest, "train")
    test_seqs = load_split(manifest, "test")
    if not train_seqs:
        raise ValueError("dataset has no training sequences")
    target = args.target_frames or train_seqs[0].n_frames
    pre_cfg = PreprocessConfig(
        target_frames=target,
        with_velocity=not args.no_velocity,
        center_joint=args.center_joint,
    )
    return LoadedData(manifest, train_seqs, test_seqs, pre_cfg)


def _train_config(args) -> TrainConfig:
    base = TrainConfig() if args.full_schedule else TrainConfig.desk()
    kwargs = {"seed": args.seed}
    if args.epochs is not None:
        kwargs["total_epochs"] = args.epochs
        if args.decay_epochs is None:
            # Keep overridden short runs valid by dropping now-unreachable decays.
            kwargs["decay_epochs"] = tuple(d for d in base.decay_epochs if d < args.epochs)
    if args.decay_epochs is not None:
        kwargs["decay_epochs"] = tuple(args.decay_epochs)
    if args.lr is not None:
        kwargs["initial_lr"] = args.lr
    if args.decay_factor is not None:
        kwargs["decay_factor"] = args.decay_factor
    if args.batch_size is not None:
        kwargs["batch_size"] = args.batch_size
    if args.weight_decay is not None:
        kwargs["weight_decay"] = args.weight_decay
    if args.label_smoothing is not None:
        kwargs["label_smoothing"] = args.label_smoothing
    return replace(base, **kwargs)


def _model_config(args, n_joints: int, in_channels: int, n_classes: int, adjacency: str) -> ModelConfig:
    return ModelConfig(
        n_joints=n_joints,
        in_channels=in_channels,
        class_count=n_classes,
        gcn_channels=tuple(args.gcn_channels),
        adjacency=adjacency,
        tau=args.tau,
        temporal_kernel=args.temporal_kernel,
        normalization=args.normalization,
        temporal_scope=args.temporal_scope,
    )


def _config_sections(command: str, args, model_cfg=None, train_cfg=None, extra=None) -> dict:
    sections = {"run": {"command": command}}
    if hasattr(args, "data"):
        sections["run"]["data"] = args.data
    sections["run"]["out"] = args.out
    if hasattr(args, "target_frames"):
        sections["preprocess"] = {
            "target_frames": args.target_frames,
            "with_velocity": not args.no_velocity,
            "center_joint": args.center_joint,
        }
    if model_cfg is not None:
        sections["model"] = {
            "n_joints": model_cfg.n_joints,
            "in_channels": model_cfg.in_channels,
            "class_count": model_cfg.class_count,
            "gcn_channels": model_cfg.gcn_channels,
            "adjacency": model_cfg.adjacency,
            "tau": model_cfg.tau,
            "temporal_kernel": model_cfg.temporal_kernel,
            "activation": model_cfg.activation,
            "normalization": model_cfg.normalization,
            "temporal_adjacency": model_cfg.temporal_adjacency,
            "temporal_scope": model_cfg.temporal_scope,
        }
    if train_cfg is not None:
        sections["train"] = {
            "initial_lr": train_cfg.initial_lr,
            "decay_epochs": train_cfg.decay_epochs,
            "decay_factor": train_cfg.decay_factor,
            "total_epochs": train_cfg.total_epochs,
            "weight_decay": train_cfg.weight_decay,
            "batch_size": train_cfg.batch_size,
            "label_smoothing": train_cfg.label_smoothing,
            "seed": train_cfg.seed,
        }
    if extra:
        sections.update(extra)
    return sections


# ---------------------------------------------------------------------------
# gen-data


def _cmd_gen_data(args) -> int:
    ds = synth_generate(
        n_classes=args.classes,
        n_joints=args.joints,
        n_frames=args.frames,
        samples_per_class=args.train_per_class,
        seed=args.seed,
        test_per_class=args.test_per_class,
    )
    out = _prepare_out(args.out, args.force)
    write_dataset(ds, out, force=True)
    sections = {
        "run": {"command": "gen-data", "out": args.out},
        "gen-data": {
            "classes": args.classes,
            "joints": args.joints,
            "frames": args.frames,
            "train_per_class": args.train_per_class,
            "test_per_class": args.test_per_class,
            "seed": args.seed,
        },
    }
    write_config(out / "config.txt", sections)
    print(
        f"wrote {len(ds.train)} train / {len(ds.test)} test sequences "
        f"({args.classes} classes, {args.joints} joints, {args.frames} frames) to {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# train


def _cmd_train(args) -> int:
    data = _load_data(args)
    noise = list(args.noise)
    topology = data.manifest.topology
    for spec in noise:
        if spec.kind is NoiseKind.WRONG_EDGES:
            topology = add_wrong_edges(topology, spec)
    prepared = prepare_dataset(
        topology,
        data.manifest.n_classes,
        data.train_seqs,
        data.test_seqs,
        data.pre_cfg,
        noise,
        test_only_noise=args.test_only_noise,
    )
    model_cfg = _model_config(
        args, topology.n_joints, prepared.in_channels, data.manifest.n_classes, args.adjacency
    )
    train_cfg = _train_config(args)
    out = _prepare_out(args.out, args.force)
    result = train(model_cfg, train_cfg, prepared)
    save_checkpoint(result.final, out / "checkpoint_final.txt")
    save_checkpoint(result.best, out / "checkpoint_best.txt")
    write_epoch_log(result.history, out / "epochs.csv")
    if prepared.test:
        report = evaluate(from_checkpoint(result.final), prepared.test, data.manifest.n_classes)
        write_predictions(report, out / "predictions.csv")
        final_acc = report.top1_accuracy
        best_acc = max(h.test_top1 for h in result.history)
        print(f"final test top-1 {final_acc:.4f}; best {best_acc:.4f} at epoch {result.best_epoch}")
    else:
        print("no test split; skipped predictions")
    noise_extra = {
        "noise": {
            "specs": " ".join(f"{s.kind.value}:{s.count}:{s.seed}" for s in noise) or "-",
            "test_only": args.test_only_noise,
        }
    }
    write_config(out / "config.txt", _config_sections("train", args, model_cfg, train_cfg, noise_extra))
    return 0


# ---------------------------------------------------------------------------
# noise-sweep


@dataclass
class SweepCell:
    variant: str
    kind: str
    level: int
    seed: int
    test_top1: float
    predictions: list[tuple[str, int, int]]


def run_noise_sweep(
    manifest,
    train_seqs,
    test_seqs,
    kind: NoiseKind,
    levels,
    variants,
    seeds,
    pre_cfg: PreprocessConfig,
    make_model_cfg,
    train_base: TrainConfig,
    test_only_noise: bool = False,
    noise_seed: int = 0,
    workers: int = 1,
) -> list[SweepCell]:
    """Train and evaluate every (variant, level, seed) cell; noise hits both
    splits unless test_only_noise. Cell order is fixed regardless of workers."""

    cells = [(v, l, s) for v in variants for l in levels for s in seeds]

    def run_cell(cell) -> SweepCell:
        variant, level, seed = cell
        spec = NoiseSpec(kind, level, noise_seed + 1009 * level)
        topology = manifest.topology
        specs = []
        if level > 0:
            if kind is NoiseKind.WRONG_EDGES:
                topology = add_wrong_edges(topology, spec)
            else:
                specs = [spec]
        prepared = prepare_dataset(
            topology, manifest.n_classes, train_seqs, test_seqs, pre_cfg, specs, test_only_noise
        )
        model_cfg = make_model_cfg(topology.n_joints, prepared.in_channels, variant)
        result = train(model_cfg, replace(train_base, seed=seed), prepared)
        report = evaluate(from_checkpoint(result.final), prepared.test, manifest.n_classes)
        return SweepCell(variant, kind.value, level, seed, report.top1_accuracy, report.predictions)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(c) for c in cells]


def write_sweep_csv(cells: list[SweepCell], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "kind", "level", "seed", "test_top1"])
        for c in cells:
            writer.writerow([c.variant, c.kind, c.level, c.seed, repr(c.test_top1)])


def _cmd_noise_sweep(args) -> int:
    data = _load_data(args)
    if not data.test_seqs:
        raise ValueError("noise sweeps need a test split")
    kind = NoiseKind(args.kind)
    variants = args.adjacency
    train_cfg = _train_config(args)

    def make_model_cfg(n_joints, in_channels, variant):
        return _model_config(args, n_joints, in_channels, data.manifest.n_classes, variant)

    out = _prepare_out(args.out, args.force)
    cells = run_noise_sweep(
        data.manifest,
        data.train_seqs,
        data.test_seqs,
        kind,
        args.levels,
        variants,
        args.seeds,
        data.pre_cfg,
        make_model_cfg,
        train_cfg,
        test_only_noise=args.test_only_noise,
        noise_seed=args.noise_seed,
        workers=_worker_count(),
    )
    write_sweep_csv(cells, out / "sweep.csv")
    extra = {
        "sweep": {
            "kind": kind.value,
            "levels": args.levels,
            "variants": variants,
            "seeds": args.seeds,
            "noise_seed": args.noise_seed,
            "test_only": args.test_only_noise,
        }
    }
    write_config(out / "config.txt", _config_sections("noise-sweep", args, None, train_cfg, extra))
    for c in cells:
        print(f"{c.variant:14s} {c.kind:12s} level={c.level:<3d} seed={c.seed:<3d} top1={c.test_top1:.4f}")
    return 0


# ---------------------------------------------------------------------------
# analyze


def _cmd_analyze(args) -> int:
    if not args.residual and not args.diff:
        print("error: nothing to analyze; pass --residual and/or --diff", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if args.residual:
        ck = load_checkpoint(args.residual)
        report = residual_report(ck, args.top_k, exclude_self_loops=args.exclude_self_loops)
        for layer in report.layers:
            print(
                f"{layer.layer}: asymmetry={layer.asymmetry:.4f} "
                f"negative_fraction={layer.negative_fraction:.4f} "
                f"self_loops={layer.self_loop_count}/{len(layer.top_edges)}"
            )
        if out is not None:
            target = out / f"residual_edges.{args.format}"
            export_edges(report, target, format=args.format)
            print(f"wrote {target}")
    if args.diff:
        path_a, path_b = args.diff
        preds_a = read_predictions(path_a)
        preds_b = read_predictions(path_b)
        n_classes = args.classes or 1 + max(t for _, t, _ in preds_a + preds_b)
        diff = misclassification_diff(preds_a, preds_b, n_classes, top_m=args.top_m)
        print(f"samples correct under A but wrong under B: {diff.total}")
        for k, count in diff.top:
            print(f"  class {k}: {count}")
        if out is not None:
            write_diff_csv(diff, out / "diff.csv")
            print(f"wrote {out / 'diff.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target-frames", type=_int_at_least(1), default=None,
                   help="resample sequences to this many frames (default: native length)")
    p.add_argument("--no-velocity", action="store_true", help="coordinate channels only")
    p.add_argument("--center-joint", type=int, default=None,
                   help="subtract this joint's coordinates per frame (off by default)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gcn-channels", type=_int_list, default=[64, 64, 128],
                   help="three GCN layer widths, comma-separated")
    p.add_argument("--tau", type=_int_at_least(1), default=1,
                   help="frames per spatial-temporal window (1 = spatial mode)")
    p.add_argument("--temporal-kernel", type=_int_at_least(1), default=5)
    p.add_argument("--normalization", choices=["symmetric", "row"], default="symmetric")
    p.add_argument("--temporal-scope", choices=["all", "adjacent"], default="all",
                   help="which off-diagonal blocks carry the temporal adjacency")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=_int_at_least(1), default=None)
    p.add_argument("--decay-epochs", type=_int_list, default=None)
    p.add_argument("--decay-factor", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=_int_at_least(1), default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--label-smoothing", type=float, default=None)
    p.add_argument("--full-schedule", action="store_true",
                   help="120 epochs with decays at 40 and 80 (default: 30 with decays at 15 and 25)")
    p.add_argument("--test-only-noise", action="store_true",
                   help="apply joint-level noise to the test split only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skgcn",
        description="Skeleton action recognition with graph convolutions and learnable adjacency.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic skeleton dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=_int_at_least(2), default=4)
    g.add_argument("--joints", type=_int_at_least(2), default=12)
    g.add_argument("--frames", type=_int_at_least(2), default=40)
    g.add_argument("--train-per-class", type=_int_at_least(1), default=50)
    g.add_argument("--test-per-class", type=_int_at_least(1), default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train one configuration into an output directory")
    t.add_argument("--data", required=True, help="dataset directory or manifest path")
    t.add_argument("--out", required=True)
    t.add_argument("--adjacency", choices=VARIANT_CHOICES, default="identity+res")
    t.add_argument("--noise", type=_parse_noise, action="append", default=[],
                   metavar="KIND:COUNT[:SEED]",
                   help="apply noise (repeatable); kinds: " + ", ".join(NOISE_CHOICES))
    t.add_argument("--force", action="store_true")
    _add_preprocess_flags(t)
    _add_model_flags(t)
    _add_train_flags(t)
    t.set_defaults(func=_cmd_train)

    s = sub.add_parser("noise-sweep", help="accuracy grid over noise levels and variants")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kind", choices=NOISE_CHOICES, required=True)
    s.add_argument("--levels", type=_int_list, required=True, help="noise counts, comma-separated")
    s.add_argument("--adjacency", type=lambda s_: s_.split(","), default=["identity+res"],
                   help="comma-separated adjacency variants")
    s.add_argument("--seeds", type=_int_list, default=[0])
    s.add_argument("--noise-seed", type=int, default=0)
    s.add_argument("--force", action="store_true")
    _add_preprocess_flags(s)
    _add_model_flags(s)
    _add_train_flags(s)
    s.set_defaults(func=_cmd_noise_sweep)

    a = sub.add_parser("analyze", help="inspect residuals and prediction diffs")
    a.add_argument("--residual", help="checkpoint path")
    a.add_argument("--top-k", type=_int_at_least(0), default=None)
    a.add_argument("--exclude-self-loops", action="store_true")
    a.add_argument("--format", choices=["csv", "dot"], default="csv")
    a.add_argument("--diff", nargs=2, metavar=("PREDS_A", "PREDS_B"))
    a.add_argument("--top-m", type=_int_at_least(0), default=15)
    a.add_argument("--classes", type=_int_at_least(2), default=None)
    a.add_argument("--out", default=None)
    a.set_defaults(func=_cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse has already printed its message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, ParseError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
