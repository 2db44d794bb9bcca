"""Command-line front end.

Subcommands: ``analyze``, ``transform``, ``train``, ``distill``, ``report``.
Exit codes: 0 success, 2 usage error, 3 data/architecture error,
4 numerical failure.

Every run writes its outputs under a fresh directory (default
``runs/<command>-<timestamp>``, override with ``--run-dir``) including a
``run.json`` with the resolved configuration. Architectures are given
either as a JSON file path or as ``zoo:<name>``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

# keep BLAS deterministic and single-threaded unless the user overrides
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

from . import cost, data, distill, train, transform, zoo  # noqa: E402
from .arch import ArchSpec, build_model, load_model  # noqa: E402
from .errors import ArchError, DataFormatError, NumericalError  # noqa: E402


def _nonneg_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def resolve_arch(spec: str) -> ArchSpec:
    if spec.startswith("zoo:"):
        name = spec[len("zoo:"):]
        try:
            return zoo.build_zoo_arch(name)
        except ValueError as exc:
            raise ArchError(str(exc)) from exc
    return ArchSpec.load(spec)


def _make_run_dir(args, command: str) -> Path:
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
        run_dir = Path(args.output_root) / f"{command}-{stamp}"
        suffix = 0
        while run_dir.exists():
            suffix += 1
            run_dir = Path(args.output_root) / f"{command}-{stamp}-{suffix}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _write_run_config(run_dir: Path, args, command: str) -> None:
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "output_root", "run_dir")}
    config["command"] = command
    with open(run_dir / "run.json", "w") as f:
        json.dump(config, f, indent=1, sort_keys=True, default=str)


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})


def _load_train_test(args) -> tuple[data.Dataset, data.Dataset]:
    """Dataset resolution: --synthetic, else MNIST via --data-dir/$MNIST_DIR."""
    if getattr(args, "synthetic", False):
        train_set = data.make_synthetic(args.classes, args.per_class, seed=args.seed,
                                        image_size=args.image_size,
                                        separation=args.separation)
        test_set = data.make_synthetic(args.classes, max(args.per_class // 5, 1),
                                       seed=args.seed + 10_000,
                                       image_size=args.image_size,
                                       separation=args.separation)
        return train_set, test_set
    found = data.find_mnist(getattr(args, "data_dir", None))
    if found is None:
        raise DataFormatError(
            "no dataset: pass --synthetic, or point --data-dir/$MNIST_DIR at "
            "the four MNIST IDX files")
    train_set = data.load_mnist_idx(*found["train"], split="train")
    test_set = data.load_mnist_idx(*found["test"], split="test")
    if args.limit:
        train_set = train_set.subset(args.limit)
    return train_set, test_set


# -- subcommands ---------------------------------------------------------------

def cmd_analyze(args) -> int:
    arch = resolve_arch(args.arch)
    report = cost.analyze(arch)
    text = cost.render_text(report, title=f"cost report: {args.arch}")
    run_dir = _make_run_dir(args, "analyze")
    _write_run_config(run_dir, args, "analyze")
    text_path = Path(args.text) if args.text else run_dir / "report.txt"
    csv_path = Path(args.csv) if args.csv else run_dir / "report.csv"
    text_path.write_text(text)
    csv_path.write_text(cost.render_csv(report))
    sys.stdout.write(text)
    print(f"[analyze] wrote {text_path} and {csv_path}")
    return 0


def cmd_transform(args) -> int:
    arch = resolve_arch(args.arch)
    policy = transform.DistillPolicy(
        threshold=args.threshold, bottleneck_dim=args.bottleneck,
        omega=args.omega, variant=args.variant, residual=args.residual,
        replace_selector=args.selector)
    result = transform.transform_with_report(arch, policy)
    diff = transform.render_diff(arch, result.arch, result)
    run_dir = _make_run_dir(args, "transform")
    _write_run_config(run_dir, args, "transform")
    result.arch.save(run_dir / "compact.json")
    (run_dir / "diff.txt").write_text(diff)
    sys.stdout.write(diff)
    print(f"[transform] wrote {run_dir}/compact.json and diff.txt")
    return 0


_TRAIN_COLUMNS = ["epoch", "iteration", "loss", "lr", "test_error"]
_DISTILL_COLUMNS = ["iteration", "kl", "ce", "sp", "total", "lr"]


def cmd_train(args) -> int:
    arch = resolve_arch(args.model)
    model = build_model(arch, seed=args.seed)
    train_set, test_set = _load_train_test(args)
    schedule = train.constant_schedule(args.lr) if args.schedule == "constant" \
        else train.step_decay_schedule(args.lr, floor=args.lr_floor)
    run_dir = _make_run_dir(args, "train")
    _write_run_config(run_dir, args, "train")
    metrics = train.train_classifier(
        model, train_set, epochs=args.epochs, batch_size=args.batch,
        schedule=schedule, momentum=args.momentum,
        weight_decay=args.weight_decay, seed=args.seed, eval_data=test_set,
        checkpoint_prefix=run_dir / "model")
    _write_csv(run_dir / "metrics.csv", metrics, _TRAIN_COLUMNS)
    result = train.evaluate(model, test_set)
    print(f"[train] test error {100 * result.cer:.2f}% "
          f"({result.substitutions}/{result.total}); "
          f"checkpoint {run_dir}/model, metrics {run_dir}/metrics.csv")
    return 0


def cmd_distill(args) -> int:
    teacher = load_model(args.teacher)
    if args.student:
        student_arch = resolve_arch(args.student)
    else:
        policy = transform.DistillPolicy(
            threshold=args.threshold, bottleneck_dim=args.bottleneck,
            omega=args.omega, variant=args.variant, residual=args.residual)
        student_arch = transform.distill_architecture(teacher.arch, policy)
    student = build_model(student_arch, seed=args.seed)
    train_set, _ = _load_train_test(args)
    pairs = None
    if args.taps:
        pairs = [tuple(p.split(":")) for p in args.taps.split(",")]
        if any(len(p) != 2 for p in pairs):
            raise ArchError("--taps must look like tapA:tapB,tapC:tapD")
    config = distill.DistillConfig(
        mu=args.mu, beta=args.beta, lam=args.lam, tap_pairs=pairs,
        epochs=args.epochs, batch_size=args.batch, lr=args.lr,
        momentum=args.momentum, weight_decay=args.weight_decay, seed=args.seed)
    run_dir = _make_run_dir(args, "distill")
    _write_run_config(run_dir, args, "distill")
    student_arch.save(run_dir / "student_arch.json")
    try:
        metrics = distill.distill_train(teacher, student, train_set, config,
                                        run_dir=run_dir)
    except NumericalError:
        # partial metrics are lost but the periodic checkpoint survives
        raise
    _write_csv(run_dir / "metrics.csv", metrics, _DISTILL_COLUMNS)
    student.save(run_dir / "student")
    print(f"[distill] {len(metrics)} iterations; student checkpoint "
          f"{run_dir}/student, metrics {run_dir}/metrics.csv")
    return 0


def cmd_report(args) -> int:
    model = load_model(args.ckpt)
    edges, counts = train.weight_histogram(model, bins=args.bins)
    run_dir = _make_run_dir(args, "report")
    _write_run_config(run_dir, args, "report")
    (run_dir / "weights_histogram.csv").write_text(train.histogram_csv(edges, counts))
    report = cost.analyze(model.arch)
    (run_dir / "report.txt").write_text(cost.render_text(report, title="cost report"))
    print(f"[report] wrote {run_dir}/weights_histogram.csv and report.txt")
    return 0


# -- argument parsing ------------------------------------------------------------

def _add_common_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output-root", default="runs",
                   help="parent directory for per-run output directories")
    p.add_argument("--run-dir", default=None,
                   help="exact output directory (overrides --output-root)")


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", default=None,
                   help="directory with MNIST IDX files (default: $MNIST_DIR)")
    p.add_argument("--limit", type=int, default=0,
                   help="cap the number of training samples (0 = all)")
    p.add_argument("--synthetic", action="store_true",
                   help="use the deterministic synthetic blob dataset")
    p.add_argument("--classes", type=_positive_int, default=10)
    p.add_argument("--per-class", type=_positive_int, default=200)
    p.add_argument("--image-size", type=_positive_int, default=28)
    p.add_argument("--separation", type=_nonneg_float, default=3.0)


def _add_opt_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=_positive_int, default=1)
    p.add_argument("--batch", type=_positive_int, default=64)
    p.add_argument("--lr", type=_nonneg_float, default=0.01)
    p.add_argument("--momentum", type=_nonneg_float, default=0.9)
    p.add_argument("--weight-decay", type=_nonneg_float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parcnn",
        description="compact-CNN cost analysis, transformation and distillation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="FLOPs/storage report for an architecture")
    p.add_argument("arch", help="architecture JSON path or zoo:<name>")
    p.add_argument("--csv", default=None, help="explicit CSV output path")
    p.add_argument("--text", default=None, help="explicit text output path")
    _add_common_run_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("transform", help="turn a baseline into a compact network")
    p.add_argument("arch")
    p.add_argument("--omega", type=_nonneg_float, default=0.5)
    p.add_argument("--bottleneck", type=_positive_int, default=50)
    p.add_argument("--threshold", type=_nonneg_float, default=0.1)
    p.add_argument("--variant", choices=transform.VARIANTS, default="parconv")
    p.add_argument("--residual", action="store_true")
    p.add_argument("--selector", default="interior",
                   help="interior | residual_body | all | comma-separated names")
    _add_common_run_args(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("train", help="baseline cross-entropy training")
    p.add_argument("--model", required=True, help="architecture JSON or zoo:<name>")
    p.add_argument("--schedule", choices=("constant", "step"), default="constant")
    p.add_argument("--lr-floor", type=_nonneg_float, default=0.0002)
    _add_opt_args(p)
    _add_data_args(p)
    _add_common_run_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="teacher-student distillation")
    p.add_argument("--teacher", required=True, help="teacher checkpoint prefix")
    p.add_argument("--student", default=None,
                   help="student architecture (default: transform the teacher)")
    p.add_argument("--mu", type=_nonneg_float, default=0.8)
    p.add_argument("--beta", type=_nonneg_float, default=0.2)
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=0.1)
    p.add_argument("--taps", default=None, help="tap pairs, e.g. s1_in:s1_out,...")
    p.add_argument("--omega", type=_nonneg_float, default=0.5)
    p.add_argument("--bottleneck", type=_positive_int, default=50)
    p.add_argument("--threshold", type=_nonneg_float, default=0.1)
    p.add_argument("--variant", choices=transform.VARIANTS, default="parconv")
    p.add_argument("--residual", action="store_true")
    _add_opt_args(p)
    _add_data_args(p)
    _add_common_run_args(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("report", help="weight histogram + cost report for a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint prefix")
    p.add_argument("--bins", type=_positive_int, default=101)
    _add_common_run_args(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArchError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
