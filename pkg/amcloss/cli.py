"""
The ``amcloss`` command.

Subcommands: ``train``, ``eval``, ``sweep``, ``export-embeddings``,
``gradcam`` (alias ``explain``) and ``summarize``. Errors of amcloss end the command with exit
status 2 and a message naming the offending field or file.
"""
import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ._checkpoint import load_checkpoint, save_checkpoint
from ._trainer import evaluate, fit
from ._utils import logger_error, provenance, write_sidecar
from ._version import __version__
from .config import DATA_DIR_ENV, SCHEMES, RunConfig
from .constants import SCHEDULE_PRESETS
from .datasets import Dataset, export_embeddings, load_dataset, normalize_splits, subset
from .errors import AmcLossError, CheckpointError, ConfigError, LabelRangeError, ShapeError
from .gradcam import export_heatmap, export_overlay, gradcam, top_decile_mass, write_heatmap_csv
from .losses import LOSS_MODES
from .metrics import RunSample, SummaryRow, compare_runs, run_summary, summarize_reports, summary_csv
from .models import PRESETS, Model, build
from .report import RunReport

logger = logging.getLogger(__name__)

EMBED_DIMS = (2, 3, 64, 128)
SWEEP_AXES = ("lam", "margin_g")

REPORT_FILE = "report.json"
EPOCHS_FILE = "epochs.csv"
CHECKPOINT_FILE = "model.npz"


def _with_default(text: str, value: Any) -> str:
    return f"{text} (default: {value})"


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    """Flags that map onto RunConfig fields; unset flags stay out of the namespace."""
    defaults = RunConfig()
    add = parser.add_argument
    add("--config", default=argparse.SUPPRESS, help="JSON file of configuration values")
    add(
        "--schedule",
        choices=sorted(SCHEDULE_PRESETS),
        default=argparse.SUPPRESS,
        help="epoch/ramp preset: table = 300/80/50, figure = 150/40/30",
    )
    add("--dataset", choices=["mnist", "cifar10", "cifar100"], default=argparse.SUPPRESS,
        help=_with_default("dataset", defaults.dataset))
    add("--data-dir", dest="data_dir", default=argparse.SUPPRESS,
        help=_with_default(f"dataset directory, ${DATA_DIR_ENV} if set", defaults.data_dir))
    add("--preset", choices=PRESETS, default=argparse.SUPPRESS, help="network, derived from the dataset by default")
    add("--loss", choices=LOSS_MODES, default=argparse.SUPPRESS, help=_with_default("objective", defaults.loss))
    add("--lambda", dest="lam", type=float, default=argparse.SUPPRESS,
        help=_with_default("weight of the pair term", defaults.lam))
    add("--margin-g", dest="margin_g", type=float, default=argparse.SUPPRESS,
        help=_with_default("angular margin in radians", defaults.margin_g))
    add("--margin-e", dest="margin_e", type=float, default=argparse.SUPPRESS,
        help=_with_default("Euclidean margin", defaults.margin_e))
    add("--epochs", type=int, default=argparse.SUPPRESS, help=_with_default("epochs", defaults.epochs))
    add("--rampup", type=int, default=argparse.SUPPRESS, help=_with_default("ramp-up epochs", defaults.rampup))
    add("--rampdown", type=int, default=argparse.SUPPRESS,
        help=_with_default("ramp-down epochs", defaults.rampdown))
    add("--no-rampdown-weight", dest="rampdown_weight", action="store_false", default=argparse.SUPPRESS,
        help="keep the pair weight at 1 during the ramp-down")
    add("--batch-size", dest="batch_size", type=int, default=argparse.SUPPRESS,
        help=_with_default("mini-batch size", defaults.batch_size))
    add("--lr", type=float, default=argparse.SUPPRESS, help=_with_default("maximum learning rate", defaults.lr))
    add("--seed", type=int, default=argparse.SUPPRESS, help=_with_default("run seed", defaults.seed))
    add("--embed-dim", dest="embed_dim", type=int, choices=EMBED_DIMS, default=argparse.SUPPRESS,
        help="deep feature width (default: 128 for cifar_net, 64 for mnist_net)")
    add("--scheme", choices=SCHEMES, default=argparse.SUPPRESS,
        help="pixel normalization (default: unit_range for mnist, standardize for cifar)")
    add("--train-subset", dest="train_subset", type=int, default=argparse.SUPPRESS,
        help="train on a seeded subset of this size (default: all)")
    add("--test-subset", dest="test_subset", type=int, default=argparse.SUPPRESS,
        help="evaluate on a seeded subset of this size (default: all)")
    add("--kmeans", action="store_true", default=argparse.SUPPRESS,
        help="also report k-means homogeneity/completeness")
    add("--dtype", choices=["float64", "float32"], default=argparse.SUPPRESS,
        help=_with_default("floating point type", defaults.dtype))
    add("--out", default=argparse.SUPPRESS, help=_with_default("output directory", defaults.out))


FLAG_FIELDS = {
    "dataset", "data_dir", "preset", "loss", "lam", "margin_g", "margin_e", "epochs", "rampup", "rampdown",
    "rampdown_weight", "batch_size", "lr", "seed", "embed_dim", "scheme", "train_subset", "test_subset",
    "kmeans", "dtype", "out",
}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    flags = {key: value for key, value in vars(args).items() if key in FLAG_FIELDS}
    return RunConfig.from_sources(flags, getattr(args, "config", None), getattr(args, "schedule", None))


def prepare_data(config: RunConfig) -> Tuple[Dataset, Dataset]:
    """Load, subsample and normalize both splits of the configured dataset."""
    train = load_dataset(config.dataset, config.data_dir, "train")
    test = load_dataset(config.dataset, config.data_dir, "test")
    if config.train_subset is not None:
        train = subset(train, config.train_subset, config.seed)
    if config.test_subset is not None:
        test = subset(test, config.test_subset, config.seed)
    return normalize_splits(train, test, config.scheme)  # type: ignore[arg-type]


def run_training(config: RunConfig) -> RunReport:
    """Train one configuration and write its checkpoint, report and epoch CSV."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = prepare_data(config)
    model = build(config.preset, config.embed_dim, config.num_classes, config.seed, config.dtype)  # type: ignore[arg-type]
    csv_path = out / EPOCHS_FILE
    if csv_path.exists():
        csv_path.unlink()
    resolved = config.to_dict()
    report = fit(
        model,
        train,
        test,
        config.loss_config(),
        config.schedule_config(),
        seed=config.seed,
        batch_size=config.batch_size,
        kmeans=config.kmeans,
        csv_path=csv_path,
        config=resolved,
    )
    write_sidecar(csv_path, resolved)
    save_checkpoint(model, out / CHECKPOINT_FILE, resolved)
    report.save(out / REPORT_FILE)
    logger.info("Final test accuracy %.2f%%, artifacts in %s", report.final.accuracy, out)  # type: ignore[union-attr]
    return report


def _train_job(config: Dict[str, Any]) -> Dict[str, Any]:
    return run_training(RunConfig.from_dict(config)).to_dict()


def cmd_train(args: argparse.Namespace) -> int:
    report = run_training(config_from_args(args))
    print(json.dumps({"accuracy": report.final.accuracy}, sort_keys=True))  # type: ignore[union-attr]
    return 0


def _restore(args: argparse.Namespace) -> Tuple[Model, RunConfig]:
    model, meta = load_checkpoint(args.checkpoint)
    try:
        config = RunConfig.from_dict(meta.get("config") or {})
    except (ConfigError, TypeError) as exc:
        raise CheckpointError(f"Checkpoint configuration is invalid: {exc}") from exc
    overrides = {key: getattr(args, key) for key in ("data_dir", "dataset") if getattr(args, key, None) is not None}
    return model, replace(config, **overrides).resolve()


def _split(config: RunConfig, name: str) -> Dataset:
    train, test = prepare_data(config)
    return train if name == "train" else test


def _check_fits(model: Model, dataset: Dataset) -> None:
    if tuple(dataset.images.shape[1:]) != model.spec.input_shape or dataset.num_classes > model.spec.num_classes:
        raise CheckpointError(
            f"Checkpoint {model.spec.preset} ({model.spec.num_classes} classes) does not fit {dataset.name} images"
        )


def cmd_eval(args: argparse.Namespace) -> int:
    model, config = _restore(args)
    dataset = _split(config, args.split)
    _check_fits(model, dataset)
    try:
        metrics = evaluate(model, dataset, kmeans=args.kmeans, seed=config.seed)
    except (ShapeError, LabelRangeError) as exc:
        raise CheckpointError(str(exc)) from exc
    result = {"metrics": metrics.__dict__, "split": args.split, **provenance(config.to_dict())}
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    model, config = _restore(args)
    dataset = _split(config, args.split)
    _check_fits(model, dataset)
    if args.subset is not None:
        dataset = subset(dataset, args.subset, args.subset_seed)
    export_embeddings(model, dataset, args.out, normalized=args.normalized, config=config.to_dict())
    return 0


def cmd_gradcam(args: argparse.Namespace) -> int:
    model, config = _restore(args)
    dataset = _split(config, args.split)
    _check_fits(model, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = config.to_dict()
    for index in args.indices:
        if not 0 <= index < len(dataset):
            raise ConfigError(f"indices: {index} is outside the {len(dataset)} {args.split} images")
        heatmap = gradcam(model, dataset.images[index], args.target_class)
        export_heatmap(heatmap, out / f"heatmap_{index}.png", resolved)
        export_overlay(heatmap, dataset.images[index], out / f"overlay_{index}.png", resolved)
        if args.csv:
            write_heatmap_csv(heatmap, out / f"heatmap_{index}.csv", resolved)
        logger.info("image %d: class %d, top-decile mass %.3f", index, heatmap.class_index, top_decile_mass(heatmap))
    return 0


def _reports_in(paths: Sequence[str]) -> List[RunReport]:
    reports = []
    for name in paths:
        path = Path(name)
        files = sorted(path.rglob(REPORT_FILE)) if path.is_dir() else [path]
        reports.extend(RunReport.load(file) for file in files)
    if not reports:
        raise ConfigError("reports: no run reports found")
    return reports


def cmd_summarize(args: argparse.Namespace) -> int:
    reports = _reports_in(args.reports)
    rows = summarize_reports(reports, group_by=args.group_by, baseline=args.baseline)
    text = summary_csv(rows)
    if args.out is not None:
        Path(args.out).write_text(text, encoding="utf-8")
        settings = {"reports": [str(Path(p)) for p in args.reports], "runs": len(reports)}
        write_sidecar(args.out, {**settings, "group_by": args.group_by, "baseline": args.baseline})
    sys.stdout.write(text)
    return 0


def sweep_configs(base: RunConfig, axis: str, values: Sequence[float], repeats: int) -> List[Tuple[str, RunConfig]]:
    """
    One configuration per grid value and repeat, plus the λ = 0
    cross-entropy baseline with the same seeds. Run ``r`` uses seed
    ``base.seed + r``.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis: expected one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ConfigError("values: the sweep grid is empty")
    if repeats < 1:
        raise ConfigError(f"repeats: must be >= 1, got {repeats}")
    root = Path(base.out)
    jobs = []
    for run in range(repeats):
        seed = base.seed + run
        jobs.append(("baseline", replace(base, loss="ce", lam=0.0, seed=seed, out=str(root / "baseline" / f"run{run}"))))
        for value in values:
            group = f"{axis}={value:g}"
            config = replace(base, seed=seed, out=str(root / group / f"run{run}"), **{axis: value})
            config.validate()
            jobs.append((group, config))
    return jobs


def cmd_sweep(args: argparse.Namespace) -> int:
    base = config_from_args(args)
    jobs = sweep_configs(base, args.axis, args.values, args.repeats)
    configs = [config.to_dict() for _, config in jobs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_job, configs))
    else:
        results = [_train_job(config) for config in configs]
    accuracies: Dict[str, List[float]] = {}
    for (group, _), result in zip(jobs, results):
        accuracies.setdefault(group, []).append(RunReport.from_dict(result).final.accuracy)  # type: ignore[union-attr]
    baseline = RunSample.of(accuracies["baseline"])
    rows = []
    for group, values in accuracies.items():
        sample = RunSample.of(values)
        mean, sd = run_summary(sample) if len(sample) >= 2 else (values[0], float("nan"))
        p_value = compare_runs(baseline, sample) if group != "baseline" and len(sample) >= 2 else None
        rows.append(SummaryRow(group, len(sample), mean, sd, p_value))
    text = summary_csv(rows)
    summary_path = Path(base.out) / "summary.csv"
    summary_path.write_text(text, encoding="utf-8")
    write_sidecar(summary_path, {**base.to_dict(), "sweep": {"axis": args.axis, "values": list(args.values)}})
    sys.stdout.write(text)
    return 0


def _add_checkpoint_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("checkpoint", help="checkpoint written by 'amcloss train'")
    parser.add_argument("--data-dir", dest="data_dir", default=None, help="override the dataset directory")
    parser.add_argument("--split", choices=["train", "test"], default="test", help="split to use (default: test)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amcloss", description="Angular margin contrastive training toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log every mini-batch")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train one model")
    _add_run_flags(train)
    train.set_defaults(handler=cmd_train)

    sweep = commands.add_parser("sweep", help="train a grid of λ or m_g values against a cross-entropy baseline")
    _add_run_flags(sweep)
    sweep.add_argument("--axis", choices=SWEEP_AXES, required=True, help="the swept field")
    sweep.add_argument("--values", type=float, nargs="+", required=True, help="grid values")
    sweep.add_argument("--repeats", type=int, default=3, help="runs per grid value (default: 3)")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel training processes (default: 1)")
    sweep.set_defaults(handler=cmd_sweep)

    evaluate_cmd = commands.add_parser("eval", help="accuracy and clustering metrics of a checkpoint")
    _add_checkpoint_flags(evaluate_cmd)
    evaluate_cmd.add_argument("--kmeans", action="store_true", help="also report k-means homogeneity/completeness")
    evaluate_cmd.set_defaults(handler=cmd_eval)

    export = commands.add_parser("export-embeddings", help="write deep features as CSV")
    _add_checkpoint_flags(export)
    export.add_argument("--out", required=True, help="CSV file to write")
    export.add_argument("--normalized", action="store_true", help="write unit-norm features")
    export.add_argument("--subset", type=int, default=None, help="export a seeded subset of this size")
    export.add_argument("--subset-seed", dest="subset_seed", type=int, default=1, help="seed of the subset (default: 1)")
    export.set_defaults(handler=cmd_export)

    explain = commands.add_parser("gradcam", aliases=["explain"], help="write Grad-CAM heatmaps and overlays")
    _add_checkpoint_flags(explain)
    explain.add_argument("--indices", type=int, nargs="+", required=True, help="image indices within the split")
    explain.add_argument("--target-class", dest="target_class", type=int, default=None,
                         help="class to explain (default: the predicted class)")
    explain.add_argument("--out", required=True, help="output directory")
    explain.add_argument("--csv", action="store_true", help="also dump the raw heatmaps as CSV")
    explain.set_defaults(handler=cmd_gradcam)

    summarize = commands.add_parser("summarize", help="mean/sd/p-value table of finished runs")
    summarize.add_argument("reports", nargs="+", help="report files or directories searched for report.json")
    summarize.add_argument("--group-by", dest="group_by", default="loss", help="config field to group by (default: loss)")
    summarize.add_argument("--baseline", default=None, help="group the p-values are computed against")
    summarize.add_argument("--out", default=None, help="also write the table to this file")
    summarize.set_defaults(handler=cmd_summarize)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return int(args.handler(args))
    except AmcLossError as exc:
        logger_error(f"{type(exc).__name__}: {exc}", __name__)
        return 2
