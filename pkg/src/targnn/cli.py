"""Command line interface.

Subcommands: featurize, train, loso, sweep, synth, report.  Config files are
flat key=value text (lambda, alpha, lr, max_epochs, batch_size, patience,
min_delta, seed, variant, bins, layers, hidden_dim); command-line flags
override the file.  Exit codes: 0 success, 2 usage, 3 I/O, 4 bad data or
config.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import DataFormatError, SyntheticSpec
from .features import bandlimit, extract_features
from .graph import build_initial_adjacency
from .model import save_checkpoint
from .montage import CHANNELS, LABELS
from .train import VARIANTS, FoldReport, TrainConfig, loso, sweep, train_fold

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 2, 3, 4

RESULTS_HEADER = ["subject", "accuracy", "tp", "fp", "fn", "tn", "epochs"]


class ConfigError(ValueError):
    pass


def parse_config(path: str | Path) -> dict[str, str]:
    """Flat key=value lines; blank lines and # comments are ignored."""
    path = Path(path)
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_TRAIN_KEYS = {
    "lambda": ("lam", float),
    "alpha": ("alpha", float),
    "lr": ("lr", float),
    "max_epochs": ("max_epochs", int),
    "batch_size": ("batch_size", int),
    "patience": ("patience", int),
    "min_delta": ("min_delta", float),
    "seed": ("seed", int),
    "variant": ("variant", str),
    "bins": ("bins", int),
    "layers": ("layers", int),
    "hidden_dim": ("hidden_dim", int),
}


def build_train_config(raw: dict[str, str], source: str, args: argparse.Namespace) -> TrainConfig:
    cfg = TrainConfig()
    for key, value in raw.items():
        if key not in _TRAIN_KEYS:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        field_name, convert = _TRAIN_KEYS[key]
        try:
            cfg = replace(cfg, **{field_name: convert(value)})
        except ValueError:
            raise ConfigError(f"{source}: key {key!r}: cannot parse {value!r}") from None
    for flag, field_name in (
        ("lam", "lam"),
        ("alpha", "alpha"),
        ("lr", "lr"),
        ("epochs", "max_epochs"),
        ("seed", "seed"),
        ("variant", "variant"),
        ("bins", "bins"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = replace(cfg, **{field_name: value})
    cfg.validate()
    return cfg


def emit_confusion(folds: list[FoldReport]) -> tuple[np.ndarray, np.ndarray]:
    """Aggregate fold confusions: raw counts and row-normalized percentages."""
    counts = np.zeros((2, 2), dtype=np.int64)
    for fold in folds:
        counts += fold.confusion
    row_sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        percent = np.where(row_sums > 0, 100.0 * counts / row_sums, 0.0)
    return counts, percent


def format_confusion(counts: np.ndarray, percent: np.ndarray) -> str:
    width = max(8, len(str(int(counts.max(initial=0)))) + 2)
    lines = ["confusion (rows = true, cols = predicted)"]
    lines.append(" " * 9 + "".join(f"{name:>{width}}" for name in LABELS))
    for i, name in enumerate(LABELS):
        lines.append(f"{name:<9}" + "".join(f"{int(v):>{width}}" for v in counts[i]))
    lines.append("row-normalized (%)")
    for i, name in enumerate(LABELS):
        lines.append(f"{name:<9}" + "".join(f"{v:>{width}.2f}" for v in percent[i]))
    total = counts.sum()
    if total > 0:
        lines.append(f"accuracy {100.0 * counts.trace() / total:.2f}% (n={total})")
    return "\n".join(lines)


def _confusion_cells(fold: FoldReport) -> tuple[int, int, int, int]:
    # positive class = rage (label 1)
    c = fold.confusion
    return int(c[1, 1]), int(c[0, 1]), int(c[1, 0]), int(c[0, 0])


def write_results(folds: list[FoldReport], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for fold in folds:
            tp, fp, fn, tn = _confusion_cells(fold)
            writer.writerow(
                [fold.held_out_subject, repr(fold.accuracy), tp, fp, fn, tn, fold.epochs_to_converge]
            )


def _write_adjacency(matrix: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CHANNELS)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def _fold_line(fold: FoldReport) -> str:
    return (
        f"fold subject={fold.held_out_subject} acc={fold.accuracy:.4f} "
        f"epochs={fold.epochs_to_converge}"
    )


def cmd_featurize(args: argparse.Namespace) -> None:
    raw_dir = Path(args.raw_dir)
    if not raw_dir.is_dir():
        raise FileNotFoundError(f"{raw_dir}: not a directory")
    files = sorted(raw_dir.glob("*.csv"))
    if not files:
        raise dataio.EmptyFile(f"{raw_dir}: no .csv recordings found")
    feats = []
    band_epochs = []
    for path in files:
        rec = dataio.load_raw(path, sample_rate_hz=args.rate)
        for epoch in dataio.slice_epochs(rec):
            feats.append(extract_features(epoch, rec.sample_rate_hz))
            if args.adjacency_out:
                band_epochs.append(bandlimit(epoch.samples, rec.sample_rate_hz))
    dataio.save_features(feats, args.out_file)
    if args.adjacency_out:
        adjacency = build_initial_adjacency(band_epochs, bins=args.bins or 16)
        _write_adjacency(adjacency.matrix, Path(args.adjacency_out))
    print(f"featurize: {len(files)} recordings -> {len(feats)} samples -> {args.out_file}")


def cmd_synth(args: argparse.Namespace) -> None:
    raw = parse_config(args.spec_file)
    keys = {
        "n_subjects": int,
        "samples_per_subject_per_class": int,
        "class_separation": float,
        "subject_shift": float,
        "noise_scale": float,
        "rng_seed": int,
    }
    kwargs = {}
    for key, value in raw.items():
        if key not in keys:
            raise ConfigError(f"{args.spec_file}: unknown synthetic key {key!r}")
        try:
            kwargs[key] = keys[key](value)
        except ValueError:
            raise ConfigError(f"{args.spec_file}: key {key!r}: cannot parse {value!r}") from None
    spec = SyntheticSpec(
        n_subjects=kwargs.get("n_subjects", 10),
        samples_per_subject_per_class=kwargs.get("samples_per_subject_per_class", 200),
        class_separation=kwargs.get("class_separation", 2.0),
        subject_shift=kwargs.get("subject_shift", 1.0),
        noise_scale=kwargs.get("noise_scale", 1.0),
        rng_seed=args.seed if args.seed is not None else kwargs.get("rng_seed", 0),
    )
    samples = dataio.generate_synthetic(spec)
    dataio.save_features(samples, args.out_file)
    print(f"synth: {len(samples)} samples ({spec.n_subjects} subjects) -> {args.out_file}")


def cmd_train(args: argparse.Namespace) -> None:
    samples = dataio.load_features(args.features_file)
    cfg = build_train_config(parse_config(args.cfg_file), str(args.cfg_file), args)
    subjects = sorted({s.subject_id for s in samples})
    held_out = args.test_subject or subjects[-1]
    if held_out not in subjects:
        raise ConfigError(f"--test-subject {held_out!r} not among subjects {subjects}")
    test = [s for s in samples if s.subject_id == held_out]
    train = [s for s in samples if s.subject_id != held_out]
    report, params = train_fold(train, test, cfg, return_params=True)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out_dir / "checkpoint.txt")
    write_results([report], out_dir / "results.csv")
    print(_fold_line(report))


def cmd_loso(args: argparse.Namespace) -> None:
    samples = dataio.load_features(args.features_file)
    cfg = build_train_config(parse_config(args.cfg_file), str(args.cfg_file), args)
    result = loso(samples, cfg, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results(list(result.folds), out_dir / "results.csv")
    for fold in result.folds:
        print(_fold_line(fold))
    print(
        f"mean_acc={result.mean_accuracy:.4f} std={result.std_accuracy:.4f} "
        f"mean_epochs={result.mean_epochs:.1f}"
    )


def _parse_grid_values(raw: str, source: str, key: str) -> list[float]:
    try:
        values = [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"{source}: key {key!r}: cannot parse {raw!r}") from None
    if not values:
        raise ConfigError(f"{source}: key {key!r}: empty value list")
    return values


def cmd_sweep(args: argparse.Namespace) -> None:
    samples = dataio.load_features(args.features_file)
    grid_raw = parse_config(args.grid_file)
    grid_keys = {k: v for k, v in grid_raw.items() if k in ("lambda", "alpha")}
    cfg_keys = {k: v for k, v in grid_raw.items() if k not in ("lambda", "alpha")}
    cfg = build_train_config(cfg_keys, str(args.grid_file), args)
    lams = (
        _parse_grid_values(grid_keys["lambda"], str(args.grid_file), "lambda")
        if "lambda" in grid_keys
        else [cfg.lam]
    )
    alphas = (
        _parse_grid_values(grid_keys["alpha"], str(args.grid_file), "alpha")
        if "alpha" in grid_keys
        else [cfg.alpha]
    )
    points = sweep(samples, lams, alphas, cfg, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "alpha", "mean_acc", "std_acc"])
        for p in points:
            writer.writerow([repr(p.lam), repr(p.alpha), repr(p.mean_accuracy), repr(p.std_accuracy)])
    for p in points:
        print(
            f"sweep lambda={p.lam:g} alpha={p.alpha:g} "
            f"mean_acc={p.mean_accuracy:.4f} std={p.std_accuracy:.4f}"
        )


def cmd_report(args: argparse.Namespace) -> None:
    root = Path(args.results_dir)
    if root.is_file():
        files = [root]
    elif root.is_dir():
        files = sorted(root.rglob("*.csv"))
    else:
        raise FileNotFoundError(f"{root}: no such file or directory")

    counts = np.zeros((2, 2), dtype=np.int64)
    used = 0
    for path in files:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != RESULTS_HEADER:
                continue
            for row in reader:
                if len(row) != len(RESULTS_HEADER):
                    raise dataio.SchemaMismatch(f"{path}: malformed results row {row}")
                tp, fp, fn, tn = (int(v) for v in row[2:6])
                counts += np.array([[tn, fp], [fn, tp]])
            used += 1
    if used == 0:
        raise dataio.SchemaMismatch(f"{root}: no results files with header {RESULTS_HEADER}")
    row_sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        percent = np.where(row_sums > 0, 100.0 * counts / row_sums, 0.0)
    print(f"report: {used} results file(s)")
    print(format_confusion(counts, percent))


def _add_override_flags(sp: argparse.ArgumentParser, jobs: bool = True) -> None:
    sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    sp.add_argument("--lambda", dest="lam", type=float, default=None, help="adversarial weight")
    sp.add_argument("--alpha", type=float, default=None, help="adjacency l1 weight")
    sp.add_argument("--lr", type=float, default=None, help="learning rate")
    sp.add_argument("--epochs", type=int, default=None, help="max training epochs")
    sp.add_argument("--variant", choices=VARIANTS, default=None, help="model variant")
    sp.add_argument("--bins", type=int, default=None, help="histogram bins for the initial adjacency")
    if jobs:
        sp.add_argument("--jobs", type=int, default=1, help="parallel LOSO folds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="targnn",
        description="Cross-subject EEG emotion recognition over learnable channel graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("featurize", help="raw recordings directory -> feature CSV")
    sp.add_argument("raw_dir")
    sp.add_argument("out_file")
    sp.add_argument("--rate", type=float, default=128.0, help="sample rate in Hz")
    sp.add_argument("--bins", type=int, default=16)
    sp.add_argument("--adjacency-out", default=None, help="also dump the initial adjacency CSV")
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("synth", help="generate synthetic features from a spec file")
    sp.add_argument("spec_file")
    sp.add_argument("out_file")
    sp.add_argument("--seed", type=int, default=None, help="override rng_seed")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train one fold against a held-out subject")
    sp.add_argument("features_file")
    sp.add_argument("cfg_file")
    sp.add_argument("out_dir")
    sp.add_argument("--test-subject", default=None)
    _add_override_flags(sp, jobs=False)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("loso", help="leave-one-subject-out over all subjects")
    sp.add_argument("features_file")
    sp.add_argument("cfg_file")
    sp.add_argument("out_dir")
    _add_override_flags(sp)
    sp.set_defaults(func=cmd_loso)

    sp = sub.add_parser("sweep", help="LOSO over a lambda/alpha grid")
    sp.add_argument("features_file")
    sp.add_argument("grid_file")
    sp.add_argument("out_dir")
    _add_override_flags(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="aggregate confusion table from results files")
    sp.add_argument("results_dir")
    sp.set_defaults(func=cmd_report)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
        return EXIT_OK
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DataFormatError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
