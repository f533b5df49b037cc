"""Command-line entry point.

Subcommands: ``gen`` (synthetic blobs), ``inject`` (label noise only),
``train`` (single hold-out run), ``cv`` (repeated cross-validation) and
``grid`` (controller-hyperparameter search). Every experiment knob lives in a
flat ``key = value`` config file (``#`` comments, dotted keys) and doubles as
a ``--key value`` command-line flag that overrides the file.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence. On failure after the output directory exists, a ``FAILED`` marker
file holding the error message is left next to any partial outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .data import LabeledDataset, gen_synthetic, load_dataset, save_dataset
from .engine import RafniConfig
from .evaluation import CvPlan, derive_seed, grid_search, holdout_split, make_folds, run_protocol
from .exceptions import ConfigError, DataError, DivergenceError, RafniError
from .models import ClassifierKind, ClassifierSpec, OptimizerSpec
from .noise import NoiseKind, NoiseSpec, apply_noise

# Every config-file key, its type, default and help text. Each key is also a
# CLI flag (e.g. ``--rafni.quantile_loss 0.92``) that overrides the file.
CONFIG_KEYS: dict[str, tuple[type, object, str]] = {
    "data": (str, None, "dataset CSV path"),
    "out": (str, None, "output directory (or file for gen/inject)"),
    "seed": (int, 0, "master seed; all randomness derives from it"),
    "epochs": (int, 40, "training epochs M (at least 2)"),
    "baseline": (bool, True, "also run the no-controller baseline arm"),
    "holdout": (float, 0.25, "test fraction for the train subcommand"),
    "noise.kind": (str, "none", "none, symmetric, asymmetric or nnar"),
    "noise.rate": (float, 0.0, "noise rate in [0, 1]"),
    "noise.transitions": (str, "", "asymmetric pairs, e.g. '0:1,1:2'"),
    "noise.groups_file": (str, "", "nnar: CSV with columns id,group"),
    "noise.group_probs": (str, "", "nnar: e.g. 'N:0.5,Mild:0.3'"),
    "noise.group_targets": (str, "", "nnar: e.g. 'N:1,Mild:0'"),
    "model.kind": (str, "softmax_regression", "softmax_regression or mlp"),
    "model.hidden_units": (int, 32, "hidden width (mlp only)"),
    "opt.learning_rate": (float, 1e-3, "SGD learning rate"),
    "opt.decay": (float, 1e-6, "per-update learning-rate decay"),
    "opt.momentum": (float, 0.9, "Nesterov momentum coefficient"),
    "opt.batch_size": (int, 16, "mini-batch size"),
    "rafni.enabled": (bool, True, "run the filtering/relabelling controller"),
    "rafni.quantile_loss": (float, 0.95, "loss-threshold quantile order"),
    "rafni.quantile_prob": (float, 0.95, "prob-threshold quantile order"),
    "rafni.record_length": (int, 5, "prediction-record length (>= 2)"),
    "rafni.not_change_epochs": (int, 4, "grace epochs after a relabel"),
    "rafni.overlap_start_threshold": (float, 0.15, "component-overlap start gate"),
    "rafni.mean_gap_freeze": (float, 0.3, "mean-gap threshold freeze gate"),
    "cv.k": (int, 5, "number of folds"),
    "cv.repeats": (int, 5, "cross-validation repetitions"),
    "cv.stratified": (bool, True, "stratify folds by class"),
    "gen.n": (int, 1000, "instances to generate"),
    "gen.classes": (int, 4, "classes to generate"),
    "gen.dim": (int, 2, "feature dimension"),
    "gen.cluster_sep": (float, 4.0, "minimum distance between cluster centers"),
    "grid.quantile_loss": (str, "", "comma list of quantile_loss candidates"),
    "grid.quantile_prob": (str, "", "comma list of quantile_prob candidates"),
    "grid.record_length": (str, "", "comma list of record_length candidates"),
    "grid.not_change_epochs": (str, "", "comma list of not_change_epochs candidates"),
}

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str):
    typ = CONFIG_KEYS[key][0]
    if typ is bool:
        lowered = str(raw).strip().lower()
        if lowered in _BOOL_TRUE:
            return True
        if lowered in _BOOL_FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
    return values


class Settings:
    """Defaults, overridden by the config file, overridden by CLI flags."""

    def __init__(self, args: argparse.Namespace):
        self.values = {key: default for key, (_, default, _) in CONFIG_KEYS.items()}
        if getattr(args, "config", None):
            self.values.update(parse_config_file(args.config))
        for key in CONFIG_KEYS:
            flag_value = getattr(args, key, None)
            if flag_value is not None:
                self.values[key] = _coerce(key, flag_value)

    def __getitem__(self, key: str):
        return self.values[key]

    def require(self, key: str):
        value = self.values[key]
        if value in (None, ""):
            raise ConfigError(f"missing required setting {key!r}")
        return value

    def echo(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values) if self.values[k] not in (None, "")}


def _parse_pair_list(raw: str, key: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise ConfigError(f"{key}: expected 'a:b' pairs, got {item!r}")
        a, b = (part.strip() for part in item.split(":", 1))
        pairs[a] = b
    return pairs


def _noise_spec(settings: Settings) -> NoiseSpec | None:
    kind = str(settings["noise.kind"]).lower()
    if kind in ("", "none"):
        return None
    transitions = {
        int(src): int(dst)
        for src, dst in _parse_pair_list(str(settings["noise.transitions"]), "noise.transitions").items()
    }
    group_probs = {
        g: float(p)
        for g, p in _parse_pair_list(str(settings["noise.group_probs"]), "noise.group_probs").items()
    }
    return NoiseSpec(kind=NoiseKind(kind), rate=float(settings["noise.rate"]),
                     transitions=transitions, group_flip_prob=group_probs)


def _nnar_tables(settings: Settings, dataset: LabeledDataset):
    """Per-instance groups (from the groups file) and group target classes."""
    groups_file = str(settings["noise.groups_file"])
    if not groups_file:
        raise ConfigError("nnar noise needs noise.groups_file")
    by_id: dict[str, str] = {}
    with open(groups_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "group"]:
            raise DataError(f"{groups_file}: header must be 'id,group'")
        for row in reader:
            if row:
                by_id[row[0]] = row[1]
    missing = [i for i in dataset.ids if i not in by_id]
    if missing:
        raise DataError(f"{groups_file}: no group for instance {missing[0]!r}")
    group_of = [by_id[i] for i in dataset.ids]
    target_of = {
        g: int(t)
        for g, t in _parse_pair_list(str(settings["noise.group_targets"]), "noise.group_targets").items()
    }
    return group_of, target_of


def _classifier_spec(settings: Settings, dataset: LabeledDataset) -> ClassifierSpec:
    kind = ClassifierKind(str(settings["model.kind"]))
    return ClassifierSpec(
        kind=kind,
        input_dim=dataset.dim,
        n_classes=dataset.n_classes,
        hidden_units=int(settings["model.hidden_units"]) if kind is ClassifierKind.MLP else 0,
    )


def _optimizer_spec(settings: Settings) -> OptimizerSpec:
    return OptimizerSpec(
        learning_rate=float(settings["opt.learning_rate"]),
        decay=float(settings["opt.decay"]),
        momentum=float(settings["opt.momentum"]),
        batch_size=int(settings["opt.batch_size"]),
    )


def _rafni_config(settings: Settings, epochs: int) -> RafniConfig | None:
    if not settings["rafni.enabled"]:
        return None
    config = RafniConfig(
        quantile_loss=float(settings["rafni.quantile_loss"]),
        quantile_prob=float(settings["rafni.quantile_prob"]),
        record_length=int(settings["rafni.record_length"]),
        not_change_epochs=int(settings["rafni.not_change_epochs"]),
        overlap_start_threshold=float(settings["rafni.overlap_start_threshold"]),
        mean_gap_freeze=float(settings["rafni.mean_gap_freeze"]),
    )
    config.validate(total_epochs=epochs)
    return config


def _epochs(settings: Settings) -> int:
    epochs = int(settings["epochs"])
    if epochs < 2:
        raise ConfigError(f"epochs must be at least 2, got {epochs}")
    return epochs


def _fmt(value) -> str:
    """One CSV cell: floats at 17 significant digits, empty for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_outputs(out_dir: Path, settings: Settings, result) -> None:
    summary = {
        "arms": {name: arm.to_dict() for name, arm in result.arms.items()},
        "noise": {
            "reports": [json.loads(r.to_json()) for r in result.noise_reports],
        },
        "settings": settings.echo(),
    }
    _write_json(out_dir / "summary.json", summary)

    with open(out_dir / "epochs.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["split", "arm", "epoch", "n_active", "n_removed_loss", "n_removed_record",
             "n_relabelled", "loss_threshold", "prob_threshold", "overlap", "mean_gap",
             "frozen", "started"]
        )
        for run in result.runs:
            for row in run["epoch_reports"]:
                writer.writerow(
                    [run["split"], run["arm"], row.epoch, row.n_active,
                     row.n_removed_loss, row.n_removed_record, row.n_relabelled,
                     _fmt(row.loss_threshold), _fmt(row.prob_threshold),
                     _fmt(row.overlap), _fmt(row.mean_gap),
                     _fmt(row.frozen), _fmt(row.started)]
                )

    with open(out_dir / "actions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["split", "arm", "epoch", "instance", "dataset_id", "action",
             "old_label", "new_label", "trigger_value"]
        )
        for run in result.runs:
            train_idx = run["train_index"]
            ids = run.get("dataset_ids")
            for entry in run["action_log"]:
                dataset_id = ids[train_idx[entry.instance_id]] if ids is not None else ""
                writer.writerow(
                    [run["split"], run["arm"], entry.epoch, entry.instance_id,
                     dataset_id, entry.action.value, entry.old_label,
                     _fmt(entry.new_label), _fmt(entry.trigger_value)]
                )

    if result.combined_audit is not None:
        _write_json(out_dir / "audit.json", result.combined_audit.to_dict())


def _run_experiment(settings: Settings, splits, dataset: LabeledDataset) -> int:
    out_dir = Path(settings.require("out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        epochs = _epochs(settings)
        noise = _noise_spec(settings)
        group_of = target_of = None
        if noise is not None and noise.kind is NoiseKind.NNAR:
            group_of, target_of = _nnar_tables(settings, dataset)
        result = run_protocol(
            dataset,
            splits,
            _classifier_spec(settings, dataset),
            _optimizer_spec(settings),
            epochs,
            int(settings["seed"]),
            _rafni_config(settings, epochs),
            noise=noise,
            baseline=bool(settings["baseline"]),
            group_of=group_of,
            target_of=target_of,
        )
        for run in result.runs:
            run["dataset_ids"] = dataset.ids
        _write_outputs(out_dir, settings, result)
    except RafniError as exc:
        (out_dir / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    for name, arm in sorted(result.arms.items()):
        print(f"{name}: accuracy {arm.mean:.4f} +/- {arm.std:.4f} over {len(arm.scores)} runs")
    return 0


def cmd_gen(args) -> int:
    settings = Settings(args)
    dataset = gen_synthetic(
        n=int(settings["gen.n"]),
        k=int(settings["gen.classes"]),
        d=int(settings["gen.dim"]),
        cluster_sep=float(settings["gen.cluster_sep"]),
        seed=int(settings["seed"]),
    )
    out = Path(settings.require("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    print(f"wrote {dataset.n} instances ({dataset.n_classes} classes, dim {dataset.dim}) to {out}")
    return 0


def cmd_inject(args) -> int:
    settings = Settings(args)
    dataset = load_dataset(settings.require("data"))
    noise = _noise_spec(settings)
    if noise is None:
        raise ConfigError("inject needs noise.kind set to symmetric, asymmetric or nnar")
    group_of = target_of = None
    if noise.kind is NoiseKind.NNAR:
        group_of, target_of = _nnar_tables(settings, dataset)
    clean = dataset.clean_labels if dataset.clean_labels is not None else dataset.labels.copy()
    noisy, report = apply_noise(
        dataset.labels, dataset.n_classes, noise, int(settings["seed"]),
        group_of=group_of, target_of=target_of,
    )
    out = Path(settings.require("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(
        LabeledDataset(ids=dataset.ids, features=dataset.features, labels=noisy,
                       clean_labels=clean, n_classes=dataset.n_classes),
        out,
    )
    Path(f"{out}.report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_json())
    return 0


def cmd_train(args) -> int:
    settings = Settings(args)
    dataset = load_dataset(settings.require("data"))
    train_idx, test_idx = holdout_split(
        dataset.labels, float(settings["holdout"]), derive_seed(int(settings["seed"]), 100)
    )
    return _run_experiment(settings, [(train_idx, test_idx)], dataset)


def cmd_cv(args) -> int:
    settings = Settings(args)
    dataset = load_dataset(settings.require("data"))
    plan = CvPlan(
        k=int(settings["cv.k"]),
        repeats=int(settings["cv.repeats"]),
        stratified=bool(settings["cv.stratified"]),
        rng_seed=derive_seed(int(settings["seed"]), 101),
    )
    return _run_experiment(settings, make_folds(dataset.labels, plan), dataset)


def cmd_grid(args) -> int:
    settings = Settings(args)
    dataset = load_dataset(settings.require("data"))
    out_dir = Path(settings.require("out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        epochs = _epochs(settings)
        grid: dict[str, list] = {}
        for field, typ in (
            ("quantile_loss", float), ("quantile_prob", float),
            ("record_length", int), ("not_change_epochs", int),
        ):
            raw = str(settings[f"grid.{field}"])
            if raw:
                grid[field] = [typ(v) for v in raw.split(",") if v.strip()]
        if not grid:
            raise ConfigError("grid search needs at least one grid.* list")
        plan = CvPlan(
            k=int(settings["cv.k"]),
            repeats=int(settings["cv.repeats"]),
            stratified=bool(settings["cv.stratified"]),
            rng_seed=derive_seed(int(settings["seed"]), 101),
        )
        best, table = grid_search(
            dataset, grid, plan,
            _classifier_spec(settings, dataset),
            _optimizer_spec(settings),
            epochs,
            int(settings["seed"]),
            base_config=_rafni_config(settings, epochs) or RafniConfig(),
            noise=_noise_spec(settings),
        )
        with open(out_dir / "grid_scores.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["quantile_loss", "quantile_prob", "record_length", "not_change_epochs",
                 "mean_accuracy", "std_accuracy"]
            )
            for row in table:
                c = row["config"]
                writer.writerow(
                    [_fmt(c.quantile_loss), _fmt(c.quantile_prob), c.record_length,
                     c.not_change_epochs, _fmt(row["mean_accuracy"]), _fmt(row["std_accuracy"])]
                )
        _write_json(
            out_dir / "best_config.json",
            {
                "quantile_loss": best.quantile_loss,
                "quantile_prob": best.quantile_prob,
                "record_length": best.record_length,
                "not_change_epochs": best.not_change_epochs,
                "overlap_start_threshold": best.overlap_start_threshold,
                "mean_gap_freeze": best.mean_gap_freeze,
            },
        )
    except RafniError as exc:
        (out_dir / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    print(f"best config: quantile_loss={best.quantile_loss} quantile_prob={best.quantile_prob} "
          f"record_length={best.record_length} not_change_epochs={best.not_change_epochs}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rafni",
        description="Noise-robust training: filter and relabel mislabelled "
        "instances while a classifier trains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen": (cmd_gen, "generate a synthetic blob dataset CSV"),
        "inject": (cmd_inject, "inject label noise into a dataset CSV"),
        "train": (cmd_train, "single hold-out training run"),
        "cv": (cmd_cv, "repeated cross-validation protocol"),
        "grid": (cmd_grid, "exhaustive controller-hyperparameter search"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        for key, (_, _, help_str) in CONFIG_KEYS.items():
            p.add_argument(f"--{key}", dest=key, metavar="V", help=help_str)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
