"""Experiment protocols and the effectiveness audit.

The building blocks are a deterministic stratified fold generator, a
single-run trainer (with or without the filtering controller), a repeated
cross-validation driver and an exhaustive grid search. All randomness flows
from one master seed through :func:`derive_seed`, so any fold, repeat or grid
point can be reproduced in isolation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledDataset
from .engine import Action, ActionLogEntry, EpochReport, RafniConfig, RafniEngine
from .exceptions import (
    AuditUnavailableError,
    ConfigError,
    DataError,
    StratificationInfeasibleError,
)
from .models import Classifier, ClassifierSpec, OptimizerSpec, init_model
from .noise import NoiseReport, NoiseSpec, apply_noise


def derive_seed(master_seed: int, *path: int) -> int:
    """Deterministically mix a master seed with an integer path.

    Uses ``numpy.random.SeedSequence([master_seed, *path])``, so e.g.
    ``derive_seed(master, repeat, fold)`` yields independent, reproducible
    streams for every (repeat, fold) pair.
    """
    ss = np.random.SeedSequence([int(master_seed), *[int(p) for p in path]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class CvPlan:
    """Repeated (optionally stratified) k-fold protocol."""

    k: int = 5
    repeats: int = 5
    stratified: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"cross-validation needs k >= 2, got {self.k}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be at least 1, got {self.repeats}")


def accuracy(predictions, true_labels) -> float:
    """Exact-match fraction."""
    p = np.asarray(predictions)
    t = np.asarray(true_labels)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: predictions {p.shape} vs labels {t.shape}")
    if p.size == 0:
        raise ValueError("accuracy of empty sequences is undefined")
    return float(np.mean(p == t))


def make_folds(labels, plan: CvPlan) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, test) index pairs, ordered by (repeat, fold).

    Stratified folds deal each class's shuffled members round-robin across
    folds, so per-fold class counts differ by at most one from an exact
    split. Deterministic per ``plan.rng_seed``.
    """
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    if n < plan.k:
        raise DataError(f"cannot make {plan.k} folds from {n} instances")
    if plan.stratified:
        for cls in np.unique(y):
            count = int(np.sum(y == cls))
            if count < plan.k:
                raise StratificationInfeasibleError(
                    f"class {cls} has {count} members, fewer than k={plan.k}"
                )

    splits: list[tuple[np.ndarray, np.ndarray]] = []
    for repeat in range(plan.repeats):
        rng = np.random.default_rng(derive_seed(plan.rng_seed, repeat))
        folds: list[np.ndarray]
        if plan.stratified:
            folds = [[] for _ in range(plan.k)]
            for cls in np.unique(y):
                members = rng.permutation(np.flatnonzero(y == cls))
                for f in range(plan.k):
                    folds[f].extend(members[f::plan.k])
            folds = [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]
        else:
            folds = [
                np.sort(part)
                for part in np.array_split(rng.permutation(n), plan.k)
            ]
        for f in range(plan.k):
            test = folds[f]
            train = np.sort(np.setdiff1d(np.arange(n), test))
            splits.append((train, test))
    return splits


def holdout_split(
    labels, test_fraction: float, rng_seed: int, stratified: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Single stratified train/test split with ``test_fraction`` held out."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test fraction must lie in (0, 1), got {test_fraction}")
    y = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(rng_seed)
    test: list[int] = []
    if stratified:
        for cls in np.unique(y):
            members = rng.permutation(np.flatnonzero(y == cls))
            n_test = int(round(test_fraction * members.size))
            test.extend(members[:n_test])
    else:
        perm = rng.permutation(y.size)
        test.extend(perm[: int(round(test_fraction * y.size))])
    test_arr = np.sort(np.asarray(test, dtype=np.int64))
    train_arr = np.sort(np.setdiff1d(np.arange(y.size), test_arr))
    if test_arr.size == 0 or train_arr.size == 0:
        raise DataError("hold-out split produced an empty partition")
    return train_arr, test_arr


@dataclass
class EffectivenessReport:
    """How well the controller's actions matched the hidden clean labels."""

    pct_good_removals: float
    total_removals: int
    pct_good_changes: float
    pct_noisy_changes: float
    total_changes: int

    def to_dict(self) -> dict:
        return {
            "pct_good_removals": self.pct_good_removals,
            "total_removals": self.total_removals,
            "pct_good_changes": self.pct_good_changes,
            "pct_noisy_changes": self.pct_noisy_changes,
            "total_changes": self.total_changes,
        }


def audit(
    action_log: list[ActionLogEntry], clean_labels, noisy_labels
) -> EffectivenessReport:
    """Classify every logged action against the hidden clean labels.

    A good removal removed an instance whose training label was corrupted; a
    good change restored a corrupted instance's clean class; a noisy change
    relabelled a corrupted instance to yet another wrong class. Percentages
    are over total removals and total changes respectively (0 when empty).
    """
    if clean_labels is None:
        raise AuditUnavailableError("audit needs clean labels")
    clean = np.asarray(clean_labels, dtype=np.int64)
    noisy = np.asarray(noisy_labels, dtype=np.int64)
    removals = changes = good_removals = good_changes = noisy_changes = 0
    for entry in action_log:
        i = entry.instance_id
        if not 0 <= i < clean.size:
            raise AuditUnavailableError(f"no clean label for instance {i}")
        was_noisy = noisy[i] != clean[i]
        if entry.action in (Action.REMOVED_BY_LOSS, Action.REMOVED_BY_RECORD):
            removals += 1
            if was_noisy:
                good_removals += 1
        else:
            changes += 1
            if was_noisy and entry.new_label == clean[i]:
                good_changes += 1
            elif was_noisy:
                noisy_changes += 1
    return EffectivenessReport(
        pct_good_removals=good_removals / removals if removals else 0.0,
        total_removals=removals,
        pct_good_changes=good_changes / changes if changes else 0.0,
        pct_noisy_changes=noisy_changes / changes if changes else 0.0,
        total_changes=changes,
    )


@dataclass
class RunResult:
    """Everything a single training run produced."""

    test_accuracy: float
    epoch_reports: list[EpochReport]
    action_log: list[ActionLogEntry]
    audit_report: EffectivenessReport | None
    model: Classifier
    final_labels: np.ndarray
    n_active_final: int


def run_single(
    train_features,
    train_labels,
    test_features,
    test_labels,
    classifier_spec: ClassifierSpec,
    optimizer: OptimizerSpec,
    epochs: int,
    seed: int,
    rafni_config: RafniConfig | None = None,
    clean_train_labels=None,
) -> RunResult:
    """Train one model for ``epochs`` epochs and score it on the test split.

    With a :class:`RafniConfig` the controller filters/relabels between
    epochs; without one this is the plain baseline. ``clean_train_labels``,
    when given, enables the effectiveness audit.
    """
    x = np.asarray(train_features, dtype=np.float64)
    y = np.asarray(train_labels, dtype=np.int64)
    model = init_model(classifier_spec, rng_seed=derive_seed(seed, 0))
    engine = None
    if rafni_config is not None:
        rafni_config.validate(total_epochs=epochs)
        engine = RafniEngine(y, rafni_config, clean_labels=clean_train_labels)

    for m in range(epochs):
        if engine is not None:
            active = engine.active_indices
            if active.size == 0:
                break
            labels_now = engine.current_labels
            snap = model.train_epoch(
                x[active],
                labels_now[active],
                optimizer,
                rng_seed_for_shuffle=derive_seed(seed, 1, m),
                epoch_index=m,
                instance_ids=active,
            )
            engine.observe(snap)
        else:
            model.train_epoch(
                x,
                y,
                optimizer,
                rng_seed_for_shuffle=derive_seed(seed, 1, m),
                epoch_index=m,
            )

    test_acc = accuracy(model.predict(test_features), test_labels)
    audit_report = None
    if engine is not None and clean_train_labels is not None:
        audit_report = audit(engine.action_log, clean_train_labels, y)
    return RunResult(
        test_accuracy=test_acc,
        epoch_reports=engine.epoch_reports if engine else [],
        action_log=engine.action_log if engine else [],
        audit_report=audit_report,
        model=model,
        final_labels=engine.current_labels if engine else y,
        n_active_final=engine.n_active if engine else y.size,
    )


@dataclass
class ArmSummary:
    """Mean/std accuracy of one protocol arm plus the per-run scores."""

    name: str
    scores: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "scores": list(self.scores)}


@dataclass
class ProtocolResult:
    """Aggregated output of a repeated-CV or hold-out experiment."""

    arms: dict[str, ArmSummary]
    runs: list[dict]
    noise_reports: list[NoiseReport]
    combined_audit: EffectivenessReport | None


def _inject_train_noise(
    dataset: LabeledDataset, train_idx: np.ndarray, noise: NoiseSpec | None, seed: int,
    group_of=None, target_of=None,
) -> tuple[np.ndarray, np.ndarray, NoiseReport | None]:
    """Corrupt the training portion only; returns (noisy labels, clean labels,
    report) for the train subset."""
    clean = (
        dataset.clean_labels[train_idx]
        if dataset.clean_labels is not None
        else dataset.labels[train_idx]
    )
    base = dataset.labels[train_idx]
    if noise is None:
        return base.copy(), clean, None
    groups = None
    if group_of is not None:
        groups = [group_of[i] for i in train_idx]
    noisy, report = apply_noise(
        base, dataset.n_classes, noise, seed, group_of=groups, target_of=target_of
    )
    return noisy, clean, report


def run_protocol(
    dataset: LabeledDataset,
    splits: list[tuple[np.ndarray, np.ndarray]],
    classifier_spec: ClassifierSpec,
    optimizer: OptimizerSpec,
    epochs: int,
    master_seed: int,
    rafni_config: RafniConfig | None,
    noise: NoiseSpec | None = None,
    baseline: bool = True,
    group_of=None,
    target_of=None,
) -> ProtocolResult:
    """Run every split with the controller arm and optionally a baseline arm.

    Noise (when configured) corrupts each split's training portion only; test
    portions keep their stored (clean) labels. Both arms of a split train on
    the same corrupted labels, so they are directly comparable.
    """
    arm_scores: dict[str, list[float]] = {}
    runs: list[dict] = []
    noise_reports: list[NoiseReport] = []
    all_actions: list[ActionLogEntry] = []
    all_clean: list[np.ndarray] = []
    all_noisy: list[np.ndarray] = []

    arms: list[tuple[str, RafniConfig | None]] = []
    if rafni_config is not None:
        arms.append(("rafni", rafni_config))
    if baseline or rafni_config is None:
        arms.append(("baseline", None))

    for split_idx, (train_idx, test_idx) in enumerate(splits):
        noisy_labels, clean_labels, report = _inject_train_noise(
            dataset, train_idx, noise, derive_seed(master_seed, split_idx, 0),
            group_of=group_of, target_of=target_of,
        )
        if report is not None:
            noise_reports.append(report)
        test_clean = (
            dataset.clean_labels[test_idx]
            if dataset.clean_labels is not None
            else dataset.labels[test_idx]
        )
        for arm_no, (arm_name, config) in enumerate(arms):
            result = run_single(
                dataset.features[train_idx],
                noisy_labels,
                dataset.features[test_idx],
                test_clean,
                classifier_spec,
                optimizer,
                epochs,
                seed=derive_seed(master_seed, split_idx, 1 + arm_no),
                rafni_config=config,
                clean_train_labels=clean_labels,
            )
            arm_scores.setdefault(arm_name, []).append(result.test_accuracy)
            runs.append(
                {
                    "split": split_idx,
                    "arm": arm_name,
                    "accuracy": result.test_accuracy,
                    "epoch_reports": result.epoch_reports,
                    "action_log": result.action_log,
                    "train_index": train_idx,
                }
            )
            if config is not None:
                all_actions.append(result.action_log)
                all_clean.append(clean_labels)
                all_noisy.append(noisy_labels)

    combined_audit = None
    if all_actions:
        offset = 0
        merged: list[ActionLogEntry] = []
        merged_clean: list[np.ndarray] = []
        merged_noisy: list[np.ndarray] = []
        for acts, cl, no in zip(all_actions, all_clean, all_noisy):
            merged.extend(replace(a, instance_id=a.instance_id + offset) for a in acts)
            merged_clean.append(cl)
            merged_noisy.append(no)
            offset += cl.size
        combined_audit = audit(
            merged, np.concatenate(merged_clean), np.concatenate(merged_noisy)
        )
    return ProtocolResult(
        arms={name: ArmSummary(name, scores) for name, scores in arm_scores.items()},
        runs=runs,
        noise_reports=noise_reports,
        combined_audit=combined_audit,
    )


def grid_search(
    dataset: LabeledDataset,
    grid: dict[str, list],
    plan: CvPlan,
    classifier_spec: ClassifierSpec,
    optimizer: OptimizerSpec,
    epochs: int,
    master_seed: int,
    base_config: RafniConfig | None = None,
    noise: NoiseSpec | None = None,
) -> tuple[RafniConfig, list[dict]]:
    """Exhaustively evaluate a controller-hyperparameter grid.

    ``dataset`` must be training data only; each grid point is scored by the
    plan's internal cross-validation (mean accuracy over its splits). Ties
    break toward lower ``quantile_loss``, then lower ``quantile_prob``, then
    the remaining fields lexicographically. Returns the winning config and
    the full score table sorted best-first.
    """
    if not grid:
        raise ConfigError("grid search needs a non-empty grid")
    unknown = set(grid) - {
        "quantile_loss", "quantile_prob", "record_length", "not_change_epochs",
        "overlap_start_threshold", "mean_gap_freeze",
    }
    if unknown:
        raise ConfigError(f"unknown grid fields: {sorted(unknown)}")
    base = base_config if base_config is not None else RafniConfig()

    names = sorted(grid)
    table: list[dict] = []
    splits = make_folds(dataset.labels, plan)
    for values in itertools.product(*(grid[name] for name in names)):
        config = replace(base, **dict(zip(names, values)))
        result = run_protocol(
            dataset,
            splits,
            classifier_spec,
            optimizer,
            epochs,
            master_seed,
            config,
            noise=noise,
            baseline=False,
        )
        summary = result.arms["rafni"]
        table.append(
            {
                "config": config,
                "mean_accuracy": summary.mean,
                "std_accuracy": summary.std,
                "scores": summary.scores,
            }
        )

    def sort_key(row):
        c: RafniConfig = row["config"]
        return (
            -row["mean_accuracy"],
            c.quantile_loss,
            c.quantile_prob,
            c.record_length,
            c.not_change_epochs,
            c.overlap_start_threshold,
            c.mean_gap_freeze,
        )

    table.sort(key=sort_key)
    return table[0]["config"], table
