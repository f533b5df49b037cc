"""Per-epoch training controller: filtering and relabelling of suspect instances.

The controller consumes one :class:`EpochSnapshot` per training epoch (losses,
probability vectors and argmax predictions of the currently active instances)
and maintains per-instance state. Three mechanisms act on each instance once
the controller has started:

1. loss filter: instances whose epoch loss exceeds ``loss_threshold`` are
   permanently removed,
2. record filter: instances whose last ``record_length`` predictions changed
   at every step are permanently removed,
3. relabel: instances the model contradicts with probability above
   ``prob_threshold`` take the predicted class as their new label, after which
   a grace window of ``not_change_epochs`` epochs shields them.

Both thresholds are recomputed every epoch from the PREVIOUS epoch's
snapshot: ``loss_threshold`` as the ``quantile_loss``-quantile of its losses,
``prob_threshold`` as the ``quantile_prob``-quantile of the top probabilities
of its misclassified instances. The controller starts when the two loss-mixture
components' overlap drops below ``overlap_start_threshold`` or rises between
consecutive epochs, and stops updating thresholds once the component means
are closer than ``mean_gap_freeze``.

Start timing: the start rule is evaluated on each epoch's losses; when it
fires at epoch m, the mechanisms first run at epoch m+1, with thresholds
computed from epoch m. This guarantees a previous snapshot always exists when
thresholds are first needed.
"""

from __future__ import annotations

import enum
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import gmm
from .exceptions import ConfigError, DataError, DesyncError

RECOMMENDED_QUANTILE_RANGE = (0.6, 0.99)


@dataclass
class RafniConfig:
    """Hyperparameters of the controller.

    ``quantile_loss`` and ``quantile_prob`` are quantile orders in [0, 1]
    (values outside [0.6, 0.99] work but trigger a warning; extreme orders
    remove or relabel implausibly many instances). ``record_length`` must be
    at least 2 so the record can witness one prediction change.
    ``overlap_start_threshold`` and ``mean_gap_freeze`` rarely need tuning.
    """

    quantile_loss: float = 0.95
    quantile_prob: float = 0.95
    record_length: int = 5
    not_change_epochs: int = 4
    overlap_start_threshold: float = 0.15
    mean_gap_freeze: float = 0.3

    def __post_init__(self):
        self.validate()

    def validate(self, total_epochs: int | None = None) -> None:
        for name in ("quantile_loss", "quantile_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
            lo, hi = RECOMMENDED_QUANTILE_RANGE
            if not lo <= value <= hi:
                warnings.warn(
                    f"{name}={value} is outside the recommended range [{lo}, {hi}]",
                    stacklevel=2,
                )
        if self.record_length < 2:
            raise ConfigError(
                f"record_length must be at least 2, got {self.record_length}"
            )
        if self.not_change_epochs < 1:
            raise ConfigError(
                f"not_change_epochs must be at least 1, got {self.not_change_epochs}"
            )
        if total_epochs is not None:
            if self.record_length > total_epochs:
                raise ConfigError(
                    f"record_length ({self.record_length}) must not exceed the "
                    f"total number of epochs ({total_epochs})"
                )
            if self.not_change_epochs > total_epochs:
                raise ConfigError(
                    f"not_change_epochs ({self.not_change_epochs}) must not exceed "
                    f"the total number of epochs ({total_epochs})"
                )


class Action(str, enum.Enum):
    REMOVED_BY_LOSS = "removed_by_loss"
    REMOVED_BY_RECORD = "removed_by_record"
    RELABELLED = "relabelled"


@dataclass
class ActionLogEntry:
    epoch: int
    instance_id: int
    action: Action
    old_label: int
    new_label: Optional[int] = None
    trigger_value: Optional[float] = None

    def __post_init__(self):
        if self.action is Action.RELABELLED and self.new_label == self.old_label:
            raise ValueError("relabel entries must change the label")


@dataclass
class InstanceState:
    """Bookkeeping for one training instance."""

    instance_id: int
    current_label: int
    clean_label: Optional[int] = None
    active: bool = True
    record: deque = field(default_factory=deque)
    grace_remaining: int = 0
    history: list = field(default_factory=list)


@dataclass
class EpochSnapshot:
    """Per-instance model outputs for one epoch, restricted to active instances.

    ``losses`` are natural-log cross-entropies of each instance's current
    label, ``probs`` the class-probability vectors (rows sum to one), and
    ``preds`` the argmax predictions with ties broken toward the lowest class
    index.
    """

    epoch_index: int
    instance_ids: np.ndarray
    losses: np.ndarray
    probs: np.ndarray
    preds: np.ndarray

    def __post_init__(self):
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64)
        self.losses = np.asarray(self.losses, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.preds = np.asarray(self.preds, dtype=np.int64)
        n = self.instance_ids.size
        if not (self.losses.shape == (n,) and self.preds.shape == (n,)
                and self.probs.ndim == 2 and self.probs.shape[0] == n):
            raise DataError("snapshot arrays are not aligned")
        if n:
            if self.probs.min() < 0.0:
                raise DataError("snapshot probabilities must be non-negative")
            sums = self.probs.sum(axis=1)
            if np.abs(sums - 1.0).max() > 1e-6:
                raise DataError("snapshot probability rows must sum to 1")
            if np.any(self.preds != np.argmax(self.probs, axis=1)):
                raise DataError("snapshot preds must be the argmax of probs")


@dataclass
class ThresholdState:
    """Dynamic thresholds plus the start/freeze flags that gate them."""

    loss_threshold: Optional[float] = None
    prob_threshold: Optional[float] = None
    frozen: bool = False
    started: bool = False
    prev_overlap: Optional[float] = None


@dataclass
class EpochReport:
    """One row of the controller's per-epoch trace."""

    epoch: int
    n_active: int
    n_removed_loss: int
    n_removed_record: int
    n_relabelled: int
    loss_threshold: Optional[float]
    prob_threshold: Optional[float]
    overlap: Optional[float]
    mean_gap: Optional[float]
    frozen: bool
    started: bool


def quantile(values, order: float) -> float:
    """Order-quantile by linear interpolation between closest ranks.

    ``order=0`` gives the minimum, ``order=1`` the maximum; this is the
    standard linear-interpolation definition (numpy's default).
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("quantile of an empty sequence is undefined")
    if not 0.0 <= order <= 1.0:
        raise ConfigError(f"quantile order must lie in [0, 1], got {order}")
    return float(np.quantile(x, order))


def evaluate_start(
    snapshot_losses,
    prev_overlap: Optional[float],
    overlap_start_threshold: float = 0.15,
) -> tuple[bool, float]:
    """Decide whether the controller should start, from one epoch's losses.

    Fits the two-component mixture and computes the component overlap. Starts
    when the overlap falls below ``overlap_start_threshold`` (components well
    separated) or exceeds the previous epoch's overlap (components closing in
    again, an overfitting signal).

    Propagates the mixture-fit errors for fewer than 4 or all-identical
    losses; callers interpret those as "no structure yet" and keep waiting.
    """
    fit = gmm.fit_two_component(snapshot_losses)
    ovl = gmm.overlap(fit.clean, fit.noisy)
    started = ovl < overlap_start_threshold or (
        prev_overlap is not None and ovl > prev_overlap
    )
    return started, ovl


def record_filter_fires(record, record_length: int) -> bool:
    """True when a full record's predictions changed at every step.

    "Changed record_length - 1 times in the last record_length epochs" is read
    strictly: every adjacent pair in the full record differs.
    """
    entries = list(record)
    if len(entries) < record_length:
        return False
    return all(entries[i] != entries[i + 1] for i in range(len(entries) - 1))


def update_thresholds(
    prev_snapshot: EpochSnapshot,
    states: Sequence[InstanceState],
    config: RafniConfig,
    threshold_state: ThresholdState,
    prev_fit: Optional[gmm.GmmFit] = None,
) -> ThresholdState:
    """Recompute both thresholds from the previous epoch's snapshot.

    ``loss_threshold`` is the ``quantile_loss``-quantile of the previous
    epoch's losses. ``prob_threshold`` is the ``quantile_prob``-quantile of
    the top probabilities of the instances the model misclassified in the
    previous epoch (prediction differs from the instance's current label); if
    no instance was misclassified the previous value is kept.

    After updating, the thresholds freeze permanently when the previous
    epoch's mixture components have a mean gap below ``mean_gap_freeze``; a
    missing fit (degenerate or too-small epoch) counts as "no noisy
    component" and freezes too. Frozen thresholds are never touched again.
    """
    if threshold_state.frozen:
        return threshold_state

    threshold_state.loss_threshold = quantile(prev_snapshot.losses, config.quantile_loss)

    by_id = {s.instance_id: s for s in states}
    top_prob = prev_snapshot.probs.max(axis=1)
    mis = [
        top_prob[i]
        for i, inst in enumerate(prev_snapshot.instance_ids)
        if prev_snapshot.preds[i] != by_id[int(inst)].current_label
    ]
    if mis:
        threshold_state.prob_threshold = quantile(np.asarray(mis), config.quantile_prob)

    if prev_fit is None or gmm.mean_gap(prev_fit) < config.mean_gap_freeze:
        threshold_state.frozen = True
    return threshold_state


def process_epoch(
    snapshot: EpochSnapshot,
    states: Sequence[InstanceState],
    config: RafniConfig,
    threshold_state: ThresholdState,
) -> tuple[Sequence[InstanceState], list[ActionLogEntry]]:
    """Apply the three mechanisms to every active instance for one epoch.

    Per instance, in order: a positive grace counter only decrements (the
    prediction is still recorded); otherwise the loss filter removes, else a
    confident contradicting prediction relabels (clearing the record and
    opening a grace window), else the prediction joins the record and the
    record filter may remove. Before the controller starts only the record
    bookkeeping runs.

    Mutates ``states`` in place and returns them with the epoch's action log.
    """
    by_id = {s.instance_id: s for s in states}
    expected = [s.instance_id for s in states if s.active]
    if expected != [int(i) for i in snapshot.instance_ids]:
        raise DesyncError(
            f"epoch {snapshot.epoch_index}: snapshot instances do not match "
            f"the active set"
        )

    actions: list[ActionLogEntry] = []
    if not threshold_state.started:
        for i, inst in enumerate(snapshot.instance_ids):
            state = by_id[int(inst)]
            _append_record(state, int(snapshot.preds[i]), config.record_length)
        return states, actions

    top_prob = snapshot.probs.max(axis=1)
    for i, inst in enumerate(snapshot.instance_ids):
        state = by_id[int(inst)]
        pred = int(snapshot.preds[i])

        if state.grace_remaining > 0:
            state.grace_remaining -= 1
            _append_record(state, pred, config.record_length)
            continue

        if (threshold_state.loss_threshold is not None
                and snapshot.losses[i] > threshold_state.loss_threshold):
            state.active = False
            entry = ActionLogEntry(
                epoch=snapshot.epoch_index,
                instance_id=state.instance_id,
                action=Action.REMOVED_BY_LOSS,
                old_label=state.current_label,
                trigger_value=float(snapshot.losses[i]),
            )
        elif (threshold_state.prob_threshold is not None
                and top_prob[i] > threshold_state.prob_threshold
                and pred != state.current_label):
            entry = ActionLogEntry(
                epoch=snapshot.epoch_index,
                instance_id=state.instance_id,
                action=Action.RELABELLED,
                old_label=state.current_label,
                new_label=pred,
                trigger_value=float(top_prob[i]),
            )
            state.current_label = pred
            state.record.clear()
            state.grace_remaining = config.not_change_epochs
        else:
            _append_record(state, pred, config.record_length)
            if record_filter_fires(state.record, config.record_length):
                state.active = False
                entry = ActionLogEntry(
                    epoch=snapshot.epoch_index,
                    instance_id=state.instance_id,
                    action=Action.REMOVED_BY_RECORD,
                    old_label=state.current_label,
                )
            else:
                continue
        state.history.append(entry)
        actions.append(entry)
    return states, actions


def _append_record(state: InstanceState, pred: int, record_length: int) -> None:
    state.record.append(pred)
    while len(state.record) > record_length:
        state.record.popleft()


class RafniEngine:
    """Stateful wrapper tying the start rule, threshold updates and the
    per-epoch mechanisms together over a full training run.

    Feed it one snapshot per epoch via :meth:`observe`; read
    ``active_indices`` and ``current_labels`` before each epoch to know what
    to train on. One engine serves exactly one training run.
    """

    def __init__(
        self,
        labels: Sequence[int],
        config: RafniConfig,
        clean_labels: Sequence[int] | None = None,
    ):
        labels = np.asarray(labels, dtype=np.int64)
        if clean_labels is not None:
            clean_labels = np.asarray(clean_labels, dtype=np.int64)
            if clean_labels.shape != labels.shape:
                raise DataError("clean labels must align with the training labels")
        self.config = config
        self.states = [
            InstanceState(
                instance_id=i,
                current_label=int(labels[i]),
                clean_label=int(clean_labels[i]) if clean_labels is not None else None,
            )
            for i in range(labels.size)
        ]
        self.thresholds = ThresholdState()
        self.action_log: list[ActionLogEntry] = []
        self.epoch_reports: list[EpochReport] = []
        self._prev_snapshot: Optional[EpochSnapshot] = None
        self._prev_fit: Optional[gmm.GmmFit] = None

    @property
    def active_indices(self) -> np.ndarray:
        return np.array([s.instance_id for s in self.states if s.active], dtype=np.int64)

    @property
    def current_labels(self) -> np.ndarray:
        return np.array([s.current_label for s in self.states], dtype=np.int64)

    @property
    def n_active(self) -> int:
        return sum(1 for s in self.states if s.active)

    def observe(self, snapshot: EpochSnapshot) -> EpochReport:
        """Ingest one epoch's snapshot; returns the epoch's report row."""
        fit: Optional[gmm.GmmFit] = None
        ovl = gap = None
        try:
            fit = gmm.fit_two_component(snapshot.losses)
            ovl = gmm.overlap(fit.clean, fit.noisy)
            gap = gmm.mean_gap(fit)
        except DataError:
            pass

        tstate = self.thresholds
        if tstate.started:
            update_thresholds(
                self._prev_snapshot, self.states, self.config, tstate, self._prev_fit
            )
            _, actions = process_epoch(snapshot, self.states, self.config, tstate)
        else:
            # Record bookkeeping only; if the start rule fires on this epoch's
            # losses, the mechanisms first run next epoch (with thresholds
            # computed from this snapshot).
            _, actions = process_epoch(snapshot, self.states, self.config, tstate)
            if ovl is not None:
                if ovl < self.config.overlap_start_threshold or (
                    tstate.prev_overlap is not None and ovl > tstate.prev_overlap
                ):
                    tstate.started = True
                tstate.prev_overlap = ovl
        self.action_log.extend(actions)

        report = EpochReport(
            epoch=snapshot.epoch_index,
            n_active=snapshot.instance_ids.size,
            n_removed_loss=sum(1 for a in actions if a.action is Action.REMOVED_BY_LOSS),
            n_removed_record=sum(
                1 for a in actions if a.action is Action.REMOVED_BY_RECORD
            ),
            n_relabelled=sum(1 for a in actions if a.action is Action.RELABELLED),
            loss_threshold=tstate.loss_threshold,
            prob_threshold=tstate.prob_threshold,
            overlap=ovl,
            mean_gap=gap,
            frozen=tstate.frozen,
            started=tstate.started,
        )
        self.epoch_reports.append(report)
        self._prev_snapshot = snapshot
        self._prev_fit = fit
        return report
