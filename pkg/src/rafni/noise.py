"""Controlled label-noise injection.

Three corruption models are supported:

* symmetric: a fixed fraction of each class is flipped to a uniformly random
  other class (the original class is excluded from the draw),
* asymmetric: a fixed fraction of selected source classes is flipped to a
  designated target class,
* group-conditional: every instance flips to its group's target class
  independently, with a per-group probability.

Symmetric and asymmetric injection corrupt exact counts (``floor(rate * n)``
per class, remainder left clean) so the realized rate is testable without
tolerance; the group-conditional injector is per-instance Bernoulli because
its contract is a probability per group.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ConfigError, DataError


class NoiseKind(str, enum.Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"
    NNAR = "nnar"


@dataclass
class NoiseSpec:
    """Declarative description of a noise injection.

    Attributes:
        kind: which corruption model to apply.
        rate: fraction in [0, 1] of instances to corrupt (per class for
            symmetric, per source class for asymmetric; unused for nnar).
        transitions: ``{source_class: target_class}`` pairs, asymmetric only.
        group_flip_prob: ``{group_id: probability}``, nnar only.
    """

    kind: NoiseKind
    rate: float = 0.0
    transitions: dict[int, int] = field(default_factory=dict)
    group_flip_prob: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = NoiseKind(self.kind)
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"noise rate must lie in [0, 1], got {self.rate}")
        for src, dst in self.transitions.items():
            if src == dst:
                raise ConfigError(f"transition {src}->{dst} maps a class to itself")
        for group, p in self.group_flip_prob.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigError(
                    f"group {group!r} flip probability must lie in [0, 1], got {p}"
                )


@dataclass
class NoiseReport:
    """What an injection actually did to the labels."""

    n_corrupted: int
    realized_rate: float
    per_class_corrupted: dict[int, int]

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_corrupted": self.n_corrupted,
                "realized_rate": self.realized_rate,
                "per_class_corrupted": {str(c): n for c, n in sorted(self.per_class_corrupted.items())},
            },
            indent=2,
        )


def _as_label_array(labels: Sequence[int], k: int) -> np.ndarray:
    out = np.asarray(labels, dtype=np.int64)
    if out.ndim != 1:
        raise DataError("labels must be a one-dimensional sequence")
    if out.size and (out.min() < 0 or out.max() >= k):
        raise DataError(f"every label must lie in [0, {k}), got range "
                        f"[{out.min()}, {out.max()}]")
    return out


def _report(original: np.ndarray, noisy: np.ndarray) -> NoiseReport:
    corrupted = noisy != original
    per_class: dict[int, int] = {}
    for cls in np.unique(original[corrupted]):
        per_class[int(cls)] = int(np.sum(corrupted & (original == cls)))
    n = original.size
    n_corrupted = int(corrupted.sum())
    return NoiseReport(
        n_corrupted=n_corrupted,
        realized_rate=n_corrupted / n if n else 0.0,
        per_class_corrupted=per_class,
    )


def inject_symmetric(
    labels: Sequence[int], k: int, rate: float, rng_seed: int
) -> tuple[np.ndarray, NoiseReport]:
    """Flip ``floor(rate * n_c)`` instances of every class c to a uniformly
    random different class.

    The corrupted count is exact and stratified: each class loses the same
    fraction. The replacement class is drawn uniformly from the k-1 classes
    other than the original, so a corrupted label never equals the original.

    Returns the new label array and a :class:`NoiseReport`.
    """
    if k < 2:
        raise ConfigError(f"symmetric noise needs at least 2 classes, got k={k}")
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"noise rate must lie in [0, 1], got {rate}")
    original = _as_label_array(labels, k)
    noisy = original.copy()
    rng = np.random.default_rng(rng_seed)
    for cls in range(k):
        members = np.flatnonzero(original == cls)
        n_flip = int(np.floor(rate * members.size))
        if n_flip == 0:
            continue
        chosen = rng.choice(members, size=n_flip, replace=False)
        # Draw from k-1 classes excluding the original by skipping over it.
        draws = rng.integers(0, k - 1, size=n_flip)
        draws[draws >= cls] += 1
        noisy[chosen] = draws
    return noisy, _report(original, noisy)


def inject_asymmetric(
    labels: Sequence[int],
    k: int,
    rate: float,
    transitions: Mapping[int, int],
    rng_seed: int,
) -> tuple[np.ndarray, NoiseReport]:
    """Relabel ``floor(rate * n_s)`` instances of each source class s to its
    designated target class; classes without a transition are untouched."""
    if k < 2:
        raise ConfigError(f"asymmetric noise needs at least 2 classes, got k={k}")
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"noise rate must lie in [0, 1], got {rate}")
    seen_sources = set()
    for src, dst in transitions.items():
        if not (0 <= src < k) or not (0 <= dst < k):
            raise ConfigError(
                f"transition {src}->{dst} references a class outside [0, {k})"
            )
        if src == dst:
            raise ConfigError(f"transition {src}->{dst} maps a class to itself")
        if src in seen_sources:
            raise ConfigError(f"source class {src} appears in more than one transition")
        seen_sources.add(src)
    original = _as_label_array(labels, k)
    noisy = original.copy()
    rng = np.random.default_rng(rng_seed)
    for src in sorted(transitions):
        dst = transitions[src]
        members = np.flatnonzero(original == src)
        n_flip = int(np.floor(rate * members.size))
        if n_flip == 0:
            continue
        chosen = rng.choice(members, size=n_flip, replace=False)
        noisy[chosen] = dst
    return noisy, _report(original, noisy)


def inject_nnar(
    labels: Sequence[int],
    group_of: Mapping[int, str] | Sequence[str],
    group_flip_prob: Mapping[str, float],
    target_of: Mapping[str, int],
    rng_seed: int,
) -> tuple[np.ndarray, NoiseReport]:
    """Group-conditional injection: instance i flips to its group's target
    class independently with its group's probability.

    ``group_of`` maps the instance index to a group id (a sequence aligned
    with ``labels`` works too); every group present must have an entry in both
    ``group_flip_prob`` and ``target_of``.
    """
    k = int(np.max(labels)) + 1 if len(labels) else 0
    original = np.asarray(labels, dtype=np.int64)
    if isinstance(group_of, Mapping):
        groups = []
        for i in range(original.size):
            if i not in group_of:
                raise DataError(f"instance {i} has no group assignment")
            groups.append(group_of[i])
    else:
        groups = list(group_of)
        if len(groups) != original.size:
            raise DataError(
                f"group assignments cover {len(groups)} instances, expected {original.size}"
            )
    for g in set(groups):
        if g not in group_flip_prob:
            raise DataError(f"group {g!r} has no flip probability")
        if g not in target_of:
            raise DataError(f"group {g!r} has no target class")
        if not 0.0 <= group_flip_prob[g] <= 1.0:
            raise ConfigError(
                f"group {g!r} flip probability must lie in [0, 1], got {group_flip_prob[g]}"
            )
    noisy = original.copy()
    rng = np.random.default_rng(rng_seed)
    draws = rng.random(original.size)
    for i, g in enumerate(groups):
        if draws[i] < group_flip_prob[g]:
            noisy[i] = target_of[g]
    return noisy, _report(original, noisy)


def apply_noise(
    labels: Sequence[int],
    k: int,
    spec: NoiseSpec,
    rng_seed: int,
    group_of: Sequence[str] | None = None,
    target_of: Mapping[str, int] | None = None,
) -> tuple[np.ndarray, NoiseReport]:
    """Dispatch an injection according to ``spec``."""
    if spec.kind is NoiseKind.SYMMETRIC:
        return inject_symmetric(labels, k, spec.rate, rng_seed)
    if spec.kind is NoiseKind.ASYMMETRIC:
        return inject_asymmetric(labels, k, spec.rate, spec.transitions, rng_seed)
    if group_of is None or target_of is None:
        raise DataError("nnar injection needs per-instance groups and group targets")
    return inject_nnar(labels, group_of, spec.group_flip_prob, target_of, rng_seed)
