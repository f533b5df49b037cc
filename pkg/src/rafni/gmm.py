"""Two-component one-dimensional Gaussian mixture fitted with EM.

Per-epoch training losses tend to split into a low-loss population (instances
whose labels the model agrees with) and a high-loss one (mislabelled
instances). Fitting a two-component mixture to the losses gives the two
quantities the training controller gates on: the overlapping coefficient of
the component densities, and the gap between their means.

The fit is fully deterministic: initialization splits the sorted values at
the median, so the same input always produces the same parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateDataError, InsufficientDataError

DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-6

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Gaussian:
    """A univariate normal distribution (std strictly positive and finite)."""

    mean: float
    std: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std)):
            raise ValueError(f"gaussian parameters must be finite, got {self}")
        if self.std <= 0.0:
            raise ValueError(f"gaussian std must be positive, got {self.std}")

    def pdf(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.std
        return np.exp(-0.5 * z * z) / (self.std * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class GmmFit:
    """Result of a two-component fit, components ordered by mean.

    ``clean`` is the component with the smaller mean, ``noisy`` the one with
    the larger mean. Weights sum to one.
    """

    clean: Gaussian
    noisy: Gaussian
    weight_clean: float
    weight_noisy: float
    log_likelihood: float
    iterations: int
    converged: bool

    def responsibilities(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior membership probabilities (clean, noisy) per value."""
        x = np.asarray(values, dtype=np.float64)
        log_p = _component_log_pdf(
            x,
            np.array([self.clean.mean, self.noisy.mean]),
            np.array([self.clean.std, self.noisy.std]),
        )
        log_p += np.log([self.weight_clean, self.weight_noisy])
        log_norm = _logsumexp_rows(log_p)
        post = np.exp(log_p - log_norm[:, None])
        return post[:, 0], post[:, 1]


def _component_log_pdf(x: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    z = (x[:, None] - means[None, :]) / stds[None, :]
    return -0.5 * (z * z + _LOG_2PI) - np.log(stds)[None, :]


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def fit_two_component(
    values,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    rng_seed: int = 0,
    _ll_trace: list | None = None,
) -> GmmFit:
    """Fit a two-component mixture to one-dimensional ``values`` with EM.

    Initialization splits the sorted values at the median and estimates each
    component from its half (weights 0.5/0.5); ``rng_seed`` is accepted for
    interface uniformity but the fit is deterministic. Iteration stops when
    the relative log-likelihood improvement falls below ``tol`` or after
    ``max_iter`` iterations. Component variances are floored at
    ``max(1e-8, 1e-6 * var(values))`` every M-step to prevent collapse onto
    duplicated values.

    Raises:
        InsufficientDataError: fewer than 4 finite values.
        DegenerateDataError: all values identical (no structure to fit;
            callers treat this as "no noisy component").
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    x = x[np.isfinite(x)]
    if x.size < 4:
        raise InsufficientDataError(
            f"mixture fit needs at least 4 finite values, got {x.size}"
        )
    if np.all(x == x[0]):
        raise DegenerateDataError("all values identical; mixture fit is degenerate")

    var_floor = max(1e-8, 1e-6 * float(np.var(x)))
    std_floor = math.sqrt(var_floor)

    xs = np.sort(x)
    half = xs.size // 2
    means = np.array([xs[:half].mean(), xs[half:].mean()])
    stds = np.array(
        [max(xs[:half].std(), std_floor), max(xs[half:].std(), std_floor)]
    )
    weights = np.array([0.5, 0.5])

    log_like = -np.inf
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        # E-step in the log domain for stability on widely spread losses.
        log_p = _component_log_pdf(x, means, stds) + np.log(weights)[None, :]
        log_norm = _logsumexp_rows(log_p)
        new_ll = float(log_norm.sum())
        resp = np.exp(log_p - log_norm[:, None])

        # M-step.
        totals = resp.sum(axis=0)
        totals = np.maximum(totals, 1e-300)
        weights = totals / x.size
        means = (resp * x[:, None]).sum(axis=0) / totals
        var = (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / totals
        stds = np.sqrt(np.maximum(var, var_floor))

        if _ll_trace is not None:
            _ll_trace.append(new_ll)
        if np.isfinite(log_like):
            if new_ll - log_like < tol * abs(log_like):
                log_like = new_ll
                converged = True
                break
        log_like = new_ll

    order = np.argsort(means, kind="stable")
    means, stds, weights = means[order], stds[order], weights[order]
    return GmmFit(
        clean=Gaussian(float(means[0]), float(stds[0])),
        noisy=Gaussian(float(means[1]), float(stds[1])),
        weight_clean=float(weights[0]),
        weight_noisy=float(weights[1]),
        log_likelihood=log_like,
        iterations=iterations,
        converged=converged,
    )


def overlap(a: Gaussian, b: Gaussian, steps: int = 4096) -> float:
    """Overlapping coefficient of two unit-mass Gaussian densities.

    Computes ``integral of min(pdf_a, pdf_b)`` by trapezoidal integration on
    ``steps`` equal steps spanning ``[min(mean) - 6 max(std),
    max(mean) + 6 max(std)]``. Symmetric in its arguments, 1 for identical
    densities, 0 for disjoint ones.
    """
    for g in (a, b):
        if not (math.isfinite(g.mean) and math.isfinite(g.std)) or g.std <= 0:
            raise ValueError(f"overlap needs finite gaussians with positive std, got {g}")
    span = 6.0 * max(a.std, b.std)
    lo = min(a.mean, b.mean) - span
    hi = max(a.mean, b.mean) + span
    grid = np.linspace(lo, hi, steps + 1)
    return float(np.trapezoid(np.minimum(a.pdf(grid), b.pdf(grid)), grid))


def mean_gap(fit: GmmFit) -> float:
    """Distance between the noisy and clean component means (always >= 0)."""
    return fit.noisy.mean - fit.clean.mean
