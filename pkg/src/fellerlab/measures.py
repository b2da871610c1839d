"""Probability measures on the line and on finite state sets.

Finite measures live on labelled state indices; empirical measures are
weighted sample clouds on the real line standing in for ``P_t(x, .)`` or
``Q_t(x, .)``. Distances between them and the Lipschitz test functions used
by the stability diagnostics are defined here.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm, wasserstein_distance

from .errors import DomainError

_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FiniteMeasure:
    """Probability vector over an ordered list of distinct state indices."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64).ravel()
        probs = np.asarray(self.probs, dtype=np.float64).ravel()
        if support.shape != probs.shape:
            raise DomainError("support and probs must have the same length")
        if len(np.unique(support)) != len(support):
            raise DomainError("support indices must be distinct")
        if np.any(probs < 0):
            raise DomainError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > _SUM_TOL:
            raise DomainError(f"probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point_mass(cls, state: int, n_states: int) -> "FiniteMeasure":
        probs = np.zeros(n_states)
        probs[state] = 1.0
        return cls(np.arange(n_states), probs)

    @classmethod
    def from_vector(cls, probs) -> "FiniteMeasure":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(np.arange(len(probs)), probs)

    def __len__(self):
        return len(self.support)

    def mass(self, states) -> float:
        mask = np.isin(self.support, np.asarray(list(states), dtype=np.int64))
        return float(self.probs[mask].sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "prob"])
            for s, p in zip(self.support, self.probs):
                w.writerow([int(s), format(float(p), ".17g")])

    @classmethod
    def from_csv(cls, path) -> "FiniteMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([int(r["state"]) for r in rows], [float(r["prob"]) for r in rows])


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted sample cloud on the real line (uniform weights by default)."""

    samples: np.ndarray
    weights: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if samples.size == 0:
            raise DomainError("empirical measure needs at least one sample")
        object.__setattr__(self, "samples", samples)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).ravel()
            if w.shape != samples.shape:
                raise DomainError("weights and samples must have the same length")
            if np.any(w < 0):
                raise DomainError("weights must be nonnegative")
            if abs(w.sum() - 1.0) > _SUM_TOL:
                raise DomainError(f"weights sum to {w.sum()!r}, not 1")
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.samples.size

    @property
    def is_uniform(self) -> bool:
        return self.weights is None

    def probabilities(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.samples.size, 1.0 / self.samples.size)
        return self.weights

    def effective_size(self) -> float:
        """Kish effective sample size; equals ``len`` for uniform weights."""
        if self.weights is None:
            return float(self.samples.size)
        return 1.0 / float(np.sum(self.weights ** 2))

    def translate(self, c: float) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.samples + c, self.weights, dict(self.metadata))

    def to_csv(self, path) -> None:
        p = self.probabilities()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "weight"])
            for s, q in zip(self.samples, p):
                w.writerow([format(float(s), ".17g"), format(float(q), ".17g")])

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        samples = [float(r["sample"]) for r in rows]
        weights = np.array([float(r["weight"]) for r in rows])
        if np.allclose(weights, 1.0 / len(weights), rtol=0, atol=1e-15):
            weights = None
        return cls(samples, weights)


@dataclass(frozen=True)
class TestFunction:
    """Bounded Lipschitz function with its sup norm and Lipschitz constant."""

    __test__ = False  # keep pytest from collecting this class

    kind: str
    sup_norm: float
    lip_const: float
    center: float | None = None
    radius: float | None = None
    fn: Callable | None = field(default=None, compare=False, repr=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "hat":
            return np.maximum(0.0, 1.0 - np.abs(x - self.center) / self.radius)
        return np.clip(np.asarray(self.fn(x), dtype=np.float64), -self.sup_norm, self.sup_norm)

    @classmethod
    def custom(cls, fn, sup_norm: float, lip_const: float) -> "TestFunction":
        if sup_norm <= 0 or lip_const < 0:
            raise DomainError("custom test function needs sup_norm > 0 and lip_const >= 0")
        return cls("custom", float(sup_norm), float(lip_const), fn=fn)


def hat_function(z: float, eps: float) -> TestFunction:
    """``f(x) = max(0, 1 - |x - z| / eps)``, a 1/eps-Lipschitz bump of height one."""
    if not eps > 0:
        raise DomainError(f"hat radius must be positive, got {eps!r}")
    return TestFunction("hat", 1.0, 1.0 / eps, center=float(z), radius=float(eps))


def tv_finite(mu: FiniteMeasure, nu: FiniteMeasure) -> float:
    """Total variation distance ``(1/2) sum |mu_i - nu_i|`` on a shared state set."""
    if mu.support.shape != nu.support.shape or not np.array_equal(mu.support, nu.support):
        if set(mu.support.tolist()) != set(nu.support.tolist()):
            raise DomainError("measures live on different state sets")
        order = np.argsort(nu.support)
        pos = np.searchsorted(nu.support[order], mu.support)
        nu_probs = nu.probs[order][pos]
    else:
        nu_probs = nu.probs
    return float(min(1.0, 0.5 * np.abs(mu.probs - nu_probs).sum()))


def w1_empirical_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """1-Wasserstein distance between two empirical measures on the line.

    Equal-size uniform clouds are paired by order statistics; anything else
    goes through the quantile-function formula with weights.
    """
    if len(mu) == 0 or len(nu) == 0:
        raise DomainError("empty measure")
    if mu.is_uniform and nu.is_uniform and len(mu) == len(nu):
        return float(np.mean(np.abs(np.sort(mu.samples) - np.sort(nu.samples))))
    return float(wasserstein_distance(mu.samples, nu.samples, mu.weights, nu.weights))


def bin_edges_from_spec(spec) -> np.ndarray:
    """Edges from an explicit list or a ``{"min", "max", "count"}`` mapping (count = bins)."""
    if isinstance(spec, dict):
        lo, hi, count = float(spec["min"]), float(spec["max"]), int(spec["count"])
        if count < 1 or not hi > lo:
            raise DomainError("uniform bin spec needs max > min and count >= 1")
        return np.linspace(lo, hi, count + 1)
    return np.asarray(spec, dtype=np.float64)


def bin_masses(mu: EmpiricalMeasure, bin_edges) -> np.ndarray:
    """Mass per bin, with an underflow bin first and an overflow bin last."""
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DomainError("bin edges must be a strictly increasing list of >= 2 reals")
    idx = np.searchsorted(edges, mu.samples, side="right")
    # the top edge is closed: samples equal to it belong to the last real bin
    idx[mu.samples == edges[-1]] = edges.size - 1
    return np.bincount(idx, weights=mu.probabilities(), minlength=edges.size + 1)


def tv_binned(mu: EmpiricalMeasure, nu: EmpiricalMeasure, bin_edges) -> float:
    """Half l1 distance between the bin-mass vectors of two sample clouds."""
    return float(min(1.0, 0.5 * np.abs(bin_masses(mu, bin_edges) - bin_masses(nu, bin_edges)).sum()))


def wilson_interval(p_hat: float, n: float, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    zq = float(norm.ppf(0.5 + confidence / 2.0))
    z2 = zq * zq
    denom = 1.0 + z2 / n
    center = (p_hat + z2 / (2.0 * n)) / denom
    half = zq / denom * math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n + z2 / (4.0 * n * n))
    return max(0.0, center - half), min(1.0, center + half)


def ball_hit_fraction(mu: EmpiricalMeasure, z: float, eps: float, confidence: float = 0.95):
    """Fraction of mass strictly inside ``B(z, eps)`` with a Wilson interval.

    Returns ``(estimate, ci_low, ci_high)``. For weighted clouds the Kish
    effective size replaces the sample count.
    """
    if not eps > 0:
        raise DomainError("ball radius must be positive")
    inside = np.abs(mu.samples - z) < eps
    if mu.is_uniform:
        est = int(inside.sum()) / inside.size  # exact for counts
    else:
        est = float(np.sum(mu.weights[inside]))
    est = min(max(est, 0.0), 1.0)
    lo, hi = wilson_interval(est, mu.effective_size(), confidence)
    return est, lo, hi


def expectation(mu: EmpiricalMeasure | FiniteMeasure, f: TestFunction | Callable) -> float:
    """``<mu, f>``; finite measures evaluate ``f`` at their state indices."""
    if isinstance(mu, FiniteMeasure):
        vals = np.asarray(f(mu.support.astype(np.float64)), dtype=np.float64)
        return float(np.dot(mu.probs, vals))
    vals = np.asarray(f(mu.samples), dtype=np.float64)
    return float(np.dot(mu.probabilities(), vals))

