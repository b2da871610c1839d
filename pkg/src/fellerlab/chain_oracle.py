"""Exact computations on finite-state Markov chains.

These are the ground truth the Monte Carlo estimators are checked against:
matrix powers, the invariant measure, Cesàro averages, Doeblin constants, an
executable alpha-splitting of two transition laws, and the exact limiting
values of the lower-bound conditions.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DomainError, NonUniqueInvariantMeasure, PreconditionError
from .measures import FiniteMeasure, tv_finite
from .report import EXACT_CAVEAT, CriterionReport, PointEstimate, dumps

_ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FiniteChain:
    """Discrete-time chain: row-stochastic kernel, optional labels and metric."""

    kernel: np.ndarray
    labels: tuple | None = None
    metric: np.ndarray | None = None

    def __post_init__(self):
        P = np.array(self.kernel, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise DomainError("kernel must be a nonempty square matrix")
        if np.any(P < 0) or np.any(P > 1):
            raise DomainError("kernel entries must lie in [0, 1]")
        bad = np.abs(P.sum(axis=1) - 1.0) > _ROW_TOL
        if np.any(bad):
            raise DomainError(f"rows {np.flatnonzero(bad).tolist()} do not sum to 1")
        P.setflags(write=False)
        object.__setattr__(self, "kernel", P)
        n = P.shape[0]
        if self.labels is not None:
            if len(self.labels) != n:
                raise DomainError("need one label per state")
            object.__setattr__(self, "labels", tuple(self.labels))
        if self.metric is None:
            D = 1.0 - np.eye(n)
        else:
            D = np.array(self.metric, dtype=np.float64)
            if D.shape != (n, n):
                raise DomainError("metric must be n x n")
            if np.any(D < 0) or np.any(np.diag(D) != 0) or not np.allclose(D, D.T):
                raise DomainError("metric must be symmetric, nonnegative, zero on the diagonal")
            # d(i,k) <= d(i,j) + d(j,k) for all triples
            if np.any(D[:, None, :] > D[:, :, None] + D[None, :, :] + 1e-12):
                raise DomainError("metric violates the triangle inequality")
        D.setflags(write=False)
        object.__setattr__(self, "metric", D)

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    def ball(self, z: int, eps: float) -> np.ndarray:
        """States ``y`` with ``d(z, y) < eps``."""
        return np.flatnonzero(self.metric[z] < eps)

    def to_json(self) -> str:
        d = {"n": self.n_states, "rows": self.kernel.tolist(), "metric": self.metric.tolist()}
        if self.labels is not None:
            d["labels"] = list(self.labels)
        return dumps(d)

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteChain":
        rows = d["rows"]
        if "n" in d and int(d["n"]) != len(rows):
            raise DomainError(f"n={d['n']} but {len(rows)} rows given")
        return cls(np.array(rows, dtype=float), d.get("labels"), d.get("metric"))

    @classmethod
    def from_file(cls, path) -> "FiniteChain":
        """Read a JSON object ``{n, rows, labels?, metric?}`` or a bare CSV matrix."""
        path = str(path)
        if path.endswith(".json"):
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        with open(path, newline="") as fh:
            rows = [[float(v) for v in r] for r in csv.reader(fh) if r]
        return cls(np.array(rows))


def _check_state(chain: FiniteChain, x: int) -> int:
    if not 0 <= int(x) < chain.n_states:
        raise DomainError(f"state {x} outside 0..{chain.n_states - 1}")
    return int(x)


def _propagate(row: np.ndarray, P: np.ndarray, t: int) -> np.ndarray:
    for _ in range(t):
        row = row @ P
    return row


def _as_measure(vec: np.ndarray) -> FiniteMeasure:
    vec = np.clip(vec, 0.0, None)
    return FiniteMeasure.from_vector(vec / vec.sum())


def power_distribution(chain: FiniteChain, x: int, t: int) -> FiniteMeasure:
    """``P^t(x, .)``; ``t = 0`` is the point mass at ``x``."""
    x = _check_state(chain, x)
    if int(t) != t or t < 0:
        raise DomainError(f"t must be a nonnegative integer, got {t!r}")
    row = np.zeros(chain.n_states)
    row[x] = 1.0
    return _as_measure(_propagate(row, chain.kernel, int(t)))


def recurrent_classes(chain: FiniteChain) -> list[list[int]]:
    """Closed communicating classes, in order of their smallest state."""
    adj = chain.kernel > 0
    _, comp = connected_components(adj, directed=True, connection="strong")
    classes = []
    for c in np.unique(comp):
        members = np.flatnonzero(comp == c)
        outside = np.setdiff1d(np.arange(chain.n_states), members)
        if not adj[np.ix_(members, outside)].any():
            classes.append(members.tolist())
    return sorted(classes, key=min)


def class_period(chain: FiniteChain, members) -> int:
    """Period of a communicating class via BFS levels."""
    members = list(members)
    inside = set(members)
    level = {members[0]: 0}
    queue = [members[0]]
    g = 0
    while queue:
        u = queue.pop(0)
        for v in np.flatnonzero(chain.kernel[u] > 0):
            v = int(v)
            if v not in inside:
                continue
            if v not in level:
                level[v] = level[u] + 1
                queue.append(v)
            else:
                g = math.gcd(g, level[u] + 1 - level[v])
    return abs(g) or 1


def invariant_measure(chain: FiniteChain) -> FiniteMeasure:
    """Unique stationary law from the augmented linear system ``[P^T - I; 1^T] pi = [0; 1]``."""
    classes = recurrent_classes(chain)
    if len(classes) > 1:
        raise NonUniqueInvariantMeasure(classes)
    n = chain.n_states
    A = np.vstack([chain.kernel.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.max(np.abs(pi @ chain.kernel - pi))
    if resid > 1e-10:
        raise RuntimeError(f"stationary solve residual {resid:.3g} exceeds 1e-10")
    return FiniteMeasure.from_vector(pi)


def cesaro_distribution(chain: FiniteChain, x: int, t: int) -> FiniteMeasure:
    """``(1/t) sum_{s=1..t} P^s(x, .)``, the discrete-time Cesàro average."""
    x = _check_state(chain, x)
    if int(t) != t or t < 1:
        raise DomainError(f"t must be a positive integer, got {t!r}")
    row = np.zeros(chain.n_states)
    row[x] = 1.0
    acc = np.zeros(chain.n_states)
    for _ in range(int(t)):
        row = row @ chain.kernel
        acc += row
    return _as_measure(acc / t)


def doeblin_alpha(chain: FiniteChain, A, t1: int) -> float:
    """``min_x P^{t1}(x, A)``."""
    A = np.atleast_1d(np.asarray(A, dtype=np.int64))
    if A.size == 0:
        raise DomainError("target set A must be nonempty")
    if int(t1) != t1 or t1 < 1:
        raise DomainError("t1 must be a positive integer")
    Pt = np.linalg.matrix_power(chain.kernel, int(t1))
    return float(np.clip(Pt[:, A].sum(axis=1).min(), 0.0, 1.0))


@dataclass
class SplittingRound:
    t: int
    nu: tuple  # (nu_i^{x1}, nu_i^{x2})
    mu: tuple  # (mu_i^{x1}, mu_i^{x2})
    pushed: tuple  # P^{t} mu_{i-1}, kept so the mixture identity can be audited

    def reconstruction_error(self, alpha: float) -> float:
        err = 0.0
        for j in range(2):
            mix = alpha * self.nu[j].probs + (1 - alpha) * self.mu[j].probs
            err = max(err, float(np.max(np.abs(self.pushed[j] - mix))))
        return err


@dataclass
class SplittingTrace:
    alpha: float
    x1: int
    x2: int
    A: list
    rounds: list = field(default_factory=list)
    residual_bound: float = math.nan

    def max_reconstruction_error(self) -> float:
        return max((r.reconstruction_error(self.alpha) for r in self.rounds), default=0.0)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "x1": self.x1,
            "x2": self.x2,
            "A": list(self.A),
            "residual_bound": self.residual_bound,
            "rounds": [
                {
                    "t": r.t,
                    "nu": [r.nu[0].probs.tolist(), r.nu[1].probs.tolist()],
                    "mu": [r.mu[0].probs.tolist(), r.mu[1].probs.tolist()],
                    "reconstruction_error": r.reconstruction_error(self.alpha),
                }
                for r in self.rounds
            ],
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def alpha_splitting_decomposition(chain: FiniteChain, x1: int, x2: int, A, t1: int,
                                  k: int) -> SplittingTrace:
    """Split ``P^{t1} mu_{i-1} = alpha nu_i + (1 - alpha) mu_i`` for ``k`` rounds from two starts.

    ``nu_i`` is the pushed-forward law conditioned on ``A``; ``mu_i`` is the
    renormalised remainder. Starting from point masses at ``x1`` and ``x2``
    with a constant horizon ``t1``, the laws at time ``k t1`` differ only
    through the ``(1 - alpha)^k`` remainder when ``A`` is a single state.
    """
    x1, x2 = _check_state(chain, x1), _check_state(chain, x2)
    A = sorted(int(a) for a in np.atleast_1d(A))
    if int(k) != k or k < 1:
        raise DomainError("k must be a positive integer")
    alpha = doeblin_alpha(chain, A, t1)
    if alpha <= 0:
        raise PreconditionError(f"Doeblin constant is 0 for A={A}, t1={t1}; no splitting exists")
    n = chain.n_states
    Pt = np.linalg.matrix_power(chain.kernel, int(t1))
    in_A = np.zeros(n, dtype=bool)
    in_A[A] = True

    trace = SplittingTrace(alpha=alpha, x1=x1, x2=x2, A=A,
                           residual_bound=2.0 * (1.0 - alpha) ** int(k))
    mus = [FiniteMeasure.point_mass(x1, n).probs, FiniteMeasure.point_mass(x2, n).probs]
    for _ in range(int(k)):
        nus, new_mus, pushed = [], [], []
        for mu_prev in mus:
            p = mu_prev @ Pt
            mass_A = p[in_A].sum()
            nu = np.where(in_A, p, 0.0) / mass_A
            if alpha < 1:
                rest = np.clip((p - alpha * nu) / (1.0 - alpha), 0.0, None)
            else:
                rest = nu.copy()
            rest /= rest.sum()
            nus.append(FiniteMeasure.from_vector(nu))
            new_mus.append(FiniteMeasure.from_vector(rest))
            pushed.append(p)
        trace.rounds.append(SplittingRound(int(t1), tuple(nus), tuple(new_mus), tuple(pushed)))
        mus = [m.probs for m in new_mus]
    return trace


def _period_lcm(chain: FiniteChain) -> int:
    periods = [class_period(chain, c) for c in recurrent_classes(chain)]
    return reduce(lambda a, b: a * b // math.gcd(a, b), periods, 1)


def limiting_powers(chain: FiniteChain) -> list[np.ndarray]:
    """``lim_N P^{dN + r}`` for ``r = 0..d-1`` where ``d`` is the lcm of class periods."""
    d = _period_lcm(chain)
    Q = np.linalg.matrix_power(chain.kernel, d)
    # 2^64 steps is past any mixing time we can represent; rows are renormalised
    # so rounding cannot compound across squarings
    for _ in range(64):
        Q2 = Q @ Q
        Q2 /= Q2.sum(axis=1, keepdims=True)
        done = np.max(np.abs(Q2 - Q)) < 1e-14
        Q = Q2
        if done:
            break
    out = [Q]
    for _ in range(d - 1):
        out.append(out[-1] @ chain.kernel)
    return out


def exact_condition_report(chain: FiniteChain, z: int, eps: float) -> dict[str, CriterionReport]:
    """Exact limiting values of conditions C4, C1 and C2 at ``z``.

    C4: ``min_x liminf_t P^t(x, B)``; C1: ``min_x limsup_t Q_t(x, B)`` (the
    Cesàro limit exists on finite chains); C2: ``liminf_t P^t(z, B)``, with
    ``B = B(z, eps)`` in the chain's metric. Periodic chains are handled
    exactly through the residue-class limits and flagged.
    """
    z = _check_state(chain, z)
    if not eps > 0:
        raise DomainError("eps must be positive")
    ball = chain.ball(z, eps)
    limits = limiting_powers(chain)
    d = len(limits)
    hit = np.array([L[:, ball].sum(axis=1) for L in limits])  # (d, n)
    liminf = hit.min(axis=0)
    cesaro = hit.mean(axis=0)
    flags = []
    if d > 1:
        flags.append(f"periodic (lcm of class periods = {d}); limits via Cesàro only for C1")
    if len(recurrent_classes(chain)) > 1:
        flags.append("multiple recurrent classes")
    states = list(range(chain.n_states))

    def build(cond, xs, per_state, summary):
        per_x = [PointEstimate(float(x), math.inf, float(v), float(v), float(v))
                 for x, v in zip(xs, per_state)]
        verdict = "supported" if summary > 1e-12 else "not-supported"
        return CriterionReport(cond, float(z), float(eps), xs, [], points=list(per_x),
                               per_x=per_x, summary=float(summary),
                               summary_ci=(float(summary), float(summary)), verdict=verdict,
                               caveat=EXACT_CAVEAT, flags=list(flags),
                               extra={"ball": ball.tolist()})

    return {
        "C4": build("C4", states, liminf, liminf.min()),
        "C1": build("C1", states, cesaro, cesaro.min()),
        "C2": build("C2", [z], [liminf[z]], liminf[z]),
    }


def exact_tv_between_rows(chain: FiniteChain, x: int, y: int, t: int) -> float:
    return tv_finite(power_distribution(chain, x, t), power_distribution(chain, y, t))
