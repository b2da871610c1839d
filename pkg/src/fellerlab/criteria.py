"""Estimators and certificates for the stability conditions.

Monte Carlo diagnostics for eventual continuity (plain and in total
variation) and for the lower-bound conditions C1, C2, C4; the Chebyshev
bound that turns a Lyapunov moment estimate into a hitting probability; and
the jump-ladder reachability schedule for the Poisson cubic SDE.

Limits in ``t`` become min/max over the part of ``t_grid`` at or after a
burn-in time (default: the second half of the grid); every report says so.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .chain_oracle import FiniteChain, power_distribution
from .errors import DomainError
from .measures import (EmpiricalMeasure, TestFunction, ball_hit_fraction, tv_binned, tv_finite,
                       wilson_interval)
from .report import (BINNED_TV_CAVEAT, EXACT_CAVEAT, GRID_CAVEAT, CriterionReport, PointEstimate,
                     dumps, fmt, verdict_defect, verdict_lower_bound)
from .sde_sim import (FLOW_MARGIN, FiniteChainModel, PoissonCubicModel, _flow_time_between,
                      flow_entry_time, sample_cesaro_law, sample_law_grid)

_Z95 = 1.959963984540054


def _as_model(model):
    return FiniteChainModel(model) if isinstance(model, FiniteChain) else model


def _tail_mask(t_grid: np.ndarray, burn_in: float | None) -> np.ndarray:
    if burn_in is None:
        burn_in = t_grid[len(t_grid) // 2]
    mask = t_grid >= burn_in
    if not mask.any():
        raise DomainError(f"no grid time at or after the burn-in {burn_in}")
    return mask


def _fan_out(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _closest_to(x_grid, z):
    d = np.abs(np.asarray(x_grid, dtype=float) - z)
    d = np.where(d == 0, np.inf, d)
    return int(np.argmin(d)) if np.isfinite(d).any() else 0


def _ball_hits(model, samples: np.ndarray, z: float, eps: float) -> np.ndarray:
    if isinstance(model, FiniteChainModel):
        return model.chain.metric[int(z), samples.astype(np.int64)] < eps
    return np.abs(samples - z) < eps


def _ball_fraction(model, samples, z, eps, confidence):
    hits = _ball_hits(model, samples, z, eps)
    est = float(hits.mean())
    lo, hi = wilson_interval(est, hits.size, confidence)
    return est, lo, hi


# --------------------------------------------------------------------------
# eventual continuity


@dataclass
class DefectSurface:
    x_grid: np.ndarray
    t_grid: np.ndarray
    defect: np.ndarray  # (nx, nt)
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray

    def per_x(self, tail: np.ndarray) -> np.ndarray:
        return self.defect[:, tail].max(axis=1)

    def to_csv(self) -> str:
        lines = ["x,t,defect,ci_low,ci_high"]
        for i, x in enumerate(self.x_grid):
            for j, t in enumerate(self.t_grid):
                lines.append(",".join(fmt(v) for v in (x, t, self.defect[i, j],
                                                       self.ci_low[i, j], self.ci_high[i, j])))
        return "\n".join(lines) + "\n"


def eventual_continuity_defect(model, z: float, f: TestFunction, x_grid, t_grid, n: int,
                               master_seed: int, burn_in: float | None = None,
                               tolerance: float = 0.05, dt: float = 1e-3,
                               workers: int = 1) -> tuple[DefectSurface, CriterionReport]:
    """Estimate ``|E f(X_t^x) - E f(X_t^z)|`` over a grid with common random numbers.

    Every start point uses the same path keys, so the Poisson model shares its
    jump clock across ``x`` and the difference is estimated pathwise. The
    per-x defect is the max over tail times; the summary is the defect at the
    grid point closest to ``z``.
    """
    model = _as_model(model)
    x_grid = np.asarray(x_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    tail = _tail_mask(t_grid, burn_in)
    _, vz, dz = sample_law_grid(model, z, t_grid, n, master_seed, dt)
    fz = f(vz)

    def cell(x):
        _, vx, dx = sample_law_grid(model, x, t_grid, n, master_seed, dt)
        keep = ~(dx | dz)
        diff = f(vx[keep]) - fz[keep]
        mean = diff.mean(axis=0)
        se = diff.std(axis=0, ddof=1) / math.sqrt(keep.sum()) if keep.sum() > 1 else np.zeros_like(mean)
        return np.abs(mean), se, int((~keep).sum())

    results = _fan_out(cell, x_grid, workers)
    defect = np.array([r[0] for r in results])
    se = np.array([r[1] for r in results])
    ci_low = np.maximum(0.0, defect - _Z95 * se)
    ci_high = defect + _Z95 * se
    surf = DefectSurface(x_grid, t_grid, defect, se, ci_low, ci_high)

    points = [PointEstimate(float(x), float(t), float(defect[i, j]), float(ci_low[i, j]),
                            float(ci_high[i, j]))
              for i, x in enumerate(x_grid) for j, t in enumerate(t_grid)]
    per_x = []
    for i, x in enumerate(x_grid):
        j = np.flatnonzero(tail)[np.argmax(defect[i, tail])]
        per_x.append(PointEstimate(float(x), float(t_grid[j]), float(defect[i, j]),
                                   float(ci_low[i, j]), float(ci_high[i, tail].max())))
    c = per_x[_closest_to(x_grid, z)]
    n_div = sum(r[2] for r in results)
    flags = [f"{n_div} diverged path pairs excluded"] if n_div else []
    report = CriterionReport("EC", float(z), None, x_grid.tolist(), t_grid.tolist(), points, per_x,
                             summary=c.value, summary_ci=(c.ci_low, c.ci_high),
                             verdict=verdict_defect(c.ci_low, c.ci_high, tolerance),
                             caveat=GRID_CAVEAT, flags=flags,
                             extra={"test_function": f.kind, "lip_f": f.lip_const,
                                    "tolerance": tolerance, "n": n, "master_seed": int(master_seed)})
    return surf, report


def _binned_tv_halfwidth(k_bins: int, n1: int, n2: int) -> float:
    # expected l1 error of an empirical histogram is at most sqrt(k/n)
    return 0.5 * (math.sqrt(k_bins / n1) + math.sqrt(k_bins / n2))


def tv_defect(model, z, x_grid, t_grid, bins, n: int, master_seed: int,
              burn_in: float | None = None, tolerance: float = 0.05, dt: float = 1e-3,
              workers: int = 1) -> CriterionReport:
    """Total-variation defect ``||P_t(x, .) - P_t(z, .)||_TV`` over a grid.

    On a :class:`FiniteChain` the value is exact. Otherwise it is the binned
    TV between sampled laws; the interval uses the ``sqrt(bins / n)`` bound on
    the histogram error. The supremum form over ``||f|| = 1`` is twice this
    value and is stored in ``extra["sup_form_summary"]``.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    tail = _tail_mask(t_grid, burn_in)
    exact = isinstance(model, FiniteChain)
    values = np.empty((x_grid.size, t_grid.size))
    low = np.empty_like(values)
    high = np.empty_like(values)
    if exact:
        for i, x in enumerate(x_grid):
            for j, t in enumerate(t_grid):
                v = tv_finite(power_distribution(model, int(x), int(t)),
                              power_distribution(model, int(z), int(t)))
                values[i, j] = low[i, j] = high[i, j] = v
    else:
        model = _as_model(model)
        _, vz, dz = sample_law_grid(model, z, t_grid, n, master_seed, dt)
        edges = np.asarray(bins, dtype=float)
        k_bins = edges.size + 1

        def cell(x):
            _, vx, dx = sample_law_grid(model, x, t_grid, n, master_seed, dt)
            row = []
            for j in range(t_grid.size):
                a = EmpiricalMeasure(vx[~dx, j])
                b = EmpiricalMeasure(vz[~dz, j])
                row.append((tv_binned(a, b, edges), _binned_tv_halfwidth(k_bins, len(a), len(b))))
            return row

        for i, row in enumerate(_fan_out(cell, x_grid, workers)):
            for j, (v, hw) in enumerate(row):
                values[i, j] = v
                low[i, j] = max(0.0, v - hw)
                high[i, j] = min(1.0, v + hw)
    points = [PointEstimate(float(x), float(t), float(values[i, j]), float(low[i, j]),
                            float(high[i, j]))
              for i, x in enumerate(x_grid) for j, t in enumerate(t_grid)]
    per_x = []
    for i, x in enumerate(x_grid):
        j = np.flatnonzero(tail)[np.argmax(values[i, tail])]
        per_x.append(PointEstimate(float(x), float(t_grid[j]), float(values[i, j]),
                                   float(low[i, j]), float(high[i, tail].max())))
    c = per_x[_closest_to(x_grid, z)]
    caveat = (EXACT_CAVEAT + " " + GRID_CAVEAT) if exact else (GRID_CAVEAT + " " + BINNED_TV_CAVEAT)
    verdict = verdict_defect(c.ci_low, c.ci_high, tolerance)
    return CriterionReport("TV-EC", float(z), None, x_grid.tolist(), t_grid.tolist(), points,
                           per_x, summary=c.value, summary_ci=(c.ci_low, c.ci_high),
                           verdict=verdict, caveat=caveat,
                           extra={"exact": exact, "tolerance": tolerance,
                                  "sup_form_summary": 2.0 * c.value})


# --------------------------------------------------------------------------
# lower-bound conditions


def _lower_bound_report(cond, z, eps, x_grid, t_grid, table, tail, reduce_t, extra):
    """``table[i][j] = (est, lo, hi)``; reduce over tail times per x, then min over x."""
    points, per_x = [], []
    for i, x in enumerate(x_grid):
        for j, t in enumerate(t_grid):
            est, lo, hi = table[i][j]
            points.append(PointEstimate(float(x), float(t), est, lo, hi))
        cells = [(table[i][j], t_grid[j]) for j in np.flatnonzero(tail)]
        if reduce_t == "min":
            (est, _, hi), t_at = min(cells, key=lambda c: c[0][0])
            lo = min(c[0][1] for c in cells)  # most conservative lower end
        else:
            (est, lo, hi), t_at = max(cells, key=lambda c: c[0][0])
        per_x.append(PointEstimate(float(x), float(t_at), est, lo, hi))
    worst = min(per_x, key=lambda p: p.value)
    lo = min(p.ci_low for p in per_x)
    return CriterionReport(cond, float(z), float(eps), [float(v) for v in x_grid],
                           [float(v) for v in t_grid], points, per_x, summary=worst.value,
                           summary_ci=(lo, worst.ci_high),
                           verdict=verdict_lower_bound(lo, worst.value), caveat=GRID_CAVEAT,
                           extra=extra)


def estimate_C4(model, z: float, eps: float, x_grid, t_grid, n: int, master_seed: int,
                burn_in: float | None = None, confidence: float = 0.95, dt: float = 1e-3,
                workers: int = 1) -> CriterionReport:
    """``inf_x liminf_t P_t(x, B(z, eps))`` as min over ``x_grid`` of min over tail times."""
    model = _as_model(model)
    t_grid = np.asarray(t_grid, dtype=float)
    tail = _tail_mask(t_grid, burn_in)

    def cell(x):
        _, v, d = sample_law_grid(model, x, t_grid, n, master_seed, dt)
        return [_ball_fraction(model, v[~d, j], z, eps, confidence) for j in range(t_grid.size)]

    table = _fan_out(cell, list(x_grid), workers)
    return _lower_bound_report("C4", z, eps, x_grid, t_grid, table, tail, "min",
                               {"n": n, "master_seed": int(master_seed), "confidence": confidence})


def estimate_C1_C2(model, z: float, eps: float, x_grid, t_grid, n: int, master_seed: int,
                   burn_in: float | None = None, confidence: float = 0.95, dt: float = 1e-3,
                   workers: int = 1) -> tuple[CriterionReport, CriterionReport]:
    """C1: per x, max over tail times of the Cesàro ball mass; C2: min over tail times from ``z``."""
    model = _as_model(model)
    t_grid = np.asarray(t_grid, dtype=float)
    tail = _tail_mask(t_grid, burn_in)

    def cell(x):
        return [_ball_fraction(model, sample_cesaro_law(model, x, t, n, master_seed, dt).samples,
                               z, eps, confidence) for t in t_grid]

    table = _fan_out(cell, list(x_grid), workers)
    extra = {"n": n, "master_seed": int(master_seed), "confidence": confidence}
    c1 = _lower_bound_report("C1", z, eps, x_grid, t_grid, table, tail, "max", extra)
    _, v, d = sample_law_grid(model, z, t_grid, n, master_seed, dt)
    row = [_ball_fraction(model, v[~d, j], z, eps, confidence) for j in range(t_grid.size)]
    c2 = _lower_bound_report("C2", z, eps, [z], t_grid, [row], tail, "min", dict(extra))
    return c1, c2


# --------------------------------------------------------------------------
# Lyapunov certificate and composition bounds


@dataclass(frozen=True)
class Rho:
    """Nonincreasing rate: ``c e^{-rate t}`` or ``c t^{-rate}``, optionally times ``|x - z|^p``."""

    kind: str = "exponential"
    c: float = 1.0
    rate: float = 1.0
    scale_by_distance: bool = False

    def __post_init__(self):
        if self.kind not in ("exponential", "power"):
            raise DomainError(f"unknown rho kind {self.kind!r}")
        if self.c < 0 or self.rate <= 0:
            raise DomainError("rho needs c >= 0 and rate > 0")

    def __call__(self, t, dist_p: float = 1.0):
        t = np.asarray(t, dtype=float)
        base = self.c * (np.exp(-self.rate * t) if self.kind == "exponential" else t ** -self.rate)
        out = base * (dist_p if self.scale_by_distance else 1.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class LyapunovCertificate:
    """``E d(X_t^x, z)^p <= rho(t) + b 1_{B(z, kappa)}`` with ``rho`` nonincreasing to 0."""

    z: float
    p: float
    b: float
    kappa: float
    rho: Rho

    def __post_init__(self):
        if not (self.p > 0 and self.kappa > 0 and self.b >= 0):
            raise DomainError("certificate needs p > 0, kappa > 0, b >= 0")

    def rho_at(self, t, x: float | None = None):
        dist_p = 1.0 if x is None else abs(x - self.z) ** self.p
        return self.rho(t, dist_p)

    def is_nonincreasing(self, t_grid) -> bool:
        vals = np.asarray(self.rho_at(np.sort(np.asarray(t_grid, dtype=float))))
        return bool(np.all(np.diff(vals) <= 1e-15))


def poisson_moment_constant(a: float, b: float, M: float) -> float:
    """``(3a + 4)^2 / (4b) + 3 M^2 + 3a / b + a^3 / b``."""
    return (3 * a + 4) ** 2 / (4 * b) + 3 * M ** 2 + 3 * a / b + a ** 3 / b


def poisson_certificate(model: PoissonCubicModel) -> LyapunovCertificate:
    """``E|X_t - sqrt(a/b)|^2 <= C |x - sqrt(a/b)|^2 e^{-t} + C`` for the Poisson cubic SDE."""
    C = poisson_moment_constant(model.a, model.b, model.M)
    return LyapunovCertificate(model.equilibrium, 2.0, C, math.inf,
                               Rho("exponential", C, 1.0, scale_by_distance=True))


def chebyshev_lower_bound(cert: LyapunovCertificate, r: float, t: float,
                          x: float | None = None) -> float:
    """``max(0, 1 - rho(t) / r^p - b / r^p)``, a lower bound on ``P_t(x, B(z, r))``."""
    if not r > 0:
        raise DomainError("r must be positive")
    rp = r ** cert.p
    return max(0.0, 1.0 - cert.rho_at(t, x) / rp - cert.b / rp)


def chain_lower_bound(p_stay: float, p_reach: float) -> float:
    """``liminf P_{t+T}(x, B(z, eps)) >= p_stay * p_reach`` by the Markov property."""
    for name, v in (("p_stay", p_stay), ("p_reach", p_reach)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name} must lie in [0, 1], got {v}")
    return p_stay * p_reach


def doeblin_radius(C: float, x_lo: float, x_hi: float, z: float) -> float:
    """Smallest ``r`` with ``C (1 + |x - z|^2) / r^2 <= 1/2`` for every ``x`` in the range."""
    far = max(abs(x_lo - z), abs(x_hi - z))
    return math.sqrt(2.0 * C * (1.0 + far * far))


# --------------------------------------------------------------------------
# reachability schedule


@dataclass
class ReachabilitySchedule:
    a: float
    b: float
    m: float
    M: float
    delta_tilde: float
    eps: float
    r_request: float
    n: int
    delta0: float
    r0: float
    r: float
    r_binding: str
    T1: float
    t_delta: float
    T2: float
    ladder: list  # t_1 .. t_{n-1} (t_1 also when n == 1)
    T: float
    case1: float
    case2: float
    case3: float
    lower_bound: float
    notes: list = field(default_factory=list)

    def case1_bound(self, t):
        return np.exp(-np.asarray(t, dtype=float))

    def case2_bound(self, t):
        return np.exp(-np.asarray(t, dtype=float)) * (1.0 - math.exp(-self.t_delta))

    def case3_bound(self, t):
        t1 = self.ladder[0]
        prod = math.prod(1.0 - math.exp(-ti) for ti in self.ladder[: max(self.n - 1, 0)])
        waited = self.T1 + self.T2 + t1 + sum(self.ladder[: max(self.n - 1, 0)])
        head = math.exp(-self.T2) - math.exp(-self.T2 - t1)
        return head * prod * np.exp(-np.asarray(t, dtype=float) - waited)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "a", "b", "m", "M", "delta_tilde", "eps", "r_request", "n", "delta0", "r0", "r",
            "r_binding", "T1", "t_delta", "T2", "ladder", "T", "case1", "case2", "case3",
            "lower_bound", "notes")}
        d["ladder"] = [float(v) for v in self.ladder]
        return d

    def to_json(self) -> str:
        return dumps(self.to_dict())


def _stay_time(lo: float, hi: float, slack: float, a: float, b: float) -> float:
    """Longest time the flow from ``[lo, hi]`` stays inside ``[lo - slack, hi + slack]``."""
    eq = math.sqrt(a / b)
    best = math.inf
    for x, outward in ((lo, -1.0), (hi, 1.0)):
        if x == 0.0:
            continue
        e = eq if x > 0 else -eq
        moving = 1.0 if e > x else -1.0  # direction of motion
        if moving != outward:
            continue  # this endpoint moves into the interval
        target = x + outward * slack
        if (e - target) * moving <= 0:
            continue  # equilibrium reached before leaving
        best = min(best, _flow_time_between(x, target, a, b))
    return best


def reachability_schedule(a: float, b: float, m: float, M: float, delta_tilde: float,
                          eps: float, r_request: float, x_range: tuple | None = None,
                          fallback_time: float = 1.0) -> ReachabilitySchedule:
    """Explicit times and probability lower bounds for reaching ``B(sqrt(a/b), eps)``.

    Starts in ``[delta_tilde, sqrt(a/b) + r]`` only need no jump for ``T1``
    (case 1); starts near 0 need one early jump (case 2); starts in the
    negative basin climb a ladder of ``n`` jumps (case 3). ``r`` is raised to
    every constraint the construction needs and the binding one is reported.
    ``x_range`` sets the range used for ``r0`` (default ``z +/- r_request``).
    """
    root = math.sqrt(a / b)
    limit = min(m / 3.0, abs(root - m), root)
    if not 0 < delta_tilde < limit:
        raise DomainError(
            f"delta_tilde={delta_tilde} must satisfy 0 < delta_tilde < "
            f"min(m/3, |sqrt(a/b) - m|, sqrt(a/b)) = {limit}")
    if not eps > 0:
        raise DomainError("eps must be positive")
    notes = []
    n = int(math.floor(math.sqrt(4 * a / b) / m)) + 1
    delta0 = 0.5 * (root - delta_tilde) / (n + 1)
    C = poisson_moment_constant(a, b, M)
    if x_range is None:
        x_range = (root - r_request, root + r_request)
    r0 = doeblin_radius(C, x_range[0], x_range[1], root)
    candidates = {
        "r_request": r_request,
        "M + 2 delta_tilde": (M + 2 * delta_tilde) * FLOW_MARGIN,
        "-sqrt(a/b) + n M + n delta0": (-root + n * M + n * delta0) * FLOW_MARGIN,
        "r0": r0 * FLOW_MARGIN,
    }
    r_binding = max(candidates, key=candidates.get)
    r = candidates[r_binding]

    T1 = flow_entry_time(delta_tilde, root + r, root, eps, a, b)
    # case 2: the flow from [-dt, dt] stays within 2 dt up to t_delta
    if 2 * delta_tilde < root:
        t_delta = _flow_time_between(delta_tilde, 2 * delta_tilde, a, b) / FLOW_MARGIN
    else:
        t_delta = fallback_time
        notes.append("flow from [-delta_tilde, delta_tilde] never leaves 2 delta_tilde; "
                     f"t_delta set to {fallback_time}")
    T2 = flow_entry_time(min(root - r, -delta_tilde), -delta_tilde, -root, delta0, a, b)

    ladder = []
    for i in range(1, max(n - 1, 1) + 1):
        lo = -root + i * m - i * delta0
        hi = -root + i * M + i * delta0
        stay = _stay_time(lo, hi, delta0, a, b)
        if math.isfinite(stay):
            ladder.append(stay / FLOW_MARGIN)
        else:
            ladder.append(fallback_time)
            notes.append(f"ladder step {i} never leaves its slack; t_{i} set to {fallback_time}")
    notes.append("xi_n in the final landing bound is undefined; landing above delta_tilde is "
                 "checked from -sqrt(a/b) + n m - n delta0 > delta_tilde instead")
    if not -root + n * m - n * delta0 > delta_tilde:
        raise RuntimeError("final ladder landing does not clear delta_tilde")

    sched = ReachabilitySchedule(a, b, m, M, delta_tilde, eps, r_request, n, delta0, r0, r,
                                 r_binding, T1, t_delta, T2, ladder, 0.0, 0.0, 0.0, 0.0, 0.0,
                                 notes)
    sched.T = T1 + t_delta + T2 + ladder[0] + sum(ladder[: max(n - 1, 0)])
    sched.case1 = float(sched.case1_bound(sched.T))
    sched.case2 = float(sched.case2_bound(sched.T))
    sched.case3 = float(sched.case3_bound(sched.T))
    sched.lower_bound = min(sched.case1, sched.case2, sched.case3)
    return sched


# --------------------------------------------------------------------------
# moment decay


@dataclass
class MomentDecayFit:
    z: float
    x: float
    t_grid: np.ndarray
    mean_sq: np.ndarray
    se: np.ndarray
    bound: np.ndarray
    holds: np.ndarray
    C_fit: float
    gamma_fit: float
    constant: float
    radius_check: dict | None = None

    def to_dict(self) -> dict:
        return {"z": self.z, "x": self.x, "t": self.t_grid.tolist(),
                "mean_sq": self.mean_sq.tolist(), "se": self.se.tolist(),
                "bound": self.bound.tolist(), "holds": [bool(v) for v in self.holds],
                "C_fit": self.C_fit, "gamma_fit": self.gamma_fit, "constant": self.constant,
                "radius_check": self.radius_check}


def moment_decay_fit(model: PoissonCubicModel, z: float, x: float, t_grid, n: int,
                     master_seed: int, n_se: float = 3.0, radius: float | None = None,
                     radius_time: float | None = None) -> MomentDecayFit:
    """Monte Carlo ``E|X_t - z|^2`` checked against ``|x - z|^2 e^{-t} + C``.

    Also least-squares fits ``C_fit (|x - z|^2 e^{-gamma t} + 1)`` for
    reporting. With ``radius`` set, the hit fraction of ``B(z, radius)`` at
    ``radius_time`` (default: last grid time) is attached for the
    ``>= 1/2`` check.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    times = t_grid
    if radius is not None and radius_time is not None and radius_time not in t_grid:
        times = np.unique(np.append(t_grid, radius_time))
    _, v, _ = sample_law_grid(model, x, times, n, master_seed)
    sq = (v - z) ** 2
    cols = [int(np.flatnonzero(times == t)[0]) for t in t_grid]
    mean = sq[:, cols].mean(axis=0)
    se = sq[:, cols].std(axis=0, ddof=1) / math.sqrt(n)
    C = poisson_moment_constant(model.a, model.b, model.M)
    v0 = (x - z) ** 2
    bound = v0 * np.exp(-t_grid) + C
    holds = mean <= bound + n_se * se
    try:
        popt, _ = curve_fit(lambda t, c, g: c * (v0 * np.exp(-g * t) + 1.0), t_grid, mean,
                            p0=(1.0, 1.0), maxfev=20_000)
        C_fit, g_fit = float(popt[0]), float(popt[1])
    except (RuntimeError, ValueError):
        C_fit = g_fit = math.nan
    radius_check = None
    if radius is not None:
        rt = float(times[-1] if radius_time is None else radius_time)
        col = int(np.flatnonzero(times == rt)[0])
        est, lo, hi = ball_hit_fraction(EmpiricalMeasure(v[:, col]), z, radius)
        radius_check = {"radius": radius, "t": rt, "estimate": est, "ci_low": lo, "ci_high": hi,
                        "chebyshev": chebyshev_lower_bound(poisson_certificate(model), radius, rt, x)}
    return MomentDecayFit(z, x, t_grid, mean, se, bound, holds, C_fit, g_fit, C, radius_check)
