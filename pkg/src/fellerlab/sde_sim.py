"""Path simulators for the example systems.

* ``PoissonCubicModel``: ``dX = (aX - bX^3) dt + sigma(X-) dN`` with a unit-rate
  Poisson clock. Simulated exactly: exponential inter-jump times and the
  closed-form cubic flow between jumps.
* ``LangevinCubicModel``: ``dX = (c1 X - c3 X^3) dt + s X dB``, integrated by
  tamed Euler-Maruyama.
* ``FiniteChainModel``: a finite chain viewed as a process on the integers,
  so the same estimators can be run against the exact oracle.

All randomness comes from :mod:`fellerlab.rng`, keyed by
``(master_seed, path_index, stream, draw)``; a path is reproducible on its own
and independent of how a batch is split.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import rng
from .chain_oracle import FiniteChain
from .errors import DomainError
from .measures import EmpiricalMeasure

FLOW_MARGIN = 1.01


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class Sigma:
    """Jump size function: ``constant`` (c0) or ``sinusoidal`` (c0 + c1 sin x)."""

    kind: str = "constant"
    c0: float = 1.0
    c1: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoidal"):
            raise DomainError(f"unknown sigma kind {self.kind!r}")

    def __call__(self, x):
        if self.kind == "constant":
            return np.full(np.shape(x), self.c0) if np.ndim(x) else self.c0
        return self.c0 + self.c1 * np.sin(x)

    def to_dict(self):
        return {"kind": self.kind, "c0": self.c0, "c1": self.c1}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("kind", "constant"), float(d.get("c0", 1.0)), float(d.get("c1", 0.0)))


@dataclass(frozen=True)
class PoissonCubicModel:
    a: float
    b: float
    sigma: Sigma
    m: float
    M: float
    lip_sigma: float
    probe_min: float = -50.0
    probe_max: float = 50.0
    n_probe: int = 10_000

    model_id = "poisson_cubic"

    def __post_init__(self):
        problems = self.validation_problems()
        if problems:
            raise DomainError("; ".join(problems))

    def validation_problems(self) -> list[str]:
        """All violated invariants; sigma bounds are checked on a probe grid."""
        out = []
        if not self.a > 0:
            out.append(f"a must be > 0 (got {self.a})")
        if not self.b > 0:
            out.append(f"b must be > 0 (got {self.b})")
        if not self.m > 0:
            out.append(f"m must be > 0 (got {self.m})")
        if not self.m < self.M:
            out.append(f"need m < M (got m={self.m}, M={self.M})")
        if not self.lip_sigma >= 0:
            out.append(f"lip_sigma must be >= 0 (got {self.lip_sigma})")
        grid = np.linspace(self.probe_min, self.probe_max, self.n_probe)
        vals = np.asarray(self.sigma(grid), dtype=float) * np.ones_like(grid)
        lo = np.flatnonzero(vals < self.m - 1e-12)
        if lo.size:
            out.append(f"sigma({grid[lo[0]]:.6g}) = {vals[lo[0]]:.6g} violates the lower bound m={self.m}")
        hi = np.flatnonzero(vals > self.M + 1e-12)
        if hi.size:
            out.append(f"sigma({grid[hi[0]]:.6g}) = {vals[hi[0]]:.6g} violates the upper bound M={self.M}")
        slopes = np.abs(np.diff(vals)) / np.diff(grid)
        steep = np.flatnonzero(slopes > self.lip_sigma * (1 + 1e-9) + 1e-12)
        if steep.size:
            i = steep[0]
            out.append(f"sigma slope {slopes[i]:.6g} near x={grid[i]:.6g} exceeds lip_sigma={self.lip_sigma}")
        return out

    @property
    def equilibrium(self) -> float:
        return math.sqrt(self.a / self.b)

    def to_dict(self):
        return {"type": self.model_id, "a": self.a, "b": self.b, "sigma": self.sigma.to_dict(),
                "m": self.m, "M": self.M, "lip_sigma": self.lip_sigma}


@dataclass(frozen=True)
class LangevinCubicModel:
    c1: float = 1.5
    c3: float = 1.0
    s: float = 1.0

    model_id = "langevin_cubic"

    def __post_init__(self):
        if not self.c3 > 0:
            raise DomainError(f"c3 must be > 0 (got {self.c3})")

    def drift(self, x):
        return self.c1 * x - self.c3 * x ** 3

    def to_dict(self):
        return {"type": self.model_id, "c1": self.c1, "c3": self.c3, "s": self.s}


@dataclass(frozen=True, eq=False)
class FiniteChainModel:
    """A finite chain run as a process on ``{0, .., n-1}`` at integer times."""

    chain: FiniteChain

    model_id = "finite_chain"

    def to_dict(self):
        return {"type": self.model_id, "rows": self.chain.kernel.tolist()}


@dataclass(frozen=True)
class SimConfig:
    T: float
    dt: float = 1e-3
    ode_tolerance: float = 1e-9
    n_paths: int = 1
    master_seed: int = 0
    record_times: tuple | None = None  # None: endpoint only

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError("horizon T must be positive")
        if not (self.dt > 0 and self.dt <= self.T):
            raise DomainError("need 0 < dt <= T")
        if not self.ode_tolerance > 0:
            raise DomainError("ode_tolerance must be positive")
        if self.n_paths < 1:
            raise DomainError("n_paths must be >= 1")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise DomainError("master_seed must be an unsigned 64-bit integer")
        if self.record_times is not None:
            rt = np.asarray(self.record_times, dtype=float)
            if rt.size == 0 or np.any(np.diff(rt) <= 0) or rt[0] < 0 or rt[-1] > self.T:
                raise DomainError("record times must be increasing within [0, T]")

    def grid(self) -> np.ndarray:
        if self.record_times is None:
            return np.array([self.T])
        return np.asarray(self.record_times, dtype=float)


@dataclass
class TrajectoryBatch:
    model_id: str
    x0: float
    times: np.ndarray
    values: np.ndarray  # (n_paths, n_times)
    path_indices: np.ndarray
    master_seed: int
    jump_times: list | None = None
    diverged: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def endpoints(self) -> np.ndarray:
        return self.values[:, -1]

    def jump_counts(self, upto: float | None = None) -> np.ndarray:
        if self.jump_times is None:
            raise DomainError("this model has no jump clock")
        upto = self.times[-1] if upto is None else upto
        return np.array([int(np.sum(j <= upto)) for j in self.jump_times])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_index", "time", "value"])
            for p, row in zip(self.path_indices, self.values):
                for t, v in zip(self.times, row):
                    w.writerow([int(p), format(float(t), ".17g"), format(float(v), ".17g")])


# --------------------------------------------------------------------------
# exact deterministic flow of dY = (aY - bY^3) dt


def exact_cubic_flow(x, t, a: float, b: float):
    """Closed-form solution of ``Y' = aY - bY^3`` from ``Y(0) = x``.

    With ``u = Y^-2`` the equation becomes ``u' = -2a u + 2b``, so
    ``u(t) = u0 e^{-2at} + (b/a)(1 - e^{-2at})``. Vectorised over ``x`` and ``t``.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    decay = np.exp(-2.0 * a * t)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        u0 = 1.0 / (x * x)
        u = u0 * decay - (b / a) * np.expm1(-2.0 * a * t)
        y = np.sign(x) / np.sqrt(u)
    y = np.where(x == 0.0, 0.0, y)
    return y if y.ndim else float(y)


def _flow_time_between(x: float, y: float, a: float, b: float) -> float:
    """Time for the flow to move from ``x`` to ``y`` (same sign, ``y`` between ``x`` and its equilibrium)."""
    ba = b / a
    return math.log((x ** -2 - ba) / (y ** -2 - ba)) / (2.0 * a)


def flow_entry_time(x_lo: float, x_hi: float, z: float, eps: float, a: float, b: float,
                    margin: float = FLOW_MARGIN) -> float:
    """Time after which the flow from every point of ``[x_lo, x_hi]`` is within ``eps`` of ``z``.

    The flow is monotone in the initial condition and each orbit approaches
    its equilibrium monotonically, so only the endpoints matter. The exact
    entry time is multiplied by ``margin`` (1% by default) so the strict
    inequality holds at the returned time.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    if x_lo > x_hi:
        x_lo, x_hi = x_hi, x_lo
    if x_lo <= 0.0 <= x_hi:
        raise DomainError(f"interval [{x_lo}, {x_hi}] straddles the unstable equilibrium 0")
    sign = 1.0 if x_lo > 0 else -1.0
    eq = sign * math.sqrt(a / b)
    if not math.isclose(z, eq, rel_tol=1e-12, abs_tol=1e-12):
        raise DomainError(f"z={z} is not the equilibrium {eq} of the basin containing the interval")
    worst = 0.0
    for x in (x_lo, x_hi):
        gap = abs(x - eq)
        if gap < eps:
            continue
        target = eq + eps if x > eq else eq - eps
        if target * sign <= 0:  # target beyond 0: already inside
            continue
        worst = max(worst, _flow_time_between(x, target, a, b))
    return worst * margin


# --------------------------------------------------------------------------
# engines; each takes per-path record times of shape (n, m)


def _poisson_engine(model: PoissonCubicModel, x0: float, rec: np.ndarray, seed: int,
                    paths: np.ndarray, fixed_jumps=None):
    n, m = rec.shape
    a, b, sig = model.a, model.b, model.sigma
    X = np.full(n, float(x0))
    t = np.zeros(n)
    k = np.zeros(n, dtype=np.int64)
    nrec = np.zeros(n, dtype=np.int64)
    out = np.empty((n, m))
    horizon = rec[:, -1]
    keys = rng.stream_keys(seed, paths, rng.JUMP)
    jump_log_p, jump_log_t = [], []
    active = np.arange(n)
    while active.size:
        if fixed_jumps is None:
            gap = -np.log(rng.uniform_from_keys(keys[active], k[active]))
            tau = t[active] + gap
        else:
            tau = np.array([fixed_jumps[k[i]] if k[i] < len(fixed_jumps) else np.inf for i in active])
        # record every grid time falling before the next jump
        while True:
            pending = nrec[active] < m
            if not pending.any():
                break
            idx = active[pending]
            r = rec[idx, nrec[idx]]
            hit = r < tau[pending]
            if not hit.any():
                break
            idx = idx[hit]
            out[idx, nrec[idx]] = exact_cubic_flow(X[idx], r[hit] - t[idx], a, b)
            nrec[idx] += 1
        jumps = tau <= horizon[active]
        idx = active[jumps]
        if idx.size:
            tj = tau[jumps]
            left = exact_cubic_flow(X[idx], tj - t[idx], a, b)
            X[idx] = left + sig(left)
            t[idx] = tj
            k[idx] += 1
            jump_log_p.append(idx)
            jump_log_t.append(tj)
        active = idx
    if jump_log_p:
        jp = np.concatenate(jump_log_p)
        jt = np.concatenate(jump_log_t)
        order = np.lexsort((jt, jp))
        jp, jt = jp[order], jt[order]
        splits = np.searchsorted(jp, np.arange(1, n))
        jumps_per_path = np.split(jt, splits)
    else:
        jumps_per_path = [np.empty(0) for _ in range(n)]
    return out, jumps_per_path


def _langevin_engine(model: LangevinCubicModel, x0: float, rec: np.ndarray, seed: int,
                     paths: np.ndarray, dt: float):
    n, m = rec.shape
    out = np.empty((n, m))
    diverged = np.zeros(n, dtype=bool)
    if x0 == 0.0:
        out[:] = 0.0  # both coefficients vanish at the origin
        return out, diverged
    X = np.full(n, float(x0))
    t = np.zeros(n)
    k = 0
    nrec = np.zeros(n, dtype=np.int64)
    keys = rng.stream_keys(seed, paths, rng.BROWNIAN)
    c1, c3, s = model.c1, model.c3, model.s
    rows = np.arange(n)
    live = np.ones(n, dtype=bool)
    # catch record times at 0
    target = rec[rows, 0]
    at0 = target <= 0.0
    if at0.any():
        _record(out, nrec, rows[at0], X, rec, m, live)
    while live.any():
        target = rec[rows, np.minimum(nrec, m - 1)]
        h = np.where(live, np.minimum(dt, target - t), 0.0)
        xi = ndtri(rng.uniform_from_keys(keys, k))
        with np.errstate(over="ignore", invalid="ignore"):
            drift = c1 * X - c3 * X * X * X
            X = X + drift * h / (1.0 + h * np.abs(drift)) + s * X * np.sqrt(h) * xi
        t = t + h
        k += 1
        bad = live & ~np.isfinite(X)
        if bad.any():
            diverged |= bad
            for i in np.flatnonzero(bad):
                out[i, nrec[i]:] = np.nan
            nrec[bad] = m
            live &= ~bad
            X[bad] = 0.0
        reached = live & (target - t <= 1e-12 * np.maximum(1.0, target))
        while reached.any():
            idx = rows[reached]
            t[idx] = rec[idx, nrec[idx]]
            _record(out, nrec, idx, X, rec, m, live)
            nxt = np.minimum(nrec, m - 1)
            reached = live & (nrec < m) & (rec[rows, nxt] <= t)
    return out, diverged


def _record(out, nrec, idx, X, rec, m, live):
    out[idx, nrec[idx]] = X[idx]
    nrec[idx] += 1
    live[idx[nrec[idx] >= m]] = False


def _chain_engine(model: FiniteChainModel, x0: int, rec_steps: np.ndarray, seed: int,
                  paths: np.ndarray):
    n, m = rec_steps.shape
    P = model.chain.kernel
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    state = np.full(n, int(x0), dtype=np.int64)
    out = np.empty((n, m))
    keys = rng.stream_keys(seed, paths, rng.CHAIN)
    nrec = np.zeros(n, dtype=np.int64)
    last = int(rec_steps.max())
    rows = np.arange(n)
    for step in range(last + 1):
        while True:
            pend = nrec < m
            hit = np.zeros(n, dtype=bool)
            hit[pend] = rec_steps[rows[pend], nrec[pend]] == step
            if not hit.any():
                break
            out[hit, nrec[hit]] = state[hit]
            nrec[hit] += 1
        if step == last:
            break
        u = rng.uniform_from_keys(keys, step)
        state = (u[:, None] > cum[state]).sum(axis=1)
    return out


# --------------------------------------------------------------------------
# public simulation API


def _run(model, x, rec, seed, paths, dt=1e-3, fixed_jumps=None):
    paths = np.asarray(paths, dtype=np.int64)
    jumps = diverged = None
    if isinstance(model, PoissonCubicModel):
        values, jumps = _poisson_engine(model, x, rec, seed, paths, fixed_jumps)
    elif isinstance(model, LangevinCubicModel):
        values, diverged = _langevin_engine(model, x, rec, seed, paths, dt)
    elif isinstance(model, FiniteChainModel):
        values = _chain_engine(model, int(x), np.floor(rec + 1e-9).astype(np.int64), seed, paths)
    else:
        raise DomainError(f"unsupported model {type(model).__name__}")
    return values, jumps, diverged


def simulate_batch(model, x: float, cfg: SimConfig, path_indices=None) -> TrajectoryBatch:
    """Simulate paths ``path_indices`` (default ``0..n_paths-1``) on the config's record grid."""
    paths = np.arange(cfg.n_paths) if path_indices is None else np.asarray(path_indices)
    grid = cfg.grid()
    rec = np.broadcast_to(grid, (paths.size, grid.size))
    values, jumps, diverged = _run(model, x, rec, cfg.master_seed, paths, cfg.dt)
    if diverged is None:
        diverged = np.zeros(paths.size, dtype=bool)
    return TrajectoryBatch(model.model_id, float(x), grid, values, paths, int(cfg.master_seed),
                           jumps, diverged)


def simulate_poisson_cubic(model: PoissonCubicModel, x: float, cfg: SimConfig, path_index: int,
                           jump_times=None) -> TrajectoryBatch:
    """One exact path of the Poisson-driven cubic SDE.

    ``jump_times`` overrides the Poisson clock with a fixed increasing sequence
    (useful for checking the jump map against the flow by hand).
    """
    if jump_times is not None:
        jt = np.asarray(jump_times, dtype=float)
        if np.any(np.diff(jt) <= 0):
            raise DomainError("injected jump times must be strictly increasing")
        grid = cfg.grid()
        values, jumps, _ = _run(model, x, grid[None, :], cfg.master_seed, [path_index],
                                fixed_jumps=jt)
        return TrajectoryBatch(model.model_id, float(x), grid, values, np.array([path_index]),
                               int(cfg.master_seed), jumps, np.zeros(1, dtype=bool))
    return simulate_batch(model, x, cfg, [path_index])


def simulate_langevin(model: LangevinCubicModel, x: float, cfg: SimConfig,
                      path_index: int) -> TrajectoryBatch:
    """One tamed Euler-Maruyama path: ``X += b(X)h / (1 + h|b(X)|) + s X sqrt(h) xi``."""
    return simulate_batch(model, x, cfg, [path_index])


def _law_from_values(values, diverged, meta) -> EmpiricalMeasure:
    keep = np.isfinite(values)
    if diverged is not None:
        keep &= ~diverged
    meta = dict(meta, n_diverged=int((~keep).sum()), n_requested=int(values.size))
    if not keep.any():
        raise DomainError("every path diverged; no law to report")
    return EmpiricalMeasure(values[keep], None, meta)


def sample_law(model, x: float, T: float, n: int, master_seed: int, dt: float = 1e-3,
               path_offset: int = 0) -> EmpiricalMeasure:
    """``n`` independent endpoints ``X_T^x``; path ``i`` is keyed by ``(master_seed, i)``.

    Diverged diffusion paths are excluded and counted in ``metadata["n_diverged"]``.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    paths = np.arange(path_offset, path_offset + n)
    rec = np.full((n, 1), float(T))
    values, _, diverged = _run(model, x, rec, master_seed, paths, dt)
    meta = {"model": model.model_id, "x": float(x), "T": float(T), "master_seed": int(master_seed)}
    return _law_from_values(values[:, 0], diverged, meta)


def sample_law_grid(model, x: float, times, n: int, master_seed: int, dt: float = 1e-3):
    """Laws at several times from the same paths: returns ``(times, values (n, m), diverged)``."""
    times = np.asarray(times, dtype=float)
    paths = np.arange(n)
    rec = np.broadcast_to(times, (n, times.size))
    values, _, diverged = _run(model, x, rec, master_seed, paths, dt)
    if diverged is None:
        diverged = np.zeros(n, dtype=bool)
    return times, values, diverged


def cesaro_times(t: float, n: int, master_seed: int) -> np.ndarray:
    """The uniform(0, t) sampling times, one per path."""
    return t * rng.uniform(master_seed, np.arange(n), rng.CESARO, 0)


def sample_cesaro_law(model, x: float, t: float, n: int, master_seed: int,
                      dt: float = 1e-3) -> EmpiricalMeasure:
    """Samples ``X_{U_i}`` with ``U_i ~ U(0, t)``: an unbiased draw from ``Q_t(x, .)``.

    For a finite chain the time is rounded up to the next integer, so the
    law is the average of ``P^1 .. P^t`` for integer ``t``.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    U = cesaro_times(t, n, master_seed)
    if isinstance(model, FiniteChainModel):
        U = np.ceil(U)
    paths = np.arange(n)
    values, _, diverged = _run(model, x, U[:, None], master_seed, paths, dt)
    meta = {"model": model.model_id, "x": float(x), "t": float(t), "master_seed": int(master_seed),
            "cesaro": True}
    return _law_from_values(values[:, 0], diverged, meta)


def model_from_dict(d: dict):
    kind = d.get("type")
    if kind == PoissonCubicModel.model_id:
        return PoissonCubicModel(float(d["a"]), float(d["b"]), Sigma.from_dict(d["sigma"]),
                                 float(d["m"]), float(d["M"]), float(d["lip_sigma"]),
                                 float(d.get("probe_min", -50.0)), float(d.get("probe_max", 50.0)),
                                 int(d.get("n_probe", 10_000)))
    if kind == LangevinCubicModel.model_id:
        return LangevinCubicModel(float(d.get("c1", 1.5)), float(d.get("c3", 1.0)),
                                  float(d.get("s", 1.0)))
    if kind in (FiniteChainModel.model_id, "chain"):
        return FiniteChainModel(FiniteChain.from_dict(d))
    raise DomainError(f"unknown model type {kind!r}")
