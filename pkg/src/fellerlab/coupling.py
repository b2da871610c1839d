"""Feedback coupling for the Poisson cubic SDE and its closed-form decay bounds.

Three processes share one Poisson clock: ``X^x`` and ``X^y`` solve the SDE
from ``x`` and ``y``; the auxiliary ``X~^y`` starts at ``y`` and is pulled
towards ``X^x`` by a feedback term ``lambda (X^x - X~^y) dt``. With
``Z = X^x - X~^y`` and ``Z~ = X~^y - X^y``, the moments ``E Z_t^2`` and
``E |Z~_t|`` have explicit exponential bounds once ``lambda`` exceeds
``(a + L) + L^2 / 2``.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import DomainError, ODEToleranceError, PreconditionError
from .report import dumps, fmt
from .sde_sim import PoissonCubicModel, SimConfig, exact_cubic_flow


class VacuousBoundWarning(UserWarning):
    """The requested bound does not decay because lambda is below the threshold."""


def lambda_threshold(a: float, lip_sigma: float) -> float:
    """Smallest admissible feedback gain: ``(a + L) + L^2 / 2``."""
    return (a + lip_sigma) + lip_sigma ** 2 / 2.0


def decay_exponent(a: float, lam: float, lip_sigma: float) -> float:
    return 2.0 * a - 2.0 * lam + 2.0 * lip_sigma + lip_sigma ** 2


@dataclass(frozen=True)
class CouplingParams:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError("lambda must be positive")

    def check_admissible(self, model: PoissonCubicModel) -> None:
        thr = lambda_threshold(model.a, model.lip_sigma)
        if not self.lam > thr:
            raise PreconditionError(
                f"lambda={self.lam} must exceed (a + L_sigma) + L_sigma^2/2 = {thr}")


def z_squared_bound(x: float, y: float, lam: float, a: float, lip_sigma: float, t):
    """``|x - y|^2 exp((2a - 2 lambda + 2L + L^2) t)``, the bound on ``E Z_t^2``."""
    if not lam > lambda_threshold(a, lip_sigma):
        warnings.warn("lambda at or below threshold: bound does not decay", VacuousBoundWarning,
                      stacklevel=2)
    t = np.asarray(t, dtype=float)
    out = (x - y) ** 2 * np.exp(decay_exponent(a, lam, lip_sigma) * t)
    return out if out.ndim else float(out)


def stable_equilibrium_p(a: float, b: float, lam: float, lip_sigma: float) -> float:
    """Positive root of ``(a - lambda) p - b p^3 + c = 0``, ``c = (a + L + L^2/2) sqrt(a / 2b)``.

    For ``lambda > a`` the cubic is strictly decreasing so the root is unique;
    it is found by bisection on ``[0, c / (lambda - a) + 1]``.
    """
    if not lam > a:
        raise PreconditionError(f"need lambda > a for a unique root (lambda={lam}, a={a})")
    c = (a + lip_sigma + lip_sigma ** 2 / 2.0) * math.sqrt(a / (2.0 * b))

    def g(p):
        return (a - lam) * p - b * p ** 3 + c

    lo, hi = 0.0, c / (lam - a) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    return 0.5 * (lo + hi)


def equilibrium_residual(p: float, a: float, b: float, lam: float, lip_sigma: float) -> float:
    c = (a + lip_sigma + lip_sigma ** 2 / 2.0) * math.sqrt(a / (2.0 * b))
    return abs((a - lam) * p - b * p ** 3 + c)


def in_ztilde_regime(x: float, y: float, a: float, b: float) -> bool:
    return x >= math.sqrt(a / (2.0 * b)) and y >= math.sqrt(a / b)


def ztilde_bound(x: float, y: float, lam: float, a: float, b: float, lip_sigma: float, M: float, t):
    """Bound on ``E |Z~_t|``, evaluated exactly as derived (no tightening).

    ``2 lambda |x-y| (1 - e^{kt/2}) / (-k) + 2 M t e^{-b q^2 t}`` with
    ``k = 2a - 2lambda + 2L + L^2`` and ``q = min(p, sqrt(a/b))``. Only valid
    for ``x >= sqrt(a/2b)``, ``y >= sqrt(a/b)`` and admissible ``lambda``.
    """
    if not in_ztilde_regime(x, y, a, b):
        raise DomainError(
            f"bound holds only for x >= sqrt(a/(2b)) = {math.sqrt(a / (2 * b)):.6g} and "
            f"y >= sqrt(a/b) = {math.sqrt(a / b):.6g} (got x={x}, y={y})")
    if not lam > lambda_threshold(a, lip_sigma):
        raise DomainError(f"lambda={lam} must exceed {lambda_threshold(a, lip_sigma)}")
    t = np.asarray(t, dtype=float)
    k = decay_exponent(a, lam, lip_sigma)
    q = min(stable_equilibrium_p(a, b, lam, lip_sigma), math.sqrt(a / b))
    first = 2.0 * lam * abs(x - y) * (1.0 - np.exp(k * t / 2.0)) / (-k)
    second = 2.0 * M * t * np.exp(-b * q * q * t)
    out = first + second
    return out if out.ndim else float(out)


def defect_upper_bound(lip_f: float, e_abs_z: float, e_abs_ztilde: float) -> float:
    """``L_f (E|Z| + E|Z~|)``, a bound on ``|P_t f(x) - P_t f(y)|``."""
    if lip_f < 0 or e_abs_z < 0 or e_abs_ztilde < 0:
        raise DomainError("inputs must be nonnegative")
    return lip_f * (e_abs_z + e_abs_ztilde)


# --------------------------------------------------------------------------
# coupled simulation


@dataclass
class CoupledBatch:
    times: np.ndarray
    X: np.ndarray  # X^x, (n, m)
    Xt: np.ndarray  # auxiliary X~^y
    Y: np.ndarray  # X^y
    jump_times: list
    path_indices: np.ndarray
    n_ode_steps: int = 0
    n_rejected: int = 0

    @property
    def Z(self):
        return self.X - self.Xt

    @property
    def Ztilde(self):
        return self.Xt - self.Y


def _rk4(f, s, y, h):
    k1 = f(s, y)
    k2 = f(s + h / 2, y + h / 2 * k1)
    k3 = f(s + h / 2, y + h / 2 * k2)
    k4 = f(s + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate_coupled_batch(model: PoissonCubicModel, x: float, y: float, params: CouplingParams,
                           cfg: SimConfig, path_indices=None, h_max: float = 0.25,
                           h_min: float = 1e-10) -> CoupledBatch:
    """Simulate the coupled triple on the config's record grid.

    ``X^x`` and ``X^y`` follow the exact flow between jumps. The auxiliary
    process solves ``u' = a u - b u^3 + lambda (X^x(s) - u)`` with ``X^x(s)``
    taken from the exact flow, by RK4 with step doubling and per-path step
    control at absolute/relative tolerance ``cfg.ode_tolerance``. All three
    jump at the shared clock's times, each by sigma of its own left limit.
    """
    a, b, lam, sig = model.a, model.b, params.lam, model.sigma
    tol = cfg.ode_tolerance
    paths = np.arange(cfg.n_paths) if path_indices is None else np.asarray(path_indices)
    n = paths.size
    grid = cfg.grid()
    m = grid.size
    keys = rng.stream_keys(cfg.master_seed, paths, rng.JUMP)

    t = np.zeros(n)          # absolute time
    seg0 = np.zeros(n)       # time of the last jump
    xs = np.full(n, float(x))  # X^x right after the last jump
    ys = np.full(n, float(y))  # X^y right after the last jump
    u = np.full(n, float(y))   # auxiliary process, integrated
    k = np.zeros(n, dtype=np.int64)
    nrec = np.zeros(n, dtype=np.int64)
    tau = -np.log(rng.uniform_from_keys(keys, k))  # next shared jump time
    h = np.full(n, min(h_max, 0.01))
    outX, outU, outY = (np.empty((n, m)) for _ in range(3))
    jump_log = [[] for _ in range(n)]
    live = np.ones(n, dtype=bool)
    steps = rejected = 0

    def record(idx):
        s = t[idx] - seg0[idx]
        outX[idx, nrec[idx]] = exact_cubic_flow(xs[idx], s, a, b)
        outY[idx, nrec[idx]] = exact_cubic_flow(ys[idx], s, a, b)
        outU[idx, nrec[idx]] = u[idx]
        nrec[idx] += 1
        live[idx[nrec[idx] >= m]] = False

    if grid[0] <= 0.0:
        record(np.arange(n))

    while live.any():
        idx = np.flatnonzero(live)
        target_rec = grid[nrec[idx]]
        event = np.minimum(target_rec, tau[idx])
        remaining = event - t[idx]
        hh = np.minimum(h[idx], remaining)
        clipped = hh >= remaining
        x0_i = xs[idx]
        s0 = t[idx] - seg0[idx]

        def f(s, v, x0_i=x0_i):
            return a * v - b * v ** 3 + lam * (exact_cubic_flow(x0_i, s, a, b) - v)

        u_i = u[idx]
        full = _rk4(f, s0, u_i, hh)
        half = _rk4(f, s0, u_i, hh / 2)
        two = _rk4(f, s0 + hh / 2, half, hh / 2)
        err = np.abs(two - full) / 15.0
        scale = tol * np.maximum(1.0, np.abs(two))
        ok = (err <= scale) | (hh <= h_min)
        if np.any(~np.isfinite(two)) or np.any((hh <= h_min) & (err > scale)):
            bad = np.flatnonzero(~np.isfinite(two) | ((hh <= h_min) & (err > scale)))
            raise ODEToleranceError("auxiliary ODE tolerance not met", {
                "path_index": int(paths[idx[bad[0]]]), "time": float(t[idx[bad[0]]]),
                "step": float(hh[bad[0]]), "error": float(err[bad[0]]),
                "tolerance": float(scale[bad[0]])})
        steps += int(ok.sum())
        rejected += int((~ok).sum())
        with np.errstate(divide="ignore"):
            factor = np.clip(0.9 * (scale / np.maximum(err, 1e-300)) ** 0.2, 0.2, 5.0)
        new_h = np.minimum(h_max, hh * factor)
        # a step cut short by an event should not shrink the next one
        h[idx] = np.where(ok & clipped, np.maximum(h[idx], np.minimum(new_h, h_max)), new_h)
        acc = idx[ok]
        u[acc] = two[ok]
        t[acc] = np.where(clipped[ok], event[ok], t[acc] + hh[ok])

        # events for paths that reached them
        arrived = acc[clipped[ok]]
        if arrived.size:
            # grid times strictly before the jump are recorded first
            while True:
                pend = arrived[live[arrived]]
                nxt = grid[np.minimum(nrec[pend], m - 1)]
                r_idx = pend[(nxt <= t[pend]) & (nxt < tau[pend])]
                if not r_idx.size:
                    break
                record(r_idx)
            j_idx = arrived[(tau[arrived] <= t[arrived]) & live[arrived]]
            if j_idx.size:
                s = t[j_idx] - seg0[j_idx]
                xl = exact_cubic_flow(xs[j_idx], s, a, b)
                yl = exact_cubic_flow(ys[j_idx], s, a, b)
                ul = u[j_idx]
                xs[j_idx] = xl + sig(xl)
                ys[j_idx] = yl + sig(yl)
                u[j_idx] = ul + sig(ul)
                seg0[j_idx] = t[j_idx]
                for i in j_idx:
                    jump_log[i].append(float(t[i]))
                k[j_idx] += 1
                tau[j_idx] = t[j_idx] - np.log(rng.uniform_from_keys(keys[j_idx], k[j_idx]))

    return CoupledBatch(grid, outX, outU, outY, [np.array(j) for j in jump_log], paths,
                        steps, rejected)


def simulate_feedback_coupling(model: PoissonCubicModel, x: float, y: float,
                               params: CouplingParams, cfg: SimConfig,
                               path_index: int) -> CoupledBatch:
    """One coupled triple ``(X^x, X~^y, X^y)``; see :func:`simulate_coupled_batch`."""
    return simulate_coupled_batch(model, x, y, params, cfg, [path_index])


# --------------------------------------------------------------------------
# diagnostics


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    n = v.size
    mean = math.fsum(v.tolist()) / n
    if n < 2:
        return mean, math.nan
    var = math.fsum(((v - mean) ** 2).tolist()) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass
class CouplingDiagnostics:
    times: np.ndarray
    e_z2: np.ndarray
    se_z2: np.ndarray
    e_abs_z: np.ndarray
    se_abs_z: np.ndarray
    e_ztilde: np.ndarray
    se_ztilde: np.ndarray
    bound_z2: np.ndarray
    bound_ztilde: np.ndarray
    constants: dict = field(default_factory=dict)

    @property
    def ode_slack(self) -> float:
        # absolute room for integrator error; matters only when the bound is ~0
        return 1e3 * self.constants.get("ode_tolerance", 0.0)

    def ineq1_holds(self, n_se: float = 3.0) -> np.ndarray:
        return self.e_z2 <= self.bound_z2 + n_se * self.se_z2 + self.ode_slack ** 2

    def ineq2_holds(self, n_se: float = 3.0) -> np.ndarray:
        return self.e_ztilde <= self.bound_ztilde + n_se * self.se_ztilde + self.ode_slack

    def jensen_holds(self) -> np.ndarray:
        return self.e_z2 >= self.e_abs_z ** 2 - 1e-15

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# " + dumps(self.constants).replace("\n", " ").strip() + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "e_z2", "se_z2", "bound_z2", "e_ztilde", "se_ztilde", "bound_ztilde"])
        for row in zip(self.times, self.e_z2, self.se_z2, self.bound_z2, self.e_ztilde,
                       self.se_ztilde, self.bound_ztilde):
            w.writerow([fmt(v) for v in row])
        return buf.getvalue()


def coupling_diagnostics(model: PoissonCubicModel, x: float, y: float, params: CouplingParams,
                         cfg: SimConfig, batch: CoupledBatch | None = None) -> CouplingDiagnostics:
    """Empirical ``E Z_t^2`` and ``E|Z~_t|`` on the record grid next to their bounds.

    The bounds are compared on the same coupled paths used for the moments.
    ``bound_ztilde`` is NaN outside the region where it was derived.
    """
    params.check_admissible(model)
    if batch is None:
        batch = simulate_coupled_batch(model, x, y, params, cfg)
    a, b, L, lam = model.a, model.b, model.lip_sigma, params.lam
    Z, Zt = batch.Z, batch.Ztilde
    stats = [(_mean_se(Z[:, j] ** 2), _mean_se(np.abs(Z[:, j])), _mean_se(np.abs(Zt[:, j])))
             for j in range(batch.times.size)]
    e_z2, se_z2 = np.array([s[0] for s in stats]).T
    e_az, se_az = np.array([s[1] for s in stats]).T
    e_zt, se_zt = np.array([s[2] for s in stats]).T
    bz2 = np.asarray(z_squared_bound(x, y, lam, a, L, batch.times), dtype=float)
    regime = in_ztilde_regime(x, y, a, b)
    if regime:
        bzt = np.asarray(ztilde_bound(x, y, lam, a, b, L, model.M, batch.times), dtype=float)
    else:
        bzt = np.full(batch.times.size, np.nan)
    p = stable_equilibrium_p(a, b, lam, L)
    constants = {
        "a": a, "b": b, "M": model.M, "lip_sigma": L, "lambda": lam, "x": x, "y": y,
        "lambda_threshold": lambda_threshold(a, L),
        "exponent": decay_exponent(a, lam, L),
        "p": p, "p_residual": equilibrium_residual(p, a, b, lam, L),
        "q": min(p, math.sqrt(a / b)),
        "ztilde_regime": regime,
        "n_paths": int(batch.X.shape[0]), "master_seed": int(cfg.master_seed),
        "ode_tolerance": cfg.ode_tolerance, "ode_steps": batch.n_ode_steps,
    }
    return CouplingDiagnostics(batch.times, e_z2, se_z2, e_az, se_az, e_zt, se_zt, bz2, bzt,
                               constants)
