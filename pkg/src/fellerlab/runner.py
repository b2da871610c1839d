"""Run an :class:`ExperimentConfig` and write its reports.

Each experiment produces JSON documents, CSV tables and plot-data curves.
Files are written atomically into ``<out_dir>/<name>/``; a ``manifest.json``
records the config hash, the output hashes and any error. Everything except
the manifest's wall-clock field is a pure function of the config.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import tempfile
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .chain_oracle import (FiniteChain, NonUniqueInvariantMeasure, alpha_splitting_decomposition,
                           cesaro_distribution, exact_condition_report, invariant_measure,
                           power_distribution)
from .config import ExperimentConfig
from .coupling import CouplingParams, coupling_diagnostics
from .criteria import (estimate_C1_C2, estimate_C4, eventual_continuity_defect,
                       moment_decay_fit, reachability_schedule, tv_defect)
from .errors import DomainError
from .measures import ball_hit_fraction, bin_edges_from_spec, hat_function, wilson_interval
from .report import SCHEMA_VERSION, CriterionReport, dumps, fmt
from .sde_sim import FiniteChainModel, SimConfig, sample_cesaro_law, sample_law, sample_law_grid


@dataclass
class Results:
    """Everything an experiment wants written, keyed by short file stems."""

    documents: dict = field(default_factory=dict)  # stem -> dict (JSON)
    tables: dict = field(default_factory=dict)  # stem -> CSV text
    curves: dict = field(default_factory=dict)  # stem -> (header, rows)
    caveats: list = field(default_factory=list)

    def add_report(self, stem: str, rep: CriterionReport) -> None:
        self.documents[stem] = rep.to_dict()
        self.tables[stem] = rep.to_csv()
        if rep.caveat not in self.caveats:
            self.caveats.append(rep.caveat)
        for x in rep.x_grid:
            rows = [(p.t, p.value, p.ci_low, p.ci_high) for p in rep.points if p.x == x]
            if rows and all(math.isfinite(r[0]) for r in rows):
                self.curves[f"{stem}_x{fmt(x)}"] = (["t", "value", "ci_low", "ci_high"], rows)

    def add_artifact(self, stem: str, artifact_type: str, data: dict) -> None:
        self.documents[stem] = {"schema_version": SCHEMA_VERSION, "artifact_type": artifact_type,
                                "data": data}

    def empty(self) -> bool:
        return not (self.documents or self.tables or self.curves)


@dataclass
class RunManifest:
    name: str
    kind: str
    config_hash: str
    tool_version: str
    master_seed: int
    wall_clock_seconds: float
    outputs: list
    outputs_hash: str
    caveats: list
    errors: list

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "artifact_type": "manifest",
                "data": {"name": self.name, "kind": self.kind, "config_hash": self.config_hash,
                         "tool_version": self.tool_version, "master_seed": self.master_seed,
                         "wall_clock_seconds": self.wall_clock_seconds, "outputs": self.outputs,
                         "outputs_hash": self.outputs_hash, "caveats": self.caveats,
                         "errors": self.errors}}


# --------------------------------------------------------------------------
# writing


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _curve_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def emit_report(results: Results, formats, out_dir: str) -> list[str]:
    """Write the results in the requested formats; returns the file names written."""
    if results is None or results.empty():
        raise DomainError("no results to write")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")
    files = {}
    if "json" in formats:
        for stem, doc in results.documents.items():
            files[f"{stem}.json"] = dumps(doc)
    if "csv" in formats:
        for stem, text in results.tables.items():
            files[f"{stem}.csv"] = text
    if "plot" in formats:
        for stem, (header, rows) in results.curves.items():
            files[f"plot_{stem}.csv"] = _curve_csv(header, rows)
    if not files:
        raise DomainError(f"nothing to write in formats {list(formats)}")
    for name in sorted(files):
        _atomic_write(os.path.join(out_dir, name), files[name])
    return sorted(files)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


# --------------------------------------------------------------------------
# experiments


def _model(cfg):
    return FiniteChainModel(cfg.model) if isinstance(cfg.model, FiniteChain) else cfg.model


def _run_defect(cfg, res, p):
    f_spec = p.get("f") or {}
    f = hat_function(float(f_spec.get("z", p["z"])), float(f_spec.get("eps", 0.5)))
    surf, rep = eventual_continuity_defect(_model(cfg), p["z"], f, p["x_grid"], p["t_grid"],
                                           p["n"], cfg.master_seed, p["burn_in"],
                                           p["tolerance"], p["dt"], cfg.threads)
    res.add_report("EC", rep)
    res.tables["defect_surface"] = surf.to_csv()


def _run_tv(cfg, res, p):
    model = cfg.model if isinstance(cfg.model, FiniteChain) else _model(cfg)
    bins = None if p.get("bins") is None else bin_edges_from_spec(p["bins"])
    rep = tv_defect(model, p["z"], p["x_grid"], p["t_grid"], bins, p["n"], cfg.master_seed,
                    p["burn_in"], p["tolerance"], p["dt"], cfg.threads)
    res.add_report("TV-EC", rep)


def _run_c4(cfg, res, p):
    rep = estimate_C4(_model(cfg), p["z"], p["eps"], p["x_grid"], p["t_grid"], p["n"],
                      cfg.master_seed, p["burn_in"], p["confidence"], p["dt"], cfg.threads)
    res.add_report("C4", rep)


def _run_c1c2(cfg, res, p):
    c1, c2 = estimate_C1_C2(_model(cfg), p["z"], p["eps"], p["x_grid"], p["t_grid"], p["n"],
                            cfg.master_seed, p["burn_in"], p["confidence"], p["dt"], cfg.threads)
    res.add_report("C1", c1)
    res.add_report("C2", c2)


def _run_coupling(cfg, res, p):
    model = cfg.model
    sim = SimConfig(T=float(max(p["t_grid"])), ode_tolerance=p["ode_tolerance"], n_paths=p["n"],
                    master_seed=cfg.master_seed, record_times=tuple(float(t) for t in p["t_grid"]))
    diag = coupling_diagnostics(model, p["x"], p["y"], CouplingParams(p["lam"]), sim)
    res.tables["coupling"] = diag.to_csv()
    ok1 = diag.ineq1_holds(p["n_se"])
    ok2 = diag.ineq2_holds(p["n_se"])
    regime = diag.constants["ztilde_regime"]
    res.add_artifact("coupling", "coupling_diagnostics", {
        "constants": diag.constants, "t": diag.times.tolist(), "e_z2": diag.e_z2.tolist(),
        "se_z2": diag.se_z2.tolist(), "bound_z2": diag.bound_z2.tolist(),
        "e_abs_z": diag.e_abs_z.tolist(), "e_ztilde": diag.e_ztilde.tolist(),
        "se_ztilde": diag.se_ztilde.tolist(), "bound_ztilde": diag.bound_ztilde.tolist(),
        "ineq1_holds": [bool(v) for v in ok1],
        "ineq2_holds": [bool(v) for v in ok2] if regime else None,
        "jensen_holds": [bool(v) for v in diag.jensen_holds()], "n_se": p["n_se"]})
    res.curves["e_z2"] = (["t", "value", "se", "bound"],
                          list(zip(diag.times, diag.e_z2, diag.se_z2, diag.bound_z2)))
    res.curves["e_ztilde"] = (["t", "value", "se", "bound"],
                              list(zip(diag.times, diag.e_ztilde, diag.se_ztilde,
                                       diag.bound_ztilde)))
    res.caveats.append("Coupling moments are Monte Carlo estimates compared with the closed-form "
                       f"bounds at {p['n_se']} standard errors.")


def _run_reachability(cfg, res, p):
    m = cfg.model
    sched = reachability_schedule(m.a, m.b, m.m, m.M, p["delta_tilde"], p["eps"], p["r_request"],
                                  None if p["x_range"] is None else tuple(p["x_range"]))
    res.add_artifact("schedule", "reachability_schedule", sched.to_dict())
    ts = np.linspace(0.0, sched.T, 101)
    res.curves["case_bounds"] = (["t", "case1", "case2", "case3"],
                                 list(zip(ts, sched.case1_bound(ts), sched.case2_bound(ts),
                                          sched.case3_bound(ts))))
    res.caveats.append("Reachability bounds are the explicit case products evaluated at the "
                       "combined horizon; they are certified lower bounds, not estimates.")
    if p["validate_n"]:
        root = m.equilibrium
        starts = [("case1", p["delta_tilde"]), ("case1", root + sched.r), ("case2", 0.0),
                  ("case3", root - sched.r)]
        rows = []
        for i, (case, x) in enumerate(starts):
            law = sample_law(m, x, sched.T, p["validate_n"], cfg.master_seed + i)
            est, lo, hi = ball_hit_fraction(law, root, p["eps"])
            se = math.sqrt(max(est * (1 - est), 0.0) / len(law))
            bound = getattr(sched, case)
            rows.append((case, x, bound, est, se, est >= bound - 3 * se))
        lines = ["case,x,bound,estimate,se,holds"]
        lines += [f"{c},{fmt(x)},{fmt(b)},{fmt(e)},{fmt(s)},{str(h).lower()}"
                  for c, x, b, e, s, h in rows]
        res.tables["schedule_validation"] = "\n".join(lines) + "\n"


def _run_moment(cfg, res, p):
    m = cfg.model
    z = m.equilibrium if p["z"] is None else p["z"]
    fit = moment_decay_fit(m, z, p["x"], p["t_grid"], p["n"], cfg.master_seed, p["n_se"],
                           p["radius"], p["radius_time"])
    res.add_artifact("moment_decay", "moment_decay_fit", fit.to_dict())
    rows = list(zip(fit.t_grid, fit.mean_sq, fit.se, fit.bound))
    res.tables["moment_decay"] = _curve_csv(["t", "mean_sq", "se", "bound"], rows)
    res.curves["moment_decay"] = (["t", "value", "se", "bound"], rows)
    res.caveats.append("Second moments are Monte Carlo estimates checked against the gamma = 1 "
                       "bound; the fitted rate is descriptive only.")


def _run_chain_oracle(cfg, res, p):
    chain = cfg.model
    for cond, rep in exact_condition_report(chain, p["z"], p["eps"]).items():
        res.add_report(f"exact_{cond}", rep)
    try:
        pi = invariant_measure(chain)
        res.add_artifact("invariant_measure", "invariant_measure",
                         {"support": pi.support.tolist(), "probs": pi.probs.tolist()})
        res.tables["invariant_measure"] = "state,prob\n" + "".join(
            f"{int(s)},{fmt(q)}\n" for s, q in zip(pi.support, pi.probs))
    except NonUniqueInvariantMeasure as exc:
        res.add_artifact("invariant_measure", "invariant_measure",
                         {"unique": False, "classes": exc.classes})
    ball = chain.ball(p["z"], p["eps"])
    ts = list(range(0, int(p["t_max"]) + 1))
    header = ["t"] + [f"x{x}" for x in range(chain.n_states)]
    rows = [[t] + [power_distribution(chain, x, t).mass(ball) for x in range(chain.n_states)]
            for t in ts]
    res.curves["ball_mass"] = (header, rows)
    sp = p.get("splitting")
    if sp:
        trace = alpha_splitting_decomposition(chain, sp["x1"], sp["x2"], sp["A"], sp["t1"], sp["k"])
        res.add_artifact("splitting_trace", "splitting_trace", trace.to_dict())


def _run_crosscheck(cfg, res, p):
    chain = cfg.model
    model = FiniteChainModel(chain)
    ball = chain.ball(p["z"], p["eps"])
    conf = p["confidence"]
    rows, all_within = [], True
    t_grid = [int(t) for t in p["t_grid"]]
    for x in range(chain.n_states):
        _, v, _ = sample_law_grid(model, x, t_grid, p["n"], cfg.master_seed)
        for j, t in enumerate(t_grid):
            exact = power_distribution(chain, x, t).mass(ball)
            est = float(np.isin(v[:, j].astype(np.int64), ball).mean())
            lo, hi = wilson_interval(est, p["n"], conf)
            ok = lo - 1e-12 <= exact <= hi + 1e-12
            all_within &= ok
            rows.append(("P", x, t, exact, est, lo, hi, ok))
        for t in t_grid:
            if t < 1:
                continue
            exact = cesaro_distribution(chain, x, t).mass(ball)
            law = sample_cesaro_law(model, x, t, p["n"], cfg.master_seed)
            est = float(np.isin(law.samples.astype(np.int64), ball).mean())
            lo, hi = wilson_interval(est, p["n"], conf)
            ok = lo - 1e-12 <= exact <= hi + 1e-12
            all_within &= ok
            rows.append(("Q", x, t, exact, est, lo, hi, ok))
    lines = ["quantity,x,t,exact,estimate,ci_low,ci_high,within"]
    lines += [f"{q},{x},{t},{fmt(e)},{fmt(s)},{fmt(lo)},{fmt(hi)},{str(ok).lower()}"
              for q, x, t, e, s, lo, hi, ok in rows]
    res.tables["crosscheck"] = "\n".join(lines) + "\n"
    res.add_artifact("crosscheck", "oracle_crosscheck", {
        "z": p["z"], "eps": p["eps"], "ball": ball.tolist(), "confidence": conf, "n": p["n"],
        "n_comparisons": len(rows), "n_within": int(sum(r[-1] for r in rows)),
        "all_within": bool(all_within)})
    for cond, rep in exact_condition_report(chain, p["z"], p["eps"]).items():
        res.add_report(f"exact_{cond}", rep)
    res.caveats.append(f"Monte Carlo values are compared with exact values through {conf:.0%} "
                       "Wilson intervals; a few misses are expected by chance.")


_RUNNERS = {
    "defect": _run_defect, "tv_defect": _run_tv, "c4": _run_c4, "c1c2": _run_c1c2,
    "coupling_bounds": _run_coupling, "reachability": _run_reachability,
    "moment_decay": _run_moment, "chain_oracle": _run_chain_oracle,
    "oracle_crosscheck": _run_crosscheck,
}


def compute_results(cfg: ExperimentConfig) -> Results:
    res = Results()
    _RUNNERS[cfg.kind](cfg, res, cfg.params)
    return res


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Execute the experiment and write its files plus ``manifest.json``.

    Estimator errors are caught and recorded; ``manifest.ok`` is then False.
    Verdicts never count as errors.
    """
    out = os.path.join(cfg.out_dir, cfg.name)
    os.makedirs(out, exist_ok=True)
    start = time.perf_counter()
    errors, written = [], []
    canonical = cfg.canonical()
    _atomic_write(os.path.join(out, "config.json"), canonical)
    caveats = []
    try:
        res = compute_results(cfg)
        caveats = list(res.caveats)
        written = emit_report(res, cfg.formats, out)
    except Exception as exc:  # recorded, surfaced through the exit status
        errors.append(f"{type(exc).__name__}: {exc}")
        errors.append(traceback.format_exc(limit=3))
    names = ["config.json"] + written
    outputs = [{"file": n, "sha256": _sha256(os.path.join(out, n))} for n in names]
    outputs_hash = hashlib.sha256("".join(o["file"] + o["sha256"] for o in outputs)
                                  .encode()).hexdigest()
    manifest = RunManifest(cfg.name, cfg.kind, hashlib.sha256(canonical.encode()).hexdigest(),
                           __version__, cfg.master_seed,
                           round(time.perf_counter() - start, 3), outputs, outputs_hash,
                           caveats, errors)
    _atomic_write(os.path.join(out, "manifest.json"), dumps(manifest.to_dict()))
    return manifest
