"""Experiment configs: JSON in, validated :class:`ExperimentConfig` out.

A config names one experiment kind, a model, a master seed and a ``params``
block whose keys depend on the kind. Every problem found is collected and
reported in a single :class:`~fellerlab.errors.ConfigError`.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

from .chain_oracle import FiniteChain
from .coupling import lambda_threshold
from .errors import ConfigError
from .report import dumps
from .sde_sim import LangevinCubicModel, PoissonCubicModel, Sigma

OUT_ENV = "FELLERLAB_OUT"
FORMATS = ("json", "csv", "plot")

TOP_KEYS = {"kind", "name", "master_seed", "model", "params", "out_dir", "formats", "threads"}

# kind -> (allowed model types, {param: default}); REQUIRED marks keys without a default
REQUIRED = object()
_GRID = {"burn_in": None, "dt": 1e-3}

KINDS = {
    "defect": ({"poisson_cubic", "langevin_cubic", "finite_chain"},
               dict(z=REQUIRED, f=None, x_grid=REQUIRED, t_grid=REQUIRED, n=REQUIRED,
                    tolerance=0.05, **_GRID)),
    "tv_defect": ({"poisson_cubic", "langevin_cubic", "finite_chain"},
                  dict(z=REQUIRED, x_grid=REQUIRED, t_grid=REQUIRED, bins=None, n=REQUIRED,
                       tolerance=0.05, **_GRID)),
    "c4": ({"poisson_cubic", "langevin_cubic", "finite_chain"},
           dict(z=REQUIRED, eps=REQUIRED, x_grid=REQUIRED, t_grid=REQUIRED, n=REQUIRED,
                confidence=0.95, **_GRID)),
    "c1c2": ({"poisson_cubic", "langevin_cubic", "finite_chain"},
             dict(z=REQUIRED, eps=REQUIRED, x_grid=REQUIRED, t_grid=REQUIRED, n=REQUIRED,
                  confidence=0.95, **_GRID)),
    "coupling_bounds": ({"poisson_cubic"},
                        dict(x=REQUIRED, y=REQUIRED, lam=REQUIRED, t_grid=REQUIRED, n=REQUIRED,
                             ode_tolerance=1e-9, n_se=3.0)),
    "reachability": ({"poisson_cubic"},
                     dict(delta_tilde=REQUIRED, eps=REQUIRED, r_request=REQUIRED, x_range=None,
                          validate_n=0)),
    "moment_decay": ({"poisson_cubic"},
                     dict(x=REQUIRED, z=None, t_grid=REQUIRED, n=REQUIRED, n_se=3.0, radius=None,
                          radius_time=None)),
    "chain_oracle": ({"finite_chain"},
                     dict(z=REQUIRED, eps=REQUIRED, t_max=20, splitting=None)),
    "oracle_crosscheck": ({"finite_chain"},
                          dict(z=REQUIRED, eps=REQUIRED, t_grid=REQUIRED, n=REQUIRED,
                               confidence=0.99)),
}


@dataclass
class ExperimentConfig:
    kind: str
    name: str
    master_seed: int
    model_spec: dict
    params: dict
    out_dir: str
    formats: tuple = FORMATS
    threads: int = 1
    model: object = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, "master_seed": self.master_seed,
                "model": self.model_spec, "params": self.params, "out_dir": self.out_dir,
                "formats": list(self.formats), "threads": self.threads}

    def canonical(self) -> str:
        """Serialised config without run-location fields; hashed into the manifest."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("threads")
        return dumps(d)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_overrides(self, seed=None, out_dir=None, threads=None) -> "ExperimentConfig":
        d = self.to_dict()
        if seed is not None:
            d["master_seed"] = seed
        if out_dir is not None:
            d["out_dir"] = out_dir
        if threads is not None:
            d["threads"] = threads
        return config_from_dict(d)


def _is_u64(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and 0 <= v < 2 ** 64


def _build_model(spec, problems):
    if not isinstance(spec, dict):
        problems.append("model must be an object")
        return None
    kind = spec.get("type")
    allowed = {
        "poisson_cubic": {"type", "a", "b", "sigma", "m", "M", "lip_sigma", "probe_min",
                          "probe_max", "n_probe"},
        "langevin_cubic": {"type", "c1", "c3", "s"},
        "finite_chain": {"type", "n", "rows", "labels", "metric", "path"},
    }
    if kind not in allowed:
        problems.append(f"model.type must be one of {sorted(allowed)} (got {kind!r})")
        return None
    extra = sorted(set(spec) - allowed[kind])
    if extra:
        problems.append(f"unknown model keys: {extra}")
    try:
        if kind == "poisson_cubic":
            missing = [k for k in ("a", "b", "sigma", "m", "M", "lip_sigma") if k not in spec]
            if missing:
                problems.append(f"poisson_cubic model missing {missing}")
                return None
            sig = spec["sigma"]
            if not isinstance(sig, dict) or set(sig) - {"kind", "c0", "c1"}:
                problems.append("model.sigma must be {kind, c0, c1}")
                return None
            # build without __post_init__ raising so every violation gets listed
            m = object.__new__(PoissonCubicModel)
            vals = dict(a=float(spec["a"]), b=float(spec["b"]), sigma=Sigma.from_dict(sig),
                        m=float(spec["m"]), M=float(spec["M"]),
                        lip_sigma=float(spec["lip_sigma"]),
                        probe_min=float(spec.get("probe_min", -50.0)),
                        probe_max=float(spec.get("probe_max", 50.0)),
                        n_probe=int(spec.get("n_probe", 10_000)))
            for k, v in vals.items():
                object.__setattr__(m, k, v)
            found = m.validation_problems()
            problems.extend(f"model: {p}" for p in found)
            # the unchecked model still lets params be checked; the config fails anyway
            return m if found else PoissonCubicModel(**vals)
        if kind == "langevin_cubic":
            return LangevinCubicModel(float(spec.get("c1", 1.5)), float(spec.get("c3", 1.0)),
                                      float(spec.get("s", 1.0)))
        if "path" in spec:
            return FiniteChain.from_file(spec["path"])
        return FiniteChain.from_dict(spec)
    except (ValueError, TypeError, KeyError, OSError) as exc:
        problems.append(f"model: {exc}")
        return None


def _grid(params, key, problems, integer=False):
    v = params.get(key)
    if not isinstance(v, list) or not v or not all(isinstance(t, (int, float))
                                                   and not isinstance(t, bool) for t in v):
        problems.append(f"params.{key} must be a nonempty list of numbers")
        return
    if integer and not all(float(t).is_integer() and t >= 0 for t in v):
        problems.append(f"params.{key} must hold nonnegative integers for a finite chain")


def _check_params(kind, model_type, model, p, problems):
    if "n" in p and not (isinstance(p["n"], int) and p["n"] >= 1):
        problems.append("params.n must be a positive integer")
    chain = model_type == "finite_chain"
    for key in ("x_grid", "t_grid"):
        if key in p and p[key] is not REQUIRED:
            _grid(p, key, problems, integer=chain and key == "t_grid")
            if key == "t_grid" and kind != "oracle_crosscheck" and isinstance(p[key], list):
                if any(not (isinstance(t, (int, float)) and t > 0) for t in p[key]):
                    problems.append("params.t_grid entries must be positive")
    if "eps" in p and not (isinstance(p["eps"], (int, float)) and p["eps"] > 0):
        problems.append("params.eps must be positive")
    if "confidence" in p and not 0 < p["confidence"] < 1:
        problems.append("params.confidence must lie in (0, 1)")
    if "dt" in p and not (isinstance(p["dt"], (int, float)) and p["dt"] > 0):
        problems.append("params.dt must be positive")
    if kind == "defect" and p.get("f") is not None:
        f = p["f"]
        if not isinstance(f, dict) or f.get("kind", "hat") != "hat" or set(f) - {"kind", "z", "eps"}:
            problems.append("params.f must be {kind: 'hat', z?, eps}")
        elif not f.get("eps", 0) > 0:
            problems.append("params.f.eps must be positive")
    if kind == "tv_defect" and not chain and p.get("bins") is None:
        problems.append("params.bins is required for a simulated model")
    if kind == "coupling_bounds" and isinstance(model, PoissonCubicModel):
        lam = p.get("lam")
        thr = lambda_threshold(model.a, model.lip_sigma)
        if not (isinstance(lam, (int, float)) and lam > thr):
            problems.append(
                f"params.lam={lam} is not admissible: the coupling bounds need "
                f"lambda > (a + L_sigma) + L_sigma^2/2 = {thr:.17g}")
        if not (isinstance(p.get("ode_tolerance"), (int, float)) and p["ode_tolerance"] > 0):
            problems.append("params.ode_tolerance must be positive")
    if kind == "reachability" and isinstance(model, PoissonCubicModel):
        root = math.sqrt(model.a / model.b)
        limit = min(model.m / 3.0, abs(root - model.m), root)
        dt_ = p.get("delta_tilde")
        if not (isinstance(dt_, (int, float)) and 0 < dt_ < limit):
            problems.append(
                f"params.delta_tilde={dt_} must satisfy 0 < delta_tilde < "
                f"min(m/3, |sqrt(a/b) - m|, sqrt(a/b)) = {limit:.17g}")
        if not (isinstance(p.get("r_request"), (int, float)) and p["r_request"] > 0):
            problems.append("params.r_request must be positive")
    if kind in ("chain_oracle", "oracle_crosscheck") and isinstance(model, FiniteChain):
        z = p.get("z")
        if not (isinstance(z, int) and 0 <= z < model.n_states):
            problems.append(f"params.z must be a state index in 0..{model.n_states - 1}")
        sp = p.get("splitting")
        if sp is not None:
            need = {"x1", "x2", "A", "t1", "k"}
            if not isinstance(sp, dict) or set(sp) != need:
                problems.append(f"params.splitting must have exactly the keys {sorted(need)}")
    if chain and kind in ("defect", "tv_defect", "c4", "c1c2") and isinstance(model, FiniteChain):
        xs = p.get("x_grid") or []
        zs = [p.get("z")] + list(xs)
        if not all(isinstance(v, int) and 0 <= v < model.n_states for v in zs):
            problems.append(f"params.z and x_grid must be state indices in 0..{model.n_states - 1}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    raw = copy.deepcopy(raw)
    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        problems.append(f"unknown keys: {unknown}")
    kind = raw.get("kind")
    if kind not in KINDS:
        problems.append(f"kind must be one of {sorted(KINDS)} (got {kind!r})")
    seed = raw.get("master_seed")
    if seed is None:
        problems.append("master_seed is required")
    elif not _is_u64(seed):
        problems.append(f"master_seed must be an unsigned 64-bit integer (got {seed!r})")
    model_spec = raw.get("model")
    if model_spec is None:
        problems.append("model is required")
        model = None
    else:
        model = _build_model(model_spec, problems)
    formats = raw.get("formats", list(FORMATS))
    if not isinstance(formats, list) or not formats or set(formats) - set(FORMATS):
        problems.append(f"formats must be a nonempty subset of {list(FORMATS)}")
    threads = raw.get("threads", 1)
    if not (isinstance(threads, int) and threads >= 1):
        problems.append("threads must be a positive integer")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        problems.append("params must be an object")
        params = {}
    filled = {}
    if kind in KINDS:
        types, defaults = KINDS[kind]
        mtype = model_spec.get("type") if isinstance(model_spec, dict) else None
        if mtype is not None and mtype not in types:
            problems.append(f"kind {kind!r} needs a model of type {sorted(types)} (got {mtype!r})")
        extra = sorted(set(params) - set(defaults))
        if extra:
            problems.append(f"unknown params for {kind!r}: {extra}")
        missing = sorted(k for k, v in defaults.items() if v is REQUIRED and k not in params)
        if missing:
            problems.append(f"params for {kind!r} missing {missing}")
        filled = {k: params.get(k, v) for k, v in defaults.items() if k in params or v is not REQUIRED}
        _check_params(kind, mtype, model, filled, problems)
    if problems:
        raise ConfigError(problems)
    out_dir = raw.get("out_dir") or os.environ.get(OUT_ENV) or "fellerlab_out"
    name = raw.get("name") or kind
    return ExperimentConfig(kind, str(name), int(seed), model_spec, filled, str(out_dir),
                            tuple(formats), threads, model)


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path} is not valid JSON: {exc}"]) from exc
    return config_from_dict(raw)
