"""Run configuration: strict JSON parsing into dataclasses.

Unknown keys anywhere are errors, and every error names the offending field
as ``section.key``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .grid import Grid
from .model import ModelError, ModelSpec, NetworkParams, build_linear_1d, build_v_model, build_w_model, load_network_params


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"config field '{field_name}': {message}")


BUILDERS = ("linear1d", "v", "w")
VERIFY_CHECKS = ("perturbation", "cross_validation", "truncation", "assumptions")


@dataclass
class ModelConfig:
    builder: str = "linear1d"
    params: dict | None = None
    params_file: str | None = None


@dataclass
class GridConfig:
    R: float = 8.0
    n: int = 161


@dataclass
class SolverConfig:
    alpha: float = 0.1
    alphas: list | None = None
    epsilon: float = 0.0
    tol: float = 1e-8
    max_iter: int = 100
    method: str = "pi"
    boundary: str | None = None
    scheme: str = "hybrid"
    penalty_C: float = 1.0
    delta: float = 0.5
    ball_radius: float = 1.0


@dataclass
class SimConfig:
    T: float = 100.0
    burn_in: float = 10.0
    h: float = 0.01
    seed: int = 0
    replications: int = 4
    x0: list | None = None
    policy: object = "optimal"
    record_every: int = 10
    outer_control: int | None = None


@dataclass
class SweepConfig:
    radii: list = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0])
    outer_control: int = 0


@dataclass
class LyapunovConfig:
    Q: list
    k: float = 2.0
    scale: float = 1.0
    kappa_hat: float = 1.0
    control: int = 0
    ball_radius: float = 1.0
    penalty_C: float = 1.0
    delta: float = 0.1


@dataclass
class VerifyConfig:
    checks: list = field(default_factory=lambda: ["perturbation", "cross_validation"])
    perturbation_epsilon: float = 0.05
    lyapunov: LyapunovConfig | None = None
    lyapunov_grid: GridConfig | None = None


@dataclass
class RunConfig:
    model: ModelConfig
    grid: GridConfig | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    sim: SimConfig | None = None
    sweep: SweepConfig | None = None
    verify: VerifyConfig | None = None
    out: str = "out"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# --------------------------------------------------------------------------
# parsing helpers


def _strict(cls, data, name: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(name, "expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
    return dict(data)


def _num(d: dict, key: str, name: str, *, lo=None, hi=None, lo_open=False, integer=False):
    if key not in d:
        return
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name}.{key}", "must be a number")
    if integer and not isinstance(v, int):
        raise ConfigError(f"{name}.{key}", "must be an integer")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{name}.{key}", f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{name}.{key}", f"must be <= {hi}, got {v}")
    d[key] = int(v) if integer else float(v)


def _choice(d: dict, key: str, name: str, options):
    if key in d and d[key] not in options:
        raise ConfigError(f"{name}.{key}", f"must be one of {list(options)}, got {d[key]!r}")


def _num_list(d: dict, key: str, name: str, nonempty=True):
    if key not in d or d[key] is None:
        return
    v = d[key]
    if not isinstance(v, list) or (nonempty and not v):
        raise ConfigError(f"{name}.{key}", "must be a nonempty list of numbers")
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{name}.{key}", "must be a list of numbers")


def _grid(data, name: str) -> GridConfig:
    d = _strict(GridConfig, data, name)
    _num(d, "R", name, lo=0, lo_open=True)
    _num(d, "n", name, lo=3, integer=True)
    if "n" in d and d["n"] % 2 == 0:
        raise ConfigError(f"{name}.n", "must be odd so the origin is a node")
    return GridConfig(**d)


def _model(data) -> ModelConfig:
    d = _strict(ModelConfig, data, "model")
    _choice(d, "builder", "model", BUILDERS)
    if d.get("params") is not None and d.get("params_file") is not None:
        raise ConfigError("model.params", "give either params or params_file, not both")
    if d.get("params") is not None and not isinstance(d["params"], dict):
        raise ConfigError("model.params", "expected an object")
    return ModelConfig(**d)


def _solver(data) -> SolverConfig:
    d = _strict(SolverConfig, data, "solver")
    _num(d, "alpha", "solver", lo=0, lo_open=True, hi=1)
    _num_list(d, "alphas", "solver")
    if d.get("alphas"):
        a = d["alphas"]
        if any(x <= 0 for x in a) or any(y >= x for x, y in zip(a, a[1:])):
            raise ConfigError("solver.alphas", "must be positive and strictly decreasing")
    _num(d, "epsilon", "solver", lo=0)
    _num(d, "tol", "solver", lo=0, lo_open=True)
    _num(d, "max_iter", "solver", lo=1, integer=True)
    _choice(d, "method", "solver", ("pi", "vd"))
    _choice(d, "boundary", "solver", (None, "clamp", "dirichlet"))
    _choice(d, "scheme", "solver", ("hybrid", "upwind"))
    _num(d, "penalty_C", "solver", lo=0, lo_open=True)
    _num(d, "delta", "solver", lo=0, lo_open=True, hi=1)
    _num(d, "ball_radius", "solver", lo=0, lo_open=True)
    return SolverConfig(**d)


def _sim(data) -> SimConfig:
    d = _strict(SimConfig, data, "sim")
    _num(d, "T", "sim", lo=0, lo_open=True)
    _num(d, "burn_in", "sim", lo=0)
    _num(d, "h", "sim", lo=0, lo_open=True)
    _num(d, "seed", "sim", lo=0, integer=True)
    _num(d, "replications", "sim", lo=1, integer=True)
    _num(d, "record_every", "sim", lo=1, integer=True)
    if d.get("outer_control") is not None:
        _num(d, "outer_control", "sim", lo=0, integer=True)
    _num_list(d, "x0", "sim")
    T, b, h = d.get("T", SimConfig.T), d.get("burn_in", SimConfig.burn_in), d.get("h", SimConfig.h)
    if not T > b:
        raise ConfigError("sim.burn_in", f"must be smaller than T={T}")
    if T < h:
        raise ConfigError("sim.T", f"must be at least one step h={h}")
    p = d.get("policy", "optimal")
    if not (p == "optimal" or (isinstance(p, int) and not isinstance(p, bool) and p >= 0)):
        raise ConfigError("sim.policy", "must be 'optimal' or a control index")
    return SimConfig(**d)


def _sweep(data) -> SweepConfig:
    d = _strict(SweepConfig, data, "sweep")
    _num_list(d, "radii", "sweep")
    if "radii" in d:
        r = d["radii"]
        if any(x < 0 for x in r) or any(y <= x for x, y in zip(r, r[1:])):
            raise ConfigError("sweep.radii", "must be nonnegative and strictly increasing")
        d["radii"] = [float(x) for x in r]
    _num(d, "outer_control", "sweep", lo=0, integer=True)
    return SweepConfig(**d)


def _verify(data) -> VerifyConfig:
    d = _strict(VerifyConfig, data, "verify")
    if "checks" in d:
        if not isinstance(d["checks"], list) or not d["checks"]:
            raise ConfigError("verify.checks", "must be a nonempty list")
        for c in d["checks"]:
            if c not in VERIFY_CHECKS:
                raise ConfigError("verify.checks", f"unknown check {c!r}; options {list(VERIFY_CHECKS)}")
    _num(d, "perturbation_epsilon", "verify", lo=0, lo_open=True)
    if d.get("lyapunov") is not None:
        ld = _strict(LyapunovConfig, d["lyapunov"], "verify.lyapunov")
        if "Q" not in ld:
            raise ConfigError("verify.lyapunov.Q", "required")
        _num_list(ld, "Q", "verify.lyapunov")
        for key in ("k", "scale", "kappa_hat", "ball_radius", "penalty_C", "delta"):
            _num(ld, key, "verify.lyapunov", lo=0, lo_open=True)
        _num(ld, "control", "verify.lyapunov", lo=0, integer=True)
        d["lyapunov"] = LyapunovConfig(**ld)
    if d.get("lyapunov_grid") is not None:
        d["lyapunov_grid"] = _grid(d["lyapunov_grid"], "verify.lyapunov_grid")
    if "assumptions" in d.get("checks", []) and d.get("lyapunov") is None:
        raise ConfigError("verify.lyapunov", "required by the 'assumptions' check")
    return VerifyConfig(**d)


def parse_config(data: dict) -> RunConfig:
    d = _strict(RunConfig, data, "<root>")
    if "model" not in d:
        raise ConfigError("model", "missing required section")
    kw = {"model": _model(d["model"])}
    if d.get("grid") is not None:
        kw["grid"] = _grid(d["grid"], "grid")
    if d.get("solver") is not None:
        kw["solver"] = _solver(d["solver"])
    if d.get("sim") is not None:
        kw["sim"] = _sim(d["sim"])
    if d.get("sweep") is not None:
        kw["sweep"] = _sweep(d["sweep"])
    if d.get("verify") is not None:
        kw["verify"] = _verify(d["verify"])
    if "out" in d:
        if not isinstance(d["out"], str):
            raise ConfigError("out", "must be a path string")
        kw["out"] = d["out"]
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(data)


def require(cfg: RunConfig, *sections: str) -> None:
    for s in sections:
        if getattr(cfg, s) is None:
            raise ConfigError(s, "missing required section for this command")


# --------------------------------------------------------------------------
# construction


def resolved_model_params(mc: ModelConfig, base_dir: Path | None = None) -> dict:
    """The model parameters as a plain dict, with ``params_file`` inlined."""
    if mc.params_file is not None:
        p = Path(mc.params_file)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        if mc.builder == "linear1d":
            try:
                return json.loads(p.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError("model.params_file", str(exc)) from None
        try:
            return load_network_params(p).to_dict()
        except OSError as exc:
            raise ConfigError("model.params_file", str(exc)) from None
        except ModelError as exc:
            raise ConfigError(f"model.params_file:{getattr(exc, 'field', '?')}", str(exc)) from None
    if mc.params is None:
        raise ConfigError("model.params", "either params or params_file is required")
    return mc.params


def build_model(mc: ModelConfig, base_dir: Path | None = None) -> ModelSpec:
    params = resolved_model_params(mc, base_dir)
    try:
        if mc.builder == "linear1d":
            extra = set(params) - {"actions", "sigma", "atoms"}
            if extra:
                raise ConfigError(f"model.params.{sorted(extra)[0]}", "unknown key")
            if "actions" not in params:
                raise ConfigError("model.params.actions", "required")
            return build_linear_1d(params["actions"], float(params.get("sigma", 1.0)), params.get("atoms", ()))
        np_ = NetworkParams.from_dict(params)
        return build_v_model(np_) if mc.builder == "v" else build_w_model(np_)
    except ConfigError:
        raise
    except ModelError as exc:
        raise ConfigError(f"model.params.{getattr(exc, 'field', mc.builder)}", str(exc)) from None


def build_grid(gc: GridConfig, d: int) -> Grid:
    return Grid(d, gc.R, gc.n)
