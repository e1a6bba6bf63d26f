"""Run configuration: YAML/JSON files validated against a fixed schema.

Files are composed into a node tree first so every error can name the line of the
offending key.  JSON is a subset of YAML and goes through the same loader.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

import yaml

from .errors import SchemaError
from .flow import IntegratorSettings
from .model import FORCING_KINDS, ForcingProfile, Polynomial, SystemDefinition, builtin_system, BUILTIN_SYSTEMS
from .scan import GridSpec, SIDES

Validator = Callable[[Any], Any]


class ConfigError(SchemaError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source and line:
            where = f"{source}:{line}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


# -- scalar validators --------------------------------------------------------------


def _number(v) -> float:
    if isinstance(v, bool):
        raise ValueError("expected a number, got a boolean")
    if isinstance(v, str):
        v = float(v)  # YAML 1.1 reads 1e-3 as a string
    if not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {type(v).__name__}")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError("expected a finite number")
    return v


def _positive(v) -> float:
    v = _number(v)
    if v <= 0:
        raise ValueError("expected a positive number")
    return v


def _non_negative(v) -> float:
    v = _number(v)
    if v < 0:
        raise ValueError("expected a non-negative number")
    return v


def _count(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ValueError("expected a positive integer")
    return v


def _flag(v) -> bool:
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _text(v) -> str:
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v


def _optional(inner: Validator) -> Validator:
    def check(v):
        return None if v is None else inner(v)
    return check


def _choice(*options: str) -> Validator:
    def check(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return check


def _numbers(v) -> list[float]:
    if not isinstance(v, list) or not v:
        raise ValueError("expected a non-empty list of numbers")
    return [_number(u) for u in v]


def _terms(v) -> list[list[float]]:
    if not isinstance(v, list) or not v:
        raise ValueError("expected a non-empty list of [i, j, k, c] quadruples")
    out = []
    for t in v:
        if not isinstance(t, list) or len(t) != 4:
            raise ValueError(f"term {t!r} is not an [i, j, k, c] quadruple")
        i, j, k = (_exponent(e) for e in t[:3])
        out.append([i, j, k, _number(t[3])])
    return out


def _exponent(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ValueError(f"exponent {v!r} is not a non-negative integer")
    return v


_INTEGRATOR_TYPES: dict[str, Validator] = {
    "rel_tol": _positive, "abs_tol": _positive, "max_step": _positive, "escape_offset": _positive,
    "tracking_tube": _positive, "horizon": _optional(_number), "max_steps": _count,
    "jump_margin": _positive, "dwell_tube": _positive, "dwell_min_slope": _positive,
    "event_tol": _positive, "early_tracking": _flag, "method": _choice("dopri5", "radau"),
    "stiff_fallback": _flag, "collapse": _positive, "rate_floor": _positive,
}
assert set(_INTEGRATOR_TYPES) == {f.name for f in fields(IntegratorSettings)}

SCHEMA: dict[str, Any] = {
    "system": {
        "name": _choice(*sorted(BUILTIN_SYSTEMS)),
        "f_coeffs": _terms,
        "g_coeffs": _terms,
        "delta": _non_negative,
    },
    "forcing": {
        "kind": _choice(*FORCING_KINDS),
        "lambda_max": _number,
        "epsilon": _positive,
        "tau_min": _optional(_number),
        "tau_max": _optional(_number),
        "ramp_start": _optional(_number),
    },
    "integrator": _INTEGRATOR_TYPES,
    "grid": {
        "x_lo": _number, "x_hi": _number, "n_x": _count,
        "lam_lo": _number, "lam_hi": _number, "n_lam": _count,
        "side": _choice(*SIDES),
    },
    "transect": _number,
    "trajectory": {
        "x0": _number, "y0": _optional(_number), "tau0": _optional(_number),
        "lambda0": _optional(_number), "max_samples": _count,
    },
    "manifold": {
        "lambdas": _numbers, "x_lo": _number, "x_hi": _number, "n_samples": _count,
    },
    "critical_rate": {
        "eps_lo": _positive, "eps_hi": _positive, "deltas": _numbers,
        "tol": _positive, "rel_tol": _optional(_positive),
    },
    "canards": {
        "section_lambda": _optional(_number), "tube": _positive, "narrow": _positive,
        "secondary": _flag,
    },
    "output": {"dir": _text, "workers": _optional(_count), "svg": _flag},
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "trajectory": {"x0": 0.0, "y0": None, "tau0": None, "lambda0": None, "max_samples": 200_000},
    "manifold": {"lambdas": [-2.0, -1.0, 0.0, 1.0, 2.0], "x_lo": -3.0, "x_hi": 3.0, "n_samples": 601},
    "critical_rate": {"eps_lo": 0.05, "eps_hi": 0.5, "deltas": [], "tol": 1e-4, "rel_tol": None},
    "canards": {"section_lambda": None, "tube": 0.05, "narrow": 1e-3, "secondary": True},
    "output": {"dir": ".", "workers": None, "svg": False},
}


# -- node tree -----------------------------------------------------------------------


def _plain(node: yaml.Node, path: tuple, lines: dict) -> Any:
    """Python value of ``node``, recording the first line of every key path."""
    lines.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"duplicate key {'.'.join(path + (key,))!r}", k.start_mark.line + 1)
            lines[path + (key,)] = k.start_mark.line + 1
            out[key] = _plain(v, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return _scalar(node)


def _scalar(node: yaml.ScalarNode) -> Any:
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def parse_text(text: str, source: str = "<config>") -> tuple[dict, dict]:
    """Raw mapping and a key-path -> line table."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed config: {getattr(exc, 'problem', exc)}",
                          None if mark is None else mark.line + 1, source) from None
    if root is None:
        return {}, {}
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("top level must be a mapping", root.start_mark.line + 1, source)
    lines: dict = {}
    try:
        data = _plain(root, (), lines)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.line, source) from None
    return data, lines


def _validate(data: dict, lines: dict, source: str) -> dict:
    out: dict[str, Any] = {}
    for key, value in data.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lines.get((key,)), source)
        spec = SCHEMA[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a mapping", lines.get((key,)), source)
            sub = {}
            for k2, v2 in value.items():
                if k2 not in spec:
                    raise ConfigError(f"unknown key '{key}.{k2}'", lines.get((key, k2)), source)
                sub[k2] = _apply(spec[k2], v2, f"{key}.{k2}", lines.get((key, k2)), source)
            out[key] = sub
        else:
            out[key] = _apply(spec, value, key, lines.get((key,)), source)
    return out


def _apply(check: Validator, value, name: str, line, source):
    try:
        return check(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}", line, source) from None


# -- assembled configuration ---------------------------------------------------------


@dataclass
class RunConfig:
    """Validated inputs of one CLI invocation."""

    system: SystemDefinition
    forcing: ForcingProfile
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    grid: GridSpec | None = None
    transect: float | None = None
    trajectory: dict = field(default_factory=lambda: dict(DEFAULTS["trajectory"]))
    manifold: dict = field(default_factory=lambda: dict(DEFAULTS["manifold"]))
    critical_rate: dict = field(default_factory=lambda: dict(DEFAULTS["critical_rate"]))
    canards: dict = field(default_factory=lambda: dict(DEFAULTS["canards"]))
    out_dir: Path = Path(".")
    workers: int | None = None
    svg: bool = False
    deterministic: bool = True  # no random seeds anywhere in the pipeline

    def with_epsilon(self, epsilon: float) -> RunConfig:
        return replace(self, forcing=self.forcing.with_epsilon(epsilon))

    def with_delta(self, delta: float) -> RunConfig:
        return replace(self, system=self.system.with_delta(delta))


def _build(raw: dict, lines: dict, source: str) -> RunConfig:
    sys_raw = raw.get("system", {})
    delta = sys_raw.get("delta", 0.01)
    has_name = "name" in sys_raw
    has_coeffs = "f_coeffs" in sys_raw or "g_coeffs" in sys_raw
    try:
        if has_name and has_coeffs:
            raise SchemaError("give either system.name or system.f_coeffs/g_coeffs, not both")
        if has_coeffs:
            if not ("f_coeffs" in sys_raw and "g_coeffs" in sys_raw):
                raise SchemaError("system.f_coeffs and system.g_coeffs must be given together")
            system = SystemDefinition(Polynomial.from_terms(sys_raw["f_coeffs"]),
                                      Polynomial.from_terms(sys_raw["g_coeffs"]), delta)
        else:
            system = builtin_system(sys_raw.get("name", "paper-example"), delta)
    except SchemaError as exc:
        raise ConfigError(str(exc), lines.get(("system",)), source) from None

    f_raw = raw.get("forcing", {})
    try:
        forcing = ForcingProfile(f_raw.get("kind", "logistic-tanh"), f_raw.get("lambda_max", 2.5),
                                 f_raw.get("epsilon", 0.2), f_raw.get("tau_min"), f_raw.get("tau_max"),
                                 f_raw.get("ramp_start"))
    except SchemaError as exc:
        raise ConfigError(str(exc), lines.get(("forcing",)), source) from None

    try:
        integ = IntegratorSettings(**raw.get("integrator", {}))
    except SchemaError as exc:
        raise ConfigError(str(exc), lines.get(("integrator",)), source) from None

    grid = None
    if "grid" in raw:
        g = {"side": "sa", **raw["grid"]}
        missing = {"x_lo", "x_hi", "n_x", "lam_lo", "lam_hi", "n_lam"} - set(g)
        if missing:
            raise ConfigError(f"grid is missing {', '.join(sorted(missing))}", lines.get(("grid",)), source)
        try:
            grid = GridSpec(**g)
        except SchemaError as exc:
            raise ConfigError(str(exc), lines.get(("grid",)), source) from None

    sections = {k: {**DEFAULTS[k], **raw.get(k, {})} for k in DEFAULTS}
    out = sections.pop("output")
    return RunConfig(system, forcing, integ, grid, raw.get("transect"), sections["trajectory"],
                     sections["manifold"], sections["critical_rate"], sections["canards"],
                     Path(out["dir"]), out["workers"], out["svg"])


def load_text(text: str, source: str = "<config>") -> RunConfig:
    data, lines = parse_text(text, source)
    return _build(_validate(data, lines, source), lines, source)


def load_config(path: str | Path | None) -> RunConfig:
    """Config from a YAML or JSON file; ``None`` gives the built-in defaults."""
    if path is None:
        return load_text("")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from None
    return load_text(text, str(p))
