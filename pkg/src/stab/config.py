"""Run configuration: JSON schema, validation and the built-in examples."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .flow import IntegratorOptions
from .symexpr import ParseError, VectorFieldExpr, parse
from .synth import CONTROL_PATHS, Guards, ProblemSpec
from .verify import CHECK_NAMES

_point = {"type": "array", "items": {"type": "number"}, "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "stab run configuration",
    "type": "object",
    "required": ["problem"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "control_path": {"enum": list(CONTROL_PATHS)},
        "problem": {
            "type": "object",
            "required": ["variables", "field", "constraints", "lambda"],
            "additionalProperties": False,
            "properties": {
                "variables": {"type": "array", "items": {"type": "string"}, "minItems": 1, "maxItems": 16},
                "field": {"type": "array", "items": {"type": "string"}},
                "constraints": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["expr", "target"],
                        "additionalProperties": False,
                        "properties": {"expr": {"type": "string"}, "target": {"type": "number"}},
                    },
                },
                "lambda": {"type": "number"},
                "guards": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"r_max": {"type": "number"}, "rank_tol": {"type": "number"}},
                },
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["rk45", "rk4"]},
                "dt": {"type": "number"},
                "rel_tol": {"type": "number"},
                "abs_tol": {"type": "number"},
                "t_end": {"type": "number"},
                "max_steps": {"type": "integer"},
                "r_max": {"type": "number"},
                "f_floor": {"type": "number"},
                "max_step": {"type": "number"},
            },
        },
        "initial_states": {"type": "array", "items": _point},
        "checks": {"type": "array", "items": {"enum": list(CHECK_NAMES)}, "uniqueItems": True},
        "convergence_t_end": {"type": "number"},
        "sampling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "box": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                    "minItems": 2, "maxItems": 2}},
                "surface_seeds": {"type": "integer", "minimum": 1},
                "lie_points": {"type": "integer", "minimum": 1},
            },
        },
        "isolated_points": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["point", "radius"],
                "additionalProperties": False,
                "properties": {"point": _point, "radius": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "synth_grid": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}, "uniqueItems": True},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``pointer`` is a JSON pointer into the document."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer or "/"
        self.message = message
        super().__init__(f"{self.pointer}: {message}")


@dataclass
class IsolatedPoint:
    point: list[float]
    radius: float


@dataclass
class RunConfig:
    spec: ProblemSpec
    raw: dict
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)
    initial_states: list[list[float]] = field(default_factory=list)
    checks: list[str] = field(default_factory=list)
    seed: int = 0
    control_path: str = "hodge"
    box: list[list[float]] | None = None
    surface_seeds: int = 50
    lie_points: int = 1000
    isolated_points: list[IsolatedPoint] = field(default_factory=list)
    synth_grid: list[list[float]] | None = None
    convergence_t_end: float | None = None
    out_dir: str = "out"
    formats: tuple[str, ...] = ("csv", "json")
    name: str = "run"

    @property
    def wants_simulation(self) -> bool:
        return bool(self.initial_states)

    def sampling_box(self) -> list[list[float]]:
        return self.box or [[-2.0, 2.0]] * self.spec.n


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate(doc: dict) -> RunConfig:
    """Turn a parsed JSON document into a :class:`RunConfig` or raise :class:`ConfigError`."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise ConfigError(_pointer(e.absolute_path), e.message)

    prob = doc["problem"]
    names = prob["variables"]
    n = len(names)
    if len(set(names)) != n:
        raise ConfigError("/problem/variables", "variable names must be unique")
    if len(prob["field"]) != n:
        raise ConfigError("/problem/field", f"expected {n} components, got {len(prob['field'])}")
    comps = []
    for i, src in enumerate(prob["field"]):
        comps.append(_parse_at(src, names, f"/problem/field/{i}"))
    cons = prob["constraints"]
    if not 1 <= len(cons) <= n:
        raise ConfigError("/problem/constraints", f"need 1 <= p <= n constraints (n={n}), got p={len(cons)}")
    D = [_parse_at(c["expr"], names, f"/problem/constraints/{i}/expr") for i, c in enumerate(cons)]
    lam = prob["lambda"]
    if not lam > 0:
        raise ConfigError("/problem/lambda", "lambda must be > 0")
    guards = Guards(**prob.get("guards", {}))
    if not guards.r_max > 0:
        raise ConfigError("/problem/guards/r_max", "r_max must be > 0")
    if not 0 < guards.rank_tol < 1:
        raise ConfigError("/problem/guards/rank_tol", "rank_tol must be in (0, 1)")
    spec = ProblemSpec(VectorFieldExpr(tuple(names), tuple(comps)), tuple(D),
                       tuple(c["target"] for c in cons), lam, guards)

    integ = dict(doc.get("integrator", {}))
    integ.setdefault("r_max", guards.r_max)
    try:
        opts = IntegratorOptions(**integ)
    except ValueError as exc:
        raise ConfigError("/integrator", str(exc)) from None

    states = doc.get("initial_states", [])
    for i, s in enumerate(states):
        if len(s) != n:
            raise ConfigError(f"/initial_states/{i}", f"expected {n} coordinates, got {len(s)}")
    samp = doc.get("sampling", {})
    box = samp.get("box")
    if box is not None:
        if len(box) != n:
            raise ConfigError("/sampling/box", f"expected {n} intervals, got {len(box)}")
        for i, (lo, hi) in enumerate(box):
            if not lo < hi:
                raise ConfigError(f"/sampling/box/{i}", "interval must have lo < hi")
    iso = []
    for i, item in enumerate(doc.get("isolated_points", [])):
        if len(item["point"]) != n:
            raise ConfigError(f"/isolated_points/{i}/point", f"expected {n} coordinates")
        iso.append(IsolatedPoint(list(item["point"]), item["radius"]))
    grid = doc.get("synth_grid")
    if grid is not None:
        if len(grid) != n:
            raise ConfigError("/synth_grid", f"expected {n} ranges, got {len(grid)}")
        for i, (lo, hi, num) in enumerate(grid):
            if num < 1 or num != int(num) or hi < lo:
                raise ConfigError(f"/synth_grid/{i}", "range must be [lo, hi, count] with lo <= hi, count >= 1")
    checks = list(doc.get("checks", []))
    if "isolated_point_stability" in checks and not iso:
        raise ConfigError("/isolated_points", "isolated_point_stability requested but no points given")
    if not (states or checks or grid is not None):
        raise ConfigError("/", "nothing to do: give initial_states, checks or synth_grid")
    ct = doc.get("convergence_t_end")
    if ct is not None and not ct > 0:
        raise ConfigError("/convergence_t_end", "must be > 0")
    out = doc.get("output", {})
    return RunConfig(
        spec=spec,
        raw=copy.deepcopy(doc),
        integrator=opts,
        initial_states=[list(map(float, s)) for s in states],
        checks=checks,
        seed=doc.get("seed", 0),
        control_path=doc.get("control_path", "hodge"),
        box=box,
        surface_seeds=samp.get("surface_seeds", 50),
        lie_points=samp.get("lie_points", 1000),
        isolated_points=iso,
        synth_grid=grid,
        convergence_t_end=ct,
        out_dir=out.get("dir", "out"),
        formats=tuple(out.get("formats", ["csv", "json"])),
        name=doc.get("name", "run"),
    )


def _parse_at(src, names, pointer):
    try:
        return parse(src, names)
    except ParseError as exc:
        raise ConfigError(pointer, str(exc)) from None
    except ValueError as exc:
        raise ConfigError(pointer, str(exc)) from None


def apply_overrides(doc: dict, *, lam=None, control_path=None, seed=None, t_end=None, out=None) -> dict:
    doc = copy.deepcopy(doc)
    if lam is not None:
        doc.setdefault("problem", {})["lambda"] = lam
    if control_path is not None:
        doc["control_path"] = control_path
    if seed is not None:
        doc["seed"] = seed
    if t_end is not None:
        doc.setdefault("integrator", {})["t_end"] = t_end
    if out is not None:
        doc.setdefault("output", {})["dir"] = out
    return doc


def load_document(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("/", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("/", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("/", "top level must be an object")
    return doc


def load_config(path, **overrides) -> RunConfig:
    return validate(apply_overrides(load_document(path), **overrides))


# -- built-in examples -------------------------------------------------------

_DRIFT = ["x*(x^2+y^2-1)", "x^2+y^2-1"]

_EXAMPLES = {
    "paper-i": {
        "constraints": [{"expr": "x", "target": 0}],
        "initial_states": [[1, 0], [0.5, 0], [-0.5, -0.5], [1.5, -1], [0, 2]],
        "checks": ["convergence", "decay_law", "invariance_X", "invariance_perturbed", "lie_identity"],
        "sampling": {"box": [[-2, 2], [-0.9, 0.9]], "surface_seeds": 20, "lie_points": 1000},
    },
    "paper-ii": {
        "constraints": [{"expr": "x^2+y^2", "target": 1}],
        "initial_states": [[0.5, 0.5], [1.5, -0.3], [-0.2, 0.1], [2, 2]],
        "checks": ["convergence", "decay_law", "invariance_X", "invariance_perturbed", "lie_identity"],
        "sampling": {"box": [[-2, 2], [-2, 2]], "surface_seeds": 20, "lie_points": 1000},
    },
    "paper-iii": {
        "constraints": [{"expr": "x", "target": 0}, {"expr": "x^2+y^2", "target": 1}],
        "initial_states": [[0.5, 0.5], [-0.5, 0.5], [0.5, -0.5], [-0.5, -0.5]],
        "checks": ["convergence", "decay_law", "invariance_X", "invariance_perturbed",
                   "isolated_point_stability", "lie_identity"],
        "sampling": {"box": [[-2, 2], [-2, 2]], "surface_seeds": 20, "lie_points": 1000},
        "isolated_points": [{"point": [0, 1], "radius": 0.5}, {"point": [0, -1], "radius": 0.5}],
    },
}

BUILTIN_NAMES = tuple(_EXAMPLES)


def builtin_document(name: str) -> dict:
    if name not in _EXAMPLES:
        raise KeyError(f"unknown example {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    ex = copy.deepcopy(_EXAMPLES[name])
    doc = {
        "name": name,
        "seed": 0,
        "control_path": "hodge",
        "problem": {
            "variables": ["x", "y"],
            "field": list(_DRIFT),
            "constraints": ex.pop("constraints"),
            "lambda": 1.0,
            "guards": {"r_max": 1e3, "rank_tol": 1e-12},
        },
        "integrator": {"method": "rk45", "rel_tol": 1e-10, "abs_tol": 1e-12, "t_end": 5.0},
        "convergence_t_end": 40.0,
        "synth_grid": [[-2, 2, 21], [-2, 2, 21]],
        "output": {"dir": f"out/{name}", "formats": ["csv", "json"]},
    }
    doc.update(ex)
    return doc


def builtin_example(name: str, **overrides) -> RunConfig:
    return validate(apply_overrides(builtin_document(name), **overrides))
