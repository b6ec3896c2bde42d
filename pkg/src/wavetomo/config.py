"""Experiment configuration: schema, validation, and object assembly.

One JSON file describes one experiment.  Everything numeric lives here
rather than in command-line flags, so a config plus a seed pins the run
byte for byte.  The schema is validated before any compute; kind-specific
requirements (a sigma list for the inequality sweep, a truth medium for
twin inversions) are checked right after with errors naming the field.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import jsonschema

from .forward import make_tau_grid
from .geometry import Direction, SpaceTimeGrid, make_grid
from .inverse import BasisBump, InversionConfig
from .media import CoefficientSet


class ConfigError(ValueError):
    pass


KINDS = (
    "forward",
    "stability-q",
    "stability-ab",
    "stability-abc",
    "carleman",
    "invert-q",
    "invert-ab",
    "invert-abc",
    "convergence",
)

_BUMP = {
    "type": "object",
    "required": ["field", "center_x", "center_t", "radius_x", "radius_t", "amplitude"],
    "properties": {
        "field": {"type": "string", "pattern": "^(a|b[12]|c)$"},
        "center_x": {
            "type": "array",
            "items": {"type": "number"},
            "minItems": 1,
            "maxItems": 2,
        },
        "center_t": {"type": "number"},
        "radius_x": {"type": "number", "exclusiveMinimum": 0},
        "radius_t": {"type": "number", "exclusiveMinimum": 0},
        "amplitude": {"type": "number"},
    },
    "additionalProperties": False,
}

_MEDIUM = {
    "type": "object",
    "properties": {"bumps": {"type": "array", "items": _BUMP}},
    "additionalProperties": False,
}

_BASIS_BUMP = {
    "type": "object",
    "required": ["field", "center_x", "center_t", "radius_x", "radius_t"],
    "properties": {
        "field": {"type": "string", "pattern": "^(q|a|b[12])$"},
        "center_x": {
            "type": "array",
            "items": {"type": "number"},
            "minItems": 1,
            "maxItems": 2,
        },
        "center_t": {"type": "number"},
        "radius_x": {"type": "number", "exclusiveMinimum": 0},
        "radius_t": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["kind", "grid"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "grid": {
            "type": "object",
            "required": ["n", "T", "h"],
            "properties": {
                "n": {"enum": [1, 2]},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "margin": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "medium": _MEDIUM,
        "directions": {
            "type": "array",
            "items": {"type": "string", "pattern": "^[+-]e[12]$"},
            "minItems": 1,
        },
        "tau": {
            "type": "object",
            "properties": {
                "dtau": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "lo": {"type": "number"},
                "hi": {"type": ["number", "null"]},
            },
            "additionalProperties": False,
        },
        "sigmas": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": 1,
        },
        "carleman": {
            "type": "object",
            "required": ["test_function"],
            "properties": {
                "omega": {"type": "string", "pattern": "^[+-]e[12]$"},
                "tau": {"type": "number"},
                "test_function": {
                    "type": "object",
                    "required": ["center_x", "center_t", "radius_x", "radius_t"],
                    "properties": {
                        "center_x": {
                            "type": "array",
                            "items": {"type": "number"},
                            "minItems": 1,
                            "maxItems": 2,
                        },
                        "center_t": {"type": "number"},
                        "radius_x": {"type": "number", "exclusiveMinimum": 0},
                        "radius_t": {"type": "number", "exclusiveMinimum": 0},
                        "amplitude": {"type": "number"},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "perturbation": {
            "type": "object",
            "required": ["fields", "amplitudes", "draws"],
            "properties": {
                "fields": {
                    "type": "array",
                    "items": {"type": "string", "pattern": "^(a|b[12]|c)$"},
                    "minItems": 1,
                },
                "amplitudes": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 1,
                },
                "draws": {"type": "integer", "minimum": 1},
                "radius_x": {"type": "number", "exclusiveMinimum": 0},
                "radius_t": {"type": "number", "exclusiveMinimum": 0},
                "center_box": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "inversion": {
            "type": "object",
            "required": ["basis"],
            "properties": {
                "basis": {"type": "array", "items": _BASIS_BUMP, "minItems": 1},
                "lambda_reg": {"type": ["number", "null"]},
                "max_iters": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "secant_step": {"type": "number", "exclusiveMinimum": 0},
                "gradient_mode": {"enum": ["secant", "centered"]},
                "use_psi": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "truth": _MEDIUM,
        "seed": {"type": "integer", "minimum": 0},
        "method": {"enum": ["goursat", "leapfrog", None]},
        "resolutions": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": 3,
        },
        "output": {"type": "string"},
    },
    "additionalProperties": False,
}

_KIND_NEEDS = {
    "carleman": ("sigmas", "carleman"),
    "stability-q": ("perturbation",),
    "stability-ab": ("perturbation",),
    "stability-abc": ("perturbation",),
    "invert-q": ("truth", "inversion"),
    "invert-ab": ("truth", "inversion"),
    "invert-abc": ("truth", "inversion"),
    "convergence": ("resolutions",),
}


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as e:
        where = e.json_path if e.json_path != "$" else "config"
        raise ConfigError(f"{where}: {e.message}") from None
    kind = cfg["kind"]
    for field in _KIND_NEEDS.get(kind, ()):
        if field not in cfg:
            raise ConfigError(f"kind {kind!r} requires the {field!r} section")
    pert = cfg.get("perturbation")
    if pert is not None:
        allowed = {"stability-q": {"c"}}.get(kind)
        if allowed is not None and not set(pert["fields"]) <= allowed:
            raise ConfigError(
                f"perturbation.fields for {kind} must be within {sorted(allowed)} "
                "(the estimate needs the drift pair shared)"
            )


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    validate_config(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


# ---------------------------------------------------------------------------
# object assembly


def build_grid(cfg: dict) -> SpaceTimeGrid:
    g = cfg["grid"]
    return make_grid(
        n=g["n"], T=g["T"], h=g["h"], margin=g.get("margin", g["T"] + 2.0)
    )


def build_medium(section: dict | None, n: int, T: float) -> CoefficientSet:
    bumps = (section or {}).get("bumps", [])
    if not bumps:
        return CoefficientSet.zero(n)
    return CoefficientSet.from_bumps(n, bumps, T=T)


def build_directions(cfg: dict, default_labels) -> list[Direction]:
    labels = cfg.get("directions", list(default_labels))
    return [Direction.from_label(s) for s in labels]


def build_tau(cfg: dict, grid: SpaceTimeGrid):
    t = cfg.get("tau", {})
    return make_tau_grid(
        grid, dtau=t.get("dtau"), lo=t.get("lo", -1.0), hi=t.get("hi")
    )


def build_inversion(cfg: dict, problem: str, threads: int) -> InversionConfig:
    inv = dict(cfg["inversion"])
    basis = [BasisBump.from_json(b) for b in inv.pop("basis")]
    return InversionConfig(
        problem=problem,
        basis=basis,
        threads=threads,
        method=cfg.get("method"),
        **inv,
    )
