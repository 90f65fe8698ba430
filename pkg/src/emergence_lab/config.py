"""JSON experiment configs: schema validation and construction of model objects."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema

from .coords import BodyConfig
from .errors import ConfigurationError
from .mdsim import DEFAULT_DT_FRACTION, ScenarioSpec
from .potentials import Gravity, Harmonic, HarmonicSpring, LennardJonesTruncated, Polynomial, Quartic


def schema() -> dict:
    text = resources.files("emergence_lab").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


def validate(config: dict) -> dict:
    """Raise ConfigurationError naming the offending path on any schema violation."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigurationError(f"config error at {where}: {err.message}")
    return config


def load_config(path) -> dict:
    path = Path(path)
    try:
        config = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return validate(config)


def build_body(config: dict) -> BodyConfig:
    return BodyConfig(**config["body"])


def build_pair(section: dict):
    kw = {k: v for k, v in section.items() if k != "kind"}
    if section["kind"] == "harmonic_spring":
        return HarmonicSpring(**kw)
    return LennardJonesTruncated(**kw)


def build_external(section: dict, mass: float = 1.0):
    kw = {k: v for k, v in section.items() if k != "kind"}
    cls = {"gravity": Gravity, "harmonic": Harmonic, "quartic": Quartic, "polynomial": Polynomial}[section["kind"]]
    return cls(mass=mass, **kw)


def build_scenario(config: dict, body: BodyConfig) -> ScenarioSpec:
    default_kind = {"harmonic": "harmonic_trap", "quartic": "quartic_trap", "gravity": "gravity_floor_drop"}
    section = dict(config.get("scenario") or {})
    if "kind" not in section:
        kind = default_kind.get(config["external"]["kind"])
        if kind is None:
            raise ConfigurationError("a scenario section is required for a polynomial external potential")
        section["kind"] = kind
    zero = [0.0] * body.dim
    offset = tuple(section.get("cm_offset", zero))
    velocity = tuple(section.get("cm_velocity", zero))
    if len(offset) != body.dim or len(velocity) != body.dim:
        raise ConfigurationError(f"cm_offset and cm_velocity need {body.dim} components")
    return ScenarioSpec(section["kind"], offset, velocity, section.get("temperature", 0.0), section.get("seed", 0))


def integrator_settings(config: dict) -> dict:
    section = config.get("integrator") or {}
    return {
        "dt": section.get("dt"),
        "dt_fraction": section.get("dt_fraction", DEFAULT_DT_FRACTION),
        "n_steps": section.get("n_steps", 10_000),
        "record_stride": section.get("record_stride", 10),
    }


def apply_seed(config: dict, seed) -> dict:
    """Copy of ``config`` with the scenario seed and ensemble base seed replaced."""
    config = json.loads(json.dumps(config))
    if seed is None:
        return config
    config.setdefault("scenario", {})["seed"] = int(seed)
    if "ensemble" in config:
        config["ensemble"]["base_seed"] = int(seed)
    if "coords" in config:
        config["coords"]["seed"] = int(seed)
    return validate(config)
