"""JSON configuration: schema, loading and conversion to model objects."""

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import jsonschema

from .hypotheses import DEFAULT_GRID_STEP, HypothesisPair
from .model import DefinitiveDesign
from .nsga2 import MooSettings
from .ocs import PilotModel
from .pilot import CONDITIONAL, CORRELATED, INDEPENDENT, MARGINAL


class ConfigError(ValueError):
    pass


_PROB = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "pilot feasibility design",
    "type": "object",
    "additionalProperties": False,
    "required": ["definitive", "pilot", "hypotheses"],
    "properties": {
        "definitive": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_t", "n_e", "mu"],
            "properties": {
                "n_t": {"type": "integer", "minimum": 2},
                "n_e": {"type": "integer", "minimum": 2},
                "mu": {"type": "number"},
                "sigma0": {"type": "number", "exclusiveMinimum": 0},
                "alpha_one_sided": {"type": "number", "exclusiveMinimum": 0,
                                    "exclusiveMaximum": 0.5},
            },
        },
        "pilot": {"type": "array", "minItems": 1,
                  "items": {"type": "integer", "minimum": 1}},
        "hypotheses": {
            "type": "object",
            "additionalProperties": False,
            "required": ["p0", "p1"],
            "properties": {
                "p0": {"oneOf": [_PROB, {"type": "array", "minItems": 1, "items": _PROB}]},
                "p1": _PROB,
            },
        },
        "sigma": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["fixed", "estimate"]},
                "value": {"type": "number", "exclusiveMinimum": 0},
                "floor": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "s_quantile": {"type": "number", "minimum": 0.9, "exclusiveMaximum": 1},
            },
        },
        "correlation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": [INDEPENDENT, CORRELATED]},
                "phi_or": {"type": "number", "exclusiveMinimum": 0},
                "adherence_estimator": {"enum": [MARGINAL, CONDITIONAL]},
            },
        },
        "moo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "population": {"type": "integer", "minimum": 8},
                "generations": {"type": "integer", "minimum": 0},
                "crossover_prob": {"type": "number", "minimum": 0, "maximum": 1},
                "crossover_eta": {"type": "number", "exclusiveMinimum": 0},
                "mutation_prob": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "mutation_eta": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0, "maximum": 18446744073709551615},
            },
        },
        "grid_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.1},
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "beta_target": _PROB,
                "p0_grid": {"type": "array", "minItems": 1, "items": _PROB},
            },
        },
        "scenarios": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_t": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 2}},
                "p0": {"type": "array", "minItems": 1, "items": _PROB},
                "n_p": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "replicates": {"type": "integer", "minimum": 1},
                "cases": {"type": "integer", "minimum": 1},
            },
        },
        "output": {"type": "string"},
    },
}


@dataclass(frozen=True)
class RunConfig:
    design: DefinitiveDesign
    pilot_sizes: tuple
    p0_values: tuple
    p1: float
    sigma_mode: str
    sigma_floor: Optional[float]
    s_quantile: float
    model: PilotModel
    moo: MooSettings
    grid_step: float
    beta_target: float
    p0_grid: tuple
    scenario_n_t: tuple
    scenario_p0: tuple
    scenario_n_p: tuple
    mc_replicates: int
    mc_cases: int
    output: str
    sha256: str = field(default="", compare=False)

    @property
    def p0(self):
        return self.p0_values[0]

    def hypotheses(self, p0=None, design=None):
        design = self.design if design is None else design
        floor = self.sigma_floor if self.sigma_mode == "estimate" else None
        return HypothesisPair.from_powers(design, self.p0 if p0 is None else p0, self.p1, floor)

    def with_seed(self, seed):
        return replace(self, moo=replace(self.moo, seed=seed))


def _build(raw, sha):
    d = raw["definitive"]
    sig = raw.get("sigma", {})
    sigma0 = d.get("sigma0", sig.get("value", 1.0))
    if "sigma0" in d and "value" in sig and d["sigma0"] != sig["value"]:
        raise ConfigError("definitive.sigma0 and sigma.value disagree")
    design = DefinitiveDesign(d["n_t"], d["n_e"], d["mu"], sigma0,
                              d.get("alpha_one_sided", 0.025))
    mode = sig.get("mode", "fixed")
    floor = sig.get("floor")
    if mode == "estimate" and floor is None:
        raise ConfigError("sigma.mode = 'estimate' needs sigma.floor")

    corr = raw.get("correlation", {})
    model = PilotModel(corr.get("mode", INDEPENDENT), corr.get("adherence_estimator", MARGINAL),
                       corr.get("phi_or", 1.0))
    if model.correlation_mode == INDEPENDENT and (model.phi_or != 1.0
                                                  or model.adherence_estimator != MARGINAL):
        raise ConfigError("independent mode needs phi_or = 1 and the marginal estimator")

    p0 = raw["hypotheses"]["p0"]
    p0_values = tuple(p0) if isinstance(p0, list) else (p0,)
    p1 = raw["hypotheses"]["p1"]
    if any(v >= p1 for v in p0_values):
        raise ConfigError("every p0 must be below p1")

    sweep = raw.get("sweep", {})
    scen = raw.get("scenarios", {})
    mc = raw.get("mc", {})
    cfg = RunConfig(
        design=design,
        pilot_sizes=tuple(raw["pilot"]),
        p0_values=p0_values,
        p1=p1,
        sigma_mode=mode,
        sigma_floor=floor,
        s_quantile=sig.get("s_quantile", 0.999),
        model=model,
        moo=MooSettings(**raw.get("moo", {})),
        grid_step=raw.get("grid_step", DEFAULT_GRID_STEP),
        beta_target=sweep.get("beta_target", 0.1),
        p0_grid=tuple(sweep.get("p0_grid", [round(0.5 + 0.01 * k, 2) for k in range(30)])),
        scenario_n_t=tuple(scen.get("n_t", [468, 514, 562])),
        scenario_p0=tuple(scen.get("p0", [0.6, 0.65, 0.7])),
        scenario_n_p=tuple(scen.get("n_p", [30, 50, 70])),
        mc_replicates=mc.get("replicates", 100_000),
        mc_cases=mc.get("cases", 10),
        output=raw.get("output", "out"),
        sha256=sha,
    )
    if any(v >= p1 for v in cfg.p0_grid + cfg.scenario_p0):
        raise ConfigError("sweep and scenario p0 values must be below p1")
    cfg.hypotheses()  # cross-field checks
    return cfg


def load_config(text):
    """Parse, validate and convert a JSON config document."""
    sha = hashlib.sha256(text.encode("utf-8")).hexdigest()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from exc
    try:
        return _build(raw, sha)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        return load_config(fh.read())
