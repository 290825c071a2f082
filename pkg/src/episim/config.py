"""Scenario configuration: one JSON document per experiment.

Sections: ``model`` (module toggles, plus mean-field fidelity), ``params``
(transition rates), ``stratification`` (attribute rules), ``contact_source``
(explicit graph, implicit bundle, or a synthetic generator spec),
``schedule`` (override windows) and ``run`` (iterations, seeding, solver
controls). The parsed scenario carries a content hash so every output
file can name the exact configuration that produced it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from episim.compartments import (
    AttributeTest,
    ConfigurationError,
    ModuleToggles,
    ParameterSet,
    StratificationRule,
)
from episim.engine import Scenario, ScheduleWindow
from episim.graphs import generate_graph, load_edge_list
from episim.meanfield import Fidelity, OdeVariant
from episim.population import (
    ActivityProfile,
    SyntheticConfig,
    generate_population,
    load_population,
)

TOGGLE_KEYS = ("testing", "lockdown", "death", "icu", "corpse",
               "reinfection", "vaccination", "tracing")

_FIDELITY_SPELLINGS = {
    "as-written": Fidelity.AS_WRITTEN,
    "as_written": Fidelity.AS_WRITTEN,
    "diagram": Fidelity.DIAGRAM,
    "diagram_consistent": Fidelity.DIAGRAM,
}

# toggle sets of the nested mean-field systems, in stacking order
_VARIANT_CHAIN = (
    (OdeVariant.UTR, frozenset()),
    (OdeVariant.UTR, frozenset({"testing"})),
    (OdeVariant.UTLR, frozenset({"testing", "lockdown"})),
    (OdeVariant.UTLDR, frozenset({"testing", "lockdown", "death"})),
    (OdeVariant.UTLDR_ICU,
     frozenset({"testing", "lockdown", "death", "icu"})),
    (OdeVariant.UTLDR_CORPSE,
     frozenset({"testing", "lockdown", "death", "icu", "corpse"})),
    (OdeVariant.UTLDR_IMMUNITY,
     frozenset({"testing", "lockdown", "death", "icu", "corpse",
                "reinfection"})),
    (OdeVariant.UTLDR_VACCINATION,
     frozenset({"testing", "lockdown", "death", "icu", "corpse",
                "reinfection", "vaccination"})),
)


@dataclass
class ScenarioConfig:
    """A parsed configuration plus the run controls that ride along."""

    scenario: Scenario
    seed: int
    method: str = "rk4"
    dt: float = 1.0
    fidelity: Fidelity = Fidelity.DIAGRAM
    variant: OdeVariant | None = None
    raw: dict | None = None


def variant_for_toggles(toggles: ModuleToggles) -> OdeVariant | None:
    """Mean-field system matching the enabled modules, if any.

    The deterministic systems nest in a fixed order; toggle combinations
    off that chain (tracing aside) have no mean-field counterpart.
    """
    enabled = frozenset(k for k in TOGGLE_KEYS
                        if k != "tracing" and getattr(toggles, k))
    for variant, chain in _VARIANT_CHAIN:
        if enabled == chain:
            return variant
    return None


def config_hash(raw: Mapping[str, Any]) -> str:
    digest = hashlib.sha256(
        json.dumps(raw, sort_keys=True, separators=(",", ":")).encode())
    return digest.hexdigest()[:16]


def parse_scenario(path: str | Path) -> ScenarioConfig:
    """Parse and validate one scenario document.

    Defaults: fidelity ``diagram_consistent``, method ``rk4``, ``dt = 1``.
    JSON syntax errors surface with line and column; semantic problems are
    collected through the model validator and reported together.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be an object")

    known = {"model", "params", "stratification", "contact_source",
             "schedule", "run"}
    stray = sorted(set(raw) - known)
    if stray:
        raise ConfigurationError(f"{path}: unknown sections {stray}")

    model = raw.get("model", {})
    toggles = _parse_toggles(model)
    fidelity = _parse_fidelity(model.get("fidelity", "diagram_consistent"))
    params = ParameterSet.from_dict(raw.get("params", {}))
    rules = tuple(_parse_rule(i, spec)
                  for i, spec in enumerate(raw.get("stratification", [])))
    schedule = tuple(_parse_window(i, spec)
                     for i, spec in enumerate(raw.get("schedule", [])))
    contact = _parse_contact_source(raw.get("contact_source"), path)

    run_section = raw.get("run", {})
    if not isinstance(run_section, dict):
        raise ConfigurationError("run: expected an object")
    iterations = _expect_int(run_section, "iterations", default=150)
    fraction = run_section.get("initial_infected_fraction", 0.0001)
    if not isinstance(fraction, (int, float)) or isinstance(fraction, bool):
        raise ConfigurationError(
            f"run.initial_infected_fraction: expected a number, "
            f"got {fraction!r}")
    seed = _expect_int(run_section, "seed", default=0)
    method = run_section.get("method", "rk4")
    if method not in ("euler", "rk4"):
        raise ConfigurationError(f"run.method: unknown method {method!r}")
    dt = run_section.get("dt", 1.0)
    if not isinstance(dt, (int, float)) or isinstance(dt, bool) or dt <= 0:
        raise ConfigurationError(f"run.dt: expected a positive number, got {dt!r}")

    scenario = Scenario(
        toggles=toggles, params=params, rules=rules, contact=contact,
        initial_infected_fraction=float(fraction), iterations=iterations,
        schedule=schedule, scenario_hash=config_hash(raw))
    errors = scenario.validate()
    if errors:
        raise ConfigurationError("; ".join(errors))

    if "variant" in model:
        try:
            variant = OdeVariant[model["variant"]]
        except KeyError:
            raise ConfigurationError(
                f"model.variant: unknown variant {model['variant']!r}; "
                f"expected one of {[v.name for v in OdeVariant]}") from None
    else:
        variant = variant_for_toggles(toggles)

    return ScenarioConfig(scenario=scenario, seed=seed, method=method,
                          dt=float(dt), fidelity=fidelity, variant=variant,
                          raw=raw)


def _expect_int(section: Mapping[str, Any], key: str, default: int) -> int:
    value = section.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigurationError(f"run.{key}: expected an integer, got {value!r}")
    return value


def _parse_toggles(model: Mapping[str, Any]) -> ModuleToggles:
    if not isinstance(model, dict):
        raise ConfigurationError("model: expected an object")
    stray = sorted(set(model) - set(TOGGLE_KEYS) - {"fidelity", "variant"})
    if stray:
        raise ConfigurationError(f"model: unknown keys {stray}")
    kwargs = {}
    for key in TOGGLE_KEYS:
        value = model.get(key, False)
        if not isinstance(value, bool):
            raise ConfigurationError(
                f"model.{key}: expected true or false, got {value!r}")
        kwargs[key] = value
    return ModuleToggles(**kwargs)


def _parse_fidelity(spelling: str) -> Fidelity:
    try:
        return _FIDELITY_SPELLINGS[spelling]
    except KeyError:
        raise ConfigurationError(
            f"model.fidelity: unknown fidelity {spelling!r}; expected one of "
            f"{sorted(_FIDELITY_SPELLINGS)}") from None


def _parse_rule(i: int, spec: Any) -> StratificationRule:
    where = f"stratification[{i}]"
    if not isinstance(spec, dict):
        raise ConfigurationError(f"{where}: expected an object")
    try:
        param = spec["param"]
        value = spec["value"]
    except KeyError as exc:
        raise ConfigurationError(f"{where}: missing key {exc}") from None
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigurationError(f"{where}.value: expected a number")
    tests = []
    for j, clause in enumerate(spec.get("when", [])):
        if not isinstance(clause, dict) or \
                not {"attr", "op", "value"} <= set(clause):
            raise ConfigurationError(
                f"{where}.when[{j}]: expected attr/op/value")
        tests.append(AttributeTest(clause["attr"], clause["op"],
                                   clause["value"]))
    priority = spec.get("priority", 0)
    if not isinstance(priority, int) or isinstance(priority, bool):
        raise ConfigurationError(f"{where}.priority: expected an integer")
    return StratificationRule(param, tuple(tests), float(value), priority)


def _parse_window(i: int, spec: Any) -> ScheduleWindow:
    where = f"schedule[{i}]"
    if not isinstance(spec, dict):
        raise ConfigurationError(f"{where}: expected an object")
    try:
        start, end = spec["start"], spec["end"]
    except KeyError as exc:
        raise ConfigurationError(f"{where}: missing key {exc}") from None
    if not isinstance(start, int) or not isinstance(end, int):
        raise ConfigurationError(f"{where}: start and end must be integers")
    overrides = spec.get("overrides", {})
    if not isinstance(overrides, dict):
        raise ConfigurationError(f"{where}.overrides: expected an object")
    return ScheduleWindow(start, end, overrides)


def _parse_contact_source(spec: Any, config_path: Path):
    if spec is None:
        return None
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigurationError("contact_source: expected an object with a "
                                 "'type' key")
    kind = spec["type"]
    base = config_path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    if kind == "generate":
        model = spec.get("model")
        n = spec.get("n")
        if model not in ("barabasi_albert", "erdos_renyi"):
            raise ConfigurationError(
                f"contact_source.model: expected barabasi_albert or "
                f"erdos_renyi, got {model!r}")
        if not isinstance(n, int) or n < 1:
            raise ConfigurationError("contact_source.n: expected a positive "
                                     "integer")
        return generate_graph(
            model, n, seed=spec.get("seed", 0), m=spec.get("m"),
            p_edge=spec.get("p_edge"),
            activation=spec.get("activation", 1.0))
    if kind == "edge_list":
        if "edges" not in spec:
            raise ConfigurationError("contact_source.edges: path required")
        return load_edge_list(
            resolve(spec["edges"]),
            resolve(spec["attributes"]) if spec.get("attributes") else None,
            activation=spec.get("activation", 1.0))
    if kind == "implicit":
        for key in ("population", "tessellation", "od"):
            if key not in spec:
                raise ConfigurationError(f"contact_source.{key}: required")
        profiles = [ActivityProfile(p["age_min"], p["age_max"], p["scores"])
                    for p in spec.get("activity_profiles", [])]
        return load_population(
            resolve(spec["population"]), resolve(spec["tessellation"]),
            {level: resolve(p) for level, p in spec["od"].items()},
            activity_profiles=profiles, od_level=spec.get("od_level"))
    if kind == "synthetic":
        agents = spec.get("agents")
        if not isinstance(agents, int) or agents < 1:
            raise ConfigurationError("contact_source.agents: expected a "
                                     "positive integer")
        knobs = spec.get("config", {})
        if not isinstance(knobs, dict):
            raise ConfigurationError("contact_source.config: expected an object")
        cfg = SyntheticConfig(**knobs) if knobs else None
        return generate_population(agents, seed=spec.get("seed", 0),
                                   config=cfg)
    raise ConfigurationError(f"contact_source.type: unknown type {kind!r}")
