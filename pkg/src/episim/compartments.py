"""Disease-state taxonomy, transition rules and stratified parameters.

This module is the shared vocabulary of the toolkit: the thirteen
compartment labels and their macro classes, the optional intervention
modules that can be switched on and off, the full set of transition
parameters, and attribute-based stratification rules that let a single
parameter take different values for different population groups
(e.g. a lower infection probability for young agents, or a zero
lockdown-adherence for health workers).

Everything here is immutable after validation and safe to share across
concurrent simulation runs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Invalid model configuration: bad ranges, rules, toggles or files."""


class Compartment(str, enum.Enum):
    """Disease states an agent can occupy. Exactly one at a time."""

    S = "S"        # susceptible
    E = "E"        # exposed, not yet infectious
    I = "I"        # infectious, undetected
    E_T = "E_T"    # exposed, tested positive (quarantined)
    I_T = "I_T"    # infectious, tested positive (quarantined / mild hospital)
    H_T = "H_T"    # severe case holding an intensive-care bed
    F = "F"        # severe case that could not get a bed
    S_L = "S_L"    # susceptible, adhering to lockdown
    E_L = "E_L"    # exposed, adhering to lockdown
    I_L = "I_L"    # infectious, adhering to lockdown
    R = "R"        # recovered
    D = "D"        # dead
    V = "V"        # successfully vaccinated

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


class MetaClass(enum.Enum):
    UNDETECTED = "undetected"
    TESTED = "tested"
    LOCKDOWN = "lockdown"
    RECOVERED = "recovered"
    DEAD = "dead"
    VACCINATED = "vaccinated"


C = Compartment

#: Fixed column order used by every trend output.
CANONICAL_ORDER: tuple[Compartment, ...] = (
    C.S, C.E, C.I, C.E_T, C.I_T, C.H_T, C.F, C.S_L, C.E_L, C.I_L, C.R, C.D, C.V,
)

META_CLASS: dict[Compartment, MetaClass] = {
    C.S: MetaClass.UNDETECTED,
    C.E: MetaClass.UNDETECTED,
    C.I: MetaClass.UNDETECTED,
    C.E_T: MetaClass.TESTED,
    C.I_T: MetaClass.TESTED,
    C.H_T: MetaClass.TESTED,
    C.F: MetaClass.TESTED,
    C.S_L: MetaClass.LOCKDOWN,
    C.E_L: MetaClass.LOCKDOWN,
    C.I_L: MetaClass.LOCKDOWN,
    C.R: MetaClass.RECOVERED,
    C.D: MetaClass.DEAD,
    C.V: MetaClass.VACCINATED,
}

#: Compartments whose members emit no contact events, ever.
ISOLATED: frozenset[Compartment] = frozenset({C.E_T, C.I_T, C.H_T, C.F})


@dataclass(frozen=True)
class ModuleToggles:
    """Which optional intervention modules are enabled.

    ``icu`` and ``tracing`` both build on testing: the severe/bed pipeline
    starts from tested infectious agents, and tracing is triggered by
    positive tests.
    """

    testing: bool = False
    lockdown: bool = False
    death: bool = False
    icu: bool = False
    corpse: bool = False
    reinfection: bool = False
    vaccination: bool = False
    tracing: bool = False

    def violations(self) -> list[str]:
        errs = []
        if self.icu and not self.testing:
            errs.append("icu requires testing")
        if self.tracing and not self.testing:
            errs.append("tracing requires testing")
        return errs

    def active_compartments(self) -> tuple[Compartment, ...]:
        """Compartments reachable under these toggles, in canonical order."""
        active = {C.S, C.E, C.I, C.R}
        if self.testing:
            active |= {C.E_T, C.I_T}
        if self.icu:
            active |= {C.H_T, C.F}
        if self.lockdown:
            active |= {C.S_L, C.E_L, C.I_L}
        if self.death:
            active.add(C.D)
        if self.vaccination:
            active.add(C.V)
        return tuple(c for c in CANONICAL_ORDER if c in active)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterSet:
    """All transition-controlling rates, one value per parameter.

    Per-group values are layered on top through stratification rules; the
    values held here act as the defaults. Unset companion rates cascade:
    ``gamma_t`` falls back to ``gamma``, ``omega_t`` to ``omega`` and
    ``omega_f`` to ``omega_t``.

    Rates are per-iteration probabilities in [0, 1] except ``icu_beds``
    (a bed count in agent mode, a raw coefficient in the literal
    mean-field mode) and ``tracing_window`` (an iteration count).
    """

    beta: float = 0.0            # infection probability per contact event
    sigma: float = 0.0           # incubation exit (1/sigma = exposition period)
    gamma: float = 0.0           # recovery, undetected
    gamma_t: float | None = None  # recovery, tested/hospitalized
    theta_e: float = 0.0         # testing probability, exposed
    theta_i: float = 0.0         # testing probability, infectious
    kappa_e: float = 0.0         # testing success rate, exposed
    kappa_i: float = 0.0         # testing success rate, infectious
    tau: float = 0.0             # lockdown adherence
    mu: float = 0.0              # lockdown escape
    omega: float = 0.0           # lethality, undetected
    omega_t: float | None = None  # lethality, tested/hospitalized
    omega_f: float | None = None  # lethality, severe cases without a bed
    iota: float = 0.0            # probability of a severe case
    icu_beds: float = 0.0        # bed capacity (agent) / coefficient (literal ODE)
    corpse_infection: float = 0.0  # infection probability from corpse contact
    reinfection: float = 0.0     # immunity loss, R back to S
    vaccination: float = 0.0     # vaccination probability per iteration
    vaccine_loss: float = 0.0    # vaccination nullification probability
    tracing_window: int = 0      # how many past iterations of contacts to search
    long_range: float = 0.0      # chance a contact slot is rewired anywhere

    def __post_init__(self):
        if self.gamma_t is None:
            object.__setattr__(self, "gamma_t", self.gamma)
        if self.omega_t is None:
            object.__setattr__(self, "omega_t", self.omega)
        if self.omega_f is None:
            object.__setattr__(self, "omega_f", self.omega_t)

    def violations(self) -> list[str]:
        errs = []
        for name in PROBABILITY_PARAMS:
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and np.isfinite(val)):
                errs.append(f"{name} is not a finite number")
            elif not 0.0 <= val <= 1.0:
                errs.append(f"{name} out of range [0, 1]: {val}")
        if not (np.isfinite(self.icu_beds) and self.icu_beds >= 0):
            errs.append(f"icu_beds must be >= 0: {self.icu_beds}")
        if not (isinstance(self.tracing_window, (int, np.integer))
                and self.tracing_window >= 0):
            errs.append(f"tracing_window must be a non-negative integer: "
                        f"{self.tracing_window}")
        return errs

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ParameterSet":
        clean = {resolve_parameter_name(k): v for k, v in overrides.items()}
        return replace(self, **clean)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ParameterSet":
        kwargs = {}
        for key, val in raw.items():
            name = resolve_parameter_name(key)
            if name == "tracing_window":
                if not isinstance(val, (int, np.integer)) or isinstance(val, bool):
                    raise ConfigurationError(
                        f"params.{key}: expected an integer, got {val!r}")
            elif not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigurationError(
                    f"params.{key}: expected a number, got {val!r}")
            kwargs[name] = val
        return cls(**kwargs)


PARAM_NAMES: tuple[str, ...] = tuple(f.name for f in fields(ParameterSet))

PROBABILITY_PARAMS: tuple[str, ...] = (
    "beta", "sigma", "gamma", "gamma_t", "theta_e", "theta_i", "kappa_e",
    "kappa_i", "tau", "mu", "omega", "omega_t", "omega_f", "iota",
    "corpse_infection", "reinfection", "vaccination", "vaccine_loss",
    "long_range",
)

#: Accepted shorthand spellings in config files and rule definitions.
PARAM_ALIASES: dict[str, str] = {
    "b": "icu_beds",
    "z": "corpse_infection",
    "s": "reinfection",
    "v": "vaccination",
    "f": "vaccine_loss",
    "p": "long_range",
    "t_tracing": "tracing_window",
    "T_tracing": "tracing_window",
    "theta_E": "theta_e",
    "theta_I": "theta_i",
    "kappa_E": "kappa_e",
    "kappa_I": "kappa_i",
    "gamma_T": "gamma_t",
    "omega_T": "omega_t",
    "omega_F": "omega_f",
}


def resolve_parameter_name(name: str) -> str:
    """Map a parameter spelling (or alias) to its canonical field name."""
    if name in PARAM_NAMES:
        return name
    if name in PARAM_ALIASES:
        return PARAM_ALIASES[name]
    raise ConfigurationError(f"unknown parameter name: {name!r}")


# ---------------------------------------------------------------------------
# Stratification
# ---------------------------------------------------------------------------

_COMPARATORS = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "in": lambda a, b: a in b,
}


@dataclass(frozen=True)
class AttributeTest:
    """One clause of a rule predicate: ``attribute <op> value``."""

    attribute: str
    op: str
    value: Any

    def __post_init__(self):
        if self.op not in _COMPARATORS:
            raise ConfigurationError(
                f"unknown comparator {self.op!r}; expected one of "
                f"{sorted(_COMPARATORS)}")

    def matches(self, attrs: Mapping[str, Any]) -> bool:
        if self.attribute not in attrs:
            raise ConfigurationError(
                f"rule references missing attribute {self.attribute!r}")
        try:
            return bool(_COMPARATORS[self.op](attrs[self.attribute], self.value))
        except TypeError as exc:
            raise ConfigurationError(
                f"cannot compare attribute {self.attribute!r} with "
                f"{self.value!r}: {exc}") from exc


@dataclass(frozen=True)
class StratificationRule:
    """Conditional value for one parameter.

    A rule with an empty predicate is the default branch for its
    parameter; every stratified parameter needs exactly one. Among
    matching rules the highest priority wins, ties broken by declaration
    order (earlier declared wins).
    """

    parameter: str
    predicate: tuple[AttributeTest, ...]
    value: float
    priority: int = 0

    @property
    def is_default(self) -> bool:
        return len(self.predicate) == 0


def _ordered_rules(name: str,
                   rules: Sequence[StratificationRule]) -> list[StratificationRule]:
    indexed = [(r, i) for i, r in enumerate(rules) if r.parameter == name]
    indexed.sort(key=lambda pair: (-pair[0].priority, pair[1]))
    return [r for r, _ in indexed]


def resolve_param(name: str,
                  attrs: Mapping[str, Any],
                  rules: Sequence[StratificationRule]) -> float:
    """Resolve one parameter value for an agent described by ``attrs``.

    Walks the rules for ``name`` in precedence order and returns the value
    of the first match; the default rule matches everything. Pure function
    of its inputs.

    Raises:
        ConfigurationError: unknown parameter name, no default rule, or a
            candidate rule referencing an attribute the agent lacks.
    """
    canonical = resolve_parameter_name(name)
    candidates = _ordered_rules(canonical, rules)
    if not any(r.is_default for r in candidates):
        raise ConfigurationError(
            f"no default rule for stratified parameter {canonical!r}")
    for rule in candidates:
        if all(test.matches(attrs) for test in rule.predicate):
            return rule.value
    raise AssertionError("unreachable: default rule always matches")


def _vector_test(test: AttributeTest,
                 columns: Mapping[str, np.ndarray],
                 n: int) -> np.ndarray:
    if test.attribute not in columns:
        raise ConfigurationError(
            f"rule references missing attribute {test.attribute!r}")
    col = columns[test.attribute]
    if test.op == "in":
        return np.isin(col, list(test.value))
    return _COMPARATORS[test.op](col, test.value)


def resolve_param_array(name: str,
                        columns: Mapping[str, np.ndarray],
                        rules: Sequence[StratificationRule],
                        n: int,
                        base_value: float | None = None) -> np.ndarray:
    """Vectorized :func:`resolve_param` over a whole population.

    ``columns`` maps attribute names to length-``n`` arrays. When no rule
    mentions ``name``, ``base_value`` (the plain parameter) is broadcast.
    Agrees element-wise with the scalar resolver.
    """
    canonical = resolve_parameter_name(name)
    ordered = _ordered_rules(canonical, rules)
    if not ordered:
        if base_value is None:
            raise ConfigurationError(
                f"no rules and no base value for parameter {canonical!r}")
        return np.full(n, float(base_value))
    if not any(r.is_default for r in ordered):
        raise ConfigurationError(
            f"no default rule for stratified parameter {canonical!r}")
    out = np.empty(n, dtype=np.float64)
    assigned = np.zeros(n, dtype=bool)
    for rule in ordered:  # highest precedence first; first match sticks
        if not rule.predicate:
            mask = ~assigned
        else:
            mask = np.ones(n, dtype=bool)
            for test in rule.predicate:
                mask &= _vector_test(test, columns, n)
            mask &= ~assigned
        out[mask] = rule.value
        assigned |= mask
    return out


# ---------------------------------------------------------------------------
# Transition diagram
# ---------------------------------------------------------------------------

def allowed_transitions(source: Compartment,
                        toggles: ModuleToggles) -> list[tuple[Compartment, str]]:
    """Outgoing edges of the composed transition diagram for ``source``.

    Returns ``(target, governing parameter)`` pairs; edges belonging to
    disabled modules are absent, and a compartment that no enabled module
    reaches has no outgoing edges. Total function: any label is accepted.
    """
    t = toggles
    out: list[tuple[Compartment, str]] = []
    if source is C.S:
        out.append((C.E, "beta"))
        if t.corpse:
            out.append((C.I, "corpse_infection"))
        if t.lockdown:
            out.append((C.S_L, "tau"))
        if t.vaccination:
            out.append((C.V, "vaccination"))
    elif source is C.E:
        out.append((C.I, "sigma"))
        if t.testing:
            out.append((C.E_T, "theta_e*kappa_e"))
        if t.lockdown:
            out.append((C.E_L, "tau"))
    elif source is C.I:
        out.append((C.R, "gamma"))
        if t.testing:
            out.append((C.I_T, "theta_i*kappa_i"))
        if t.death:
            out.append((C.D, "omega"))
        if t.lockdown:
            out.append((C.I_L, "tau"))
    elif source is C.E_T:
        if t.testing:
            out.append((C.I_T, "sigma"))
    elif source is C.I_T:
        if t.testing:
            out.append((C.R, "gamma_t"))
            if t.death:
                out.append((C.D, "omega_t"))
            if t.icu:
                out.append((C.H_T, "iota"))
                out.append((C.F, "iota"))
    elif source is C.H_T:
        if t.icu:
            out.append((C.R, "gamma_t"))
            if t.death:
                out.append((C.D, "omega_t"))
    elif source is C.F:
        if t.icu:
            out.append((C.R, "gamma_t"))
            if t.death:
                out.append((C.D, "omega_f"))
    elif source is C.S_L:
        if t.lockdown:
            out.append((C.E_L, "beta"))
            out.append((C.S, "mu"))
            if t.vaccination:
                out.append((C.V, "vaccination"))
    elif source is C.E_L:
        if t.lockdown:
            out.append((C.I_L, "sigma"))
            out.append((C.E, "mu"))
            if t.testing:
                out.append((C.E_T, "theta_e*kappa_e"))
    elif source is C.I_L:
        if t.lockdown:
            out.append((C.R, "gamma"))
            out.append((C.I, "mu"))
            if t.testing:
                out.append((C.I_T, "theta_i*kappa_i"))
            if t.death:
                out.append((C.D, "omega"))
    elif source is C.R:
        if t.reinfection:
            out.append((C.S, "reinfection"))
    elif source is C.V:
        if t.vaccination:
            out.append((C.S, "vaccine_loss"))
    # D is absorbing: corpse infectivity is an S -> I edge, not an edge of D.
    return out


def transition_edges(toggles: ModuleToggles) -> set[tuple[Compartment, Compartment]]:
    """All (source, target) pairs legal under ``toggles``."""
    edges = set()
    for src in CANONICAL_ORDER:
        for dst, _ in allowed_transitions(src, toggles):
            edges.add((src, dst))
    return edges


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_model(toggles: ModuleToggles,
                   params: ParameterSet,
                   rules: Sequence[StratificationRule] = ()) -> list[str]:
    """Collect every configuration violation; an empty list means valid.

    Checks parameter ranges, toggle implications, and that each stratified
    parameter carries exactly one default rule whose values respect the
    parameter's range. Never stops at the first problem.
    """
    errors: list[str] = []
    errors.extend(toggles.violations())
    errors.extend(params.violations())

    by_param: dict[str, list[StratificationRule]] = {}
    for rule in rules:
        try:
            canonical = resolve_parameter_name(rule.parameter)
        except ConfigurationError as exc:
            errors.append(str(exc))
            continue
        by_param.setdefault(canonical, []).append(rule)

    for name, group in sorted(by_param.items()):
        defaults = [r for r in group if r.is_default]
        if len(defaults) != 1:
            errors.append(
                f"stratified parameter {name!r} needs exactly one default "
                f"rule, found {len(defaults)}")
        for rule in group:
            if name in PROBABILITY_PARAMS and not 0.0 <= rule.value <= 1.0:
                errors.append(
                    f"rule value for {name!r} out of range [0, 1]: {rule.value}")
            elif name == "icu_beds" and rule.value < 0:
                errors.append(f"rule value for 'icu_beds' must be >= 0")
    return errors
