"""Epidemic simulation toolkit.

Two engines over one compartment model:

* a deterministic mean-field solver (:mod:`episim.meanfield`) for the
  fully-mixed limit, and
* a stochastic agent engine (:mod:`episim.engine`) over explicit contact
  graphs (:mod:`episim.graphs`) or implicit social contexts with
  geography and mobility (:mod:`episim.population`),

plus scenario configuration, scheduling of interventions, and plot-ready
trend exports (:mod:`episim.trends`, :mod:`episim.config`,
:mod:`episim.cli`).
"""

from episim.compartments import (
    CANONICAL_ORDER,
    Compartment,
    ConfigurationError,
    MetaClass,
    ModuleToggles,
    ParameterSet,
    StratificationRule,
    AttributeTest,
    allowed_transitions,
    resolve_param,
    validate_model,
)

__all__ = [
    "CANONICAL_ORDER",
    "Compartment",
    "ConfigurationError",
    "MetaClass",
    "ModuleToggles",
    "ParameterSet",
    "StratificationRule",
    "AttributeTest",
    "allowed_transitions",
    "resolve_param",
    "validate_model",
]

__version__ = "0.1.0"
