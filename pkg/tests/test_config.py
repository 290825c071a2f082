import json

import pytest

from episim.compartments import Compartment as C, ConfigurationError, ModuleToggles
from episim.config import parse_scenario, variant_for_toggles
from episim.engine import apply_schedule
from episim.meanfield import Fidelity, OdeVariant


def write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=1))
    return path


MINIMAL_SEIR = {
    "params": {"beta": 0.02, "sigma": 0.2, "gamma": 0.03},
    "contact_source": {"type": "generate", "model": "erdos_renyi",
                       "n": 5000, "p_edge": 0.0012, "seed": 7},
    "run": {"iterations": 300, "initial_infected_fraction": 0.0001},
}

TUSCANY_STYLE = {
    "model": {"testing": True, "lockdown": True, "death": True, "icu": True},
    "params": {"beta": 0.006, "sigma": 0.25, "gamma": 0.04, "gamma_T": 0.04,
               "theta_i": 0.1, "kappa_i": 0.1, "omega": 0.001,
               "omega_T": 0.0015, "p": 0.008, "iota": 0.2, "tau": 0.9,
               "b": 200},
    "stratification": [
        {"param": "tau",
         "when": [{"attr": "employment", "op": "==", "value": "health"}],
         "value": 0.0, "priority": 1},
        {"param": "tau", "value": 0.9},
    ],
    "contact_source": {"type": "synthetic", "agents": 2000, "seed": 3},
    "schedule": [
        {"start": 30, "end": 120,
         "overrides": {"lockdown_active": True, "b": 400,
                       "mobility_level_cap": "municipality"}},
    ],
    "run": {"iterations": 180, "initial_infected_fraction": 0.002, "seed": 1},
}


def test_minimal_seir_config(tmp_path):
    cfg = parse_scenario(write(tmp_path, MINIMAL_SEIR))
    scenario = cfg.scenario
    assert scenario.toggles == ModuleToggles()
    assert scenario.params.beta == 0.02
    assert scenario.iterations == 300
    assert scenario.contact.n == 5000
    assert cfg.method == "rk4" and cfg.dt == 1.0
    assert cfg.fidelity is Fidelity.DIAGRAM
    assert cfg.variant is OdeVariant.UTR
    assert scenario.scenario_hash


def test_bad_value_names_the_key(tmp_path):
    doc = dict(MINIMAL_SEIR, params={"beta": "abc"})
    with pytest.raises(ConfigurationError, match="params.beta"):
        parse_scenario(write(tmp_path, doc))


def test_json_errors_carry_line_and_column(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "params": {,}\n}\n')
    with pytest.raises(ConfigurationError, match="broken.json:2:"):
        parse_scenario(path)


def test_tuscany_style_config_valid(tmp_path):
    cfg = parse_scenario(write(tmp_path, TUSCANY_STYLE))
    scenario = cfg.scenario
    assert scenario.params.omega_t == 0.0015
    assert scenario.params.long_range == 0.008
    assert scenario.params.icu_beds == 200
    assert len(scenario.rules) == 2
    eff = apply_schedule(45, scenario)
    assert eff.lockdown_active and eff.icu_beds == 400
    assert eff.mobility_level_cap == "municipality"
    assert cfg.variant is OdeVariant.UTLDR_ICU


def test_validation_errors_aggregated(tmp_path):
    doc = dict(MINIMAL_SEIR,
               model={"icu": True},
               params={"beta": 1.5, "sigma": 0.2, "gamma": 0.03})
    with pytest.raises(ConfigurationError) as err:
        parse_scenario(write(tmp_path, doc))
    text = str(err.value)
    assert "icu requires testing" in text and "beta" in text


def test_unknown_sections_and_toggles_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="unknown sections"):
        parse_scenario(write(tmp_path, dict(MINIMAL_SEIR, extras={})))
    with pytest.raises(ConfigurationError, match="model"):
        parse_scenario(write(tmp_path, dict(MINIMAL_SEIR,
                                            model={"quarantine": True})))


def test_variant_derivation():
    assert variant_for_toggles(ModuleToggles()) is OdeVariant.UTR
    assert variant_for_toggles(ModuleToggles(testing=True)) is OdeVariant.UTR
    assert variant_for_toggles(
        ModuleToggles(testing=True, lockdown=True)) is OdeVariant.UTLR
    assert variant_for_toggles(
        ModuleToggles(testing=True, lockdown=True, death=True,
                      icu=True)) is OdeVariant.UTLDR_ICU
    # off the nesting chain: no deterministic counterpart
    assert variant_for_toggles(ModuleToggles(death=True)) is None


def test_explicit_variant_override(tmp_path):
    doc = dict(MINIMAL_SEIR, model={"variant": "UTLR"})
    cfg = parse_scenario(write(tmp_path, doc))
    assert cfg.variant is OdeVariant.UTLR
    doc = dict(MINIMAL_SEIR, model={"variant": "NOPE"})
    with pytest.raises(ConfigurationError, match="NOPE"):
        parse_scenario(write(tmp_path, doc))


def test_meanfield_only_config_allowed(tmp_path):
    doc = {"params": {"beta": 0.02, "sigma": 0.2, "gamma": 0.03},
           "run": {"iterations": 10}}
    cfg = parse_scenario(write(tmp_path, doc))
    assert cfg.scenario.contact is None


def test_hash_stable_under_key_order(tmp_path):
    a = parse_scenario(write(tmp_path, MINIMAL_SEIR, "a.json"))
    reordered = {k: MINIMAL_SEIR[k] for k in reversed(list(MINIMAL_SEIR))}
    b = parse_scenario(write(tmp_path, reordered, "b.json"))
    assert a.scenario.scenario_hash == b.scenario.scenario_hash
