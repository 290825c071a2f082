"""Stochastic discrete-time agent engine.

Each iteration runs in phases against the iteration-start state, and all
transitions commit together at the end (synchronous update):

1. resolve the effective settings for the iteration from the scenario's
   schedule windows;
2. contact phase: every infectious, non-isolated agent draws its
   interaction events from the active contact source; contacted
   susceptibles are marked for infection (per-event probability, so k
   independent exposures infect with 1 - (1-beta)^k);
3. transition phase: per-compartment risks are drawn in a fixed order -
   death, recovery, incubation progression, testing, severe-case bed
   admission, lockdown entry/escape, vaccination, vaccination loss,
   re-susceptibility - and at most one transition is applied per agent
   per iteration (first success in that order wins, infection outranks
   them all);
4. tracing: partners of this iteration's newly tested-positive agents,
   looked up in the rolling contact log, are themselves tested;
5. commit, trim the contact log to the tracing window, and append the
   per-compartment counts to the trend series.

Determinism: every random draw comes from a substream derived from
``(seed, phase, iteration, ...)``: contact sampling from per-agent
streams, each transition risk from its own full-population vector
indexed by agent id. Outputs therefore depend only on (scenario, seed) -
not thread count, and not on which unrelated modules are toggled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from episim.compartments import (
    CANONICAL_ORDER,
    Compartment,
    ConfigurationError,
    ISOLATED,
    ModuleToggles,
    ParameterSet,
    StratificationRule,
    allowed_transitions,
    resolve_param_array,
    resolve_parameter_name,
    validate_model,
)
from episim.graphs import ContactGraph, sample_contacts, sample_effective_contacts
from episim.population import Population, sample_implicit_contacts
from episim.trends import TrendSeries

C = Compartment
CODE = {comp: np.int8(i) for i, comp in enumerate(CANONICAL_ORDER)}
LABEL = {int(v): comp for comp, v in CODE.items()}


class EngineError(RuntimeError):
    """Inconsistent simulation state."""


# substream tags
_S_INIT, _S_CONTACT, _S_RISK, _S_TRACE, _S_ICU = 0, 1, 2, 3, 4

# risk ids; each id owns an independent random vector per iteration, so
# enabling one module never shifts another module's draws
(R_DEATH_I, R_DEATH_IL, R_DEATH_IT, R_DEATH_HT, R_DEATH_F,
 R_REC_I, R_REC_IL, R_REC_IT, R_REC_HT, R_REC_F,
 R_PROG_E, R_PROG_EL, R_PROG_ET,
 R_TEST_E, R_TEST_I, R_TEST_EL, R_TEST_IL,
 R_SEVERE, R_LOCK_ENTRY, R_LOCK_ESCAPE,
 R_VACC_S, R_VACC_SL, R_VLOSS, R_REINF) = range(24)


@dataclass(frozen=True)
class ScheduleWindow:
    """Half-open iteration window [start, end) of setting overrides.

    Overrides may name any parameter (canonical name or alias) plus the
    non-parameter keys ``lockdown_active`` and ``mobility_level_cap``.
    Later-declared windows shadow earlier ones on conflicting keys.
    """

    start: int
    end: int
    overrides: Mapping[str, Any]

    def __post_init__(self):
        if self.start >= self.end:
            raise ConfigurationError(
                f"window [{self.start}, {self.end}) is empty")
        for key in self.overrides:
            if key in ("lockdown_active", "mobility_level_cap"):
                continue
            resolve_parameter_name(key)

    def contains(self, t: int) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class EffectiveSettings:
    """Scenario settings after applying the windows covering an iteration."""

    params: ParameterSet
    lockdown_active: bool
    mobility_level_cap: str | None
    window_key: tuple[int, ...]      # indices of the applied windows

    @property
    def icu_beds(self) -> int:
        return int(round(self.params.icu_beds))


@dataclass
class Scenario:
    """Everything one run needs: model, rates, contacts, schedule, size."""

    toggles: ModuleToggles
    params: ParameterSet
    rules: tuple[StratificationRule, ...] = ()
    contact: ContactGraph | Population | None = None
    initial_infected_fraction: float = 0.0001
    iterations: int = 150
    schedule: tuple[ScheduleWindow, ...] = ()
    scenario_hash: str = ""

    def validate(self) -> list[str]:
        errors = validate_model(self.toggles, self.params, self.rules)
        if not 0.0 < self.initial_infected_fraction <= 1.0:
            errors.append("initial infected fraction must be in (0, 1]")
        if self.iterations < 1:
            errors.append("iterations must be >= 1")
        if self.toggles.icu and self.params.icu_beds != int(self.params.icu_beds):
            errors.append("icu_beds must be a whole number of beds in agent mode")
        for w in self.schedule:
            for key, value in w.overrides.items():
                if key == "lockdown_active" and not self.toggles.lockdown:
                    errors.append(
                        "schedule activates lockdown but the lockdown module "
                        "is off")
                if key == "mobility_level_cap" and value is not None:
                    if not isinstance(self.contact, Population):
                        errors.append(
                            "mobility_level_cap requires an implicit "
                            "contact source")
        return errors

    def require_valid(self) -> None:
        errors = self.validate()
        if errors:
            raise ConfigurationError("; ".join(errors))


def apply_schedule(t: int, scenario: Scenario) -> EffectiveSettings:
    """Effective parameters and flags for iteration ``t``.

    Base values are overridden by every window containing ``t``, applied
    in declaration order. Pure function of its inputs.
    """
    params = scenario.params
    lockdown_active = False
    cap: str | None = None
    applied = []
    overrides: dict[str, Any] = {}
    for i, window in enumerate(scenario.schedule):
        if window.contains(t):
            applied.append(i)
            for key, value in window.overrides.items():
                if key == "lockdown_active":
                    lockdown_active = bool(value)
                elif key == "mobility_level_cap":
                    cap = value
                else:
                    overrides[resolve_parameter_name(key)] = value
    if overrides:
        params = params.with_overrides(overrides)
    return EffectiveSettings(params, lockdown_active, cap, tuple(applied))


def admit_icu(candidates: np.ndarray, occupancy: int, beds: int,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split severe candidates into bed admissions and overflow.

    A uniform random subset of size ``min(len(candidates), beds - occupancy)``
    is admitted; everyone else overflows to unattended severe care.
    Deterministic given ``rng``.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    free = max(0, beds - occupancy)
    if len(candidates) <= free:
        return candidates.copy(), np.empty(0, dtype=np.int64)
    if free == 0:
        return np.empty(0, dtype=np.int64), candidates.copy()
    admitted = rng.choice(candidates, size=free, replace=False)
    admitted = np.sort(admitted)
    overflow = np.setdiff1d(candidates, admitted)
    return admitted, overflow


@dataclass
class EventCounters:
    infections: int = 0
    tests: int = 0
    traced_tests: int = 0
    icu_admissions: int = 0
    icu_overflows: int = 0
    deaths: int = 0
    dropped_contact_slots: int = 0


@dataclass
class SimulationState:
    """Mutable per-run state; one compartment per agent at all times."""

    t: int
    codes: np.ndarray                      # int8 per agent
    contact_log: list                      # (iteration, src_arr, tgt_arr)
    icu_occupancy: int
    counters: EventCounters
    trend_rows: list
    prev_lockdown_active: bool = False
    seed: int = 0
    threads: int = 1
    trace: Callable[[dict], None] | None = None
    runtime: "_Runtime | None" = None


# ---------------------------------------------------------------------------
# Prepared runtime (read-only during a run)
# ---------------------------------------------------------------------------

class _Runtime:
    """Pre-resolved arrays and dispatch for one (scenario, seed) run."""

    def __init__(self, scenario: Scenario):
        contact = scenario.contact
        if contact is None:
            raise ConfigurationError("scenario has no contact source")
        self.scenario = scenario
        self.contact = contact
        self.implicit = isinstance(contact, Population)
        self.n = contact.n
        if self.implicit:
            self.columns = dict(contact.columns)
        else:
            self.columns = dict(contact.attributes)
        self.active = scenario.toggles.active_compartments()
        self.active_codes = np.array([CODE[c] for c in self.active])
        self._param_cache: dict[tuple[int, ...], dict[str, np.ndarray]] = {}

    def resolved(self, eff: EffectiveSettings) -> dict[str, np.ndarray]:
        key = eff.window_key
        if key not in self._param_cache:
            p, rules, n = eff.params, self.scenario.rules, self.n
            arrays: dict[str, np.ndarray] = {}
            for name in ("beta", "sigma", "gamma", "gamma_t", "theta_e",
                         "theta_i", "kappa_e", "kappa_i", "tau", "mu",
                         "omega", "omega_t", "omega_f", "iota",
                         "corpse_infection", "reinfection", "vaccination",
                         "vaccine_loss"):
                arrays[name] = resolve_param_array(
                    name, self.columns, rules, n,
                    base_value=getattr(p, name))
            arrays["test_e"] = arrays["theta_e"] * arrays["kappa_e"]
            arrays["test_i"] = arrays["theta_i"] * arrays["kappa_i"]
            self._param_cache[key] = arrays
        return self._param_cache[key]

    def sample_full(self, agent: int, rng: np.random.Generator, p: float,
                    locked: bool, cap: str | None) -> tuple[np.ndarray, int]:
        if self.implicit:
            kinds = ("home_cell",) if locked else None
            draw = sample_implicit_contacts(self.contact, agent, p, rng,
                                            mobility_level_cap=cap,
                                            kinds=kinds)
            return draw.ids, draw.dropped
        return sample_contacts(agent, self.contact, p, rng), 0

    def sample_thinned(self, agent: int, rng: np.random.Generator, p: float,
                       locked: bool, cap: str | None, keep: float,
                       ) -> tuple[np.ndarray, int]:
        if self.implicit:
            kinds = ("home_cell",) if locked else None
            draw = sample_implicit_contacts(self.contact, agent, p, rng,
                                            mobility_level_cap=cap,
                                            kinds=kinds, keep=keep)
            return draw.ids, draw.dropped
        return sample_effective_contacts(agent, self.contact, p, keep, rng), 0


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class _AgentStreams:
    """Cheap deterministic per-agent generator, one reusable instance.

    The contact phase needs an independent stream per (iteration, agent)
    pair; building a SeedSequence for each costs more than the draws it
    feeds. Instead one PCG64 is re-pointed per agent: the key words are
    absorbed through a splitmix64 chain into a fresh 128-bit state and a
    distinct odd increment, which selects an independent PCG64 stream.
    Not thread-safe: each worker owns its own instance.
    """

    def __init__(self):
        self._bg = np.random.PCG64(0)
        self.gen = np.random.Generator(self._bg)
        self._template = self._bg.state

    def at(self, *key: int) -> np.random.Generator:
        h = 0
        for word in key:
            h = _mix64(h + _GOLDEN + word)
        words = []
        for _ in range(4):
            h = (h + _GOLDEN) & _MASK64
            words.append(_mix64(h))
        st = dict(self._template)
        st["state"] = {"state": (words[0] << 64) | words[1],
                       "inc": ((words[2] << 64) | words[3]) | 1}
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bg.state = st
        return self.gen


def _contact_phase(state: SimulationState, scenario: Scenario,
                   eff: EffectiveSettings, arrays: Mapping[str, np.ndarray],
                   ) -> tuple[dict[int, tuple[np.int8, int]], list]:
    """Sample contacts of infectious agents, decide infections.

    Returns infection claims {target: (new code, cause id)} and, when the
    tracing window is open, the (src, tgt) event arrays for the log.
    Sources infect only their legal pool: undetected infectious hit
    susceptibles, locked infectious hit locked susceptibles, corpses hit
    susceptibles through the corpse route.
    """
    rt = state.runtime
    codes = state.codes
    t = state.t
    toggles = scenario.toggles
    p_long = eff.params.long_range
    cap = eff.mobility_level_cap
    log_contacts = toggles.tracing and eff.params.tracing_window > 0

    beta = arrays["beta"]
    corpse = arrays["corpse_infection"]
    beta_max = float(beta.max())
    corpse_max = float(corpse.max())

    sources: list[tuple[int, int]] = []       # (agent, kind 0=I,1=I_L,2=D)
    for agent in np.flatnonzero(codes == CODE[C.I]):
        sources.append((int(agent), 0))
    if toggles.lockdown:
        for agent in np.flatnonzero(codes == CODE[C.I_L]):
            sources.append((int(agent), 1))
    if toggles.corpse:
        for agent in np.flatnonzero(codes == CODE[C.D]):
            sources.append((int(agent), 2))
    sources.sort()

    def handle(source: int, kind: int, streams: _AgentStreams):
        rng = streams.at(state.seed, _S_CONTACT, t, source)
        locked = kind == 1
        keep_max = corpse_max if kind == 2 else beta_max
        if log_contacts:
            targets, dropped = rt.sample_full(source, rng, p_long, locked, cap)
            if len(targets) and keep_max < 1.0:
                kept = rng.random(len(targets)) < keep_max
            else:
                kept = np.ones(len(targets), dtype=bool)
            effective = targets[kept]
        else:
            targets = None
            effective, dropped = rt.sample_thinned(source, rng, p_long, locked,
                                                   cap, keep_max)
        accept_arr = corpse if kind == 2 else beta
        if len(effective) and keep_max > 0.0:
            ratio = accept_arr[effective] / keep_max
            hits = effective[rng.random(len(effective)) < ratio]
        else:
            hits = np.empty(0, dtype=np.int64)
        return source, kind, targets, hits, dropped

    if state.threads > 1 and len(sources) > 1:
        chunks = np.array_split(np.arange(len(sources)),
                                min(state.threads, len(sources)))

        def worker(idxs):
            streams = _AgentStreams()
            return [handle(*sources[i], streams) for i in idxs]

        results: list = [None] * len(sources)
        with ThreadPoolExecutor(max_workers=state.threads) as pool:
            futures = [pool.submit(worker, c) for c in chunks if len(c)]
            pos = 0
            for fut in futures:
                part = fut.result()
                results[pos:pos + len(part)] = part
                pos += len(part)
    else:
        streams = _AgentStreams()
        results = [handle(src, kind, streams) for src, kind in sources]

    infections: dict[int, tuple[np.int8, int]] = {}
    log_entries = []
    # undetected and locked infectious claim first, corpse routes second
    for source, kind, targets, hits, dropped in results:
        state.counters.dropped_contact_slots += dropped
        if targets is not None and len(targets):
            log_entries.append((np.full(len(targets), source, dtype=np.int64),
                                targets))
            if state.trace is not None:
                for tgt in targets.tolist():
                    state.trace({"t": t, "kind": "contact", "source": source,
                                 "target": int(tgt)})
        elif targets is None and state.trace is not None and len(hits):
            for tgt in hits.tolist():
                state.trace({"t": t, "kind": "contact", "source": source,
                             "target": int(tgt)})
        if kind == 2:
            continue
        pool_code = CODE[C.S_L] if kind == 1 else CODE[C.S]
        new_code = CODE[C.E_L] if kind == 1 else CODE[C.E]
        for tgt in hits.tolist():
            if codes[tgt] == pool_code and tgt not in infections:
                infections[tgt] = (new_code, _CAUSE_INFECTION)
    for source, kind, targets, hits, dropped in results:
        if kind != 2:
            continue
        for tgt in hits.tolist():
            if codes[tgt] == CODE[C.S] and tgt not in infections:
                infections[tgt] = (CODE[C.I], _CAUSE_CORPSE)
    return infections, log_entries


# cause ids, also used as trace labels
(_CAUSE_INFECTION, _CAUSE_CORPSE, _CAUSE_DEATH, _CAUSE_RECOVERY,
 _CAUSE_PROGRESSION, _CAUSE_TESTING, _CAUSE_TRACING, _CAUSE_SEVERE,
 _CAUSE_OVERFLOW, _CAUSE_LOCK_ENTRY, _CAUSE_LOCK_ESCAPE,
 _CAUSE_LOCK_RELEASE, _CAUSE_VACCINATION, _CAUSE_VACCINE_LOSS,
 _CAUSE_REINFECTION) = range(15)

CAUSE_LABELS = ("infection", "corpse", "death", "recovery", "progression",
                "testing", "tracing", "severe", "overflow", "lockdown_entry",
                "lockdown_escape", "lockdown_release", "vaccination",
                "vaccine_loss", "reinfection")


class _Claims:
    """At most one pending transition per agent, first claim wins."""

    def __init__(self, n: int):
        self.claimed = np.zeros(n, dtype=bool)
        self.new_code = np.zeros(n, dtype=np.int8)
        self.cause = np.zeros(n, dtype=np.int8)

    def add_mask(self, mask: np.ndarray, new_code: np.int8, cause: int,
                 ) -> np.ndarray:
        take = mask & ~self.claimed
        self.claimed[take] = True
        self.new_code[take] = new_code
        self.cause[take] = cause
        return take

    def add_ids(self, ids, new_code: np.int8, cause: int) -> list[int]:
        out = []
        for agent in ids:
            if not self.claimed[agent]:
                self.claimed[agent] = True
                self.new_code[agent] = new_code
                self.cause[agent] = cause
                out.append(int(agent))
        return out


def step(state: SimulationState, scenario: Scenario) -> SimulationState:
    """Advance the simulation one iteration (synchronous commit)."""
    rt = state.runtime
    if rt is None:
        state.runtime = rt = _Runtime(scenario)
    codes = state.codes
    n = rt.n
    t = state.t
    toggles = scenario.toggles

    bad = ~np.isin(codes, rt.active_codes)
    if bad.any():
        agent = int(np.flatnonzero(bad)[0])
        raise EngineError(
            f"agent {agent} is in disabled compartment "
            f"{LABEL[int(codes[agent])].value}")

    eff = apply_schedule(t, scenario)
    arrays = rt.resolved(eff)
    claims = _Claims(n)

    # (2) contact phase ------------------------------------------------------
    infections, log_entries = _contact_phase(state, scenario, eff, arrays)
    for tgt, (new_code, cause) in sorted(infections.items()):
        claims.add_ids([tgt], new_code, cause)
    state.counters.infections += len(infections)
    if toggles.tracing and eff.params.tracing_window > 0:
        for src_arr, tgt_arr in log_entries:
            state.contact_log.append((t, src_arr, tgt_arr))

    # (3) transition phase ----------------------------------------------------
    def uniforms(risk_id: int) -> np.ndarray:
        return _stream(state.seed, _S_RISK, t, risk_id).random(n)

    def risk(risk_id: int, source: Compartment, prob: np.ndarray,
             target: Compartment, cause: int) -> np.ndarray:
        mask = (codes == CODE[source]) & (uniforms(risk_id) < prob)
        return claims.add_mask(mask, CODE[target], cause)

    departures_ht = 0
    if toggles.death:
        risk(R_DEATH_I, C.I, arrays["omega"], C.D, _CAUSE_DEATH)
        if toggles.lockdown:
            risk(R_DEATH_IL, C.I_L, arrays["omega"], C.D, _CAUSE_DEATH)
        if toggles.testing:
            risk(R_DEATH_IT, C.I_T, arrays["omega_t"], C.D, _CAUSE_DEATH)
        if toggles.icu:
            departures_ht += int(risk(R_DEATH_HT, C.H_T, arrays["omega_t"],
                                      C.D, _CAUSE_DEATH).sum())
            risk(R_DEATH_F, C.F, arrays["omega_f"], C.D, _CAUSE_DEATH)

    risk(R_REC_I, C.I, arrays["gamma"], C.R, _CAUSE_RECOVERY)
    if toggles.lockdown:
        risk(R_REC_IL, C.I_L, arrays["gamma"], C.R, _CAUSE_RECOVERY)
    if toggles.testing:
        risk(R_REC_IT, C.I_T, arrays["gamma_t"], C.R, _CAUSE_RECOVERY)
    if toggles.icu:
        departures_ht += int(risk(R_REC_HT, C.H_T, arrays["gamma_t"], C.R,
                                  _CAUSE_RECOVERY).sum())
        risk(R_REC_F, C.F, arrays["gamma_t"], C.R, _CAUSE_RECOVERY)

    risk(R_PROG_E, C.E, arrays["sigma"], C.I, _CAUSE_PROGRESSION)
    if toggles.lockdown:
        risk(R_PROG_EL, C.E_L, arrays["sigma"], C.I_L, _CAUSE_PROGRESSION)
    if toggles.testing:
        risk(R_PROG_ET, C.E_T, arrays["sigma"], C.I_T, _CAUSE_PROGRESSION)

    newly_tested: list[int] = []
    if toggles.testing:
        for risk_id, source, target in (
                (R_TEST_E, C.E, C.E_T), (R_TEST_I, C.I, C.I_T)):
            prob = arrays["test_e"] if source is C.E else arrays["test_i"]
            took = risk(risk_id, source, prob, target, _CAUSE_TESTING)
            newly_tested.extend(np.flatnonzero(took).tolist())
        if toggles.lockdown:
            for risk_id, source, target in (
                    (R_TEST_EL, C.E_L, C.E_T), (R_TEST_IL, C.I_L, C.I_T)):
                prob = (arrays["test_e"] if source is C.E_L
                        else arrays["test_i"])
                took = risk(risk_id, source, prob, target, _CAUSE_TESTING)
                newly_tested.extend(np.flatnonzero(took).tolist())
    state.counters.tests += len(newly_tested)

    if toggles.icu:
        mask = (codes == CODE[C.I_T]) & (uniforms(R_SEVERE) < arrays["iota"])
        mask &= ~claims.claimed
        candidates = np.flatnonzero(mask)
        if len(candidates):
            occupancy = state.icu_occupancy - departures_ht
            admitted, overflow = admit_icu(candidates, occupancy,
                                           eff.icu_beds,
                                           _stream(state.seed, _S_ICU, t))
            claims.add_ids(admitted, CODE[C.H_T], _CAUSE_SEVERE)
            claims.add_ids(overflow, CODE[C.F], _CAUSE_OVERFLOW)
            state.counters.icu_admissions += len(admitted)
            state.counters.icu_overflows += len(overflow)

    if toggles.lockdown:
        if eff.lockdown_active and not state.prev_lockdown_active:
            # adherence is drawn once, when a lockdown window activates
            u = uniforms(R_LOCK_ENTRY)
            tau = arrays["tau"]
            for source, target in ((C.S, C.S_L), (C.E, C.E_L), (C.I, C.I_L)):
                mask = (codes == CODE[source]) & (u < tau)
                claims.add_mask(mask, CODE[target], _CAUSE_LOCK_ENTRY)
        if eff.lockdown_active:
            u = uniforms(R_LOCK_ESCAPE)
            mu = arrays["mu"]
            for source, target in ((C.S_L, C.S), (C.E_L, C.E), (C.I_L, C.I)):
                mask = (codes == CODE[source]) & (u < mu)
                claims.add_mask(mask, CODE[target], _CAUSE_LOCK_ESCAPE)
        else:
            # no window active: the locked compartments drain; an agent
            # routed into them this very iteration leaves on the next one
            for source, target in ((C.S_L, C.S), (C.E_L, C.E), (C.I_L, C.I)):
                mask = codes == CODE[source]
                claims.add_mask(mask, CODE[target], _CAUSE_LOCK_RELEASE)

    if toggles.vaccination:
        vacc = arrays["vaccination"]
        risk(R_VACC_S, C.S, vacc, C.V, _CAUSE_VACCINATION)
        if toggles.lockdown:
            risk(R_VACC_SL, C.S_L, vacc, C.V, _CAUSE_VACCINATION)
        risk(R_VLOSS, C.V, arrays["vaccine_loss"], C.S, _CAUSE_VACCINE_LOSS)

    if toggles.reinfection:
        risk(R_REINF, C.R, arrays["reinfection"], C.S, _CAUSE_REINFECTION)

    # (4) tracing -------------------------------------------------------------
    if toggles.tracing and eff.params.tracing_window > 0 and newly_tested:
        trace_rng = _stream(state.seed, _S_TRACE, t)
        window_start = t - eff.params.tracing_window
        traceable = {
            int(CODE[C.E]): (CODE[C.E_T], arrays["test_e"]),
            int(CODE[C.I]): (CODE[C.I_T], arrays["test_i"]),
            int(CODE[C.E_L]): (CODE[C.E_T], arrays["test_e"]),
            int(CODE[C.I_L]): (CODE[C.I_T], arrays["test_i"]),
        }
        for tested in sorted(set(newly_tested)):
            partners: set[int] = set()
            for when, src_arr, tgt_arr in state.contact_log:
                if when < window_start:
                    continue
                partners.update(tgt_arr[src_arr == tested].tolist())
                partners.update(src_arr[tgt_arr == tested].tolist())
            for partner in sorted(partners):
                u = trace_rng.random()
                hit = traceable.get(int(codes[partner]))
                if hit is None:
                    continue
                target, prob = hit
                if u < prob[partner] and not claims.claimed[partner]:
                    claims.add_ids([partner], target, _CAUSE_TRACING)
                    state.counters.traced_tests += 1
                    state.counters.tests += 1

    # (5) commit --------------------------------------------------------------
    changed = np.flatnonzero(claims.claimed)
    if state.trace is not None:
        for agent in changed.tolist():
            state.trace({
                "t": t, "kind": "transition", "agent": int(agent),
                "from": LABEL[int(codes[agent])].value,
                "to": LABEL[int(claims.new_code[agent])].value,
                "cause": CAUSE_LABELS[int(claims.cause[agent])],
            })
    state.counters.deaths += int((claims.new_code[changed] == CODE[C.D]).sum())
    codes[changed] = claims.new_code[changed]

    state.icu_occupancy = int((codes == CODE[C.H_T]).sum())
    if toggles.icu and state.icu_occupancy > eff.icu_beds:
        raise EngineError(
            f"bed occupancy {state.icu_occupancy} exceeds capacity "
            f"{eff.icu_beds} at iteration {t}")

    # (6) trim the contact log ------------------------------------------------
    if state.contact_log:
        horizon = (t + 1) - eff.params.tracing_window
        state.contact_log = [entry for entry in state.contact_log
                             if entry[0] >= horizon]

    # (7) record --------------------------------------------------------------
    state.prev_lockdown_active = eff.lockdown_active
    state.t = t + 1
    state.trend_rows.append(_counts(codes, rt))
    return state


def _counts(codes: np.ndarray, rt: _Runtime) -> np.ndarray:
    full = np.bincount(codes, minlength=len(CANONICAL_ORDER))
    return full[rt.active_codes]


@dataclass
class RunResult:
    trends: TrendSeries
    counters: EventCounters


def run(scenario: Scenario, seed: int, threads: int = 1,
        trace: Callable[[dict], None] | None = None) -> RunResult:
    """Execute a full scenario; output depends only on (scenario, seed).

    The initial infected agents (compartment I) are drawn uniformly at
    random; everyone else starts susceptible. ``threads`` only chunks the
    contact phase across a thread pool and never changes the result.
    """
    scenario.require_valid()
    rt = _Runtime(scenario)
    n = rt.n
    count = int(round(scenario.initial_infected_fraction * n))
    if count == 0:
        raise ConfigurationError(
            f"initial infected count is zero "
            f"(fraction {scenario.initial_infected_fraction} of {n} agents)")

    init_rng = _stream(seed, _S_INIT)
    infected = init_rng.choice(n, size=count, replace=False)
    codes = np.full(n, CODE[C.S], dtype=np.int8)
    codes[infected] = CODE[C.I]
    if trace is not None:
        for agent in sorted(infected.tolist()):
            trace({"t": 0, "kind": "init", "agent": int(agent),
                   "compartment": C.I.value})

    state = SimulationState(
        t=0, codes=codes, contact_log=[], icu_occupancy=0,
        counters=EventCounters(), trend_rows=[], seed=seed, threads=threads,
        trace=trace, runtime=rt)
    state.trend_rows.append(_counts(codes, rt))

    for _ in range(scenario.iterations):
        step(state, scenario)

    trends = TrendSeries(
        compartments=tuple(c.value for c in rt.active),
        rows=np.array(state.trend_rows, dtype=np.int64),
        scenario_hash=scenario.scenario_hash,
        seed=seed,
        mode="agent",
    )
    return RunResult(trends, state.counters)


def run_many(scenario: Scenario, seeds: Sequence[int], threads: int = 1,
             parallel_runs: int = 1) -> list[RunResult]:
    """One independent run per seed; optionally spread across a pool."""
    if parallel_runs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=parallel_runs) as pool:
            futures = [pool.submit(run, scenario, s, threads) for s in seeds]
            return [f.result() for f in futures]
    return [run(scenario, s, threads) for s in seeds]
