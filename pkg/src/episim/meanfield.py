"""Deterministic mean-field formulation of the compartment model.

Seven nested ODE systems, one per intervention stage, each assuming a
fully mixed closed population (no births, no demographic deaths). They
serve both as a fast deterministic solver and as the reference the
stochastic engine is checked against in its fully-mixed limit.

Two fidelities are provided. ``AS_WRITTEN`` transcribes the published
equation systems literally, including their oddities in the bed-limited
stage and beyond: the doubled incubation outflow from E_T feeding both
I_T and H_T, the ``iota * icu_beds * I_T`` bed term, dead mass returning
to S through the corpse rate, undetected recovery/lethality rates
applied to I_T, and vaccine-loss mass returning to both S and S_L.
``DIAGRAM`` makes the flows match the agent-level transition diagram
instead: E_T drains wholly into I_T, severe cases leave I_T at rate
``iota`` with no capacity factor (bed capacity is an agent-level
concept), I_T uses the treated rates, corpse infection is a contact
flow S -> I, and vaccine loss returns to S only. The two fidelities
coincide exactly below the bed-limited stage.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from episim.compartments import (
    CANONICAL_ORDER,
    Compartment,
    ConfigurationError,
    ParameterSet,
)

C = Compartment


class OdeVariant(enum.Enum):
    """The seven nested systems, in the order interventions stack up."""

    UTR = 1                 # testing and quarantine
    UTLR = 2                # + lockdown
    UTLDR = 3               # + death
    UTLDR_ICU = 4           # + bed-limited severe cases
    UTLDR_CORPSE = 5        # + infective corpses
    UTLDR_IMMUNITY = 6      # + waning immunity
    UTLDR_VACCINATION = 7   # + vaccination


class Fidelity(enum.Enum):
    AS_WRITTEN = "as_written"
    DIAGRAM = "diagram_consistent"


_VARIANT_EXTRA = {
    OdeVariant.UTR: (C.S, C.E, C.I, C.E_T, C.I_T, C.R),
    OdeVariant.UTLR: (C.S, C.E, C.I, C.E_T, C.I_T, C.S_L, C.E_L, C.I_L, C.R),
    OdeVariant.UTLDR: (C.S, C.E, C.I, C.E_T, C.I_T, C.S_L, C.E_L, C.I_L, C.R,
                       C.D),
    OdeVariant.UTLDR_ICU: (C.S, C.E, C.I, C.E_T, C.I_T, C.H_T, C.S_L, C.E_L,
                           C.I_L, C.R, C.D),
}
_VARIANT_EXTRA[OdeVariant.UTLDR_CORPSE] = _VARIANT_EXTRA[OdeVariant.UTLDR_ICU]
_VARIANT_EXTRA[OdeVariant.UTLDR_IMMUNITY] = _VARIANT_EXTRA[OdeVariant.UTLDR_ICU]
_VARIANT_EXTRA[OdeVariant.UTLDR_VACCINATION] = tuple(
    c for c in CANONICAL_ORDER
    if c in set(_VARIANT_EXTRA[OdeVariant.UTLDR_ICU]) | {C.V})

#: Active compartments per variant, in canonical order.
VARIANT_COMPARTMENTS: dict[OdeVariant, tuple[Compartment, ...]] = {
    v: tuple(c for c in CANONICAL_ORDER if c in set(members))
    for v, members in _VARIANT_EXTRA.items()
}

# Parameters each variant actually uses; anything else set nonzero draws a
# warning (not an error) so a stray setting is visible but not fatal.
_USED_PARAMS = {
    OdeVariant.UTR: {"beta", "sigma", "gamma", "gamma_t", "theta_e", "theta_i",
                     "kappa_e", "kappa_i"},
}
_USED_PARAMS[OdeVariant.UTLR] = _USED_PARAMS[OdeVariant.UTR] | {"tau", "mu"}
_USED_PARAMS[OdeVariant.UTLDR] = _USED_PARAMS[OdeVariant.UTLR] | {
    "omega", "omega_t"}
_USED_PARAMS[OdeVariant.UTLDR_ICU] = _USED_PARAMS[OdeVariant.UTLDR] | {
    "iota", "icu_beds"}
_USED_PARAMS[OdeVariant.UTLDR_CORPSE] = _USED_PARAMS[OdeVariant.UTLDR_ICU] | {
    "corpse_infection"}
_USED_PARAMS[OdeVariant.UTLDR_IMMUNITY] = (
    _USED_PARAMS[OdeVariant.UTLDR_CORPSE] | {"reinfection"})
_USED_PARAMS[OdeVariant.UTLDR_VACCINATION] = (
    _USED_PARAMS[OdeVariant.UTLDR_IMMUNITY] | {"vaccination", "vaccine_loss"})

# Flow-controlling parameters checked for the unused-but-nonzero warning.
_FLOW_PARAMS = ("tau", "mu", "omega", "omega_t", "iota", "icu_beds",
                "corpse_infection", "reinfection", "vaccination",
                "vaccine_loss")


class IntegrationError(RuntimeError):
    """Numerical failure during integration (step size, NaN, conservation)."""


@dataclass
class MeanFieldState:
    """Compartment masses for one variant plus the population total."""

    variant: OdeVariant
    values: np.ndarray          # aligned with VARIANT_COMPARTMENTS[variant]
    n: float

    @classmethod
    def of(cls, variant: OdeVariant, n: float = 1.0,
           **masses: float) -> "MeanFieldState":
        """Build a state from keyword masses; unmentioned compartments are 0.

        ``S`` defaults to whatever mass is left so the state sums to ``n``.
        """
        order = VARIANT_COMPARTMENTS[variant]
        labels = {c.value: i for i, c in enumerate(order)}
        vec = np.zeros(len(order))
        for name, val in masses.items():
            if name not in labels:
                raise ConfigurationError(
                    f"compartment {name!r} is not part of {variant.name}")
            vec[labels[name]] = float(val)
        if "S" not in masses:
            vec[labels["S"]] = n - vec.sum()
        return cls(variant, vec, float(n))

    def __getitem__(self, comp: Compartment | str) -> float:
        label = comp.value if isinstance(comp, Compartment) else comp
        order = VARIANT_COMPARTMENTS[self.variant]
        for i, c in enumerate(order):
            if c.value == label:
                return float(self.values[i])
        raise KeyError(label)

    def as_dict(self) -> dict[str, float]:
        return {c.value: float(v)
                for c, v in zip(VARIANT_COMPARTMENTS[self.variant], self.values)}

    def check(self, tol: float = 1e-9) -> None:
        if np.any(self.values < -tol * self.n):
            raise ConfigurationError("negative compartment mass")
        if abs(self.values.sum() - self.n) > tol * self.n:
            raise ConfigurationError(
                f"compartment masses sum to {self.values.sum()}, expected {self.n}")


def _rhs(y: np.ndarray, params: ParameterSet, variant: OdeVariant,
         fidelity: Fidelity, idx: dict[Compartment, int]) -> np.ndarray:
    """Right-hand side of the chosen system; y is variant-ordered."""
    p = params
    rank = variant.value
    n = y.sum()
    if n <= 0:
        return np.zeros_like(y)
    d = np.zeros_like(y)

    S, E, I = y[idx[C.S]], y[idx[C.E]], y[idx[C.I]]
    E_T, I_T, R = y[idx[C.E_T]], y[idx[C.I_T]], y[idx[C.R]]
    test_e = p.theta_e * p.kappa_e
    test_i = p.theta_i * p.kappa_i
    inf_u = p.beta * S * I / n

    if rank == 1:  # testing and quarantine only
        d[idx[C.S]] = -inf_u
        d[idx[C.E]] = inf_u - p.sigma * E - test_e * E
        d[idx[C.I]] = p.sigma * E - test_i * I - p.gamma * I
        d[idx[C.E_T]] = test_e * E - p.sigma * E_T
        d[idx[C.I_T]] = p.sigma * E_T + test_i * I - p.gamma_t * I_T
        d[idx[C.R]] = p.gamma * I + p.gamma_t * I_T
        return d

    S_L, E_L, I_L = y[idx[C.S_L]], y[idx[C.E_L]], y[idx[C.I_L]]
    inf_l = p.beta * S_L * I_L / n

    if rank == 2:  # + lockdown
        d[idx[C.S]] = -inf_u - p.tau * S + p.mu * S_L
        d[idx[C.S_L]] = -inf_l + p.tau * S - p.mu * S_L
        d[idx[C.E]] = inf_u - p.sigma * E - test_e * E
        d[idx[C.E_L]] = inf_l - p.sigma * E_L - test_e * E_L
        d[idx[C.E_T]] = test_e * E - p.sigma * E_T + test_e * E_L
        d[idx[C.I]] = p.sigma * E - test_i * I - p.gamma * I
        d[idx[C.I_L]] = p.sigma * E_L - test_i * I_L - p.gamma * I_L
        d[idx[C.I_T]] = p.sigma * E_T + test_i * I - p.gamma_t * I_T + test_i * I_L
        d[idx[C.R]] = p.gamma * (I + I_L) + p.gamma_t * I_T
        return d

    if rank == 3:  # + death
        d[idx[C.S]] = -inf_u - p.tau * S + p.mu * S_L
        d[idx[C.S_L]] = -inf_l + p.tau * S - p.mu * S_L
        d[idx[C.E]] = inf_u - p.sigma * E - test_e * E
        d[idx[C.E_L]] = inf_l - p.sigma * E_L - test_e * E_L
        d[idx[C.E_T]] = test_e * E - p.sigma * E_T + test_e * E_L
        d[idx[C.I]] = p.sigma * E - test_i * I - p.gamma * I - p.omega * I
        d[idx[C.I_L]] = (p.sigma * E_L - test_i * I_L - p.gamma * I_L
                         - p.omega * I_L)
        d[idx[C.I_T]] = (p.sigma * E_T + test_i * I - p.gamma_t * I_T
                         + test_i * I_L - p.omega_t * I_T)
        d[idx[C.R]] = p.gamma * (I + I_L) + p.gamma_t * I_T
        d[idx[C.D]] = p.omega * (I + I_L) + p.omega_t * I_T
        return d

    # rank >= 4: bed-limited family, where the two fidelities diverge
    H_T, D = y[idx[C.H_T]], y[idx[C.D]]

    d[idx[C.S]] = -inf_u - p.tau * S + p.mu * S_L
    d[idx[C.S_L]] = -inf_l + p.tau * S - p.mu * S_L
    d[idx[C.E]] = inf_u - p.sigma * E - test_e * E
    d[idx[C.E_L]] = inf_l - p.sigma * E_L - test_e * E_L

    if fidelity is Fidelity.AS_WRITTEN:
        bed_flow = p.iota * p.icu_beds * I_T
        d[idx[C.E_T]] = test_e * E - 2.0 * p.sigma * E_T + test_e * E_L
        d[idx[C.I]] = p.sigma * E - test_i * I - p.gamma * I - p.omega * I
        d[idx[C.I_L]] = (p.sigma * E_L - test_i * I_L - p.gamma * I_L
                         - p.omega * I_L)
        d[idx[C.I_T]] = (p.sigma * E_T + test_i * I - bed_flow
                         - p.gamma * I_T - p.omega * I_T)
        d[idx[C.H_T]] = (p.sigma * E_T + test_i * I_L + bed_flow
                         - p.gamma_t * H_T - p.omega_t * H_T)
        d[idx[C.R]] = p.gamma * (I + I_L + I_T) + p.gamma_t * H_T
        d[idx[C.D]] = p.omega * (I + I_L + I_T) + p.omega_t * H_T
        if rank >= 5:
            d[idx[C.S]] += p.corpse_infection * D
            d[idx[C.D]] -= p.corpse_infection * D
    else:
        severe = p.iota * I_T
        d[idx[C.E_T]] = test_e * (E + E_L) - p.sigma * E_T
        d[idx[C.I]] = p.sigma * E - test_i * I - p.gamma * I - p.omega * I
        d[idx[C.I_L]] = (p.sigma * E_L - test_i * I_L - p.gamma * I_L
                         - p.omega * I_L)
        d[idx[C.I_T]] = (p.sigma * E_T + test_i * (I + I_L) - severe
                         - p.gamma_t * I_T - p.omega_t * I_T)
        d[idx[C.H_T]] = severe - p.gamma_t * H_T - p.omega_t * H_T
        d[idx[C.R]] = p.gamma * (I + I_L) + p.gamma_t * (I_T + H_T)
        d[idx[C.D]] = p.omega * (I + I_L) + p.omega_t * (I_T + H_T)
        if rank >= 5:
            corpse = p.corpse_infection * S * D / n
            d[idx[C.S]] -= corpse
            d[idx[C.I]] += corpse

    if rank >= 6:
        d[idx[C.S]] += p.reinfection * R
        d[idx[C.R]] -= p.reinfection * R

    if rank >= 7:
        V = y[idx[C.V]]
        if fidelity is Fidelity.AS_WRITTEN:
            d[idx[C.S]] += -p.vaccination * S + p.vaccine_loss * V
            d[idx[C.S_L]] += -p.vaccination * S_L + p.vaccine_loss * V
            d[idx[C.V]] = (p.vaccination * S + p.vaccination * S_L
                           - 2.0 * p.vaccine_loss * V)
        else:
            d[idx[C.S]] += -p.vaccination * S + p.vaccine_loss * V
            d[idx[C.S_L]] += -p.vaccination * S_L
            d[idx[C.V]] = p.vaccination * (S + S_L) - p.vaccine_loss * V
    return d


def derivatives(state: MeanFieldState, params: ParameterSet,
                variant: OdeVariant | None = None,
                fidelity: Fidelity = Fidelity.DIAGRAM,
                warn_unused: bool = True) -> np.ndarray:
    """Instantaneous per-compartment rates of change for ``state``.

    The returned vector is aligned with ``VARIANT_COMPARTMENTS[variant]``.
    Parameters that the chosen variant does not use but that are set
    nonzero trigger a warning, not an error.
    """
    variant = variant or state.variant
    if variant is not state.variant:
        raise ConfigurationError("state was built for a different variant")
    if warn_unused:
        _warn_unused(params, variant)
    order = VARIANT_COMPARTMENTS[variant]
    idx = {c: i for i, c in enumerate(order)}
    return _rhs(np.asarray(state.values, dtype=np.float64), params, variant,
                fidelity, idx)


def _warn_unused(params: ParameterSet, variant: OdeVariant) -> None:
    used = _USED_PARAMS[variant]
    stray = [name for name in _FLOW_PARAMS
             if name not in used and getattr(params, name)]
    if stray:
        warnings.warn(
            f"parameters {stray} are not used by variant {variant.name}",
            stacklevel=3)


def _max_outflow_coefficient(params: ParameterSet, variant: OdeVariant,
                             fidelity: Fidelity) -> float:
    """Conservative per-compartment bound on total linear outflow rate."""
    p = params
    rank = variant.value
    test_e = p.theta_e * p.kappa_e
    test_i = p.theta_i * p.kappa_i
    tau = p.tau if rank >= 2 else 0.0
    omega = p.omega if rank >= 3 else 0.0
    rates = {
        C.S: p.beta + tau + (p.vaccination if rank >= 7 else 0.0)
            + (p.corpse_infection if rank >= 5 else 0.0),
        C.E: p.sigma + test_e + tau,
        C.I: test_i + p.gamma + omega,
        C.E_T: p.sigma * (2.0 if rank >= 4 and fidelity is Fidelity.AS_WRITTEN
                          else 1.0),
        C.R: p.reinfection if rank >= 6 else 0.0,
    }
    if rank >= 4:
        if fidelity is Fidelity.AS_WRITTEN:
            rates[C.I_T] = p.iota * p.icu_beds + p.gamma + omega + test_i
        else:
            rates[C.I_T] = p.iota + p.gamma_t + p.omega_t + test_i
        rates[C.H_T] = p.gamma_t + p.omega_t
    else:
        rates[C.I_T] = p.gamma_t + (p.omega_t if rank >= 3 else 0.0)
    if rank >= 2:
        rates[C.S_L] = p.beta + p.mu + (p.vaccination if rank >= 7 else 0.0)
        rates[C.E_L] = p.sigma + test_e
        rates[C.I_L] = test_i + p.gamma + omega
    if rank >= 5 and fidelity is Fidelity.AS_WRITTEN:
        rates[C.D] = p.corpse_infection
    if rank >= 7:
        rates[C.V] = p.vaccine_loss * (2.0 if fidelity is Fidelity.AS_WRITTEN
                                       else 1.0)
    active = VARIANT_COMPARTMENTS[variant]
    return max(rates.get(c, 0.0) for c in active)


@dataclass
class Trajectory:
    """Integration output: one row per step, first row is the initial state."""

    variant: OdeVariant
    compartments: tuple[Compartment, ...]
    states: np.ndarray                    # shape (steps + 1, k)
    dt: float
    n: float
    clamp_events: list[tuple[int, str, float]] = field(default_factory=list)

    def series(self, comp: Compartment | str) -> np.ndarray:
        label = comp.value if isinstance(comp, Compartment) else comp
        for i, c in enumerate(self.compartments):
            if c.value == label:
                return self.states[:, i]
        raise KeyError(label)

    def final(self) -> MeanFieldState:
        return MeanFieldState(self.variant, self.states[-1].copy(), self.n)

    def __len__(self) -> int:
        return self.states.shape[0]


def integrate(state0: MeanFieldState, params: ParameterSet,
              variant: OdeVariant | None = None, dt: float = 1.0,
              steps: int = 100, method: str = "rk4",
              fidelity: Fidelity = Fidelity.DIAGRAM) -> Trajectory:
    """Fixed-step integration of the chosen system.

    ``rk4`` is the default; ``euler`` is provided for cross-checks at small
    steps and refuses steps large enough that a compartment could be
    drained more than once over one dt. Negative transients (possible in
    the literal fidelity's bed-limited family) are clamped to zero and
    recorded as clamp events; the component sum is verified against the
    population total at every step before clamping.

    Raises:
        IntegrationError: euler step-size violation (before any stepping),
            NaN/infinity (with the offending step index), or a broken
            component-sum balance.
    """
    variant = variant or state0.variant
    if dt <= 0:
        raise ConfigurationError(f"dt must be positive: {dt}")
    if steps < 0:
        raise ConfigurationError(f"steps must be >= 0: {steps}")
    if method not in ("euler", "rk4"):
        raise ConfigurationError(f"unknown method {method!r}")
    state0.check()
    _warn_unused(params, variant)

    if method == "euler":
        bound = _max_outflow_coefficient(params, variant, fidelity)
        if dt * bound >= 1.0:
            raise IntegrationError(
                f"euler step too large: dt*max_outflow = {dt * bound:.3g} >= 1")

    order = VARIANT_COMPARTMENTS[variant]
    idx = {c: i for i, c in enumerate(order)}
    n = state0.n
    tol = 1e-9 * n

    out = np.empty((steps + 1, len(order)), dtype=np.float64)
    out[0] = state0.values
    clamps: list[tuple[int, str, float]] = []
    y = np.array(state0.values, dtype=np.float64)

    for step in range(1, steps + 1):
        # every RHS sums to zero, so one step must preserve the mass it
        # started from; clamping repairs negatives and may add mass, which
        # is why the balance is checked against the pre-step total
        balance = y.sum()
        if method == "euler":
            y = y + dt * _rhs(y, params, variant, fidelity, idx)
        else:
            k1 = _rhs(y, params, variant, fidelity, idx)
            k2 = _rhs(y + 0.5 * dt * k1, params, variant, fidelity, idx)
            k3 = _rhs(y + 0.5 * dt * k2, params, variant, fidelity, idx)
            k4 = _rhs(y + dt * k3, params, variant, fidelity, idx)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at step {step}")
        if abs(y.sum() - balance) > tol * max(1.0, abs(balance) / n):
            raise IntegrationError(
                f"population balance broken at step {step}: "
                f"sum={y.sum()!r}, expected {balance!r}")
        negative = y < 0.0
        if np.any(negative):
            for i in np.flatnonzero(negative):
                clamps.append((step, order[i].value, float(y[i])))
            y[negative] = 0.0
        out[step] = y

    return Trajectory(variant, order, out, dt, n, clamps)
