"""Conductance-based LIF populations with adaptive firing thresholds.

State lives in flat float64 vectors (one entry per neuron) and every operation
is an explicit transition on that state, so a simulation step is a fixed
sequence of calls: decay conductances, inject queued spikes, integrate the
membrane, fire and reset, update thresholds. Time is an absolute simulation
clock in milliseconds, supplied by the caller; a neuron is refractory while
``now < ref_until``.

Membrane integration uses forward Euler; conductance and threshold decay use
the exact exponential factor so they cannot drift unstable at any step size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SimulationFault(RuntimeError):
    """Membrane state went non-finite.

    Carries the index of the first offending neuron so the driver can point
    at it in the diagnostic dump.
    """

    def __init__(self, message: str, neuron: int | None = None):
        super().__init__(message)
        self.neuron = neuron


class ContractViolation(ValueError):
    """An operation received arguments that break its preconditions."""


@dataclass(frozen=True)
class NeuronParams:
    """Electrical constants for one population.

    Defaults are the excitatory-cell values: resting and reset at -65 mV,
    excitatory reversal at 0 mV, inhibitory reversal at -100 mV, a 100 ms
    membrane time constant, and 1 ms conductance decay. The firing threshold
    of a neuron is ``v_th_const`` plus its adaptive offset theta, so a fixed
    threshold is expressed as a disabled theta sitting at its initial value.

    All potentials are mV, all time constants ms.
    """

    e_rest: float = -65.0
    e_exc: float = 0.0
    e_inh: float = -100.0
    e_reset: float = -65.0
    tau_m: float = 100.0
    tau_ge: float = 1.0
    tau_gi: float = 1.0
    v_th_const: float = -72.0
    t_refractory: float = 2.0

    def __post_init__(self):
        if not (self.e_inh < self.e_rest < self.e_exc):
            raise ContractViolation(
                "reversal potentials must satisfy e_inh < e_rest < e_exc, got "
                f"{self.e_inh}, {self.e_rest}, {self.e_exc}"
            )
        for name in ("tau_m", "tau_ge", "tau_gi"):
            if getattr(self, name) <= 0.0:
                raise ContractViolation(f"{name} must be positive")
        if self.t_refractory < 0.0:
            raise ContractViolation("t_refractory must be non-negative")


@dataclass(frozen=True)
class ThetaParams:
    """Adaptive-threshold constants.

    Theta decays exponentially with ``tau_theta`` and jumps on each spike by
    ``(alpha / tau_theta) * theta_init / max(|2*theta - theta_init|, denom_floor)``
    where theta is the post-decay value at the moment of the spike. The floor
    keeps the jump finite when theta crosses ``theta_init / 2``, where the
    bare expression has a pole.

    ``enabled=False`` freezes theta at whatever value the state holds, which
    is how populations with a fixed threshold are configured.
    """

    tau_theta: float = 6.0e6
    alpha: float = 8.4e5
    theta_init: float = 20.0
    denom_floor: float = 1e-2
    enabled: bool = True

    def __post_init__(self):
        if self.tau_theta <= 0.0:
            raise ContractViolation("tau_theta must be positive")
        if self.denom_floor <= 0.0:
            raise ContractViolation("denom_floor must be positive")


@dataclass
class LayerState:
    """Per-neuron dynamic state for one population.

    Fields:
        v: membrane potentials, mV.
        g_exc, g_inh: conductances, dimensionless weight units.
        theta: adaptive threshold offsets, mV.
        ref_until: absolute times until which each neuron is refractory, ms.
        spiked: boolean flags from the most recent fire_and_reset call.
    """

    v: np.ndarray
    g_exc: np.ndarray
    g_inh: np.ndarray
    theta: np.ndarray
    ref_until: np.ndarray
    spiked: np.ndarray

    @classmethod
    def resting(cls, n: int, params: NeuronParams, theta: ThetaParams) -> "LayerState":
        """Fresh state: v at rest, zero conductance, theta at its initial value."""
        return cls(
            v=np.full(n, params.e_rest, dtype=np.float64),
            g_exc=np.zeros(n, dtype=np.float64),
            g_inh=np.zeros(n, dtype=np.float64),
            theta=np.full(n, theta.theta_init, dtype=np.float64),
            ref_until=np.zeros(n, dtype=np.float64),
            spiked=np.zeros(n, dtype=bool),
        )

    @property
    def n(self) -> int:
        return self.v.shape[0]

    def copy(self) -> "LayerState":
        return LayerState(
            v=self.v.copy(),
            g_exc=self.g_exc.copy(),
            g_inh=self.g_inh.copy(),
            theta=self.theta.copy(),
            ref_until=self.ref_until.copy(),
            spiked=self.spiked.copy(),
        )


def decay_conductances(state: LayerState, params: NeuronParams, dt: float) -> LayerState:
    """Exact exponential decay of both conductances over one step."""
    state.g_exc *= math.exp(-dt / params.tau_ge)
    state.g_inh *= math.exp(-dt / params.tau_gi)
    return state


def inject_spikes(
    state: LayerState, incoming_exc: np.ndarray, incoming_inh: np.ndarray
) -> LayerState:
    """Add queued synaptic drive to the conductances.

    The increments are total weight delivered to each neuron this step
    (already summed over presynaptic spikes). Negative entries indicate a
    wiring bug upstream and are rejected.
    """
    if np.any(incoming_exc < 0.0) or np.any(incoming_inh < 0.0):
        raise ContractViolation("conductance increments must be non-negative")
    state.g_exc += incoming_exc
    state.g_inh += incoming_inh
    return state


def step_membrane(state: LayerState, params: NeuronParams, dt: float, now: float) -> LayerState:
    """One forward-Euler membrane update.

    Non-refractory neurons integrate the leak plus both synaptic currents;
    refractory neurons are clamped at the reset potential. Raises
    SimulationFault if any potential or conductance is non-finite afterwards.
    """
    v = state.v
    drive = (params.e_rest - v) + state.g_exc * (params.e_exc - v) + state.g_inh * (params.e_inh - v)
    v_next = v + (dt / params.tau_m) * drive
    state.v = np.where(now >= state.ref_until, v_next, params.e_reset)
    if not (
        np.isfinite(state.v).all()
        and np.isfinite(state.g_exc).all()
        and np.isfinite(state.g_inh).all()
    ):
        bad = np.flatnonzero(
            ~(np.isfinite(state.v) & np.isfinite(state.g_exc) & np.isfinite(state.g_inh))
        )
        idx = int(bad[0])
        raise SimulationFault(f"non-finite membrane state at neuron {idx}", neuron=idx)
    return state


def fire_and_reset(
    state: LayerState, params: NeuronParams, theta: ThetaParams, now: float
) -> tuple[LayerState, np.ndarray]:
    """Detect threshold crossings, reset them, start refractory periods.

    A neuron spikes when it is not refractory and ``v >= v_th_const + theta``.
    Returns the spiking indices in ascending order.
    """
    eligible = now >= state.ref_until
    mask = eligible & (state.v >= params.v_th_const + state.theta)
    spikes = np.flatnonzero(mask)
    state.v[spikes] = params.e_reset
    state.ref_until[spikes] = now + params.t_refractory
    state.spiked = mask
    return state, spikes


def update_theta(
    state: LayerState, theta: ThetaParams, spikes: np.ndarray, dt: float
) -> LayerState:
    """Decay theta and apply the on-spike jump.

    The jump divisor uses the post-decay theta, floored at ``denom_floor`` to
    stay finite near the pole at theta_init / 2. Disabled theta is left
    untouched entirely, decay included.
    """
    if not theta.enabled:
        return state
    state.theta *= math.exp(-dt / theta.tau_theta)
    if len(spikes):
        th = state.theta[spikes]
        denom = np.maximum(np.abs(2.0 * th - theta.theta_init), theta.denom_floor)
        state.theta[spikes] = th + (theta.alpha / theta.tau_theta) * theta.theta_init / denom
    return state
