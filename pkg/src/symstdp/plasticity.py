"""Symmetric STDP with eligibility traces, plus divisive synaptic scaling.

The pair rule potentiates on BOTH orderings: a presynaptic spike followed by a
postsynaptic one adds ``a_plus * exp(-dt_pair / tau_plus)``, and the reverse
ordering adds ``a_minus * exp(dt_pair / tau_minus)``. There is no depression
term; competition comes entirely from scaling, which renormalizes each
postsynaptic neuron's total afferent weight to ``beta * n_pre`` at the end of
every sample cycle. Together the two give a running estimate of which inputs
co-occur with the neuron's firing, normalized to a fixed budget.

The trace realization is all-to-all: ``x_pre`` decays with tau_plus and bumps
by 1 on each presynaptic spike, ``x_post`` mirrors it for the postsynaptic
side. On a postsynaptic spike every afferent weight gains ``a_plus * x_pre``;
on a presynaptic spike every efferent weight gains ``a_minus * x_post``. Both
phases read the traces before this step's increments, so a simultaneous pair
contributes nothing, matching the pair rule at dt_pair = 0 limits taken from
either side only for later spikes.

Update order inside one step is fixed and load-bearing for reproducibility:
postsynaptic phase, then presynaptic phase, then trace increments, then the
clamp of every touched row and column to [0, w_max].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .neurodyn import ContractViolation

if TYPE_CHECKING:
    from .topology import SynapseMatrix


@dataclass(frozen=True)
class StdpParams:
    """Pair-rule amplitudes and time constants (ms).

    Amplitudes are in weight units of the matrix they drive, so matrices with
    different w_max get proportionally different defaults.
    """

    a_plus: float = 0.01
    a_minus: float = 0.01
    tau_plus: float = 20.0
    tau_minus: float = 20.0

    def __post_init__(self):
        if self.tau_plus <= 0.0 or self.tau_minus <= 0.0:
            raise ContractViolation("STDP time constants must be positive")
        if self.a_plus < 0.0 or self.a_minus < 0.0:
            raise ContractViolation("STDP amplitudes must be non-negative")


@dataclass(frozen=True)
class ScalingParams:
    """Divisive normalization target: each column sums to beta * n_pre.

    Columns whose sum is below ``sum_floor`` are left alone rather than
    amplified from numerical dust.
    """

    beta: float = 0.1
    sum_floor: float = 1e-6

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ContractViolation("beta must be positive")


@dataclass
class TraceState:
    """Eligibility traces for one plastic matrix."""

    x_pre: np.ndarray
    x_post: np.ndarray

    @classmethod
    def zeros(cls, n_pre: int, n_post: int) -> "TraceState":
        return cls(
            x_pre=np.zeros(n_pre, dtype=np.float64),
            x_post=np.zeros(n_post, dtype=np.float64),
        )

    def copy(self) -> "TraceState":
        return TraceState(self.x_pre.copy(), self.x_post.copy())


def decay_traces(traces: TraceState, params: StdpParams, dt: float) -> TraceState:
    traces.x_pre *= math.exp(-dt / params.tau_plus)
    traces.x_post *= math.exp(-dt / params.tau_minus)
    return traces


def on_spikes(
    matrix: "SynapseMatrix",
    traces: TraceState,
    pre_spikes: np.ndarray,
    post_spikes: np.ndarray,
    params: StdpParams,
) -> None:
    """Apply one step of the pair rule for the given spike sets.

    Spike index arrays must be ascending. Weights touched this step are
    clamped to [0, w_max] after both phases have been applied.
    """
    if not matrix.plastic:
        raise ContractViolation("on_spikes called on a non-plastic matrix")
    w = matrix.weights
    for j in post_spikes:
        w[:, j] += params.a_plus * traces.x_pre
    for i in pre_spikes:
        w[i, :] += params.a_minus * traces.x_post
    traces.x_pre[pre_spikes] += 1.0
    traces.x_post[post_spikes] += 1.0
    for j in post_spikes:
        np.clip(w[:, j], 0.0, matrix.w_max, out=w[:, j])
    for i in pre_spikes:
        np.clip(w[i, :], 0.0, matrix.w_max, out=w[i, :])


def scale_in_synapses(matrix: "SynapseMatrix", params: ScalingParams) -> None:
    """Renormalize every column to sum to beta * n_pre.

    The postcondition is exact column sums, so no clamp runs afterwards; a
    column concentrated on very few synapses can transiently exceed w_max
    until STDP touches it again. Sub-floor columns are skipped.
    """
    if not matrix.plastic:
        raise ContractViolation("scale_in_synapses called on a non-plastic matrix")
    w = matrix.weights
    target = params.beta * w.shape[0]
    sums = w.sum(axis=0)
    scalable = sums >= params.sum_floor
    factors = np.ones_like(sums)
    factors[scalable] = target / sums[scalable]
    w *= factors
