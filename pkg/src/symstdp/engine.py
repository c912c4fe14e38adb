"""Span drivers: one semantics, two execution paths.

A span is a fixed number of steps with fixed mode flags (teacher on or off,
output dynamics on or off, which matrices learn, whether thresholds adapt).
Presentations are built from spans: one stimulus span per boost attempt,
then one rest span. The reference path composes the public layer/plasticity
operations step by step; the fast path hands the same arrays to the compiled
kernel. Both paths must produce bit-identical state, which is verified by
test, so either can be used interchangeably at any point in a run.

State layout note: pending conductance buffers hold spikes in flight (emitted
last step, delivered next step) and belong to the simulation state proper;
they are checkpointed along with membranes and traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernel
from .encoding import (
    PURPOSE_INPUT,
    PURPOSE_TEACHER,
    EncodingParams,
    RngStream,
    image_to_rates,
    input_raster,
    needs_retry,
    teacher_raster,
)
from .neurodyn import (
    ContractViolation,
    LayerState,
    NeuronParams,
    SimulationFault,
    ThetaParams,
    decay_conductances,
    fire_and_reset,
    inject_spikes,
    step_membrane,
    update_theta,
)
from .plasticity import decay_traces, on_spikes
from .topology import Network, propagate

_EMPTY_IDX = np.array([], dtype=np.int64)


@dataclass(frozen=True)
class SimParams:
    """Clock and schedule constants (ms)."""

    dt: float = 0.5
    t_present: float = 350.0
    t_rest: float = 150.0
    retry_in_eval: bool = True

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ContractViolation("dt must be positive")
        for name in ("t_present", "t_rest"):
            value = getattr(self, name)
            steps = value / self.dt
            if abs(steps - round(steps)) > 1e-9:
                raise ContractViolation(f"{name} must be a whole number of steps")

    @property
    def present_steps(self) -> int:
        return round(self.t_present / self.dt)

    @property
    def rest_steps(self) -> int:
        return round(self.t_rest / self.dt)


@dataclass(frozen=True)
class SpanFlags:
    """What is active during a span."""

    teacher_on: bool = False
    sl_dynamics: bool = False
    stdp_in: bool = False
    stdp_out: bool = False
    theta_adapt: bool = False

    def __post_init__(self):
        if self.teacher_on and self.sl_dynamics:
            raise ContractViolation(
                "output spikes come from the teacher or from dynamics, never both"
            )


@dataclass
class SimState:
    """A network plus everything transient a step needs: clock and in-flight spikes."""

    network: Network
    step: int = 0
    pend_hidden_exc: np.ndarray | None = None
    pend_hidden_inh: np.ndarray | None = None
    pend_inh_exc: np.ndarray | None = None
    pend_sl_exc: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def fresh(cls, network: Network) -> "SimState":
        nh = network.config.n_hidden if network.has_hidden else 0
        return cls(
            network=network,
            step=0,
            pend_hidden_exc=np.zeros(nh) if network.has_hidden else None,
            pend_hidden_inh=np.zeros(nh) if network.has_hidden else None,
            pend_inh_exc=np.zeros(nh) if network.has_hidden else None,
            pend_sl_exc=np.zeros(network.config.n_labels),
        )

    def copy(self) -> "SimState":
        return SimState(
            network=self.network.copy(),
            step=self.step,
            pend_hidden_exc=None if self.pend_hidden_exc is None else self.pend_hidden_exc.copy(),
            pend_hidden_inh=None if self.pend_hidden_inh is None else self.pend_hidden_inh.copy(),
            pend_inh_exc=None if self.pend_inh_exc is None else self.pend_inh_exc.copy(),
            pend_sl_exc=self.pend_sl_exc.copy(),
        )


def fresh_eval_state(network: Network) -> SimState:
    """Resting-state clone for one evaluation presentation.

    Weights and traces are shared read-only with the trained network (nothing
    learns during evaluation); membranes start at rest, conductances at zero,
    refractory timers cleared, and thresholds copy the trained values frozen.
    """
    cfg = network.config
    clone = Network(
        config=cfg,
        sl=LayerState.resting(cfg.n_labels, cfg.sl_params, cfg.theta_sl),
        w_in=network.w_in,
        traces_in=network.traces_in,
        w_ei=network.w_ei,
        w_ie=network.w_ie,
        w_out=network.w_out,
        traces_out=network.traces_out,
    )
    clone.sl.theta[:] = network.sl.theta
    if network.has_hidden:
        clone.hidden_exc = LayerState.resting(cfg.n_hidden, cfg.exc_params, cfg.theta_exc)
        clone.hidden_exc.theta[:] = network.hidden_exc.theta
        clone.hidden_inh = LayerState.resting(cfg.n_hidden, cfg.inh_params, cfg.theta_inh)
    return SimState.fresh(clone)


def raster_to_indices(raster: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flatten a boolean raster into per-step index runs.

    Returns (indices, offsets) where step s spikes are
    ``indices[offsets[s]:offsets[s+1]]``, ascending within each step.
    """
    n_steps = raster.shape[0]
    rows, cols = np.nonzero(raster)
    offsets = np.searchsorted(rows, np.arange(n_steps + 1)).astype(np.int64)
    return cols.astype(np.int64), offsets


def _empty_span_input(n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    return _EMPTY_IDX, np.zeros(n_steps + 1, dtype=np.int64)


def pack_neuron(p: NeuronParams, dt: float) -> np.ndarray:
    return np.array(
        [
            p.e_rest,
            p.e_exc,
            p.e_inh,
            p.e_reset,
            dt / p.tau_m,
            p.v_th_const,
            p.t_refractory,
            math.exp(-dt / p.tau_ge),
            math.exp(-dt / p.tau_gi),
        ]
    )


def pack_theta(t: ThetaParams, dt: float) -> np.ndarray:
    return np.array(
        [
            math.exp(-dt / t.tau_theta),
            t.alpha / t.tau_theta,
            t.theta_init,
            t.denom_floor,
        ]
    )


def pack_stdp(params, w_max: float, dt: float) -> np.ndarray:
    return np.array(
        [
            params.a_plus,
            params.a_minus,
            math.exp(-dt / params.tau_plus),
            math.exp(-dt / params.tau_minus),
            w_max,
        ]
    )


_ZERO_F64 = np.zeros(0)
_ZERO_PACK = np.zeros(9)
_ZERO_TPACK = np.zeros(4)
_ZERO_SPACK = np.zeros(5)
_ZERO_W = np.zeros((0, 0))
_ZERO_U8 = np.zeros(0, dtype=np.uint8)


def _run_span_kernel(
    state: SimState,
    n_steps: int,
    flags: SpanFlags,
    in_idx: np.ndarray,
    in_off: np.ndarray,
    teacher_flags: np.ndarray | None,
    teacher_label: int,
    dt: float,
    cnt_hidden: np.ndarray,
    cnt_sl: np.ndarray,
) -> None:
    net = state.network
    cfg = net.config
    t0 = state.step * dt
    if net.has_hidden:
        e = net.hidden_exc
        i = net.hidden_inh
        args_hidden = (
            e.v, e.g_exc, e.g_inh, e.theta, e.ref_until,
            state.pend_hidden_exc, state.pend_hidden_inh,
            pack_neuron(cfg.exc_params, dt), pack_theta(cfg.theta_exc, dt),
            i.v, i.g_exc, i.g_inh, i.ref_until, state.pend_inh_exc,
            pack_neuron(cfg.inh_params, dt),
        )
        weights = (
            net.w_in.weights,
            np.ascontiguousarray(np.diag(net.w_ei.weights)),
            net.w_ie.weights,
            net.w_out.weights,
        )
        traces = (
            net.traces_in.x_pre, net.traces_in.x_post,
            net.traces_out.x_pre, net.traces_out.x_post,
            pack_stdp(cfg.stdp_in, cfg.w_max_in, dt),
            pack_stdp(cfg.stdp_out, cfg.w_max_out, dt),
        )
    else:
        args_hidden = (
            _ZERO_F64, _ZERO_F64, _ZERO_F64, _ZERO_F64, _ZERO_F64,
            _ZERO_F64, _ZERO_F64, _ZERO_PACK, _ZERO_TPACK,
            _ZERO_F64, _ZERO_F64, _ZERO_F64, _ZERO_F64, _ZERO_F64,
            _ZERO_PACK,
        )
        weights = (net.w_in.weights, _ZERO_F64, _ZERO_W, _ZERO_W)
        traces = (
            net.traces_in.x_pre, net.traces_in.x_post,
            _ZERO_F64, _ZERO_F64,
            pack_stdp(cfg.stdp_in, net.w_in.w_max, dt),
            _ZERO_SPACK,
        )
    sl = net.sl
    fault = kernel.run_span(
        n_steps,
        dt,
        t0,
        net.has_hidden,
        in_idx,
        in_off,
        _ZERO_U8 if teacher_flags is None else teacher_flags,
        teacher_label if flags.teacher_on else -1,
        flags.sl_dynamics,
        flags.stdp_in,
        flags.stdp_out,
        flags.theta_adapt and cfg.theta_exc.enabled,
        *args_hidden,
        sl.v, sl.g_exc, sl.g_inh, sl.theta, sl.ref_until, state.pend_sl_exc,
        pack_neuron(cfg.sl_params, dt),
        *weights,
        *traces,
        cnt_hidden,
        cnt_sl,
    )
    if fault != kernel.FAULT_NONE:
        layer = {1: "hidden excitatory", 2: "hidden inhibitory", 3: "output"}[fault >> 32]
        index = (fault & 0xFFFFFFFF) - 1
        raise SimulationFault(
            f"non-finite state in {layer} layer at neuron {index}", neuron=index
        )


def _run_span_reference(
    state: SimState,
    n_steps: int,
    flags: SpanFlags,
    in_idx: np.ndarray,
    in_off: np.ndarray,
    teacher_flags: np.ndarray | None,
    teacher_label: int,
    dt: float,
    cnt_hidden: np.ndarray,
    cnt_sl: np.ndarray,
) -> None:
    net = state.network
    cfg = net.config
    nh = cfg.n_hidden if net.has_hidden else 0
    zeros_h = np.zeros(nh)
    zeros_sl = np.zeros(cfg.n_labels)
    for s in range(n_steps):
        now = (state.step + s) * dt
        in_spikes = in_idx[in_off[s]:in_off[s + 1]]
        e_spikes = _EMPTY_IDX
        i_spikes = _EMPTY_IDX

        if net.has_hidden:
            e = net.hidden_exc
            decay_conductances(e, cfg.exc_params, dt)
            inject_spikes(e, state.pend_hidden_exc, state.pend_hidden_inh)
            step_membrane(e, cfg.exc_params, dt, now)
            _, e_spikes = fire_and_reset(e, cfg.exc_params, cfg.theta_exc, now)
            if flags.theta_adapt:
                update_theta(e, cfg.theta_exc, e_spikes, dt)
            cnt_hidden[e_spikes] += 1

            i = net.hidden_inh
            decay_conductances(i, cfg.inh_params, dt)
            inject_spikes(i, state.pend_inh_exc, zeros_h)
            step_membrane(i, cfg.inh_params, dt, now)
            _, i_spikes = fire_and_reset(i, cfg.inh_params, cfg.theta_inh, now)

        if flags.sl_dynamics:
            sl = net.sl
            decay_conductances(sl, cfg.sl_params, dt)
            inject_spikes(sl, state.pend_sl_exc, zeros_sl)
            step_membrane(sl, cfg.sl_params, dt, now)
            _, sl_spikes = fire_and_reset(sl, cfg.sl_params, cfg.theta_sl, now)
        elif flags.teacher_on and teacher_flags is not None and teacher_flags[s]:
            sl_spikes = np.array([teacher_label], dtype=np.int64)
        else:
            sl_spikes = _EMPTY_IDX
        cnt_sl[sl_spikes] += 1

        if flags.stdp_in:
            post = e_spikes if net.has_hidden else sl_spikes
            decay_traces(net.traces_in, cfg.stdp_in, dt)
            on_spikes(net.w_in, net.traces_in, in_spikes, post, cfg.stdp_in)
        if flags.stdp_out and net.has_hidden:
            decay_traces(net.traces_out, cfg.stdp_out, dt)
            on_spikes(net.w_out, net.traces_out, e_spikes, sl_spikes, cfg.stdp_out)

        deltas = propagate(net, in_spikes, e_spikes, i_spikes)
        if net.has_hidden:
            state.pend_hidden_exc = deltas.hidden_g_exc
            state.pend_hidden_inh = deltas.hidden_g_inh
            state.pend_inh_exc = deltas.inh_g_exc
        state.pend_sl_exc = deltas.sl_g_exc


def run_span(
    state: SimState,
    n_steps: int,
    flags: SpanFlags,
    dt: float,
    in_idx: np.ndarray | None = None,
    in_off: np.ndarray | None = None,
    teacher_flags: np.ndarray | None = None,
    teacher_label: int = -1,
    use_kernel: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance the state by one span. Returns (hidden counts, output counts)."""
    net = state.network
    if in_idx is None or in_off is None:
        in_idx, in_off = _empty_span_input(n_steps)
    cnt_hidden = np.zeros(net.config.n_hidden if net.has_hidden else 0, dtype=np.int64)
    cnt_sl = np.zeros(net.config.n_labels, dtype=np.int64)
    runner = _run_span_kernel if use_kernel else _run_span_reference
    runner(
        state, n_steps, flags, in_idx, in_off,
        teacher_flags, teacher_label, dt, cnt_hidden, cnt_sl,
    )
    state.step += n_steps
    return cnt_hidden, cnt_sl


@dataclass
class PresentationResult:
    """Spike counts from the final stimulus attempt of one presentation."""

    hidden_counts: np.ndarray
    sl_counts: np.ndarray
    boosts_used: int


def run_presentation(
    state: SimState,
    pixels: np.ndarray,
    label: int,
    flags: SpanFlags,
    seed: int,
    sample_id: int,
    enc: EncodingParams,
    sim: SimParams,
    input_purpose: int = PURPOSE_INPUT,
    retry: bool = True,
    rest: bool = True,
    use_kernel: bool = True,
) -> PresentationResult:
    """One full sample cycle: boosted stimulus attempts, then the rest span.

    Weak responses (counted on the first non-input excitatory layer during
    the 350 ms stimulus) trigger a re-presentation with a higher peak rate,
    up to the retry budget; every attempt's plasticity is kept. The counts
    reported are those of the final attempt. The rest span runs with no
    input and no teacher but with the same plasticity flags; callers that
    throw the state away afterwards (evaluation runs on fresh per-sample
    states) skip it with ``rest=False``.
    """
    pixels = np.asarray(pixels, dtype=np.float64).ravel()
    boost = 0
    while True:
        rates = image_to_rates(pixels, boost, enc)
        in_stream = RngStream(seed, input_purpose, sample_id, boost)
        raster = input_raster(rates, sim.present_steps, in_stream, enc)
        in_idx, in_off = raster_to_indices(raster)
        teacher = None
        if flags.teacher_on:
            t_stream = RngStream(seed, PURPOSE_TEACHER, sample_id, boost)
            teacher = teacher_raster(sim.present_steps, t_stream, enc).astype(np.uint8)
        cnt_hidden, cnt_sl = run_span(
            state, sim.present_steps, flags, sim.dt,
            in_idx=in_idx, in_off=in_off,
            teacher_flags=teacher, teacher_label=label,
            use_kernel=use_kernel,
        )
        responding = cnt_hidden if state.network.has_hidden else cnt_sl
        if retry and needs_retry(int(responding.sum()), boost, enc):
            boost += 1
            continue
        break
    if rest:
        rest_flags = SpanFlags(
            teacher_on=False,
            sl_dynamics=flags.sl_dynamics,
            stdp_in=flags.stdp_in,
            stdp_out=flags.stdp_out,
            theta_adapt=flags.theta_adapt,
        )
        run_span(state, sim.rest_steps, rest_flags, sim.dt, use_kernel=use_kernel)
    return PresentationResult(hidden_counts=cnt_hidden, sl_counts=cnt_sl, boosts_used=boost)
