"""Network wiring: layers, synapse matrices, construction, propagation.

The architecture is a feedforward chain with one recurrent inhibition motif:
input spikes excite a hidden excitatory layer through the first plastic
matrix, each hidden cell drives its private inhibitory partner one-to-one,
and every inhibitory cell projects back onto all hidden cells except its own
partner. That lateral loop enforces competition between hidden cells. The
hidden layer drives the output (label) layer through the second plastic
matrix. With ``hidden_blocks=0`` the chain degenerates to a single plastic
matrix from input directly to the output layer.

Spikes take exactly one step to travel any matrix: propagation computes the
conductance increments that ``inject_spikes`` will apply at the next step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoding import PURPOSE_INIT, RngStream
from .neurodyn import ContractViolation, LayerState, NeuronParams, ThetaParams
from .plasticity import ScalingParams, StdpParams, TraceState

EXCITATORY = "excitatory"
INHIBITORY = "inhibitory"


@dataclass
class SynapseMatrix:
    """Dense weight matrix, rows presynaptic, columns postsynaptic."""

    weights: np.ndarray
    w_max: float
    plastic: bool
    kind: str = EXCITATORY

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ContractViolation("weights must be 2-D")
        if self.kind not in (EXCITATORY, INHIBITORY):
            raise ContractViolation(f"unknown synapse kind {self.kind!r}")
        if self.kind == INHIBITORY and self.plastic:
            raise ContractViolation("inhibitory matrices are fixed")
        if self.w_max <= 0.0:
            raise ContractViolation("w_max must be positive")
        if self.weights.size and (self.weights.min() < 0.0 or self.weights.max() > self.w_max):
            raise ContractViolation("initial weights must lie in [0, w_max]")

    @property
    def n_pre(self) -> int:
        return self.weights.shape[0]

    @property
    def n_post(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "SynapseMatrix":
        return SynapseMatrix(self.weights.copy(), self.w_max, self.plastic, self.kind)


def default_inhibitory_params() -> NeuronParams:
    # fast, non-adapting interneurons; reset sits just under threshold
    return NeuronParams(
        e_rest=-60.0,
        e_reset=-45.0,
        tau_m=10.0,
        v_th_const=-40.0,
        t_refractory=2.0,
    )


def fixed_theta(value: float) -> ThetaParams:
    """A disabled theta pinned at ``value``; threshold = v_th_const + value."""
    return ThetaParams(theta_init=value, enabled=False)


@dataclass(frozen=True)
class NetworkConfig:
    """Sizes, wiring constants, and per-population parameters.

    The output layer reuses the excitatory membrane constants with a fixed
    threshold of -52 mV (expressed as v_th_const -72 plus a frozen 20 mV
    theta), so its excitability matches hidden cells at their initial state.
    """

    n_input: int = 784
    n_hidden: int = 100
    n_labels: int = 10
    hidden_blocks: int = 1
    w_max_in: float = 1.0
    w_max_out: float = 8.0
    w_exc_to_inh: float = 10.4
    w_inh_to_exc: float = 17.4
    init_fraction: float = 0.3
    seed: int = 0
    exc_params: NeuronParams = field(default_factory=NeuronParams)
    inh_params: NeuronParams = field(default_factory=default_inhibitory_params)
    sl_params: NeuronParams = field(default_factory=NeuronParams)
    theta_exc: ThetaParams = field(default_factory=ThetaParams)
    theta_inh: ThetaParams = field(default_factory=lambda: fixed_theta(0.0))
    theta_sl: ThetaParams = field(default_factory=lambda: fixed_theta(20.0))
    stdp_in: StdpParams | None = None
    stdp_out: StdpParams | None = None
    scaling_in: ScalingParams = field(default_factory=ScalingParams)
    # Readout columns collect from the ~N/10 hidden cells serving one class;
    # a budget of 0.8*N parks those cells at w_max_out so a few presynaptic
    # spikes suffice to lift the output membrane 13 mV to threshold. The
    # 0.1 budget that suits the 784-wide feature fan-in leaves the readout
    # silent at test time.
    scaling_out: ScalingParams = field(default_factory=lambda: ScalingParams(beta=0.8))

    def __post_init__(self):
        if self.hidden_blocks not in (0, 1):
            raise ContractViolation("hidden_blocks must be 0 or 1")
        for name in ("n_input", "n_labels"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be at least 1")
        if self.hidden_blocks == 1 and self.n_hidden < 1:
            raise ContractViolation("n_hidden must be at least 1")
        if not (0.0 < self.init_fraction <= 1.0):
            raise ContractViolation("init_fraction must be in (0, 1]")
        # amplitude defaults scale with the range of the matrix they drive
        if self.stdp_in is None:
            object.__setattr__(
                self,
                "stdp_in",
                StdpParams(a_plus=0.01 * self.w_max_in, a_minus=0.01 * self.w_max_in),
            )
        if self.stdp_out is None:
            object.__setattr__(
                self,
                "stdp_out",
                StdpParams(a_plus=0.01 * self.w_max_out, a_minus=0.01 * self.w_max_out),
            )

    @property
    def has_hidden(self) -> bool:
        return self.hidden_blocks == 1


@dataclass
class Network:
    """All layer states, matrices, and traces of one model instance.

    With ``hidden_blocks=0`` the hidden fields and w_out are None and w_in
    connects input directly to the output layer.
    """

    config: NetworkConfig
    sl: LayerState
    w_in: SynapseMatrix
    traces_in: TraceState
    hidden_exc: LayerState | None = None
    hidden_inh: LayerState | None = None
    w_ei: SynapseMatrix | None = None
    w_ie: SynapseMatrix | None = None
    w_out: SynapseMatrix | None = None
    traces_out: TraceState | None = None

    @property
    def has_hidden(self) -> bool:
        return self.hidden_exc is not None

    def copy(self) -> "Network":
        return Network(
            config=self.config,
            sl=self.sl.copy(),
            w_in=self.w_in.copy(),
            traces_in=self.traces_in.copy(),
            hidden_exc=self.hidden_exc.copy() if self.hidden_exc else None,
            hidden_inh=self.hidden_inh.copy() if self.hidden_inh else None,
            w_ei=self.w_ei.copy() if self.w_ei else None,
            w_ie=self.w_ie.copy() if self.w_ie else None,
            w_out=self.w_out.copy() if self.w_out else None,
            traces_out=self.traces_out.copy() if self.traces_out else None,
        )


def network_config_to_dict(config: NetworkConfig) -> dict:
    """Plain-data form of a config, safe to serialize as JSON."""
    from dataclasses import asdict

    return asdict(config)


def network_config_from_dict(data: dict) -> NetworkConfig:
    """Inverse of :func:`network_config_to_dict`."""
    d = dict(data)
    for key in ("exc_params", "inh_params", "sl_params"):
        d[key] = NeuronParams(**d[key])
    for key in ("theta_exc", "theta_inh", "theta_sl"):
        d[key] = ThetaParams(**d[key])
    for key in ("stdp_in", "stdp_out"):
        if d.get(key) is not None:
            d[key] = StdpParams(**d[key])
    for key in ("scaling_in", "scaling_out"):
        d[key] = ScalingParams(**d[key])
    return NetworkConfig(**d)


def build_network(config: NetworkConfig, rng_seed: int | None = None) -> Network:
    """Construct a network with independently seeded uniform plastic weights.

    Plastic weights are i.i.d. uniform on [0, init_fraction * w_max). Each
    matrix draws from its own stream keyed by (seed, init purpose, matrix
    index), so adding or removing a matrix never shifts another's init.
    """
    seed = config.seed if rng_seed is None else rng_seed

    def init_weights(n_pre, n_post, w_max, matrix_index):
        gen = RngStream(seed, PURPOSE_INIT, sample_id=0, extra=matrix_index).generator()
        return gen.random((n_pre, n_post)) * (config.init_fraction * w_max)

    if config.has_hidden:
        nh = config.n_hidden
        w_in = SynapseMatrix(
            init_weights(config.n_input, nh, config.w_max_in, 0),
            w_max=config.w_max_in,
            plastic=True,
        )
        w_out = SynapseMatrix(
            init_weights(nh, config.n_labels, config.w_max_out, 1),
            w_max=config.w_max_out,
            plastic=True,
        )
        w_ei = SynapseMatrix(
            np.eye(nh) * config.w_exc_to_inh,
            w_max=config.w_exc_to_inh,
            plastic=False,
        )
        ie = np.full((nh, nh), config.w_inh_to_exc)
        np.fill_diagonal(ie, 0.0)  # a cell never inhibits its own driver
        w_ie = SynapseMatrix(ie, w_max=config.w_inh_to_exc, plastic=False, kind=INHIBITORY)
        return Network(
            config=config,
            sl=LayerState.resting(config.n_labels, config.sl_params, config.theta_sl),
            w_in=w_in,
            traces_in=TraceState.zeros(config.n_input, nh),
            hidden_exc=LayerState.resting(nh, config.exc_params, config.theta_exc),
            hidden_inh=LayerState.resting(nh, config.inh_params, config.theta_inh),
            w_ei=w_ei,
            w_ie=w_ie,
            w_out=w_out,
            traces_out=TraceState.zeros(nh, config.n_labels),
        )

    w_in = SynapseMatrix(
        init_weights(config.n_input, config.n_labels, config.w_max_out, 0),
        w_max=config.w_max_out,
        plastic=True,
    )
    return Network(
        config=config,
        sl=LayerState.resting(config.n_labels, config.sl_params, config.theta_sl),
        w_in=w_in,
        traces_in=TraceState.zeros(config.n_input, config.n_labels),
    )


@dataclass
class ConductanceDeltas:
    """Per-layer conductance increments produced by one step's spikes."""

    hidden_g_exc: np.ndarray | None
    hidden_g_inh: np.ndarray | None
    inh_g_exc: np.ndarray | None
    sl_g_exc: np.ndarray


def propagate(
    network: Network,
    input_spikes: np.ndarray,
    hidden_spikes: np.ndarray | None = None,
    inh_spikes: np.ndarray | None = None,
) -> ConductanceDeltas:
    """Accumulate this step's spikes into next-step conductance increments.

    Accumulation is a plain per-spike loop in ascending index order; the
    order is part of the reproducibility contract (floating-point addition
    does not commute), so no reduction shortcuts here.
    """
    if network.has_hidden:
        nh = network.config.n_hidden
        d_he = np.zeros(nh, dtype=np.float64)
        d_hi = np.zeros(nh, dtype=np.float64)
        d_ie = np.zeros(nh, dtype=np.float64)
        d_sl = np.zeros(network.config.n_labels, dtype=np.float64)
        for i in input_spikes:
            d_he += network.w_in.weights[i, :]
        if inh_spikes is not None:
            for i in inh_spikes:
                d_hi += network.w_ie.weights[i, :]
        if hidden_spikes is not None:
            for i in hidden_spikes:
                d_ie += network.w_ei.weights[i, :]
                d_sl += network.w_out.weights[i, :]
        return ConductanceDeltas(d_he, d_hi, d_ie, d_sl)

    d_sl = np.zeros(network.config.n_labels, dtype=np.float64)
    for i in input_spikes:
        d_sl += network.w_in.weights[i, :]
    return ConductanceDeltas(None, None, None, d_sl)
