"""Rate coding of images into Poisson spike trains, and the retry policy.

Every random draw in a run comes from a counter-based generator keyed by
(root seed, purpose, sample id, attempt). That makes the full spike raster of
a presentation a pure function of those four integers: workers can generate
it in any order, a resumed run regenerates exactly the same spikes, and a
single (neuron, step) entry can be reproduced in isolation without drawing
anything that precedes it.

The per-step and whole-presentation sampling paths are bit-identical because
the generator counter advances in 4-draw blocks: a presentation raster of
shape (n_steps, n) consumes ceil(n/4) blocks per step, and the per-step path
starts its generator at exactly that block offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neurodyn import ContractViolation

# Stream purposes. Values are stable identifiers baked into checkpoints and
# must never be renumbered. Training inputs key by a global presentation
# counter; evaluation and probe inputs key by dataset index, with separate
# purposes per split so the streams never collide.
PURPOSE_INPUT = 1
PURPOSE_TEACHER = 2
PURPOSE_INIT = 3
PURPOSE_SHUFFLE = 4
PURPOSE_SYNTH = 5
PURPOSE_EVAL = 6
PURPOSE_PROBE = 7

# Philox emits 4 doubles per counter increment.
_DRAWS_PER_BLOCK = 4


@dataclass(frozen=True)
class EncodingParams:
    """Rate-coding constants.

    The peak firing rate for a saturated pixel is ``255 / base_divisor`` Hz
    (63.75 Hz at the default), and every retry of a weakly responded sample
    adds ``rate_boost`` Hz to the peak. The teacher forces the true label
    neuron at ``teacher_rate`` Hz during supervised training. A presentation
    is retried while the responding layer fires fewer than
    ``retry_min_spikes`` spikes and fewer than ``max_retries`` boosts have
    been spent.
    """

    base_divisor: float = 4.0
    rate_boost: float = 32.0
    max_retries: int = 10
    teacher_rate: float = 200.0
    dt: float = 0.5
    retry_min_spikes: int = 5

    def __post_init__(self):
        if self.base_divisor <= 0.0 or self.dt <= 0.0:
            raise ContractViolation("base_divisor and dt must be positive")
        if self.max_retries < 0 or self.retry_min_spikes < 0:
            raise ContractViolation("retry limits must be non-negative")


@dataclass(frozen=True)
class RngStream:
    """A named, replayable stream of uniform draws.

    The stream identity (seed, purpose, sample_id, extra) is hashed through
    SeedSequence into a Philox key. ``extra`` carries the attempt number for
    encoding streams, the epoch for shuffles, and the matrix index for weight
    init.
    """

    seed: int
    purpose: int
    sample_id: int = 0
    extra: int = 0

    def _key(self) -> np.ndarray:
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.purpose, self.sample_id, self.extra)
        )
        return ss.generate_state(2, np.uint64)

    def generator(self, counter: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self._key(), counter=counter))

    def uniform_raster(self, n_steps: int, n: int) -> np.ndarray:
        """All uniforms for a presentation, shape (n_steps, n).

        Each step occupies a whole number of counter blocks so that
        uniform_row can address it directly.
        """
        blocks_per_step = -(-n // _DRAWS_PER_BLOCK)
        width = blocks_per_step * _DRAWS_PER_BLOCK
        u = self.generator().random((n_steps, width))
        return u[:, :n]

    def uniform_row(self, step: int, n: int) -> np.ndarray:
        """The uniforms of one step, identical bits to uniform_raster[step]."""
        blocks_per_step = -(-n // _DRAWS_PER_BLOCK)
        return self.generator(counter=step * blocks_per_step).random(n)


def image_to_rates(pixels: np.ndarray, boost_level: int, params: EncodingParams) -> np.ndarray:
    """Map intensities in [0, 255] to firing rates in Hz.

    Linear in intensity; the peak rate grows with the attempt's boost level.
    """
    pixels = np.asarray(pixels, dtype=np.float64).ravel()
    if pixels.size and (pixels.min() < 0.0 or pixels.max() > 255.0):
        raise ContractViolation("pixel intensities must lie in [0, 255]")
    peak = 255.0 / params.base_divisor + boost_level * params.rate_boost
    return pixels / 255.0 * peak


def spike_probabilities(rates: np.ndarray, params: EncodingParams) -> np.ndarray:
    """Per-step Bernoulli probabilities, rate * dt with dt in seconds."""
    p = rates * (params.dt / 1000.0)
    if p.size and p.max() > 1.0:
        raise ContractViolation("per-step spike probability exceeds 1; lower dt or rates")
    return p


def sample_input_spikes(
    rates: np.ndarray, step: int, stream: RngStream, params: EncodingParams
) -> np.ndarray:
    """Spiking input indices for one step, ascending."""
    p = spike_probabilities(rates, params)
    u = stream.uniform_row(step, rates.shape[0])
    return np.flatnonzero(u < p)


def input_raster(
    rates: np.ndarray, n_steps: int, stream: RngStream, params: EncodingParams
) -> np.ndarray:
    """Boolean raster (n_steps, n) for a whole presentation in one draw."""
    p = spike_probabilities(rates, params)
    u = stream.uniform_raster(n_steps, rates.shape[0])
    return u < p


def teacher_raster(
    n_steps: int, stream: RngStream, params: EncodingParams
) -> np.ndarray:
    """Boolean spike train (n_steps,) for the clamped label neuron.

    Only the label neuron draws randomness; the other output neurons receive
    no teacher input at all, so one draw per step is the whole stream.
    """
    p = params.teacher_rate * (params.dt / 1000.0)
    if p > 1.0:
        raise ContractViolation("teacher rate exceeds one spike per step")
    u = stream.uniform_raster(n_steps, 1)[:, 0]
    return u < p


def teacher_spikes(
    label: int, step: int, stream: RngStream, params: EncodingParams
) -> np.ndarray:
    """Teacher spike set for one step: [label] or empty."""
    p = params.teacher_rate * (params.dt / 1000.0)
    u = stream.uniform_row(step, 1)[0]
    if u < p:
        return np.array([label], dtype=np.int64)
    return np.array([], dtype=np.int64)


def needs_retry(spike_count: int, boost_level: int, params: EncodingParams) -> bool:
    """True while the response is too weak and the retry budget remains."""
    return spike_count < params.retry_min_spikes and boost_level < params.max_retries
