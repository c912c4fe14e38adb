"""Training schedules, evaluation, the label-statistics baseline, checkpoints.

Three schedules over the same presentation loop:

* ``simultaneous``: the teacher clamps the true output neuron while both
  plastic matrices learn and hidden thresholds adapt, all from the start.
* ``layer_by_layer``: first the input matrix learns unsupervised for the full
  epoch budget, then it freezes (thresholds too) and only the output matrix
  learns under the teacher, one epoch by default.
* ``unsupervised_only``: the first phase alone, useful for probing what the
  hidden layer learns without any readout.

Every presentation advances a single global counter that keys its spike
streams, so a run is a pure function of (config, seed): resuming from a
checkpoint mid-epoch reproduces the uninterrupted run bit for bit.

Evaluation gives every sample a fresh resting state keyed by its dataset
index, which makes records independent of worker count and order; workers
share the trained weights read-only and the compiled kernel drops the GIL.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataio import Dataset, epoch_order
from .encoding import PURPOSE_EVAL, PURPOSE_PROBE, EncodingParams
from .engine import (
    SimParams,
    SimState,
    SpanFlags,
    fresh_eval_state,
    run_presentation,
)
from .neurodyn import ContractViolation
from .plasticity import scale_in_synapses
from .topology import Network, network_config_from_dict, network_config_to_dict

logger = logging.getLogger(__name__)

MODES = ("simultaneous", "layer_by_layer", "unsupervised_only")


@dataclass
class RunRecord:
    """Response of one evaluation presentation."""

    sample_id: int
    label: int
    predicted: int
    hidden_counts: np.ndarray
    sl_counts: np.ndarray
    boosts_used: int

    @property
    def zero_output(self) -> bool:
        return int(self.sl_counts.sum()) == 0

    @property
    def margin(self) -> int:
        """Winner's lead in spikes over the runner-up."""
        if self.sl_counts.shape[0] < 2:
            return int(self.sl_counts[0])
        top2 = np.sort(self.sl_counts)[-2:]
        return int(top2[1] - top2[0])

    @property
    def correct(self) -> bool:
        return self.predicted == self.label


def predict_from_counts(sl_counts: np.ndarray) -> int:
    """Argmax with lowest index winning ties."""
    return int(np.argmax(sl_counts))


@dataclass
class TrainCursor:
    """Resume point: schedule position plus the global stream counter."""

    phase: int = 0  # index into the schedule
    epoch: int = 0  # within the phase
    offset: int = 0  # presentations completed within the epoch
    seen: int = 0  # presentations started over the whole run
    epoch_key: int = 0  # cumulative epoch counter keying the shuffle


def _schedule(mode: str, epochs: int, phase2_epochs: int, has_hidden: bool):
    """List of (name, flags, n_epochs) phases."""
    if mode == "simultaneous":
        flags = SpanFlags(
            teacher_on=True,
            stdp_in=True,
            stdp_out=has_hidden,
            theta_adapt=has_hidden,
        )
        return [("simultaneous", flags, epochs)]
    if mode == "layer_by_layer":
        if not has_hidden:
            raise ContractViolation("layer_by_layer needs a hidden block")
        return [
            ("features", SpanFlags(stdp_in=True, theta_adapt=True), epochs),
            ("readout", SpanFlags(teacher_on=True, stdp_out=True), phase2_epochs),
        ]
    if mode == "unsupervised_only":
        if not has_hidden:
            raise ContractViolation("unsupervised_only needs a hidden block")
        return [("features", SpanFlags(stdp_in=True, theta_adapt=True), epochs)]
    raise ContractViolation(f"unknown mode {mode!r}; expected one of {MODES}")


def _scale_after_cycle(network: Network, flags: SpanFlags) -> None:
    cfg = network.config
    if flags.stdp_in:
        scale_in_synapses(network.w_in, cfg.scaling_in)
    if flags.stdp_out and network.has_hidden:
        scale_in_synapses(network.w_out, cfg.scaling_out)


class _History:
    def __init__(self, path: str | Path | None):
        self.events: list[dict] = []
        self._file = open(path, "a", encoding="utf-8") if path else None

    def emit(self, **event) -> None:
        self.events.append(event)
        if self._file is not None:
            self._file.write(json.dumps(event, sort_keys=True) + "\n")
            self._file.flush()
        kind = event.get("event")
        if kind == "eval":
            logger.info(
                "eval at %d samples: accuracy %.4f (n=%d)",
                event["seen"], event["accuracy"], event["n"],
            )
        elif kind == "epoch_end":
            logger.info(
                "phase %d epoch %d done: %d samples seen, %.1fs",
                event["phase"], event["epoch"], event["seen"], event["wall_s"],
            )
        elif kind in ("train_end", "train_stop"):
            logger.info("training %s after %d samples, %.1fs",
                        "finished" if kind == "train_end" else "stopped",
                        event["seen"], event["wall_s"])

    def close(self) -> None:
        if self._file is not None:
            self._file.close()


@dataclass
class TrainOutcome:
    state: SimState
    cursor: TrainCursor
    history: list[dict]


def train(
    network_or_state: Network | SimState,
    train_data: Dataset,
    *,
    mode: str = "simultaneous",
    epochs: int = 3,
    phase2_epochs: int = 1,
    seed: int | None = None,
    enc: EncodingParams | None = None,
    sim: SimParams | None = None,
    eval_data: Dataset | None = None,
    eval_every: int = 10_000,
    eval_samples: int | None = None,
    eval_workers: int = 1,
    history_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int | None = None,
    run_config: dict | None = None,
    cursor: TrainCursor | None = None,
    stop_after: int | None = None,
    use_kernel: bool = True,
) -> TrainOutcome:
    """Run one training schedule to completion (or continue one).

    Pass a Network to start from scratch or a loaded SimState plus its cursor
    to continue. ``seed`` defaults to the network config's seed. Periodic
    evaluation runs every ``eval_every`` presentations on up to
    ``eval_samples`` of ``eval_data``; checkpoints are written at every epoch
    boundary and additionally every ``checkpoint_every`` presentations.
    ``stop_after`` ends the run (with a checkpoint, if a path is set) once
    that many presentations have been seen in total, mid-epoch included;
    resuming from the checkpoint continues the identical trajectory.
    """
    if isinstance(network_or_state, SimState):
        state = network_or_state
    else:
        state = SimState.fresh(network_or_state)
    network = state.network
    cfg = network.config
    seed = cfg.seed if seed is None else seed
    enc = enc or EncodingParams()
    sim = sim or SimParams()
    cursor = cursor or TrainCursor()
    schedule = _schedule(mode, epochs, phase2_epochs, network.has_hidden)
    history = _History(history_path)
    images = train_data.images.reshape(len(train_data), -1)
    labels = train_data.labels
    n = len(train_data)
    t_start = time.monotonic()

    def maybe_eval():
        if eval_data is None or eval_every <= 0 or cursor.seen == 0:
            return
        if cursor.seen % eval_every != 0:
            return
        t0 = time.monotonic()
        limit = len(eval_data) if eval_samples is None else min(eval_samples, len(eval_data))
        records = evaluate(
            network, eval_data, indices=np.arange(limit),
            seed=seed, enc=enc, sim=sim, workers=eval_workers, use_kernel=use_kernel,
        )
        acc = sum(r.correct for r in records) / len(records)
        history.emit(
            event="eval", seen=cursor.seen, phase=cursor.phase, epoch=cursor.epoch,
            n=len(records), accuracy=acc, wall_s=round(time.monotonic() - t0, 3),
        )

    def maybe_checkpoint(tag):
        if checkpoint_path is None:
            return
        save_checkpoint(checkpoint_path, state, cursor, run_config)
        history.emit(event="checkpoint", tag=tag, seen=cursor.seen)

    class _RunStopped(Exception):
        pass

    try:
        history.emit(
            event="train_start", mode=mode, epochs=epochs, n_train=n, seed=seed,
            resumed=cursor.seen > 0,
        )
        while cursor.phase < len(schedule):
            phase_name, flags, phase_epochs = schedule[cursor.phase]
            if cursor.epoch == 0 and cursor.offset == 0:
                history.emit(event="phase_start", phase=cursor.phase, name=phase_name)
            while cursor.epoch < phase_epochs:
                order = epoch_order(n, seed, cursor.epoch_key)
                epoch_boosts = 0
                t_epoch = time.monotonic()
                while cursor.offset < n:
                    idx = int(order[cursor.offset])
                    result = run_presentation(
                        state, images[idx], int(labels[idx]), flags,
                        seed=seed, sample_id=cursor.seen, enc=enc, sim=sim,
                        use_kernel=use_kernel,
                    )
                    _scale_after_cycle(network, flags)
                    epoch_boosts += result.boosts_used
                    cursor.seen += 1
                    cursor.offset += 1
                    maybe_eval()
                    if stop_after is not None and cursor.seen >= stop_after:
                        raise _RunStopped
                    if (
                        checkpoint_every
                        and cursor.seen % checkpoint_every == 0
                        and cursor.offset < n
                    ):
                        maybe_checkpoint("interval")
                history.emit(
                    event="epoch_end", phase=cursor.phase, epoch=cursor.epoch,
                    seen=cursor.seen, boosts=epoch_boosts,
                    wall_s=round(time.monotonic() - t_epoch, 3),
                )
                cursor.epoch += 1
                cursor.epoch_key += 1
                cursor.offset = 0
                maybe_checkpoint("epoch")
            cursor.phase += 1
            cursor.epoch = 0
        history.emit(
            event="train_end", seen=cursor.seen,
            wall_s=round(time.monotonic() - t_start, 3),
        )
        maybe_checkpoint("final")
    except _RunStopped:
        maybe_checkpoint("stop")
        history.emit(
            event="train_stop", seen=cursor.seen,
            wall_s=round(time.monotonic() - t_start, 3),
        )
    finally:
        history.close()
    return TrainOutcome(state=state, cursor=cursor, history=history.events)


def train_simultaneous(network, train_data, **kw) -> TrainOutcome:
    return train(network, train_data, mode="simultaneous", **kw)


def train_layer_by_layer(network, train_data, **kw) -> TrainOutcome:
    return train(network, train_data, mode="layer_by_layer", **kw)


def train_unsupervised(network, train_data, **kw) -> TrainOutcome:
    return train(network, train_data, mode="unsupervised_only", **kw)


def evaluate(
    network: Network,
    data: Dataset,
    *,
    seed: int,
    enc: EncodingParams | None = None,
    sim: SimParams | None = None,
    indices: np.ndarray | None = None,
    workers: int = 1,
    purpose: int = PURPOSE_EVAL,
    retry: bool | None = None,
    use_kernel: bool = True,
) -> list[RunRecord]:
    """Present samples in inference mode and record responses.

    Each presentation runs on its own resting-state clone keyed by dataset
    index, so the result list is identical for any worker count. ``retry``
    defaults to the schedule's evaluation-retry setting.
    """
    enc = enc or EncodingParams()
    sim = sim or SimParams()
    if indices is None:
        indices = np.arange(len(data))
    retry_flag = sim.retry_in_eval if retry is None else retry
    flags = SpanFlags(sl_dynamics=True)
    images = data.images.reshape(len(data), -1)
    labels = data.labels

    def job(idx: int) -> RunRecord:
        st = fresh_eval_state(network)
        res = run_presentation(
            st, images[idx], int(labels[idx]), flags,
            seed=seed, sample_id=int(idx), enc=enc, sim=sim,
            input_purpose=purpose, retry=retry_flag, rest=False,
            use_kernel=use_kernel,
        )
        return RunRecord(
            sample_id=int(idx),
            label=int(labels[idx]),
            predicted=predict_from_counts(res.sl_counts),
            hidden_counts=res.hidden_counts,
            sl_counts=res.sl_counts,
            boosts_used=res.boosts_used,
        )

    if workers <= 1:
        return [job(int(i)) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, [int(i) for i in indices]))


def infer(network, data, *, seed, **kw) -> tuple[list[RunRecord], float]:
    """Evaluate and report accuracy."""
    records = evaluate(network, data, seed=seed, **kw)
    accuracy = sum(r.correct for r in records) / len(records) if records else 0.0
    return records, accuracy


def collect_train_responses(
    network, data, *, seed, indices=None, **kw
) -> list[RunRecord]:
    """Inference pass over training samples, for baseline label assignment."""
    return evaluate(network, data, seed=seed, indices=indices, purpose=PURPOSE_PROBE, **kw)


def label_stats_assign(records: list[RunRecord], n_labels: int) -> np.ndarray:
    """Give each hidden neuron the class it fired most for, -1 if silent."""
    if not records:
        raise ContractViolation("cannot assign labels from zero records")
    n_hidden = records[0].hidden_counts.shape[0]
    totals = np.zeros((n_labels, n_hidden), dtype=np.int64)
    for r in records:
        totals[r.label] += r.hidden_counts
    assignment = np.argmax(totals, axis=0).astype(np.int64)
    assignment[totals.sum(axis=0) == 0] = -1
    return assignment


def label_stats_predict(
    neuron_labels: np.ndarray, hidden_counts: np.ndarray, n_labels: int
) -> int:
    """Class whose member neurons fired most on average; silent cells excluded."""
    scores = np.full(n_labels, -np.inf)
    for c in range(n_labels):
        members = neuron_labels == c
        if members.any():
            scores[c] = hidden_counts[members].mean()
    if not np.isfinite(scores).any():
        raise ContractViolation("no hidden neuron carries a label; train longer")
    return int(np.argmax(scores))


def label_stats_infer(
    neuron_labels: np.ndarray, records: list[RunRecord], n_labels: int
) -> tuple[np.ndarray, float]:
    """Baseline predictions and accuracy over recorded responses."""
    preds = np.array(
        [label_stats_predict(neuron_labels, r.hidden_counts, n_labels) for r in records],
        dtype=np.int64,
    )
    truth = np.array([r.label for r in records])
    accuracy = float((preds == truth).mean()) if records else 0.0
    return preds, accuracy


# --- checkpoint format ---------------------------------------------------
#
# magic | u32 version | u64 header length | header JSON (sorted keys) |
# array payload (C-order little-endian, fixed enumeration order) |
# sha256 over everything before the digest.

MAGIC = b"SSTDPCKP"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable, foreign, or corrupted checkpoint."""


def _layer_arrays(prefix: str, layer) -> list[tuple[str, np.ndarray]]:
    return [
        (f"{prefix}.v", layer.v),
        (f"{prefix}.g_exc", layer.g_exc),
        (f"{prefix}.g_inh", layer.g_inh),
        (f"{prefix}.theta", layer.theta),
        (f"{prefix}.ref_until", layer.ref_until),
    ]


def _state_arrays(state: SimState) -> list[tuple[str, np.ndarray]]:
    net = state.network
    arrays: list[tuple[str, np.ndarray]] = []
    if net.has_hidden:
        arrays += _layer_arrays("hidden_exc", net.hidden_exc)
        arrays += _layer_arrays("hidden_inh", net.hidden_inh)
    arrays += _layer_arrays("sl", net.sl)
    arrays.append(("w_in", net.w_in.weights))
    arrays.append(("traces_in.x_pre", net.traces_in.x_pre))
    arrays.append(("traces_in.x_post", net.traces_in.x_post))
    if net.has_hidden:
        arrays.append(("w_ei", net.w_ei.weights))
        arrays.append(("w_ie", net.w_ie.weights))
        arrays.append(("w_out", net.w_out.weights))
        arrays.append(("traces_out.x_pre", net.traces_out.x_pre))
        arrays.append(("traces_out.x_post", net.traces_out.x_post))
        arrays.append(("pend_hidden_exc", state.pend_hidden_exc))
        arrays.append(("pend_hidden_inh", state.pend_hidden_inh))
        arrays.append(("pend_inh_exc", state.pend_inh_exc))
    arrays.append(("pend_sl_exc", state.pend_sl_exc))
    return arrays


def save_checkpoint(
    path: str | Path,
    state: SimState,
    cursor: TrainCursor,
    run_config: dict | None = None,
) -> None:
    """Write the complete simulation state; saving twice gives identical bytes."""
    arrays = _state_arrays(state)
    directory = []
    blobs = []
    offset = 0
    for name, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append(
            {"name": name, "dtype": "<f8", "shape": list(arr.shape), "offset": offset}
        )
        blobs.append(data)
        offset += len(data)
    header = {
        "arrays": directory,
        "cursor": {**asdict(cursor), "step": state.step},
        "network_config": network_config_to_dict(state.network.config),
        "run_config": run_config,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = (
        MAGIC
        + struct.pack("<I", VERSION)
        + struct.pack("<Q", len(header_bytes))
        + header_bytes
        + b"".join(blobs)
    )
    digest = hashlib.sha256(body).digest()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + digest)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[SimState, TrainCursor, dict | None]:
    """Rebuild a SimState; refuses foreign magic, versions, or bad digests."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: digest mismatch, file is corrupt")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: version {version} not supported (want {VERSION})")
    (header_len,) = struct.unpack_from("<Q", body, pos)
    pos += 8
    header = json.loads(body[pos : pos + header_len].decode("utf-8"))
    payload = body[pos + header_len :]

    def read(name: str) -> np.ndarray:
        for entry in header["arrays"]:
            if entry["name"] == name:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape, dtype=np.int64)) if shape else 1
                arr = np.frombuffer(
                    payload, dtype=entry["dtype"], count=count, offset=entry["offset"]
                )
                return arr.reshape(shape).astype(np.float64)
        raise CheckpointError(f"{path}: array {name!r} missing")

    cfg = network_config_from_dict(header["network_config"])
    from .neurodyn import LayerState  # local import keeps module top uncluttered
    from .plasticity import TraceState
    from .topology import INHIBITORY, SynapseMatrix

    def read_layer(prefix: str) -> LayerState:
        v = read(f"{prefix}.v")
        return LayerState(
            v=v,
            g_exc=read(f"{prefix}.g_exc"),
            g_inh=read(f"{prefix}.g_inh"),
            theta=read(f"{prefix}.theta"),
            ref_until=read(f"{prefix}.ref_until"),
            spiked=np.zeros(v.shape[0], dtype=bool),
        )

    if cfg.has_hidden:
        network = Network(
            config=cfg,
            sl=read_layer("sl"),
            w_in=SynapseMatrix(read("w_in"), w_max=cfg.w_max_in, plastic=True),
            traces_in=TraceState(read("traces_in.x_pre"), read("traces_in.x_post")),
            hidden_exc=read_layer("hidden_exc"),
            hidden_inh=read_layer("hidden_inh"),
            w_ei=SynapseMatrix(read("w_ei"), w_max=cfg.w_exc_to_inh, plastic=False),
            w_ie=SynapseMatrix(
                read("w_ie"), w_max=cfg.w_inh_to_exc, plastic=False, kind=INHIBITORY
            ),
            w_out=SynapseMatrix(read("w_out"), w_max=cfg.w_max_out, plastic=True),
            traces_out=TraceState(read("traces_out.x_pre"), read("traces_out.x_post")),
        )
        state = SimState(
            network=network,
            pend_hidden_exc=read("pend_hidden_exc"),
            pend_hidden_inh=read("pend_hidden_inh"),
            pend_inh_exc=read("pend_inh_exc"),
            pend_sl_exc=read("pend_sl_exc"),
        )
    else:
        network = Network(
            config=cfg,
            sl=read_layer("sl"),
            w_in=SynapseMatrix(read("w_in"), w_max=cfg.w_max_out, plastic=True),
            traces_in=TraceState(read("traces_in.x_pre"), read("traces_in.x_post")),
        )
        state = SimState(network=network, pend_sl_exc=read("pend_sl_exc"))

    stored = dict(header["cursor"])
    state.step = int(stored.pop("step"))
    cursor = TrainCursor(**stored)
    return state, cursor, header.get("run_config")
