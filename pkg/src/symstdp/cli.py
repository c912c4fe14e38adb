"""Command-line entry point: fetch data, train, evaluate, export, resume.

Typical session::

    symstdp fetch --dataset mnist --cache ~/.cache/symstdp
    symstdp train --preset mnist-n400 --out runs/m400
    symstdp eval --checkpoint runs/m400/checkpoint.ckpt --out runs/m400
    symstdp export --checkpoint runs/m400/checkpoint.ckpt --kind all --out runs/m400

Progress goes to standard error; everything machine-readable goes to files
in the output directory: the resolved config (re-running from it reproduces
the run exactly), a JSONL history, the checkpoint, a summary, and CSVs.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or corrupt files), 3 numerical fault inside the simulation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    encoding_params_from_run,
    load_config_file,
    network_config_from_run,
    preset_names,
    resolve_config,
    sim_params_from_run,
    write_config,
)
from .dataio import MANIFESTS, DataError, fetch_dataset, load_dataset
from .metrics import (
    confusion,
    summarize,
    write_activities_csv,
    write_confusion_csv,
    write_weights_csv,
)
from .neurodyn import ContractViolation, SimulationFault
from .topology import build_network
from .trainer import (
    CheckpointError,
    collect_train_responses,
    evaluate,
    label_stats_assign,
    label_stats_infer,
    load_checkpoint,
    train,
)

logger = logging.getLogger("symstdp")

DEFAULT_CACHE = Path.home() / ".cache" / "symstdp"


def _mode(value: str) -> str:
    return value.replace("-", "_")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cache", type=Path, default=DEFAULT_CACHE,
                   help="dataset cache directory (default %(default)s)")
    p.add_argument("--data-dir", type=Path, default=None,
                   help="directory with the canonical dataset files; "
                        "skips the cache and never downloads")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--workers", type=int, default=None,
                   help="evaluation worker threads (results never depend on this)")
    p.add_argument("--limit", type=int, default=None,
                   help="stop after this many training presentations")
    p.add_argument("--no-kernel", action="store_true",
                   help="use the slow reference simulation path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symstdp",
        description="Spiking-network training with symmetric STDP, synaptic "
                    "scaling, and adaptive thresholds.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug-level progress output")
    parser.add_argument("-q", "--quiet", action="store_true",
                        help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download and verify a dataset")
    p.add_argument("--dataset", choices=sorted(MANIFESTS), required=True)
    p.add_argument("--cache", type=Path, default=DEFAULT_CACHE)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("train", help="train a network from scratch")
    p.add_argument("--preset", default=None,
                   help=f"named preset: {', '.join(preset_names())}")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON run config; flags override its values")
    p.add_argument("--dataset", choices=sorted(MANIFESTS), default=None)
    p.add_argument("--mode", type=_mode, default=None,
                   choices=["simultaneous", "layer_by_layer", "unsupervised_only"],
                   help="training schedule (hyphens and underscores both work)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--phase2-epochs", type=int, default=None)
    p.add_argument("--n-hidden", type=int, default=None)
    p.add_argument("--hidden-blocks", type=int, choices=[0, 1], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--beta", type=float, default=None,
                   help="synaptic scaling target fraction, feature matrix")
    p.add_argument("--beta-out", type=float, default=None,
                   help="synaptic scaling target fraction, readout matrix")
    p.add_argument("--tau-theta", type=float, default=None,
                   help="threshold adaptation time constant, ms")
    p.add_argument("--alpha", type=float, default=None,
                   help="threshold adaptation increment scale")
    p.add_argument("--eval-every", type=int, default=None,
                   help="test-set evaluation period in training samples")
    p.add_argument("--eval-samples", type=int, default=None,
                   help="test samples per periodic evaluation (default: all)")
    p.add_argument("--checkpoint-every", type=int, default=None,
                   help="extra checkpoint period in training samples")
    p.add_argument("--no-eval-retry", action="store_true",
                   help="disable the weak-response boost at evaluation time")
    _add_run_flags(p)
    _add_data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("resume", help="continue training from a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_run_flags(p)
    _add_data_flags(p)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("eval", help="measure accuracy of a trained checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.add_argument("--samples", type=int, default=None,
                   help="evaluate only the first N samples")
    p.add_argument("--baseline", action="store_true",
                   help="also score the hidden-layer label-statistics baseline")
    p.add_argument("--probe-samples", type=int, default=None,
                   help="training samples probed for baseline label assignment "
                        "(default: all)")
    _add_run_flags(p)
    _add_data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write CSVs from a trained checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--kind", choices=["activities", "weights", "confusion", "all"],
                   default="all")
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--probe-samples", type=int, default=None)
    _add_run_flags(p)
    _add_data_flags(p)
    p.set_defaults(func=cmd_export)

    return parser


def _collect_overrides(args) -> dict:
    overrides: dict = {}
    for key in ("dataset", "mode", "epochs", "phase2_epochs", "n_hidden",
                "hidden_blocks", "seed", "beta", "beta_out", "eval_every",
                "eval_samples", "checkpoint_every"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.limit is not None:
        overrides["stop_after"] = args.limit
    if args.tau_theta is not None:
        overrides.setdefault("theta", {})["tau_theta"] = args.tau_theta
    if args.alpha is not None:
        overrides.setdefault("theta", {})["alpha"] = args.alpha
    if args.no_eval_retry:
        overrides.setdefault("sim", {})["retry_in_eval"] = False
    if args.no_kernel:
        overrides["use_kernel"] = False
    return overrides


def _load_splits(config: dict, args):
    return load_dataset(config["dataset"], args.cache, args.data_dir)


def _n_labels(train_ds, test_ds) -> int:
    return int(max(train_ds.labels.max(), test_ds.labels.max())) + 1


def _final_report(config, network, test_ds, out_dir, n_labels) -> float:
    """Full test evaluation; writes summary.json and returns accuracy."""
    records = evaluate(
        network, test_ds,
        seed=config["seed"],
        enc=encoding_params_from_run(config),
        sim=sim_params_from_run(config),
        workers=config["workers"],
        use_kernel=config["use_kernel"],
    )
    summary = summarize(records, n_labels)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("test accuracy: %.4f over %d samples", summary["accuracy"], summary["n"])
    return summary["accuracy"]


def _run_training(config: dict, state_or_network, cursor, args, train_ds, test_ds) -> int:
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(out_dir / "config.json", config)
    outcome = train(
        state_or_network, train_ds,
        mode=config["mode"],
        epochs=config["epochs"],
        phase2_epochs=config["phase2_epochs"],
        seed=config["seed"],
        enc=encoding_params_from_run(config),
        sim=sim_params_from_run(config),
        eval_data=test_ds,
        eval_every=config["eval_every"],
        eval_samples=config["eval_samples"],
        eval_workers=config["workers"],
        history_path=out_dir / "history.jsonl",
        checkpoint_path=out_dir / "checkpoint.ckpt",
        checkpoint_every=config["checkpoint_every"],
        run_config=config,
        cursor=cursor,
        stop_after=config["stop_after"],
        use_kernel=config["use_kernel"],
    )
    network = outcome.state.network
    _final_report(config, network, test_ds, out_dir, _n_labels(train_ds, test_ds))
    return 0


def cmd_fetch(args) -> int:
    paths = fetch_dataset(MANIFESTS[args.dataset], args.cache)
    for role in sorted(paths):
        logger.info("%s: %s", role, paths[role])
    train_ds, test_ds = load_dataset(args.dataset, args.cache)
    logger.info("%s ready: %d training / %d test samples",
                args.dataset, len(train_ds), len(test_ds))
    return 0


def cmd_train(args) -> int:
    file_config = load_config_file(args.config) if args.config else None
    config = resolve_config(args.preset, file_config, _collect_overrides(args))
    train_ds, test_ds = _load_splits(config, args)
    n_input = int(np.prod(train_ds.images.shape[1:]))
    net_config = network_config_from_run(config, n_input, _n_labels(train_ds, test_ds))
    network = build_network(net_config)
    logger.info("training %s: %d hidden, mode %s, %d epochs, seed %d",
                config["dataset"], config["n_hidden"], config["mode"],
                config["epochs"], config["seed"])
    return _run_training(config, network, None, args, train_ds, test_ds)


def cmd_resume(args) -> int:
    state, cursor, stored = load_checkpoint(args.checkpoint)
    if stored is None:
        raise ConfigError(
            f"{args.checkpoint} carries no run config; it was not written by "
            "the train command"
        )
    overrides = {}
    if args.workers is not None:
        overrides["workers"] = args.workers
    # the stored stop_after belonged to the original invocation; a resumed
    # run stops only where --limit says, or trains to completion
    overrides["stop_after"] = args.limit
    if args.no_kernel:
        overrides["use_kernel"] = False
    config = resolve_config(None, stored, overrides)
    logger.info("resuming at %d samples seen (phase %d, epoch %d)",
                cursor.seen, cursor.phase, cursor.epoch)
    train_ds, test_ds = _load_splits(config, args)
    return _run_training(config, state, cursor, args, train_ds, test_ds)


def _load_for_inference(args):
    state, cursor, stored = load_checkpoint(args.checkpoint)
    if stored is None:
        logger.warning("%s carries no run config; using defaults for "
                       "evaluation parameters", args.checkpoint)
    config = resolve_config(None, stored or {})
    if args.no_kernel:
        config["use_kernel"] = False
    if args.workers is not None:
        config["workers"] = args.workers
    train_ds, test_ds = _load_splits(config, args)
    data = test_ds if args.split == "test" else train_ds
    if args.samples is not None:
        indices = np.arange(min(args.samples, len(data)))
    else:
        indices = np.arange(len(data))
    return state.network, config, train_ds, data, indices


def _baseline_labels(network, config, train_ds, probe_samples):
    n = len(train_ds) if probe_samples is None else min(probe_samples, len(train_ds))
    logger.info("probing %d training samples for label statistics", n)
    probe = collect_train_responses(
        network, train_ds,
        seed=config["seed"],
        enc=encoding_params_from_run(config),
        sim=sim_params_from_run(config),
        indices=np.arange(n),
        workers=config["workers"],
        use_kernel=config["use_kernel"],
    )
    return probe, label_stats_assign(probe, network.config.n_labels)


def cmd_eval(args) -> int:
    network, config, train_ds, data, indices = _load_for_inference(args)
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    records = evaluate(
        network, data,
        seed=config["seed"],
        enc=encoding_params_from_run(config),
        sim=sim_params_from_run(config),
        indices=indices,
        workers=config["workers"],
        use_kernel=config["use_kernel"],
    )
    n_labels = network.config.n_labels
    summary = summarize(records, n_labels)
    summary["split"] = args.split
    if args.baseline:
        if not network.has_hidden:
            raise ConfigError("the label-statistics baseline needs a hidden layer")
        _, neuron_labels = _baseline_labels(network, config, train_ds,
                                            args.probe_samples)
        _, baseline_acc = label_stats_infer(neuron_labels, records, n_labels)
        summary["label_stats_accuracy"] = baseline_acc
        logger.info("label-statistics baseline accuracy: %.4f", baseline_acc)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_activities_csv(out_dir / "activities.csv", records)
    write_confusion_csv(out_dir / "confusion.csv", confusion(records, n_labels))
    logger.info("%s accuracy: %.4f over %d samples",
                args.split, summary["accuracy"], summary["n"])
    return 0


def cmd_export(args) -> int:
    network, config, train_ds, data, indices = _load_for_inference(args)
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = {args.kind} if args.kind != "all" else {"activities", "weights", "confusion"}
    n_labels = network.config.n_labels

    if kinds & {"activities", "confusion"}:
        records = evaluate(
            network, data,
            seed=config["seed"],
            enc=encoding_params_from_run(config),
            sim=sim_params_from_run(config),
            indices=indices,
            workers=config["workers"],
            use_kernel=config["use_kernel"],
        )
        if "activities" in kinds:
            write_activities_csv(out_dir / "activities.csv", records)
            logger.info("wrote %s", out_dir / "activities.csv")
        if "confusion" in kinds:
            write_confusion_csv(out_dir / "confusion.csv", confusion(records, n_labels))
            logger.info("wrote %s", out_dir / "confusion.csv")

    if "weights" in kinds:
        neuron_labels = None
        if network.has_hidden:
            _, neuron_labels = _baseline_labels(network, config, train_ds,
                                                args.probe_samples)
        write_weights_csv(out_dir / "weights.csv", network, neuron_labels)
        logger.info("wrote %s", out_dir / "weights.csv")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help/--version
        return 0 if exc.code in (0, None) else 1
    level = logging.DEBUG if args.verbose else (
        logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(
        stream=sys.stderr, level=level,
        format="%(asctime)s %(levelname)s %(message)s", datefmt="%H:%M:%S",
        force=True,
    )
    try:
        return args.func(args)
    except (ConfigError, ContractViolation) as exc:
        logger.error("%s", exc)
        return 1
    except (DataError, CheckpointError) as exc:
        logger.error("%s", exc)
        return 2
    except SimulationFault as exc:
        logger.error("numerical fault: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
