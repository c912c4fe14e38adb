"""Accuracy, confusion matrices, and CSV exports of recorded responses.

Everything here consumes the RunRecord lists that evaluation produces.
Exports are plain UTF-8 CSV with a header row and full-precision numbers so
downstream analysis never loses information to formatting.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def accuracy(records) -> float:
    """Fraction of records whose prediction matches the label."""
    if not records:
        return 0.0
    return sum(r.correct for r in records) / len(records)


def confusion(records, n_labels: int) -> np.ndarray:
    """Counts matrix, rows true label, columns predicted label."""
    matrix = np.zeros((n_labels, n_labels), dtype=np.int64)
    for r in records:
        matrix[r.label, r.predicted] += 1
    return matrix


def margins(records) -> np.ndarray:
    """Winner-minus-runner-up output spike counts, one entry per record."""
    return np.array([r.margin for r in records], dtype=np.int64)


def zero_output_fraction(records) -> float:
    """Fraction of records where the output layer stayed silent."""
    if not records:
        return 0.0
    return sum(r.zero_output for r in records) / len(records)


def write_activities_csv(path: str | Path, records) -> None:
    """One row per sample: identity, response counts, and the decision.

    Columns: sample_id, label, predicted, margin, boosts_used, the per-class
    output counts, then the per-neuron hidden counts (absent for direct
    topologies).
    """
    if not records:
        raise ValueError("no records to write")
    n_labels = records[0].sl_counts.shape[0]
    n_hidden = records[0].hidden_counts.shape[0]
    header = ["sample_id", "label", "predicted", "margin", "boosts_used"]
    header += [f"out_{c}" for c in range(n_labels)]
    header += [f"hidden_{j}" for j in range(n_hidden)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            row = [r.sample_id, r.label, r.predicted, r.margin, r.boosts_used]
            row += [int(c) for c in r.sl_counts]
            row += [int(c) for c in r.hidden_counts]
            writer.writerow(row)


def write_weights_csv(path: str | Path, network, neuron_labels=None) -> None:
    """Per hidden neuron: its statistics-assigned class and its output row.

    For direct topologies the rows are input pixels and the weights are the
    single plastic matrix. Weights print via repr so they round-trip exactly.
    """
    weights = network.w_out.weights if network.has_hidden else network.w_in.weights
    n_pre, n_post = weights.shape
    header = ["neuron", "assigned_label"] + [f"w_to_{c}" for c in range(n_post)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j in range(n_pre):
            assigned = -1 if neuron_labels is None else int(neuron_labels[j])
            writer.writerow([j, assigned] + [repr(float(w)) for w in weights[j]])


def write_confusion_csv(path: str | Path, matrix: np.ndarray) -> None:
    """Confusion counts with labeled rows and columns."""
    n = matrix.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + [str(c) for c in range(n)])
        for r in range(n):
            writer.writerow([str(r)] + [int(v) for v in matrix[r]])


def summarize(records, n_labels: int) -> dict:
    """Scalar summary used by the CLI and history events."""
    margin_values = margins(records)
    correct_margins = margin_values[[r.correct for r in records]]
    return {
        "n": len(records),
        "accuracy": accuracy(records),
        "zero_output_fraction": zero_output_fraction(records),
        "mean_margin": float(margin_values.mean()) if len(records) else 0.0,
        "mean_correct_margin": float(correct_margins.mean()) if len(correct_margins) else 0.0,
        "margin_at_least_1_fraction": (
            float((correct_margins >= 1).mean()) if len(correct_margins) else 0.0
        ),
        "mean_boosts": float(np.mean([r.boosts_used for r in records])) if records else 0.0,
    }
