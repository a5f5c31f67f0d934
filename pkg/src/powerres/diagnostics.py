"""Training-dynamics instrumentation: weight-norm histories and gradient histograms.

CSV layouts
-----------
norms        ``epoch,layer,frobenius``  (``layer`` is 1..L+1, or ``all`` for the aggregate)
histograms   ``layer,bin_lo,bin_hi,count``
loss history ``iter,train_mse,val_rel_l2,elapsed_s`` (empty cell when not evaluated)
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ContractError, ParameterSet, frobenius_norm


@dataclass
class NormHistory:
    epochs: list = field(default_factory=list)
    per_layer: list = field(default_factory=list)   # one array of per-layer norms per epoch
    aggregate: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def as_array(self) -> np.ndarray:
        return np.array(self.per_layer)

    def __eq__(self, other):
        return (isinstance(other, NormHistory) and self.epochs == other.epochs
                and np.array_equal(self.as_array(), other.as_array())
                and np.array_equal(self.aggregate, other.aggregate))


def record_norms(params: ParameterSet, epoch: int, history: NormHistory) -> NormHistory:
    if history.epochs and epoch <= history.epochs[-1]:
        raise ContractError(f"epoch {epoch} is not after the last recorded epoch {history.epochs[-1]}")
    history.epochs.append(int(epoch))
    history.per_layer.append(np.array([frobenius_norm([w]) for w in params.weights]))
    history.aggregate.append(frobenius_norm(params.weights))
    return history


@dataclass
class GradHistogram:
    layer: int
    edges: np.ndarray
    counts: np.ndarray
    epoch: int | None = None

    def __eq__(self, other):
        return (isinstance(other, GradHistogram) and self.layer == other.layer
                and np.array_equal(self.edges, other.edges) and np.array_equal(self.counts, other.counts))


def histogram_gradients(grad: ParameterSet, layer: int, bins: int = 50, epoch: int | None = None) -> GradHistogram:
    """Uniform-bin histogram of the weight-gradient entries of ``layer`` (1-based)."""
    if bins < 2:
        raise ContractError("need at least 2 bins")
    if not 1 <= layer <= grad.n_layers:
        raise ContractError(f"layer {layer} not in 1..{grad.n_layers}")
    vals = np.ravel(grad.weights[layer - 1])
    if vals.size == 0:
        raise ContractError("selected layer has no weights")
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        pad = max(abs(lo), 1.0) * 1e-12 + 1e-300
        lo, hi = lo - pad, hi + pad
    counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    return GradHistogram(layer, edges, counts, epoch)


def export_norms_csv(history: NormHistory, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "layer", "frobenius"])
        for e, norms, agg in zip(history.epochs, history.per_layer, history.aggregate):
            for l, v in enumerate(norms, start=1):
                w.writerow([e, l, repr(float(v))])
            w.writerow([e, "all", repr(float(agg))])


def import_norms_csv(path) -> NormHistory:
    hist = NormHistory()
    layer_vals = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            e = int(row["epoch"])
            if row["layer"] == "all":
                hist.epochs.append(e)
                hist.per_layer.append(np.array(layer_vals))
                hist.aggregate.append(float(row["frobenius"]))
                layer_vals = []
            else:
                layer_vals.append(float(row["frobenius"]))
    return hist


def export_histograms_csv(histograms, path) -> None:
    """One snapshot per file; the epoch belongs in the file name."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "bin_lo", "bin_hi", "count"])
        for h in histograms:
            for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts):
                w.writerow([h.layer, repr(float(lo)), repr(float(hi)), int(c)])


def import_histograms_csv(path) -> list:
    groups: dict = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            lo, hi, c = groups.setdefault(int(row["layer"]), ([], [], []))
            lo.append(float(row["bin_lo"]))
            hi.append(float(row["bin_hi"]))
            c.append(int(row["count"]))
    return [GradHistogram(layer, np.array(lo + hi[-1:]), np.array(c)) for layer, (lo, hi, c) in groups.items()]


LOSS_COLUMNS = ("iter", "train_mse", "val_rel_l2", "elapsed_s")


def export_loss_csv(rows, path) -> None:
    """``rows`` are ``(iter, train_mse, val_rel_l2 or None, elapsed_s)``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for it, tr, va, el in rows:
            w.writerow([it, repr(float(tr)), "" if va is None else repr(float(va)), f"{el:.6f}"])


def import_loss_csv(path) -> list:
    rows = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append((int(r["iter"]), float(r["train_mse"]),
                         None if r["val_rel_l2"] == "" else float(r["val_rel_l2"]), float(r["elapsed_s"])))
    return rows
