"""Membrane-potential histograms, quantization error and spike-rate reporting."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .neurons import mpr, quantization_error
from .tensor import Tensor

REPORT_COLUMNS = ("layer", "err_before", "err_after", "spike_rate")
DEFAULT_RANGE = (-1.0, 2.0)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "Histogram") -> "Histogram":
        if not np.array_equal(self.edges, other.edges):
            raise ContractError("cannot merge histograms with different bin edges")
        return Histogram(self.edges, self.counts + other.counts)


def _values(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64).reshape(-1)


def membrane_histogram(values, bins: int = 60, range: tuple[float, float] = DEFAULT_RANGE) -> Histogram:
    """Uniform-width histogram; values outside ``range`` land in the edge bins.

    The last bin is closed on the right, as in :func:`numpy.histogram`.
    """
    lo, hi = range
    if bins < 2 or not lo < hi:
        raise ContractError(f"need bins >= 2 and lo < hi, got bins={bins}, range={range}")
    counts, edges = np.histogram(np.clip(_values(values), lo, hi), bins=bins, range=(lo, hi))
    return Histogram(edges, counts.astype(np.int64))


def avg_quant_error(h, use_mpr: bool, v_th: float = 0.5) -> float:
    """Mean of (u - Θ(u - v_th))^2 with u = phi(h) if ``use_mpr`` else h."""
    u = _values(h)
    if u.size == 0:
        return 0.0
    if use_mpr:
        u = mpr(u)
    return float(np.mean(quantization_error(u, v_th)))


def spike_rate(o_seq) -> float:
    """Fraction of ones over all neurons and timesteps."""
    o = _values(o_seq)
    if o.size == 0:
        return 0.0
    if not np.all((o == 0) | (o == 1)):
        raise ContractError("spike tensor contains values other than 0 and 1")
    return float(o.mean())


@dataclass
class LayerReport:
    layer: str
    err_before: float
    err_after: float
    spike_rate: float
    hist_h: Histogram | None = None
    hist_h_hat: Histogram | None = None


@dataclass
class RunReport:
    layers: list[LayerReport] = field(default_factory=list)
    accuracy: float | None = None
    loss: float | None = None


class LayerAccumulator:
    """Running sums for one neuron layer; merging is associative."""

    def __init__(self, name: str, bins: int = 60, range=DEFAULT_RANGE, v_th: float = 0.5):
        self.name, self.bins, self.range, self.v_th = name, bins, tuple(range), v_th
        self.count = 0
        self.err_before = 0.0
        self.err_after = 0.0
        self.spikes = 0.0
        self.n_spikes = 0
        self.hist_h = Histogram(np.linspace(*self.range, bins + 1), np.zeros(bins, np.int64))
        self.hist_h_hat = Histogram(self.hist_h.edges, np.zeros(bins, np.int64))

    def add(self, h, h_hat, o) -> None:
        h = _values(h)
        phi_h = mpr(h) if h.size else h
        self.count += h.size
        self.err_before += float(quantization_error(h, self.v_th).sum())
        self.err_after += float(quantization_error(phi_h, self.v_th).sum())
        o = _values(o)
        spike_rate(o)  # binary check
        self.spikes += float(o.sum())
        self.n_spikes += o.size
        self.hist_h = self.hist_h.merge(membrane_histogram(h, self.bins, self.range))
        self.hist_h_hat = self.hist_h_hat.merge(membrane_histogram(_values(h_hat), self.bins, self.range))

    def merge(self, other: "LayerAccumulator") -> "LayerAccumulator":
        out = LayerAccumulator(self.name, self.bins, self.range, self.v_th)
        out.count = self.count + other.count
        out.err_before = self.err_before + other.err_before
        out.err_after = self.err_after + other.err_after
        out.spikes = self.spikes + other.spikes
        out.n_spikes = self.n_spikes + other.n_spikes
        out.hist_h = self.hist_h.merge(other.hist_h)
        out.hist_h_hat = self.hist_h_hat.merge(other.hist_h_hat)
        return out

    def result(self) -> LayerReport:
        n = max(self.count, 1)
        return LayerReport(self.name, self.err_before / n, self.err_after / n,
                           self.spikes / max(self.n_spikes, 1), self.hist_h, self.hist_h_hat)


def accumulate_activations(acts, accumulators: dict[int, LayerAccumulator] | None = None,
                           bins: int = 60, range=DEFAULT_RANGE) -> dict[int, LayerAccumulator]:
    """Fold one forward pass's neuron activity into per-layer accumulators.

    ``h_hat`` is histogrammed as phi(h) so the "after" histogram is defined
    even for layers that fire without the rectifier.
    """
    accumulators = {} if accumulators is None else accumulators
    for index, records in acts.neurons.items():
        h = np.stack([r.h.data for r in records])
        o = np.stack([r.o.data for r in records])
        acc = accumulators.setdefault(index, LayerAccumulator(f"layer{index}", bins, range))
        acc.add(h, mpr(h.reshape(-1)), o)
    return accumulators


def build_report(accumulators: dict[int, LayerAccumulator], accuracy=None, loss=None) -> RunReport:
    return RunReport([accumulators[k].result() for k in sorted(accumulators)], accuracy, loss)


def _g(x) -> float | None:
    return None if x is None else float(f"{x:.6g}")


def _hist_json(h: Histogram | None):
    if h is None:
        return None
    return {"edges": [_g(e) for e in h.edges], "counts": [int(c) for c in h.counts]}


def report_to_dict(report: RunReport) -> dict:
    return {
        "accuracy": _g(report.accuracy),
        "loss": _g(report.loss),
        "layers": [
            {
                "layer": lr.layer,
                "err_before": _g(lr.err_before),
                "err_after": _g(lr.err_after),
                "spike_rate": _g(lr.spike_rate),
                "hist_h": _hist_json(lr.hist_h),
                "hist_h_hat": _hist_json(lr.hist_h_hat),
            }
            for lr in report.layers
        ],
    }


def emit_report(report: RunReport, path: str | os.PathLike, format: str = "csv") -> None:
    """Write ``report`` as per-layer CSV rows or as nested JSON."""
    if format not in ("csv", "json"):
        raise ContractError(f"unknown report format {format!r}")
    try:
        with open(path, "w", newline="") as f:
            if format == "csv":
                w = csv.writer(f, lineterminator="\n")
                w.writerow(REPORT_COLUMNS)
                for lr in report.layers:
                    w.writerow([lr.layer, f"{lr.err_before:.6g}", f"{lr.err_after:.6g}",
                                f"{lr.spike_rate:.6g}"])
            else:
                json.dump(report_to_dict(report), f, indent=2)
                f.write("\n")
    except OSError as e:
        raise OSError(f"cannot write report to {path}: {e.strerror or e}") from e
