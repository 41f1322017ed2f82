"""Rolling one-step evaluation, diagnostics and CSV emission."""
import csv
import io
import time
from dataclasses import dataclass, field
from typing import List, NamedTuple

import numpy as np

from rcovnet import linalg as la
from rcovnet.errors import IndexOutOfRange, SeriesTooShort, ShapeMismatch
from rcovnet.metrics import matrix_mae, matrix_rmse
from rcovnet.nn.model import feature_maps
from rcovnet.transforms import RCovSeries

__all__ = [
    "DayScore", "EvalReport", "matrix_rmse", "matrix_mae", "evaluate_series", "correlation_series",
    "feature_map_distances", "histogram", "report_csv", "summary_csv", "histogram_csv", "OracleForecaster",
]


class DayScore(NamedTuple):
    label: object
    rmse: float
    mae: float
    psd: bool


@dataclass
class EvalReport:
    model: str
    per_day: List[DayScore] = field(default_factory=list)
    elapsed: float = 0.0
    params: str = ""

    @property
    def mean_rmse(self):
        return float(np.mean([d.rmse for d in self.per_day])) if self.per_day else float("nan")

    @property
    def mean_mae(self):
        return float(np.mean([d.mae for d in self.per_day])) if self.per_day else float("nan")

    def __len__(self):
        return len(self.per_day)

    def summary_row(self):
        return {"model": self.model, "mean_rmse": self.mean_rmse, "mean_mae": self.mean_mae,
                "params": self.params, "runtime": self.elapsed}


def _is_psd(m, tol=1e-10):
    ev = np.linalg.eigvalsh(la.symmetrize(m))
    return bool(np.all(np.isfinite(ev)) and ev[0] >= -tol * max(abs(ev[-1]), 1.0))


class _ReadOnlyHistory:
    """Hands forecasters a read-only prefix so no state can leak between days."""

    def __init__(self, matrices):
        self.view = matrices.view()
        self.view.flags.writeable = False

    def upto(self, t):
        return self.view[:t]


def evaluate_series(forecaster, series, split, model=None):
    """Score one-step forecasts over every day of ``split.test``.

    The forecaster sees the true matrices of all earlier days, never its own
    forecasts.  Non-PSD forecasts are scored as they are and flagged.
    """
    mats = series.matrices if isinstance(series, RCovSeries) else np.asarray(series, dtype=np.float64)
    labels = series.labels if isinstance(series, RCovSeries) else list(range(mats.shape[0]))
    days = list(split.test)
    if not days:
        raise SeriesTooShort("the test split is empty")
    if days[0] < 1:
        raise SeriesTooShort("the first test day has no history")
    hist = _ReadOnlyHistory(mats)
    name = model or getattr(forecaster, "name", type(forecaster).__name__)
    report = EvalReport(name, params=str(getattr(forecaster, "params_label", "")))
    t0 = time.perf_counter()
    for t in days:
        pred = np.asarray(forecaster.predict(hist.upto(t)), dtype=np.float64)
        truth = mats[t]
        if pred.shape != truth.shape:
            raise ShapeMismatch(f"forecast for day {t} has shape {pred.shape}")
        report.per_day.append(DayScore(labels[t], matrix_rmse(pred, truth), matrix_mae(pred, truth), _is_psd(pred)))
    report.elapsed = time.perf_counter() - t0
    return report


def correlation_series(series, i, j):
    """Daily correlation Sigma_ij / sqrt(Sigma_ii Sigma_jj)."""
    mats = series.matrices if isinstance(series, RCovSeries) else np.asarray(series, dtype=np.float64)
    d = mats.shape[1]
    if i == j or not (0 <= i < d and 0 <= j < d):
        raise IndexOutOfRange(f"need distinct asset indices below {d}, got {i}, {j}")
    return mats[:, i, j] / np.sqrt(mats[:, i, i] * mats[:, j, j])


def feature_map_distances(spec, weights, sample):
    """Per layer, the MAE of every output channel against the transformed target.

    ``sample`` is a :class:`LagWindowSample` (or any object with ``input`` and
    ``target``).  Returns one array per layer with one entry per channel.
    """
    target = np.asarray(sample.target, dtype=np.float64)
    if target.shape != (spec.d, spec.d):
        raise ShapeMismatch(f"target must be {spec.d}x{spec.d}, got {target.shape}")
    return [matrix_mae(m, np.broadcast_to(target, m.shape)) for m in feature_maps(spec, weights, sample.input)]


def histogram(values, bins, value_range):
    """Counts over a fixed ``(lo, hi)`` range shared across layers.

    Values outside the range land in the end bins, so the counts always sum to
    ``len(values)``.
    """
    if bins < 1:
        raise ValueError("bins must be at least 1")
    lo, hi = map(float, value_range)
    if not hi > lo:
        raise ValueError("histogram range must have hi > lo")
    v = np.clip(np.asarray(values, dtype=np.float64).ravel(), lo, hi)
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return counts, edges


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report_csv(report):
    rows = [(d.label, repr(d.rmse), repr(d.mae), int(d.psd)) for d in report.per_day]
    return _csv_text(("day", "rmse", "mae", "psd"), rows)


def summary_csv(reports):
    keys = ("model", "mean_rmse", "mean_mae", "params", "runtime")
    rows = []
    for r in reports:
        row = r.summary_row()
        rows.append(tuple(repr(row[k]) if isinstance(row[k], float) else row[k] for k in keys))
    return _csv_text(keys, rows)


def histogram_csv(per_layer_values, bins, value_range):
    """One row per (layer, bin) over a common range."""
    rows = []
    for k, vals in enumerate(per_layer_values):
        counts, edges = histogram(vals, bins, value_range)
        rows.extend((k, repr(edges[b]), repr(edges[b + 1]), int(counts[b])) for b in range(bins))
    return _csv_text(("layer", "lo", "hi", "count"), rows)


class OracleForecaster:
    """Conditional-mean forecast that knows the true latent scales.

    For day ``t`` it returns ``A S_f(t) A' + Sigma_0``, the exact conditional
    expectation of the simulated matrix given the past.
    """

    name = "Oracle"
    params_label = "-"

    def __init__(self, scales, embedding):
        self.scales = np.asarray(scales, dtype=np.float64)
        self.embedding = embedding

    def predict(self, history):
        return self.embedding.compose(self.scales[len(history)])
