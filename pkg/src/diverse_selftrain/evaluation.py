"""Accuracy, expected calibration error, confidence histograms, leave-one-out."""
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, InputError, ShapeError
from .rng import stream

ECE_BINS = 10
HIST_BINS = 20


def accuracy(predictions, truth):
    p = np.asarray(predictions)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} != truth shape {t.shape}")
    if p.size == 0:
        raise InputError("accuracy of an empty set")
    return float(np.mean(p == t))


@dataclass
class CalibrationReport:
    bin_count: int
    bin_lo: np.ndarray
    bin_hi: np.ndarray
    counts: np.ndarray
    mean_conf: np.ndarray
    accuracy: np.ndarray
    ece: float

    def rows(self):
        for b in range(self.bin_count):
            yield (float(self.bin_lo[b]), float(self.bin_hi[b]), int(self.counts[b]),
                   float(self.mean_conf[b]), float(self.accuracy[b]))


def _check_unit(conf):
    c = np.asarray(conf, dtype=np.float64)
    if c.ndim != 1:
        raise ShapeError("confidences must be 1-D")
    if np.any(~np.isfinite(c)) or np.any(c < 0.0) or np.any(c > 1.0):
        raise InputError("confidences must lie in [0, 1]")
    return c


def bin_index(conf, n_bins):
    """Right-inclusive equal-width bins: (b/B, (b+1)/B], with 0 in bin 0."""
    return np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)


def ece(confidences, correct, bins=ECE_BINS, backend=None):
    """Expected calibration error with equal-width, right-inclusive bins.

    Empty bins contribute nothing; their mean confidence and accuracy are
    reported as 0.
    """
    c = _check_unit(confidences)
    hits = np.asarray(correct, dtype=np.float64)
    if hits.shape != c.shape:
        raise ShapeError("correctness flags must match confidences")
    if c.size == 0:
        raise InputError("ECE of an empty set")
    if bins < 1:
        raise ConfigurationError("need at least one bin")
    counts, conf_sum, hit_sum = _kernels.bin_stats(c, hits, bins, backend)
    nz = counts > 0
    mean_conf = np.where(nz, conf_sum / np.maximum(counts, 1), 0.0)
    acc = np.where(nz, hit_sum / np.maximum(counts, 1), 0.0)
    value = float(np.sum(counts / c.size * np.abs(acc - mean_conf)))
    edges = np.arange(bins + 1) / bins
    return CalibrationReport(bins, edges[:-1], edges[1:], counts.astype(np.int64),
                             mean_conf, acc, value)


@dataclass
class Histograms:
    edges: np.ndarray
    correct: np.ndarray
    wrong: np.ndarray

    def rows(self):
        for b in range(self.edges.size - 1):
            yield (float(self.edges[b]), float(self.edges[b + 1]),
                   int(self.correct[b]), int(self.wrong[b]))


def confidence_histograms(scores, correct, bins=HIST_BINS):
    """Counts per bin, split by prediction correctness (same bin rule as ECE)."""
    c = _check_unit(scores)
    ok = np.asarray(correct, dtype=bool)
    if c.size == 0:
        raise InputError("histogram of an empty set")
    if ok.shape != c.shape:
        raise ShapeError("correctness flags must match scores")
    idx = bin_index(c, bins)
    return Histograms(np.arange(bins + 1) / bins,
                      np.bincount(idx[ok], minlength=bins),
                      np.bincount(idx[~ok], minlength=bins))


@dataclass
class MetricSummary:
    name: str
    per_seed: dict = field(default_factory=dict)

    @property
    def values(self):
        return np.array([self.per_seed[k] for k in sorted(self.per_seed)], dtype=np.float64)

    @property
    def mean(self):
        return float(self.values.mean()) if self.per_seed else float("nan")

    @property
    def std(self):
        return float(self.values.std()) if self.per_seed else float("nan")

    def to_dict(self):
        return {"name": self.name, "per_seed": {str(k): v for k, v in sorted(self.per_seed.items())},
                "mean": self.mean, "std": self.std}


def leave_one_out_accuracy(x_l, y_l, net_factory, train_cfg, seed, train_fn=None):
    """Train ``n_l`` networks, each without one labeled point, and score that point.

    Folds see no unlabeled data: the held-out prediction comes from the
    prediction head, which only ever receives the supervised gradient.
    Returns ``(accuracy, per_fold_correct)``.
    """
    from .selftrain import train_network

    x_l = np.asarray(x_l, dtype=np.float64)
    y_l = np.asarray(y_l, dtype=np.int64)
    n = y_l.size
    if n < 2:
        raise ConfigurationError("leave-one-out needs at least two labeled points")
    train_fn = train_fn or train_network
    correct = np.zeros(n, dtype=bool)
    for i in range(n):
        keep = np.arange(n) != i
        net = net_factory(i)
        train_fn(net, x_l[keep], y_l[keep], None, train_cfg, stream(seed, "loo", i))
        correct[i] = net.predict(x_l[i:i + 1])[0] == y_l[i]
    return float(correct.mean()), correct


# ---------------------------------------------------------------- emission

CALIBRATION_HEADER = ["bin_lo", "bin_hi", "count", "mean_conf", "accuracy"]


def write_calibration_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CALIBRATION_HEADER)
        for row in report.rows():
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def calibration_to_json(report):
    blob = asdict(report)
    for k, v in blob.items():
        if isinstance(v, np.ndarray):
            blob[k] = v.tolist()
    return json.dumps(blob)


def write_histograms_csv(path, hist):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count_correct", "count_wrong"])
        for row in hist.rows():
            w.writerow(row)
