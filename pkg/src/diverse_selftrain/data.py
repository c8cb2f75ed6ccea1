"""Dataset loading, standardization, train/test split and labeling procedures.

Labeling produces index sets into the training portion:
* IID: uniform draws without replacement inside each class;
* SSB: sequential draws with weights ``exp(r * |proj_1(x)|)``, where
  ``proj_1`` is the projection on the first principal component of the class;
* interpolated: the convex mix ``(1 - alpha) * uniform + alpha * SSB``.
Per-class quotas follow the class frequencies with largest-remainder rounding.
"""
import csv
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import (
    ConfigurationError,
    InsufficientDataError,
    ParseError,
    SchemaError,
    StratificationError,
)
from .linalg import project_first_component
from .rng import stream

STD_EPS = 1e-12
LABEL_MODES = ("iid", "ssb", "interpolated")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    label_values: list = field(default_factory=list)
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise SchemaError("features must be (n, d) with n labels")
        if self.labels.size:
            counts = np.bincount(self.labels)
            if self.labels.min() < 0 or np.any(counts == 0):
                raise SchemaError("labels must cover 0..C-1 contiguously")
        if not self.label_values:
            self.label_values = list(range(self.n_classes))

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def shape(self):
        return self.features.shape


# ---------------------------------------------------------------- loading

def _encode_labels(raw):
    """Map raw label strings to 0..C-1 in sorted order (numeric if possible)."""
    distinct = sorted(set(raw))
    try:
        keyed = sorted(distinct, key=float)
        values = [float(v) for v in keyed]
        values = [int(v) if v.is_integer() else v for v in values]
    except ValueError:
        keyed, values = distinct, distinct
    code = {v: i for i, v in enumerate(keyed)}
    return np.array([code[v] for v in raw], dtype=np.int64), values


def _load_csv(path, header, label_column):
    rows, raw = [], []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, rec in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not rec or all(not c.strip() for c in rec):
                continue
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise SchemaError(f"line {lineno}: expected {width} fields, got {len(rec)}")
            col = label_column if label_column >= 0 else width + label_column
            if not 0 <= col < width:
                raise SchemaError(f"label column {label_column} out of range")
            raw.append(rec[col].strip())
            try:
                rows.append([float(v) for i, v in enumerate(rec) if i != col])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    if not rows:
        return np.zeros((0, 0)), raw
    return np.array(rows, dtype=np.float64), raw


def _load_libsvm(path, n_features=None):
    entries, raw = [], []
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            raw.append(parts[0])
            row = {}
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    i, v = int(idx), float(val)
                except ValueError:
                    raise ParseError(f"bad token {tok!r}", lineno) from None
                if not sep or i < 1:
                    raise ParseError(f"bad token {tok!r}", lineno)
                row[i] = v
                max_idx = max(max_idx, i)
            entries.append(row)
    d = max_idx if n_features is None else n_features
    if max_idx > d:
        raise SchemaError(f"feature index {max_idx} exceeds declared width {d}")
    x = np.zeros((len(entries), d))
    for r, row in enumerate(entries):
        for i, v in row.items():
            x[r, i - 1] = v
    return x, raw


def load_dataset(path, fmt="csv", header=False, label_column=-1, name=None,
                 n_features=None):
    """Read a CSV or sparse ``label idx:val`` file into a ``Dataset``.

    Parameters
    ----------
    fmt : {"csv", "libsvm"}
    header : bool
        CSV only: skip the first line.
    label_column : int
        CSV only: position of the label column, negative counts from the end.
    n_features : int, optional
        libsvm only: declared width; defaults to the largest index seen.
    """
    if fmt == "csv":
        x, raw = _load_csv(path, header, label_column)
    elif fmt == "libsvm":
        x, raw = _load_libsvm(path, n_features)
    else:
        raise ConfigurationError(f"unknown dataset format {fmt!r}")
    if not raw:
        raise InsufficientDataError(f"{path} holds no rows")
    labels, values = _encode_labels(raw)
    return Dataset(x, labels, name=name or str(path), label_values=values)


def write_csv(dataset, path, header=False):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        d = dataset.features.shape[1]
        if header:
            w.writerow([f"f{i}" for i in range(d)] + ["label"])
        for row, y in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [dataset.label_values[y]])


def write_libsvm(dataset, path):
    with open(path, "w") as fh:
        for row, y in zip(dataset.features, dataset.labels):
            toks = [f"{i + 1}:{float(v)!r}" for i, v in enumerate(row) if v != 0.0]
            fh.write(" ".join([str(dataset.label_values[y])] + toks) + "\n")


# ---------------------------------------------------------------- transforms

def standardize(dataset, fit_indices):
    """Z-score every column with statistics of ``fit_indices`` (ddof=0).

    Columns whose fitted std is below ``1e-12`` become all zeros.
    """
    fit_indices = np.asarray(fit_indices, dtype=np.int64)
    if fit_indices.size == 0:
        raise InsufficientDataError("standardize needs at least one fit row")
    fit = dataset.features[fit_indices]
    mean = fit.mean(axis=0)
    std = fit.std(axis=0)
    flat = std < STD_EPS
    safe = np.where(flat, 1.0, std)
    out = (dataset.features - mean) / safe
    out[:, flat] = 0.0
    return replace(dataset, features=out, mean=mean, std=std)


# ---------------------------------------------------------------- splitting

@dataclass
class LabelingSpec:
    mode: str = "iid"
    n_labeled: int = 10
    r: float = 1.0
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in LABEL_MODES:
            raise ConfigurationError(f"unknown labeling mode {self.mode!r}")
        if self.n_labeled < 1:
            raise ConfigurationError("n_labeled must be positive")
        if self.mode != "iid" and not self.r > 0:
            raise ConfigurationError("r must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")


@dataclass
class SplitResult:
    labeled: np.ndarray
    labeled_y: np.ndarray
    unlabeled: np.ndarray
    test: np.ndarray
    spec: dict = field(default_factory=dict)
    seed: int = 0

    def check_partition(self, n):
        allidx = np.concatenate([self.labeled, self.unlabeled, self.test])
        return allidx.size == n and np.array_equal(np.sort(allidx), np.arange(n))

    def to_json(self):
        return json.dumps({
            "labeled": self.labeled.tolist(),
            "labeled_y": self.labeled_y.tolist(),
            "unlabeled": self.unlabeled.tolist(),
            "test": self.test.tolist(),
            "spec": self.spec,
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, text):
        blob = json.loads(text)
        arr = lambda k: np.asarray(blob[k], dtype=np.int64)  # noqa: E731
        return cls(arr("labeled"), arr("labeled_y"), arr("unlabeled"), arr("test"),
                   blob.get("spec", {}), blob.get("seed", 0))


def split_train_test(labels, test_fraction=0.25, seed=0):
    """Stratified split; returns ``(train_indices, test_indices)``, both sorted.

    The test set holds ``round(test_fraction * n)`` rows: each class gets the
    floor of its share and the leftover goes to the largest class (lowest
    index on ties).
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    counts = np.bincount(labels)
    if np.any(counts[counts > 0] < 2):
        raise StratificationError("every class needs at least two examples")
    target = int(round(test_fraction * n))
    per = np.floor(counts * test_fraction).astype(np.int64)
    per[int(np.argmax(counts))] += target - per.sum()
    rng = stream(seed, "split")
    test = []
    for c in range(counts.size):
        members = np.flatnonzero(labels == c)
        test.append(rng.permutation(members)[: per[c]])
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(n), test)
    return train, test


def class_quotas(class_counts, n_labeled):
    """Largest-remainder allocation of ``n_labeled`` proportional to counts."""
    counts = np.asarray(class_counts, dtype=np.int64)
    total = counts.sum()
    if n_labeled > total:
        raise ConfigurationError(f"cannot label {n_labeled} of {total} examples")
    exact = counts * n_labeled / total
    quota = np.floor(exact).astype(np.int64)
    short = n_labeled - quota.sum()
    # stable sort: equal remainders go to the lower class index
    order = np.argsort(-(exact - quota), kind="stable")
    quota[order[:short]] += 1
    if np.any(quota > counts):
        raise ConfigurationError("a class quota exceeds the class size")
    if np.any(quota[counts > 0] == 0):
        raise ConfigurationError(
            f"n_labeled={n_labeled} leaves some class without a labeled example")
    return quota


def ssb_weights(features, r):
    """Unnormalised SSB weights ``exp(r * |proj_1|)`` for one class.

    Shifted by the maximum exponent before ``exp`` so large projections do
    not overflow; the common factor cancels on normalisation.
    """
    if features.shape[0] < 2:
        raise InsufficientDataError("SSB needs at least two members per class")
    z = r * np.abs(project_first_component(features))
    return np.exp(z - z.max())


def _draw(weights, k, rng, backend=None):
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    return _kernels.weighted_draws(weights, rng.random(k), backend)


def _label(train_idx, labels, features, spec, seed, backend=None):
    train_idx = np.asarray(train_idx, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)[train_idx]
    n_classes = int(y.max()) + 1
    quota = class_quotas(np.bincount(y, minlength=n_classes), spec.n_labeled)
    # the interpolation end points reuse the pure modes, draw for draw
    mode = spec.mode
    if mode == "interpolated" and spec.alpha in (0.0, 1.0):
        mode = "iid" if spec.alpha == 0.0 else "ssb"
    picked = []
    for c in range(n_classes):
        members = train_idx[y == c]
        rng = stream(seed, f"label/{mode}", c)
        if mode == "iid":
            w = np.ones(members.size)
        else:
            w = ssb_weights(features[members], spec.r)
            if mode == "interpolated":
                w = (1.0 - spec.alpha) / members.size + spec.alpha * w / w.sum()
        picked.append(members[_draw(w, int(quota[c]), rng, backend)])
    labeled = np.concatenate(picked)
    unlabeled = np.setdiff1d(train_idx, labeled)
    return labeled, unlabeled


def _result(labeled, unlabeled, test, labels, spec, seed):
    return SplitResult(labeled, np.asarray(labels)[labeled], unlabeled,
                       np.asarray(test if test is not None else [], dtype=np.int64),
                       asdict(spec), seed)


def label_iid(train_idx, labels, n_labeled, seed, test_idx=None):
    spec = LabelingSpec("iid", n_labeled, seed=seed)
    lab, unl = _label(train_idx, labels, None, spec, seed)
    return _result(lab, unl, test_idx, labels, spec, seed)


def label_ssb(train_idx, features, labels, n_labeled, r, seed, test_idx=None,
              backend=None):
    spec = LabelingSpec("ssb", n_labeled, r=r, seed=seed)
    lab, unl = _label(train_idx, labels, features, spec, seed, backend)
    return _result(lab, unl, test_idx, labels, spec, seed)


def label_interpolated(train_idx, features, labels, n_labeled, r, alpha, seed,
                       test_idx=None, backend=None):
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError("alpha must lie in [0, 1]")
    spec = LabelingSpec("interpolated", n_labeled, r=r, alpha=alpha, seed=seed)
    lab, unl = _label(train_idx, labels, features, spec, seed, backend)
    return _result(lab, unl, test_idx, labels, spec, seed)


def first_draw_probabilities(features, r, alpha=1.0):
    """Analytic probability of each class member being drawn first."""
    n = features.shape[0]
    w = ssb_weights(features, r) if alpha > 0 else np.ones(n)
    p = w / w.sum()
    return (1.0 - alpha) / n + alpha * p


def make_split(dataset, spec, seed, test_fraction=0.25, standardize_on="train",
               backend=None):
    """Split, standardize and label ``dataset``.

    Returns ``(standardized_dataset, SplitResult)``.  ``standardize_on`` is
    ``train`` (labeled + unlabeled rows) or ``all``.
    """
    train, test = split_train_test(dataset.labels, test_fraction, seed)
    fit = train if standardize_on == "train" else np.arange(dataset.labels.size)
    ds = standardize(dataset, fit)
    if spec.mode == "iid":
        res = label_iid(train, ds.labels, spec.n_labeled, seed, test)
    elif spec.mode == "ssb":
        res = label_ssb(train, ds.features, ds.labels, spec.n_labeled, spec.r,
                        seed, test, backend)
    else:
        res = label_interpolated(train, ds.features, ds.labels, spec.n_labeled,
                                 spec.r, spec.alpha, seed, test, backend)
    return ds, res


# ---------------------------------------------------------------- synthetic

def biased_gaussians(n=2000, d=5, separation=1.0, seed=0):
    """Two isotropic Gaussians with means ``+-separation`` on the first axis."""
    rng = stream(seed, "synthetic/gaussians")
    y = np.repeat([0, 1], [n // 2, n - n // 2])
    x = rng.normal(size=(n, d))
    x[:, 0] += np.where(y == 1, separation, -separation)
    order = rng.permutation(n)
    return Dataset(x[order], y[order], name=f"gaussians(d={d},sep={separation})")


def blobs(n=600, d=2, n_classes=2, spread=0.3, seed=0):
    """Well-separated blobs centred on scaled unit vectors."""
    rng = stream(seed, "synthetic/blobs")
    y = np.arange(n) % n_classes
    centres = np.zeros((n_classes, d))
    for c in range(n_classes):
        centres[c, c % d] = 3.0 * (1 if c < d else -1)
    x = centres[y] + spread * rng.normal(size=(n, d))
    return Dataset(x, y, name=f"blobs(C={n_classes})")
