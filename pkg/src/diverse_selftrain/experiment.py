"""Config-driven experiment runner: seeds x (policy, confidence) cells, sweeps."""
import csv
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace


from . import __version__
from . import data as D
from .confidence import score_unlabeled
from .errors import ConfigurationError
from .evaluation import MetricSummary, accuracy, confidence_histograms, ece, leave_one_out_accuracy
from .rng import stream
from .selftrain import PolicyConfig, TrainConfig, default_factory, run_self_training, train_network

PLOT_KINDS = ("calibration_vs_gamma", "histograms", "bias_strength", "ablation")


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _strs(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic:gaussians"
    format: str = "csv"
    header: bool = False
    label_column: int = -1
    name: str = ""
    labeling: str = "ssb"
    n_labeled: int = 30
    r: float = 2.0
    alpha: float = 1.0
    test_fraction: float = 0.25
    standardize_on: str = "train"
    policies: list = field(default_factory=lambda: ["fixed", "curriculum", "transductive"])
    confidences: list = field(default_factory=lambda: ["softmax", "tsim"])
    theta: float = 0.8
    delta: float = 0.4
    quantile: str = "empirical"
    n_heads: int = 5
    gamma: float = 1.0
    hidden: int = 128
    epochs: int = 5
    iters_per_epoch: int = 100
    batch_labeled: int = 32
    batch_unlabeled: int = 256
    lr: float = 1e-3
    max_iterations: int = 5
    warm_start: bool = False
    final_retrain: bool = False
    seeds: list = field(default_factory=lambda: list(range(9)))
    sweep_gamma: list = field(default_factory=list)
    sweep_alpha: list = field(default_factory=list)
    sweep_heads: list = field(default_factory=list)
    synthetic_n: int = 2000
    synthetic_d: int = 5
    synthetic_separation: float = 1.0
    out: str = "out"
    workers: int = 1

    _LISTS = {"policies": _strs, "confidences": _strs, "seeds": _ints,
              "sweep_gamma": _floats, "sweep_alpha": _floats, "sweep_heads": _ints}

    def validate(self):
        if not self.dataset.startswith("synthetic:") and not os.path.exists(self.dataset):
            raise ConfigurationError(f"dataset {self.dataset!r} not found")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigurationError("seeds must be a nonempty list of unique values")
        for p in self.policies:
            PolicyConfig(kind=p, theta=self.theta, delta=self.delta,
                         quantile=self.quantile)
        for c in self.confidences:
            PolicyConfig(confidence_source=c)
        D.LabelingSpec(self.labeling, self.n_labeled, self.r, self.alpha)
        self.train_config()
        return self

    def train_config(self, **over):
        cfg = TrainConfig(epochs=self.epochs, iters_per_epoch=self.iters_per_epoch,
                          batch_labeled=self.batch_labeled,
                          batch_unlabeled=self.batch_unlabeled, lr=self.lr,
                          hidden=self.hidden, n_heads=self.n_heads, gamma=self.gamma,
                          max_iterations=self.max_iterations,
                          warm_start=self.warm_start, final_retrain=self.final_retrain)
        return replace(cfg, **over) if over else cfg

    def labeling_spec(self, seed, **over):
        spec = D.LabelingSpec(self.labeling, self.n_labeled, self.r, self.alpha, seed)
        return replace(spec, **over) if over else spec

    def policy(self, kind, source):
        return PolicyConfig(kind=kind, theta=self.theta, delta=self.delta,
                            confidence_source=source, quantile=self.quantile)

    def display_name(self):
        return self.name or os.path.basename(self.dataset)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, blob):
        return cls(**{k: v for k, v in blob.items() if k in {f.name for f in fields(cls)}})

    def override(self, key, value):
        """Set ``key`` from its text form; lists are comma separated."""
        names = {f.name: f for f in fields(self)}
        if key not in names:
            raise ConfigurationError(f"unknown config key {key!r}")
        current = getattr(self, key)
        if key in self._LISTS:
            parsed = self._LISTS[key](value)
        elif isinstance(current, bool):
            parsed = _bool(value)
        elif isinstance(current, int):
            parsed = int(value)
        elif isinstance(current, float):
            parsed = float(value)
        else:
            parsed = str(value)
        setattr(self, key, parsed)
        return self


def load_config(path=None, overrides=()):
    """Parse a flat ``key = value`` file (``#`` comments) then apply overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ConfigurationError(f"{path}:{lineno}: expected key = value")
                cfg.override(key.strip(), value.strip())
    for key, value in overrides:
        cfg.override(key, value)
    return cfg


def load_data(cfg, seed=0):
    """The dataset for ``seed``.  Files ignore the seed; synthetic data is a
    fresh sample per seed, so seeds are independent replicates."""
    if cfg.dataset.startswith("synthetic:"):
        kind = cfg.dataset.split(":", 1)[1]
        if kind == "gaussians":
            return D.biased_gaussians(cfg.synthetic_n, cfg.synthetic_d,
                                      cfg.synthetic_separation, seed=seed)
        if kind == "blobs":
            return D.blobs(cfg.synthetic_n, cfg.synthetic_d, seed=seed)
        raise ConfigurationError(f"unknown synthetic dataset {kind!r}")
    return D.load_dataset(cfg.dataset, cfg.format, header=cfg.header,
                          label_column=cfg.label_column, name=cfg.display_name())


# ---------------------------------------------------------------- one seed

def _base_network(x, split, n_classes, tcfg, seed):
    """The t=1 classifier every cell of a seed starts from."""
    net = default_factory(x.shape[1], n_classes, tcfg, seed)(1)
    x_u = x[split.unlabeled] if split.unlabeled.size else None
    train_network(net, x[split.labeled], split.labeled_y, x_u, tcfg, stream(seed, "train", 1))
    return net


def _calibration(net, x, y, split):
    if split.unlabeled.size == 0:
        return {}
    sc = score_unlabeled(net, x[split.unlabeled])
    ok = sc.predicted == y[split.unlabeled]
    out = {"unlabeled_accuracy": float(ok.mean())}
    for src, conf in (("softmax", sc.softmax_max), ("tsim", sc.t_similarity)):
        out[f"ece_{src}"] = ece(conf, ok).ece
        h = confidence_histograms(conf, ok)
        out[f"hist_{src}"] = {"correct": h.correct.tolist(), "wrong": h.wrong.tolist()}
    return out


def _cells(cfg, ds, split, seed, tcfg, n_classes):
    x, y = ds.features, ds.labels
    base = _base_network(x, split, n_classes, tcfg, seed)
    result = {"erm_test_accuracy": accuracy(base.predict(x[split.test]), y[split.test]),
              "calibration": _calibration(base, x, y, split), "cells": {}}
    for kind in cfg.policies:
        for src in cfg.confidences:
            if kind == "none":
                continue
            net, state = run_self_training(
                x, split.labeled, split.labeled_y, split.unlabeled, n_classes,
                cfg.policy(kind, src), tcfg, seed, y_true=y,
                x_test=x[split.test], y_test=y[split.test], initial_net=base)
            result["cells"][f"{kind}/{src}"] = {
                "test_accuracy": accuracy(net.predict(x[split.test]), y[split.test]),
                "log": [asdict(r) for r in state.log],
            }
    return result


def run_seed(cfg, seed, dataset=None):
    """Everything one seed contributes to the record."""
    ds0 = dataset if dataset is not None else load_data(cfg, seed)
    n_classes = ds0.n_classes
    out = {"seed": seed}
    ds, split = D.make_split(ds0, cfg.labeling_spec(seed), seed, cfg.test_fraction,
                             cfg.standardize_on)
    out["n_labeled"] = int(split.labeled.size)
    out["n_unlabeled"] = int(split.unlabeled.size)
    out["n_test"] = int(split.test.size)
    out.update(_cells(cfg, ds, split, seed, cfg.train_config(), n_classes))

    sweeps = {}
    if cfg.sweep_gamma:
        sweeps["gamma"] = {}
        for g in cfg.sweep_gamma:
            tcfg = cfg.train_config(gamma=g)
            net = _base_network(ds.features, split, n_classes, tcfg, seed)
            entry = _calibration(net, ds.features, ds.labels, split)
            entry.pop("hist_softmax", None)
            entry.pop("hist_tsim", None)
            entry["erm_test_accuracy"] = accuracy(net.predict(ds.features[split.test]),
                                                  ds.labels[split.test])
            sweeps["gamma"][repr(g)] = entry
    if cfg.sweep_alpha:
        sweeps["alpha"] = {}
        for a in cfg.sweep_alpha:
            spec = cfg.labeling_spec(seed, mode="interpolated", alpha=a)
            ds_a, split_a = D.make_split(ds0, spec, seed, cfg.test_fraction,
                                         cfg.standardize_on)
            res = _cells(cfg, ds_a, split_a, seed, cfg.train_config(), n_classes)
            sweeps["alpha"][repr(a)] = _strip(res)
    if cfg.sweep_heads:
        sweeps["heads"] = {}
        for m in cfg.sweep_heads:
            res = _cells(cfg, ds, split, seed, cfg.train_config(n_heads=m), n_classes)
            sweeps["heads"][str(m)] = _strip(res)
    if sweeps:
        out["sweeps"] = sweeps
    return out


def _strip(res):
    return {"erm_test_accuracy": res["erm_test_accuracy"],
            "ece_softmax": res["calibration"].get("ece_softmax"),
            "ece_tsim": res["calibration"].get("ece_tsim"),
            "cells": {k: v["test_accuracy"] for k, v in res["cells"].items()}}


def _seed_job(args):
    cfg_dict, seed = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        return seed, run_seed(cfg, seed), None
    except Exception as exc:  # a failing seed must not sink the whole record
        return seed, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


def run_experiment(cfg, write=True):
    """Run every seed; returns the record dict (and writes it under ``cfg.out``)."""
    cfg.validate()
    started = time.time()
    jobs = [(cfg.to_dict(), s) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_seed_job, jobs))
    else:
        outcomes = [_seed_job(j) for j in jobs]
    per_seed, failures = {}, {}
    for seed, res, err in sorted(outcomes, key=lambda o: o[0]):
        if err is None:
            per_seed[str(seed)] = res
        else:
            failures[str(seed)] = err
    record = {
        "artifact_version": __version__,
        "config": cfg.to_dict(),
        "dataset": cfg.display_name(),
        "per_seed": per_seed,
        "failures": failures,
        "complete": not failures,
        "summary": summarize(per_seed),
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    if write:
        write_record(record, cfg.out)
    return record


def summarize(per_seed):
    metrics = {}

    def add(name, seed, value):
        if value is not None:
            metrics.setdefault(name, MetricSummary(name)).per_seed[int(seed)] = value

    for seed, res in per_seed.items():
        add("erm/test_accuracy", seed, res["erm_test_accuracy"])
        for key in ("ece_softmax", "ece_tsim", "unlabeled_accuracy"):
            add(f"base/{key}", seed, res["calibration"].get(key))
        for cell, val in res["cells"].items():
            add(f"{cell}/test_accuracy", seed, val["test_accuracy"])
    return {k: v.to_dict() for k, v in sorted(metrics.items())}


def write_record(record, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "record.json"), "w") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std", "n_seeds"])
        for name, m in record["summary"].items():
            w.writerow([name, repr(m["mean"]), repr(m["std"]), len(m["per_seed"])])
    write_table(record, os.path.join(out_dir, "table.csv"))


def write_table(record, path):
    """One row per dataset, one column per (policy, confidence) cell, in %."""
    cells = sorted({k.rsplit("/", 1)[0] for k in record["summary"]
                    if k.endswith("/test_accuracy") and k != "erm/test_accuracy"})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "erm"] + cells)
        row = [record["dataset"]]
        for key in ["erm"] + cells:
            m = record["summary"][f"{key}/test_accuracy"]
            row.append(f"{100 * m['mean']:.2f} ± {100 * m['std']:.2f}")
        w.writerow(row)


# ---------------------------------------------------------------- plot data

def emit_plot_data(record, kind, out_dir):
    """Write a tidy ``sweep_value,seed,metric,value`` CSV; returns its path."""
    if kind not in PLOT_KINDS:
        raise ConfigurationError(f"unknown plot kind {kind!r}")
    rows = []
    per_seed = record["per_seed"]
    if kind == "histograms":
        for seed, res in per_seed.items():
            for src in ("softmax", "tsim"):
                h = res["calibration"].get(f"hist_{src}")
                if not h:
                    continue
                for b, (c, wr) in enumerate(zip(h["correct"], h["wrong"])):
                    rows.append((b, seed, f"{src}/correct", c))
                    rows.append((b, seed, f"{src}/wrong", wr))
        header = ["bin", "seed", "metric", "value"]
    else:
        sweep = {"calibration_vs_gamma": "gamma", "bias_strength": "alpha",
                 "ablation": None}[kind]
        names = [sweep] if sweep else ["heads", "gamma"]
        for seed, res in per_seed.items():
            for name in names:
                for val, entry in res.get("sweeps", {}).get(name, {}).items():
                    for metric, v in _flatten(entry):
                        label = metric if sweep else f"{name}:{metric}"
                        rows.append((val, seed, label, v))
        header = ["sweep_value", "seed", "metric", "value"]
    if not rows:
        raise ConfigurationError(f"record holds no data for plot kind {kind!r}")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{kind}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _flatten(entry, prefix=""):
    for k, v in entry.items():
        if isinstance(v, dict):
            yield from _flatten(v, f"{prefix}{k}/")
        elif v is not None:
            yield f"{prefix}{k}", v


# ---------------------------------------------------------------- LOO, splits

def run_loo(cfg, modes=None):
    """Leave-one-out accuracy per seed for each labeling mode."""
    cfg.validate()
    tcfg = cfg.train_config()
    out = {}
    for mode in modes or [cfg.labeling]:
        summary = MetricSummary(f"loo/{mode}")
        for seed in cfg.seeds:
            ds0 = load_data(cfg, seed)
            ds, split = D.make_split(ds0, cfg.labeling_spec(seed, mode=mode), seed,
                                     cfg.test_fraction, cfg.standardize_on)
            factory = default_factory(ds.features.shape[1], ds0.n_classes, tcfg, seed)
            acc, _ = leave_one_out_accuracy(ds.features[split.labeled], split.labeled_y,
                                            factory, tcfg, seed)
            summary.per_seed[seed] = acc
        out[mode] = summary.to_dict()
    return out


def write_splits(cfg):
    cfg.validate()
    os.makedirs(cfg.out, exist_ok=True)
    paths = []
    for seed in cfg.seeds:
        _, split = D.make_split(load_data(cfg, seed), cfg.labeling_spec(seed), seed,
                                cfg.test_fraction, cfg.standardize_on)
        path = os.path.join(cfg.out, f"split_seed{seed}.json")
        with open(path, "w") as fh:
            fh.write(split.to_json())
        paths.append(path)
    return paths


def mean_of(record, metric):
    return record["summary"][metric]["mean"]

