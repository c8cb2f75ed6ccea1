"""Wrapper self-training with fixed-threshold, curriculum and transductive policies."""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .confidence import DiverseHeadNetwork, score_unlabeled, total_loss_step
from .errors import ConfigurationError
from .rng import stream

POLICY_KINDS = ("none", "fixed", "curriculum", "transductive")
CONFIDENCE_SOURCES = ("softmax", "tsim")


@dataclass(frozen=True)
class PolicyConfig:
    """Pseudo-labeling policy.

    ``kind`` is one of ``none`` (ERM: select nothing), ``fixed`` (strict
    threshold ``theta``), ``curriculum`` (quantile at ``1 - t*delta``) or
    ``transductive`` (per-class thresholds minimizing the error-bound ratio).
    ``quantile`` picks ``empirical`` (nearest rank) or ``pareto`` for the
    curriculum threshold.
    """

    kind: str = "fixed"
    theta: float = 0.8
    delta: float = 0.4
    confidence_source: str = "softmax"
    quantile: str = "empirical"

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigurationError(f"unknown policy kind {self.kind!r}")
        if self.confidence_source not in CONFIDENCE_SOURCES:
            raise ConfigurationError(
                f"unknown confidence source {self.confidence_source!r}")
        if self.kind == "fixed" and not 0.0 < self.theta < 1.0:
            raise ConfigurationError("theta must lie in (0, 1)")
        if self.kind == "curriculum":
            if not 0.0 < self.delta < 1.0:
                raise ConfigurationError("delta must lie in (0, 1)")
            if self.quantile not in ("empirical", "pareto"):
                raise ConfigurationError(f"unknown quantile rule {self.quantile!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    iters_per_epoch: int = 100
    batch_labeled: int = 32
    batch_unlabeled: int = 256
    lr: float = 1e-3
    hidden: int = 128
    n_heads: int = 5
    gamma: float = 1.0
    max_iterations: int = 5
    warm_start: bool = False
    # the loop returns the classifier trained before the last pseudo-labeling;
    # set this to retrain once more on the final pools.
    final_retrain: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("need at least one self-training iteration")
        if self.epochs < 1 or self.iters_per_epoch < 1:
            raise ConfigurationError("epochs and iterations must be positive")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be non-negative")


# ---------------------------------------------------------------- policies

def policy_fixed_threshold(confidences, theta):
    c = np.asarray(confidences, dtype=np.float64)
    return np.flatnonzero(c > theta)


def nearest_rank_quantile(values, level):
    """Smallest sorted value whose rank covers ``level`` of the sample.

    Rank is ``ceil(level * n)`` (1-based); the product is rounded to 9
    decimals first so that e.g. ``0.6 * 10`` gives rank 6, not 7.
    """
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(round(level * v.size, 9)))
    return float(v[rank - 1])


def pareto_quantile(values, level):
    """Quantile of a Pareto law fitted by maximum likelihood.

    Scale is the sample minimum, shape ``n / sum(log(x / x_min))``.  Falls
    back to the sample maximum when the fit degenerates (all values equal).
    """
    v = np.asarray(values, dtype=np.float64)
    x_m = float(v.min())
    if x_m <= 0:
        raise ConfigurationError("Pareto fit needs strictly positive confidences")
    logs = np.log(v / x_m).sum()
    if logs <= 0:
        return float(v.max())
    alpha = v.size / logs
    if level >= 1.0:
        return float("inf")
    return x_m * (1.0 - level) ** (-1.0 / alpha)


def policy_curriculum(confidences, delta, t, quantile="empirical"):
    c = np.asarray(confidences, dtype=np.float64)
    if t < 1:
        raise ConfigurationError("curriculum iteration counter starts at 1")
    if c.size == 0:
        return np.zeros(0, dtype=np.int64)
    level = max(0.0, 1.0 - t * delta)
    if level == 0.0:
        return np.arange(c.size)
    if quantile == "pareto":
        theta = pareto_quantile(c, level)
    else:
        theta = nearest_rank_quantile(c, level)
    return policy_fixed_threshold(c, theta)


def _class_prefix_thresholds(values):
    """Distinct candidate cuts for one predicted class.

    Returns (thresholds, sizes, losses): choosing ``thresholds[i]`` selects the
    ``sizes[i]`` most confident points with total ``1 - c`` equal to
    ``losses[i]``.  Candidates are ``{0}`` and every observed value.
    """
    v = np.sort(values)[::-1]
    distinct = np.unique(v)[::-1]
    cand = list(distinct)
    if distinct[-1] > 0.0:
        cand.append(0.0)
    cand = np.asarray(cand)
    sizes = np.array([int(np.sum(v > th)) for th in cand])
    cum = np.concatenate([[0.0], np.cumsum(1.0 - v)])
    return cand, sizes, cum[sizes]


def policy_transductive(confidences, predicted, n_classes=None, max_rounds=100):
    """Per-class thresholds minimizing ``sum_sel(1 - c) / |sel|``.

    The ratio is the error proxy ``(1/n_u) sum_sel (1 - c)`` divided by the
    selected fraction.  Exact minimization over the finite candidate grid by
    Dinkelbach iteration: for a fixed ratio ``lam`` the problem separates
    into one best prefix per class.  Among optimal selections the largest
    one wins.

    Returns ``(selected_indices, thresholds)``.
    """
    c = np.asarray(confidences, dtype=np.float64)
    pred = np.asarray(predicted, dtype=np.int64)
    if n_classes is None:
        n_classes = int(pred.max()) + 1 if pred.size else 0
    thresholds = np.ones(n_classes)
    tables = {}
    for k in range(n_classes):
        members = c[pred == k]
        if members.size:
            tables[k] = _class_prefix_thresholds(members)
    if not tables:
        return np.zeros(0, dtype=np.int64), thresholds

    def best_for(lam):
        total_loss, total_size, choice = 0.0, 0, {}
        for k, (cand, sizes, losses) in tables.items():
            obj = losses - lam * sizes
            best = obj.min()
            # ties toward the bigger selection
            i = int(np.flatnonzero(obj <= best)[np.argmax(sizes[obj <= best])])
            choice[k] = i
            total_loss += losses[i]
            total_size += sizes[i]
        return choice, total_loss, total_size

    # start from the largest possible selection
    choice = {k: int(np.argmax(t[1])) for k, t in tables.items()}
    size = sum(tables[k][1][i] for k, i in choice.items())
    if size == 0:
        return np.zeros(0, dtype=np.int64), thresholds
    lam = sum(tables[k][2][i] for k, i in choice.items()) / size
    for _ in range(max_rounds):
        new_choice, loss, size = best_for(lam)
        if size == 0:
            break
        new_lam = loss / size
        choice = new_choice
        if new_lam >= lam:
            break
        lam = new_lam
    for k, i in choice.items():
        thresholds[k] = tables[k][0][i]
    selected = np.flatnonzero(c > thresholds[pred])
    return selected, thresholds


def select(policy, scores, t):
    """Apply ``policy`` to ``ConfidenceScores``; returns sorted local indices."""
    conf = scores.confidence(policy.confidence_source)
    if policy.kind == "none":
        return np.zeros(0, dtype=np.int64)
    if policy.kind == "fixed":
        return policy_fixed_threshold(conf, policy.theta)
    if policy.kind == "curriculum":
        return policy_curriculum(conf, policy.delta, t, policy.quantile)
    sel, _ = policy_transductive(conf, scores.predicted,
                                 n_classes=scores.pred_probs.shape[1])
    return sel


# ---------------------------------------------------------------- training

def train_network(net, x_l, y_l, x_u, cfg, rng, adam=None):
    """Run ``epochs * iters_per_epoch`` Adam steps with resampled minibatches."""
    adam = adam if adam is not None else nn.AdamState(lr=cfg.lr)
    n_l = x_l.shape[0]
    n_u = 0 if x_u is None else x_u.shape[0]
    b_l = min(cfg.batch_labeled, n_l)
    b_u = min(cfg.batch_unlabeled, n_u)
    history = []
    for _ in range(cfg.epochs * cfg.iters_per_epoch):
        il = rng.integers(0, n_l, size=b_l)
        xu_batch = x_u[rng.integers(0, n_u, size=b_u)] if b_u else None
        history.append(total_loss_step(net, x_l[il], y_l[il], xu_batch, adam))
    return adam, history


@dataclass
class IterationLog:
    t: int
    n_selected: int
    n_labeled_total: int
    pseudo_label_accuracy: float | None
    test_accuracy_after_iter: float | None


@dataclass
class SelfTrainState:
    labeled_idx: np.ndarray
    labeled_y: np.ndarray
    unlabeled_idx: np.ndarray
    t: int = 0
    log: list = field(default_factory=list)

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(asdict(rec)) + "\n")


def default_factory(n_features, n_classes, cfg, seed):
    def make(index):
        return DiverseHeadNetwork(n_features, n_classes, hidden=cfg.hidden,
                                  n_heads=cfg.n_heads, gamma=cfg.gamma,
                                  seed=seed, init_index=index)
    return make


def run_self_training(x, labeled_idx, labeled_y, unlabeled_idx, n_classes,
                      policy, cfg, seed, net_factory=None, y_true=None,
                      x_test=None, y_test=None, initial_net=None):
    """Self-training loop over row indices of ``x``.

    Pools are index arrays into ``x``; ``y_true`` (hidden labels for all
    rows) only feeds the pseudo-label accuracy log.  Each iteration trains a
    freshly initialised network unless ``cfg.warm_start``.  ``initial_net``,
    if given, stands in for the first iteration's training (it must have
    been trained on the same pools); it is never modified.  Returns
    ``(network, state)``.
    """
    x = np.asarray(x, dtype=np.float64)
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    if labeled_idx.size == 0:
        raise ConfigurationError("self-training needs a nonempty labeled pool")
    state = SelfTrainState(labeled_idx.copy(), np.asarray(labeled_y, dtype=np.int64).copy(),
                           np.asarray(unlabeled_idx, dtype=np.int64).copy())
    if net_factory is None:
        net_factory = default_factory(x.shape[1], n_classes, cfg, seed)
    net, adam = None, None
    # ERM never moves anything, so further iterations would only reshuffle
    max_iter = 1 if policy.kind == "none" else cfg.max_iterations
    t = 1
    while t <= max_iter and state.unlabeled_idx.size:
        if t == 1 and initial_net is not None:
            net = initial_net
            if cfg.warm_start:
                net = net_factory(t)
                net.load_snapshot(initial_net.snapshot())
        else:
            if net is None or not cfg.warm_start:
                net, adam = net_factory(t), None
            rng = stream(seed, "train", t)
            adam, _ = train_network(net, x[state.labeled_idx], state.labeled_y,
                                    x[state.unlabeled_idx], cfg, rng, adam)
        scores = score_unlabeled(net, x[state.unlabeled_idx])
        chosen = select(policy, scores, t)
        moved = state.unlabeled_idx[chosen]
        pseudo = scores.predicted[chosen]
        pl_acc = None
        if y_true is not None and chosen.size:
            pl_acc = float(np.mean(pseudo == np.asarray(y_true)[moved]))
        test_acc = None
        if x_test is not None:
            test_acc = float(np.mean(net.predict(x_test) == y_test))
        keep = np.ones(state.unlabeled_idx.size, dtype=bool)
        keep[chosen] = False
        state.labeled_idx = np.concatenate([state.labeled_idx, moved])
        state.labeled_y = np.concatenate([state.labeled_y, pseudo])
        state.unlabeled_idx = state.unlabeled_idx[keep]
        state.t = t
        state.log.append(IterationLog(t, int(chosen.size), int(state.labeled_idx.size),
                                      pl_acc, test_acc))
        t += 1
    if net is None:
        # nothing unlabeled to begin with: plain supervised training
        net = net_factory(1)
        train_network(net, x[state.labeled_idx], state.labeled_y, None, cfg,
                      stream(seed, "train", 1))
    elif cfg.final_retrain and state.log and state.log[-1].n_selected:
        net = net_factory(t) if not cfg.warm_start else net
        x_u = x[state.unlabeled_idx] if state.unlabeled_idx.size else None
        train_network(net, x[state.labeled_idx], state.labeled_y, x_u, cfg,
                      stream(seed, "train", t), None if not cfg.warm_start else adam)
    return net, state
