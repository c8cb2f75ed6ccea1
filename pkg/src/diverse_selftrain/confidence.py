"""Ensemble-agreement confidence and the diverse-head network.

The network is a two-layer ReLU trunk feeding a prediction head and ``M``
linear ensemble heads.  The prediction head and the trunk learn from the
supervised cross-entropy; the ensemble heads learn from the confidence loss
(mean head cross-entropy on labeled data plus ``gamma`` times the mean
pairwise agreement on unlabeled data) and see the trunk output through a
stop-gradient, so that loss never reaches the trunk.
"""
import csv
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError, InputError, ShapeError
from .rng import stream

SIMPLEX_TOL = 1e-6


def _check_simplex(p):
    if np.any(p < -SIMPLEX_TOL) or np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise InputError("head outputs must lie in the probability simplex")


def pairwise_agreement(probs):
    """T-similarity for a batch of head outputs, shape ``(n, M, C)`` -> ``(n,)``.

    Mean inner product over ordered pairs of distinct heads.  No validation;
    see ``t_similarity`` for the checked single-point version.
    """
    n, m, _ = probs.shape
    gram = np.einsum("nmc,nkc->nmk", probs, probs)
    off = gram.sum(axis=(1, 2)) - np.trace(gram, axis1=1, axis2=2)
    # rounding on simplex rows can nudge a unanimous one-hot a hair above 1
    return np.minimum(off / (m * (m - 1)), 1.0)


def t_similarity(head_outputs):
    """Agreement of ``M`` probability vectors (rows of ``head_outputs``)."""
    p = np.asarray(head_outputs, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"expected (M, C) head outputs, got {p.shape}")
    if p.shape[0] < 2:
        raise ConfigurationError("T-similarity needs at least two heads")
    _check_simplex(p)
    return float(pairwise_agreement(p[None])[0])


def diversity_loss(head_outputs_batch):
    """Negative mean agreement over a batch shaped ``(n, M, C)``."""
    p = np.asarray(head_outputs_batch, dtype=np.float64)
    if p.ndim != 3:
        raise ShapeError(f"expected (n, M, C) head outputs, got {p.shape}")
    if p.shape[0] == 0:
        raise InputError("diversity loss on an empty batch")
    if p.shape[1] < 2:
        raise ConfigurationError("diversity needs at least two heads")
    _check_simplex(p)
    return float(-np.mean(pairwise_agreement(p)))


class DiverseHeadNetwork:
    """Trunk + prediction head + ``n_heads`` ensemble heads.

    Layers are initialised from named random streams so two networks built
    with the same ``seed`` and ``init_index`` are identical.
    """

    def __init__(self, n_features, n_classes, hidden=128, n_heads=5, gamma=1.0,
                 seed=0, init_index=0):
        if n_heads < 2:
            raise ConfigurationError("need at least two ensemble heads")
        if gamma < 0:
            raise ConfigurationError("gamma must be non-negative")
        if n_classes < 2:
            raise ConfigurationError("need at least two classes")
        self.n_features = n_features
        self.n_classes = n_classes
        self.hidden = hidden
        self.gamma = float(gamma)
        trunk_rng = stream(seed, "init/trunk", init_index)
        self.trunk = [nn.LinearLayer(n_features, hidden, trunk_rng),
                      nn.LinearLayer(hidden, hidden, trunk_rng)]
        self.pred_head = nn.LinearLayer(hidden, n_classes,
                                        stream(seed, "init/pred_head", init_index))
        self.heads = [
            nn.LinearLayer(hidden, n_classes,
                           stream(seed, f"init/head{m}", init_index))
            for m in range(n_heads)
        ]

    @property
    def n_heads(self):
        return len(self.heads)

    def named_layers(self):
        out = {"trunk0": self.trunk[0], "trunk1": self.trunk[1],
               "pred_head": self.pred_head}
        out.update({f"head{m}": h for m, h in enumerate(self.heads)})
        return out

    def sup_params(self):
        return [p for layer in (*self.trunk, self.pred_head) for p in layer.params()]

    def sup_grads(self):
        return [g for layer in (*self.trunk, self.pred_head) for g in layer.grads()]

    def head_params(self):
        return [p for layer in self.heads for p in layer.params()]

    def head_grads(self):
        return [g for layer in self.heads for g in layer.grads()]

    def zero_grad(self):
        for layer in self.named_layers().values():
            layer.zero_grad()

    def representation(self, x, tape=None):
        h = nn.run_stack(self.trunk, x, tape)
        return tape.relu(h) if tape is not None else nn.relu(h)

    def predict_proba(self, x):
        return nn.softmax_rows(self.pred_head.forward(self.representation(x)))

    def predict(self, x):
        # argmax returns the first maximum: ties go to the lowest class index
        return np.argmax(self.predict_proba(x), axis=1)

    def head_probs_from(self, z):
        return np.stack([nn.softmax_rows(h.forward(z)) for h in self.heads], axis=1)

    def head_probs(self, x):
        return self.head_probs_from(self.representation(x))

    def snapshot(self):
        return nn.snapshot(self.named_layers())

    def load_snapshot(self, text):
        layers = nn.restore(text)
        self.trunk = [layers["trunk0"], layers["trunk1"]]
        self.pred_head = layers["pred_head"]
        self.heads = [layers[f"head{m}"] for m in range(len(self.heads))]


def supervised_loss(net, x_l, y_l, backward=True):
    """Cross-entropy of the prediction head; gradients reach head and trunk."""
    tape = nn.ForwardTape()
    z = net.representation(x_l, tape)
    probs = nn.softmax_rows(tape.linear(net.pred_head, z))
    loss, g_logits = nn.cross_entropy(probs, y_l)
    if backward:
        tape.backward(g_logits)
    return loss


def confidence_loss(net, x_l, y_l, x_u, backward=True, z_l=None, z_u=None):
    """Mean head cross-entropy minus ``gamma`` times the diversity term.

    Gradients are written into the ensemble heads only.  The trunk output is
    read through a stop-gradient marker, so trunk buffers are untouched.
    An empty unlabeled batch drops the diversity term.
    """
    if z_l is None:
        z_l = net.representation(x_l)
    if z_u is None:
        z_u = net.representation(x_u) if x_u is not None and len(x_u) else None
    stopped = nn.ForwardTape().stop_gradient()
    m = net.n_heads
    fidelity = 0.0
    g_z = np.zeros_like(z_l)
    probs_l = []
    for head in net.heads:
        p = nn.softmax_rows(head.forward(z_l))
        loss, g = nn.cross_entropy(p, y_l)
        fidelity += loss / m
        probs_l.append((p, g / m))
    agreement = 0.0
    if z_u is not None and z_u.shape[0] > 0:
        pu = net.head_probs_from(z_u)
        agreement = float(np.mean(pairwise_agreement(pu)))
    total = fidelity + net.gamma * agreement
    if not backward:
        return total
    for head, (_, g) in zip(net.heads, probs_l):
        g_z += head.backward(z_l, g)
    if z_u is not None and z_u.shape[0] > 0 and net.gamma != 0.0:
        n_u = z_u.shape[0]
        scale = net.gamma * 2.0 / (n_u * m * (m - 1))
        others = pu.sum(axis=1, keepdims=True) - pu
        for k, head in enumerate(net.heads):
            g_logits = nn.softmax_backward(pu[:, k], scale * others[:, k])
            head.backward(z_u, g_logits)
    # the representation gradient stops here
    stopped.backward(g_z)
    return total


def total_loss_step(net, x_l, y_l, x_u, adam):
    """One Adam step on ``L_sup + L_conf``; returns both loss values."""
    net.zero_grad()
    tape = nn.ForwardTape()
    z_l = net.representation(x_l, tape)
    probs = nn.softmax_rows(tape.linear(net.pred_head, z_l))
    l_sup, g_logits = nn.cross_entropy(probs, y_l)
    tape.backward(g_logits)
    z_u = net.representation(x_u) if x_u is not None and len(x_u) else None
    l_conf = confidence_loss(net, x_l, y_l, x_u, z_l=z_l, z_u=z_u)
    nn.adam_step(adam, net.sup_params() + net.head_params(),
                 net.sup_grads() + net.head_grads())
    return l_sup, l_conf


@dataclass
class ConfidenceScores:
    t_similarity: np.ndarray
    predicted: np.ndarray
    softmax_max: np.ndarray
    pred_probs: np.ndarray

    def confidence(self, source):
        if source == "softmax":
            return self.softmax_max
        if source == "tsim":
            return self.t_similarity
        raise ConfigurationError(f"unknown confidence source {source!r}")

    def __len__(self):
        return self.predicted.shape[0]


def score_unlabeled(net, x_u):
    x_u = np.asarray(x_u, dtype=np.float64)
    z = net.representation(x_u)
    pred = nn.softmax_rows(net.pred_head.forward(z))
    return ConfidenceScores(
        t_similarity=pairwise_agreement(net.head_probs_from(z)),
        predicted=np.argmax(pred, axis=1),
        softmax_max=pred.max(axis=1),
        pred_probs=pred,
    )


def write_scores_csv(path, scores, example_ids=None, true_labels=None):
    """Columns: example_id, s_T, softmax_max, predicted_class, true_class."""
    n = len(scores)
    ids = np.arange(n) if example_ids is None else np.asarray(example_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["example_id", "s_T", "softmax_max", "predicted_class",
                    "true_class"])
        for i in range(n):
            truth = "" if true_labels is None else int(true_labels[i])
            w.writerow([int(ids[i]), repr(float(scores.t_similarity[i])),
                        repr(float(scores.softmax_max[i])),
                        int(scores.predicted[i]), truth])
