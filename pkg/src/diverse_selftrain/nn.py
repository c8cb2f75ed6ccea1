"""Small feed-forward building blocks with hand-written backward passes.

Only what the diverse-head network needs: linear layers, ReLU, row softmax,
cross-entropy, Adam and a tape that can be cut with a stop-gradient marker.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelError, ShapeError

LOG_EPS = 1e-12
SNAPSHOT_SCHEMA = "diverse_selftrain.params/1"


def glorot_uniform(n_in, n_out, rng):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class LinearLayer:
    """``y = x @ weight.T + bias`` with accumulating gradient buffers."""

    def __init__(self, n_in, n_out, rng=None, weight=None, bias=None):
        if weight is None:
            if rng is None:
                raise ValueError("need an rng or explicit weights")
            weight = glorot_uniform(n_in, n_out, rng)
        self.weight = np.array(weight, dtype=np.float64)
        self.bias = (np.zeros(n_out) if bias is None
                     else np.array(bias, dtype=np.float64))
        if self.weight.shape != (n_out, n_in) or self.bias.shape != (n_out,):
            raise ShapeError("weight/bias shapes do not match (n_out, n_in)")
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"expected (*, {self.n_in}) input, got {x.shape}")
        return x @ self.weight.T + self.bias

    def backward(self, x, grad_out):
        self.grad_weight += grad_out.T @ x
        self.grad_bias += grad_out.sum(axis=0)
        return grad_out @ self.weight

    def zero_grad(self):
        self.grad_weight.fill(0.0)
        self.grad_bias.fill(0.0)

    def params(self):
        return [self.weight, self.bias]

    def grads(self):
        return [self.grad_weight, self.grad_bias]

    def copy(self):
        return LinearLayer(self.n_in, self.n_out, weight=self.weight.copy(),
                           bias=self.bias.copy())


forward_linear = LinearLayer.forward


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(pre, grad_out):
    return grad_out * (pre > 0.0)


def softmax_rows(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects 2-D logits, got {x.shape}")
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def softmax_backward(probs, grad_probs):
    """Map a gradient w.r.t. row-softmax outputs to one w.r.t. its logits."""
    inner = np.sum(grad_probs * probs, axis=1, keepdims=True)
    return probs * (grad_probs - inner)


def cross_entropy(probs, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits.

    The log is clamped at ``1e-12`` so a zero probability on the true class
    yields a large finite loss instead of ``inf``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = probs.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} rows")
    if n == 0:
        raise ShapeError("cross_entropy on an empty batch")
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= c:
        raise LabelError(f"labels must be integers in [0, {c})")
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, LOG_EPS))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state, params, grads):
    """One in-place Adam update with bias correction; returns ``params``."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError("parameter, gradient and moment shapes differ")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class ForwardTape:
    """Records the inputs a layer stack needs for its backward pass.

    ``stop_gradient()`` returns a marker: a backward call through a stopped
    tape touches no parameter and returns a zero gradient.
    """

    def __init__(self):
        self._entries = []
        self._consumed = False
        self.stopped = False

    def linear(self, layer, x):
        out = layer.forward(x)
        self._entries.append(("linear", layer, x))
        return out

    def relu(self, pre):
        self._entries.append(("relu", None, pre))
        return relu(pre)

    def stop_gradient(self):
        marker = ForwardTape()
        marker.stopped = True
        marker._entries = self._entries
        return marker

    def backward(self, grad):
        if self.stopped:
            first = self._entries[0][2] if self._entries else grad
            return np.zeros_like(first)
        if self._consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        self._consumed = True
        for kind, layer, saved in reversed(self._entries):
            if kind == "linear":
                grad = layer.backward(saved, grad)
            else:
                grad = relu_backward(saved, grad)
        return grad


def run_stack(layers, x, tape=None):
    """Linear layers with ReLU between them (none after the last)."""
    h = x
    for i, layer in enumerate(layers):
        h = tape.linear(layer, h) if tape is not None else layer.forward(h)
        if i < len(layers) - 1:
            h = tape.relu(h) if tape is not None else relu(h)
    return h


def snapshot(named_layers):
    """Serialize ``{name: LinearLayer}`` to a JSON string."""
    blob = {
        "schema": SNAPSHOT_SCHEMA,
        "layers": {
            name: {"weight": layer.weight.tolist(), "bias": layer.bias.tolist()}
            for name, layer in named_layers.items()
        },
    }
    return json.dumps(blob)


def restore(text):
    blob = json.loads(text)
    if blob.get("schema") != SNAPSHOT_SCHEMA:
        raise ValueError(f"unknown snapshot schema {blob.get('schema')!r}")
    out = {}
    for name, rec in blob["layers"].items():
        w = np.asarray(rec["weight"], dtype=np.float64)
        out[name] = LinearLayer(w.shape[1], w.shape[0], weight=w, bias=rec["bias"])
    return out
