import csv
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diverse_selftrain import confidence as C
from diverse_selftrain import nn
from diverse_selftrain.errors import ConfigurationError, InputError


def loop_tsim(rows):
    m = len(rows)
    s = 0.0
    for i, j in itertools.permutations(range(m), 2):
        s += sum(a * b for a, b in zip(rows[i], rows[j]))
    return s / (m * (m - 1))


def random_simplex(rng, shape):
    e = rng.exponential(size=shape)
    return e / e.sum(axis=-1, keepdims=True)


def test_tsim_examples():
    assert C.t_similarity([[1, 0], [0, 1]]) == 0.0
    assert C.t_similarity([[1, 0, 0]] * 3) == 1.0
    assert abs(C.t_similarity([[0.5, 0.5]] * 3) - 0.5) < 1e-15


def test_tsim_errors():
    with pytest.raises(ConfigurationError):
        C.t_similarity([[1.0, 0.0]])
    with pytest.raises(InputError):
        C.t_similarity([[0.7, 0.7], [0.5, 0.5]])


def test_tsim_bounds_and_loop_oracle(rng):
    heads = random_simplex(rng, (1000, 5, 4))
    s = C.pairwise_agreement(heads)
    assert np.all(s >= 0) and np.all(s <= 1)
    for i in range(20):
        assert abs(s[i] - loop_tsim(heads[i].tolist())) < 1e-14


@given(st.integers(2, 6), st.integers(2, 5), st.integers(0, 10_000))
def test_tsim_permutation_invariant(m, c, seed):
    r = np.random.default_rng(seed)
    h = random_simplex(r, (m, c))
    perm = r.permutation(m)
    assert abs(C.t_similarity(h) - C.t_similarity(h[perm])) < 1e-14


def test_diversity_loss_examples():
    unanimous = np.array([[[1.0, 0.0]] * 3] * 4)
    assert C.diversity_loss(unanimous) == -1.0
    assert C.diversity_loss(np.array([[[1.0, 0.0], [0.0, 1.0]]])) == 0.0
    mixed = np.array([[[1.0, 0.0]] * 3, [[0.5, 0.5]] * 3])
    assert abs(C.diversity_loss(mixed) + 0.75) < 1e-15
    with pytest.raises(InputError):
        C.diversity_loss(np.zeros((0, 3, 2)))


def small_net(gamma=1.0, seed=0):
    return C.DiverseHeadNetwork(4, 3, hidden=6, n_heads=3, gamma=gamma, seed=seed)


def batch(rng):
    return rng.normal(size=(5, 4)), rng.integers(0, 3, 5), rng.normal(size=(7, 4))


def test_confidence_loss_gamma_zero_is_mean_head_ce(rng):
    net = small_net(gamma=0.0)
    xl, yl, xu = batch(rng)
    z = net.representation(xl)
    ref = np.mean([nn.cross_entropy(nn.softmax_rows(h.forward(z)), yl)[0] for h in net.heads])
    assert abs(C.confidence_loss(net, xl, yl, xu, backward=False) - ref) < 1e-14


def test_confidence_loss_unanimous_perfect_case():
    net = small_net()
    # heads with a huge bias on class 0 give unanimous one-hot outputs
    for h in net.heads:
        h.weight[:] = 0.0
        h.bias[:] = [800.0, 0.0, 0.0]
    x = np.ones((2, 4))
    val = C.confidence_loss(net, x, np.array([0, 0]), x, backward=False)
    assert abs(val - 1.0) < 1e-12


def test_gamma_shift_is_exact(rng):
    xl, yl, xu = batch(rng)
    n1, n2 = small_net(gamma=0.3), small_net(gamma=1.7)
    l1 = C.confidence_loss(n1, xl, yl, xu, backward=False)
    l2 = C.confidence_loss(n2, xl, yl, xu, backward=False)
    div = C.diversity_loss(n1.head_probs(xu))
    assert abs((l2 - l1) - (-(1.7 - 0.3) * div)) < 1e-12


def test_gradient_routing_exact_zeros(rng):
    net = small_net()
    xl, yl, xu = batch(rng)
    net.zero_grad()
    C.confidence_loss(net, xl, yl, xu)
    for layer in (*net.trunk, net.pred_head):
        assert not np.any(layer.grad_weight) and not np.any(layer.grad_bias)
    assert any(np.any(h.grad_weight) for h in net.heads)
    net.zero_grad()
    C.supervised_loss(net, xl, yl)
    for h in net.heads:
        assert not np.any(h.grad_weight) and not np.any(h.grad_bias)
    assert np.any(net.trunk[0].grad_weight)


def _fd_group(net, loss_fn, layers, h=1e-6):
    worst = 0.0
    for layer in layers:
        for p, g in zip(layer.params(), layer.grads()):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss_fn()
                p[idx] = old - h
                down = loss_fn()
                p[idx] = old
                worst = max(worst, abs((up - down) / (2 * h) - g[idx]))
    return worst


def test_gradient_routing_finite_differences(rng):
    net = small_net(gamma=0.8)
    # zero biases put some pre-activations exactly on the ReLU kink
    for layer in net.named_layers().values():
        layer.bias[:] = rng.normal(scale=0.3, size=layer.bias.shape)
    xl, yl, xu = batch(rng)
    net.zero_grad()
    C.supervised_loss(net, xl, yl)
    sup = lambda: C.supervised_loss(net, xl, yl, backward=False)  # noqa: E731
    assert _fd_group(net, sup, [*net.trunk, net.pred_head]) < 1e-7
    # the supervised loss does not depend on the heads at all
    assert _fd_group(net, sup, net.heads) == 0.0
    net.zero_grad()
    C.confidence_loss(net, xl, yl, xu)
    conf = lambda: C.confidence_loss(net, xl, yl, xu, backward=False)  # noqa: E731
    assert _fd_group(net, conf, net.heads) < 1e-7


def test_total_step_returns_losses_and_moves_trunk(rng):
    net = small_net()
    xl, yl, xu = batch(rng)
    before = net.trunk[0].weight.copy()
    heads_before = net.heads[0].weight.copy()
    ls, lc = C.total_loss_step(net, xl, yl, xu, nn.AdamState())
    assert ls == pytest.approx(C.supervised_loss(small_net(), xl, yl, backward=False))
    assert lc == pytest.approx(C.confidence_loss(small_net(), xl, yl, xu, backward=False))
    assert not np.array_equal(before, net.trunk[0].weight)
    assert not np.array_equal(heads_before, net.heads[0].weight)


def test_identical_heads_match_supervised_at_gamma_zero(rng):
    net = small_net(gamma=0.0)
    for h in net.heads:
        h.weight[:] = net.pred_head.weight
        h.bias[:] = net.pred_head.bias
    xl, yl, xu = batch(rng)
    ls, lc = C.total_loss_step(net, xl, yl, xu, nn.AdamState())
    assert abs(ls - lc) < 1e-14


def test_score_unlabeled_matches_per_point(rng):
    net = small_net()
    xu = rng.normal(size=(9, 4))
    sc = C.score_unlabeled(net, xu)
    hp = net.head_probs(xu)
    for i in range(9):
        assert sc.t_similarity[i] == pytest.approx(C.t_similarity(hp[i]), abs=1e-15)
    np.testing.assert_array_equal(sc.predicted, np.argmax(net.predict_proba(xu), axis=1))
    sc2 = C.score_unlabeled(net, xu)
    np.testing.assert_array_equal(sc.t_similarity, sc2.t_similarity)


def test_score_extremes():
    net = C.DiverseHeadNetwork(2, 3, hidden=4, n_heads=3, seed=1)
    for k, h in enumerate(net.heads):
        h.weight[:] = 0.0
        h.bias[:] = 0.0
        h.bias[k] = 900.0
    assert C.score_unlabeled(net, np.ones((1, 2))).t_similarity[0] == 0.0
    for h in net.heads:
        h.bias[:] = [0.0, 900.0, 0.0]
    assert C.score_unlabeled(net, np.ones((1, 2))).t_similarity[0] == 1.0


def test_invalid_network_configs():
    with pytest.raises(ConfigurationError):
        C.DiverseHeadNetwork(2, 2, n_heads=1)
    with pytest.raises(ConfigurationError):
        C.DiverseHeadNetwork(2, 2, gamma=-1)


def test_heads_initialised_independently():
    net = small_net()
    assert not np.array_equal(net.heads[0].weight, net.heads[1].weight)
    twin = small_net()
    np.testing.assert_array_equal(net.heads[2].weight, twin.heads[2].weight)


def test_scores_csv(tmp_path, rng):
    net = small_net()
    sc = C.score_unlabeled(net, rng.normal(size=(3, 4)))
    path = tmp_path / "scores.csv"
    C.write_scores_csv(path, sc, true_labels=[0, 1, 2])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["example_id", "s_T", "softmax_max", "predicted_class", "true_class"]
    assert float(rows[1][1]) == sc.t_similarity[0]
    assert len(rows) == 4


def test_snapshot_restores_network(rng):
    net = small_net()
    other = small_net(seed=9)
    other.load_snapshot(net.snapshot())
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(net.head_probs(x), other.head_probs(x))
