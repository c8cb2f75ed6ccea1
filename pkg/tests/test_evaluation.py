import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diverse_selftrain import _kernels
from diverse_selftrain import data as D
from diverse_selftrain import evaluation as E
from diverse_selftrain.errors import InputError, ShapeError
from diverse_selftrain.rng import stream
from diverse_selftrain.selftrain import TrainConfig, default_factory, train_network

unit = st.floats(0, 1, allow_nan=False)


def brute_bins(conf, n_bins):
    """Bin by scanning the interval list: (lo, hi] with 0 in the first bin."""
    out = []
    for c in conf:
        for b in range(n_bins):
            lo, hi = b / n_bins, (b + 1) / n_bins
            if (lo < c <= hi) or (b == 0 and c == 0.0):
                out.append(b)
                break
    return np.array(out)


def brute_ece(conf, hits, n_bins=10):
    idx = brute_bins(conf, n_bins)
    total = 0.0
    for b in range(n_bins):
        m = idx == b
        if m.any():
            total += m.sum() / len(conf) * abs(hits[m].mean() - conf[m].mean())
    return total


def test_accuracy_examples():
    assert E.accuracy([1, 1, 0], [1, 1, 0]) == 1.0
    assert E.accuracy([1, 0, 1, 0], [1, 1, 0, 0]) == 0.5
    with pytest.raises(ShapeError):
        E.accuracy([1], [1, 0])
    with pytest.raises(InputError):
        E.accuracy([], [])


@given(st.lists(st.integers(0, 1), min_size=1, max_size=50), st.data())
def test_accuracy_flip_and_loop(pred, data):
    truth = data.draw(st.lists(st.integers(0, 1), min_size=len(pred), max_size=len(pred)))
    p = np.array(pred)
    loop = sum(a == b for a, b in zip(pred, truth)) / len(pred)
    assert E.accuracy(p, truth) == pytest.approx(loop, abs=1e-15)
    assert E.accuracy(p, truth) + E.accuracy(1 - p, truth) == pytest.approx(1.0)


def test_ece_examples():
    assert E.ece(np.ones(10), np.ones(10)).ece == 0.0
    assert E.ece(np.ones(10), np.arange(10) % 2).ece == 0.5
    with pytest.raises(InputError):
        E.ece([1.2], [1])
    with pytest.raises(InputError):
        E.ece([], [])


def test_bin_boundaries_right_inclusive():
    assert E.bin_index(np.array([0.0, 0.1, 0.10001, 1.0]), 10).tolist() == [0, 0, 1, 9]


def test_ece_matches_brute_force(rng):
    conf = rng.random(2000)
    conf[:10] = np.arange(10) / 10
    hits = (rng.random(2000) < conf ** 2).astype(float)
    rep = E.ece(conf, hits)
    assert rep.ece == pytest.approx(brute_ece(conf, hits), abs=1e-12)
    assert rep.counts.sum() == 2000
    np.testing.assert_array_equal(rep.counts, np.bincount(brute_bins(conf, 10), minlength=10))


@given(st.lists(st.tuples(unit, st.booleans()), min_size=1, max_size=60))
def test_ece_in_unit_interval(items):
    conf = np.array([c for c, _ in items])
    hits = np.array([h for _, h in items], dtype=float)
    e = E.ece(conf, hits).ece
    assert 0.0 <= e <= 1.0 + 1e-12


@given(st.lists(st.tuples(st.integers(0, 9), st.floats(0.05, 0.95), st.booleans()),
                min_size=1, max_size=40))
def test_ece_invariant_to_within_bin_order_preserving_maps(items):
    conf = np.array([(b + f) / 10 for b, f, _ in items])
    hits = np.array([h for *_, h in items], dtype=float)
    # squeeze every confidence toward its bin centre: monotone and bin-preserving
    b = E.bin_index(conf, 10)
    centre = (b + 0.5) / 10
    squeezed = centre + 0.5 * (conf - centre)
    a = E.ece(conf, hits)
    z = E.ece(squeezed, hits)
    np.testing.assert_array_equal(a.counts, z.counts)
    np.testing.assert_allclose(a.accuracy, z.accuracy)


def test_backends_agree(rng, backend):
    conf = rng.random(500)
    hits = (rng.random(500) < 0.5).astype(float)
    ref = E.ece(conf, hits, backend="numpy")
    got = E.ece(conf, hits, backend=backend)
    assert got.ece == ref.ece
    w = rng.random(30)
    u = rng.random(12)
    assert (_kernels.weighted_draws(w, u, backend).tolist()
            == _kernels.weighted_draws(w, u, "numpy").tolist())


def test_histograms():
    h = E.confidence_histograms(np.ones(5), np.array([1, 1, 0, 1, 0], bool))
    assert h.correct[-1] == 3 and h.wrong[-1] == 2
    assert h.correct[:-1].sum() == 0 and h.wrong[:-1].sum() == 0


def test_histograms_match_brute_force(rng):
    conf = rng.random(300)
    ok = rng.random(300) < 0.6
    h = E.confidence_histograms(conf, ok)
    idx = brute_bins(conf, 20)
    np.testing.assert_array_equal(h.correct, np.bincount(idx[ok], minlength=20))
    np.testing.assert_array_equal(h.wrong, np.bincount(idx[~ok], minlength=20))
    assert h.correct.sum() == ok.sum() and h.wrong.sum() == (~ok).sum()


def test_metric_summary():
    m = E.MetricSummary("acc", {2: 0.5, 0: 0.7, 1: 0.9})
    assert m.values.tolist() == [0.7, 0.9, 0.5]
    assert m.mean == pytest.approx(0.7)
    assert m.std == pytest.approx(np.std([0.7, 0.9, 0.5]))
    assert json.loads(json.dumps(m.to_dict()))["per_seed"]["2"] == 0.5
    assert np.isnan(E.MetricSummary("x").mean)


def test_emitters(tmp_path, rng):
    rep = E.ece(rng.random(50), rng.random(50) < 0.5)
    path = tmp_path / "cal.csv"
    E.write_calibration_csv(path, rep)
    rows = list(csv.reader(open(path)))
    assert rows[0] == E.CALIBRATION_HEADER and len(rows) == 11
    assert sum(int(r[2]) for r in rows[1:]) == 50
    assert json.loads(E.calibration_to_json(rep))["ece"] == rep.ece
    hp = tmp_path / "h.csv"
    E.write_histograms_csv(hp, E.confidence_histograms(rng.random(9), np.ones(9, bool)))
    assert len(list(csv.reader(open(hp)))) == 21


TINY = TrainConfig(epochs=1, iters_per_epoch=20, hidden=8, n_heads=2)


def test_loo_two_identical_points():
    x = np.array([[1.0, 2.0], [1.0, 2.0]])
    y = np.array([1, 1])
    fit = TrainConfig(epochs=2, iters_per_epoch=100, hidden=8, n_heads=2)
    acc, correct = E.leave_one_out_accuracy(x, y, default_factory(2, 2, fit, 0), fit, 0)
    assert acc == 1.0 and correct.size == 2


def test_loo_bookkeeping_and_determinism():
    calls = []

    def fake_train(net, x, y, x_u, cfg, rng):
        calls.append((x.shape[0], x_u))

    x = np.arange(10, dtype=float).reshape(5, 2)
    y = np.array([0, 1, 0, 1, 0])
    acc, correct = E.leave_one_out_accuracy(x, y, default_factory(2, 2, TINY, 0), TINY, 0,
                                            train_fn=fake_train)
    assert len(calls) == 5 and all(n == 4 and u is None for n, u in calls)
    assert correct.size == 5
    a1, _ = E.leave_one_out_accuracy(x, y, default_factory(2, 2, TINY, 0), TINY, 3)
    a2, _ = E.leave_one_out_accuracy(x, y, default_factory(2, 2, TINY, 0), TINY, 3)
    assert a1 == a2


@pytest.mark.slow
def test_loo_is_optimistic_under_selection_bias():
    # directional only, and thin on isotropic data: at separation 2 the
    # ordering flips, so the seeded setting below is pinned
    cfg = TrainConfig(epochs=1, iters_per_epoch=100, hidden=16, n_heads=2)
    loos, tests = [], []
    for seed in range(9):
        ds = D.biased_gaussians(n=800, d=5, separation=1.0, seed=seed)
        ds, split = D.make_split(ds, D.LabelingSpec("ssb", 20, r=3.0), seed)
        xl = ds.features[split.labeled]
        loo, _ = E.leave_one_out_accuracy(xl, split.labeled_y,
                                          default_factory(5, 2, cfg, seed), cfg, seed)
        net = default_factory(5, 2, cfg, seed)(0)
        train_network(net, xl, split.labeled_y, None, cfg, stream(seed, "train", 0))
        loos.append(loo)
        tests.append(E.accuracy(net.predict(ds.features[split.test]), ds.labels[split.test]))
    assert np.mean(loos) > np.mean(tests)
