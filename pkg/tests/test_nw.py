from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

import oracles
from calibound.concentration import bernstein_bound
from calibound.core import DeltaBudget, ScoredDataset
from calibound.nw import (
    NWSurrogate,
    certify_nw,
    covers_unit_interval,
    envelope_R,
    nw_eval,
    nw_validation_terms,
    nw_weights,
    plugin_bandwidth,
    plugin_root,
    smoothing_error_g,
)
from calibound.perturbation import DerivativeBounds


def fitted(scores, labels, hs=0.1, b1=32.0, b2=6144.0):
    return NWSurrogate(b1=b1, b2=b2, bandwidth=hs).fit(np.asarray(scores, float), labels)


def test_plugin_example():
    t = plugin_root(32, 6144, 10**6)
    assert t == pytest.approx(0.025151330264283244, rel=1e-10)
    assert plugin_bandwidth(32, 6144, 10**6) == pytest.approx(6.3e-4, rel=0.01)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e6), st.integers(1, 10**8))
def test_plugin_residual_and_oracle(b1, b2, n):
    t = plugin_root(b1, b2, n)
    a, b, c = 0.375 * b1, 0.1 * b2, 1.15 / (2 * math.sqrt(2 * n))
    assert abs(2 * b * t**5 + a * t**3 - c / 2) <= 1e-12 * c
    assert t == pytest.approx(oracles.quintic_root(b1, b2, n), rel=1e-9)
    assert 1e-4 <= plugin_bandwidth(b1, b2, n) <= 0.25


def test_plugin_cubic_limit_and_clip():
    a = 0.375 * 2.0
    c = 1.15 / (2 * math.sqrt(2 * 1000))
    assert plugin_root(2.0, 0.0, 1000) == pytest.approx((c / (2 * a)) ** (1 / 3), rel=1e-13)
    assert plugin_bandwidth(1e-3, 1e-3, 1) == 0.25
    with pytest.raises(ValueError):
        plugin_root(0.0, 0.0, 10)


def test_envelope_examples():
    assert envelope_R(32, 6144, 6.3e-4) == pytest.approx(0.5213792768, rel=1e-12)
    assert envelope_R(0, 0, 0.1) == 0.5
    assert envelope_R(1, 6, 0.25) == 0.9375


def test_weights_examples():
    one = fitted([0.5], [1])
    for q in (0.0, 0.45, 1.0):
        assert nw_weights(one, q).tolist() == [1.0]
    two = fitted([0.4, 0.6], [0, 1], hs=0.2)
    assert np.allclose(nw_weights(two, 0.5), [0.5, 0.5], atol=1e-15)
    assert nw_eval(two, 0.5) == pytest.approx(0.5, abs=1e-15)
    far = fitted([0.1, 0.2, 0.9], [0, 1, 1], hs=0.05)
    assert nw_weights(far, 0.7).tolist() == [0.0, 0.0, 1.0]
    tie = fitted([0.25, 0.75], [0, 1], hs=0.05)
    assert nw_weights(tie, 0.5).tolist() == [1.0, 0.0]
    assert nw_eval(tie, 0.5) == 0.0


def test_eval_all_ones():
    sur = fitted(np.linspace(0, 1, 30), np.ones(30, int), hs=0.07)
    assert np.allclose(nw_eval(sur, np.linspace(0, 1, 101)), 1.0, rtol=0, atol=1e-14)


def test_g_examples():
    m = 5
    sur = fitted(np.full(m, 0.3), np.zeros(m, int), hs=0.1)
    assert smoothing_error_g(sur, 0.3) == pytest.approx(0.5 / math.sqrt(m), rel=1e-14)
    d = 0.2
    single = fitted([0.5], [1], hs=0.05)
    assert smoothing_error_g(single, 0.5 + d) == pytest.approx(32 * d + 0.5 * 6144 * d * d + 0.5, rel=1e-14)


@settings(max_examples=40)
@given(st.integers(1, 60), st.floats(0.01, 0.25), st.integers(0, 2**32))
def test_against_direct_oracle(n, hs, seed):
    rng = np.random.default_rng(seed)
    xs = rng.random(n)
    ys = rng.integers(0, 2, n)
    sur = fitted(xs, ys, hs=hs, b1=3.0, b2=40.0)
    order = np.argsort(xs, kind="stable")
    for q in rng.random(5):
        eta, g, w = oracles.nw_direct(xs[order].tolist(), ys[order].tolist(), float(q), hs, 3.0, 40.0)
        assert nw_eval(sur, q) == pytest.approx(eta, abs=1e-14)
        assert smoothing_error_g(sur, q) == pytest.approx(g, rel=1e-13, abs=1e-14)
        got_w = nw_weights(sur, q)
        assert np.all(got_w >= 0) and abs(got_w.sum() - 1.0) <= 1e-12
        assert np.allclose(got_w, w, atol=1e-14)


@settings(max_examples=40)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=80), st.floats(1e-4, 0.25))
def test_g_below_envelope_without_fallback(xs, hs):
    xs = np.array(xs)
    sur = fitted(xs, (xs > 0.5).astype(int), hs=hs, b1=2.0, b2=10.0)
    ev = sur.evaluate(np.linspace(0, 1, 201))
    assert np.all(ev.g >= 0)
    assert np.all(ev.g[~ev.fallback] <= sur.envelope_ * (1 + 1e-12))
    assert np.all((ev.eta >= 0) & (ev.eta <= 1))


def test_covers_unit_interval():
    assert covers_unit_interval(np.linspace(0, 1, 11), 0.06)
    assert not covers_unit_interval(np.linspace(0, 1, 11), 0.05)
    assert not covers_unit_interval(np.array([0.2, 0.5]), 0.3)


def test_validation_terms_cap_fallback():
    sur = fitted([0.1, 0.9], [0, 1], hs=0.01, b1=32, b2=6144)
    vt = nw_validation_terms(sur, np.array([0.5, 0.1]))
    assert vt["fallback"].tolist() == [True, False]
    assert vt["envelope"] == 1.0
    assert np.all(vt["g"] <= 1.0) and vt["g"][0] == 1.0


def test_certify_nw_composition():
    rng = np.random.default_rng(2)
    s = rng.random(6000)
    y = (rng.random(6000) < s).astype(int)
    train, valid = ScoredDataset(s[:3000], y[:3000]), ScoredDataset(s[3000:], y[3000:])
    rep = certify_nw(train, valid, h=2.0**-6, budget=0.05)
    assert rep.diagnostics["b1"] == 32 and rep.diagnostics["b2"] == 6144
    assert set(rep.terms) == {"empirical", "smoothing", "bernstein", "bernstein_smoothing"}
    assert abs(rep.raw_bound - sum(rep.terms.values())) <= 1e-10
    sur = NWSurrogate(32, 6144).fit(train.scores, train.labels)
    vt = nw_validation_terms(sur, valid.scores)
    assert rep.terms["empirical"] == pytest.approx(vt["resid"].mean(), rel=1e-12)
    assert rep.terms["smoothing"] == pytest.approx(vt["g"].mean(), rel=1e-12)
    assert rep.diagnostics["bandwidth"] == plugin_bandwidth(32, 6144, 3000)


def test_certify_nw_degenerate_closed_form():
    # m coincident training points per validation score, labels equal to the score
    train = ScoredDataset(np.repeat([0.0, 1.0], 4), np.repeat([0, 1], 4))
    valid = ScoredDataset([0.0, 1.0, 0.0, 1.0], [0, 1, 1, 0])
    budget = DeltaBudget.equal(0.1, 2)
    rep = certify_nw(train, valid, bounds=DerivativeBounds(1.0, 1.0), bandwidth=0.01, budget=budget)
    g = 0.5 / math.sqrt(4)
    assert rep.terms["empirical"] == 0.0
    assert rep.terms["smoothing"] == pytest.approx(g, rel=1e-14)
    R = rep.diagnostics["envelope"]
    expected = g + bernstein_bound(4, budget[1], 0.0) + R * bernstein_bound(4, budget[2], 0.0)
    assert rep.raw_bound == pytest.approx(expected, rel=1e-12)
    assert "nn_fallback" not in rep.flags


def test_mean_g_shrinks_with_training_size():
    rng = np.random.default_rng(9)
    q = rng.random(2000)
    means = []
    for n in (2000, 16000):
        s = rng.random(n)
        sur = NWSurrogate(32, 6144).fit(s, (rng.random(n) < s).astype(int))
        means.append(sur.smoothing_error(q).mean())
    assert means[1] < means[0]


def test_estimator_api():
    est = NWSurrogate(b1=1.0, b2=6.0)
    assert clone(est).get_params() == {"b1": 1.0, "b2": 6.0, "bandwidth": None, "tau": 1.2}
    rng = np.random.default_rng(0)
    s = rng.random(200)
    est.fit(s, (rng.random(200) < s).astype(int))
    assert est.predict([0.2, 0.8]).shape == (2,)
    assert est.envelope_ == envelope_R(1.0, 6.0, est.bandwidth_)
    assert NWSurrogate.from_perturbation(2.0**-6).b1 == 32.0
    with pytest.raises(ValueError):
        NWSurrogate(bandwidth=0.5).fit(s, (s > 0.5).astype(int))
