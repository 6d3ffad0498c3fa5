import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from broncho import fuzzattn as fa
from broncho.diffcore import Tape
from broncho.gradsuite import FUZZ_GROUPS, fuzzattn_checks


def _bank(mu, sigma):
    return fa.GaussianMFBank(np.asarray(mu, float), np.asarray(sigma, float))


def _degrees(X, bank):
    return fa.membership_degrees(Tape().constant(X), bank).value


def test_degree_at_centre_and_one_sigma():
    bank = _bank([[0.3]], [[0.5]])
    X = np.array([[[[0.3, 0.8]]]])
    d = _degrees(X, bank)
    assert d[0, 0, 0, 0, 0] == 1.0
    assert d[0, 0, 0, 0, 1] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert d[0, 0, 0, 0, 1] == pytest.approx(0.60653, abs=1e-5)


def test_negative_sigma_uses_magnitude_and_floor():
    X = np.array([[[[1.0]]]])
    assert _degrees(X, _bank([[0.0]], [[-1.0]]))[0, 0, 0, 0, 0] == pytest.approx(math.exp(-0.5))
    assert _degrees(X, _bank([[0.0]], [[0.0]]))[0, 0, 0, 0, 0] < 1e-100


def test_degrees_match_scalar_reference(rng):
    for _ in range(10):
        X = rng.normal(size=(3, 2, 3, 2))
        mu = rng.uniform(-1, 1, size=(2, 3))
        sigma = rng.normal(size=(2, 3))
        sigma[0, 0] = 1e-4   # exercise the floor
        ref = oracles.membership(X, mu, sigma)
        np.testing.assert_allclose(_degrees(X, _bank(mu, sigma)), ref, rtol=1e-12, atol=1e-300)


def test_channel_mismatch():
    with pytest.raises(ValueError):
        fa.membership_degrees(Tape().constant(np.zeros((3, 2, 2, 2))), _bank([[0, 0]], [[1, 1]]))


def test_fuzzy_or_examples(rng):
    t = Tape()
    one = rng.uniform(0.1, 1, size=(1, 2, 2, 2, 2))
    np.testing.assert_array_equal(fa.fuzzy_or(t.constant(one)).value, one[0])
    deg = np.zeros((2, 1, 1, 1, 1))
    deg[:, 0, 0, 0, 0] = [0.3, 0.8]
    assert fa.fuzzy_or(t.constant(deg)).value[0, 0, 0, 0] == 0.8


def test_fuzzy_or_is_brute_force_max(rng):
    deg = rng.uniform(0.01, 1, size=(3, 2, 3, 3, 2))
    out = fa.fuzzy_or(Tape().constant(deg)).value
    for idx in np.ndindex(out.shape):
        assert out[idx] == max(deg[(i,) + idx] for i in range(3))
        assert all(out[idx] >= deg[(i,) + idx] for i in range(3))


def test_attention_is_one_when_centres_hit_inputs():
    X = np.array([[[[0.5, -0.5]]], [[[2.0, 2.0]]]])          # (2, 1, 1, 2)
    bank = _bank([[0.5, 2.0], [-0.5, 0.0]], [[1, 1], [1, 1]])
    np.testing.assert_array_equal(fa.fag_forward(Tape().constant(X), bank).value, 1.0)


@given(st.integers(0, 2**31 - 1))
def test_attention_range(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(scale=3, size=(2, 2, 2, 2))
    sigma = rng.uniform(0.5, 2, (2, 2)) * rng.choice([-1, 1], (2, 2))
    a = fa.fag_forward(Tape().constant(X), _bank(rng.uniform(-1, 1, (2, 2)), sigma)).value
    assert np.all((a > 0) & (a <= 1))


def test_attention_range_strictly_positive_for_moderate_inputs(rng):
    X = rng.uniform(-2, 2, size=(3, 4, 4, 4))
    bank = _bank(rng.uniform(-1, 1, (2, 3)), rng.uniform(0.5, 2, (2, 3)))
    a = fa.fag_forward(Tape().constant(X), bank).value
    assert np.all((a > 0) & (a <= 1))


def test_channel_specificity(rng):
    X = rng.normal(size=(3, 3, 3, 3))
    mu = rng.uniform(-1, 1, (2, 3))
    sigma = np.ones((2, 3))
    base = fa.fag_forward(Tape().constant(X), _bank(mu, sigma)).value
    bumped = mu.copy()
    bumped[:, 1] += 0.37
    moved = fa.fag_forward(Tape().constant(X), _bank(bumped, sigma)).value
    assert moved[[0, 2]].tobytes() == base[[0, 2]].tobytes()
    assert not np.array_equal(moved[1], base[1])


@given(st.floats(-3, 3), st.floats(-1, 1), st.floats(0.1, 2))
def test_single_gaussian_is_symmetric(x, mu, sigma):
    bank = _bank([[mu]], [[sigma]])
    a = _degrees(np.array([[[[x]]]]), bank)
    b = _degrees(np.array([[[[2 * mu - x]]]]), bank)
    assert a.item() == pytest.approx(b.item(), rel=1e-12, abs=1e-300)


def test_identity_gating():
    # constant features normalize to X = 0, so a bank centred at 0 gates with exactly 1
    e = np.full((2, 2, 2, 2), 1.5)
    p = fa.init_params(2, 1, seed=3).with_groups(mu=np.zeros((1, 2)))
    y = fa.fuzzy_attention_layer(e, e, p).value
    assert y.tobytes() == e.tobytes()


def test_far_tail_suppresses_output(rng):
    e = rng.normal(size=(2, 3, 3, 3))
    d = rng.normal(size=(2, 3, 3, 3))
    p = fa.init_params(2, 2, seed=1).with_groups(mu=np.full((2, 2), 50.0), sigma=np.full((2, 2), 1e-3))
    y = fa.fuzzy_attention_layer(e, d, p).value
    assert np.abs(y).max() < 1e-6 * np.abs(e).max()


def test_layer_shape_errors(rng):
    p = fa.init_params(2)
    with pytest.raises(ValueError):
        fa.fuzzy_attention_layer(np.zeros((2, 3, 3, 3)), np.zeros((2, 3, 3, 2)), p)
    with pytest.raises(ValueError):
        fa.fuzzy_attention_layer(np.zeros((3, 2, 2, 2)), np.zeros((3, 2, 2, 2)), p)


def test_layer_gradients_every_group():
    results = fuzzattn_checks(seed=5, instances=3)
    assert {r.name.split(".")[1] for r in results} == set(FUZZ_GROUPS)
    assert max(r.rel_error for r in results) <= 1e-4


def test_init_params():
    a, b = fa.init_params(4, 3, seed=9), fa.init_params(4, 3, seed=9)
    assert a.dumps() == b.dumps()
    assert np.all(np.asarray(a.bank.sigma) == 1.0)
    mu = np.asarray(a.bank.mu)
    assert mu.shape == (3, 4) and np.all((mu >= -1) & (mu <= 1))
    assert np.all(a.b_e == 0) and np.all(a.in_gain_d == 1) and np.all(a.in_shift_e == 0)
    big = fa.init_params(64, seed=0)
    assert abs(np.var(big.w_e) / (2 / 64) - 1) < 0.2
    with pytest.raises(ValueError):
        fa.init_params(0)


def test_params_json_round_trip():
    p = fa.init_params(3, 2, seed=4)
    q = fa.FuzzyAttentionParams.from_json(p.to_json())
    assert q.dumps() == p.dumps()
    doc = p.to_json()
    assert set(doc) >= {"mu", "sigma", "w_e", "b_e", "w_d", "b_d", "leaky_slope", "m", "C"}


def test_params_validation():
    with pytest.raises(ValueError):
        _bank([[0.0, 1.0]], [[1.0]])
    with pytest.raises(ValueError):
        fa.init_params(2).with_groups(b_e=np.zeros(3))
