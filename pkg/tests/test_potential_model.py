import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcpotential.chain_kernel import circular_nn_generator, matrix_exp, validate_intensity
from mcpotential.errors import LayoutMismatch, NonPositiveF, UnknownCurrency, ValidationError
from mcpotential.potential_model import (
    CurrencyParams,
    ThetaLayout,
    ThetaVector,
    build_model,
    build_model_set,
    grid_bonds,
    model_set_from_theta,
    pack_theta,
    price_terminal,
    pricing_propagator,
    relabel_theta,
    short_rate,
    unpack_theta,
    zcb,
)
from mcpotential.scenarios import acceptance_models, random_generator, random_model, random_params

from conftest import eig_expm, flat_model


def test_scalar_model():
    m = flat_model(0.05)
    assert m.f[0] == pytest.approx(20.0, rel=1e-14)
    assert short_rate(m)[0] == pytest.approx(0.05, rel=1e-14)
    assert zcb(m, 1.0)[0] == pytest.approx(math.exp(-0.05), rel=1e-13)
    assert zcb(m, 0.3)[0] == pytest.approx(math.exp(-0.015), rel=1e-13)
    assert pricing_propagator(m, 2.0)[0, 0] == pytest.approx(math.exp(-0.1), rel=1e-13)


def test_two_state_reference_values(ref_model):
    # hand-inverted 2x2 system
    a = np.array([[1.02, -1.0], [-1.0, 1.06]])
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    assert det == pytest.approx(0.0812)
    f = np.array([a[1, 1] - a[0, 1], a[0, 0] - a[1, 0]]) / det
    np.testing.assert_allclose(ref_model.f, f, rtol=1e-12)
    np.testing.assert_allclose(ref_model.f, [25.3695, 24.8768], atol=5e-5)
    np.testing.assert_allclose(short_rate(ref_model), [0.039417, 0.040198], atol=5e-7)


def test_build_rejects_zero_g():
    q = validate_intensity([[-1.0, 1.0], [1.0, -1.0]])
    with pytest.raises(NonPositiveF):
        build_model(q, CurrencyParams([0.02, 0.06], [0.0, 0.0]))
    with pytest.raises(ValidationError):
        CurrencyParams([0.0, 0.1], [1.0, 1.0])
    with pytest.raises(ValidationError):
        CurrencyParams([0.1, 0.1], [1.0, -1.0])


def test_propagator_trivial_and_oracle(ref_model):
    np.testing.assert_allclose(pricing_propagator(ref_model, 0.0), np.eye(2), atol=1e-15)
    for tau in (1.0, 0.25, 2.75, 7.3):
        want = eig_expm(ref_model.generator, tau)
        np.testing.assert_allclose(pricing_propagator(ref_model, tau), want, rtol=1e-10)


def test_grid_propagators_match_direct_exponential():
    m = random_model(np.random.default_rng(0), 6)
    for k in (2, 5, 40):
        tau = 0.25 * k
        np.testing.assert_allclose(pricing_propagator(m, tau), matrix_exp(m.generator, tau), rtol=1e-11)
    bonds = grid_bonds(m, 40)
    np.testing.assert_allclose(bonds[8], matrix_exp(m.generator, 2.0) @ m.f / m.f, rtol=1e-12)
    np.testing.assert_array_equal(bonds[0], np.ones(6))


def test_price_terminal_linear_and_zero(ref_model):
    np.testing.assert_array_equal(price_terminal(ref_model, 1.0, [0.0, 0.0]), [0.0, 0.0])
    h1, h2 = np.array([1.0, 0.2]), np.array([-0.3, 2.0])
    lhs = price_terminal(ref_model, 1.3, 2 * h1 - 3 * h2)
    rhs = 2 * price_terminal(ref_model, 1.3, h1) - 3 * price_terminal(ref_model, 1.3, h2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    np.testing.assert_allclose(price_terminal(ref_model, 1.3, [1.0, 1.0]), zcb(ref_model, 1.3), rtol=1e-13)
    np.testing.assert_array_equal(zcb(ref_model, 0.0), [1.0, 1.0])
    with pytest.raises(ValidationError):
        zcb(ref_model, -1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8), lam=st.floats(0.01, 100.0))
def test_model_properties(seed, n, lam):
    rng = np.random.default_rng(seed)
    q = random_generator(rng, n) if n > 1 else validate_intensity([[0.0]])
    params = random_params(rng, n)
    m = build_model(q, params)
    assert np.all(m.f > 0)
    # short rate identity
    np.testing.assert_allclose(short_rate(m), m.alpha - (q.q @ m.f) / m.f, rtol=1e-10, atol=1e-14)
    # decay of f-weighted bond prices
    grid = np.arange(0, 10.01, 0.5)
    decay = np.array([zcb(m, t) * m.f for t in grid])
    assert np.all(np.diff(decay, axis=0) <= 1e-12 * decay[:-1])
    # scale invariance
    scaled = build_model(q, CurrencyParams(params.alpha, lam * params.g))
    np.testing.assert_allclose(scaled.f, lam * m.f, rtol=1e-10)
    for t in (0.25, 1.7, 5.0):
        np.testing.assert_allclose(zcb(scaled, t), zcb(m, t), rtol=1e-10)
    np.testing.assert_allclose(short_rate(scaled), short_rate(m), rtol=1e-10)


def test_theta_dimensions():
    rng = np.random.default_rng(1)
    full = build_model_set(random_generator(rng, 10), {"USD": random_params(rng, 10)})
    assert len(pack_theta("full", full)) == 109
    ring = build_model_set(circular_nn_generator(rng.uniform(1, 2, 5), rng.uniform(1, 2, 5)),
                           {"USD": random_params(rng, 5)})
    assert len(pack_theta("circular", ring)) == 19
    assert len(pack_theta("circular_one_way", build_model_set(
        circular_nn_generator(np.ones(5), np.zeros(5)), {"USD": random_params(rng, 5)}))) == 14
    assert ThetaLayout(5, "circular", ("USD", "EUR")).size == 28


@pytest.mark.parametrize("structure", ["full", "circular"])
def test_pack_unpack_round_trip(structure):
    rng = np.random.default_rng(11)
    n = 5
    q = random_generator(rng, n) if structure == "full" else circular_nn_generator(
        rng.uniform(0.5, 3, n), rng.uniform(0.5, 3, n))
    models = build_model_set(q, {"USD": random_params(rng, n), "EUR": random_params(rng, n)})
    theta = pack_theta(structure, models)
    q2, params = unpack_theta(theta)
    np.testing.assert_allclose(q2.q, q.q, rtol=1e-12, atol=1e-12)
    for ccy, p in params.items():
        np.testing.assert_allclose(p.alpha, models[ccy].alpha, rtol=1e-12)
        np.testing.assert_allclose(p.g, models[ccy].g / models[ccy].g[0], rtol=1e-12)
    again = pack_theta(structure, model_set_from_theta(theta))
    np.testing.assert_array_equal(again.values, theta.values)


def test_pack_rejects_entries_outside_layout():
    rng = np.random.default_rng(2)
    models = build_model_set(random_generator(rng, 5), {"USD": random_params(rng, 5)})
    with pytest.raises(LayoutMismatch):
        pack_theta("circular", models)
    with pytest.raises(ValidationError):
        ThetaVector(ThetaLayout(5, "circular", ("USD",)), np.zeros(3))


@pytest.mark.parametrize("structure", ["full", "circular"])
def test_relabel_preserves_prices(structure):
    if structure == "circular":
        models = acceptance_models()
    else:
        rng = np.random.default_rng(4)
        models = build_model_set(random_generator(rng, 4), {"USD": random_params(rng, 4)})
    theta = pack_theta(structure, models)
    n = models.n
    for s in range(n):
        moved = model_set_from_theta(relabel_theta(theta, s))
        for ccy in models.currencies:
            b_old = zcb(models[ccy], 3.0)
            b_new = zcb(moved[ccy], 3.0)
            assert b_new[0] == pytest.approx(b_old[s], rel=1e-12)
            np.testing.assert_allclose(np.sort(b_new), np.sort(b_old), rtol=1e-12)


def test_model_set_lookup():
    models = acceptance_models()
    assert models.base == "USD" and models.n == 5
    with pytest.raises(UnknownCurrency):
        models["JPY"]


def test_concurrent_cache_fill_is_consistent():
    m = random_model(np.random.default_rng(5), 5)
    out = []

    def work():
        out.append([zcb(m, 0.25 * k).copy() for k in range(1, 41)])

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for res in out[1:]:
        for a, b in zip(res, out[0]):
            np.testing.assert_array_equal(a, b)
