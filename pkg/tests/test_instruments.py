import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcpotential.errors import MissingSpot, ModelMismatch, ScheduleError, UnknownCurrency, ValidationError
from mcpotential.instruments import (
    ATM,
    InstrumentSpec,
    annuity,
    cap_price,
    forward_swap_value,
    fx_forward,
    libor,
    price_all_states,
    price_instruments,
    price_spec,
    swap_rate,
    swaption_atm_strike,
    swaption_price,
)
from mcpotential.potential_model import MultiCurrencyModel, build_model_set, zcb
from mcpotential.scenarios import ACCEPTANCE_SPOT, acceptance_models, acceptance_specs, random_model

from conftest import flat_model


def test_libor_flat():
    m = flat_model(0.05)
    assert libor(m, 0.25)[0] == pytest.approx((math.exp(0.0125) - 1) / 0.25, rel=1e-12)
    assert libor(m, 0.25)[0] == pytest.approx(0.050314, abs=5e-7)
    assert abs(libor(m, 1e-4)[0] - 0.05) < 1e-5


def test_annuity_and_swap_rate_flat():
    assert annuity(flat_model(1e-12), 0.0, 1.0)[0] == pytest.approx(1.0, rel=1e-9)
    m = flat_model(0.05)
    want = sum(0.25 * math.exp(-0.05 * 0.25 * k) for k in range(1, 9))
    assert annuity(m, 0.0, 2.0)[0] == pytest.approx(want, rel=1e-12)
    assert annuity(m, 1.0, 1.25)[0] == pytest.approx(0.25 * zcb(m, 1.25)[0], rel=1e-12)
    s = swap_rate(m, 0.0, 2.0)[0]
    assert s == pytest.approx((1 - math.exp(-0.1)) / want, rel=1e-12)
    assert abs(swap_rate(flat_model(1e-9), 0.0, 2.0)[0]) < 1e-8
    with pytest.raises(ScheduleError):
        annuity(m, 0.0, 0.3)


def test_annuity_off_grid_start_matches_sum(ref_model):
    direct = 0.25 * sum(zcb(ref_model, 0.1 + 0.25 * k) for k in range(1, 5))
    np.testing.assert_allclose(annuity(ref_model, 0.1, 1.1), direct, rtol=1e-12)


def test_cap_flat_cases():
    m = flat_model(0.05)
    assert cap_price(m, 2.0, 0.2)[0] == 0.0
    # zero strike: telescoping sum of the floating leg (time-0 caplet excluded)
    want = zcb(m, 0.25)[0] - zcb(m, 2.0)[0]
    assert cap_price(m, 2.0, 0.0)[0] == pytest.approx(want, rel=1e-12)
    with pytest.raises(ScheduleError):
        cap_price(m, 0.25, 0.0)


def test_swaption_flat_atm_is_zero():
    m = flat_model(0.05)
    k = swaption_atm_strike(m, 1.0, 2.0)[0]
    assert abs(swaption_price(m, 1.0, 2.0, k)[0]) < 1e-15
    assert abs(swaption_price(m, 1.0, 2.0, k, payer=False)[0]) < 1e-15


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), strike=st.floats(0.0, 0.15))
def test_swaption_parity(seed, strike):
    m = random_model(np.random.default_rng(seed), 5)
    payer = swaption_price(m, 1.0, 2.0, strike)
    receiver = swaption_price(m, 1.0, 2.0, strike, payer=False)
    np.testing.assert_allclose(payer - receiver, forward_swap_value(m, 1.0, 2.0, strike), atol=1e-10)
    assert np.all(payer >= 0) and np.all(receiver >= 0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_cap_monotone(seed):
    m = random_model(np.random.default_rng(seed), 5)
    strikes = np.linspace(0.0, 0.12, 7)
    by_strike = np.array([cap_price(m, 3.0, k) for k in strikes])
    assert np.all(np.diff(by_strike, axis=0) <= 1e-15)
    by_maturity = np.array([cap_price(m, t, 0.04) for t in (0.5, 1.0, 2.0, 5.0, 10.0)])
    assert np.all(np.diff(by_maturity, axis=0) >= -1e-15)


def test_fx_forward_cases(ref_model):
    for tau in (0.1, 1.0, 7.0):
        np.testing.assert_allclose(fx_forward(ref_model, ref_model, 1.3, tau), 1.3, rtol=1e-12)
    f = fx_forward(flat_model(0.05), flat_model(0.01), 100.0, 1.0)[0]
    assert f == pytest.approx(100 * math.exp(-0.01) / math.exp(-0.05), rel=1e-12)
    assert f == pytest.approx(104.081, abs=5e-4)
    with pytest.raises(ModelMismatch):
        fx_forward(ref_model, flat_model(0.01), 1.0, 1.0)


def test_spec_validation():
    with pytest.raises(ValidationError):
        InstrumentSpec("bond", "USD", 1.0)
    with pytest.raises(ValidationError):
        InstrumentSpec("cap", "USD", 1.0)
    with pytest.raises(ValidationError):
        InstrumentSpec("libor", "USD", 0.25, strike=0.01)
    with pytest.raises(ScheduleError):
        InstrumentSpec("swap", "USD", 1.1)
    with pytest.raises(ValidationError):
        InstrumentSpec("swaption", "USD", 2.0, strike=ATM)
    s = InstrumentSpec("swaption", "USD", 2.0, expiry=1.0, strike=ATM)
    assert s.is_atm and s.label == "USD swaption 1x2 ATM"


def test_price_instruments_delegates():
    m = flat_model(0.05)
    ms = MultiCurrencyModel(m.q, {"USD": m})
    assert len(price_instruments(ms, [], 0)) == 0
    pv = price_instruments(ms, [InstrumentSpec("libor", "USD", 0.25)], 0)
    assert pv.values[0] == libor(m, 0.25)[0]
    with pytest.raises(UnknownCurrency):
        price_instruments(ms, [InstrumentSpec("libor", "EUR", 0.25)], 0)


def test_acceptance_panel_elementwise():
    models = acceptance_models()
    specs = acceptance_specs()
    assert len(specs) == 20
    for state in range(models.n):
        pv = price_instruments(models, specs, state, ACCEPTANCE_SPOT)
        for spec, v in zip(specs, pv.values):
            m = models[spec.currency]
            if spec.kind == "libor":
                want = libor(m, spec.tenor)[state]
            elif spec.kind == "swap":
                want = swap_rate(m, 0.0, spec.tenor)[state]
            elif spec.kind == "cap":
                k = swap_rate(m, 0.25, spec.tenor)[state]
                want = cap_price(m, spec.tenor, k)[state]
            elif spec.kind == "swaption":
                k = swap_rate(m, spec.expiry, spec.expiry + spec.tenor)[state]
                want = swaption_price(m, spec.expiry, spec.tenor, k)[state]
            else:
                want = 1.2 * zcb(m, spec.tenor)[state] / zcb(models["USD"], spec.tenor)[state]
            assert v == pytest.approx(want, rel=1e-14)
            assert math.isfinite(v) and v > 0


def test_price_all_states_needs_fixed_strike():
    models = acceptance_models()
    spec = InstrumentSpec("cap", "USD", 1.0, strike=ATM)
    with pytest.raises(ValidationError):
        price_all_states(models, spec)
    with pytest.raises(MissingSpot):
        price_spec(models, InstrumentSpec("fx_forward", "EUR", 1.0), 0, {})
