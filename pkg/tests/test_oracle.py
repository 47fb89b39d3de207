import math

import numpy as np
import pytest

from mcpotential.errors import ValidationError
from mcpotential.oracle import estimate, mc_price_terminal, simulate_deflators
from mcpotential.potential_model import price_terminal, zcb

from conftest import flat_model


def test_deterministic_path_has_zero_error():
    m = flat_model(0.04)
    est = mc_price_terminal(m, 2.0, [3.0], 0, 100, seed=1)
    assert est.standard_error == 0.0
    assert est.mean == pytest.approx(3.0 * math.exp(-0.08), rel=1e-14)


def test_zero_payoff(ref_model):
    est = mc_price_terminal(ref_model, 1.0, [0.0, 0.0], 0, 100, seed=1)
    assert est.mean == 0.0 and est.standard_error == 0.0


@pytest.mark.parametrize("start", [0, 1])
def test_unit_payoff_matches_bond(ref_model, start):
    est = mc_price_terminal(ref_model, 1.0, [1.0, 1.0], start, 100_000, seed=3)
    assert abs(est.z_score(zcb(ref_model, 1.0)[start])) < 3


def test_z_scores_look_standard_normal(ref_model):
    exact = price_terminal(ref_model, 1.0, [1.0, 0.0])[0]
    z = [mc_price_terminal(ref_model, 1.0, [1.0, 0.0], 0, 4000, seed=s).z_score(exact) for s in range(60)]
    z = np.array(z)
    assert abs(z.mean()) < 4 / math.sqrt(60)
    assert 0.6 < z.std() < 1.4


def test_deflators_respect_time_order(ref_model):
    s1, d1 = simulate_deflators(ref_model, [1.0, 0.5], 0, 200, seed=4)
    s2, d2 = simulate_deflators(ref_model, [0.5, 1.0], 0, 200, seed=4)
    np.testing.assert_array_equal(d1[:, ::-1], d2)
    np.testing.assert_array_equal(s1[:, ::-1], s2)


def test_guards(ref_model):
    with pytest.raises(ValidationError):
        mc_price_terminal(ref_model, 1.0, [1.0, 1.0], 0, 10, seed=1)
    with pytest.raises(ValidationError):
        simulate_deflators(ref_model, [1.0], 2, 100, seed=1)
    assert estimate(np.array([1.0, 3.0])).standard_error == pytest.approx(1.0)
