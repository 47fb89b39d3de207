"""Reference models and synthetic markets used by the tests, docs and CLI demos."""

from __future__ import annotations

import datetime as dt

import numpy as np

from .chain_kernel import circular_nn_generator, validate_intensity
from .instruments import ATM, InstrumentSpec
from .market_data import SyntheticConfig, business_dates
from .potential_model import CurrencyParams, build_model, build_model_set, pack_theta

DEFAULT_SPREADS = {
    # bid-ask width as a fraction of mid
    "libor": 0.02,
    "swap": 0.005,
    "cap": 0.04,
    "swaption": 0.04,
    "receiver_swaption": 0.04,
    "fx_forward": 0.0005,
}


def two_state_reference():
    """Q = [[-1, 1], [1, -1]], alpha = (0.02, 0.06), g = (1, 1)."""
    q = validate_intensity([[-1.0, 1.0], [1.0, -1.0]])
    return build_model(q, CurrencyParams([0.02, 0.06], [1.0, 1.0]))


def random_params(rng: np.random.Generator, n: int) -> CurrencyParams:
    alpha = rng.uniform(0.005, 0.12, n)
    g = np.concatenate([[1.0], rng.uniform(0.2, 2.0, n - 1)])
    return CurrencyParams(alpha, g)


def random_generator(rng: np.random.Generator, n: int, low: float = 0.1, high: float = 3.0):
    q = rng.uniform(low, high, (n, n))
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return validate_intensity(q)


def random_model(rng: np.random.Generator, n: int):
    """Irreducible full generator with positive alpha and g."""
    return build_model(random_generator(rng, n), random_params(rng, n))


# Five-state ring shared by USD and EUR; rates per year.
ACCEPTANCE_CLOCKWISE = (6.0, 4.0, 7.0, 5.0, 6.0)
ACCEPTANCE_COUNTER = (4.0, 6.0, 5.0, 7.0, 4.0)
ACCEPTANCE_PARAMS = {
    "USD": CurrencyParams([0.010, 0.030, 0.050, 0.070, 0.040], [1.0, 1.1, 0.9, 1.2, 1.0]),
    "EUR": CurrencyParams([0.020, 0.025, 0.035, 0.045, 0.030], [1.0, 0.9, 1.1, 1.0, 1.2]),
}
ACCEPTANCE_SPOT = {"EUR": 1.20}


def acceptance_specs() -> list[InstrumentSpec]:
    """Twenty instruments: eight per currency plus four EUR/USD forwards."""
    specs = []
    for ccy in ("USD", "EUR"):
        specs += [
            InstrumentSpec("libor", ccy, 0.25),
            InstrumentSpec("libor", ccy, 0.5),
            InstrumentSpec("swap", ccy, 2.0),
            InstrumentSpec("swap", ccy, 5.0),
            InstrumentSpec("swap", ccy, 10.0),
            InstrumentSpec("cap", ccy, 1.0, strike=ATM),
            InstrumentSpec("cap", ccy, 3.0, strike=ATM),
            InstrumentSpec("swaption", ccy, 2.0, expiry=1.0, strike=ATM),
        ]
    specs += [InstrumentSpec("fx_forward", "EUR", t) for t in (1.0 / 12, 0.25, 0.5, 1.0)]
    return specs


def acceptance_models():
    q = circular_nn_generator(ACCEPTANCE_CLOCKWISE, ACCEPTANCE_COUNTER)
    return build_model_set(q, ACCEPTANCE_PARAMS)


def acceptance_market(seed: int = 20030423, n_dates: int = 100, noise_fraction: float = 0.25,
                      initial_state: int = 0) -> SyntheticConfig:
    models = acceptance_models()
    return SyntheticConfig(
        q=models.q,
        params=ACCEPTANCE_PARAMS,
        initial_state=initial_state,
        dates=business_dates(dt.date(2003, 4, 23), n_dates),
        specs=acceptance_specs(),
        noise_fraction=noise_fraction,
        spreads={k: DEFAULT_SPREADS[k] for k in ("libor", "swap", "cap", "swaption", "fx_forward")},
        spot_rates=ACCEPTANCE_SPOT,
        seed=seed,
    )


def acceptance_initial_theta(perturbation: float = 0.3, seed: int = 7):
    """Starting point for calibration: the truth pushed off by a log-space perturbation."""
    theta = pack_theta("circular", acceptance_models())
    rng = np.random.default_rng(seed)
    return theta.with_values(theta.values + perturbation * rng.standard_normal(len(theta)))
