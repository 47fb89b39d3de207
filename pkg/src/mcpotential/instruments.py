"""Closed-form per-state prices for Libor, swaps, caps, swaptions and FX forwards.

Every pricing function returns an n-vector: entry ``i`` is the value when the
chain currently sits in state ``i``.  Rates are decimals, option prices are
per unit notional.  The model is time-homogeneous, so a quantity observed at
a future date in state ``j`` equals today's value in state ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingSpot, ModelMismatch, ScheduleError, UnknownCurrency, ValidationError
from .potential_model import (
    GRID_STEP,
    MultiCurrencyModel,
    PotentialModel,
    grid_bonds,
    grid_index,
    price_terminal,
    propagate_sum,
    zcb,
)

ATM = "ATM"
DELTA = 0.25

KINDS = ("libor", "swap", "cap", "swaption", "receiver_swaption", "fx_forward")
OPTION_KINDS = ("cap", "swaption", "receiver_swaption")


def _steps(length: float, delta: float) -> int:
    k = round(length / delta)
    if k < 1 or abs(k * delta - length) > 1e-9:
        raise ScheduleError(f"period {length} is not a positive multiple of {delta}")
    return k


def libor(model: PotentialModel, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ScheduleError("Libor tenor must be positive")
    return (1.0 / zcb(model, tau) - 1.0) / tau


def annuity(model: PotentialModel, start: float, end: float, delta: float = DELTA) -> np.ndarray:
    if start < 0 or end <= start:
        raise ScheduleError(f"bad schedule [{start}, {end}]")
    k = _steps(end - start, delta)
    k0 = grid_index(start)
    if delta == GRID_STEP and k0 is not None:
        return delta * grid_bonds(model, k0 + k)[k0 + 1 : k0 + k + 1].sum(axis=0)
    total = np.zeros(model.n)
    for j in range(1, k + 1):
        total += zcb(model, start + j * delta)
    return delta * total


def swap_rate(model: PotentialModel, start: float, end: float, delta: float = DELTA) -> np.ndarray:
    a = annuity(model, start, end, delta)
    b_start = zcb(model, start) if start > 0 else np.ones(model.n)
    return (b_start - zcb(model, end)) / a


def cap_atm_strike(model: PotentialModel, maturity: float, delta: float = DELTA) -> np.ndarray:
    """Forward swap rate over the caplet periods ``[delta, maturity]``."""
    return swap_rate(model, delta, maturity, delta)


def swaption_atm_strike(model: PotentialModel, expiry: float, swap_tenor: float,
                        delta: float = DELTA) -> np.ndarray:
    return swap_rate(model, expiry, expiry + swap_tenor, delta)


def cap_price(model: PotentialModel, maturity: float, strike: float,
              delta: float = DELTA) -> np.ndarray:
    """Caps exclude the caplet fixing at time 0.

    Each caplet is valued at its reset date as ``delta * B(delta) * (L - K)^+``
    and, the model being time-homogeneous, every caplet shares that payoff
    vector, so the cap is one matrix-vector product with the summed propagators.
    """
    k = _steps(maturity, delta)
    if k < 2:
        raise ScheduleError("a cap needs maturity >= 2 * delta")
    b = zcb(model, delta)
    payoff = delta * b * np.maximum((1.0 / b - 1.0) / delta - strike, 0.0)
    if delta == GRID_STEP:
        return propagate_sum(model, 1, k - 1, model.f * payoff) / model.f
    return sum(price_terminal(model, j * delta, payoff) for j in range(1, k))


def swaption_price(model: PotentialModel, expiry: float, swap_tenor: float, strike: float,
                   payer: bool = True, delta: float = DELTA) -> np.ndarray:
    if expiry <= 0:
        raise ScheduleError("swaption expiry must be positive")
    if swap_tenor < delta:
        raise ScheduleError("swap tenor shorter than one accrual period")
    a = annuity(model, 0.0, swap_tenor, delta)
    s = (1.0 - zcb(model, swap_tenor)) / a
    intrinsic = s - strike if payer else strike - s
    return price_terminal(model, expiry, a * np.maximum(intrinsic, 0.0))


def forward_swap_value(model: PotentialModel, expiry: float, swap_tenor: float, strike: float,
                       delta: float = DELTA) -> np.ndarray:
    """Value of entering the payer swap at expiry; payer minus receiver."""
    a = annuity(model, 0.0, swap_tenor, delta)
    s = (1.0 - zcb(model, swap_tenor)) / a
    return price_terminal(model, expiry, a * (s - strike))


def fx_forward(domestic: PotentialModel, foreign: PotentialModel, spot: float,
               tau: float) -> np.ndarray:
    if domestic.q != foreign.q:
        raise ModelMismatch("FX forward needs both currencies on the same chain")
    if spot <= 0:
        raise ValidationError("spot must be positive")
    return spot * zcb(foreign, tau) / zcb(domestic, tau)


@dataclass(frozen=True)
class InstrumentSpec:
    """One quoted instrument.

    ``tenor`` is the Libor/swap/FX tenor, the cap maturity or the swaption's
    underlying swap tenor.  ``expiry`` is the swaption expiry or a swap's
    forward start.  For ``fx_forward`` the currency is the foreign leg and the
    domestic leg is the model set's base currency.
    """

    kind: str
    currency: str
    tenor: float
    expiry: float = 0.0
    strike: float | str | None = None
    delta: float = DELTA

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown instrument kind {self.kind!r}")
        if not (self.tenor > 0 and math.isfinite(self.tenor)):
            raise ValidationError("tenor must be positive and finite")
        if self.kind in OPTION_KINDS:
            if self.strike is None:
                raise ValidationError(f"{self.kind} needs a strike or ATM")
            if self.strike != ATM and not math.isfinite(float(self.strike)):
                raise ValidationError("strike must be finite")
        elif self.strike is not None:
            raise ValidationError(f"{self.kind} takes no strike")
        if self.kind in ("swap", "cap", "swaption", "receiver_swaption"):
            _steps(self.tenor, self.delta)
        if self.kind in ("swaption", "receiver_swaption") and self.expiry <= 0:
            raise ValidationError("swaption expiry must be positive")

    @property
    def is_atm(self) -> bool:
        return self.strike == ATM

    @property
    def key(self) -> tuple:
        return (self.currency, self.kind, self.tenor, self.expiry, self.strike)

    @property
    def label(self) -> str:
        if self.kind in ("swaption", "receiver_swaption"):
            body = f"{self.kind} {self.expiry:g}x{self.tenor:g}"
        elif self.kind == "swap" and self.expiry:
            body = f"swap {self.expiry:g}-{self.expiry + self.tenor:g}"
        else:
            body = f"{self.kind} {self.tenor:g}"
        if self.strike is not None:
            body += f" {self.strike}" if self.is_atm else f" K={float(self.strike):.6g}"
        return f"{self.currency} {body}"


@dataclass(frozen=True)
class PriceVector:
    specs: tuple[InstrumentSpec, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.specs),):
            raise ValidationError("values and specs differ in length")
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.specs)


def atm_strike(model_set: MultiCurrencyModel, spec: InstrumentSpec) -> np.ndarray:
    """Per-state ATM strike for an option spec (forward swap rate of its period)."""
    m = model_set[spec.currency]
    if spec.kind == "cap":
        return cap_atm_strike(m, spec.tenor, spec.delta)
    if spec.kind in ("swaption", "receiver_swaption"):
        return swaption_atm_strike(m, spec.expiry, spec.tenor, spec.delta)
    raise ValidationError(f"{spec.kind} has no ATM strike")


def resolve_strike(model_set: MultiCurrencyModel, spec: InstrumentSpec, state: int) -> InstrumentSpec:
    if not spec.is_atm:
        return spec
    return replace(spec, strike=float(atm_strike(model_set, spec)[state]))


def price_all_states(model_set: MultiCurrencyModel, spec: InstrumentSpec,
                     spot_rates: Mapping[str, float] | None = None) -> np.ndarray:
    """Per-state price of a fixed-strike spec (ATM specs must be resolved first)."""
    if spec.is_atm:
        raise ValidationError("resolve the ATM strike before pricing across states")
    m = model_set[spec.currency]
    kind = spec.kind
    if kind == "libor":
        return libor(m, spec.tenor)
    if kind == "swap":
        return swap_rate(m, spec.expiry, spec.expiry + spec.tenor, spec.delta)
    if kind == "cap":
        return cap_price(m, spec.tenor, float(spec.strike), spec.delta)
    if kind in ("swaption", "receiver_swaption"):
        return swaption_price(m, spec.expiry, spec.tenor, float(spec.strike),
                              kind == "swaption", spec.delta)
    # fx_forward
    if spot_rates is None or spec.currency not in spot_rates:
        raise MissingSpot(f"no spot rate for {spec.currency}")
    return fx_forward(model_set[model_set.base], m, spot_rates[spec.currency], spec.tenor)


def price_spec(model_set: MultiCurrencyModel, spec: InstrumentSpec, state: int,
               spot_rates: Mapping[str, float] | None = None) -> float:
    return float(price_all_states(model_set, resolve_strike(model_set, spec, state), spot_rates)[state])


def price_instruments(model_set: MultiCurrencyModel, specs: Sequence[InstrumentSpec], state: int,
                      spot_rates: Mapping[str, float] | None = None) -> PriceVector:
    """Model price vector at chain state ``state``; ATM strikes resolved at that state."""
    if not 0 <= state < model_set.n:
        raise ValidationError(f"state {state} outside [0, {model_set.n})")
    for spec in specs:
        if spec.currency not in model_set.currencies:
            raise UnknownCurrency(f"currency {spec.currency!r} not in model set")
    values = np.array([price_spec(model_set, s, state, spot_rates) for s in specs], dtype=float)
    return PriceVector(tuple(specs), values)
