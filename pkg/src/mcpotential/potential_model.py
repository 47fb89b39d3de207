"""State-price density built from a finite chain and the triple (Q, alpha, g).

The density is ``zeta_t = f(X_t) exp(-int_0^t alpha(X_s) ds)`` with
``f = (diag(alpha) - Q)^{-1} g``.  Conditional expectations against it factor
through the propagator ``M(tau) = exp((Q - diag(alpha)) tau)``::

    price_i = [M(tau) (f * h)]_i / f_i

for a claim paying ``h[X_tau]`` at ``tau``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .chain_kernel import IntensityMatrix, circular_nn_generator, matrix_exp, validate_intensity
from .errors import (
    LayoutMismatch,
    NonFinite,
    NonPositiveF,
    SingularSystem,
    UnknownCurrency,
    ValidationError,
)

# Propagators at integer multiples of this step are built by repeated
# multiplication of the one-step propagator.
GRID_STEP = 0.25

STRUCTURES = ("full", "circular", "circular_one_way")


@dataclass(frozen=True)
class CurrencyParams:
    alpha: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float).reshape(-1)
        g = np.array(self.g, dtype=float).reshape(-1)
        if alpha.shape != g.shape:
            raise ValidationError("alpha and g must have the same length")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(g))):
            raise NonFinite("alpha and g must be finite")
        if np.any(alpha <= 0):
            raise ValidationError("alpha must be strictly positive")
        if np.any(g < 0):
            raise ValidationError("g must be nonnegative")
        alpha.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def normalized(self) -> CurrencyParams:
        """Same model with ``g[0] = 1`` (prices are invariant under g -> lambda g)."""
        if self.g[0] <= 0:
            raise ValidationError("cannot normalise: g[0] must be positive")
        return CurrencyParams(self.alpha, self.g / self.g[0])


@dataclass(frozen=True, eq=False)
class PotentialModel:
    q: IntensityMatrix
    params: CurrencyParams
    f: np.ndarray = field(repr=False)
    generator: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.q.n

    @property
    def alpha(self) -> np.ndarray:
        return self.params.alpha

    @property
    def g(self) -> np.ndarray:
        return self.params.g

    def propagator(self, tau: float) -> np.ndarray:
        return pricing_propagator(self, tau)


def build_model(q: IntensityMatrix, params: CurrencyParams) -> PotentialModel:
    if params.n != q.n:
        raise ValidationError(f"params have {params.n} states, Q has {q.n}")
    a = np.diag(params.alpha) - q.q
    try:
        f = np.linalg.solve(a, params.g)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    if not np.all(np.isfinite(f)):
        raise SingularSystem("diag(alpha) - Q is numerically singular")
    if np.any(f <= 0):
        raise NonPositiveF(f"f has a non-positive entry: min f = {f.min():.3g}")
    f.setflags(write=False)
    gen = q.q - np.diag(params.alpha)
    gen.setflags(write=False)
    return PotentialModel(q, params, f, gen)


def short_rate(model: PotentialModel) -> np.ndarray:
    return model.g / model.f


def grid_index(tau: float) -> int | None:
    """``k`` if ``tau == k * GRID_STEP`` (to round-off), else None."""
    k = round(tau / GRID_STEP)
    return k if abs(k * GRID_STEP - tau) <= 1e-12 * max(tau, 1.0) else None


def pricing_propagator(model: PotentialModel, tau: float) -> np.ndarray:
    """``exp((Q - diag(alpha)) tau)``, cached per model and exact tau."""
    tau = float(tau)
    if tau < 0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    cached = model._cache.get(tau)
    if cached is not None:
        return cached
    k = grid_index(tau)
    if k is not None and k >= 2:
        m = pricing_propagator(model, (k - 1) * GRID_STEP) @ pricing_propagator(model, GRID_STEP)
    else:
        m = matrix_exp(model.generator, tau)
    m.setflags(write=False)
    with model._lock:
        return model._cache.setdefault(tau, m)


def propagate(model: PotentialModel, tau: float, v: np.ndarray) -> np.ndarray:
    """``M(tau) @ v``; grid horizons use repeated one-step products."""
    k = grid_index(tau)
    if k is None or k == 0:
        return pricing_propagator(model, tau) @ v
    step = pricing_propagator(model, GRID_STEP)
    for _ in range(k):
        v = step @ v
    return v


def propagate_sum(model: PotentialModel, k_lo: int, k_hi: int, v: np.ndarray) -> np.ndarray:
    """``sum_{k=k_lo}^{k_hi} M(k * GRID_STEP) @ v``."""
    step = pricing_propagator(model, GRID_STEP)
    total = np.zeros_like(v, dtype=float)
    for k in range(k_hi + 1):
        if k >= k_lo:
            total = total + v
        if k < k_hi:
            v = step @ v
    return total


def grid_bonds(model: PotentialModel, k_max: int) -> np.ndarray:
    """Rows ``B(k * GRID_STEP)`` for ``k = 0..k_max`` (at least), per state."""
    table = model._cache.get("bonds")
    if table is not None and table.shape[0] > k_max:
        return table
    k_max = max(k_max, 40)
    step = pricing_propagator(model, GRID_STEP)
    rows = np.empty((k_max + 1, model.n))
    v = np.array(model.f, dtype=float)
    rows[0] = v
    for k in range(1, k_max + 1):
        v = step @ v
        rows[k] = v
    rows /= model.f
    rows.setflags(write=False)
    with model._lock:
        current = model._cache.get("bonds")
        if current is None or current.shape[0] < rows.shape[0]:
            model._cache["bonds"] = rows
    return rows


def price_terminal(model: PotentialModel, tau: float, payoff) -> np.ndarray:
    """Per-state value today of a claim paying ``payoff[X_tau]`` at ``tau``."""
    if tau < 0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    h = np.asarray(payoff, dtype=float)
    return propagate(model, tau, model.f * h) / model.f


def zcb(model: PotentialModel, tau: float) -> np.ndarray:
    if tau < 0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    k = grid_index(tau)
    if k is not None:
        return grid_bonds(model, k)[k]
    return pricing_propagator(model, tau) @ model.f / model.f


@dataclass(frozen=True)
class MultiCurrencyModel:
    """Shared chain and generator; one (alpha, g) block per currency.

    The first currency in ``currencies`` is the base (FX forwards are quoted
    in base-currency units per unit of foreign currency).
    """

    q: IntensityMatrix
    currencies: Mapping[str, PotentialModel]

    @property
    def base(self) -> str:
        return next(iter(self.currencies))

    @property
    def n(self) -> int:
        return self.q.n

    def __getitem__(self, ccy: str) -> PotentialModel:
        try:
            return self.currencies[ccy]
        except KeyError:
            raise UnknownCurrency(f"currency {ccy!r} not in model set") from None


def build_model_set(q: IntensityMatrix, params: Mapping[str, CurrencyParams]) -> MultiCurrencyModel:
    if not params:
        raise ValidationError("need at least one currency")
    return MultiCurrencyModel(q, {ccy: build_model(q, p) for ccy, p in params.items()})


# -- log-parameter vector ---------------------------------------------------


@dataclass(frozen=True)
class ThetaLayout:
    n: int
    structure: str
    currencies: tuple[str, ...]

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise LayoutMismatch(f"unknown Q structure {self.structure!r}")
        if self.n < 1 or (self.structure != "full" and self.n < 2):
            raise LayoutMismatch(f"structure {self.structure!r} needs more states than {self.n}")
        if not self.currencies:
            raise LayoutMismatch("layout needs at least one currency")
        object.__setattr__(self, "currencies", tuple(self.currencies))

    @property
    def q_size(self) -> int:
        n = self.n
        return {"full": n * (n - 1), "circular": 2 * n, "circular_one_way": n}[self.structure]

    @property
    def block_size(self) -> int:
        return 2 * self.n - 1

    @property
    def size(self) -> int:
        return self.q_size + len(self.currencies) * self.block_size

    def block(self, k: int) -> slice:
        start = self.q_size + k * self.block_size
        return slice(start, start + self.block_size)


@dataclass(frozen=True)
class ThetaVector:
    layout: ThetaLayout
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape[0] != self.layout.size:
            raise LayoutMismatch(f"theta has length {v.shape[0]}, layout needs {self.layout.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    def with_values(self, values) -> ThetaVector:
        return ThetaVector(self.layout, values)


def _off_diagonal_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def _q_log_entries(q: np.ndarray, structure: str) -> np.ndarray:
    n = q.shape[0]
    idx = np.arange(n)
    if structure == "full":
        rates = q[_off_diagonal_mask(n)]
        expected = q.copy()
    else:
        cw = q[idx, (idx + 1) % n]
        if structure == "circular":
            if n == 2:
                raise LayoutMismatch("a 2-state ring cannot separate clockwise and counter rates")
            ccw = q[idx, (idx - 1) % n]
            rates = np.concatenate([cw, ccw])
            expected = circular_nn_generator(cw, ccw).q
        else:
            rates = cw
            expected = circular_nn_generator(cw, np.zeros(n)).q
        if not np.array_equal(expected, q):
            raise LayoutMismatch(f"Q has entries outside the {structure} pattern")
    if np.any(rates <= 0):
        raise LayoutMismatch("log layout needs strictly positive rates")
    return np.log(rates)


def _q_from_log_entries(logq: np.ndarray, n: int, structure: str) -> IntensityMatrix:
    rates = np.exp(logq)
    if structure == "full":
        q = np.zeros((n, n))
        q[_off_diagonal_mask(n)] = rates
        q[np.diag_indices(n)] = -q.sum(axis=1)
        return validate_intensity(q)
    if structure == "circular":
        return circular_nn_generator(rates[:n], rates[n:])
    return circular_nn_generator(rates, np.zeros(n))


def pack_theta(structure: str, models: MultiCurrencyModel) -> ThetaVector:
    layout = ThetaLayout(models.n, structure, tuple(models.currencies))
    parts = [_q_log_entries(models.q.q, structure)]
    for pm in models.currencies.values():
        p = pm.params.normalized()
        if np.any(p.g[1:] <= 0):
            raise LayoutMismatch("log layout needs strictly positive g")
        parts.append(np.log(p.alpha))
        parts.append(np.log(p.g[1:]))
    return ThetaVector(layout, np.concatenate(parts))


def unpack_theta(theta: ThetaVector) -> tuple[IntensityMatrix, dict[str, CurrencyParams]]:
    lay = theta.layout
    v = theta.values
    if not np.all(np.isfinite(v)):
        raise NonFinite("theta must be finite")
    n = lay.n
    q = _q_from_log_entries(v[: lay.q_size], n, lay.structure)
    params = {}
    for k, ccy in enumerate(lay.currencies):
        blk = v[lay.block(k)]
        g = np.concatenate([[1.0], np.exp(blk[n:])])
        params[ccy] = CurrencyParams(np.exp(blk[:n]), g)
    return q, params


def model_set_from_theta(theta: ThetaVector) -> MultiCurrencyModel:
    q, params = unpack_theta(theta)
    return build_model_set(q, params)


def relabel_theta(theta: ThetaVector, state: int) -> ThetaVector:
    """Relabel states so that ``state`` becomes state 0.

    Ring structures are rotated (the only relabelings that keep the ring);
    full generators swap labels 0 and ``state``.  The model is unchanged up
    to the relabeling; g is renormalised so that the new ``g[0]`` is 1.
    """
    lay = theta.layout
    n = lay.n
    state = int(state) % n
    if state == 0:
        return theta
    if lay.structure == "full":
        perm = np.arange(n)
        perm[0], perm[state] = state, 0
    else:
        perm = (np.arange(n) + state) % n
    v = theta.values
    if lay.structure == "full":
        logq = np.full((n, n), np.nan)
        logq[_off_diagonal_mask(n)] = v[: lay.q_size]
        new_q = logq[np.ix_(perm, perm)][_off_diagonal_mask(n)]
    elif lay.structure == "circular":
        new_q = np.concatenate([v[:n][perm], v[n : 2 * n][perm]])
    else:
        new_q = v[:n][perm]
    parts = [new_q]
    for k in range(len(lay.currencies)):
        blk = v[lay.block(k)]
        log_g = np.concatenate([[0.0], blk[n:]])[perm]
        parts.append(blk[:n][perm])
        parts.append(log_g[1:] - log_g[0])
    return ThetaVector(lay, np.concatenate(parts))
