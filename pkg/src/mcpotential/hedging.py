"""Jump-immunization hedges and a rolling hedge backtest.

Between jumps of the chain every price in the model moves smoothly, so the
risk to neutralise is the jump ``i -> j``.  A position in a target ``Z`` plus
``w_r`` units of hedges ``z_r`` is immune to that jump when

    dZ_ij + sum_r w_r dz_ij^(r) = 0.

With the state known only row ``i`` matters (n - 1 equations); without it
all ordered pairs do.  Both are solved by least squares.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .calibration import FilterConfig, DateResult, ParticleCloud, active_particles, run_filter
from .errors import ValidationError
from .instruments import InstrumentSpec, atm_strike, price_all_states, price_spec
from .market_data import MarketSnapshot
from .potential_model import MultiCurrencyModel, ThetaVector


@dataclass(frozen=True)
class HedgePortfolio:
    """Units per hedge instrument and the worst post-hedge jump P&L left over.

    ``sum_squares`` is the least-squares objective the weights minimise.
    """

    weights: np.ndarray
    residual: float
    scale: float = 1.0  # largest |target jump| the residual is measured against
    sum_squares: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValidationError("hedge weights must be finite")
        if self.residual < 0:
            raise ValidationError("residual must be >= 0")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def relative_residual(self) -> float:
        return self.residual / self.scale if self.scale > 0 else self.residual


def jump_deltas(model_set: MultiCurrencyModel, spec: InstrumentSpec,
                spot_rates: Mapping[str, float] | None = None) -> np.ndarray:
    """``D[i, j] = price in state j - price in state i`` (ATM strikes must be fixed)."""
    z = price_all_states(model_set, spec, spot_rates)
    return z[None, :] - z[:, None]


def _check(target: np.ndarray, hedges: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    target = np.asarray(target, dtype=float)
    if target.ndim != 2 or target.shape[0] != target.shape[1]:
        raise ValidationError("jump-delta matrices must be square")
    if len(hedges) == 0:
        raise ValidationError("need at least one hedge instrument")
    h = np.stack([np.asarray(x, dtype=float) for x in hedges], axis=-1)
    if h.shape[:2] != target.shape:
        raise ValidationError("hedge and target jump deltas disagree on the state count")
    return target, h


def _solve(a: np.ndarray, b: np.ndarray) -> HedgePortfolio:
    """Least-squares ``a w = -b`` (minimum-norm when rank deficient)."""
    scale = float(np.abs(b).max()) if b.size else 0.0
    if a.shape[1] == 1:
        # closed form keeps a self-hedge at exactly -1, even on a flat row
        col = a[:, 0]
        denom = float(col @ col)
        if np.array_equal(col, b):
            w = np.array([-1.0])
        else:
            w = np.array([-(col @ b) / denom]) if denom > 0 else np.zeros(1)
    else:
        w = np.linalg.lstsq(a, -b, rcond=None)[0]
    pnl = b + a @ w
    resid = float(np.abs(pnl).max()) if b.size else 0.0
    return HedgePortfolio(w, resid, scale, float(pnl @ pnl))


def solve_hedge_known_state(i: int, target: np.ndarray, hedges: Sequence[np.ndarray]) -> HedgePortfolio:
    target, h = _check(target, hedges)
    n = target.shape[0]
    if not 0 <= i < n:
        raise ValidationError(f"state {i} outside [0, {n})")
    others = np.arange(n) != i
    return _solve(h[i, others], target[i, others])


def solve_hedge_all_states(target: np.ndarray, hedges: Sequence[np.ndarray]) -> HedgePortfolio:
    target, h = _check(target, hedges)
    off = ~np.eye(target.shape[0], dtype=bool)
    return _solve(h[off], target[off])


def _resolved(model_set: MultiCurrencyModel, spec: InstrumentSpec, state: int) -> InstrumentSpec:
    if spec.is_atm:
        return replace(spec, strike=float(atm_strike(model_set, spec)[state]))
    return spec


def particle_hedge(cloud: ParticleCloud, target: InstrumentSpec, hedges: Sequence[InstrumentSpec],
                   spot_rates: Mapping[str, float] | None = None, mode: str = "known_state") -> HedgePortfolio:
    """Weight-averaged per-particle hedge.

    Every particle solves its own hedge (at its own state for
    ``mode="known_state"``, over all jumps for ``mode="all_states"``).  The
    reported residual is the weight-averaged worst jump P&L of the averaged
    weights, measured under each particle's model.
    """
    if mode not in ("known_state", "all_states"):
        raise ValidationError(f"unknown hedge mode {mode!r}")
    if not hedges:
        raise ValidationError("need at least one hedge instrument")
    ws, rows, probs = [], [], []
    weights = cloud.weights
    for k in active_particles(cloud):
        models = cloud.model_set(k)
        if models is None:
            continue
        xi = int(cloud.xi[k])
        tgt = jump_deltas(models, _resolved(models, target, xi), spot_rates)
        hdg = [jump_deltas(models, _resolved(models, s, xi), spot_rates) for s in hedges]
        if mode == "known_state":
            port = solve_hedge_known_state(xi, tgt, hdg)
        else:
            port = solve_hedge_all_states(tgt, hdg)
        ws.append(port.weights)
        rows.append((xi, tgt, np.stack(hdg, axis=-1)))
        probs.append(weights[k])
    if not ws:
        raise ValidationError("no particle carries a valid model")
    p = np.array(probs) / np.sum(probs)
    w = p @ np.array(ws)
    resid = scale = 0.0
    for pk, (xi, tgt, h) in zip(p, rows):
        if mode == "known_state":
            pnl = tgt[xi] + h[xi] @ w
            size = np.abs(tgt[xi]).max()
        else:
            pnl = tgt + h @ w
            size = np.abs(tgt).max()
        resid += pk * float(np.abs(pnl).max())
        scale += pk * float(size)
    return HedgePortfolio(w, resid, scale)


# -- backtest -------------------------------------------------------------------


def fix_strikes(cloud: ParticleCloud, specs: Sequence[InstrumentSpec],
                spot_rates: Mapping[str, float] | None = None) -> list[InstrumentSpec]:
    """Replace ATM strikes by their posterior-mean value (fixes today's contracts)."""
    out = []
    idx = [k for k in active_particles(cloud) if cloud.model_set(k) is not None]
    w = cloud.weights[idx]
    w = w / w.sum()
    for spec in specs:
        if not spec.is_atm:
            out.append(spec)
            continue
        strikes = np.array([atm_strike(cloud.model_set(k), spec)[int(cloud.xi[k])] for k in idx])
        out.append(replace(spec, strike=float(w @ strikes)))
    return out


def posterior_value(cloud: ParticleCloud, spec: InstrumentSpec,
                    spot_rates: Mapping[str, float] | None = None) -> float:
    idx = [k for k in active_particles(cloud) if cloud.model_set(k) is not None]
    w = cloud.weights[idx]
    vals = np.array([price_spec(cloud.model_set(k), spec, int(cloud.xi[k]), spot_rates) for k in idx])
    return float(w @ vals / w.sum())


@dataclass(frozen=True)
class BacktestRow:
    date: dt.date
    target_value: float
    hedge_value: float
    target_increment: float  # value change of yesterday's target contract
    hedge_increment: float  # value change of yesterday's hedge portfolio
    weights: np.ndarray


@dataclass
class HedgeBacktest:
    rows: list[BacktestRow]
    filter_results: list[DateResult]
    burn_in: int = 0

    @property
    def correlation(self) -> float:
        """Correlation of target increments with minus the hedge increments."""
        kept = self.rows[max(self.burn_in, 1):]
        if len(kept) < 2:
            raise ValidationError("need at least two increments after burn-in")
        a = np.array([r.target_increment for r in kept])
        b = -np.array([r.hedge_increment for r in kept])
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            return float("nan")
        return float(np.corrcoef(a, b)[0, 1])


def hedge_backtest(snapshots: Sequence[MarketSnapshot], target: InstrumentSpec,
                   hedges: Sequence[InstrumentSpec], theta_init: ThetaVector, cfg: FilterConfig,
                   mode: str = "known_state", burn_in: int = 0, progress=None) -> HedgeBacktest:
    """Calibrate date by date and re-solve the hedge on every date.

    Contracts (ATM strikes included) are fixed when the hedge is put on; the
    next date's increments revalue those same contracts under the updated
    posterior.  Prices are clean: no carry between dates.
    """
    if len(snapshots) < 2:
        raise ValidationError("a backtest needs at least two snapshots")
    spot = cfg.spot_rates
    rows: list[BacktestRow] = []
    held: dict = {}

    def on_date(t: int, cloud: ParticleCloud, snap: MarketSnapshot):
        d_target = d_hedge = 0.0
        if held:
            d_target = posterior_value(cloud, held["target"], spot) - held["target_value"]
            now = np.array([posterior_value(cloud, s, spot) for s in held["hedges"]])
            d_hedge = float(held["weights"] @ (now - held["hedge_prices"]))
        fixed = fix_strikes(cloud, [target, *hedges], spot)
        port = particle_hedge(cloud, fixed[0], fixed[1:], spot, mode)
        tv = posterior_value(cloud, fixed[0], spot)
        hp = np.array([posterior_value(cloud, s, spot) for s in fixed[1:]])
        held.update(target=fixed[0], hedges=fixed[1:], weights=port.weights,
                    target_value=tv, hedge_prices=hp)
        rows.append(BacktestRow(snap.date, tv, float(port.weights @ hp), d_target, d_hedge,
                                port.weights))

    results = run_filter(snapshots, theta_init, cfg, on_date=on_date, progress=progress)
    return HedgeBacktest(rows, results, burn_in)


BACKTEST_HEADER = ("date", "target_value", "hedge_value", "target_increment", "hedge_increment")


def write_backtest_csv(report: HedgeBacktest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BACKTEST_HEADER)
        for r in report.rows:
            w.writerow((r.date.isoformat(), repr(r.target_value), repr(r.hedge_value),
                        repr(r.target_increment), repr(r.hedge_increment)))
