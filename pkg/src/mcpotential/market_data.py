"""Quote panels: CSV ingestion, synthetic markets, and the spread-error metric."""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .chain_kernel import ChainPath, IntensityMatrix, rng_stream, simulate_path
from .errors import CrossedQuote, Misaligned, ParseError, SchemaError, ValidationError
from .instruments import ATM, KINDS, InstrumentSpec, PriceVector, price_instruments
from .potential_model import CurrencyParams, build_model_set

HEADER = ("date", "currency", "kind", "tenor_y", "expiry_y", "strike", "bid", "ask")
TRADING_DAYS = 252


@dataclass(frozen=True)
class QuoteRecord:
    date: dt.date
    spec: InstrumentSpec
    bid: float
    ask: float

    def __post_init__(self):
        if self.bid > self.ask:
            raise CrossedQuote(f"bid {self.bid} > ask {self.ask} for {self.spec.label}")

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)

    @property
    def spread(self) -> float:
        return self.ask - self.bid


@dataclass(frozen=True)
class MarketSnapshot:
    date: dt.date
    records: tuple[QuoteRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        keys = [r.spec.key for r in self.records]
        if len(set(keys)) != len(keys):
            raise ValidationError(f"duplicate instrument on {self.date}")

    @property
    def specs(self) -> tuple[InstrumentSpec, ...]:
        return tuple(r.spec for r in self.records)

    @property
    def mids(self) -> np.ndarray:
        return np.array([r.mid for r in self.records])

    def __len__(self):
        return len(self.records)


def year_fraction(start: dt.date, end: dt.date) -> float:
    """Business-day year fraction (weekdays / 252)."""
    return float(np.busday_count(start, end)) / TRADING_DAYS


def business_dates(start: dt.date, count: int) -> list[dt.date]:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    days = np.busday_offset(first, np.arange(count), roll="forward")
    return [d.astype(dt.date) for d in days]


# -- CSV --------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def record_to_row(rec: QuoteRecord) -> list[str]:
    s = rec.spec
    uses_expiry = s.kind in ("swaption", "receiver_swaption") or (s.kind == "swap" and s.expiry)
    if s.strike is None:
        strike = ""
    elif s.is_atm:
        strike = ATM
    else:
        strike = _fmt(s.strike)
    return [rec.date.isoformat(), s.currency, s.kind, _fmt(s.tenor),
            _fmt(s.expiry) if uses_expiry else "", strike, _fmt(rec.bid), _fmt(rec.ask)]


def write_csv(snapshots: Iterable[MarketSnapshot], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for snap in snapshots:
            for rec in snap.records:
                w.writerow(record_to_row(rec))


def _parse_float(text: str, name: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{name} {text!r} is not a number", line) from None
    if not math.isfinite(value):
        raise ParseError(f"{name} must be finite", line)
    return value


def parse_row(row: Sequence[str], line: int) -> QuoteRecord:
    if len(row) != len(HEADER):
        raise ParseError(f"expected {len(HEADER)} fields, got {len(row)}", line)
    date_s, ccy, kind, tenor_s, expiry_s, strike_s, bid_s, ask_s = (c.strip() for c in row)
    try:
        date = dt.date.fromisoformat(date_s)
    except ValueError:
        raise ParseError(f"bad ISO date {date_s!r}", line) from None
    if kind not in KINDS:
        raise ParseError(f"unknown kind {kind!r}", line)
    if not ccy:
        raise ParseError("empty currency", line)
    tenor = _parse_float(tenor_s, "tenor_y", line)
    expiry = _parse_float(expiry_s, "expiry_y", line) if expiry_s else 0.0
    if strike_s == "":
        strike = None
    elif strike_s.upper() == ATM:
        strike = ATM
    else:
        strike = _parse_float(strike_s, "strike", line)
    bid = _parse_float(bid_s, "bid", line)
    ask = _parse_float(ask_s, "ask", line)
    if bid > ask:
        raise CrossedQuote(f"bid {bid} > ask {ask}", line)
    try:
        spec = InstrumentSpec(kind, ccy, tenor, expiry, strike)
    except ValidationError as exc:
        raise ParseError(str(exc), line) from None
    return QuoteRecord(date, spec, bid, ask)


def group_snapshots(records: Iterable[QuoteRecord]) -> list[MarketSnapshot]:
    by_date: dict[dt.date, list[QuoteRecord]] = defaultdict(list)
    for rec in records:
        by_date[rec.date].append(rec)
    return [MarketSnapshot(d, tuple(by_date[d])) for d in sorted(by_date)]


def read_csv_text(text: str) -> list[MarketSnapshot]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(c.strip() for c in header) != HEADER:
        raise SchemaError(f"header must be {','.join(HEADER)}")
    records = []
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        records.append(parse_row(row, reader.line_num))
    try:
        return group_snapshots(records)
    except ValidationError as exc:
        raise ParseError(str(exc)) from None


def load_csv(path) -> list[MarketSnapshot]:
    return read_csv_text(Path(path).read_text())


# -- synthetic markets ------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """A known true model and the quoting conventions used to sample a panel.

    ``spreads`` maps instrument kind to the bid-ask width as a fraction of
    the mid; the log-mid noise has standard deviation
    ``noise_fraction * spreads[kind]``.
    """

    q: IntensityMatrix
    params: Mapping[str, CurrencyParams]
    initial_state: int
    dates: Sequence[dt.date]
    specs: Sequence[InstrumentSpec]
    noise_fraction: float
    spreads: Mapping[str, float]
    spot_rates: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.noise_fraction < 0:
            raise ValidationError("noise_fraction must be >= 0")
        kinds = {s.kind for s in self.specs}
        missing = kinds - set(self.spreads)
        if missing:
            raise ValidationError(f"no spread configured for {sorted(missing)}")
        if any(self.spreads[k] <= 0 for k in kinds):
            raise ValidationError("spreads must be positive")
        if not self.dates:
            raise ValidationError("need at least one observation date")
        if list(self.dates) != sorted(set(self.dates)):
            raise ValidationError("dates must be strictly increasing")


def generate_synthetic(cfg: SyntheticConfig) -> tuple[list[MarketSnapshot], ChainPath]:
    models = build_model_set(cfg.q, cfg.params)
    d0 = cfg.dates[0]
    times = [year_fraction(d0, d) for d in cfg.dates]
    path = simulate_path(cfg.q, cfg.initial_state, times[-1], cfg.seed)
    rng = rng_stream(cfg.seed, 1)
    specs = tuple(cfg.specs)
    width = np.array([cfg.spreads[s.kind] for s in specs])
    snapshots = []
    for d, t in zip(cfg.dates, times):
        state = path.state_at(t)
        true = price_instruments(models, specs, state, cfg.spot_rates).values
        eps = rng.standard_normal(len(specs)) * cfg.noise_fraction * width
        mid = true * np.exp(eps) if cfg.noise_fraction > 0 else true
        recs = tuple(QuoteRecord(d, s, float(m * (1 - w / 2)), float(m * (1 + w / 2)))
                     for s, m, w in zip(specs, mid, width))
        snapshots.append(MarketSnapshot(d, recs))
    return snapshots, path


def write_path_csv(path: ChainPath, dates: Sequence[dt.date], out) -> None:
    """Hidden chain state on each observation date."""
    d0 = dates[0]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "t_years", "state"))
        for d in dates:
            t = year_fraction(d0, d)
            w.writerow((d.isoformat(), _fmt(t), path.state_at(t)))


# -- errors in spreads -------------------------------------------------------


@dataclass(frozen=True)
class SpreadErrorReport:
    """Average |model - mid| / (ask - bid) per kind.

    Records quoted with zero width cannot be expressed in spreads; their
    errors go to ``bp_fallback`` as |model - mid| * 1e4 instead.
    """

    by_kind: dict[str, float]
    bp_fallback: dict[str, float]
    per_instrument: dict[tuple, float]


def spread_error(model_prices: PriceVector, snapshot: MarketSnapshot) -> SpreadErrorReport:
    model = {s.key: v for s, v in zip(model_prices.specs, model_prices.values)}
    quoted = {r.spec.key: r for r in snapshot.records}
    if set(model) != set(quoted) or len(model) != len(model_prices.specs):
        raise Misaligned("model prices and snapshot cover different instruments")
    spreads: dict[str, list[float]] = defaultdict(list)
    bps: dict[str, list[float]] = defaultdict(list)
    per = {}
    for key in sorted(quoted, key=repr):
        rec = quoted[key]
        err = abs(model[key] - rec.mid)
        if rec.spread > 0:
            per[key] = err / rec.spread
            spreads[rec.spec.kind].append(per[key])
        else:
            per[key] = err * 1e4
            bps[rec.spec.kind].append(per[key])
    return SpreadErrorReport(
        {k: float(np.mean(v)) for k, v in sorted(spreads.items())},
        {k: float(np.mean(v)) for k, v in sorted(bps.items())},
        per,
    )
