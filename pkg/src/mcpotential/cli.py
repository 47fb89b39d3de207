"""Command-line entry point: ``mcpotential {simulate,calibrate,price,hedge}``.

Every command reads a YAML run config (schema in README.md); ``--seed``,
``--out`` and ``--threads`` override the corresponding config entries.
Exit codes: 0 success, 2 config or validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .calibration import (
    FilterConfig,
    ObservationNoise,
    OptimizerConfig,
    ShakeConfig,
    average_spread_errors,
    run_filter,
    write_posterior_csv,
    write_spread_error_csv,
)
from .chain_kernel import circular_nn_generator, validate_intensity
from .errors import PotentialError, ValidationError
from .hedging import hedge_backtest, write_backtest_csv
from .instruments import ATM, InstrumentSpec, price_all_states, resolve_strike
from .market_data import SyntheticConfig, business_dates, generate_synthetic, load_csv, write_csv, write_path_csv
from .potential_model import CurrencyParams, ThetaVector, build_model_set, pack_theta
from .scenarios import DEFAULT_SPREADS

log = logging.getLogger("mcpotential")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValidationError):
    pass


@dataclass
class RunConfig:
    """Parsed YAML config plus the directory relative paths resolve against."""

    data: dict
    base_dir: Path
    seed: int
    out_dir: Path
    threads: int = 1
    overrides: dict = field(default_factory=dict)

    def section(self, name: str, required: bool = True) -> dict:
        sec = self.data.get(name)
        if sec is None:
            if required:
                raise ConfigError(f"config has no {name!r} section")
            return {}
        if not isinstance(sec, dict):
            raise ConfigError(f"{name!r} must be a mapping")
        return sec

    def path(self, value: str, must_exist: bool = True) -> Path:
        p = Path(value)
        if not p.is_absolute():
            p = self.base_dir / p
        if must_exist and not p.exists():
            raise ConfigError(f"file not found: {p}")
        return p


def load_config(path: str, seed: int | None, out: str | None, threads: int | None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at top level")
    if seed is None:
        if "seed" not in data:
            raise ConfigError("no seed given (set 'seed' in the config or pass --seed)")
        seed = data["seed"]
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    out_dir = Path(out) if out is not None else p.parent / data.get("out", "out")
    threads = threads if threads is not None else int(data.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    return RunConfig(data, p.parent, seed, out_dir, threads)


# -- config sections ------------------------------------------------------------


def _get(sec: dict, key: str, kind=None, default: Any = ...):
    if key not in sec:
        if default is ...:
            raise ConfigError(f"missing key {key!r}")
        return default
    value = sec[key]
    if kind is not None:
        try:
            value = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key!r}: cannot read {value!r} as {kind.__name__}") from None
    return value


def parse_model(sec: dict):
    """``(model_set, structure, initial_state, spot_rates)`` from the model section."""
    q_sec = _get(sec, "q")
    if "matrix" in q_sec:
        q = validate_intensity(np.array(q_sec["matrix"], dtype=float))
    elif "clockwise" in q_sec:
        q = circular_nn_generator(q_sec["clockwise"], q_sec.get("counter", [0.0] * len(q_sec["clockwise"])))
    else:
        raise ConfigError("model.q needs 'matrix' or 'clockwise'/'counter'")
    cur = _get(sec, "currencies")
    if not isinstance(cur, dict) or not cur:
        raise ConfigError("model.currencies must be a non-empty mapping")
    params = {str(k): CurrencyParams(v["alpha"], v["g"]) for k, v in cur.items()}
    models = build_model_set(q, params)
    structure = _get(sec, "structure", str, "full")
    state = _get(sec, "initial_state", int, 0)
    if not 0 <= state < models.n:
        raise ConfigError(f"initial_state {state} outside [0, {models.n})")
    spot = {str(k): float(v) for k, v in (sec.get("spot_rates") or {}).items()}
    return models, structure, state, spot


def parse_spec(item: dict) -> InstrumentSpec:
    if not isinstance(item, dict):
        raise ConfigError(f"instrument entry must be a mapping, got {item!r}")
    strike = item.get("strike")
    if isinstance(strike, str):
        if strike.upper() != ATM:
            raise ConfigError(f"strike must be a number or ATM, got {strike!r}")
        strike = ATM
    elif strike is not None:
        strike = float(strike)
    return InstrumentSpec(
        _get(item, "kind", str),
        _get(item, "currency", str),
        _get(item, "tenor", float),
        _get(item, "expiry", float, 0.0),
        strike,
        _get(item, "delta", float, 0.25),
    )


def parse_specs(items) -> list[InstrumentSpec]:
    if items is None:
        return []
    if not isinstance(items, list):
        raise ConfigError("instruments must be a list")
    return [parse_spec(x) for x in items]


def parse_filter(sec: dict, seed: int, threads: int, spot: dict) -> FilterConfig:
    shake = ShakeConfig(**(sec.get("shake") or {}))
    opt = OptimizerConfig(**(sec.get("optimizer") or {}))
    noise = sec.get("noise")
    return FilterConfig(
        n_particles=_get(sec, "n_particles", int, 300),
        shake=shake,
        optimizer=opt,
        noise=ObservationNoise({str(k): float(v) for k, v in noise.items()}) if noise else None,
        resample_threshold=_get(sec, "resample_threshold", float, 0.5),
        master_seed=seed,
        spot_rates=spot,
        proposal=_get(sec, "proposal", str, "mle"),
        proposal_shape=_get(sec, "proposal_shape", str, "curvature"),
        threads=threads,
    )


def initial_theta(sec: dict, models, structure: str) -> ThetaVector:
    """Explicit theta list, or the model section packed and optionally perturbed."""
    theta = pack_theta(structure, models)
    init = sec.get("initial_theta")
    if init is None:
        return theta
    if isinstance(init, list):
        return theta.with_values(np.array(init, dtype=float))
    if isinstance(init, dict):
        amount = float(init.get("perturbation", 0.0))
        rng = np.random.default_rng(int(_get(init, "seed", int)))
        return theta.with_values(theta.values + amount * rng.standard_normal(len(theta)))
    raise ConfigError("initial_theta must be a list or {perturbation, seed}")


def _quotes(cfg: RunConfig, sec: dict):
    snaps = load_csv(cfg.path(_get(sec, "quotes", str)))
    if not snaps:
        raise ConfigError("quote file holds no records")
    return snaps


# -- commands -----------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    models, _, state, spot = parse_model(cfg.section("model"))
    specs = parse_specs(cfg.data.get("instruments"))
    if not specs:
        raise ConfigError("no instruments to quote")
    sec = cfg.section("simulate")
    start = _get(sec, "start_date", default=dt.date(2003, 1, 2))
    if isinstance(start, str):
        start = dt.date.fromisoformat(start)
    spreads = dict(DEFAULT_SPREADS)
    spreads.update({str(k): float(v) for k, v in (sec.get("spreads") or {}).items()})
    syn = SyntheticConfig(
        q=models.q,
        params={c: m.params for c, m in models.currencies.items()},
        initial_state=state,
        dates=business_dates(start, _get(sec, "n_dates", int)),
        specs=specs,
        noise_fraction=_get(sec, "noise_fraction", float, 0.25),
        spreads={k: spreads[k] for k in {s.kind for s in specs}},
        spot_rates=spot,
        seed=cfg.seed,
    )
    snaps, path = generate_synthetic(syn)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    quotes, hidden = cfg.out_dir / "quotes.csv", cfg.out_dir / "path.csv"
    write_csv(snaps, quotes)
    write_path_csv(path, syn.dates, hidden)
    return [quotes, hidden]


def cmd_calibrate(cfg: RunConfig) -> list[Path]:
    models, structure, _, spot = parse_model(cfg.section("model"))
    sec = cfg.section("calibrate")
    snaps = _quotes(cfg, sec)
    fcfg = parse_filter(sec, cfg.seed, cfg.threads, spot)
    theta0 = initial_theta(sec, models, structure)
    burn_in = _get(sec, "burn_in", int, 0)

    def progress(t, res):
        log.info("%s ess=%.1f %s", res.date, res.ess,
                 " ".join(f"{k}={v:.2f}" for k, v in res.errors.by_kind.items()))

    results = run_filter(snaps, theta0, fcfg, progress=progress)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    post, errs = cfg.out_dir / "posterior.csv", cfg.out_dir / "spread_errors.csv"
    write_posterior_csv(results, post)
    write_spread_error_csv(results, errs)
    for kind, v in average_spread_errors(results, min(burn_in, len(results) - 1)).items():
        log.info("average %s error after burn-in: %.3f spreads", kind, v)
    return [post, errs]


PRICE_HEADER = ("instrument", "state", "strike", "price")


def cmd_price(cfg: RunConfig) -> list[Path]:
    models, _, _, spot = parse_model(cfg.section("model"))
    specs = parse_specs(cfg.data.get("instruments"))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.out_dir / "prices.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_HEADER)
        for spec in specs:
            for state in range(models.n):
                fixed = resolve_strike(models, spec, state)
                price = price_all_states(models, fixed, spot)[state]
                strike = "" if fixed.strike is None else repr(float(fixed.strike))
                w.writerow((spec.label, state, strike, repr(float(price))))
    return [out]


def cmd_hedge(cfg: RunConfig) -> list[Path]:
    models, structure, _, spot = parse_model(cfg.section("model"))
    sec = cfg.section("hedge")
    cal = cfg.section("calibrate", required=False)
    snaps = _quotes(cfg, sec if "quotes" in sec else cal)
    fcfg = parse_filter(cal, cfg.seed, cfg.threads, spot)
    target = parse_spec(_get(sec, "target"))
    hedges = parse_specs(_get(sec, "hedges"))
    if not hedges:
        raise ConfigError("hedge.hedges is empty")
    report = hedge_backtest(snaps, target, hedges, initial_theta(cal, models, structure), fcfg,
                            mode=_get(sec, "mode", str, "known_state"),
                            burn_in=_get(sec, "burn_in", int, 0))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.out_dir / "hedge_backtest.csv"
    write_backtest_csv(report, out)
    if len(report.rows) - max(report.burn_in, 1) >= 2:
        log.info("increment correlation (target vs -hedge): %.3f", report.correlation)
    return [out]


COMMANDS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate, "price": cmd_price, "hedge": cmd_hedge}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcpotential", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run config")
        p.add_argument("--seed", type=int, help="overrides 'seed' in the config")
        p.add_argument("--out", help="output directory (default: <config dir>/out)")
        p.add_argument("--threads", type=int, help="worker threads for particle proposals")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out, args.threads)
        written = COMMANDS[args.command](cfg)
    except (ValidationError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PotentialError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
