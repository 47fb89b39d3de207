"""Markov-chain potential models: closed-form pricing, particle-filter calibration, jump hedging."""

from .calibration import FilterConfig, ObservationNoise, OptimizerConfig, ShakeConfig, mle_search, pf_step, run_filter
from .chain_kernel import IntensityMatrix, circular_nn_generator, matrix_exp, transition_matrix, validate_intensity
from .errors import PotentialError, ValidationError
from .hedging import HedgePortfolio, hedge_backtest, jump_deltas, particle_hedge, solve_hedge_all_states, solve_hedge_known_state
from .instruments import InstrumentSpec, cap_price, fx_forward, libor, price_instruments, swap_rate, swaption_price
from .market_data import MarketSnapshot, QuoteRecord, generate_synthetic, load_csv, spread_error
from .oracle import mc_price_terminal
from .potential_model import CurrencyParams, PotentialModel, build_model, build_model_set, pack_theta, unpack_theta, zcb

__version__ = "0.1.0"
