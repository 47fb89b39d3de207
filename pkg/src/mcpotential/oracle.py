"""Monte-Carlo pricing oracle, independent of the propagator algebra.

Paths are simulated event by event and the discount integral of alpha is
accumulated exactly over holding intervals, so the only error left is
sampling error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain_kernel import rng_stream, simulate_observed
from .errors import ValidationError
from .potential_model import PotentialModel


@dataclass(frozen=True)
class McEstimate:
    mean: float
    standard_error: float
    n_paths: int

    def z_score(self, reference: float) -> float:
        if self.standard_error == 0:
            return 0.0 if self.mean == reference else float("inf")
        return (self.mean - reference) / self.standard_error


def estimate(samples: np.ndarray) -> McEstimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    if n >= 1 and np.ptp(samples) == 0:
        return McEstimate(float(samples[0]), 0.0, n)
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return McEstimate(float(samples.mean()), se, n)


def simulate_deflators(model: PotentialModel, times, start_state: int, n_paths: int, seed: int):
    """Per-path states and deflators ``zeta_t / zeta_0`` at each observation time.

    Returns ``(states, deflators)`` shaped ``(n_paths, len(times))``.
    """
    if not 0 <= start_state < model.n:
        raise ValidationError(f"start state {start_state} outside [0, {model.n})")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    order = np.argsort(times, kind="stable")
    states, integrals = simulate_observed(model.q, start_state, times[order], n_paths,
                                          rng_stream(seed), alpha=model.alpha)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    states, integrals = states[:, inverse], integrals[:, inverse]
    deflators = model.f[states] / model.f[start_state] * np.exp(-integrals)
    return states, deflators


def mc_price_terminal(model: PotentialModel, tau: float, payoff, start_state: int,
                      n_paths: int, seed: int) -> McEstimate:
    """Monte-Carlo value of a claim paying ``payoff[X_tau]`` at ``tau``."""
    if n_paths < 100:
        raise ValidationError("use at least 100 paths")
    h = np.asarray(payoff, dtype=float)
    if not np.any(h):
        return McEstimate(0.0, 0.0, n_paths)
    states, deflators = simulate_deflators(model, [tau], start_state, n_paths, seed)
    return estimate(deflators[:, 0] * h[states[:, 0]])
