"""Finite-state chain substrate: generators, matrix exponentials, path simulation.

Everything here is a pure function of its inputs.  Random draws come from
:func:`rng_stream`, which derives an independent generator from a master seed
and an integer key, so per-particle and per-path streams never depend on the
order in which work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeRate, NonFinite, RowSumViolation, ValidationError

ROW_SUM_TOL = 1e-12
CLAMP_TOL = 1e-13


def rng_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(master_seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class IntensityMatrix:
    """Validated generator of a continuous-time chain (rates per year)."""

    q: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.q)

    def __eq__(self, other):
        if not isinstance(other, IntensityMatrix):
            return NotImplemented
        return self.q.shape == other.q.shape and bool(np.array_equal(self.q, other.q))

    def __hash__(self):
        return hash(self.q.tobytes())

    def __repr__(self):
        return f"IntensityMatrix(n={self.n})"


@dataclass(frozen=True)
class ChainPath:
    initial_state: int
    jump_times: tuple[float, ...]
    jump_states: tuple[int, ...]
    horizon: float

    def state_at(self, t: float) -> int:
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.initial_state if k == 0 else self.jump_states[k - 1]

    def occupation_times(self, n: int) -> np.ndarray:
        """Time spent in each of ``n`` states over ``[0, horizon]``."""
        occ = np.zeros(n)
        times = (0.0,) + self.jump_times + (self.horizon,)
        states = (self.initial_state,) + self.jump_states
        for s, a, b in zip(states, times[:-1], times[1:]):
            occ[s] += b - a
        return occ


def validate_intensity(q) -> IntensityMatrix:
    q = np.array(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
        raise ValidationError(f"intensity matrix must be square, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise NonFinite("intensity matrix contains NaN or inf")
    off = q - np.diag(np.diag(q))
    if np.any(off < 0):
        i, j = np.argwhere(off < 0)[0]
        raise NegativeRate(f"q[{i}][{j}] = {q[i, j]} < 0")
    sums = q.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums) > ROW_SUM_TOL)
    if bad.size:
        raise RowSumViolation(f"row {bad[0]} sums to {sums[bad[0]]}")
    q.setflags(write=False)
    return IntensityMatrix(q)


def circular_nn_generator(clockwise, counter) -> IntensityMatrix:
    """Nearest-neighbour generator on a ring of ``n`` states.

    ``clockwise[i]`` is the rate i -> i+1 and ``counter[i]`` the rate i -> i-1
    (indices mod n).  On a 2-cycle both neighbours are the same state, so the
    two rates add: ``q[0][1] = clockwise[0] + counter[0]``.
    """
    cw = np.asarray(clockwise, dtype=float)
    ccw = np.asarray(counter, dtype=float)
    n = cw.shape[0]
    if n < 2 or ccw.shape != (n,):
        raise ValidationError("need two rate vectors of equal length n >= 2")
    if not (np.all(np.isfinite(cw)) and np.all(np.isfinite(ccw))):
        raise NonFinite("ring rates must be finite")
    if np.any(cw < 0) or np.any(ccw < 0):
        raise NegativeRate("ring rates must be nonnegative")
    q = np.zeros((n, n))
    idx = np.arange(n)
    np.add.at(q, (idx, (idx + 1) % n), cw)
    np.add.at(q, (idx, (idx - 1) % n), ccw)
    q[idx, idx] = -q.sum(axis=1)
    return validate_intensity(q)


# Pade coefficients and 1-norm thresholds (Higham 2005).
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_uv(a: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    b = _PADE[m]
    ident = np.eye(a.shape[0])
    a2 = a @ a
    if m == 13:
        a4 = a2 @ a2
        a6 = a4 @ a2
        u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
                 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
        v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
             + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
        return u, v
    powers = [ident, a2]
    for _ in range((m - 1) // 2 - 1):
        powers.append(powers[-1] @ a2)
    u_inner = sum(b[2 * k + 1] * powers[k] for k in range(len(powers)))
    v = sum(b[2 * k] * powers[k] for k in range(len(powers)))
    return a @ u_inner, v


def matrix_exp(m, t: float = 1.0) -> np.ndarray:
    """``exp(m * t)`` by scaling and squaring with a diagonal Pade approximant."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("matrix_exp needs a square matrix")
    if not math.isfinite(t) or not np.all(np.isfinite(a)):
        raise NonFinite("matrix_exp input contains NaN or inf")
    n = a.shape[0]
    if t == 0.0 or n == 0:
        return np.eye(n)
    a = a * t
    if n == 1:
        return np.exp(a)
    norm = np.abs(a).sum(axis=0).max()
    for deg in (3, 5, 7, 9):
        if norm <= _THETA[deg]:
            u, v = _pade_uv(a, deg)
            return np.linalg.solve(v - u, v + u)
    s = max(0, int(math.ceil(math.log2(norm / _THETA[13]))))
    a = a / 2.0**s
    u, v = _pade_uv(a, 13)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


def transition_matrix(q: IntensityMatrix, dt: float) -> np.ndarray:
    """Row-stochastic ``exp(q dt)`` with round-off negatives clamped to zero."""
    if dt < 0:
        raise ValidationError(f"dt must be >= 0, got {dt}")
    p = matrix_exp(q.q, dt)
    tiny = (p < 0) & (p > -CLAMP_TOL)
    if tiny.any():
        p[tiny] = 0.0
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=1, keepdims=True)


def _draw_next(q: np.ndarray, state: int, u: float) -> int:
    row = q[state].copy()
    row[state] = 0.0
    cdf = np.cumsum(row / row.sum())
    return min(int(np.searchsorted(cdf, u, side="right")), len(row) - 1)


def simulate_path(q: IntensityMatrix, i0: int, horizon: float, seed: int) -> ChainPath:
    """Exact event-driven simulation of the chain on ``[0, horizon]``."""
    if not 0 <= i0 < q.n:
        raise ValidationError(f"initial state {i0} outside [0, {q.n})")
    if horizon < 0:
        raise ValidationError("horizon must be >= 0")
    rng = rng_stream(seed)
    rates = q.exit_rates
    t, s = 0.0, int(i0)
    times: list[float] = []
    states: list[int] = []
    while rates[s] > 0:
        t += rng.exponential(1.0 / rates[s])
        if t > horizon:
            break
        s = _draw_next(q.q, s, rng.random())
        times.append(t)
        states.append(s)
    return ChainPath(int(i0), tuple(times), tuple(states), float(horizon))


def simulate_observed(q: IntensityMatrix, i0: int, times, n_paths: int,
                      rng: np.random.Generator, alpha=None):
    """Vectorised simulation of many paths observed at sorted ``times``.

    Returns ``(states, integrals)``, both shaped ``(n_paths, len(times))``;
    ``integrals[:, k]`` is the exact value of the integral of ``alpha(X_s)``
    over ``[0, times[k]]`` (zero when ``alpha`` is None).
    """
    times = np.asarray(times, dtype=float)
    k_obs = times.shape[0]
    if np.any(np.diff(times) < 0) or (k_obs and times[0] < 0):
        raise ValidationError("observation times must be sorted and nonnegative")
    alpha = np.zeros(q.n) if alpha is None else np.asarray(alpha, dtype=float)
    rates = q.exit_rates
    off = q.q - np.diag(np.diag(q.q))
    with np.errstate(divide="ignore", invalid="ignore"):
        jump_cdf = np.cumsum(off / off.sum(axis=1, keepdims=True), axis=1)

    t = np.zeros(n_paths)
    s = np.full(n_paths, int(i0))
    integral = np.zeros(n_paths)
    nxt = np.zeros(n_paths, dtype=int)
    out_s = np.empty((n_paths, k_obs), dtype=int)
    out_i = np.empty((n_paths, k_obs))
    active = np.flatnonzero(nxt < k_obs)
    while active.size:
        r = rates[s[active]]
        with np.errstate(divide="ignore"):
            hold = np.where(r > 0, rng.exponential(1.0, active.size) / r, np.inf)
        u = rng.random(active.size)
        end = t[active] + hold
        while True:
            k = nxt[active]
            pending = k < k_obs
            hit = np.zeros(active.size, dtype=bool)
            hit[pending] = times[k[pending]] < end[pending]
            if not hit.any():
                break
            rows = active[hit]
            kk = k[hit]
            out_s[rows, kk] = s[rows]
            out_i[rows, kk] = integral[rows] + alpha[s[rows]] * (times[kk] - t[rows])
            nxt[rows] += 1
        finite = np.isfinite(hold)
        move = active[finite]
        integral[move] += alpha[s[move]] * hold[finite]
        t[move] = end[finite]
        cdf = jump_cdf[s[move]]
        new = (cdf <= u[finite, None]).sum(axis=1)
        s[move] = np.minimum(new, q.n - 1)
        active = np.flatnonzero(nxt < k_obs)
    return out_s, out_i


def stationary_distribution(q: IntensityMatrix) -> np.ndarray:
    n = q.n
    a = np.vstack([q.q.T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    return pi
