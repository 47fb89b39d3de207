"""Likelihood, MLE search and the MLE-guided particle filter.

A particle is ``(xi, theta)``: a chain state and a log-parameter vector.
Each filter step

1. finds ``theta*`` maximising the likelihood of the day's quotes with the
   chain pinned to state 0 (labels are interchangeable, so any state can be
   moved to 0);
2. draws each particle's new theta around ``theta*``;
3. moves each particle's chain state one step under its new generator;
4. reweights by ``kappa(theta_prev, theta) f(y | x) / phi(theta - theta*)``.

The chain-transition factor is absent from the weight because states are
proposed from the dynamics themselves.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

from .chain_kernel import rng_stream, transition_matrix
from .errors import Degenerate, NonPositiveQuote, PotentialError, ValidationError
from .instruments import InstrumentSpec, PriceVector, price_spec
from .market_data import MarketSnapshot, SpreadErrorReport, spread_error, year_fraction
from .potential_model import MultiCurrencyModel, ThetaLayout, ThetaVector, model_set_from_theta, relabel_theta

LOG_2PI = math.log(2.0 * math.pi)

# Stream namespaces under the master seed.
_PARTICLE_STREAM, _MLE_STREAM, _RESAMPLE_STREAM = 0, 1, 2

# Parameter vectors that fail in any of these ways carry zero likelihood.
MODEL_FAILURES = (PotentialError, np.linalg.LinAlgError, FloatingPointError, OverflowError)


@dataclass(frozen=True)
class ObservationNoise:
    """Standard deviation of log(quote / model) per instrument kind."""

    sigma_by_kind: Mapping[str, float]

    def __post_init__(self):
        if any(not (s > 0) for s in self.sigma_by_kind.values()):
            raise ValidationError("observation sigmas must be positive")

    def sigma(self, kind: str) -> float:
        try:
            return self.sigma_by_kind[kind]
        except KeyError:
            raise ValidationError(f"no observation sigma for kind {kind!r}") from None

    @classmethod
    def from_snapshots(cls, snapshots: Sequence[MarketSnapshot]) -> ObservationNoise:
        """Half the average relative bid-ask width of each kind."""
        rel: dict[str, list[float]] = {}
        for snap in snapshots:
            for r in snap.records:
                if r.mid > 0:
                    rel.setdefault(r.spec.kind, []).append(r.spread / r.mid)
        return cls({k: 0.5 * float(np.mean(v)) for k, v in sorted(rel.items())})


@dataclass(frozen=True)
class ShakeConfig:
    """Parameter-move density, used both for the shake and the proposal.

    ``scale`` is the per-coordinate standard deviation in log space.
    """

    family: str = "gaussian"
    scale: float = 0.05
    dof: float = 5.0

    def __post_init__(self):
        if self.family not in ("gaussian", "student_t", "laplace"):
            raise ValidationError(f"unknown shake family {self.family!r}")
        if not self.scale > 0:
            raise ValidationError("shake scale must be positive")
        if self.family == "student_t" and not self.dof > 2:
            raise ValidationError("student_t shake needs dof > 2")

    def sample(self, rng: np.random.Generator, d: int) -> np.ndarray:
        if self.family == "gaussian":
            return self.scale * rng.standard_normal(d)
        if self.family == "laplace":
            return rng.laplace(0.0, self.scale / math.sqrt(2.0), d)
        c = self.scale * math.sqrt((self.dof - 2.0) / self.dof)
        z = rng.standard_normal(d)
        w = rng.chisquare(self.dof)
        return c * z / math.sqrt(w / self.dof)

    def logpdf(self, x) -> np.ndarray:
        """Log density of displacement(s) ``x`` (last axis is the coordinate)."""
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        if self.family == "gaussian":
            s = self.scale
            return -0.5 * np.sum((x / s) ** 2, axis=-1) - d * (math.log(s) + 0.5 * LOG_2PI)
        if self.family == "laplace":
            b = self.scale / math.sqrt(2.0)
            return -np.sum(np.abs(x), axis=-1) / b - d * math.log(2.0 * b)
        nu = self.dof
        c = self.scale * math.sqrt((nu - 2.0) / nu)
        quad = np.sum((x / c) ** 2, axis=-1)
        return (gammaln((nu + d) / 2.0) - gammaln(nu / 2.0) - 0.5 * d * math.log(nu * math.pi)
                - d * math.log(c) - 0.5 * (nu + d) * np.log1p(quad / nu))


@dataclass(frozen=True)
class ShapedDensity:
    """Shake family pushed through a linear map: ``x = L z / scale`` with ``z ~ shake``.

    With ``L`` the Cholesky factor of a Laplace-approximation covariance the
    proposal follows the likelihood's curvature around the MLE instead of
    spreading equally in every log-parameter.
    """

    shake: ShakeConfig
    chol: np.ndarray

    def sample(self, rng: np.random.Generator, d: int) -> np.ndarray:
        return self.chol @ self.shake.sample(rng, d) / self.shake.scale

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = solve_triangular(self.chol, np.moveaxis(x, -1, 0), lower=True)
        z = np.moveaxis(z, 0, -1) * self.shake.scale
        d = x.shape[-1]
        log_det = float(np.sum(np.log(np.diag(self.chol))))
        return self.shake.logpdf(z) + d * math.log(self.shake.scale) - log_det


def curvature_density(obs: Observation, theta_star: ThetaVector, shake: ShakeConfig,
                      bump: float = 1e-5) -> ShapedDensity | None:
    """Proposal shaped by ``(J'J + I / scale^2)^-1`` at the MLE, None if J is unavailable."""
    e = obs.residuals(theta_star)
    if e is None:
        return None
    jac = _jacobian(obs, theta_star.values, theta_star.layout, e, bump)
    prec = jac.T @ jac + np.eye(jac.shape[1]) / shake.scale**2
    try:
        cov = np.linalg.inv(prec)
        chol = np.linalg.cholesky(0.5 * (cov + cov.T))
    except np.linalg.LinAlgError:
        return None
    return ShapedDensity(shake, chol)


@dataclass(frozen=True)
class OptimizerConfig:
    max_gradient_steps: int = 40
    damping: float = 1e-3
    max_step: float = 0.5
    fd_bump: float = 1e-5
    tolerance: float = 1e-8
    initial_temperature: float = 1.0
    temperature_ratio: float = 0.8
    rungs: int = 20
    kick_scale: float = 0.1
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_gradient_steps < 0 or self.rungs < 0 or self.restarts < 1:
            raise ValidationError("optimizer counts must be nonnegative (restarts >= 1)")
        for name in ("damping", "max_step", "fd_bump", "tolerance", "initial_temperature", "kick_scale"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not 0 < self.temperature_ratio < 1:
            raise ValidationError("temperature_ratio must lie in (0, 1)")

    @property
    def temperatures(self) -> np.ndarray:
        return self.initial_temperature * self.temperature_ratio ** np.arange(self.rungs)


# -- likelihood ---------------------------------------------------------------


class Observation:
    """Log mids and noise levels of one snapshot, ready for repeated evaluation."""

    def __init__(self, snapshot: MarketSnapshot, noise: ObservationNoise,
                 spot_rates: Mapping[str, float] | None = None):
        mids = snapshot.mids
        if np.any(mids <= 0):
            bad = snapshot.records[int(np.argmax(mids <= 0))]
            raise NonPositiveQuote(f"non-positive mid for {bad.spec.label}")
        self.snapshot = snapshot
        self.specs = snapshot.specs
        self.log_mid = np.log(mids)
        self.sigma = np.array([noise.sigma(s.kind) for s in self.specs])
        self.spot_rates = dict(spot_rates or {})
        self.log_norm = float(-np.sum(np.log(self.sigma) + 0.5 * LOG_2PI))

    def prices(self, models: MultiCurrencyModel, xi: int) -> np.ndarray:
        return np.array([price_spec(models, s, xi, self.spot_rates) for s in self.specs])

    def residuals_from_prices(self, prices: np.ndarray) -> np.ndarray | None:
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            return None
        return (self.log_mid - np.log(prices)) / self.sigma

    def loglik_from_prices(self, prices: np.ndarray) -> float:
        e = self.residuals_from_prices(prices)
        return -math.inf if e is None else self.log_norm - 0.5 * float(e @ e)

    def residuals(self, theta: ThetaVector, xi: int = 0) -> np.ndarray | None:
        """Standardised log residuals, or None when theta gives no valid model."""
        try:
            with np.errstate(all="ignore"):
                models = model_set_from_theta(theta)
                return self.residuals_from_prices(self.prices(models, xi))
        except MODEL_FAILURES:
            return None

    def loglik(self, theta: ThetaVector, xi: int = 0) -> float:
        e = self.residuals(theta, xi)
        return -math.inf if e is None else self.log_norm - 0.5 * float(e @ e)


def log_likelihood(y: MarketSnapshot, xi: int, theta: ThetaVector, noise: ObservationNoise,
                   spot_rates: Mapping[str, float] | None = None) -> float:
    """Gaussian log-density of log(y) - log(eta(x)); -inf for invalid models."""
    return Observation(y, noise, spot_rates).loglik(theta, xi)


# -- MLE search ---------------------------------------------------------------


def _jacobian(obs: Observation, x: np.ndarray, layout: ThetaLayout, e0: np.ndarray,
              bump: float) -> np.ndarray:
    d = x.shape[0]
    jac = np.zeros((e0.shape[0], d))
    for k in range(d):
        up = x.copy()
        up[k] += bump
        dn = x.copy()
        dn[k] -= bump
        e_up = obs.residuals(ThetaVector(layout, up))
        e_dn = obs.residuals(ThetaVector(layout, dn))
        if e_up is not None and e_dn is not None:
            jac[:, k] = (e_up - e_dn) / (2 * bump)
        elif e_up is not None:
            jac[:, k] = (e_up - e0) / bump
        elif e_dn is not None:
            jac[:, k] = (e0 - e_dn) / bump
    return jac


def _gradient_phase(obs: Observation, x: np.ndarray, layout: ThetaLayout, cfg: OptimizerConfig,
                    history: list | None) -> tuple[np.ndarray, float]:
    """Damped Gauss-Newton ascent on the log-likelihood.

    The step solves ``(J'J + lam D) dx = -J'e``; large ``lam`` turns it into a
    short steepest-ascent step.  Only improving steps are accepted.
    """
    e = obs.residuals(ThetaVector(layout, x))
    if e is None:
        return x, -math.inf
    ll = obs.log_norm - 0.5 * float(e @ e)
    lam = cfg.damping
    for _ in range(cfg.max_gradient_steps):
        jac = _jacobian(obs, x, layout, e, cfg.fd_bump)
        grad = jac.T @ e
        hess = jac.T @ jac
        diag = np.diag(hess).copy()
        diag += 1e-9 * max(float(diag.max()), 1.0)
        accepted = False
        for _ in range(12):
            step = -np.linalg.solve(hess + lam * np.diag(diag), grad)
            biggest = np.abs(step).max()
            if biggest > cfg.max_step:
                step *= cfg.max_step / biggest
            cand = x + step
            e_c = obs.residuals(ThetaVector(layout, cand))
            ll_c = -math.inf if e_c is None else obs.log_norm - 0.5 * float(e_c @ e_c)
            if ll_c > ll:
                gain = ll_c - ll
                x, e, ll = cand, e_c, ll_c
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if history is not None:
                    history.append(("gradient", ll))
                break
            lam *= 4.0
        if not accepted or gain < cfg.tolerance:
            break
    return x, ll


def mle_search(y: MarketSnapshot | Observation, theta_init: ThetaVector, cfg: OptimizerConfig,
               noise: ObservationNoise | None = None, spot_rates: Mapping[str, float] | None = None,
               history: list | None = None) -> ThetaVector:
    """Maximise the likelihood of ``y`` over theta with the chain in state 0.

    Alternates a gradient phase with a simulated-annealing ladder of Laplace
    kicks under a Metropolis rule, then polishes the best point found.  Never
    returns a point worse than ``theta_init``.  ``history`` (if given)
    collects ``(phase, loglik)`` for every accepted move.
    """
    obs = y if isinstance(y, Observation) else Observation(y, noise, spot_rates)
    layout = theta_init.layout
    rng = rng_stream(cfg.seed, _MLE_STREAM)
    best_x = theta_init.values.copy()
    best_ll = obs.loglik(theta_init)
    if history is not None:
        history.append(("init", best_ll))
    x = best_x
    for _ in range(cfg.restarts):
        x, ll = _gradient_phase(obs, x, layout, cfg, history)
        if ll > best_ll:
            best_x, best_ll = x, ll
        cur_x, cur_ll = x, ll
        improved = False
        for temp in cfg.temperatures:
            cand = cur_x + rng.laplace(0.0, cfg.kick_scale, cur_x.shape[0])
            ll_c = obs.loglik(ThetaVector(layout, cand))
            u = rng.random()
            if ll_c >= cur_ll or (math.isfinite(ll_c) and u < math.exp((ll_c - cur_ll) / temp)):
                cur_x, cur_ll = cand, ll_c
                if history is not None:
                    history.append(("anneal", ll_c))
                if ll_c > best_ll:
                    best_x, best_ll, improved = cand, ll_c, True
        if improved:
            x, ll = _gradient_phase(obs, best_x, layout, cfg, history)
            if ll > best_ll:
                best_x, best_ll = x, ll
        x = best_x
    return ThetaVector(layout, best_x)


# -- particles ----------------------------------------------------------------


@dataclass(frozen=True)
class Particle:
    xi: int
    theta: ThetaVector
    log_weight: float


@dataclass(eq=False)
class ParticleCloud:
    """Weighted particles; ``log_weights`` are normalised (logsumexp = 0).

    ``models`` holds each particle's model set (None when invalid) and
    ``eta`` its prices for the specs of the last assimilated snapshot.
    """

    layout: ThetaLayout
    xi: np.ndarray
    thetas: np.ndarray
    log_weights: np.ndarray
    master_seed: int
    step: int = 0
    models: list | None = field(default=None, repr=False)
    eta: np.ndarray | None = field(default=None, repr=False)
    theta_star: ThetaVector | None = None

    def __post_init__(self):
        n_p = self.xi.shape[0]
        if n_p < 1 or self.thetas.shape != (n_p, self.layout.size) or self.log_weights.shape != (n_p,):
            raise ValidationError("inconsistent particle arrays")
        if not np.any(np.isfinite(self.log_weights)):
            raise Degenerate("no particle has positive weight")
        self._built = np.full(n_p, self.models is not None)
        if self.models is None:
            self.models = [None] * n_p

    def __len__(self):
        return self.xi.shape[0]

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    @property
    def particles(self) -> list[Particle]:
        return [Particle(int(x), ThetaVector(self.layout, t), float(lw))
                for x, t, lw in zip(self.xi, self.thetas, self.log_weights)]

    def theta(self, i: int) -> ThetaVector:
        return ThetaVector(self.layout, self.thetas[i])

    def model_set(self, i: int) -> MultiCurrencyModel | None:
        """Particle ``i``'s model set (built on first use), None if invalid."""
        if not self._built[i]:
            try:
                with np.errstate(all="ignore"):
                    self.models[i] = model_set_from_theta(self.theta(i))
            except MODEL_FAILURES:
                self.models[i] = None
            self._built[i] = True
        return self.models[i]

    def best(self) -> int:
        return int(np.argmax(self.log_weights))


def _normalize(log_w: np.ndarray) -> np.ndarray:
    finite = np.isfinite(log_w)
    if not finite.any():
        raise Degenerate("all particle weights are zero")
    out = np.full_like(log_w, -np.inf)
    out[finite] = log_w[finite] - logsumexp(log_w[finite])
    return out


def initial_cloud(theta: ThetaVector, n_particles: int, master_seed: int, xi: int = 0) -> ParticleCloud:
    """All particles at ``theta`` in state ``xi`` with equal weight."""
    if n_particles < 1:
        raise ValidationError("need at least one particle")
    return ParticleCloud(
        theta.layout,
        np.full(n_particles, int(xi)),
        np.tile(theta.values, (n_particles, 1)),
        np.full(n_particles, -math.log(n_particles)),
        int(master_seed),
    )


@dataclass
class _Proposal:
    thetas: np.ndarray
    xi: np.ndarray
    loglik: np.ndarray
    models: list
    eta: np.ndarray


def _propose_one(cloud: ParticleCloud, i: int, center: np.ndarray, obs: Observation,
                 dt_years: float, density, step: int):
    rng = rng_stream(cloud.master_seed, _PARTICLE_STREAM, step, i)
    theta = center + density.sample(rng, center.shape[0])
    u = rng.random()
    xi = int(cloud.xi[i])
    nan_eta = np.full(len(obs.specs), np.nan)
    if not math.isfinite(cloud.log_weights[i]):
        return theta, xi, -math.inf, None, nan_eta
    try:
        with np.errstate(all="ignore"):
            models = model_set_from_theta(ThetaVector(cloud.layout, theta))
            row = transition_matrix(models.q, dt_years)[xi]
            xi = min(int(np.searchsorted(np.cumsum(row), u, side="right")), models.n - 1)
            eta = obs.prices(models, xi)
    except MODEL_FAILURES:
        return theta, int(cloud.xi[i]), -math.inf, None, nan_eta
    return theta, xi, obs.loglik_from_prices(eta), models, eta


def _propose(cloud: ParticleCloud, centers: np.ndarray, obs: Observation, dt_years: float,
             density, step: int, threads: int) -> _Proposal:
    idx = range(len(cloud))
    work = lambda i: _propose_one(cloud, i, centers[i], obs, dt_years, density, step)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(work, idx))
    else:
        out = [work(i) for i in idx]
    thetas = np.array([o[0] for o in out])
    xi = np.array([o[1] for o in out], dtype=int)
    ll = np.array([o[2] for o in out])
    return _Proposal(thetas, xi, ll, [o[3] for o in out], np.array([o[4] for o in out]))


def _warm_start(cloud: ParticleCloud, obs: Observation) -> ThetaVector:
    """Best particle's theta under the relabeling that best fits state 0."""
    best = cloud.theta(cloud.best())
    candidates = [relabel_theta(best, k) for k in range(cloud.layout.n)]
    scores = [obs.loglik(c) for c in candidates]
    return candidates[int(np.argmax(scores))]


PROPOSALS = ("mle", "bootstrap")
PROPOSAL_SHAPES = ("isotropic", "curvature")


def pf_step(cloud: ParticleCloud, y_t: MarketSnapshot, dt_years: float, shake: ShakeConfig,
            noise: ObservationNoise, cfg: OptimizerConfig,
            spot_rates: Mapping[str, float] | None = None, proposal: str = "mle",
            threads: int = 1, shape: str = "isotropic") -> ParticleCloud:
    """Assimilate one snapshot.

    ``proposal="mle"`` centres new parameters on the day's MLE; with
    ``proposal="bootstrap"`` each particle's proposal is centred on its own
    theta, so the shake and proposal densities coincide and cancel.
    ``shape="curvature"`` draws MLE-centred proposals from the shake family
    mapped through the local likelihood curvature (see ``curvature_density``).
    """
    if not dt_years > 0:
        raise ValidationError("dt must be positive")
    if proposal not in PROPOSALS:
        raise ValidationError(f"unknown proposal {proposal!r}")
    if shape not in PROPOSAL_SHAPES:
        raise ValidationError(f"unknown proposal shape {shape!r}")
    obs = Observation(y_t, noise, spot_rates)
    step = cloud.step + 1
    density = shake
    if proposal == "mle":
        start = _warm_start(cloud, obs)
        theta_star = mle_search(obs, start, replace(cfg, seed=_mle_seed(cloud.master_seed, step)))
        centers = np.tile(theta_star.values, (len(cloud), 1))
        if shape == "curvature":
            density = curvature_density(obs, theta_star, shake, cfg.fd_bump) or shake
    else:
        theta_star = None
        centers = cloud.thetas
    prop = _propose(cloud, centers, obs, dt_years, density, step, threads)
    with np.errstate(invalid="ignore"):
        correction = shake.logpdf(prop.thetas - cloud.thetas) - density.logpdf(prop.thetas - centers)
        log_w = cloud.log_weights + correction + prop.loglik
    log_w[~np.isfinite(log_w)] = -np.inf
    return ParticleCloud(cloud.layout, prop.xi, prop.thetas, _normalize(log_w), cloud.master_seed,
                         step, prop.models, prop.eta, theta_star)


def bootstrap_step(cloud: ParticleCloud, y_t: MarketSnapshot, dt_years: float, shake: ShakeConfig,
                   noise: ObservationNoise, spot_rates: Mapping[str, float] | None = None,
                   threads: int = 1) -> ParticleCloud:
    """Plain bootstrap filter step: shake each particle, then ``w <- w f(y|x)``."""
    obs = Observation(y_t, noise, spot_rates)
    step = cloud.step + 1
    prop = _propose(cloud, cloud.thetas, obs, dt_years, shake, step, threads)
    log_w = cloud.log_weights + prop.loglik
    log_w[~np.isfinite(log_w)] = -np.inf
    return ParticleCloud(cloud.layout, prop.xi, prop.thetas, _normalize(log_w), cloud.master_seed,
                         step, prop.models, prop.eta, None)


def _mle_seed(master_seed: int, step: int) -> int:
    return int(rng_stream(master_seed, _MLE_STREAM, step).integers(2**63))


def effective_sample_size(cloud: ParticleCloud) -> float:
    w = cloud.weights
    return float(1.0 / np.sum(w * w))


def systematic_ancestors(weights: np.ndarray, u: float) -> np.ndarray:
    n = weights.shape[0]
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    points = (u + np.arange(n)) / n
    return np.minimum(np.searchsorted(cdf, points, side="right"), n - 1)


def systematic_resample(cloud: ParticleCloud, seed: int) -> ParticleCloud:
    """Systematic resampling with one uniform offset; weights become uniform."""
    anc = systematic_ancestors(cloud.weights, rng_stream(seed).random())
    n = len(cloud)
    models = [cloud.models[a] for a in anc] if cloud.models is not None else None
    eta = cloud.eta[anc] if cloud.eta is not None else None
    return ParticleCloud(cloud.layout, cloud.xi[anc].copy(), cloud.thetas[anc].copy(),
                         np.full(n, -math.log(n)), cloud.master_seed, cloud.step, models, eta,
                         cloud.theta_star)


# -- posterior prices -----------------------------------------------------------

ACTIVE_WEIGHT = 1e-14


def active_particles(cloud: ParticleCloud) -> np.ndarray:
    """Indices of particles whose weight can move a posterior average."""
    w = cloud.weights
    return np.flatnonzero(w > ACTIVE_WEIGHT)


def weighted_quantiles(values: np.ndarray, weights: np.ndarray, probs) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    cw /= cw[-1]
    idx = np.searchsorted(cw, np.asarray(probs) - 1e-12, side="left")
    return v[np.minimum(idx, v.shape[0] - 1)]


def particle_prices(cloud: ParticleCloud, spec: InstrumentSpec,
                    spot_rates: Mapping[str, float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Prices of ``spec`` for the active particles, and their renormalised weights."""
    idx = active_particles(cloud)
    prices = []
    keep = []
    for i in idx:
        models = cloud.model_set(i)
        if models is None:
            continue
        prices.append(price_spec(models, spec, int(cloud.xi[i]), spot_rates))
        keep.append(i)
    w = cloud.weights[keep]
    return np.array(prices), w / w.sum()


def model_price(cloud: ParticleCloud, spec: InstrumentSpec, spot_rates: Mapping[str, float] | None = None,
                quantiles=(0.05, 0.95)) -> tuple[float, tuple[float, float]]:
    """Posterior-mean price and weighted quantile interval."""
    prices, w = particle_prices(cloud, spec, spot_rates)
    lo, hi = weighted_quantiles(prices, w, quantiles)
    return float(w @ prices), (float(lo), float(hi))


# -- filter driver ------------------------------------------------------------


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 300
    shake: ShakeConfig = ShakeConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    noise: ObservationNoise | None = None
    resample_threshold: float = 0.5
    master_seed: int = 0
    spot_rates: Mapping[str, float] = field(default_factory=dict)
    quantiles: tuple[float, float] = (0.05, 0.95)
    proposal: str = "mle"
    proposal_shape: str = "curvature"
    threads: int = 1
    first_dt: float = 1.0 / 252

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValidationError("the filter needs at least two particles")
        if not 0 < self.resample_threshold <= 1:
            raise ValidationError("resample_threshold must lie in (0, 1]")
        if self.proposal not in PROPOSALS or self.proposal_shape not in PROPOSAL_SHAPES:
            raise ValidationError(f"unknown proposal {self.proposal!r}/{self.proposal_shape!r}")


@dataclass(frozen=True)
class PosteriorRow:
    date: dt.date
    spec: InstrumentSpec
    mean: float
    q_lo: float
    q_hi: float
    bid: float
    ask: float


@dataclass
class DateResult:
    date: dt.date
    ess: float
    resampled: bool
    rows: list[PosteriorRow]
    errors: SpreadErrorReport
    theta_star: ThetaVector | None


def summarize(cloud: ParticleCloud, snapshot: MarketSnapshot, quantiles=(0.05, 0.95)) -> list[PosteriorRow]:
    """Posterior mean and interval for every instrument of the assimilated snapshot."""
    w = cloud.weights
    ok = np.all(np.isfinite(cloud.eta), axis=1) & (w > ACTIVE_WEIGHT)
    wk = w[ok] / w[ok].sum()
    rows = []
    for k, rec in enumerate(snapshot.records):
        vals = cloud.eta[ok, k]
        lo, hi = weighted_quantiles(vals, wk, quantiles)
        rows.append(PosteriorRow(snapshot.date, rec.spec, float(wk @ vals), float(lo), float(hi),
                                 rec.bid, rec.ask))
    return rows


def run_filter(snapshots: Sequence[MarketSnapshot], theta_init: ThetaVector, cfg: FilterConfig,
               on_date: Callable[[int, ParticleCloud, MarketSnapshot], None] | None = None,
               progress: Callable[[int, DateResult], None] | None = None) -> list[DateResult]:
    """Run the filter over date-ordered snapshots.

    ``on_date`` sees each freshly weighted cloud before any resampling.
    """
    noise = cfg.noise or ObservationNoise.from_snapshots(snapshots)
    cloud = initial_cloud(theta_init, cfg.n_particles, cfg.master_seed)
    results = []
    prev = None
    for t, snap in enumerate(snapshots):
        dt_years = cfg.first_dt if prev is None else year_fraction(prev.date, snap.date)
        cloud = pf_step(cloud, snap, dt_years, cfg.shake, noise, cfg.optimizer, cfg.spot_rates,
                        cfg.proposal, cfg.threads, cfg.proposal_shape)
        rows = summarize(cloud, snap, cfg.quantiles)
        errors = spread_error(PriceVector(snap.specs, np.array([r.mean for r in rows])), snap)
        if on_date is not None:
            on_date(t, cloud, snap)
        ess = effective_sample_size(cloud)
        resampled = ess < cfg.resample_threshold * len(cloud)
        if resampled:
            seed = int(rng_stream(cfg.master_seed, _RESAMPLE_STREAM, cloud.step).integers(2**63))
            cloud = systematic_resample(cloud, seed)
        res = DateResult(snap.date, ess, resampled, rows, errors, cloud.theta_star)
        results.append(res)
        if progress is not None:
            progress(t, res)
        prev = snap
    return results


POSTERIOR_HEADER = ("date", "instrument", "mean", "q05", "q95", "bid", "ask")


def write_posterior_csv(results: Sequence[DateResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSTERIOR_HEADER)
        for res in results:
            for r in res.rows:
                w.writerow((r.date.isoformat(), r.spec.label, repr(r.mean), repr(r.q_lo),
                            repr(r.q_hi), repr(r.bid), repr(r.ask)))


def write_spread_error_csv(results: Sequence[DateResult], path) -> None:
    """Per-date, per-kind average absolute error in spreads."""
    kinds = sorted({k for res in results for k in res.errors.by_kind})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date",) + tuple(kinds))
        for res in results:
            w.writerow((res.date.isoformat(),)
                       + tuple(repr(res.errors.by_kind[k]) if k in res.errors.by_kind else "" for k in kinds))


def average_spread_errors(results: Sequence[DateResult], burn_in: int = 0) -> dict[str, float]:
    kept = results[burn_in:]
    kinds = sorted({k for res in kept for k in res.errors.by_kind})
    return {k: float(np.mean([res.errors.by_kind[k] for res in kept if k in res.errors.by_kind]))
            for k in kinds}
