"""Prior, reliability-shifted likelihood and unnormalized posterior."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..surrogate import predict_batch
from ..thermal import GridSpec, MaterialProperties, ThermalScenario, interface_series, solve_fd

__all__ = [
    "normal_cdf",
    "z_quantile",
    "PriorSpec",
    "LikelihoodSpec",
    "make_likelihood",
    "log_prior",
    "log_likelihood",
    "log_posterior",
    "PosteriorEvaluator",
    "SurrogateModel",
    "FDModel",
    "PARAM_NAMES",
]

PARAM_NAMES = ("rho", "k", "cp")


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def z_quantile(p: float) -> float:
    """Standard normal quantile: the ``z`` with ``Phi(z) = p``.

    Newton iterations on the erf-based CDF, safeguarded by a bisection
    bracket so every iterate stays finite.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise InvalidInputError(f"probability must lie in (0, 1), got {p}")
    lo, hi = -40.0, 40.0
    z = 0.0
    for _ in range(200):
        err = normal_cdf(z) - p
        if abs(err) < 1e-15:
            break
        if err > 0:
            hi = z
        else:
            lo = z
        pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        step = z - err / pdf if pdf > 0 else 0.5 * (lo + hi)
        z = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo < 1e-15 * max(1.0, abs(z)):
            break
    return z


@dataclass(frozen=True)
class PriorSpec:
    """Independent truncated normals on ``(rho, k, cp)``.

    The default truncation is mean +/- 3 std, which also serves as the
    surrogate's training box.
    """

    mean: tuple = (200.0, 1.0, 800.0)
    std: tuple = (20.0, 0.1, 80.0)
    lower: tuple = (140.0, 0.7, 560.0)
    upper: tuple = (260.0, 1.3, 1040.0)

    def __post_init__(self):
        for name in ("mean", "std", "lower", "upper"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3 or not all(math.isfinite(v) for v in value):
                raise InvalidInputError(f"prior {name} needs three finite values")
            object.__setattr__(self, name, value)
        for i, pname in enumerate(PARAM_NAMES):
            if self.std[i] <= 0:
                raise InvalidInputError(f"prior std of {pname} must be positive")
            if not 0 < self.lower[i] < self.mean[i] < self.upper[i]:
                raise InvalidInputError(f"prior of {pname} needs 0 < lower < mean < upper")

    @classmethod
    def from_moments(cls, mean, std, n_std=3.0):
        mean = np.asarray(mean, dtype=float)
        std = np.asarray(std, dtype=float)
        lower = np.maximum(mean - n_std * std, 1e-3 * mean)
        return cls(tuple(mean), tuple(std), tuple(lower), tuple(mean + n_std * std))

    def contains(self, q):
        q = np.atleast_2d(q)
        return np.all((q >= np.array(self.lower)) & (q <= np.array(self.upper)), axis=1)

    def sample(self, n, rng):
        """Rejection sampling from the truncated prior."""
        mean, std = np.array(self.mean), np.array(self.std)
        out = np.empty((0, 3))
        while len(out) < n:
            draw = rng.normal(mean, std, size=(max(2 * (n - len(out)), 16), 3))
            out = np.vstack([out, draw[self.contains(draw)]])
        return out[:n]


@dataclass(frozen=True)
class LikelihoodSpec:
    threshold: float
    sigma: float
    reliability: float
    mu: float


def make_likelihood(threshold=450.0, sigma=10.0, reliability=0.95) -> LikelihoodSpec:
    """Normal likelihood centred ``z(R) sigma`` below the threshold."""
    if not (math.isfinite(sigma) and sigma > 0):
        raise InvalidInputError(f"likelihood sigma must be positive, got {sigma}")
    if not 0 < reliability < 1:
        raise InvalidInputError(f"reliability target must lie in (0, 1), got {reliability}")
    if not math.isfinite(threshold):
        raise InvalidInputError("threshold must be finite")
    mu = threshold - z_quantile(reliability) * sigma
    return LikelihoodSpec(float(threshold), float(sigma), float(reliability), float(mu))


def log_prior(q, prior: PriorSpec):
    """Unnormalized log prior; ``-inf`` outside the truncation box.

    Accepts one sample ``(3,)`` (returns a float) or rows ``(n, 3)``.
    """
    arr = np.asarray(q, dtype=float)
    rows = np.atleast_2d(arr)
    z = (rows - np.array(prior.mean)) / np.array(prior.std)
    out = -0.5 * np.sum(z * z, axis=1)
    out = np.where(prior.contains(rows), out, -np.inf)
    return float(out[0]) if arr.ndim == 1 else out


def _loglik_from_temp(temp, lik: LikelihoodSpec):
    d = (np.asarray(temp, dtype=float) - lik.mu) / lik.sigma
    return -0.5 * d * d


def log_likelihood(q, model, lik: LikelihoodSpec):
    """``-(T_pred - mu)^2 / (2 sigma^2)`` with ``T_pred`` the interface temperature at ``t_eval``."""
    arr = np.asarray(q, dtype=float)
    temps = np.asarray(model(np.atleast_2d(arr)), dtype=float)
    out = _loglik_from_temp(temps, lik)
    return float(out[0]) if arr.ndim == 1 else out


class SurrogateModel:
    """Interface temperature at ``t_eval`` from the trained surrogate.

    Calls with ``n`` rows of ``(rho, k, cp)`` issue one batched network
    evaluation (optionally split into ``threads`` contiguous shards that are
    reassembled in order).
    """

    name = "surrogate"

    def __init__(self, params, norm, scenario: ThermalScenario, threads: int = 1):
        self.params = params
        self.norm = norm
        self.scenario = scenario
        self.threads = max(1, int(threads))
        self.calls = 0

    def points(self, q):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        n = len(q)
        return np.column_stack([np.zeros(n), np.full(n, self.scenario.t_eval), q])

    def __call__(self, q):
        self.calls += 1
        pts = self.points(q)
        if self.threads == 1 or len(pts) < 2 * self.threads:
            return predict_batch(self.params, self.norm, pts)
        shards = np.array_split(pts, self.threads)
        with ThreadPoolExecutor(self.threads) as pool:
            parts = list(pool.map(lambda s: predict_batch(self.params, self.norm, s), shards))
        return np.concatenate(parts)


class FDModel:
    """Interface temperature at ``t_eval`` from the finite-difference solver."""

    name = "fd"

    def __init__(self, scenario: ThermalScenario, grid: GridSpec = GridSpec()):
        self.scenario = scenario
        self.grid = grid
        self.calls = 0

    def __call__(self, q):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        self.calls += 1
        return np.array([
            interface_series(solve_fd(self.scenario, MaterialProperties(*row), self.grid)).at_eval
            for row in q
        ])


class PosteriorEvaluator:
    """Unnormalized log posterior ``log prior + log likelihood``.

    ``flat_prior`` drops the normal prior factor (uniform on the truncation
    box); ``flat_likelihood`` drops the likelihood so the posterior equals the
    prior.  The forward model is only called for in-box samples.
    """

    def __init__(self, model, prior: PriorSpec, likelihood: LikelihoodSpec,
                 flat_prior=False, flat_likelihood=False):
        self.model = model
        self.prior = prior
        self.likelihood = likelihood
        self.flat_prior = flat_prior
        self.flat_likelihood = flat_likelihood

    def log_prior(self, q):
        lp = log_prior(q, self.prior)
        if self.flat_prior:
            lp = np.where(np.isfinite(lp), 0.0, -np.inf)
            return float(lp) if np.ndim(q) == 1 else lp
        return lp

    def evaluate(self, q):
        """Rows ``q`` -> ``(log_prior, log_likelihood, temperature)`` arrays.

        Out-of-box rows get ``-inf`` / ``nan`` and are never passed to the model.
        """
        q = np.atleast_2d(np.asarray(q, dtype=float))
        lp = np.atleast_1d(self.log_prior(q))
        ll = np.full(len(q), -np.inf)
        temps = np.full(len(q), np.nan)
        ok = np.isfinite(lp)
        if ok.any():
            temps[ok] = self.model(q[ok])
            ll[ok] = 0.0 if self.flat_likelihood else _loglik_from_temp(temps[ok], self.likelihood)
        return lp, ll, temps

    def log_posterior(self, q):
        arr = np.asarray(q, dtype=float)
        lp, ll, _ = self.evaluate(arr)
        out = lp + ll
        return float(out[0]) if arr.ndim == 1 else out


def log_posterior(q, evaluator: PosteriorEvaluator):
    return evaluator.log_posterior(q)
