"""Likelihood-tempered sequential Monte Carlo.

Every stage evaluates the whole particle population in one batched call to
the forward model, which is what makes the surrogate pay off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegeneracyError, InvalidInputError
from .mcmc import accept_move

__all__ = ["ParticleEnsemble", "effective_sample_size", "systematic_resample", "smc_sample"]


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise InvalidInputError("ESS of an empty weight vector is undefined")
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights, seed=None, rng=None) -> np.ndarray:
    """Indices from one uniform offset and ``N`` evenly spaced positions."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    if n < 1:
        raise InvalidInputError("need at least one weight")
    rng = rng if rng is not None else np.random.default_rng(seed)
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(w)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right").clip(max=n - 1)


def _normalize_log_weights(logw):
    m = np.max(logw)
    w = np.exp(logw - m)
    return w / w.sum()


@dataclass
class ParticleEnsemble:
    particles: np.ndarray
    weights: np.ndarray
    beta: float
    log_likelihood: np.ndarray
    temperatures: np.ndarray
    betas: list = field(default_factory=list)
    ess_history: list = field(default_factory=list)
    acceptance_history: list = field(default_factory=list)
    resample_count: int = 0
    model_calls: int = 0

    def mean(self):
        return self.weights @ self.particles

    def std(self):
        centred = self.particles - self.mean()
        return np.sqrt(self.weights @ (centred * centred))


def _next_beta(beta, loglik, target_ess):
    """Largest step in beta whose incremental weights keep ESS >= target."""
    def ess(b):
        return effective_sample_size(_normalize_log_weights((b - beta) * loglik))

    if ess(1.0) >= target_ess:
        return 1.0
    lo, hi = beta, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if ess(mid) >= target_ess:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    # lo keeps ESS >= target; guarantee progress
    return max(lo, beta + 1e-12)


def smc_sample(evaluator, n_particles=1000, ess_threshold_fraction=0.5, move_steps=3, seed=0,
               max_stages=500) -> ParticleEnsemble:
    """Temper from the prior (beta = 0) to the posterior (beta = 1).

    At each stage beta is raised by bisection so the incremental weights
    have ESS close to ``ess_threshold_fraction * n_particles``; particles
    are then resampled systematically and moved by ``move_steps`` batched
    Metropolis steps on the tempered posterior, with a Gaussian proposal
    whose covariance is ``2.38**2 / d`` times the weighted particle
    covariance.
    """
    if n_particles < 10:
        raise InvalidInputError("n_particles must be >= 10")
    if not 0 < ess_threshold_fraction < 1:
        raise InvalidInputError("ess_threshold_fraction must lie in (0, 1)")
    if move_steps < 0:
        raise InvalidInputError("move_steps must be >= 0")
    rng = np.random.default_rng(seed)
    prior = evaluator.prior
    n = n_particles
    x = prior.sample(n, rng)
    lp, ll, temps = evaluator.evaluate(x)
    calls = 1
    d = x.shape[1]
    ens = ParticleEnsemble(x, np.full(n, 1.0 / n), 0.0, ll, temps, betas=[0.0])
    target_ess = ess_threshold_fraction * n

    for stage in range(max_stages):
        beta = ens.beta
        new_beta = _next_beta(beta, ll, target_ess)
        w = _normalize_log_weights(np.log(ens.weights) + (new_beta - beta) * ll)
        ens.ess_history.append(effective_sample_size(w))
        ens.betas.append(new_beta)
        ens.beta = new_beta

        cov = np.atleast_2d(np.cov(x, rowvar=False, aweights=w, bias=True)) * (2.38**2 / d)
        try:
            chol = np.linalg.cholesky(cov + 1e-10 * np.diag(np.diag(cov)))
        except np.linalg.LinAlgError:
            raise DegeneracyError(
                f"weighted particle covariance is singular at stage {stage} (beta={new_beta:.4g}, "
                f"pre-resample ESS={ens.ess_history[-1]:.1f})"
            ) from None

        idx = systematic_resample(w, rng=rng)
        x, lp, ll, temps = x[idx], lp[idx], ll[idx], temps[idx]
        ens.resample_count += 1

        accepted = 0
        for _ in range(move_steps):
            prop = x + rng.standard_normal((n, d)) @ chol.T
            lp_p, ll_p, t_p = evaluator.evaluate(prop)
            calls += 1
            with np.errstate(invalid="ignore"):
                delta = (lp_p + new_beta * ll_p) - (lp + new_beta * ll)
            delta = np.where(np.isfinite(lp_p), delta, -np.inf)
            acc = accept_move(delta, rng.random(n))
            x = np.where(acc[:, None], prop, x)
            lp = np.where(acc, lp_p, lp)
            ll = np.where(acc, ll_p, ll)
            temps = np.where(acc, t_p, temps)
            accepted += int(acc.sum())
        ens.acceptance_history.append(accepted / max(1, n * move_steps))

        if len(np.unique(x, axis=0)) == 1:
            raise DegeneracyError(
                f"ensemble collapsed at stage {stage} (beta={new_beta:.4g}, "
                f"pre-resample ESS={ens.ess_history[-1]:.1f})"
            )
        ens.particles, ens.log_likelihood, ens.temperatures = x, ll, temps
        ens.weights = np.full(n, 1.0 / n)
        if new_beta >= 1.0:
            break
    else:
        raise DegeneracyError(f"tempering did not reach beta = 1 in {max_stages} stages")
    ens.model_calls = calls
    return ens
