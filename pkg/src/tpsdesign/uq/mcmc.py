"""Random-walk Metropolis-Hastings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError

__all__ = ["Chain", "mh_sample", "accept_move"]


@dataclass
class Chain:
    samples: np.ndarray
    log_posterior: np.ndarray
    temperatures: np.ndarray
    acceptance_rate: float
    proposal_std: np.ndarray
    seed: object
    burn_in: int
    tuning: list = field(default_factory=list)  # (step, window acceptance, scale)

    def __len__(self):
        return len(self.samples)


def accept_move(delta_logp, u):
    """Metropolis rule: accept when ``log u < delta`` (always for ``delta >= 0``)."""
    delta_logp = np.asarray(delta_logp, dtype=float)
    with np.errstate(invalid="ignore"):
        return (delta_logp >= 0) | (np.log(u) < delta_logp)


def _evaluator_fn(target):
    """Adapt a target to ``q -> (log density, temperature)``.

    A :class:`PosteriorEvaluator` contributes its predicted temperature; a
    bare callable returning the log density gets ``nan`` temperatures.
    """
    if hasattr(target, "evaluate"):
        def fn(q):
            lp, ll, temp = target.evaluate(q)
            return float(lp[0] + ll[0]), float(temp[0])
        return fn
    return lambda q: (float(target(q)), float("nan"))


def mh_sample(target, init, proposal_std, n_samples, burn_in=0, seed=0, tune=True,
              tune_every=500, accept_window=(0.2, 0.5)) -> Chain:
    """Random-walk Metropolis-Hastings with independent Gaussian proposals.

    During burn-in, every ``tune_every`` steps all proposal scales are
    doubled (window acceptance above ``accept_window[1]``) or halved (below
    ``accept_window[0]``).  Tuning stops when burn-in ends, so the retained
    samples come from a fixed kernel.

    Parameters
    ----------
    target : PosteriorEvaluator or callable
        Unnormalized log density of one sample.
    init : array_like
        Starting point; its log density must be finite.
    proposal_std : array_like
        Per-coordinate proposal standard deviation (> 0).
    n_samples, burn_in : int
        Retained and discarded iterations.
    seed : int or numpy SeedSequence

    Returns
    -------
    Chain
    """
    x = np.array(init, dtype=float).ravel()
    scale = np.broadcast_to(np.asarray(proposal_std, dtype=float), x.shape).copy()
    if np.any(~np.isfinite(scale)) or np.any(scale <= 0):
        raise InvalidInputError("proposal_std must be positive")
    if n_samples < 1 or burn_in < 0:
        raise InvalidInputError("n_samples must be >= 1 and burn_in >= 0")
    fn = _evaluator_fn(target)
    logp, temp = fn(x)
    if not np.isfinite(logp):
        raise InvalidInputError("initial point has zero posterior density")

    rng = np.random.default_rng(seed)
    d = x.size
    total = burn_in + n_samples
    noise = rng.standard_normal((total, d))
    uniforms = rng.random(total)
    samples = np.empty((n_samples, d))
    logps = np.empty(n_samples)
    temps = np.empty(n_samples)
    accepted = 0
    window = 0
    tuning = []
    for i in range(total):
        proposal = x + scale * noise[i]
        lp_new, t_new = fn(proposal)
        if np.isfinite(lp_new) and accept_move(lp_new - logp, uniforms[i]):
            x, logp, temp = proposal, lp_new, t_new
            if i >= burn_in:
                accepted += 1
            else:
                window += 1
        if i < burn_in and tune and (i + 1) % tune_every == 0:
            rate = window / tune_every
            if rate < accept_window[0]:
                scale *= 0.5
            elif rate > accept_window[1]:
                scale *= 2.0
            tuning.append((i + 1, rate, scale.tolist()))
            window = 0
        if i >= burn_in:
            j = i - burn_in
            samples[j] = x
            logps[j] = logp
            temps[j] = temp
    return Chain(
        samples=samples,
        log_posterior=logps,
        temperatures=temps,
        acceptance_rate=accepted / n_samples,
        proposal_std=scale,
        seed=seed,
        burn_in=burn_in,
        tuning=tuning,
    )
