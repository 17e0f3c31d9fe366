"""Physics-informed training and validation of the surrogate."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import autodiff as ad
from .errors import ConfigError, InvalidInputError, NonFiniteError
from .surrogate import (
    NetworkArchitecture,
    NetworkParameters,
    NormalizationSpec,
    init_params,
    network_field,
    predict_batch,
)
from .thermal import GridSpec, MaterialProperties, ThermalScenario, solve_fd

log = logging.getLogger(__name__)

__all__ = [
    "LossWeights",
    "CollocationSet",
    "TrainingConfig",
    "TrainingReport",
    "Adam",
    "sample_collocation",
    "loss_components",
    "loss_and_grad",
    "train",
    "ValidationReport",
    "validate_against_fd",
]

COMPONENTS = ("pde", "ic", "bc0", "bcL")


@dataclass(frozen=True)
class LossWeights:
    w_pde: float = 1.0
    w_ic: float = 10.0
    w_bc0: float = 10.0
    w_bcL: float = 10.0

    def __post_init__(self):
        values = self.as_tuple()
        if any(not np.isfinite(w) or w < 0 for w in values):
            raise InvalidInputError("loss weights must be finite and non-negative")
        if not any(w > 0 for w in values):
            raise InvalidInputError("at least one loss weight must be positive")

    def as_tuple(self):
        return (self.w_pde, self.w_ic, self.w_bc0, self.w_bcL)


@dataclass
class CollocationSet:
    """Rows ``(x, t, rho, k, cp)`` for each residual category."""

    interior: np.ndarray
    initial: np.ndarray
    interface: np.ndarray
    surface: np.ndarray

    def counts(self):
        return {name: len(getattr(self, name)) for name in ("interior", "initial", "interface", "surface")}


def sample_collocation(norm: NormalizationSpec, n_interior, n_boundary, rng, time_power=1.0,
                       surface_power=1.0) -> CollocationSet:
    """Random draws over the normalization box; boundary sets pin ``t`` or ``x``.

    Times are drawn as ``t_end * u**time_power`` with ``u`` uniform, so
    ``time_power > 1`` crowds points toward the start of heating, where the
    suddenly applied flux makes the field steepest.  Initial-condition
    positions are drawn as ``L * (1 - u**surface_power)``, crowding them
    toward the heated face where the initial and flux conditions meet.
    Powers of ``1`` give uniform draws.
    """
    if not (time_power >= 1 and surface_power >= 1):
        raise InvalidInputError("time_power and surface_power must be >= 1")
    lo, hi = norm.lo, np.array(norm.upper)

    def draw(n):
        u = rng.random((n, 5))
        u[:, 1] **= time_power
        return lo + (hi - lo) * u

    initial = draw(n_boundary)
    initial[:, 0] = hi[0] * (1.0 - rng.random(n_boundary) ** surface_power)
    initial[:, 1] = 0.0
    interface = draw(n_boundary)
    interface[:, 0] = 0.0
    surface = draw(n_boundary)
    surface[:, 0] = hi[0]
    return CollocationSet(draw(n_interior), initial, interface, surface)


def _columns(points):
    return [points[:, j:j + 1] for j in range(5)]


def loss_components(field, norm: NormalizationSpec, colloc: CollocationSet, scenario: ThermalScenario,
                    needed=COMPONENTS):
    """Dimensionless mean-square residuals of ``field`` on the collocation set.

    ``field(x, t, rho, k, cp)`` returns Celsius and may be traced.  Only the
    categories listed in ``needed`` are evaluated.
    """
    ts = norm.t_scale
    out = {}
    if "pde" in needed:
        x, t, rho, k, cp = _columns(colloc.interior)
        derivs = ad.eval_with_input_derivs(field, x, t, rho, k, cp)
        alpha = k / (rho * cp)
        r = (derivs.dt - alpha * derivs.dxx) * (scenario.t_end / ts)
        out["pde"] = ad.mean(ad.square(r))
    if "ic" in needed:
        cols = _columns(colloc.initial)
        out["ic"] = ad.mean(ad.square((field(*cols) - scenario.initial_temp) * (1.0 / ts)))
    if "bc0" in needed:
        x, t, rho, k, cp = _columns(colloc.interface)
        d = field(ad.DualNumber.seed(x, second_order=False), t, rho, k, cp).d1
        out["bc0"] = ad.mean(ad.square(d * (scenario.thickness / ts)))
    if "bcL" in needed:
        x, t, rho, k, cp = _columns(colloc.surface)
        d = field(ad.DualNumber.seed(x, second_order=False), t, rho, k, cp).d1
        q = scenario.heat_flux
        out["bcL"] = ad.mean(ad.square((d * k - q) * (1.0 / q)))
    return out


def _needed(weights: LossWeights, scenario):
    names = [n for n, w in zip(COMPONENTS, weights.as_tuple()) if w > 0]
    if "bcL" in names and scenario.heat_flux == 0:
        raise ConfigError("surface-flux loss term is undefined for zero heat flux", "training.weights.w_bcL")
    return names


def _weighted(components, weights):
    total = 0.0
    for name, w in zip(COMPONENTS, weights.as_tuple()):
        if name in components:
            total = components[name] * w + total
    return total


def loss_and_grad(params, norm, weights: LossWeights, colloc: CollocationSet, scenario: ThermalScenario,
                  return_components=False):
    """Weighted physics loss and its gradient with respect to the flat parameters.

    ``params`` is a :class:`NetworkParameters` or a flat vector.
    """
    arch = params.architecture if isinstance(params, NetworkParameters) else None
    theta = params.flat if isinstance(params, NetworkParameters) else np.asarray(params, dtype=float)
    if arch is None:
        raise InvalidInputError("pass NetworkParameters so the architecture is known")
    needed = _needed(weights, scenario)
    parts = {}

    def objective(th):
        comps = loss_components(network_field(th, arch, norm), norm, colloc, scenario, needed)
        parts.update(comps)
        return _weighted(comps, weights), comps

    loss, grad = ad.grad_params(objective, theta)
    if return_components:
        return loss, grad, {k: float(np.asarray(v.value)) for k, v in parts.items()}
    return loss, grad


class Adam:
    """Adam update on a flat parameter vector."""

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.step_count = 0

    def step(self, theta, grad, lr):
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.step_count)
        v_hat = self.v / (1 - self.beta2**self.step_count)
        return theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer schedule.

    An Adam phase (step-decayed learning rate, collocation redrawn every
    ``resample_every`` steps) is followed by ``lbfgs_rounds`` rounds of
    L-BFGS, each on a freshly drawn collocation set.
    """

    iterations: int = 2000
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 5000
    n_interior: int = 1000
    n_boundary: int = 200
    resample_every: int = 1000
    time_power: float = 1.5
    surface_power: float = 3.0
    lbfgs_rounds: int = 12
    lbfgs_iterations: int = 3500
    lbfgs_history: int = 50
    seed: int = 0
    history_every: int = 100

    def __post_init__(self):
        if self.iterations < 0 or self.lbfgs_rounds < 0 or self.lbfgs_iterations < 0:
            raise InvalidInputError("iteration counts must be non-negative")
        if self.iterations + self.lbfgs_rounds * self.lbfgs_iterations <= 0:
            raise InvalidInputError("iterations must be > 0")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning rate must be positive")
        if self.n_interior < 1 or self.n_boundary < 1:
            raise InvalidInputError("collocation counts must be >= 1")
        if self.resample_every < 1 or self.lr_decay_every < 1 or self.history_every < 1:
            raise InvalidInputError("schedule periods must be >= 1")
        if not (self.time_power >= 1 and self.surface_power >= 1):
            raise InvalidInputError("time_power and surface_power must be >= 1")
        if not 0 < self.lr_decay <= 1:
            raise InvalidInputError("lr_decay must lie in (0, 1]")

    def learning_rate_at(self, step):
        return self.learning_rate * self.lr_decay ** (step // self.lr_decay_every)


@dataclass
class TrainingReport:
    history: list = field(default_factory=list)  # {"step", "phase", "loss", "pde", ...}
    final_loss: float = float("nan")
    final_components: dict = field(default_factory=dict)
    wall_time: float = 0.0
    seed: int = 0
    steps: int = 0

    def to_dict(self):
        return asdict(self)


def _record(report, step, phase, loss, comps):
    report.history.append({"step": step, "phase": phase, "loss": loss, **comps})


def train(arch: NetworkArchitecture, norm: NormalizationSpec, weights: LossWeights, config: TrainingConfig,
          scenario: ThermalScenario, init=None, progress=None):
    """Fit the surrogate to the heat equation, initial and boundary conditions.

    Deterministic given ``config.seed``.  ``progress`` (optional) is called
    with each history entry.

    Returns
    -------
    params : NetworkParameters
    report : TrainingReport
    """
    _needed(weights, scenario)
    seeds = np.random.SeedSequence(config.seed)
    init_seed, colloc_seed = seeds.spawn(2)
    params = init if init is not None else init_params(arch, np.random.default_rng(init_seed))
    theta = params.flat.copy()
    rng = np.random.default_rng(colloc_seed)
    report = TrainingReport(seed=config.seed)
    start = time.perf_counter()

    def evaluate(th, colloc, step):
        try:
            return loss_and_grad(NetworkParameters(arch, th), norm, weights, colloc, scenario, return_components=True)
        except NonFiniteError as exc:
            raise NonFiniteError(f"training aborted at step {step}: {exc}", exc.terms) from exc

    def log_entry(step, phase, loss, comps):
        _record(report, step, phase, loss, comps)
        if progress is not None:
            progress(report.history[-1])
        log.info("step %d (%s): loss %.3e %s", step, phase, loss, comps)

    adam = Adam(theta.size)
    colloc = None
    step = 0
    loss, comps = float("nan"), {}
    for step in range(config.iterations):
        if step % config.resample_every == 0:
            colloc = sample_collocation(norm, config.n_interior, config.n_boundary, rng, config.time_power,
                                         config.surface_power)
        loss, grad, comps = evaluate(theta, colloc, step)
        if step % config.history_every == 0:
            log_entry(step, "adam", loss, comps)
        theta = adam.step(theta, grad, config.learning_rate_at(step))
    step = config.iterations

    for rnd in range(config.lbfgs_rounds):
        colloc = sample_collocation(norm, config.n_interior, config.n_boundary, rng, config.time_power,
                                         config.surface_power)
        counter = {"n": 0}

        def fun(th, colloc=colloc):
            nonlocal loss, comps
            loss, grad, comps = evaluate(th, colloc, step + counter["n"])
            if counter["n"] % config.history_every == 0:
                log_entry(step + counter["n"], f"lbfgs{rnd}", loss, comps)
            counter["n"] += 1
            return loss, grad

        result = minimize(
            fun, theta, jac=True, method="L-BFGS-B",
            options={"maxiter": config.lbfgs_iterations, "maxfun": int(1.25 * config.lbfgs_iterations) + 10,
                     "maxcor": config.lbfgs_history, "ftol": 0.0, "gtol": 0.0},
        )
        theta = result.x
        step += counter["n"]

    params = NetworkParameters(arch, theta)
    params.check_finite()
    loss, _, comps = evaluate(theta, colloc, step)
    log_entry(step, "final", loss, comps)
    report.final_loss = loss
    report.final_components = comps
    report.steps = step
    report.wall_time = time.perf_counter() - start
    return params, report


@dataclass
class ValidationReport:
    """Surrogate versus finite-difference errors (Kelvin).

    ``max_domain_error[i]`` is the largest error over the space-time probe
    lattice for sample ``i``; ``poi_error[i]`` is the error at the interface
    at ``t_eval``.
    """

    samples: list
    max_domain_error: list
    poi_error: list
    clamped: list
    probe_shape: tuple

    @property
    def worst_domain_error(self):
        return max(self.max_domain_error)

    @property
    def worst_poi_error(self):
        return max(self.poi_error)

    def to_dict(self):
        return {
            "samples": [[q.rho, q.k, q.cp] for q in self.samples],
            "max_domain_error": self.max_domain_error,
            "poi_error": self.poi_error,
            "clamped": self.clamped,
            "probe_shape": list(self.probe_shape),
            "worst_domain_error": self.worst_domain_error,
            "worst_poi_error": self.worst_poi_error,
        }


def validate_against_fd(params: NetworkParameters, norm: NormalizationSpec, scenario: ThermalScenario,
                        prop_samples, grid: GridSpec = GridSpec(), n_probe: int = 51) -> ValidationReport:
    """Compare the surrogate with :func:`solve_fd` on an ``n_probe x n_probe`` lattice."""
    prop_samples = list(prop_samples)
    xs = np.linspace(0.0, scenario.thickness, n_probe)
    ts = np.linspace(0.0, scenario.t_end, n_probe)
    xx, tt = np.meshgrid(xs, ts, indexing="ij")
    report = ValidationReport(prop_samples, [], [], [], (n_probe, n_probe))
    for q in prop_samples:
        fd = solve_fd(scenario, q, grid)
        steps = np.array([fd.step_index(t) for t in ts])
        reference = np.stack([np.interp(xs, fd.x, fd.values[:, n]) for n in steps], axis=1)
        points = np.column_stack([xx.ravel(), tt.ravel(), np.tile([q.rho, q.k, q.cp], (xx.size, 1))])
        _, clamped = norm.clamp(points)
        with np.errstate(all="ignore"):
            pred = predict_batch(params, norm, points).reshape(xx.shape)
        poi = predict_batch(params, norm, [[0.0, scenario.t_eval, q.rho, q.k, q.cp]])[0]
        poi_ref = fd.values[0, fd.step_index(scenario.t_eval)]
        report.max_domain_error.append(float(np.max(np.abs(pred - reference))))
        report.poi_error.append(float(abs(poi - poi_ref)))
        report.clamped.append(bool(clamped.any()))
    return report
