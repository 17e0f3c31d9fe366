"""Run configuration: strict JSON ingestion with defaults and validation."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    ConfigError,
    ConfigNotFoundError,
    ConfigSyntaxError,
    InvalidInputError,
    TPSError,
    UnknownKeyError,
)
from .surrogate import NetworkArchitecture, NormalizationSpec
from .thermal import GridSpec, ThermalScenario
from .training import LossWeights, TrainingConfig
from .uq.posterior import PARAM_NAMES, PriorSpec, make_likelihood

__all__ = ["DEFAULTS", "RunConfig", "load_config", "config_from_dict"]

DEFAULTS = {
    "scenario": {
        "thickness": 0.05,
        "heat_flux": 40000.0,
        "t_end": 200.0,
        "initial_temp": 25.0,
        "threshold": 450.0,
        "t_eval": 150.0,
    },
    "grid": {"nx": 201, "dt": 0.05},
    "prior": {
        "rho": {"mean": 200.0, "std": 20.0, "lower": 140.0, "upper": 260.0},
        "k": {"mean": 1.0, "std": 0.1, "lower": 0.7, "upper": 1.3},
        "cp": {"mean": 800.0, "std": 80.0, "lower": 560.0, "upper": 1040.0},
    },
    "likelihood": {"sigma": 10.0, "reliability": 0.95},
    "network": {"hidden": [32, 32, 32], "t_scale": 2000.0},
    "training": {
        "iterations": 2000,
        "learning_rate": 1e-3,
        "lr_decay": 0.5,
        "lr_decay_every": 5000,
        "n_interior": 1000,
        "n_boundary": 200,
        "resample_every": 1000,
        "time_power": 1.5,
        "surface_power": 3.0,
        "lbfgs_rounds": 12,
        "lbfgs_iterations": 3500,
        "lbfgs_history": 50,
        "history_every": 100,
        "weights": {"w_pde": 1.0, "w_ic": 10.0, "w_bc0": 10.0, "w_bcL": 10.0},
    },
    "sampler": {
        "method": "mh",
        "n_samples": 20000,
        "burn_in": 5000,
        "proposal_scale": 0.5,
        "flat_prior": False,
        "n_particles": 1000,
        "ess_fraction": 0.5,
        "move_steps": 3,
        "max_fd": 200,
    },
    "seed": 0,
}

_pos = (lambda v: v > 0, "must be positive")
_nonneg = (lambda v: v >= 0, "must be non-negative")
_finite = (lambda v: True, "")
_prob = (lambda v: 0 < v < 1, "must lie in (0, 1)")
_count = (lambda v: v >= 1, "must be >= 1")

# leaf type and range rules; anything not listed is checked by the domain constructors
RULES = {
    "scenario.thickness": (float, _pos),
    "scenario.heat_flux": (float, _nonneg),
    "scenario.t_end": (float, _pos),
    "scenario.initial_temp": (float, _finite),
    "scenario.threshold": (float, _finite),
    "scenario.t_eval": (float, _pos),
    "grid.nx": (int, (lambda v: v >= 3, "must be >= 3")),
    "grid.dt": (float, _pos),
    "likelihood.sigma": (float, _pos),
    "likelihood.reliability": (float, _prob),
    "network.hidden": (list, (lambda v: len(v) > 0 and all(isinstance(w, int) and not isinstance(w, bool)
                                                          and w >= 1 for w in v), "must be a non-empty list of integers >= 1")),
    "network.t_scale": (float, _pos),
    "training.iterations": (int, _nonneg),
    "training.learning_rate": (float, _pos),
    "training.lr_decay": (float, (lambda v: 0 < v <= 1, "must lie in (0, 1]")),
    "training.lr_decay_every": (int, _count),
    "training.n_interior": (int, _count),
    "training.n_boundary": (int, _count),
    "training.resample_every": (int, _count),
    "training.time_power": (float, (lambda v: v >= 1, "must be >= 1")),
    "training.surface_power": (float, (lambda v: v >= 1, "must be >= 1")),
    "training.lbfgs_rounds": (int, _nonneg),
    "training.lbfgs_iterations": (int, _nonneg),
    "training.lbfgs_history": (int, _count),
    "training.history_every": (int, _count),
    "sampler.method": (str, (lambda v: v in ("mh", "smc"), "must be 'mh' or 'smc'")),
    "sampler.n_samples": (int, _count),
    "sampler.burn_in": (int, _nonneg),
    "sampler.proposal_scale": (float, _pos),
    "sampler.flat_prior": (bool, _finite),
    "sampler.n_particles": (int, (lambda v: v >= 10, "must be >= 10")),
    "sampler.ess_fraction": (float, _prob),
    "sampler.move_steps": (int, _nonneg),
    "sampler.max_fd": (int, _count),
    "seed": (int, _nonneg),
}
for _w in DEFAULTS["training"]["weights"]:
    RULES[f"training.weights.{_w}"] = (float, _nonneg)
for _p in PARAM_NAMES:
    for _f in ("mean", "lower", "upper"):
        RULES[f"prior.{_p}.{_f}"] = (float, _pos)
    RULES[f"prior.{_p}.std"] = (float, _pos)


def _check_leaf(path, value):
    kind, (pred, message) = RULES[path]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError("must be finite", path)
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
    elif not isinstance(value, kind):
        raise ConfigError(f"expected {kind.__name__}, got {value!r}", path)
    if not pred(value):
        raise ConfigError(message, path)
    return value


def _merge(defaults, given, prefix=""):
    if not isinstance(given, dict):
        raise ConfigError("expected an object", prefix.rstrip(".") or "<root>")
    out = {}
    for key in given:
        if key not in defaults:
            raise UnknownKeyError("unknown key", prefix + key)
    for key, default in defaults.items():
        path = prefix + key
        if isinstance(default, dict):
            out[key] = _merge(default, given.get(key, {}), path + ".")
        else:
            out[key] = _check_leaf(path, given[key]) if key in given else copy.deepcopy(default)
    return out


@dataclass
class RunConfig:
    """Validated configuration; ``data`` is the fully populated document."""

    data: dict

    def scenario(self) -> ThermalScenario:
        return ThermalScenario(**self.data["scenario"])

    def grid(self) -> GridSpec:
        return GridSpec(**self.data["grid"])

    def prior(self) -> PriorSpec:
        p = self.data["prior"]
        return PriorSpec(
            mean=tuple(p[n]["mean"] for n in PARAM_NAMES),
            std=tuple(p[n]["std"] for n in PARAM_NAMES),
            lower=tuple(p[n]["lower"] for n in PARAM_NAMES),
            upper=tuple(p[n]["upper"] for n in PARAM_NAMES),
        )

    def likelihood(self):
        lk = self.data["likelihood"]
        return make_likelihood(self.data["scenario"]["threshold"], lk["sigma"], lk["reliability"])

    def architecture(self) -> NetworkArchitecture:
        return NetworkArchitecture(hidden=tuple(self.data["network"]["hidden"]))

    def normalization(self) -> NormalizationSpec:
        prior = self.prior()
        return NormalizationSpec.for_scenario(self.scenario(), prior.lower, prior.upper,
                                              t_scale=self.data["network"]["t_scale"])

    def training(self) -> TrainingConfig:
        t = {k: v for k, v in self.data["training"].items() if k != "weights"}
        return TrainingConfig(**t, seed=self.data["seed"])

    def weights(self) -> LossWeights:
        return LossWeights(**self.data["training"]["weights"])

    @property
    def sampler(self) -> dict:
        return self.data["sampler"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def with_seed(self, seed) -> "RunConfig":
        data = copy.deepcopy(self.data)
        data["seed"] = _check_leaf("seed", seed)
        return RunConfig(data)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def hash(self) -> str:
        canonical = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def validate(self):
        """Build every domain object so cross-field invariants are checked."""
        checks = [
            ("scenario", self.scenario),
            ("grid", self.grid),
            ("prior", self.prior),
            ("likelihood", self.likelihood),
            ("network", self.architecture),
            ("network", self.normalization),
            ("training", self.training),
            ("training.weights", self.weights),
        ]
        for section, build in checks:
            try:
                build()
            except ConfigError:
                raise
            except InvalidInputError as exc:
                raise ConfigError(str(exc), section) from exc
        try:
            self.grid().n_steps(self.scenario().t_end)
        except InvalidInputError as exc:
            raise ConfigError(str(exc), "grid.dt") from exc
        return self


def config_from_dict(doc) -> RunConfig:
    return RunConfig(_merge(DEFAULTS, doc)).validate()


def load_config(path=None) -> RunConfig:
    """Parse and validate a JSON config file; ``None`` gives the defaults."""
    if path is None:
        return config_from_dict({})
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ConfigNotFoundError(f"config file not found: {path}") from exc
    except OSError as exc:
        err = TPSError(f"cannot read config {path}: {exc}")
        err.exit_code = 2
        raise err from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(doc)
