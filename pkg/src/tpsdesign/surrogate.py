"""Parametric physics-informed surrogate ``T(x, t, rho, k, cp)``.

The network is a tanh multilayer perceptron on inputs mapped affinely to
``[-1, 1]``; its scalar output is mapped back to degrees Celsius through
``T = T0 + T_scale * out``.  Parameters live in one flat vector (layer
order; each layer stores its weight matrix row-major followed by its bias)
so the optimizer and the model file see the same layout.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError, NonFiniteError
from .thermal import MaterialProperties, ThermalScenario

__all__ = [
    "NetworkArchitecture",
    "NormalizationSpec",
    "NetworkParameters",
    "ClampWarning",
    "init_params",
    "network_field",
    "forward",
    "predict_batch",
    "pde_residual",
    "save_model",
    "load_model",
    "default_model_path",
    "MODEL_FORMAT_VERSION",
]

MODEL_FORMAT_VERSION = 1
INPUT_NAMES = ("x", "t", "rho", "k", "cp")


class ClampWarning(RuntimeWarning):
    """Raised (as a warning) when a query lies outside the normalization box."""


@dataclass(frozen=True)
class NetworkArchitecture:
    hidden: tuple = (64, 64, 64, 64)
    input_dim: int = 5
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if not self.hidden or any(w < 1 for w in self.hidden):
            raise InvalidInputError("hidden widths must all be >= 1")
        if self.input_dim != 5 or self.output_dim != 1:
            raise InvalidInputError("the surrogate maps (x, t, rho, k, cp) to one temperature")
        if self.activation != "tanh":
            raise InvalidInputError(f"unsupported activation {self.activation!r}")

    @property
    def layer_shapes(self):
        sizes = (self.input_dim, *self.hidden, self.output_dim)
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def to_dict(self):
        return {"hidden": list(self.hidden), "input_dim": self.input_dim,
                "output_dim": self.output_dim, "activation": self.activation}


@dataclass(frozen=True)
class NormalizationSpec:
    """Affine maps of the five inputs onto ``[-1, 1]`` and of the output to Celsius."""

    lower: tuple
    upper: tuple
    initial_temp: float = 25.0
    t_scale: float = 2000.0

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != 5 or len(hi) != 5:
            raise InvalidInputError("normalization needs bounds for x, t, rho, k, cp")
        for name, a, b in zip(INPUT_NAMES, lo, hi):
            if not (np.isfinite(a) and np.isfinite(b) and b > a):
                raise InvalidInputError(f"normalization range for {name} must have positive width")
        if not self.t_scale > 0:
            raise InvalidInputError("t_scale must be positive")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def for_scenario(cls, scenario: ThermalScenario, prop_lower, prop_upper, t_scale=2000.0):
        return cls(
            lower=(0.0, 0.0, *prop_lower),
            upper=(scenario.thickness, scenario.t_end, *prop_upper),
            initial_temp=scenario.initial_temp,
            t_scale=t_scale,
        )

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def width(self) -> np.ndarray:
        return np.array(self.upper) - np.array(self.lower)

    def normalize(self, points):
        points = np.asarray(points, dtype=float)
        return (points - self.lo) * (2.0 / self.width) - 1.0

    def denormalize(self, z):
        z = np.asarray(z, dtype=float)
        return self.lo + (z + 1.0) * (0.5 * self.width)

    def contains(self, points, rtol=1e-12):
        points = np.atleast_2d(points)
        slack = rtol * np.maximum(np.abs(self.lo), np.abs(np.array(self.upper)))
        return np.all((points >= self.lo - slack) & (points <= np.array(self.upper) + slack), axis=1)

    def clamp(self, points):
        """Clip points to the box; returns the clipped copy and a per-row flag."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.contains(points)
        return np.clip(points, self.lo, np.array(self.upper)), ~inside

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper),
                "initial_temp": self.initial_temp, "t_scale": self.t_scale}


@dataclass
class NetworkParameters:
    architecture: NetworkArchitecture
    flat: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=float)
        if self.flat.shape != (self.architecture.n_params,):
            raise InvalidInputError(
                f"expected {self.architecture.n_params} parameters, got {self.flat.shape}"
            )

    def check_finite(self):
        if not np.all(np.isfinite(self.flat)):
            raise NonFiniteError("network parameters contain non-finite entries", ["parameters"])

    def layers(self):
        """List of ``(W, b)`` views into the flat vector."""
        return _split(self.flat, self.architecture)


def _split(theta, arch):
    out = []
    pos = 0
    for n_in, n_out in arch.layer_shapes:
        w = theta[pos:pos + n_in * n_out].reshape(n_in, n_out)
        pos += n_in * n_out
        b = theta[pos:pos + n_out].reshape(1, n_out)
        pos += n_out
        out.append((w, b))
    return out


def init_params(arch: NetworkArchitecture, seed=0) -> NetworkParameters:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    chunks = []
    for n_in, n_out in arch.layer_shapes:
        limit = np.sqrt(6.0 / (n_in + n_out))
        chunks.append(rng.uniform(-limit, limit, size=n_in * n_out))
        chunks.append(np.zeros(n_out))
    return NetworkParameters(arch, np.concatenate(chunks))


def network_field(theta, arch: NetworkArchitecture, norm: NormalizationSpec):
    """Return ``f(x, t, rho, k, cp)`` giving the surrogate temperature in Celsius.

    ``theta`` may be a numpy vector or a tape variable, and the inputs may be
    arrays or dual numbers (column vectors of shape ``(n, 1)``), so the same
    function serves inference, input derivatives and training gradients.
    """
    layers = _split(theta, arch)
    lo, width = norm.lo, norm.width

    def f(*inputs):
        w0, b0 = layers[0]
        h = b0
        for j, v in enumerate(inputs):
            z = (v - lo[j]) * (2.0 / width[j]) - 1.0
            h = z * w0[j:j + 1, :] + h
        for w, b in layers[1:]:
            h = ad.affine(ad.tanh(h), w, b)
        return norm.initial_temp + norm.t_scale * h

    return f


def _as_point_array(x, t, q):
    if isinstance(q, MaterialProperties):
        q = (q.rho, q.k, q.cp)
    return np.array([[float(x), float(t), *map(float, q)]])


def _prepare(params, norm, points):
    params.check_finite()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != 5:
        raise InvalidInputError("points must have five columns (x, t, rho, k, cp)")
    points, clamped = norm.clamp(points)
    if clamped.any():
        warnings.warn(f"{int(clamped.sum())} point(s) clamped to the normalization box", ClampWarning, stacklevel=3)
    return points, clamped


def forward(params: NetworkParameters, norm: NormalizationSpec, x, t, q) -> float:
    """Surrogate temperature (Celsius) at one point.

    Out-of-box inputs are clamped to the box edge with a :class:`ClampWarning`.
    """
    points, _ = _prepare(params, norm, _as_point_array(x, t, q))
    f = network_field(params.flat, params.architecture, norm)
    cols = [points[:, j:j + 1] for j in range(5)]
    return float(f(*cols)[0, 0])


def predict_batch(params: NetworkParameters, norm: NormalizationSpec, points) -> np.ndarray:
    """Vectorized surrogate evaluation at rows ``(x, t, rho, k, cp)``."""
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        return np.zeros(0)
    points, _ = _prepare(params, norm, points)
    z = norm.normalize(points)
    layers = params.layers()
    h = z
    for w, b in layers[:-1]:
        h = np.tanh(h @ w + b)
    w, b = layers[-1]
    return norm.initial_temp + norm.t_scale * (h @ w + b)[:, 0]


def pde_residual(field, point, alpha):
    """Heat-equation residual ``dT/dt - alpha d2T/dx2`` (K/s) of ``field``.

    ``field(x, t, *extra)`` is built from autodiff primitives and takes its
    inputs in physical units, so the derivatives are physical as well.
    ``point`` is ``(x, t, *extra)``.
    """
    x, t, *extra = point
    derivs = ad.eval_with_input_derivs(field, x, t, *extra)
    return derivs.dt - alpha * derivs.dxx


def save_model(path, params: NetworkParameters, norm: NormalizationSpec, report=None):
    """Write a self-describing JSON model file."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "architecture": params.architecture.to_dict(),
        "normalization": norm.to_dict(),
        "parameters": params.flat.tolist(),
    }
    if report is not None:
        doc["training"] = report
    Path(path).write_text(json.dumps(doc, indent=1))


def load_model(path):
    """Read a model file written by :func:`save_model`.

    Returns ``(params, norm, training_report_dict_or_None)``.
    """
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise InvalidInputError(f"unsupported model format version {version!r}")
    arch = NetworkArchitecture(**doc["architecture"])
    norm = NormalizationSpec(**doc["normalization"])
    params = NetworkParameters(arch, np.array(doc["parameters"], dtype=float))
    params.check_finite()
    return params, norm, doc.get("training")


def default_model_path() -> Path:
    """Model trained on the default configuration and shipped with the package."""
    return Path(__file__).parent / "data" / "default_model.json"
