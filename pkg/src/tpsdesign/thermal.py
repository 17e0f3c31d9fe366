"""High-fidelity thermal model of the protection film.

The film occupies ``0 <= x <= L``.  The interface with the substrate sits at
``x = 0`` and is adiabatic; the outer surface ``x = L`` receives a constant
heat flux ``q_s``.  Temperatures are carried in degrees Celsius throughout
(the heat equation is invariant under a constant temperature offset).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConvergenceError, InvalidInputError, NumericalError

__all__ = [
    "MaterialProperties",
    "ThermalScenario",
    "GridSpec",
    "TemperatureField",
    "InterfaceSeries",
    "solve_fd",
    "analytic_slab_flux",
    "interface_series",
    "enthalpy_balance",
    "refine_until",
]


def _check_finite(name, value):
    if not math.isfinite(value):
        raise InvalidInputError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class MaterialProperties:
    """One material sample: density, conductivity and specific heat."""

    rho: float
    k: float
    cp: float

    def __post_init__(self):
        for name in ("rho", "k", "cp"):
            value = float(getattr(self, name))
            _check_finite(name, value)
            if value <= 0:
                raise InvalidInputError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)

    @property
    def alpha(self) -> float:
        """Thermal diffusivity k / (rho cp), m^2/s."""
        return self.k / (self.rho * self.cp)

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.k, self.cp])


@dataclass(frozen=True)
class ThermalScenario:
    """Geometry, loading and design threshold of the film problem.

    The defaults put the nominal interface temperature at ``t_eval`` right
    at the threshold, which is where the reliability question is
    interesting.
    """

    thickness: float = 0.05
    heat_flux: float = 40_000.0
    t_end: float = 200.0
    initial_temp: float = 25.0
    threshold: float = 450.0
    t_eval: float = 150.0

    def __post_init__(self):
        for name in ("thickness", "heat_flux", "t_end", "initial_temp", "threshold", "t_eval"):
            value = float(getattr(self, name))
            _check_finite(name, value)
            object.__setattr__(self, name, value)
        if self.thickness <= 0:
            raise InvalidInputError("thickness must be positive")
        if self.t_end <= 0:
            raise InvalidInputError("t_end must be positive")
        if not 0 < self.t_eval <= self.t_end:
            raise InvalidInputError("t_eval must lie in (0, t_end]")
        if self.heat_flux < 0:
            raise InvalidInputError("heat_flux must be non-negative")

    def fourier(self, props: MaterialProperties, t) -> float:
        return props.alpha * np.asarray(t, dtype=float) / self.thickness**2


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time grid: ``nx`` nodes across the film, step ``dt``."""

    nx: int = 201
    dt: float = 0.05

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 3:
            raise InvalidInputError(f"nx must be an integer >= 3, got {self.nx}")
        object.__setattr__(self, "nx", int(self.nx))
        _check_finite("dt", float(self.dt))
        if self.dt <= 0:
            raise InvalidInputError("dt must be positive")
        object.__setattr__(self, "dt", float(self.dt))

    def n_steps(self, t_end: float) -> int:
        """Number of steps covering ``[0, t_end]``; dt is adjusted by less than one step."""
        n = max(1, round(t_end / self.dt))
        if abs(n * self.dt - t_end) > self.dt:
            raise InvalidInputError("dt does not divide t_end")
        return n

    def refined(self) -> "GridSpec":
        return GridSpec(nx=2 * self.nx - 1, dt=self.dt / 2)


@dataclass
class TemperatureField:
    """Solution ``values[i, n]`` at node ``i`` (x = i dx) and time ``times[n]``."""

    scenario: ThermalScenario
    grid: GridSpec
    values: np.ndarray
    times: np.ndarray = field(repr=False)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.scenario.thickness, self.grid.nx)

    def step_index(self, t: float) -> int:
        """Index of the stored step nearest to ``t``."""
        if t < -1e-12 or t > self.times[-1] + 1e-9:
            raise InvalidInputError(f"t={t} outside field range [0, {self.times[-1]}]")
        return int(np.argmin(np.abs(self.times - t)))

    def at(self, x: float, t: float) -> float:
        """Temperature at time step nearest ``t``, linearly interpolated in ``x``."""
        return float(np.interp(x, self.x, self.values[:, self.step_index(t)]))


@dataclass(frozen=True)
class InterfaceSeries:
    times: np.ndarray
    temps: np.ndarray
    max_temp: float
    at_eval: float

    def __iter__(self):
        return iter(zip(self.times.tolist(), self.temps.tolist()))

    def __len__(self):
        return len(self.times)


def _tridiagonal(nx):
    """Banded form of the ghost-node Laplacian (unit spacing, Neumann both ends)."""
    ab = np.zeros((3, nx))
    ab[0, 1:] = 1.0
    ab[1, :] = -2.0
    ab[2, :-1] = 1.0
    # ghost nodes mirror the first interior neighbour
    ab[0, 1] = 2.0
    ab[2, -2] = 2.0
    return ab


def _apply(ab, v):
    out = ab[1] * v
    out[:-1] += ab[0, 1:] * v[1:]
    out[1:] += ab[2, :-1] * v[:-1]
    return out


def solve_fd(
    scenario: ThermalScenario,
    props: MaterialProperties,
    grid: GridSpec = GridSpec(),
    startup_substeps: int = 64,
) -> TemperatureField:
    """Crank-Nicolson solution of the film heat equation.

    The insulated interface and the flux boundary use second-order ghost
    nodes.  The first step is taken as ``startup_substeps`` backward-Euler
    sub-steps: the suddenly applied surface flux produces an ``sqrt(t)``
    transient that plain Crank-Nicolson resolves poorly and leaves
    oscillating at large diffusion numbers.

    Returns
    -------
    TemperatureField
        Values at every node and every time step, ``values.shape == (nx, nt + 1)``.
    """
    if startup_substeps < 1:
        raise InvalidInputError("startup_substeps must be >= 1")
    nx = grid.nx
    nt = grid.n_steps(scenario.t_end)
    dt = scenario.t_end / nt
    dx = scenario.thickness / (nx - 1)
    r = props.alpha * dt / dx**2

    lap = _tridiagonal(nx)
    source = np.zeros(nx)
    source[-1] = 2.0 * dx * scenario.heat_flux / props.k

    cn_lhs = -0.5 * r * lap
    cn_lhs[1] += 1.0
    r_sub = r / startup_substeps
    be_lhs = -r_sub * lap
    be_lhs[1] += 1.0

    values = np.empty((nx, nt + 1))
    values[:, 0] = scenario.initial_temp
    u = values[:, 0].copy()
    try:
        for _ in range(startup_substeps):
            u = solve_banded((1, 1), be_lhs, u + r_sub * source, check_finite=False)
        values[:, 1] = u
        for n in range(1, nt):
            rhs = u + 0.5 * r * _apply(lap, u) + r * source
            u = solve_banded((1, 1), cn_lhs, rhs, check_finite=False)
            values[:, n + 1] = u
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"tridiagonal solve failed: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise NumericalError("finite-difference solution is not finite")
    times = np.arange(nt + 1) * dt
    return TemperatureField(scenario=scenario, grid=grid, values=values, times=times)


def analytic_slab_flux(scenario: ThermalScenario, props: MaterialProperties, x, t, n_terms: int = 50):
    """Fourier-series solution for a slab with a flux face and an insulated face.

    The steady-growth part is summed in closed form, so only the decaying
    modes are truncated.  At ``t = 0`` the series converges non-uniformly;
    the initial temperature is returned exactly there.  Accepts scalars or
    broadcastable arrays for ``x`` and ``t``.
    """
    if n_terms < 1:
        raise InvalidInputError("n_terms must be >= 1")
    L = scenario.thickness
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    tol = 1e-12 * max(L, scenario.t_end)
    if np.any(x < -tol) or np.any(x > L + tol):
        raise InvalidInputError("x outside [0, L]")
    if np.any(t < 0) or np.any(t > scenario.t_end * (1 + 1e-12)):
        raise InvalidInputError("t outside [0, t_end]")
    x, t = np.broadcast_arrays(x, t)
    fo = props.alpha * t / L**2
    n = np.arange(1, n_terms + 1).reshape((-1,) + (1,) * x.ndim)
    terms = ((-1.0) ** n / n**2) * np.exp(-(n**2) * np.pi**2 * fo) * np.cos(n * np.pi * x / L)
    shape = fo + (3 * x**2 - L**2) / (6 * L**2) - 2 / np.pi**2 * terms.sum(axis=0)
    out = scenario.initial_temp + scenario.heat_flux * L / props.k * shape
    out = np.where(t == 0, scenario.initial_temp, out)
    return float(out) if out.ndim == 0 else out


def interface_series(field: TemperatureField) -> InterfaceSeries:
    temps = field.values[0].copy()
    return InterfaceSeries(
        times=field.times.copy(),
        temps=temps,
        max_temp=float(temps.max()),
        at_eval=float(temps[field.step_index(field.scenario.t_eval)]),
    )


def enthalpy_balance(
    field: TemperatureField, props: MaterialProperties, scenario: ThermalScenario, t: float
) -> float:
    """Relative mismatch between stored heat and heat supplied up to ``t``.

    Stored heat is ``rho cp`` times the trapezoidal integral of ``T - T0``.
    With no surface flux the supplied heat is zero and the absolute stored
    heat (J/m^2) is returned instead.
    """
    n = field.step_index(t)
    t_n = field.times[n]
    if t_n == 0:
        return 0.0
    stored = props.rho * props.cp * np.trapezoid(field.values[:, n] - scenario.initial_temp, field.x)
    supplied = scenario.heat_flux * t_n
    if scenario.heat_flux == 0:
        return float(abs(stored))
    return float(abs(stored - supplied) / max(supplied, np.finfo(float).tiny))


def refine_until(
    scenario: ThermalScenario,
    props: MaterialProperties,
    target_tol: float,
    initial: GridSpec = GridSpec(nx=26, dt=0.4),
    max_nx: int = 10_000,
) -> GridSpec:
    """Refine the grid until the interface temperature at ``t_eval`` settles.

    Each refinement doubles the number of intervals and halves ``dt``.  The
    coarser grid of the first pair whose interface values differ by less
    than ``target_tol`` is returned.
    """
    if not target_tol > 0:
        raise ConvergenceError(f"tolerance {target_tol} cannot be reached by refinement")
    grid = initial
    value = interface_series(solve_fd(scenario, props, grid)).at_eval
    while True:
        finer = grid.refined()
        if finer.nx > max_nx:
            raise ConvergenceError(
                f"no convergence to {target_tol} K before nx exceeded {max_nx}"
            )
        finer_value = interface_series(solve_fd(scenario, props, finer)).at_eval
        if abs(finer_value - value) < target_tol:
            return grid
        grid, value = finer, finer_value
