import numpy as np
import pytest

from tpsdesign.errors import ConvergenceError, InvalidInputError
from tpsdesign.thermal import (
    GridSpec,
    MaterialProperties,
    ThermalScenario,
    analytic_slab_flux,
    enthalpy_balance,
    interface_series,
    refine_until,
    solve_fd,
)


def series_oracle(scenario, props, x, t, n_terms):
    """Term-by-term partial sum written out independently of the library."""
    L = scenario.thickness
    fo = props.alpha * t / L**2
    total = 0.0
    for n in range(1, n_terms + 1):
        total += (-1) ** n / n**2 * np.exp(-(n**2) * np.pi**2 * fo) * np.cos(n * np.pi * x / L)
    shape = fo + (3 * x**2 - L**2) / (6 * L**2) - 2 / np.pi**2 * total
    return scenario.initial_temp + scenario.heat_flux * L / props.k * shape


@pytest.mark.parametrize("bad", [dict(rho=0, k=1, cp=1), dict(rho=1, k=-1, cp=1), dict(rho=1, k=1, cp=float("nan"))])
def test_material_invariants(bad):
    with pytest.raises(InvalidInputError):
        MaterialProperties(**bad)


def test_alpha(nominal):
    assert nominal.alpha == pytest.approx(6.25e-6)


@pytest.mark.parametrize("kwargs", [dict(thickness=0), dict(t_end=-1), dict(t_eval=250), dict(t_eval=0),
                                    dict(heat_flux=-1.0)])
def test_scenario_invariants(kwargs):
    with pytest.raises(InvalidInputError):
        ThermalScenario(**kwargs)


def test_grid_invariants():
    with pytest.raises(InvalidInputError):
        GridSpec(nx=2)
    with pytest.raises(InvalidInputError):
        GridSpec(dt=0)


def test_analytic_matches_partial_sum(scenario, nominal):
    assert analytic_slab_flux(scenario, nominal, 0.0, 150.0, 50) == pytest.approx(451.67, abs=0.01)
    assert analytic_slab_flux(scenario, nominal, 0.05, 150.0, 50) == pytest.approx(1431.7, abs=0.05)
    for x, t in [(0.0, 150.0), (0.05, 150.0), (0.013, 37.5), (0.04, 2.0)]:
        assert analytic_slab_flux(scenario, nominal, x, t, 50) == pytest.approx(
            series_oracle(scenario, nominal, x, t, 50), abs=1e-9)


def test_analytic_initial_condition(scenario, nominal):
    xs = np.linspace(0, scenario.thickness, 11)
    assert np.all(np.abs(analytic_slab_flux(scenario, nominal, xs, 0.0, 50) - 25.0) < 1e-3)


def test_analytic_domain_checks(scenario, nominal):
    with pytest.raises(InvalidInputError):
        analytic_slab_flux(scenario, nominal, -0.01, 10.0)
    with pytest.raises(InvalidInputError):
        analytic_slab_flux(scenario, nominal, 0.01, 201.0)
    with pytest.raises(InvalidInputError):
        analytic_slab_flux(scenario, nominal, 0.01, 1.0, n_terms=0)


def test_fd_interface_value(default_field):
    assert interface_series(default_field).at_eval == pytest.approx(451.7, abs=0.5)


def test_fd_against_series_everywhere(scenario, nominal, default_field):
    xx, tt = np.meshgrid(default_field.x, default_field.times, indexing="ij")
    exact = analytic_slab_flux(scenario, nominal, xx, tt, 100)
    assert np.max(np.abs(default_field.values - exact)) < 0.5


def test_fd_shape_and_initial_state(default_field):
    assert default_field.values.shape == (201, 4001)
    assert np.all(default_field.values[:, 0] == 25.0)


def test_no_flux_stays_uniform(nominal):
    cold = ThermalScenario(heat_flux=0.0)
    field = solve_fd(cold, nominal, GridSpec(nx=21, dt=1.0))
    assert np.max(np.abs(field.values - 25.0)) < 1e-12
    series = interface_series(field)
    assert series.max_temp == pytest.approx(25.0, abs=1e-12)
    # zero flux: the absolute stored heat is reported
    assert enthalpy_balance(field, nominal, cold, 100.0) < 1e-6


def test_monotone_in_time_and_space(default_field):
    v = default_field.values
    assert np.all(np.diff(v, axis=1) >= -1e-9)
    assert np.all(np.diff(v[:, 1:], axis=0) >= -1e-9)


@pytest.mark.parametrize("t", [50.0, 100.0, 150.0, 200.0])
def test_energy_balance(scenario, nominal, default_field, t):
    stored = nominal.rho * nominal.cp * np.trapezoid(default_field.values[:, default_field.step_index(t)] - 25.0,
                                                   default_field.x)
    assert stored == pytest.approx(scenario.heat_flux * t, rel=5e-3)
    assert enthalpy_balance(default_field, nominal, scenario, t) < 5e-3


def test_energy_balance_at_zero(scenario, nominal, default_field):
    assert enthalpy_balance(default_field, nominal, scenario, 0.0) == 0.0


def test_energy_balance_coarse_grids(scenario, nominal):
    # the ghost-node scheme conserves the trapezoidal enthalpy exactly, so the
    # residual is rounding-level on every grid
    for nx in (11, 21, 41):
        field = solve_fd(scenario, nominal, GridSpec(nx=nx, dt=0.5))
        err = enthalpy_balance(field, nominal, scenario, 150.0)
        assert np.isfinite(err) and err < 1e-10


def test_interface_series_behaviour(scenario, default_field):
    series = interface_series(default_field)
    early = ThermalScenario(t_end=150.0)
    assert series.max_temp >= series.at_eval
    truncated = solve_fd(early, MaterialProperties(200, 1, 800))
    s150 = interface_series(truncated)
    assert s150.max_temp == s150.temps[-1] == s150.at_eval


def test_single_step_series(nominal):
    short = ThermalScenario(t_end=1.0, t_eval=1.0)
    series = interface_series(solve_fd(short, nominal, GridSpec(nx=11, dt=1.0)))
    assert len(series) == 2
    assert [t for t, _ in series] == [0.0, 1.0]


def test_solution_depends_on_alpha_and_flux_ratio(scenario, nominal):
    # scale k by 2, rho by 2: alpha fixed; double the flux keeps q/k fixed
    base = solve_fd(scenario, nominal, GridSpec(nx=51, dt=0.5))
    other_props = MaterialProperties(nominal.rho * 2, nominal.k * 2, nominal.cp)
    other_scn = ThermalScenario(heat_flux=scenario.heat_flux * 2)
    other = solve_fd(other_scn, other_props, GridSpec(nx=51, dt=0.5))
    assert np.max(np.abs(base.values - other.values)) < 1e-9


def test_second_order_convergence(scenario, nominal):
    exact = analytic_slab_flux(scenario, nominal, 0.0, 150.0, 100)
    errs = []
    for nx, dt in [(26, 0.4), (51, 0.2), (101, 0.1)]:
        f = solve_fd(scenario, nominal, GridSpec(nx=nx, dt=dt))
        errs.append(abs(interface_series(f).at_eval - exact))
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_refine_until(scenario, nominal):
    grid = refine_until(scenario, nominal, 0.1)
    value = interface_series(solve_fd(scenario, nominal, grid)).at_eval
    assert value == pytest.approx(analytic_slab_flux(scenario, nominal, 0.0, 150.0, 100), abs=0.2)


def test_refine_until_loose_tolerance_returns_initial(scenario, nominal):
    initial = GridSpec(nx=26, dt=0.4)
    assert refine_until(scenario, nominal, 1000.0, initial=initial) == initial


def test_refine_until_unreachable(scenario, nominal):
    with pytest.raises(ConvergenceError):
        refine_until(scenario, nominal, 0.0)
    with pytest.raises(ConvergenceError):
        refine_until(scenario, nominal, 1e-12, max_nx=60)


def test_field_lookup_out_of_range(default_field):
    with pytest.raises(InvalidInputError):
        default_field.step_index(500.0)
