import warnings

import numpy as np
import pytest

from tpsdesign import autodiff as ad
from tpsdesign.errors import ConfigError, InvalidInputError, NonFiniteError
from tpsdesign.surrogate import (
    ClampWarning,
    NetworkArchitecture,
    NetworkParameters,
    NormalizationSpec,
    forward,
    init_params,
    load_model,
    network_field,
    pde_residual,
    predict_batch,
    save_model,
)
from tpsdesign.thermal import MaterialProperties, ThermalScenario, analytic_slab_flux
from tpsdesign.training import (
    CollocationSet,
    LossWeights,
    TrainingConfig,
    loss_and_grad,
    loss_components,
    sample_collocation,
    train,
    validate_against_fd,
)
from tpsdesign.thermal import GridSpec

PROP_LO, PROP_HI = (140.0, 0.7, 560.0), (260.0, 1.3, 1040.0)


@pytest.fixture(scope="module")
def norm():
    return NormalizationSpec.for_scenario(ThermalScenario(), PROP_LO, PROP_HI)


def random_points(norm, n, rng):
    return norm.lo + norm.width * rng.random((n, 5))


def series_field(scenario, n_terms):
    """Truncated series solution built from autodiff primitives."""
    L, q, T0 = scenario.thickness, scenario.heat_flux, scenario.initial_temp

    def f(x, t, rho, k, cp):
        fo = t * (k / (rho * cp)) * (1.0 / L**2)
        total = 0.0
        for n in range(1, n_terms + 1):
            c = (-1.0) ** n / n**2
            total = total + c * ad.exp(fo * (-(n**2) * np.pi**2)) * ad.cos(x * (n * np.pi / L))
        shape = fo + (x * x * 3.0 - L**2) * (1.0 / (6 * L**2)) - total * (2 / np.pi**2)
        return shape * (q * L / k) + T0

    return f


# ---------------------------------------------------------------- parameters


def test_init_deterministic():
    arch = NetworkArchitecture((8, 8))
    assert np.array_equal(init_params(arch, 3).flat, init_params(arch, 3).flat)
    assert not np.array_equal(init_params(arch, 3).flat, init_params(arch, 4).flat)


def test_init_shapes_width_one():
    arch = NetworkArchitecture((1,))
    params = init_params(arch, 0)
    (w0, b0), (w1, b1) = params.layers()
    assert w0.shape == (5, 1) and b0.shape == (1, 1)
    assert w1.shape == (1, 1) and b1.shape == (1, 1)
    assert arch.n_params == 5 + 1 + 1 + 1


def test_glorot_spread():
    arch = NetworkArchitecture((512, 512))
    layers = init_params(arch, 1).layers()
    for (w, b), (n_in, n_out) in zip(layers, arch.layer_shapes):
        expected = np.sqrt(2.0 / (n_in + n_out))
        if w.size >= 1000:
            assert abs(w.std() / expected - 1) < 0.2
        assert np.all(b == 0)


def test_architecture_validation():
    with pytest.raises(InvalidInputError):
        NetworkArchitecture((0,))
    with pytest.raises(InvalidInputError):
        NetworkArchitecture((4,), activation="relu")
    with pytest.raises(InvalidInputError):
        NetworkParameters(NetworkArchitecture((4,)), np.zeros(3))


# ------------------------------------------------------------- normalization


def test_normalization_round_trip(norm, rng):
    pts = random_points(norm, 200, rng)
    back = norm.denormalize(norm.normalize(pts))
    assert np.all(np.abs(back - pts) <= 1e-12 * np.abs(pts) + 1e-300)
    z = norm.normalize(pts)
    assert z.min() >= -1 - 1e-12 and z.max() <= 1 + 1e-12


def test_normalization_rejects_empty_range():
    with pytest.raises(InvalidInputError):
        NormalizationSpec((0, 0, 1, 1, 1), (1, 0, 2, 2, 2))


# ------------------------------------------------------------------- forward


def test_zero_network_returns_initial_temperature(norm):
    arch = NetworkArchitecture((16, 16))
    zero = NetworkParameters(arch, np.zeros(arch.n_params))
    assert forward(zero, norm, 0.0, 150.0, MaterialProperties(200, 1, 800)) == 25.0
    assert np.all(predict_batch(zero, norm, random_points(norm, 10, np.random.default_rng(0))) == 25.0)


def test_predict_batch_edge_cases(norm):
    params = init_params(NetworkArchitecture((8,)), 0)
    assert predict_batch(params, norm, np.zeros((0, 5))).shape == (0,)
    pt = np.array([[0.01, 40.0, 210.0, 1.1, 700.0]])
    single = predict_batch(params, norm, pt)[0]
    assert abs(single - forward(params, norm, 0.01, 40.0, (210.0, 1.1, 700.0))) <= 1e-12 * norm.t_scale


def test_predict_batch_matches_forward(norm, rng):
    params = init_params(NetworkArchitecture((16, 16, 16)), 2)
    pts = random_points(norm, 1000, rng)
    batch = predict_batch(params, norm, pts)
    single = np.array([forward(params, norm, p[0], p[1], p[2:]) for p in pts])
    assert np.max(np.abs(batch - single)) / norm.t_scale <= 1e-12


def test_out_of_box_is_clamped_with_warning(norm):
    params = init_params(NetworkArchitecture((8,)), 0)
    with pytest.warns(ClampWarning):
        outside = forward(params, norm, 0.0, 150.0, (500.0, 1.0, 800.0))
    edge = forward(params, norm, 0.0, 150.0, (260.0, 1.0, 800.0))
    assert outside == edge


def test_non_finite_parameters_rejected(norm):
    arch = NetworkArchitecture((4,))
    flat = np.zeros(arch.n_params)
    flat[3] = np.nan
    with pytest.raises(NonFiniteError):
        forward(NetworkParameters(arch, flat), norm, 0.0, 1.0, (200, 1, 800))


def test_model_file_round_trip(tmp_path, norm):
    params = init_params(NetworkArchitecture((8, 4)), 5)
    path = tmp_path / "model.json"
    save_model(path, params, norm, {"note": 1})
    loaded, norm2, extra = load_model(path)
    assert np.array_equal(loaded.flat, params.flat)
    assert norm2 == norm and extra == {"note": 1}
    assert loaded.architecture == params.architecture


# ------------------------------------------------------------------ residual


def test_residual_linear_in_time():
    c = 3.5
    field = lambda x, t: 25.0 + c * t + 0.0 * x
    for alpha in (1e-6, 0.3):
        assert float(pde_residual(field, (0.02, 10.0), alpha)) == pytest.approx(c, abs=1e-12)


def test_residual_constant_curvature():
    field = lambda x, t: 25.0 + 0.5 * x * x + 0.0 * t
    alpha = 0.7
    assert float(pde_residual(field, (0.3, 2.0), alpha)) == pytest.approx(-alpha, abs=1e-12)


def test_series_solution_has_negligible_residual():
    scenario, props = ThermalScenario(), MaterialProperties(200, 1, 800)
    t = 0.2 * scenario.thickness**2 / props.alpha
    field = series_field(scenario, 50)
    r = pde_residual(field, (np.array([[0.021]]), np.array([[t]]), 200.0, 1.0, 800.0), props.alpha)
    assert abs(float(r[0, 0])) < 1e-6
    value = ad.eval_with_input_derivs(field, 0.021, t, 200.0, 1.0, 800.0).value
    assert float(value) == pytest.approx(analytic_slab_flux(scenario, props, 0.021, t, 50), abs=1e-9)


def test_residual_of_network_uses_physical_units(norm):
    params = init_params(NetworkArchitecture((8, 8)), 1)
    f = network_field(params.flat, params.architecture, norm)
    x, t, q = 0.02, 70.0, (200.0, 1.0, 800.0)
    h = (1e-7, 1e-3)
    val = lambda xx, tt: predict_batch(params, norm, [[xx, tt, *q]])[0]
    d = ad.eval_with_input_derivs(f, np.array([[x]]), np.array([[t]]), *[np.array([[v]]) for v in q])
    dt_fd = (val(x, t + h[1]) - val(x, t - h[1])) / (2 * h[1])
    dx_fd = (val(x + h[0], t) - val(x - h[0], t)) / (2 * h[0])
    assert float(d.dt[0, 0]) == pytest.approx(dt_fd, rel=1e-6)
    assert float(d.dx[0, 0]) == pytest.approx(dx_fd, rel=1e-6)


# ---------------------------------------------------------------------- loss


def test_zero_network_loss_is_surface_weight(norm, rng):
    arch = NetworkArchitecture((8,))
    zero = NetworkParameters(arch, np.zeros(arch.n_params))
    colloc = sample_collocation(norm, 50, 20, rng)
    weights = LossWeights()
    loss, _, comps = loss_and_grad(zero, norm, weights, colloc, ThermalScenario(), return_components=True)
    assert comps["pde"] == 0 and comps["ic"] == 0 and comps["bc0"] == 0
    assert comps["bcL"] == pytest.approx(1.0, abs=1e-15)
    assert loss == pytest.approx(weights.w_bcL, abs=1e-13)


def test_collocation_categories(norm, rng):
    colloc = sample_collocation(norm, 100, 30, rng)
    assert colloc.counts() == {"interior": 100, "initial": 30, "interface": 30, "surface": 30}
    assert np.all(colloc.initial[:, 1] == 0)
    assert np.all(colloc.interface[:, 0] == 0)
    assert np.all(colloc.surface[:, 0] == norm.upper[0])
    for pts in (colloc.interior, colloc.initial, colloc.interface, colloc.surface):
        assert np.all(norm.contains(pts))


def test_series_solution_drives_loss_to_zero(norm, rng):
    scenario = ThermalScenario()
    colloc = sample_collocation(norm, 200, 100, rng)
    comps = loss_components(series_field(scenario, 400), norm, colloc, scenario)
    weights = LossWeights()
    total = sum(w * float(comps[n]) for n, w in zip(("pde", "ic", "bc0", "bcL"), weights.as_tuple()))
    assert total < 1e-8


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_gradient_against_finite_differences(norm, seed):
    rng = np.random.default_rng(seed)
    arch = NetworkArchitecture((12, 12))
    params = init_params(arch, seed)
    params.flat += 0.1 * rng.normal(size=params.flat.size)
    colloc = sample_collocation(norm, 64, 16, rng)
    weights, scenario = LossWeights(), ThermalScenario()
    _, grad = loss_and_grad(params, norm, weights, colloc, scenario)
    h = 1e-4
    floor = 1e-6 * np.max(np.abs(grad))
    for i in rng.choice(arch.n_params, size=20, replace=False):
        e = np.zeros(arch.n_params)
        e[i] = h
        up = loss_and_grad(NetworkParameters(arch, params.flat + e), norm, weights, colloc, scenario)[0]
        down = loss_and_grad(NetworkParameters(arch, params.flat - e), norm, weights, colloc, scenario)[0]
        fd = (up - down) / (2 * h)
        assert abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), floor) < 1e-5


def test_zero_flux_with_surface_weight_is_config_error(norm, rng):
    params = init_params(NetworkArchitecture((4,)), 0)
    colloc = sample_collocation(norm, 10, 5, rng)
    with pytest.raises(ConfigError):
        loss_and_grad(params, norm, LossWeights(), colloc, ThermalScenario(heat_flux=0.0))
    loss, _ = loss_and_grad(params, norm, LossWeights(w_bcL=0.0), colloc, ThermalScenario(heat_flux=0.0))
    assert np.isfinite(loss)


def test_loss_weights_validation():
    with pytest.raises(InvalidInputError):
        LossWeights(0, 0, 0, 0)
    with pytest.raises(InvalidInputError):
        LossWeights(w_pde=-1)


# ------------------------------------------------------------------ training

TINY = dict(n_interior=64, n_boundary=16, resample_every=100, history_every=20, lbfgs_rounds=1,
            lbfgs_iterations=20)


def test_training_is_deterministic(norm):
    arch = NetworkArchitecture((8, 8))
    config = TrainingConfig(iterations=40, seed=9, **TINY)
    runs = [train(arch, norm, LossWeights(), config, ThermalScenario()) for _ in range(2)]
    assert runs[0][1].final_loss == runs[1][1].final_loss
    assert np.array_equal(runs[0][0].flat, runs[1][0].flat)
    report = runs[0][1]
    assert report.seed == 9 and report.wall_time > 0
    assert report.steps >= 40
    adam_entries = [h for h in report.history if h["phase"] == "adam"]
    assert len(adam_entries) == 40 // 20


def test_smoothed_loss_decreases(norm):
    arch = NetworkArchitecture((8, 8))
    config = TrainingConfig(iterations=600, lbfgs_rounds=0, n_interior=64, n_boundary=16, resample_every=600,
                            history_every=1, learning_rate=3e-3, seed=1)
    _, report = train(arch, norm, LossWeights(), config, ThermalScenario())
    losses = np.array([h["loss"] for h in report.history if h["phase"] == "adam"])
    windows = losses[: len(losses) // 100 * 100].reshape(-1, 100).mean(axis=1)
    assert windows[-1] <= windows[-2]


def test_training_aborts_on_non_finite_loss(norm):
    arch = NetworkArchitecture((4,))
    flat = np.zeros(arch.n_params)
    flat[0] = np.inf
    config = TrainingConfig(iterations=5, lbfgs_rounds=0, **{k: v for k, v in TINY.items() if "lbfgs" not in k})
    with np.errstate(all="ignore"), pytest.raises(NonFiniteError, match="step 0"):
        train(arch, norm, LossWeights(), config, ThermalScenario(), init=NetworkParameters(arch, flat))


def test_training_config_validation():
    with pytest.raises(InvalidInputError):
        TrainingConfig(iterations=0, lbfgs_rounds=0)
    with pytest.raises(InvalidInputError):
        TrainingConfig(learning_rate=0)


def test_learning_rate_schedule():
    config = TrainingConfig(learning_rate=1e-3, lr_decay=0.5, lr_decay_every=5000)
    assert config.learning_rate_at(0) == 1e-3
    assert config.learning_rate_at(4999) == 1e-3
    assert config.learning_rate_at(5000) == 5e-4
    assert config.learning_rate_at(10000) == 2.5e-4


def test_validation_report_for_untrained_model(norm):
    params = init_params(NetworkArchitecture((4,)), 0)
    report = validate_against_fd(params, norm, ThermalScenario(), [MaterialProperties(200, 1, 800)],
                                 GridSpec(nx=21, dt=1.0), n_probe=11)
    assert len(report.poi_error) == 1 and report.worst_domain_error > 10
    assert report.probe_shape == (11, 11) and report.clamped == [False]
