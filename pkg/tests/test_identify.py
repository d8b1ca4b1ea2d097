"""Identification pipelines: closure oracles, target selection, scores and model I/O."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ddsindy import library as L
from ddsindy.benchmarks import generate
from ddsindy.dataset import SampledTrajectory
from ddsindy.identify import (
    IdentificationError,
    SparseModel,
    bb_sindy,
    coefficient_errors,
    dd_sindy,
    evaluate_kernel,
    integral_sindy_ode,
    load_model,
    parse_rendered,
    reconstruction_error,
    render_model,
    save_model,
    targets,
)
from ddsindy.library import Atom, current, exp_neg_state, exp_sigma, shifted, sig
from ddsindy.quadrature import make_rule

RICKER_MULT = [Atom.of(), Atom.of(exp_sigma(4.0), exp_neg_state(0, 1.0))]


def ricker_simple_library():
    return L.build_library([sig(), shifted(0)], 4, multipliers=RICKER_MULT, instantaneous=[Atom.of(current(0))])


@pytest.fixture(scope="module")
def logistic_grid():
    # samples on multiples of the solver step, so the lookup record is exact at every node
    return generate("logistic_re", m=101)


@pytest.fixture(scope="module")
def ricker_grid():
    return generate("ricker_simple", m=101)


def max_error(model, truth):
    return max(max(e.values()) for e in coefficient_errors(model, truth))


# ------------------------------------------------------------------ closure oracles


def test_logistic_closure_recovers_truth(logistic_grid):
    # [DERIVED] when the identification rule equals the simulation rule the
    # regression problem is consistent, so the truth is recovered to rounding
    bench, traj = logistic_grid
    spec = L.build_library([sig(), shifted(0)], 3)
    model, rep = dd_sindy(traj, "RE", spec, make_rule("trapezoid", 201, -3, -1), 1e-5)
    assert set(model.coefficients()) == set(bench.truth[0])
    assert max_error(model, bench.truth) <= 1e-6
    assert rep.eps <= 1e-8


def test_ricker_closure_recovers_truth(ricker_grid):
    bench, traj = ricker_grid
    model, rep = dd_sindy(traj, "DIDE", ricker_simple_library(), make_rule("rectangles", 50, -10, 0), 1e-2)
    assert set(model.coefficients()) == set(bench.truth[0])
    assert max_error(model, bench.truth) <= 1e-6
    assert rep.rmse_train <= 1e-8


# ------------------------------------------------------------------ targets and scores


def test_kind_changes_target_not_design(ricker_grid):
    _, traj = ricker_grid
    spec = ricker_simple_library()
    rule = make_rule("rectangles", 50, -10, 0)
    m_re, _ = dd_sindy(traj, "RE", spec, rule, 1e-2)
    m_de, _ = dd_sindy(traj, "DIDE", spec, rule, 1e-2)
    np.testing.assert_array_equal(m_re.design(traj).matrix, m_de.design(traj).matrix)
    y_re, s_re = targets(traj, "RE")
    y_de, s_de = targets(traj, "DIDE")
    np.testing.assert_array_equal(y_re, traj.states)
    np.testing.assert_array_equal(y_de, traj.derivs)
    assert s_re == ["state"] and s_de == ["exact"]


def test_missing_derivatives_are_estimated():
    # [DERIVED] central differences of sin t err by at most h^2/6 in the interior
    t = np.linspace(0, 10, 201)
    h = t[1]
    y, src = targets(SampledTrajectory(t, np.sin(t)), "DIDE")
    assert src == ["estimated"]
    assert np.max(np.abs(y[1:-1, 0] - np.cos(t[1:-1]))) <= h**2 / 6 + 1e-12
    assert np.max(np.abs(y[:, 0] - np.cos(t))) <= h**2


def test_eps_pools_train_and_validation(logistic_grid):
    _, traj = logistic_grid
    spec = L.build_library([sig(), shifted(0)], 2)
    _, rep = dd_sindy(traj, "RE", spec, make_rule("trapezoid", 32, -3, -1), 1e-3, train_fraction=0.5)
    total = rep.n_train * rep.rmse_train**2 + rep.n_val * rep.rmse_val**2
    assert rep.eps**2 * (rep.n_train + rep.n_val) == pytest.approx(total, rel=1e-12)


def test_reconstruction_error_matches_report(logistic_grid):
    _, traj = logistic_grid
    spec = L.build_library([sig(), shifted(0)], 2)
    model, rep = dd_sindy(traj, "RE", spec, make_rule("trapezoid", 32, -3, -1), 1e-3)
    err = reconstruction_error(model, traj)
    assert err["eps"] == pytest.approx(rep.eps, rel=1e-12)


def test_zero_residual_gives_zero_error():
    # [TRIVIAL] x(t) = 2 constant, RE with library {1}: exact fit
    t = np.linspace(0, 5, 51)
    traj = SampledTrajectory(t, np.full(51, 2.0), history_times=np.array([-2.0, 0.0]), history_values=np.full((2, 1), 2.0))
    spec = L.LibrarySpec((), (Atom.of(),))
    model, rep = dd_sindy(traj, "RE", spec, None, 1e-3)
    assert model.coefficients() == {"1": pytest.approx(2.0)}
    assert rep.eps == pytest.approx(0.0, abs=1e-12)


def test_window_without_coverage_names_window():
    t = np.linspace(0, 1, 11)
    traj = SampledTrajectory(t, np.ones(11))
    spec = L.build_library([shifted(0)], 1)
    with pytest.raises(IdentificationError, match=r"-50"):
        dd_sindy(traj, "RE", spec, make_rule("trapezoid", 8, -50, -40), 1e-3)


# ------------------------------------------------------------------ kernel


def test_ricker_kernel_at_point():
    # [DERIVED] g(-1, ln 80) = gamma * (-1)^3 e^{-4} e^{-ln 80} ln 80
    gamma = -3413.33
    spec = ricker_simple_library()
    atom = Atom.of(sig(), sig(), sig(), exp_sigma(4.0), exp_neg_state(0, 1.0), shifted(0)).label()
    xi = np.array([[gamma if a.label() == atom else 0.0] for a in spec.atoms])
    assert np.count_nonzero(xi) == 1
    model = SparseModel(xi, spec, ("DIDE",), (-10.0, 0.0), "rectangles", 50)
    x = math.log(80.0)
    got = evaluate_kernel(model, [-1.0], [x])[0]
    assert got == pytest.approx(-gamma * math.exp(-4) * x / 80.0, rel=1e-12)


def test_zero_model_kernel_is_zero():
    spec = ricker_simple_library()
    model = SparseModel(np.zeros((len(spec.atoms), 1)), spec, ("DIDE",), (-10.0, 0.0), "rectangles", 50)
    np.testing.assert_array_equal(evaluate_kernel(model, np.linspace(-10, 0, 7), [1.0]), 0.0)


def test_fitted_ricker_kernel_matches_true(ricker_grid):
    bench, traj = ricker_grid
    model, _ = dd_sindy(traj, "DIDE", ricker_simple_library(), make_rule("rectangles", 50, -10, 0), 1e-2)
    truth = SparseModel(np.zeros_like(model.xi), model.spec, model.kinds, model.window, "rectangles", 50)
    for i, lab in enumerate(model.labels):
        truth.xi[i, 0] = bench.truth[0].get(lab, 0.0)
    s = np.linspace(-10, 0, 201)
    x = float(traj.states.mean())
    g_fit, g_true = evaluate_kernel(model, s, [x]), evaluate_kernel(truth, s, [x])
    assert np.max(np.abs(g_fit - g_true)) <= 1e-6 * np.max(np.abs(g_true))


# ------------------------------------------------------------------ rendering and files


def test_render_ricker_shape(ricker_grid):
    _, traj = ricker_grid
    model, _ = dd_sindy(traj, "DIDE", ricker_simple_library(), make_rule("rectangles", 50, -10, 0), 1e-2)
    text = render_model(model)
    assert text.startswith("x1'(t) = -1·x1(t) + ∫_{-10}^{0} [ -3413·")
    assert "x1(t+s)" in text


def test_empty_model_renders_zero():
    spec = L.build_library([shifted(0)], 2)
    model = SparseModel(np.zeros((len(spec.atoms), 1)), spec, ("RE",), (-3.0, -1.0), "trapezoid", 8)
    assert render_model(model) == "x1(t) = 0"
    assert parse_rendered("x1(t) = 0", ("x1",)) == [{}]


@given(st.lists(st.sampled_from([0.0, 1.0, -1.0, 2.5, -0.125, 3413.0]), min_size=10, max_size=10))
def test_render_parse_round_trip(values):
    spec = L.build_library([sig(), shifted(0)], 3)
    xi = np.array(values[: len(spec.atoms)], dtype=float)[:, None]
    model = SparseModel(xi, spec, ("RE",), (-3.0, -1.0), "trapezoid", 16)
    back = parse_rendered(render_model(model, precision=8), ("x1",))
    assert back == [model.coefficients()]


def test_parse_rendered_handles_instantaneous_and_names(ricker_grid):
    _, traj = ricker_grid
    model, _ = dd_sindy(traj, "DIDE", ricker_simple_library(), make_rule("rectangles", 50, -10, 0), 1e-2)
    back = parse_rendered(render_model(model, precision=12), ("x1",))[0]
    for k, v in model.coefficients().items():
        assert back[k] == pytest.approx(v, rel=1e-10)


def test_save_load_round_trip(tmp_path, ricker_grid):
    _, traj = ricker_grid
    model, _ = dd_sindy(traj, "DIDE", ricker_simple_library(), make_rule("rectangles", 50, -10, 0), 1e-2)
    path = tmp_path / "model.txt"
    save_model(model, path)
    back = load_model(path)
    np.testing.assert_array_equal(back.xi, model.xi)
    assert back.labels == model.labels
    assert (back.window, back.quadrature, back.K, back.kinds) == (model.window, model.quadrature, model.K, model.kinds)
    np.testing.assert_array_equal(back.design(traj).matrix, model.design(traj).matrix)


def test_save_load_black_box(tmp_path):
    t = np.linspace(0, 5, 101)
    traj = SampledTrajectory(t, np.exp(-t), derivs=-np.exp(-t), history_times=np.array([-2.0, 0.0]),
                             history_values=np.ones((2, 1)))
    model, _ = bb_sindy(traj, [-1.0, -0.5], 1e-3, degree=2)
    save_model(model, tmp_path / "bb.txt")
    back = load_model(tmp_path / "bb.txt")
    assert back.model_type == "bb" and back.bb_lags == model.bb_lags
    np.testing.assert_array_equal(back.xi, model.xi)


# ------------------------------------------------------------------ baselines


def test_black_box_recovers_linear_decay():
    # x' = -x with a constant unit history: lagged columns are not collinear with x
    t = np.linspace(0, 5, 101)
    traj = SampledTrajectory(t, np.exp(-t), derivs=-np.exp(-t), history_times=np.array([-2.0, 0.0]),
                             history_values=np.ones((2, 1)))
    model, _ = bb_sindy(traj, [-1.0, -0.5], 1e-3)
    assert model.coefficients() == {"x1": pytest.approx(-1.0, abs=1e-9)}
    assert render_model(model) == "x1'(t) = -1·x1"


def test_black_box_has_no_kernel_term(ricker_grid):
    _, traj = ricker_grid
    rule = make_rule("rectangles", 50, -10, 0)
    bb, bb_rep = bb_sindy(traj, rule.nodes, 1e-2, train_fraction=0.8)
    dd, dd_rep = dd_sindy(traj, "DIDE", ricker_simple_library(), rule, 1e-2, train_fraction=0.8)
    assert not any("exp" in lab for lab in bb.labels)
    assert bb_rep.rmse_val > dd_rep.rmse_val


EXP_T = np.linspace(0, 5, 200)


def test_integral_ode_left_rectangles_bias():
    # [DERIVED] left sums of e^{-t}: h sum_{k<i} e^{-kh} = (1 - e^{-ih}) h / (1 - e^{-h}),
    # so x(t_i) - x(0) is fitted exactly by xi = -(1 - e^{-h}) / h
    h = EXP_T[1]
    spec = L.LibrarySpec((), (Atom.of(current(0)),))
    model, _ = integral_sindy_ode(SampledTrajectory(EXP_T, np.exp(-EXP_T)), spec, 1e-3, cumulative="rectangles")
    assert model.coefficients()["x1"] == pytest.approx(-(1 - math.exp(-h)) / h, rel=1e-10)


def test_integral_ode_trapezoid_decay():
    spec = L.LibrarySpec((), tuple(L.enumerate_monomials([current(0)], 3)))
    model, _ = integral_sindy_ode(SampledTrajectory(EXP_T, np.exp(-EXP_T)), spec, 1e-3, cumulative="trapezoid")
    assert model.coefficients() == {"x1": pytest.approx(-1.0, abs=1e-2)}


def test_integral_ode_logistic():
    x = 1 / (1 + 9 * np.exp(-EXP_T))
    spec = L.LibrarySpec((), tuple(L.enumerate_monomials([current(0)], 3)))
    model, _ = integral_sindy_ode(SampledTrajectory(EXP_T, x), spec, 1e-3, cumulative="trapezoid")
    c = model.coefficients()
    assert set(c) == {"x1", "x1^2"}
    assert c["x1"] == pytest.approx(1.0, abs=1e-2) and c["x1^2"] == pytest.approx(-1.0, abs=1e-2)


def test_integral_ode_constant_data():
    spec = L.LibrarySpec((), tuple(L.enumerate_monomials([current(0)], 3)))
    model, rep = integral_sindy_ode(SampledTrajectory(EXP_T, np.full(200, 2.0)), spec, 1e-3)
    assert model.coefficients() == {}
    assert rep.eps == 0.0


def test_integral_ode_rejects_distributed_atoms():
    with pytest.raises(IdentificationError):
        integral_sindy_ode(SampledTrajectory(EXP_T, np.exp(-EXP_T)), L.build_library([shifted(0)], 1), 1e-3)
