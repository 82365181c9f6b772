import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exp_integral
from stochobs.bsde import TerminalDatum, solve_backward_closed_form
from stochobs.core import BrownianEnsemble, EnsembleSpec, FiniteUnionSet, NoiseModel, OperatorSpec, TimeGrid
from stochobs.forward import ControlField, duality_residual, solve_forward, stochastic_exponential
from stochobs.hum import (
    DualSolveError,
    build_dual,
    dual_control,
    lift_control,
    lifted_linf_bound,
    solve_dual,
    solve_dual_dense,
    time_integral_exp,
    verify_null,
)
from stochobs.spectra import closed_form_basis
from stochobs.specineq import full_gram

HEAT = closed_form_basis(OperatorSpec.heat(), 20)
HALF = FiniteUnionSet.of((0.0, 0.5))
FULL = FiniteUnionSet.of((0.0, 1.0))
PI2 = math.pi**2


def set_integral(rate, pairs, T=1.0):
    return sum(exp_integral(rate, a, b, T) for a, b in pairs)


def ensemble(n_paths, n_steps=100, seed=0):
    return BrownianEnsemble.sample(EnsembleSpec(n_paths, seed), TimeGrid(1.0, n_steps))


def hum_control(m, grid, y0=None, G=HALF, E=HALF, eps=1e-10, basis=HEAT):
    y0 = np.eye(m)[0] if y0 is None else y0
    sys = build_dual(basis, G, E, grid.T, y0, m, eps)
    eta = solve_dual(sys)
    return sys, eta, dual_control(sys, eta, grid)


def test_single_mode_full_observation_entry():
    sys = build_dual(HEAT, FULL, FULL, 1.0, [1.0], 1)
    assert sys.Lambda[0, 0] == pytest.approx((1 - math.exp(-2 * PI2)) / (2 * PI2), rel=1e-14)
    assert sys.Lambda[0, 0] == pytest.approx(0.050660, abs=1e-6)


def test_full_observation_is_diagonal():
    sys = build_dual(HEAT, FULL, FULL, 1.0, np.ones(5), 5)
    lam = HEAT.lambdas[:5]
    np.testing.assert_allclose(sys.Lambda, np.diag(-np.expm1(-2 * lam) / (2 * lam)), atol=1e-14)


def test_off_diagonal_entry_against_quadrature():
    E = FiniteUnionSet.of((0.1, 0.3), (0.6, 0.9))
    sys = build_dual(HEAT, HALF, E, 1.0, [1.0, 1.0], 2)
    rate = HEAT.lambdas[0] + HEAT.lambdas[1]
    t_int = set_integral(rate, [(0.1, 0.3), (0.6, 0.9)])
    assert sys.Lambda[0, 1] == pytest.approx(4 / (3 * math.pi) * t_int, rel=1e-9)


@pytest.mark.parametrize("rate", [0.0, 1e-12, 3.0, 400.0])
def test_time_integral_against_quadrature(rate):
    E = FiniteUnionSet.of((0.0, 0.2), (0.5, 0.8))
    assert time_integral_exp(rate, E, 1.0) == pytest.approx(set_integral(rate, [(0.0, 0.2), (0.5, 0.8)]), rel=1e-9)


def test_zero_datum_zero_control():
    sys = build_dual(HEAT, HALF, HALF, 1.0, np.zeros(4), 4)
    eta = solve_dual(sys)
    assert np.all(eta == 0)
    assert np.all(dual_control(sys, eta, TimeGrid(1.0, 10)).values == 0)


def test_scalar_algebra():
    eps, y = 1e-3, 0.7
    sys = build_dual(HEAT, FULL, FULL, 1.0, [y], 1, eps)
    eta = solve_dual(sys)
    L, b = sys.Lambda[0, 0], math.exp(-PI2) * y
    assert eta[0] == pytest.approx(-b / (L + eps), rel=1e-12)
    assert sys.terminal(eta)[0] == pytest.approx(b * eps / (L + eps), rel=1e-9)


@pytest.mark.parametrize("m", [2, 6, 10])
def test_cg_matches_dense(m):
    sys = build_dual(HEAT, HALF, HALF, 1.0, np.eye(m)[0], m)
    cg, dense = solve_dual(sys), solve_dual_dense(sys)
    assert np.linalg.norm(cg - dense) <= 1e-6 * np.linalg.norm(dense)


def test_cg_stagnation_reported():
    sys = build_dual(HEAT, HALF, HALF, 1.0, np.ones(10), 10, epsilon=0.0)
    with pytest.raises(DualSolveError, match="epsilon"):
        solve_dual(sys, maxiter=2)


def test_build_dual_validation():
    with pytest.raises(ValueError):
        build_dual(HEAT, HALF, HALF, 1.0, [1.0], 21)
    with pytest.raises(ValueError):
        build_dual(HEAT, HALF, FiniteUnionSet.of((0.5, 1.0)), 0.8, [1.0], 2)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(0.0, 0.7), st.floats(0.05, 0.3), st.floats(0.0, 0.7), st.floats(0.05, 0.3),
    st.lists(st.floats(-1, 1), min_size=6, max_size=6),
)
def test_gramian_psd(g0, gw, e0, ew, x):
    sys = build_dual(HEAT, FiniteUnionSet.of((g0, g0 + gw)), FiniteUnionSet.of((e0, e0 + ew)), 1.0, np.ones(6), 6)
    x = np.asarray(x)
    assert x @ sys.Lambda @ x >= -1e-15 * (x @ x)
    assert np.linalg.eigvalsh(sys.Lambda).min() >= -1e-15


def test_control_exact_at_nodes_and_midpoints():
    grid = TimeGrid(1.0, 8)
    sys, eta, v = hum_control(3, grid)
    t = grid.midpoints[1]
    expected = np.exp(-HEAT.lambdas[:3] * (1 - t)) * eta
    np.testing.assert_allclose(v.mid_values[0, 1], expected, rtol=1e-14)
    assert np.all(v.values[0, grid.nodes > 0.5] == 0)


def test_lift_without_noise_is_identity():
    br = ensemble(5, 20)
    _, _, v = hum_control(2, br.grid)
    assert lift_control(v, NoiseModel.zero(), br) is v


def test_lift_rejects_random_coefficient():
    br = ensemble(5, 20)
    _, _, v = hum_control(2, br.grid)
    with pytest.raises(TypeError, match="deterministic noise coefficient"):
        lift_control(v, lambda t, w: 0.5, br)


def test_lifted_second_moment():
    f = 0.5
    br = ensemble(20000, 50, seed=4)
    _, _, v = hum_control(2, br.grid, E=FULL)
    u = lift_control(v, NoiseModel.constant(f), br)
    gram = np.eye(2)
    q = np.einsum("ptm,mn,ptn->pt", u.values, gram, u.values)
    mean, se = q.mean(0), q.std(0, ddof=1) / math.sqrt(br.n_paths)
    target = v.mean_sq_norm(gram) * np.exp(f**2 * br.grid.nodes)
    assert np.all(np.abs(mean - target) <= 4 * se + 1e-12 * target)
    assert lifted_linf_bound(v, NoiseModel.constant(f), gram) == pytest.approx(math.sqrt((target).max()), rel=1e-12)


def test_no_control_decays_freely():
    br = ensemble(1, 100)
    u0 = ControlField.zero(br.grid, 4, HALF, HALF)
    rep = verify_null(HEAT.truncate(4), [1.0], u0, NoiseModel.zero(), br, m=2)
    assert rep.terminal_ratio_total == pytest.approx(math.exp(-2 * PI2), rel=1e-13)


def test_pathwise_nulling_through_integrating_factor():
    """y(T) = M(T) ytil(T) on every path, with ytil the deterministic controlled state."""
    br = ensemble(200, 100, seed=2)
    F = NoiseModel.constant(0.5)
    sys, eta, v = hum_control(4, br.grid)
    b = HEAT.truncate(8)
    u = lift_control(v, F, br)
    y = solve_forward(b, [1.0], u, F, br).y[:, -1]
    ytil = solve_forward(b, [1.0], v, NoiseModel.zero(), br).y[0, -1]
    logM, _ = stochastic_exponential(F, br)
    np.testing.assert_allclose(y, np.exp(logM[:, -1])[:, None] * ytil, rtol=1e-10, atol=1e-15)


def test_scaling_is_linear():
    grid = TimeGrid(1.0, 50)
    s1, e1, v1 = hum_control(4, grid, y0=np.array([1.0, 0.2, 0, 0]))
    s2, e2, v2 = hum_control(4, grid, y0=np.array([2.0, 0.4, 0, 0]))
    np.testing.assert_allclose(e2, 2 * e1, rtol=1e-8)
    br = ensemble(50, 50)
    F = NoiseModel.constant(0.5)
    r1 = verify_null(HEAT.truncate(8), [1.0, 0.2], lift_control(v1, F, br), F, br, 4)
    r2 = verify_null(HEAT.truncate(8), [2.0, 0.4], lift_control(v2, F, br), F, br, 4)
    assert r2.cost_ratio == pytest.approx(r1.cost_ratio, rel=1e-8)


def test_more_modes_do_not_worsen_controlled_residual():
    br = ensemble(1, 200)
    b = HEAT.truncate(16)
    det = []
    for m in (2, 4, 6, 8):
        _, _, v = hum_control(m, br.grid)
        det.append(verify_null(b, [1.0], v, NoiseModel.zero(), br, m).deterministic_controlled_ratio)
    # all sit at the regularisation floor; compare up to that floor
    assert all(b_ <= a + 1e-9 for a, b_ in zip(det, det[1:]))
    assert max(det) < 1e-6


def test_full_support_benchmark_without_noise():
    br = ensemble(1, 400)
    _, _, v = hum_control(10, br.grid, G=FULL, E=FULL)
    rep = verify_null(HEAT, [1.0], v, NoiseModel.zero(), br, 10, v=v)
    assert rep.terminal_ratio_total <= 1e-3
    # full G leaves only round-off coupling into the uncontrolled modes
    assert rep.terminal_ratio_spillover <= 1e-30


def test_hum_control_satisfies_duality():
    br = ensemble(10000, 200, seed=9)
    F = NoiseModel.constant(0.5)
    _, _, v = hum_control(4, br.grid)
    u = lift_control(v, F, br)
    b = HEAT.truncate(4)
    fwd = solve_forward(b, [1.0], u, F, br)
    eta = TerminalDatum.linear_in_WT(np.ones(4), 0.5 * np.ones(4))
    bwd = solve_backward_closed_form(b, eta, F, br, sign=-1)
    assert duality_residual(fwd, bwd, u).relative <= 1e-2


def test_report_json(tmp_path):
    br = ensemble(20, 50)
    F = NoiseModel.constant(0.5)
    sys, _, v = hum_control(3, br.grid)
    rep = verify_null(HEAT.truncate(6), [1.0], lift_control(v, F, br), F, br, 3, sys.epsilon, v)
    doc = json.loads(rep.write_json(tmp_path / "n.json").read_text())
    assert doc["m"] == 3 and doc["m_sim"] == 6 and doc["epsilon"] == 1e-10
    assert doc["terminal_ratio_total"] == pytest.approx(doc["terminal_ratio_controlled"] + doc["terminal_ratio_spillover"])
    assert math.isfinite(doc["theoretical_linf"])
    assert full_gram(HEAT.truncate(3), HALF).shape == (3, 3)
