import numpy as np
import pytest

from stokes_biot.spaces import interpolate
from stokes_biot.verification import (CSV_HEADER, ERROR_FIELDS, RateTable, convergence_mesh, error_norms,
                                      lambda_robustness, manufactured_case, reference_params, temporal_study)

H = 1e-5
RNG = np.random.default_rng(42)
FLUID_PTS = np.column_stack([RNG.uniform(-1, 1, 20), RNG.uniform(0, 2, 20)])
POROUS_PTS = np.column_stack([RNG.uniform(-1, 1, 20), RNG.uniform(-2, 0, 20)])
T0 = 0.37


def fd_grad(f, x, y, t):
    return np.stack([(f(x + H, y, t) - f(x - H, y, t)) / (2 * H), (f(x, y + H, t) - f(x, y - H, t)) / (2 * H)],
                    axis=-1)


def fd_time(f, x, y, t):
    return (f(x, y, t + H) - f(x, y, t - H)) / (2 * H)


def fd_div_rows(tensor, x, y, t):
    # row-wise divergence of a 2x2 tensor field
    dx = (tensor(x + H, y, t) - tensor(x - H, y, t)) / (2 * H)
    dy = (tensor(x, y + H, t) - tensor(x, y - H, t)) / (2 * H)
    return dx[:, 0] + dy[:, 1]


@pytest.fixture
def case():
    return manufactured_case(reference_params(rho_s=1.7, c0=0.3))


@pytest.mark.parametrize("name,pts", [("u", FLUID_PTS), ("pF", FLUID_PTS), ("d", POROUS_PTS), ("pP", POROUS_PTS)])
def test_gradients_match_finite_differences(case, name, pts):
    f, g = getattr(case, name), getattr(case, "grad_" + name)
    x, y = pts.T
    fd = fd_grad(f, x, y, T0)
    exact = np.asarray(g(x, y, T0))
    if exact.ndim == 3:  # vector field: (component, derivative, point)
        np.testing.assert_allclose(exact, np.moveaxis(fd, -1, 1), atol=1e-6)
    else:
        np.testing.assert_allclose(exact, np.moveaxis(fd, -1, 0), atol=1e-6)


def test_time_derivatives_match_finite_differences(case):
    x, y = POROUS_PTS.T
    np.testing.assert_allclose(case.d_t(x, y, T0), fd_time(case.d, x, y, T0), atol=1e-6)
    np.testing.assert_allclose(case.pP_t(x, y, T0), fd_time(case.pP, x, y, T0), atol=1e-6)
    x, y = FLUID_PTS.T
    np.testing.assert_allclose(case.u_t(x, y, T0), fd_time(case.u, x, y, T0), atol=1e-6)


def test_displacement_is_solenoidal_and_total_pressure_is_scaled_pore_pressure(case):
    x, y = POROUS_PTS.T
    np.testing.assert_allclose(case.div_d(x, y, T0), 0.0, atol=1e-12)
    np.testing.assert_allclose(case.phi(x, y, T0), case.params.alpha * case.pP(x, y, T0), rtol=1e-15)
    d = case.d
    fd_div = (d(x + H, y, T0)[0] - d(x - H, y, T0)[0] + d(x, y + H, T0)[1] - d(x, y - H, T0)[1]) / (2 * H)
    np.testing.assert_allclose(fd_div, 0.0, atol=1e-6)


def test_stationary_fluid_source_balances_stress(case):
    x, y = FLUID_PTS.T
    np.testing.assert_allclose(case.fluid_force(x, y, T0), -fd_div_rows(case.fluid_stress, x, y, T0), atol=1e-5)


def test_transient_fluid_source_includes_inertia():
    case = manufactured_case(reference_params(rho_f=1.4), transient=True)
    x, y = FLUID_PTS.T
    u = case.u(x, y, T0)
    G = np.moveaxis(fd_grad(case.u, x, y, T0), -1, 1)  # (component, derivative, point)
    inertia = case.params.rho_f * (fd_time(case.u, x, y, T0) + np.einsum("ijn,jn->in", G, u))
    expected = -fd_div_rows(case.fluid_stress, x, y, T0) + inertia
    np.testing.assert_allclose(case.fluid_force(x, y, T0), expected, atol=1e-5)


def test_body_load_balances_porous_stress(case):
    x, y = POROUS_PTS.T
    np.testing.assert_allclose(case.params.rho_s * case.body_load(x, y, T0),
                               -fd_div_rows(case.porous_stress, x, y, T0), atol=1e-4)


def test_darcy_source_balances_storage_and_flux(case):
    p = case.params
    x, y = POROUS_PTS.T
    k = float(p.kappa) / p.mu_f
    lap = (case.pP(x + H, y, T0) + case.pP(x - H, y, T0) + case.pP(x, y + H, T0) + case.pP(x, y - H, T0)
           - 4 * case.pP(x, y, T0)) / H**2
    expected = p.c0 * fd_time(case.pP, x, y, T0) - k * lap
    np.testing.assert_allclose(case.darcy_source(x, y, T0), expected, atol=1e-4)


def test_interface_residuals_follow_their_definitions(case):
    x = np.linspace(-0.9, 0.9, 7)
    y = np.zeros_like(x)
    nx, ny = 0.0, -1.0
    p = case.params
    tr = case.fluid_traction(x, y, T0, nx, ny)
    np.testing.assert_allclose(case.m3(x, y, T0, nx, ny), tr[1] * ny + case.pP(x, y, T0), atol=1e-13)
    tx, ty = ny, -nx
    slip = case.u(x, y, T0) - case.d_t(x, y, T0)
    coef = p.gamma * p.mu_f / np.sqrt(float(p.kappa))
    np.testing.assert_allclose(case.m4(x, y, T0, nx, ny), tr[0] * tx + tr[1] * ty + coef * (slip[0] * tx + slip[1] * ty),
                               atol=1e-12)
    np.testing.assert_allclose(case.m2(x, y, T0, nx, ny), tr - case.porous_traction(x, y, T0, nx, ny), atol=1e-13)


def test_array_permeability_rejected():
    with pytest.raises(ValueError, match="constant"):
        manufactured_case(reference_params(kappa=np.ones(3)))


def test_error_norms_of_zero_state_equal_field_norms():
    case = manufactured_case()
    pr = case.problem(convergence_mesh(2))
    zero = pr.zero_state(t=T0)
    e = error_norms(pr, zero, case)
    assert set(e) == set(ERROR_FIELDS)
    assert all(v > 0 for v in e.values())
    # phi = alpha pP, so the L2 norm of phi is at most the H1 norm of pP
    assert e["phi"] <= e["pP"] + 1e-12


def test_error_norms_shrink_for_interpolated_fields():
    errs = []
    for level in (1, 2, 3):
        case = manufactured_case()
        pr = case.problem(convergence_mesh(level))
        st = pr.zero_state(t=T0)
        for name in ERROR_FIELDS:
            setattr(st, name, interpolate(pr.spaces[name], getattr(case, name), T0))
        errs.append(error_norms(pr, st, case))
    for name, order in (("u", 2), ("d", 2), ("pF", 2), ("phi", 2), ("pP", 2)):
        rate = np.log2(errs[1][name] / errs[2][name])
        assert rate > order - 0.3, (name, rate)


def test_rate_table_rates_and_csv():
    table = RateTable()
    for k, h in enumerate((0.5, 0.25, 0.125)):
        table.add(10 * 4**k, h, {f: (i + 1) * h ** (i + 1) for i, f in enumerate(ERROR_FIELDS)})
    for i, f in enumerate(ERROR_FIELDS):
        rates = table.rates(f)
        assert rates[0] is None
        np.testing.assert_allclose(rates[1:], i + 1, rtol=1e-12)
    text = table.to_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 4
    assert lines[1].split(",")[3] == ""
    assert float(lines[2].split(",")[3]) == pytest.approx(1.0)
    assert "rate" in table.format()
    assert table.final_rates()["pP"] == pytest.approx(4.0)


def test_temporal_study_rejects_non_dividing_step():
    with pytest.raises(ValueError, match="divide"):
        temporal_study([0.3], level=1, T=1.0)


def test_lambda_robustness_reports_every_lambda():
    out = lambda_robustness([1.0, 1e4], level=1, dt=0.01, T=0.01)
    assert set(out) == {1.0, 1e4}
    for errors in out.values():
        assert set(errors) == set(ERROR_FIELDS)
        assert all(np.isfinite(v) for v in errors.values())
