import numpy as np
import pytest

from src.cell import (
    FluxTable,
    HEvaluator,
    effective_h,
    effective_q,
    solve_cell_y,
    solve_cell_z,
    tabulate_flux,
)
from src.coeff import builtin_problem
from src.fields import Mesh
from src.utils import DomainError, FluxCache, RangeError


@pytest.fixture(scope="module")
def lin1d():
    return builtin_problem("lin1d")


def test_fast_cell_flux_is_harmonic_mean(lin1d):
    # (2 + sin 2 pi y) at y = 1/4 times the harmonic mean sqrt(3) of 2 + sin 2 pi z
    sol = solve_cell_z(lin1d, 0.25, 0.0, 1.0, lin1d.z_mesh(256))
    assert sol.flux_sample[0] == pytest.approx(3.0 * np.sqrt(3.0), abs=1e-6)
    assert sol.iterations <= 2
    assert sol.residual < 1e-8
    assert abs(sol.corrector.mean()) < 1e-12
    assert sol.tangent[0, 0] == pytest.approx(3.0 * np.sqrt(3.0), abs=1e-6)


def test_fast_cell_flux_is_linear_in_xi(lin1d):
    mesh = lin1d.z_mesh(64)
    h1 = effective_h(lin1d, 0.1, 0.0, 1.0, mesh)
    h3 = effective_h(lin1d, 0.1, 0.0, -3.0, mesh)
    np.testing.assert_allclose(h3, -3.0 * h1, rtol=1e-10)


def test_effective_flux_lin1d(lin1d):
    q = effective_q(lin1d, 0.0, 1.0, lin1d.y_mesh(256), lin1d.z_mesh(256))
    assert q[0] == pytest.approx(3.0, abs=1e-5)


def test_constant_coefficient_has_no_corrector():
    a = builtin_problem("const1d", c0=2.0)
    sol = solve_cell_y(a, 0.0, 0.7, a.y_mesh(16), a.z_mesh(16))
    assert sol.flux_sample[0] == pytest.approx(1.4, rel=1e-12)
    np.testing.assert_allclose(sol.corrector.values, 0.0, atol=1e-14)


def test_zeta_dependent_flux():
    a = builtin_problem("deg1d")
    q = effective_q(a, 1.0, 1.0, a.y_mesh(16), a.z_mesh(16))
    assert q[0] == pytest.approx(0.7, rel=1e-8)


def test_cell_problems_need_periodic_meshes(lin1d):
    with pytest.raises(DomainError):
        solve_cell_z(lin1d, 0.0, 0.0, 1.0, Mesh.interval(0.0, 1.0, 8))


def test_plap2d_flux_is_odd_and_monotone():
    a = builtin_problem("plap2d", ay=0.5)
    my, mz = a.y_mesh(4), a.z_mesh(4)
    cache = FluxCache(seed="plap2d")
    xi = np.array([0.5, -0.25])
    q_plus = effective_q(a, 0.0, xi, my, mz, cache=cache)
    q_minus = effective_q(a, 0.0, -xi, my, mz, cache=cache)
    np.testing.assert_allclose(q_minus, -q_plus, rtol=1e-7, atol=1e-9)
    other = np.array([-0.3, 0.8])
    q_other = effective_q(a, 0.0, other, my, mz, cache=cache)
    assert np.dot(q_plus - q_other, xi - other) > 0.0


def test_h_evaluator_memoizes():
    a = builtin_problem("plap2d")
    hev = HEvaluator(a, a.z_mesh(4))
    ys = np.zeros((3, 2))
    lams = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    H, dH = hev.evaluate(ys, 0.0, lams)
    assert hev.solves == 2
    np.testing.assert_allclose(H[0], H[1])
    H2, _ = hev.evaluate(ys, 0.0, lams)
    assert hev.solves == 2
    np.testing.assert_allclose(H2, H)
    assert dH.shape == (3, 2, 2)


def test_h_evaluator_separates_coefficients_in_a_shared_cache():
    cache = FluxCache(seed="shared")
    ys, lams = np.zeros((1, 2)), np.array([[2.0, 0.0]])
    cubic, quartic = builtin_problem("plap2d", p=3.0), builtin_problem("plap2d", p=4.0)
    H3, _ = HEvaluator(cubic, cubic.z_mesh(4), cache).evaluate(ys, 0.0, lams)
    shared = HEvaluator(quartic, quartic.z_mesh(4), cache)
    H4, _ = shared.evaluate(ys, 0.0, lams)
    assert shared.solves == 1
    alone, _ = HEvaluator(quartic, quartic.z_mesh(4)).evaluate(ys, 0.0, lams)
    np.testing.assert_allclose(H4, alone)
    assert not np.allclose(H4, H3)


def _table():
    r = np.array([-0.5, 0.0, 0.5])
    xi = np.array([-1.0, 0.0, 1.0])
    q = np.broadcast_to(3.0 * xi[None, :, None], (3, 3, 1)).copy()
    return FluxTable(r, (xi,), q, {"problem": "lin1d", "zeta_dependent": False})


def test_flux_table_query_and_clamp():
    table = _table()
    assert table.query(0.0, 0.5)[0, 0] == pytest.approx(1.5)
    assert table.clamped == 0
    assert table(0.0, 2.0)[0, 0] == pytest.approx(3.0)
    assert table.clamped == 1
    dr, dxi = table.derivatives(0.2, 0.25)
    assert dr[0, 0] == pytest.approx(0.0)
    assert dxi[0, 0, 0] == pytest.approx(3.0)


def test_flux_table_coverage():
    table = _table()
    assert table.covers((0.0, 0.0), (-0.5, 0.5))
    assert not table.covers((0.0, 0.0), (-2.0, 2.0))
    # r is ignored for zeta-independent tables
    assert table.covers((-5.0, 5.0), (-0.5, 0.5))


def test_flux_table_validation():
    with pytest.raises(DomainError):
        FluxTable(np.array([0.0, 0.0]), (np.array([0.0, 1.0]),), np.zeros((2, 2, 1)))
    with pytest.raises(DomainError):
        FluxTable(np.array([0.0]), (np.array([0.0, 1.0]),), np.zeros((1, 3, 1)))


def test_flux_table_csv(tmp_path):
    table = _table()
    back = FluxTable.from_csv(table.to_csv(tmp_path / "flux_table.csv"))
    np.testing.assert_allclose(back.q_values, table.q_values)
    assert back.metadata["problem"] == "lin1d"
    (tmp_path / "bad.csv").write_text("r,xi_1,q_1\n0,0,0\n")
    with pytest.raises(RangeError):
        FluxTable.from_csv(tmp_path / "bad.csv")


def test_tabulate_flux_lin1d(lin1d):
    table = tabulate_flux(lin1d, [-0.5, 0.0, 0.5], [-1.0, 0.0, 1.0], lin1d.y_mesh(64), lin1d.z_mesh(64), jobs=1)
    np.testing.assert_allclose(table.q_values[..., 0], 3.0 * np.array([[-1.0, 0.0, 1.0]] * 3), atol=1e-4)
    assert table.metadata["node_solves"] == 3
    assert table.metadata["zeta_dependent"] is False
    # one unit tensor serves every node of a separable linear coefficient
    assert table.metadata["z_solves"] == 1


def test_effective_flux_converges_under_refinement(lin1d):
    errs = [abs(effective_q(lin1d, 0.0, 1.0, lin1d.y_mesh(n), lin1d.z_mesh(n))[0] - 3.0) for n in (8, 16, 32, 64)]
    assert all(b <= a + 1e-10 for a, b in zip(errs, errs[1:])), errs
    assert errs[-1] < 1e-6


def test_flux_table_agrees_with_cell_solves():
    a = builtin_problem("deg1d")
    y_mesh, z_mesh = a.y_mesh(16), a.z_mesh(16)
    r_grid, xi_grid = [0.5, 1.0], [0.5, 1.0]
    table = tabulate_flux(a, r_grid, xi_grid, y_mesh, z_mesh, jobs=1)
    for r in r_grid:
        for xi in xi_grid:
            q = effective_q(a, r, xi, y_mesh, z_mesh)
            assert table.query(r, xi)[0, 0] == pytest.approx(q[0], rel=1e-8)
    assert table.clamped == 0
    # out-of-range queries take the value at the nearest corner node
    corner = effective_q(a, 1.0, 1.0, y_mesh, z_mesh)
    assert table.query(3.0, 4.0)[0, 0] == pytest.approx(corner[0], rel=1e-8)
    assert table.clamped == 1


def _monotone_pairs(coeff, n, pairs, seed):
    rng = np.random.default_rng(seed)
    my, mz = coeff.y_mesh(n), coeff.z_mesh(n)
    cache = FluxCache(seed=coeff.name)
    products = []
    for _ in range(pairs):
        xi1, xi2 = rng.uniform(-2.0, 2.0, size=(2, coeff.dim))
        q1 = effective_q(coeff, 0.0, xi1, my, mz, cache=cache)
        q2 = effective_q(coeff, 0.0, xi2, my, mz, cache=cache)
        products.append(float(np.dot(q1 - q2, xi1 - xi2)))
    return np.array(products)


def test_lin1d_effective_flux_is_strictly_monotone(lin1d):
    assert np.all(_monotone_pairs(lin1d, 64, 100, seed=1) > 0.0)


@pytest.mark.slow
def test_plap2d_effective_flux_is_strictly_monotone():
    assert np.all(_monotone_pairs(builtin_problem("plap2d"), 64, 100, seed=2) > 0.0)
