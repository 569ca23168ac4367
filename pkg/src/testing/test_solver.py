import numpy as np
import pytest

from src.cell import FluxTable
from src.coeff import builtin_problem
from src.datamodel import FluxMode
from src.fields import Field, Mesh, gradient, luxemburg_norm
from src.nfunc import NFunction
from src.solver import EllipticProblem, build_correctors, corrector_reconstruct, solve, weak_form_defect
from src.utils import DomainError, ResolutionError


def _ones(mesh):
    return Field(mesh, np.ones(mesh.size))


def _linear_table(slope, lo=-1.0, hi=1.0):
    xi = np.linspace(lo, hi, 5)
    return FluxTable(np.array([0.0]), (xi,), (slope * xi)[None, :, None], {"zeta_dependent": False})


@pytest.fixture(scope="module")
def macro_lin1d():
    mesh = Mesh.interval(0.0, 1.0, 1024)
    return solve(EllipticProblem.effective(_linear_table(3.0), mesh, _ones(mesh)))


def test_macro_solve_matches_closed_form(macro_lin1d):
    x = macro_lin1d.solution.mesh.points()[:, 0]
    np.testing.assert_allclose(macro_lin1d.solution.flat, x * (1 - x) / 6.0, atol=1e-4)
    assert macro_lin1d.solution.flat[0] == 0.0
    assert macro_lin1d.solution.flat[-1] == 0.0
    assert macro_lin1d.clamped == 0
    assert macro_lin1d.mode == FluxMode.effective


def test_direct_linear_solve():
    a = builtin_problem("lin1d")
    mesh = Mesh.interval(0.0, 1.0, 256)
    problem = EllipticProblem.direct(a, 0.5, mesh, _ones(mesh))
    report = solve(problem)
    assert report.newton_iters <= 2
    assert report.residual < 1e-8
    u = report.solution.flat
    assert u[0] == 0.0 and u[-1] == 0.0
    stats = report.stats
    assert stats.mode == FluxMode.direct
    assert np.isfinite(stats.rhs_dual_norm) and stats.sobolev_norm > 0.0

    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.normal(size=mesh.size)
        v[mesh.boundary] = 0.0
        v /= np.linalg.norm(v)
        assert weak_form_defect(problem, report.solution, Field(mesh, v)) < 1e-8


def test_constant_coefficient_closed_form():
    a = builtin_problem("const1d", c0=2.0)
    mesh = Mesh.interval(0.0, 1.0, 64)
    report = solve(EllipticProblem.direct(a, 0.5, mesh, _ones(mesh)))
    x = mesh.points()[:, 0]
    np.testing.assert_allclose(report.solution.flat, x * (1 - x) / 4.0, atol=1e-10)


def test_zeta_dependent_direct_solve():
    a = builtin_problem("deg1d")
    mesh = Mesh.interval(0.0, 1.0, 64)
    problem = EllipticProblem.direct(a, 0.5, mesh, Field(mesh, 4.0 * np.ones(mesh.size)))
    report = solve(problem)
    assert report.residual < 1e-6
    assert report.newton_iters >= 1
    assert np.all(report.solution.flat >= -1e-12)
    history = report.history
    assert len(history) == report.newton_iters + 1
    assert all(b < a for a, b in zip(history, history[1:])), history


def test_nonlinear_2d_direct_solve():
    a = builtin_problem("plap2d")
    mesh = Mesh.box((0.0, 0.0), (1.0, 1.0), 16)
    report = solve(EllipticProblem.direct(a, 0.5, mesh, _ones(mesh)))
    assert report.residual < 1e-6
    u = report.solution.flat
    np.testing.assert_array_equal(u[mesh.boundary], 0.0)
    assert u.max() > 0.0


def test_problem_validation():
    a = builtin_problem("lin1d")
    coarse = Mesh.interval(0.0, 1.0, 16)
    with pytest.raises(ResolutionError):
        EllipticProblem.direct(a, 0.25, coarse, _ones(coarse))
    with pytest.raises(DomainError):
        EllipticProblem.direct(a, 1.5, coarse, _ones(coarse))
    cell = Mesh.unit_cell(1, 16)
    with pytest.raises(DomainError):
        EllipticProblem.direct(a, 0.5, cell, _ones(cell))
    with pytest.raises(DomainError):
        EllipticProblem(coarse, FluxMode.effective, _ones(coarse))
    with pytest.raises(DomainError):
        solve(EllipticProblem.effective(_linear_table(3.0), coarse, _ones(coarse)), tol=0.0)


def test_clamped_queries_are_reported():
    mesh = Mesh.interval(0.0, 1.0, 64)
    xi = np.linspace(-1.0, 1.0, 5)
    q = np.broadcast_to((3.0 * xi)[None, :, None], (2, 5, 1)).copy()
    # max u0 = 1/24 lies above the r range [0, 0.01]
    table = FluxTable(np.array([0.0, 0.01]), (xi,), q, {"zeta_dependent": True})
    report = solve(EllipticProblem.effective(table, mesh, _ones(mesh), nf=NFunction.power(2.0)))
    assert report.clamped > 0
    x = mesh.points()[:, 0]
    np.testing.assert_allclose(report.solution.flat, x * (1 - x) / 6.0, atol=1e-6)


def test_constant_coefficient_reconstruction_is_trivial():
    a = builtin_problem("const1d", c0=2.0)
    coarse = Mesh.interval(0.0, 1.0, 64)
    u0 = solve(EllipticProblem.effective(_linear_table(2.0), coarse, _ones(coarse))).solution
    fine = Mesh.interval(0.0, 1.0, 128)
    rec = corrector_reconstruct(u0, a, 0.25, fine, recon_n=8, cell_n=16)
    np.testing.assert_allclose(rec.gradient.values, rec.naive_gradient.values, atol=1e-12)
    np.testing.assert_allclose(rec.first_order.flat, np.interp(fine.points()[:, 0], coarse.axes[0], u0.flat))
    with pytest.raises(DomainError):
        rec.correctors.sample(u0, 0.0, fine)


def test_reconstruction_beats_macroscopic_gradient(macro_lin1d):
    a = builtin_problem("lin1d")
    eps = 0.25
    mesh = Mesh.interval(0.0, 1.0, 1024)
    u_eps = solve(EllipticProblem.direct(a, eps, mesh, _ones(mesh))).solution
    correctors = build_correctors(macro_lin1d.solution, a, recon_n=32, cell_n=64)
    rec = correctors.sample(macro_lin1d.solution, eps, mesh)
    nf = a.phi
    du = gradient(u_eps)
    assert luxemburg_norm(du - rec.gradient, nf) < 0.5 * luxemburg_norm(du - rec.naive_gradient, nf)
    micro = correctors.micro_gradient()
    assert micro.variables == {"x", "y", "z"}


def test_first_order_error_shrinks_with_eps(macro_lin1d):
    a = builtin_problem("lin1d")
    mesh = Mesh.interval(0.0, 1.0, 1024)
    correctors = build_correctors(macro_lin1d.solution, a, recon_n=32, cell_n=64)
    errs = []
    for eps in (0.25, 0.125, 0.0625):
        u_eps = solve(EllipticProblem.direct(a, eps, mesh, _ones(mesh))).solution
        rec = correctors.sample(macro_lin1d.solution, eps, mesh)
        errs.append(luxemburg_norm(u_eps - rec.first_order, a.phi))
    assert all(nxt < prev for prev, nxt in zip(errs, errs[1:])), errs
