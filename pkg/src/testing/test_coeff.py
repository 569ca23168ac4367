import numpy as np
import pytest

from src.coeff import builtin_problem, catalog_names, coefficient_from_config, effective_integrand, validate
from src.datamodel import CoefficientSpec, DomainSpec, NFunctionKind, ProblemConfig, StructureClass
from src.utils import CatalogError, ConfigError, DomainError


def test_catalog_lists_builtin_problems():
    names = catalog_names()
    for name in ("lin1d", "plap2d", "deg1d", "ap1d", "binf1d", "const1d"):
        assert name in names
    assert "flipped1d" not in names
    assert "flipped1d" in catalog_names(include_planted=True)


def test_unknown_problem_and_bad_parameters():
    with pytest.raises(CatalogError):
        builtin_problem("nope")
    with pytest.raises(ConfigError):
        builtin_problem("lin1d", bogus=1.0)
    with pytest.raises(DomainError):
        builtin_problem("plap2d", p=1.5)


def test_lin1d_flux_values():
    a = builtin_problem("lin1d")
    lam = np.array([[1.0], [-2.0]])
    F = a.flux(np.array([[0.25], [0.75]]), np.array([[0.25], [0.0]]), 0.0, lam)
    np.testing.assert_allclose(F, [[9.0], [-2.0 * 1.0 * 2.0]])
    assert a.linear and a.separable and not a.zeta_dependent
    assert a.structure_class == StructureClass.periodic_periodic
    assert effective_integrand(a) is a


def test_plap2d_is_the_p_laplacian():
    a = builtin_problem("plap2d")
    # c(y, z) = 1 * (2 + 1) and |lambda|^(p-2) = 2 at p = 3
    F = a.flux(np.array([[0.1, 0.1]]), np.array([[0.25, 0.25]]), 0.0, np.array([[2.0, 0.0]]))
    np.testing.assert_allclose(F, [[12.0, 0.0]])
    assert a.phi.kind == NFunctionKind.power and a.phi.p == 3.0
    shifted = builtin_problem("plap2d", kappa=1.0)
    F = shifted.flux(np.array([[0.1, 0.1]]), np.array([[0.25, 0.25]]), 0.0, np.array([[2.0, 0.0]]))
    np.testing.assert_allclose(F, [[18.0, 0.0]])
    assert shifted.phi.kind == NFunctionKind.shifted_power
    J = a.jacobian(np.zeros((1, 2)), np.zeros((1, 2)), 0.0, np.zeros((1, 2)))
    np.testing.assert_array_equal(J, 0.0)


@pytest.mark.parametrize("kappa", [0.0, 1.0])
def test_plap2d_jacobian_matches_differences(kappa):
    a = builtin_problem("plap2d", kappa=kappa, ay=0.5)
    rng = np.random.default_rng(3)
    y, z, lam = rng.uniform(0, 1, (20, 2)), rng.uniform(0, 1, (20, 2)), rng.normal(size=(20, 2))
    J = a.jacobian(y, z, 0.0, lam)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (a.flux(y, z, 0.0, lam + e) - a.flux(y, z, 0.0, lam - e)) / (2 * h)
        np.testing.assert_allclose(J[:, :, k], fd, rtol=1e-5, atol=1e-7)


def test_monotonicity_on_random_pairs():
    rng = np.random.default_rng(7)
    for name in ("lin1d", "plap2d", "deg1d", "ap1d", "binf1d"):
        a = builtin_problem(name)
        d = a.dim
        y, z = rng.uniform(0, 1, (500, d)), rng.uniform(0, 1, (500, d))
        zeta = rng.uniform(-3, 3, 500)
        lam, lam2 = rng.normal(size=(500, d)), rng.normal(size=(500, d))
        gap = np.sum((a.flux(y, z, zeta, lam) - a.flux(y, z, zeta, lam2)) * (lam - lam2), axis=1)
        assert np.all(gap >= 0.0), name


def test_deg1d_modulus():
    a = builtin_problem("deg1d")
    # theta(0) = h(0) = 0.9 and theta(1) = h(1) = 0.7 for Phi = t^2/2
    np.testing.assert_allclose(a.theta([0.0, 1.0]), [0.9, 0.7], rtol=1e-10)
    F = a.flux(0.3, 0.6, np.array([0.0, 1.0]), 1.0)
    np.testing.assert_allclose(F[:, 0], [0.9, 0.7], rtol=1e-10)
    assert a.zeta_dependent
    assert np.all(a.zeta_jacobian(0.3, 0.6, 0.5, 1.0) < 0.0)


@pytest.mark.parametrize("name", catalog_names())
def test_validate_catalog_problem(name):
    report = validate(builtin_problem(name), samples=10_000, seed=0)
    failed = [c.name for c in report.checks if not c.passed]
    assert report.all_passed, failed


def test_validate_reports_planted_violation():
    report = validate(builtin_problem("flipped1d"), samples=1000, seed=1)
    assert not report.all_passed
    positivity = report.check("positivity")
    assert not positivity.passed
    assert positivity.witness is not None and "lam" in positivity.witness


def test_validate_is_seeded():
    a = builtin_problem("lin1d")
    first = validate(a, samples=1000, seed=5).model_dump()
    assert validate(a, samples=1000, seed=5).model_dump() == first
    with pytest.raises(DomainError):
        validate(a, samples=10)


def test_coefficient_from_config():
    problem = ProblemConfig(coefficient=CoefficientSpec(name="const1d", c0=3.0))
    a = coefficient_from_config(problem)
    np.testing.assert_allclose(a.flux(0.1, 0.2, 0.0, 2.0), [[6.0]])
    with pytest.raises(ConfigError):
        coefficient_from_config(ProblemConfig(coefficient=CoefficientSpec(name="plap2d")))
    with pytest.raises(ConfigError):
        coefficient_from_config(ProblemConfig(coefficient=CoefficientSpec(name="lin1d", expression="y")))
    two_d = ProblemConfig(
        coefficient=CoefficientSpec(name="linear", expression="1 + y1*0 + z2*0"),
        domain=DomainSpec(dim=2, lo=[0.0, 0.0], hi=[1.0, 1.0], n=8),
    )
    assert coefficient_from_config(two_d).dim == 2
