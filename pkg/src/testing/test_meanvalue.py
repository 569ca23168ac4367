import numpy as np
import pytest

from src.datamodel import AlgebraClass
from src.fields import BInfinity, CellGrid, Expression, Mesh, MultiscaleField, TrigPoly
from src.meanvalue import (
    AlgebraRep,
    ergodic_average,
    ergodicity_profile,
    mean,
    product_mean,
    reiterated_mean,
    sigma_limit,
    sigma_test,
    strong_sigma_test,
)
from src.nfunc import NFunction
from src.utils import DomainError, ResolutionError

SIN = TrigPoly.from_terms([(2 * np.pi, 0.0, 1.0)])
COS = TrigPoly.from_terms([(2 * np.pi, 1.0, 0.0)])


def _bump(z):
    return np.exp(-z[:, 0] ** 2)


def test_means_of_each_algebra():
    assert mean(TrigPoly.from_terms([(0.0, 1.5, 0.0), (1.0, 3.0, 0.0)])) == pytest.approx(1.5)
    assert mean(BInfinity(2.0, _bump, radius=6.0)) == 2.0
    cell = Mesh.unit_cell(1, 8)
    assert mean(CellGrid(cell, np.arange(8.0))) == pytest.approx(3.5)
    assert mean(Expression.parse("2 + sin(2*pi*y)**2")) == pytest.approx(2.5)


def test_representative_checks():
    with pytest.raises(DomainError):
        AlgebraRep(AlgebraClass.periodic, TrigPoly.from_terms([(1.0, 1.0, 0.0)]))
    with pytest.raises(DomainError):
        AlgebraRep.of(BInfinity(0.0, lambda z: 1.0 / (1.0 + z[:, 0] ** 2), radius=1.0))
    assert AlgebraRep.of(SIN).algebra == AlgebraClass.periodic


def test_product_means():
    c1 = TrigPoly.from_terms([(1.0, 1.0, 0.0)])
    c2 = TrigPoly.from_terms([(np.sqrt(2.0), 1.0, 0.0)])
    assert product_mean(c1, c2) == pytest.approx(0.0, abs=1e-14)
    assert product_mean(c1, c1) == pytest.approx(0.5)
    assert product_mean(SIN, None) == pytest.approx(0.0)
    assert product_mean(BInfinity(3.0, _bump, radius=6.0), COS) == pytest.approx(0.0)


def test_reiterated_mean_of_tensor_sum():
    two, three = TrigPoly.constant(2.0), TrigPoly.constant(3.0)
    assert reiterated_mean([(SIN, SIN), (two, three)]) == pytest.approx(6.0)
    u = MultiscaleField.separable(wy=SIN * SIN, vz=two)
    assert reiterated_mean(u) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        reiterated_mean(MultiscaleField.from_expression("sin(2*pi*y)"))


def test_ergodic_averages_approach_the_mean():
    u = TrigPoly.from_terms([(1.0, 1.0, 0.0), (np.sqrt(2.0), 1.0, 0.0)])
    radii = [10.0, 40.0, 160.0]
    for center in (0.0, 0.3):
        for r in radii:
            # the window average of cos(w y) is cos(w c) sin(w r) / (w r)
            exact = sum(np.cos(w * center) * np.sin(w * r) / (w * r) for w in (1.0, np.sqrt(2.0)))
            avg = ergodic_average(u, r, center=center)
            assert avg == pytest.approx(exact, abs=1e-8)
            assert abs(avg) <= (1.0 + 1.0 / np.sqrt(2.0)) / r
    profile = ergodicity_profile(u, radii)
    for r, dev in zip(radii, profile):
        assert dev <= (1.0 + 1.0 / np.sqrt(2.0)) / r


def test_ball_average_of_shifted_cosine():
    u = TrigPoly.from_terms([(0.0, 2.0, 0.0), (1.0, 1.0, 0.0)])
    # sin(pi) / pi vanishes
    assert ergodic_average(u, np.pi) == pytest.approx(2.0, abs=1e-8)
    assert ergodic_average(u, np.pi, center=1.0) == pytest.approx(2.0, abs=1e-8)
    with pytest.raises(DomainError):
        ergodic_average(u, 0.0)


def test_sigma_test_on_expressions():
    mesh = Mesh.interval(0.0, 1.0, 16384)
    u0 = MultiscaleField.from_expression("sin(2*pi*y)")
    f = MultiscaleField.from_expression("sin(2*pi*y)")
    report = sigma_test(u0, f, mesh, [1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64])
    assert report.rhs == pytest.approx(0.5, abs=1e-10)
    # 1/eps is an integer, so every pairing is exact up to roundoff
    assert max(report.gap) <= 1e-12
    assert report.decreasing_in_trend()


def test_sigma_gap_decays_with_a_slow_factor():
    mesh = Mesh.interval(0.0, 1.0, 4096)
    u0 = MultiscaleField.separable(gx=lambda x: np.exp(x[:, 0]), wy=SIN)
    f = MultiscaleField.separable(wy=SIN)
    eps_list = [0.25, 0.125, 0.0625]
    report = sigma_test(u0, f, mesh, eps_list)
    assert report.rhs == pytest.approx(0.5 * (np.e - 1.0), rel=1e-6)
    # int_0^1 e^x cos(k x) dx = (e - 1) / (1 + k^2) for k = 4 pi / eps
    expected = [0.5 * (np.e - 1.0) / (1.0 + (4.0 * np.pi / e) ** 2) for e in eps_list]
    np.testing.assert_allclose(report.gap, expected, rtol=1e-2)
    assert all(b <= a / 2.0 for a, b in zip(report.gap, report.gap[1:]))


def test_sigma_test_oscillating_pairing_vanishes():
    # u0 oscillates in z only, f in y only: the limit is M(sin) M(sin) = 0
    mesh = Mesh.interval(0.0, 1.0, 4096)
    u0 = MultiscaleField.separable(vz=SIN)
    f = MultiscaleField.separable(wy=SIN)
    report = sigma_test(u0, f, mesh, [0.25, 0.125, 0.0625], jobs=2)
    assert report.rhs == pytest.approx(0.0, abs=1e-12)
    assert all(g < 1e-3 for g in report.gap)


def test_sigma_test_rejects_bad_inputs():
    mesh = Mesh.interval(0.0, 1.0, 16)
    u0 = MultiscaleField.from_expression("sin(2*pi*y)")
    with pytest.raises(DomainError):
        sigma_test(u0, u0, mesh, [])
    with pytest.raises(DomainError):
        sigma_test(u0, u0, mesh, [0.125, 0.25])
    with pytest.raises(ResolutionError):
        sigma_test(u0, u0, mesh, [0.25])


def test_sigma_limit_separable_is_exact():
    mesh = Mesh.interval(0.0, 2.0, 64)
    u0 = MultiscaleField.separable(wy=SIN, vz=COS)
    f = MultiscaleField.separable(wy=SIN, vz=COS)
    assert sigma_limit(u0, f, mesh) == pytest.approx(2.0 * 0.5 * 0.5)


def test_strong_sigma_estimate_holds():
    mesh = Mesh.interval(0.0, 1.0, 1024)
    u0 = MultiscaleField.separable(wy=SIN)
    rows = strong_sigma_test(u0, [MultiscaleField.separable(wy=COS)], mesh, [0.25, 0.125], NFunction.power(2.0))
    assert len(rows) == 2
    assert all(r.holds for r in rows)
    # |sin - cos| has L2 mean 1, so the t^2/2 Luxemburg norm is 1/sqrt(2)
    assert rows[0].limit_distance == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-6)
