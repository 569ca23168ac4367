import numpy as np
import pytest

from src.datamodel import AlgebraClass, FieldKind
from src.fields import (
    BInfinity,
    Field,
    Mesh,
    MultiscaleField,
    QuadratureOperator,
    TrigPoly,
    gradient,
    holder_pairing,
    interpolate,
    luxemburg_norm,
    read_field_csv,
    sobolev_norm,
    trace_sample,
    write_field_csv,
)
from src.nfunc import NFunction
from src.utils import DomainError, KindError, ShapeError


def test_mesh_validation():
    with pytest.raises(DomainError):
        Mesh(3, (0.0,) * 3, (1.0,) * 3, 4)
    with pytest.raises(DomainError):
        Mesh.interval(1.0, 0.0, 4)
    with pytest.raises(DomainError):
        Mesh.interval(0.0, 1.0, 1)
    with pytest.raises(DomainError):
        Mesh.box((0.0, 0.0), (1.0, 1.0), 1024)


def test_mesh_weights_and_boundary():
    mesh = Mesh.box((0.0, -1.0), (2.0, 1.0), 8)
    assert mesh.weights.sum() == pytest.approx(mesh.volume)
    assert mesh.boundary.sum() == 4 * 8
    cell = Mesh.unit_cell(2, 8)
    assert cell.size == 64
    assert cell.weights.sum() == pytest.approx(1.0)
    assert not cell.boundary.any()


def test_field_shape_and_kind_errors():
    mesh = Mesh.interval(0.0, 1.0, 8)
    with pytest.raises(ShapeError):
        Field(mesh, np.zeros(3))
    other = Mesh.interval(0.0, 2.0, 8)
    with pytest.raises(ShapeError):
        Field.zeros(mesh) + Field.zeros(other)
    vec = Field(mesh, np.zeros((9, 1)), FieldKind.vector)
    with pytest.raises(KindError):
        Field.zeros(mesh) + vec
    with pytest.raises(KindError):
        gradient(vec)


def test_luxemburg_norm_of_constant():
    mesh = Mesh.interval(0.0, 1.0, 16)
    one = Field(mesh, np.ones(mesh.size))
    # int Phi(1/delta) = 1/(2 delta^2) = 1
    assert luxemburg_norm(one, NFunction.power(2.0)) == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-10)
    assert luxemburg_norm(Field.zeros(mesh), NFunction.power(2.0)) == 0.0


def test_holder_pairing_bound():
    mesh = Mesh.interval(0.0, 1.0, 64)
    rng = np.random.default_rng(1)
    for nf in (NFunction.power(2.0), NFunction.power(3.0), NFunction.power_log(1.0)):
        u = Field(mesh, rng.normal(size=mesh.size))
        v = Field(mesh, rng.normal(size=mesh.size))
        lhs, bound = holder_pairing(u, v, nf)
        assert lhs <= bound * (1.0 + 1e-9)


def test_gradient_exact_for_quadratics():
    mesh = Mesh.interval(0.0, 1.0, 10)
    u = Field.from_function(mesh, lambda p: p[:, 0] ** 2)
    np.testing.assert_allclose(gradient(u).flat[:, 0], 2.0 * mesh.points()[:, 0], atol=1e-12)
    box = Mesh.box((0.0, 0.0), (1.0, 1.0), 6)
    w = Field.from_function(box, lambda p: p[:, 0] + 3.0 * p[:, 1])
    np.testing.assert_allclose(gradient(w).flat, np.tile([1.0, 3.0], (box.size, 1)), atol=1e-12)


def test_sobolev_norm_adds_gradient_part():
    mesh = Mesh.interval(0.0, 1.0, 32)
    u = Field.from_function(mesh, lambda p: p[:, 0])
    nf = NFunction.power(2.0)
    assert sobolev_norm(u, nf) == pytest.approx(luxemburg_norm(u, nf) + 1.0 / np.sqrt(2.0), rel=1e-9)


def test_periodic_interpolation_wraps():
    cell = Mesh.unit_cell(1, 16)
    u = Field.from_function(cell, lambda p: np.sin(2 * np.pi * p[:, 0]))
    pts = np.array([[0.25], [1.25], [-0.75]])
    vals = interpolate(u, pts)
    np.testing.assert_allclose(vals, vals[0], atol=1e-14)


def test_quadrature_operator_linear_fields():
    mesh = Mesh.box((0.0, 0.0), (1.0, 2.0), 4)
    op = QuadratureOperator(mesh)
    u = mesh.points() @ np.array([1.0, 2.0])
    np.testing.assert_allclose(op.gradient_at(u), np.tile([1.0, 2.0], (op.nq, 1)), atol=1e-12)
    np.testing.assert_allclose(op.value_at(u), op.points @ np.array([1.0, 2.0]), atol=1e-12)
    assert op.weights.sum() == pytest.approx(mesh.volume)


def test_periodic_stiffness_kills_constants():
    cell = Mesh.unit_cell(2, 6)
    op = QuadratureOperator(cell)
    K = op.stiffness(np.broadcast_to(np.eye(2), (1, op.nq, 2, 2)))
    np.testing.assert_allclose(K @ np.ones(cell.size), 0.0, atol=1e-10)
    np.testing.assert_allclose((K - K.T).toarray(), 0.0, atol=1e-12)


def test_trig_poly_means_and_products():
    s = TrigPoly.from_terms([(2 * np.pi, 0.0, 1.0)])
    assert s.mean() == 0.0
    assert (s * s).mean() == pytest.approx(0.5)
    c = TrigPoly.from_terms([(0.0, 2.0, 0.0), (np.sqrt(2.0), 1.0, 0.0)])
    assert c.mean() == pytest.approx(2.0)
    assert c.algebra == AlgebraClass.almost_periodic
    assert s.algebra == AlgebraClass.periodic
    y = np.linspace(0, 3, 7)[:, None]
    np.testing.assert_allclose((s * s)(y), np.sin(2 * np.pi * y[:, 0]) ** 2, atol=1e-12)


def test_multiscale_field_evaluation():
    f = MultiscaleField.from_expression("x + sin(2*pi*y)*cos(2*pi*z)")
    x = np.array([[0.5]])
    assert f.evaluate(x, np.array([[0.25]]), np.array([[0.0]]))[0] == pytest.approx(1.5)
    sep = MultiscaleField.separable(wy=TrigPoly.constant(2.0), vz=BInfinity(1.0, lambda z: np.exp(-z[:, 0] ** 2), 6.0))
    assert sep.variables == {"y", "z"}
    assert sep.evaluate(x, x, np.array([[0.0]]))[0] == pytest.approx(4.0)


def test_trace_sample_checks_scales():
    mesh = Mesh.interval(0.0, 1.0, 64)
    f = MultiscaleField.from_expression("sin(2*pi*y)")
    u = trace_sample(f, 0.25, 0.0625, mesh)
    np.testing.assert_allclose(u.flat, np.sin(2 * np.pi * mesh.points()[:, 0] / 0.25), atol=1e-12)
    with pytest.raises(DomainError):
        trace_sample(f, 0.25, 0.5, mesh)


def test_field_csv(tmp_path):
    mesh = Mesh.box((0.0, 0.0), (1.0, 1.0), 4)
    u = Field.from_function(mesh, lambda p: p[:, 0] * p[:, 1])
    back = read_field_csv(write_field_csv(u, tmp_path / "u.csv"))
    assert back.mesh == mesh
    np.testing.assert_allclose(back.values, u.values)
