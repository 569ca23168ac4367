"""
Meshes, discrete fields, quadrature and Orlicz norms.

Every solver in the package discretizes on the tensor meshes defined here: one
point per cell (1D, second-order differences with midpoint quadrature) or
bilinear elements with 2x2 Gauss points (2D). Cell variables are represented by
block functions (trigonometric polynomials, periodic grids, expressions,
functions converging at infinity) combined into multiscale fields.
"""
import logging
import re
import threading
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from .datamodel import AlgebraClass, FieldKind
from .nfunc import NFunction, complementary
from .utils import DomainError, KindError, ShapeError, compile_expression

logger = logging.getLogger(__name__)

MAX_2D_CELLS = 512
FREQ_TOL = 1e-12
LUXEMBURG_STEPS = 60
GAUSS_2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


@dataclass(frozen=True)
class Mesh:
    """
    Uniform tensor mesh of an axis-aligned box with ``n`` cells per axis.

    Periodic meshes store ``n`` nodes per axis (the face at ``hi`` is identified with
    the face at ``lo``); non-periodic meshes store ``n + 1``.
    """

    dim: int
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    n: int
    periodic: bool = False

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n", int(self.n))
        if self.dim not in (1, 2):
            raise DomainError(f"meshes are 1D or 2D, got dim={self.dim}")
        if len(lo) != self.dim or len(hi) != self.dim:
            raise DomainError("mesh box needs one bound per dimension")
        if any(b <= a for a, b in zip(lo, hi)):
            raise DomainError("mesh box must satisfy lo < hi")
        if self.n < 2:
            raise DomainError("meshes need n >= 2 cells per axis")
        if self.dim == 2 and self.n > MAX_2D_CELLS:
            raise DomainError(f"2D meshes are limited to n <= {MAX_2D_CELLS} per axis")

    @classmethod
    def unit_cell(cls, dim: int, n: int, lo: float = 0.0, hi: float = 1.0) -> "Mesh":
        return cls(dim, (lo,) * dim, (hi,) * dim, n, periodic=True)

    @classmethod
    def interval(cls, lo: float, hi: float, n: int, periodic: bool = False) -> "Mesh":
        return cls(1, (lo,), (hi,), n, periodic)

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float], n: int, periodic: bool = False) -> "Mesh":
        return cls(len(lo), tuple(lo), tuple(hi), n, periodic)

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / self.n

    @property
    def nodes_per_axis(self) -> int:
        return self.n if self.periodic else self.n + 1

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.nodes_per_axis**self.dim

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))

    @cached_property
    def axes(self) -> List[np.ndarray]:
        return [lo + h * np.arange(self.nodes_per_axis) for lo, h in zip(self.lo, self.spacing)]

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def points(self) -> np.ndarray:
        """Node coordinates flattened in C order, shape (size, dim)."""
        return self.nodes.reshape(-1, self.dim)

    @cached_property
    def weights(self) -> np.ndarray:
        """Nodal quadrature weights: h^d on periodic meshes, trapezoid products otherwise."""
        per_axis = []
        for h in self.spacing:
            w = np.full(self.nodes_per_axis, h)
            if not self.periodic:
                w[0] = w[-1] = 0.5 * h
            per_axis.append(w)
        w = per_axis[0]
        for extra in per_axis[1:]:
            w = np.multiply.outer(w, extra)
        return np.asarray(w).ravel()

    @cached_property
    def boundary(self) -> np.ndarray:
        """Boolean mask of boundary nodes (empty on periodic meshes)."""
        mask = np.zeros(self.shape, dtype=bool)
        if not self.periodic:
            for k in range(self.dim):
                index = [slice(None)] * self.dim
                index[k] = 0
                mask[tuple(index)] = True
                index[k] = -1
                mask[tuple(index)] = True
        return mask.ravel()

    def contains(self, lo: Sequence[float], hi: Sequence[float], tol: float = 1e-12) -> bool:
        """True when this mesh's box lies inside [lo, hi]."""
        return all(a >= l - tol and b <= h + tol for a, b, l, h in zip(self.lo, self.hi, lo, hi))


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values on a mesh; vector fields carry a trailing axis of length ``mesh.dim``."""

    mesh: Mesh
    values: np.ndarray
    kind: FieldKind = FieldKind.scalar

    def __post_init__(self):
        kind = FieldKind(self.kind)
        values = np.array(self.values, dtype=float)
        expected = self.mesh.shape + ((self.mesh.dim,) if kind == FieldKind.vector else ())
        flat = (self.mesh.size,) + ((self.mesh.dim,) if kind == FieldKind.vector else ())
        if values.shape == flat and flat != expected:
            values = values.reshape(expected)
        if values.shape != expected:
            raise ShapeError(f"{kind.value} field on a mesh of shape {self.mesh.shape} needs values {expected}")
        values.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, mesh: Mesh, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        """Sample ``fn(points)`` at the nodes, points of shape (size, dim)."""
        vals = np.asarray(fn(mesh.points()), dtype=float)
        vals = np.broadcast_to(vals, (mesh.size,)) if vals.ndim <= 1 else vals
        kind = FieldKind.vector if vals.ndim == 2 else FieldKind.scalar
        return cls(mesh, vals, kind)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "Field":
        return cls(mesh, np.zeros(mesh.shape))

    @property
    def flat(self) -> np.ndarray:
        if self.kind == FieldKind.vector:
            return self.values.reshape(self.mesh.size, self.mesh.dim)
        return self.values.reshape(self.mesh.size)

    def magnitude(self) -> np.ndarray:
        """Pointwise |u| (Euclidean for vector fields), flattened."""
        if self.kind == FieldKind.vector:
            return np.linalg.norm(self.flat, axis=1)
        return np.abs(self.flat)

    def integral(self) -> Union[float, np.ndarray]:
        w = self.mesh.weights
        if self.kind == FieldKind.vector:
            return w @ self.flat
        return float(w @ self.flat)

    def mean(self) -> Union[float, np.ndarray]:
        return self.integral() / self.mesh.volume

    def _check_other(self, other: "Field"):
        if self.mesh != other.mesh:
            raise ShapeError("fields live on different meshes")
        if self.kind != other.kind:
            raise KindError("cannot combine scalar and vector fields")

    def __add__(self, other: "Field") -> "Field":
        self._check_other(other)
        return Field(self.mesh, self.values + other.values, self.kind)

    def __sub__(self, other: "Field") -> "Field":
        self._check_other(other)
        return Field(self.mesh, self.values - other.values, self.kind)

    def __mul__(self, c: float) -> "Field":
        return Field(self.mesh, float(c) * self.values, self.kind)

    __rmul__ = __mul__


class QuadratureOperator:
    """
    Quadrature points, weights and sparse gradient/value operators of a mesh.

    ``grads[k]`` maps nodal values to the k-th partial derivative at the quadrature
    points and ``value`` maps them to point values. Residuals of flux problems are
    ``sum_k grads[k]^T (w F_k)`` and their Jacobians ``sum_kl grads[k]^T diag(w B_kl) grads[l]``.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.dim = mesh.dim
        if mesh.dim == 1:
            self._build_1d()
        else:
            self._build_2d()
        self.nq = self.weights.size
        self._batched: Dict[Tuple[str, int, int], sp.csr_matrix] = {}
        self._lock = threading.Lock()

    def _build_1d(self):
        mesh = self.mesh
        h = float(mesh.spacing[0])
        N = mesh.nodes_per_axis
        e = np.arange(mesh.n)
        left, right = e, (e + 1) % N
        rows = np.concatenate([e, e])
        cols = np.concatenate([left, right])
        self.points = (mesh.lo[0] + (e + 0.5) * h)[:, None]
        self.weights = np.full(mesh.n, h)
        G = sp.coo_matrix((np.concatenate([-np.ones(mesh.n), np.ones(mesh.n)]) / h, (rows, cols)), (mesh.n, N))
        V = sp.coo_matrix((np.full(2 * mesh.n, 0.5), (rows, cols)), (mesh.n, N))
        self.grads = (G.tocsr(),)
        self.value = V.tocsr()

    def _build_2d(self):
        mesh = self.mesh
        n, N1 = mesh.n, mesh.nodes_per_axis
        hx, hy = (float(v) for v in mesh.spacing)
        I, J = (a.ravel() for a in np.meshgrid(np.arange(n), np.arange(n), indexing="ij"))
        I1, J1 = (I + 1) % N1, (J + 1) % N1
        corners = (I * N1 + J, I1 * N1 + J, I * N1 + J1, I1 * N1 + J1)
        e = I * n + J
        nq = 4 * n * n

        rows, cols, gx, gy, vv, pts = [], [], [], [], [], []
        for a, s in enumerate(GAUSS_2):
            for b, t in enumerate(GAUSS_2):
                q = 4 * e + 2 * a + b
                shape = ((1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t)
                dx = (-(1 - t) / hx, (1 - t) / hx, -t / hx, t / hx)
                dy = (-(1 - s) / hy, -s / hy, (1 - s) / hy, s / hy)
                for c, node in enumerate(corners):
                    rows.append(q)
                    cols.append(node)
                    gx.append(np.full(q.size, dx[c]))
                    gy.append(np.full(q.size, dy[c]))
                    vv.append(np.full(q.size, shape[c]))
                pts.append((q, mesh.lo[0] + (I + s) * hx, mesh.lo[1] + (J + t) * hy))

        rows, cols = np.concatenate(rows), np.concatenate(cols)

        def build(data):
            return sp.coo_matrix((np.concatenate(data), (rows, cols)), (nq, mesh.size)).tocsr()

        self.grads = (build(gx), build(gy))
        self.value = build(vv)
        self.points = np.empty((nq, 2))
        for q, x, y in pts:
            self.points[q, 0] = x
            self.points[q, 1] = y
        self.weights = np.full(nq, hx * hy / 4.0)

    # batched block-diagonal operators

    def _kron(self, name: str, k: int, m: int) -> sp.csr_matrix:
        key = (name, k, m)
        with self._lock:
            op = self._batched.get(key)
        if op is None:
            base = self.grads[k] if name == "grad" else self.value
            op = base if m == 1 else sp.kron(sp.identity(m, format="csr"), base, format="csr")
            with self._lock:
                self._batched[key] = op
        return op

    def gradient_at(self, u: np.ndarray) -> np.ndarray:
        """Gradients at the quadrature points; u of shape (..., size) -> (..., nq, dim)."""
        u2 = np.asarray(u, dtype=float).reshape(-1, self.mesh.size)
        g = np.stack([(G @ u2.T).T for G in self.grads], axis=-1)
        return g.reshape(np.shape(u)[:-1] + (self.nq, self.dim))

    def value_at(self, u: np.ndarray) -> np.ndarray:
        u2 = np.asarray(u, dtype=float).reshape(-1, self.mesh.size)
        return (self.value @ u2.T).T.reshape(np.shape(u)[:-1] + (self.nq,))

    def divergence(self, F: np.ndarray) -> np.ndarray:
        """sum_k grads[k]^T (w F_k); F of shape (..., nq, dim) -> (..., size)."""
        F2 = np.asarray(F, dtype=float).reshape(-1, self.nq, self.dim)
        out = sum((G.T @ (self.weights[:, None] * F2[:, :, k].T)).T for k, G in enumerate(self.grads))
        return out.reshape(np.shape(F)[:-2] + (self.mesh.size,))

    def stiffness(self, B: np.ndarray) -> sp.csr_matrix:
        """Block-diagonal sum_kl grads[k]^T diag(w B_kl) grads[l]; B of shape (m, nq, dim, dim)."""
        B = np.asarray(B, dtype=float).reshape(-1, self.nq, self.dim, self.dim)
        m = B.shape[0]
        w = np.tile(self.weights, m)
        K = None
        for k in range(self.dim):
            Gk = self._kron("grad", k, m)
            for l in range(self.dim):
                Gl = self._kron("grad", l, m)
                term = Gk.T @ sp.diags(w * B[:, :, k, l].ravel()) @ Gl
                K = term if K is None else K + term
        return K.tocsr()

    def coupling(self, D: np.ndarray) -> sp.csr_matrix:
        """sum_k grads[k]^T diag(w D_k) value; D of shape (nq, dim)."""
        D = np.asarray(D, dtype=float).reshape(self.nq, self.dim)
        out = None
        for k, G in enumerate(self.grads):
            term = G.T @ sp.diags(self.weights * D[:, k]) @ self.value
            out = term if out is None else out + term
        return out.tocsr()


# Orlicz norms


def _modular(nf: NFunction, x: np.ndarray, w: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(nf.t_max):
            over = x > nf.t_max
            vals = np.where(over, np.inf, nf.value(np.minimum(x, nf.t_max)))
        else:
            vals = nf.value(x)
        total = float(np.sum(w * vals))
    return total if np.isfinite(total) else float("inf")


def luxemburg_from_samples(magnitudes: np.ndarray, weights: np.ndarray, nf: NFunction) -> float:
    """
    inf{delta > 0 : sum_i w_i Phi(|u_i| / delta) <= 1} by bisection.

    The search starts on [1e-12 max|u|, 2 max|u| sum(w)]; the upper end is doubled
    until it is admissible.
    """
    m = np.abs(np.asarray(magnitudes, dtype=float)).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if m.size == 0 or w.size != m.size or not np.sum(w) > 0:
        raise DomainError("Luxemburg norm needs a nonempty quadrature")
    top = float(np.max(m))
    if top == 0.0:
        return 0.0
    if not np.isfinite(top):
        return float("inf")
    lo, hi = 1e-12 * top, 2.0 * top * float(np.sum(w))
    for _ in range(200):
        if _modular(nf, m / hi, w) <= 1.0:
            break
        lo, hi = hi, 2.0 * hi
    for _ in range(LUXEMBURG_STEPS):
        mid = 0.5 * (lo + hi)
        if _modular(nf, m / mid, w) > 1.0:
            lo = mid
        else:
            hi = mid
    return hi


def luxemburg_norm(u: Field, nf: NFunction) -> float:
    """Luxemburg norm of a scalar field, or of the pointwise magnitude of a vector field."""
    if u.mesh.size == 0:
        raise DomainError("empty mesh")
    return luxemburg_from_samples(u.magnitude(), u.mesh.weights, nf)


def holder_pairing(u: Field, v: Field, nf: NFunction) -> Tuple[float, float]:
    """Return (|int u v|, 2 |u|_Phi |v|_Phi~)."""
    if u.mesh != v.mesh:
        raise ShapeError("Hoelder pairing needs fields on the same mesh")
    if u.kind != v.kind:
        raise KindError("Hoelder pairing needs fields of the same kind")
    prod = np.sum(u.flat * v.flat, axis=1) if u.kind == FieldKind.vector else u.flat * v.flat
    lhs = abs(float(u.mesh.weights @ prod))
    bound = 2.0 * luxemburg_norm(u, nf) * luxemburg_norm(v, complementary(nf))
    return lhs, bound


def gradient(u: Field) -> Field:
    """
    Nodal gradient: central differences, wrapped on periodic meshes and second-order
    one-sided at the boundary of non-periodic ones.
    """
    if u.kind != FieldKind.scalar:
        raise KindError("gradient expects a scalar field")
    mesh = u.mesh
    comps = []
    for k, (h, axis) in enumerate(zip(mesh.spacing, mesh.axes)):
        if mesh.periodic:
            comps.append((np.roll(u.values, -1, axis=k) - np.roll(u.values, 1, axis=k)) / (2.0 * h))
        else:
            comps.append(np.gradient(u.values, axis, axis=k, edge_order=2))
    return Field(mesh, np.stack(comps, axis=-1), FieldKind.vector)


def sobolev_norm(u: Field, nf: NFunction) -> float:
    """|u|_Phi + ||Du||_Phi, the norm of W^1 L^Phi."""
    return luxemburg_norm(u, nf) + luxemburg_norm(gradient(u), nf)


# interpolation


def _periodic_axis(axis: np.ndarray, hi: float) -> np.ndarray:
    return np.append(axis, hi)


def _extend_periodic(values: np.ndarray, axis: int) -> np.ndarray:
    first = np.take(values, [0], axis=axis)
    return np.concatenate([values, first], axis=axis)


def interpolate(u: Field, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a nodal field at ``points`` (m, dim)."""
    mesh = u.mesh
    pts = np.asarray(points, dtype=float).reshape(-1, mesh.dim).copy()
    values = u.values
    axes = list(mesh.axes)
    for k in range(mesh.dim):
        lo, hi = mesh.lo[k], mesh.hi[k]
        if mesh.periodic:
            pts[:, k] = lo + np.mod(pts[:, k] - lo, hi - lo)
            axes[k] = _periodic_axis(axes[k], hi)
            values = _extend_periodic(values, k)
        else:
            pts[:, k] = np.clip(pts[:, k], lo, hi)
    if mesh.dim == 1 and u.kind == FieldKind.scalar:
        return np.interp(pts[:, 0], axes[0], values)
    return RegularGridInterpolator(axes, values, method="linear")(pts)


# block functions of the cell variables


@runtime_checkable
class Block(Protocol):
    dim: int

    @property
    def algebra(self) -> AlgebraClass:
        ...

    def __call__(self, points: np.ndarray) -> np.ndarray:
        ...


def _as_points(points: np.ndarray, dim: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if dim == 1 else pts[None, :]
    if pts.shape[-1] != dim:
        raise ShapeError(f"points of dimension {pts.shape[-1]} passed to a {dim}D function")
    return pts


@dataclass(frozen=True, eq=False)
class TrigPoly:
    """sum_k cos_k cos(omega_k . y) + sin_k sin(omega_k . y) with real angular frequencies omega_k."""

    freqs: np.ndarray
    cos: np.ndarray
    sin: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        freqs = freqs[:, None] if freqs.ndim == 1 else np.atleast_2d(freqs)
        c = np.asarray(self.cos, dtype=float).ravel()
        s = np.asarray(self.sin, dtype=float).ravel()
        if not (freqs.shape[0] == c.size == s.size):
            raise ShapeError("trigonometric polynomial needs one cos and sin coefficient per frequency")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "cos", c)
        object.__setattr__(self, "sin", s)

    @property
    def dim(self) -> int:
        return self.freqs.shape[1]

    @classmethod
    def constant(cls, c: float, dim: int = 1) -> "TrigPoly":
        return cls(np.zeros((1, dim)), [c], [0.0])

    @classmethod
    def from_terms(cls, terms: Iterable[Tuple[Any, float, float]], dim: int = 1) -> "TrigPoly":
        """Build from (omega, cos coefficient, sin coefficient) triples."""
        terms = list(terms)
        freqs = np.array([np.broadcast_to(np.asarray(t[0], float), (dim,)) for t in terms]).reshape(-1, dim)
        return cls(freqs, [t[1] for t in terms], [t[2] for t in terms])

    @property
    def zero_mask(self) -> np.ndarray:
        return np.linalg.norm(self.freqs, axis=1) < FREQ_TOL

    @property
    def is_constant(self) -> bool:
        nonzero = ~self.zero_mask
        return not np.any(self.cos[nonzero]) and not np.any(self.sin[nonzero])

    def mean(self) -> float:
        return float(np.sum(self.cos[self.zero_mask]))

    def is_periodic(self, period: float = 1.0, tol: float = 1e-9) -> bool:
        k = self.freqs * period / (2.0 * np.pi)
        return bool(np.all(np.abs(k - np.rint(k)) <= tol))

    @property
    def algebra(self) -> AlgebraClass:
        return AlgebraClass.periodic if self.is_periodic() else AlgebraClass.almost_periodic

    def __call__(self, points: np.ndarray) -> np.ndarray:
        phase = _as_points(points, self.dim) @ self.freqs.T
        return np.cos(phase) @ self.cos + np.sin(phase) @ self.sin

    def __mul__(self, other: "TrigPoly") -> "TrigPoly":
        if not isinstance(other, TrigPoly):
            return NotImplemented
        f, g = self.freqs[:, None, :], other.freqs[None, :, :]
        a, b = self.cos[:, None], self.sin[:, None]
        a2, b2 = other.cos[None, :], other.sin[None, :]
        diff = (f - g).reshape(-1, self.dim)
        summ = (f + g).reshape(-1, self.dim)
        return TrigPoly(
            np.concatenate([diff, summ]),
            np.concatenate([(0.5 * (a * a2 + b * b2)).ravel(), (0.5 * (a * a2 - b * b2)).ravel()]),
            np.concatenate([(0.5 * (b * a2 - a * b2)).ravel(), (0.5 * (a * b2 + b * a2)).ravel()]),
        )


@dataclass(frozen=True, eq=False)
class CellGrid:
    """Nodal values on a periodic cell, evaluated by periodic multilinear interpolation."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if not self.mesh.periodic:
            raise DomainError("cell grids live on periodic meshes")
        values = np.asarray(self.values, dtype=float).reshape(self.mesh.shape)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def algebra(self) -> AlgebraClass:
        return AlgebraClass.periodic

    def mean(self) -> float:
        return float(np.mean(self.values))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return interpolate(Field(self.mesh, self.values), _as_points(points, self.dim))


@dataclass(frozen=True, eq=False)
class Expression:
    """A vectorized function of one variable block (x, y or z)."""

    fn: Callable[..., np.ndarray]
    dim: int = 1
    kind: AlgebraClass = AlgebraClass.periodic
    period: float = 1.0
    domain: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None
    text: Optional[str] = None

    @classmethod
    def parse(cls, text: str, var: str = "y", dim: int = 1, **kwargs: Any) -> "Expression":
        names = [var] if dim == 1 else [f"{var}{i + 1}" for i in range(dim)]
        return cls(compile_expression(text, names), dim=dim, text=str(text), **kwargs)

    @property
    def algebra(self) -> AlgebraClass:
        return AlgebraClass(self.kind)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points, self.dim)
        out = np.asarray(self.fn(*pts.T), dtype=float)
        return np.broadcast_to(out, pts.shape[:1]).copy()


@dataclass(frozen=True, eq=False)
class BInfinity:
    """limit + core(y) where the core decays below 1e-8 outside |y| > radius."""

    limit: float
    core: Callable[[np.ndarray], np.ndarray]
    radius: float
    dim: int = 1

    @property
    def algebra(self) -> AlgebraClass:
        return AlgebraClass.b_infinity

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points, self.dim)
        return self.limit + np.asarray(self.core(pts), dtype=float).reshape(pts.shape[0])


@dataclass(frozen=True, eq=False)
class TensorGrid:
    """
    Samples of a function of (x, y[, z]) on a product grid: non-periodic nodes in x,
    periodic cell meshes in y and z, and a trailing component axis.
    """

    x_mesh: Mesh
    values: np.ndarray
    y_mesh: Optional[Mesh] = None
    z_mesh: Optional[Mesh] = None

    def __post_init__(self):
        shape = self.x_mesh.shape
        for m in (self.y_mesh, self.z_mesh):
            if m is not None:
                if not m.periodic or m.dim != self.x_mesh.dim:
                    raise DomainError("tensor-grid cell meshes must be periodic and of the x dimension")
                shape = shape + m.shape
        values = np.asarray(self.values, dtype=float)
        if values.shape == shape:
            values = values[..., None]
        if values.shape[:-1] != shape:
            raise ShapeError(f"tensor grid values need shape {shape} + (ncomp,), got {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.x_mesh.dim

    @property
    def ncomp(self) -> int:
        return self.values.shape[-1]

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        axes = list(self.x_mesh.axes)
        values = self.values
        offset = self.dim
        for m in (self.y_mesh, self.z_mesh):
            if m is None:
                continue
            for k in range(m.dim):
                axes.append(_periodic_axis(m.axes[k], m.hi[k]))
                values = _extend_periodic(values, offset + k)
            offset += m.dim
        return RegularGridInterpolator(axes, values, method="linear")

    def __call__(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        d = self.dim
        x = np.clip(_as_points(x, d), self.x_mesh.lo, self.x_mesh.hi)
        coords = [x]
        for m, pts in ((self.y_mesh, y), (self.z_mesh, z)):
            if m is None:
                continue
            lo, hi = np.asarray(m.lo), np.asarray(m.hi)
            coords.append(lo + np.mod(_as_points(pts, d) - lo, hi - lo))
        return self._interpolator(np.concatenate(coords, axis=1))


@dataclass(frozen=True)
class SeparableTerm:
    """coef * g(x) * w(y) * v(z); a missing block stands for the constant 1."""

    gx: Optional[Any] = None
    wy: Optional[Any] = None
    vz: Optional[Any] = None
    coef: float = 1.0


class MultiscaleField:
    """
    A function f(x, y, z) given as a sum of separable terms, a tensor grid, or a joint
    expression of all three variable blocks.
    """

    def __init__(
        self,
        dim: int = 1,
        terms: Sequence[SeparableTerm] = (),
        grid: Optional[TensorGrid] = None,
        joint: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None,
        x_domain: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
        text: Optional[str] = None,
    ):
        if bool(terms) + (grid is not None) + (joint is not None) != 1:
            raise DomainError("a multiscale field has exactly one representation")
        self.dim = grid.dim if grid is not None else dim
        self.terms = tuple(terms)
        self.grid = grid
        self.joint = joint
        self.text = text
        self._x_domain = x_domain
        for t in self.terms:
            for block in (t.gx, t.wy, t.vz):
                if block is not None and getattr(block, "dim", self.dim) != self.dim:
                    raise ShapeError("block dimension differs from the field dimension")

    @classmethod
    def separable(cls, gx: Any = None, wy: Any = None, vz: Any = None, coef: float = 1.0, dim: int = 1):
        return cls(dim, terms=[SeparableTerm(gx, wy, vz, coef)])

    @classmethod
    def constant(cls, c: float, dim: int = 1) -> "MultiscaleField":
        return cls(dim, terms=[SeparableTerm(coef=float(c))])

    @classmethod
    def from_expression(cls, text: str, dim: int = 1) -> "MultiscaleField":
        if dim == 1:
            names = ["x", "y", "z"]
        else:
            names = [f"{v}{i + 1}" for v in "xyz" for i in range(dim)]
        fn = compile_expression(text, names)

        def joint(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
            cols = list(x.T) + list(y.T) + list(z.T)
            return fn(*cols)

        return cls(dim, joint=joint, text=str(text))

    @property
    def representation(self) -> str:
        if self.grid is not None:
            return "grid"
        if self.joint is not None:
            return "expression"
        blocks = [b for t in self.terms for b in (t.gx, t.wy, t.vz) if b is not None]
        if blocks and all(isinstance(b, TrigPoly) for b in blocks):
            return "trig_poly"
        return "separable"

    @property
    def variables(self) -> set:
        if self.grid is not None:
            out = {"x"}
            if self.grid.y_mesh is not None:
                out.add("y")
            if self.grid.z_mesh is not None:
                out.add("z")
            return out
        if self.joint is not None:
            return {"x", "y", "z"}
        out = set()
        for t in self.terms:
            for name, block in (("x", t.gx), ("y", t.wy), ("z", t.vz)):
                if block is not None:
                    out.add(name)
        return out

    @property
    def ncomp(self) -> int:
        return self.grid.ncomp if self.grid is not None else 1

    @property
    def x_domain(self) -> Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]]:
        if self._x_domain is not None:
            return tuple(self._x_domain[0]), tuple(self._x_domain[1])
        if self.grid is not None:
            return self.grid.x_mesh.lo, self.grid.x_mesh.hi
        lo, hi = None, None
        for t in self.terms:
            dom = getattr(t.gx, "domain", None)
            if dom is None:
                continue
            lo = np.asarray(dom[0]) if lo is None else np.maximum(lo, dom[0])
            hi = np.asarray(dom[1]) if hi is None else np.minimum(hi, dom[1])
        if lo is None:
            return None
        return tuple(float(v) for v in lo), tuple(float(v) for v in hi)

    def evaluate(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Values at matched points, shape (m,) or (m, ncomp)."""
        x, y, z = (_as_points(v, self.dim) for v in (x, y, z))
        if self.grid is not None:
            out = self.grid(x, y, z)
            return out[:, 0] if out.shape[1] == 1 else out
        if self.joint is not None:
            return np.broadcast_to(np.asarray(self.joint(x, y, z), dtype=float), x.shape[:1]).copy()
        total = np.zeros(x.shape[0])
        for t in self.terms:
            val = np.full(x.shape[0], t.coef)
            for block, pts in ((t.gx, x), (t.wy, y), (t.vz, z)):
                if block is not None:
                    val = val * block(pts)
            total = total + val
        return total


def trace_sample(f: MultiscaleField, eps1: float, eps2: float, mesh: Mesh) -> Field:
    """The nodal field x -> f(x, x/eps1, x/eps2)."""
    if not (0.0 < eps2 < eps1 <= 1.0):
        raise DomainError(f"trace sampling needs 0 < eps2 < eps1 <= 1, got eps1={eps1}, eps2={eps2}")
    if f.dim != mesh.dim:
        raise ShapeError("field and mesh dimensions differ")
    dom = f.x_domain
    if dom is not None and not mesh.contains(*dom):
        raise DomainError(f"mesh box {mesh.lo}-{mesh.hi} leaves the x-domain {dom[0]}-{dom[1]}")
    pts = mesh.points()
    vals = f.evaluate(pts, pts / eps1, pts / eps2)
    if vals.ndim == 2:
        if vals.shape[1] != mesh.dim:
            raise ShapeError("vector-valued multiscale fields need one component per dimension")
        return Field(mesh, vals, FieldKind.vector)
    return Field(mesh, vals)


# serialization

HEADER_RE = re.compile(r"reiterhom field v1 dim=(\d) n=(\d+) periodic=([01])")


def write_field_csv(u: Field, path: Union[str, Path]) -> Path:
    """Write ``x[,y],value`` rows under a one-line header."""
    mesh = u.mesh
    header = f"reiterhom field v1 dim={mesh.dim} n={mesh.n} periodic={int(mesh.periodic)}"
    vals = u.flat.reshape(mesh.size, -1)
    data = np.hstack([mesh.points(), vals])
    path = Path(path)
    np.savetxt(path, data, delimiter=",", header=header, comments="# ", fmt="%.17g")
    return path


def read_field_csv(path: Union[str, Path]) -> Field:
    path = Path(path)
    with open(path) as f:
        first = f.readline()
    match = HEADER_RE.search(first)
    if match is None:
        raise DomainError(f"{path} is not a reiterhom field file")
    dim, n, periodic = int(match.group(1)), int(match.group(2)), bool(int(match.group(3)))
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    coords, vals = data[:, :dim], data[:, dim:]
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    if periodic:
        hi = lo + (hi - lo) * n / (n - 1)
    mesh = Mesh(dim, tuple(lo), tuple(hi), n, periodic)
    if vals.shape[1] == 1:
        return Field(mesh, vals[:, 0])
    return Field(mesh, vals, FieldKind.vector)
