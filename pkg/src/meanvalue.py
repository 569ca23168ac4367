"""
Mean values of cell-variable functions and the reiterated Sigma-convergence tester.

Means are exact wherever a representation allows it (zero-frequency coefficients,
limits at infinity, grid averages of periodic samples); ball averages exist separately
to exhibit the ergodic behaviour those means stand for.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate

from .datamodel import AlgebraClass, FieldKind, SigmaTestReport, StrongSigmaRow
from .fields import (
    BInfinity,
    CellGrid,
    Expression,
    Field,
    Mesh,
    MultiscaleField,
    TensorGrid,
    TrigPoly,
    luxemburg_from_samples,
    luxemburg_norm,
    trace_sample,
)
from .nfunc import NFunction
from .utils import DomainError, KindError, ResolutionError, ShapeError

logger = logging.getLogger(__name__)

CELL_SAMPLES = 256
DECAY_TOL = 1e-8
QUAD_LIMIT = 2000
DEFAULT_CENTERS = (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)


@dataclass(frozen=True)
class AlgebraRep:
    """A concrete representative of an element of a periodic, almost periodic or B-infinity algebra."""

    algebra: AlgebraClass
    function: Any

    def __post_init__(self):
        algebra = AlgebraClass(self.algebra)
        object.__setattr__(self, "algebra", algebra)
        fn = self.function
        if algebra == AlgebraClass.periodic:
            if isinstance(fn, TrigPoly) and not fn.is_periodic():
                raise DomainError("periodic representatives need integer frequencies (multiples of 2*pi)")
            if not isinstance(fn, (TrigPoly, CellGrid, Expression)):
                raise DomainError("periodic representatives are trigonometric polynomials, cell grids or expressions")
        elif algebra == AlgebraClass.almost_periodic:
            if not isinstance(fn, TrigPoly):
                raise DomainError("almost periodic representatives are trigonometric polynomials")
        else:
            if not isinstance(fn, BInfinity):
                raise DomainError("B-infinity representatives need a limit and a decaying core")
            _check_decay(fn)

    @classmethod
    def of(cls, block: Any) -> "AlgebraRep":
        if isinstance(block, AlgebraRep):
            return block
        return cls(block.algebra, block)

    @property
    def dim(self) -> int:
        return self.function.dim

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.function(points)


def _check_decay(fn: BInfinity):
    for scale in (1.0, 1.5, 2.0, 4.0):
        for sign in (-1.0, 1.0):
            pts = np.full((1, fn.dim), sign * scale * fn.radius)
            core = abs(float(fn(pts)[0]) - fn.limit)
            if core > DECAY_TOL:
                raise DomainError(f"B-infinity core is {core:.3e} at |y| = {scale * fn.radius}, above {DECAY_TOL}")


def _cell_points(dim: int, n: int = CELL_SAMPLES, period: float = 1.0) -> np.ndarray:
    axis = period * np.arange(n) / n
    return np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)


def mean(u: Any) -> float:
    """M(u) for a representative or a bare block function."""
    fn = AlgebraRep.of(u).function
    if isinstance(fn, (TrigPoly, CellGrid)):
        return fn.mean()
    if isinstance(fn, BInfinity):
        return float(fn.limit)
    if isinstance(fn, Expression):
        if fn.algebra != AlgebraClass.periodic:
            raise DomainError("only periodic expressions have a computable mean")
        return float(np.mean(fn(_cell_points(fn.dim, period=fn.period))))
    raise KindError(f"no mean value rule for {type(fn).__name__}")


def product_mean(a: Any, b: Any) -> float:
    """M(a b) for two blocks of the same variable; ``None`` stands for 1."""
    if a is None and b is None:
        return 1.0
    if a is None or b is None:
        return mean(b if a is None else a)
    fa, fb = AlgebraRep.of(a).function, AlgebraRep.of(b).function
    if isinstance(fa, TrigPoly) and isinstance(fb, TrigPoly):
        return (fa * fb).mean()
    for first, second in ((fa, fb), (fb, fa)):
        if isinstance(first, TrigPoly) and first.is_constant:
            return first.mean() * mean(second)
        # the decaying core times a bounded mean-value function has mean zero
        if isinstance(first, BInfinity):
            return first.limit * mean(second)
    if fa.algebra == fb.algebra == AlgebraClass.periodic:
        period = max(getattr(fa, "period", 1.0), getattr(fb, "period", 1.0))
        pts = _cell_points(fa.dim, period=period)
        return float(np.mean(fa(pts) * fb(pts)))
    raise DomainError(f"no exact mean for a product of {fa.algebra.value} and {fb.algebra.value} functions")


def reiterated_mean(u: Union[MultiscaleField, Sequence[Tuple[Any, Any]]]) -> float:
    """sum_i M(w_i) M(v_i) for u = sum_i w_i(y) v_i(z)."""
    if isinstance(u, MultiscaleField):
        if u.grid is not None or u.joint is not None:
            raise DomainError("reiterated means need a finite sum of tensor products")
        if any(t.gx is not None for t in u.terms):
            raise DomainError("reiterated means act on functions of (y, z) only")
        pairs = [(t.wy, t.vz, t.coef) for t in u.terms]
    else:
        pairs = [tuple(p) + (1.0,) * (3 - len(p)) for p in u]
    return float(sum(c * product_mean(w, None) * product_mean(v, None) for w, v, c in pairs))


# ergodicity


def ergodic_average(u: Any, r: float, center: Union[float, Sequence[float]] = 0.0) -> float:
    """(1/|B_r|) int_{B_r} u(center + x) dx by adaptive quadrature."""
    if not r > 0:
        raise DomainError("ball radius must be positive")
    fn = u.function if isinstance(u, AlgebraRep) else u
    dim = getattr(fn, "dim", 1)
    c = np.broadcast_to(np.asarray(center, dtype=float), (dim,))
    if dim == 1:
        val, _ = integrate.quad(lambda t: float(fn(np.array([[c[0] + t]]))[0]), -r, r, limit=QUAD_LIMIT, epsrel=1e-8)
        return val / (2.0 * r)

    def integrand(rho: float, theta: float) -> float:
        pt = c + rho * np.array([np.cos(theta), np.sin(theta)])
        return float(fn(pt[None, :])[0]) * rho

    val, _ = integrate.dblquad(integrand, 0.0, 2.0 * np.pi, 0.0, r, epsrel=1e-6)
    return val / (np.pi * r * r)


def ergodic_deviation(u: Any, r: float, centers: Optional[Sequence[Any]] = None) -> float:
    """max over centers of |ball average - mean|."""
    m = mean(u)
    centers = DEFAULT_CENTERS if centers is None else centers
    return max(abs(ergodic_average(u, r, c) - m) for c in centers)


def ergodicity_profile(u: Any, radii: Sequence[float], centers: Optional[Sequence[Any]] = None) -> List[float]:
    out = [ergodic_deviation(u, r, centers) for r in radii]
    logger.debug("ergodicity profile %s -> %s", list(radii), out)
    return out


# reiterated Sigma-convergence


def sigma_pairing(u_eps: Field, f: MultiscaleField, eps: float) -> Union[float, np.ndarray]:
    """
    int_Omega u_eps(x) f(x, x/eps, x/eps^2) dx on the mesh of ``u_eps``.

    A vector field paired with a scalar test function gives one value per component.
    """
    f_eps = trace_sample(f, eps, eps * eps, u_eps.mesh)
    w = u_eps.mesh.weights
    if u_eps.kind == f_eps.kind:
        prod = u_eps.flat * f_eps.flat
        return float(w @ (prod.sum(axis=1) if prod.ndim == 2 else prod))
    if u_eps.kind == FieldKind.vector:
        return w @ (u_eps.flat * f_eps.flat[:, None])
    raise KindError("a scalar field cannot be paired with a vector test function")


def _separable_terms(u: MultiscaleField) -> Optional[List[Any]]:
    if u.grid is not None or u.joint is not None:
        return None
    return list(u.terms)


def _x_integral(ga: Any, gb: Any, mesh: Mesh) -> float:
    pts = mesh.points()
    va = np.ones(mesh.size) if ga is None else ga(pts)
    vb = np.ones(mesh.size) if gb is None else gb(pts)
    return float(mesh.weights @ (va * vb))


def _cell_box(u: MultiscaleField, f: MultiscaleField, which: str) -> Tuple[np.ndarray, np.ndarray]:
    for field in (u, f):
        if field.grid is not None:
            m = field.grid.y_mesh if which == "y" else field.grid.z_mesh
            if m is not None:
                return np.asarray(m.lo), np.asarray(m.hi)
    dim = u.dim
    return np.zeros(dim), np.ones(dim)


def _limit_quadrature(u: MultiscaleField, f: MultiscaleField, mesh: Mesh, nx: int, ncell: int):
    """Yield (weight, x, y, z) blocks of a product rule on Omega x Y x Z."""
    d = mesh.dim
    gx, gw = np.polynomial.legendre.leggauss(nx)
    axes, weights = [], []
    for lo, hi in zip(mesh.lo, mesh.hi):
        axes.append(0.5 * (hi - lo) * (gx + 1.0) + lo)
        weights.append(0.5 * (hi - lo) * gw)
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    WX = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    cells = []
    for which in ("y", "z"):
        lo, hi = _cell_box(u, f, which)
        unit = _cell_points(d, ncell)
        cells.append(lo + unit * (hi - lo))
    Yg, Zg = cells
    YY = np.repeat(Yg, Zg.shape[0], axis=0)
    ZZ = np.tile(Zg, (Yg.shape[0], 1))
    cell_w = 1.0 / YY.shape[0]
    for x, wx in zip(X, WX):
        yield wx * cell_w, np.broadcast_to(x, YY.shape), YY, ZZ


def _limit_sizes(dim: int) -> Tuple[int, int]:
    return (32, 64) if dim == 1 else (8, 16)


def sigma_limit(u0: MultiscaleField, f: MultiscaleField, mesh: Mesh) -> Union[float, np.ndarray]:
    """
    int_Omega of the reiterated mean of u0 f over (y, z).

    Separable data use exact product means with the x-integral taken on the mesh
    quadrature; grids and joint expressions use a Gauss-Legendre rule in x and a
    periodic rectangle rule over the cells.
    """
    tu, tf = _separable_terms(u0), _separable_terms(f)
    if tu is not None and tf is not None:
        try:
            total = 0.0
            for a in tu:
                for b in tf:
                    total += (
                        a.coef
                        * b.coef
                        * _x_integral(a.gx, b.gx, mesh)
                        * product_mean(a.wy, b.wy)
                        * product_mean(a.vz, b.vz)
                    )
            return float(total)
        except DomainError:
            logger.debug("no exact product mean, falling back to quadrature")
    nx, ncell = _limit_sizes(mesh.dim)
    total = None
    for w, x, y, z in _limit_quadrature(u0, f, mesh, nx, ncell):
        a, b = u0.evaluate(x, y, z), f.evaluate(x, y, z)
        if a.ndim == 2 and b.ndim == 1:
            val = w * (a * b[:, None]).sum(axis=0)
        elif a.ndim == b.ndim:
            prod = a * b
            val = w * float(prod.sum(axis=1).sum() if prod.ndim == 2 else prod.sum())
        else:
            raise KindError("a scalar limit cannot be paired with a vector test function")
        total = val if total is None else total + val
    return total if isinstance(total, np.ndarray) else float(total)


def check_resolution(mesh: Mesh, eps2: float):
    h = float(np.max(mesh.spacing))
    if h > eps2 / 4.0 + 1e-15:
        raise ResolutionError(f"mesh spacing {h:.3e} does not resolve eps2 = {eps2:.3e} (needs <= eps2/4)")


def sigma_test(
    u0: MultiscaleField,
    f: MultiscaleField,
    mesh: Mesh,
    eps_list: Sequence[float],
    jobs: int = 1,
) -> SigmaTestReport:
    """Quadrature check of int u_eps f^eps dx -> int reiterated-mean(u0 f) dx over eps_list."""
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise DomainError("eps_list must not be empty")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise DomainError("eps_list must be strictly decreasing")
    if u0.dim != f.dim or u0.dim != mesh.dim:
        raise ShapeError("u0, f and mesh must share the space dimension")
    check_resolution(mesh, min(eps_list) ** 2)

    def pairing(eps: float) -> float:
        u_eps = trace_sample(u0, eps, eps * eps, mesh)
        return float(sigma_pairing(u_eps, f, eps))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        lhs = list(pool.map(pairing, eps_list))
    rhs = float(sigma_limit(u0, f, mesh))
    gap = [abs(v - rhs) for v in lhs]
    logger.info("sigma test: rhs=%.6e, gaps %s", rhs, ["%.3e" % g for g in gap])
    return SigmaTestReport(eps_list=eps_list, lhs=lhs, rhs=rhs, gap=gap)


def _require_periodic(u: MultiscaleField):
    terms = _separable_terms(u)
    if terms is None:
        raise DomainError("strong Sigma tests take separable fields with periodic cell blocks")
    for t in terms:
        for block in (t.wy, t.vz):
            if block is not None and block.algebra != AlgebraClass.periodic:
                raise DomainError("strong Sigma tests take periodic cell blocks only")


def limit_distance(u0: MultiscaleField, f: MultiscaleField, mesh: Mesh, nf: NFunction) -> float:
    """Luxemburg norm of u0 - f on Omega x Y x Z (product quadrature, unit cells)."""
    nx, ncell = _limit_sizes(mesh.dim)
    mags, weights = [], []
    for w, x, y, z in _limit_quadrature(u0, f, mesh, nx, ncell):
        mags.append(np.abs(u0.evaluate(x, y, z) - f.evaluate(x, y, z)))
        weights.append(np.full(x.shape[0], w))
    return luxemburg_from_samples(np.concatenate(mags), np.concatenate(weights), nf)


def strong_sigma_test(
    u0: MultiscaleField,
    dictionary: Sequence[MultiscaleField],
    mesh: Mesh,
    eps_list: Sequence[float],
    nf: NFunction,
) -> List[StrongSigmaRow]:
    """
    For every test function f of the dictionary and every eps, check
    |u_eps - f^eps|_Phi <= 2 |u0 - f|_Phi, the strong reiterated convergence estimate.
    """
    _require_periodic(u0)
    check_resolution(mesh, min(eps_list) ** 2)
    rows = []
    for k, f in enumerate(dictionary):
        _require_periodic(f)
        limit = limit_distance(u0, f, mesh, nf)
        for eps in eps_list:
            diff = trace_sample(u0, eps, eps * eps, mesh) - trace_sample(f, eps, eps * eps, mesh)
            dist = luxemburg_norm(diff, nf)
            rows.append(
                StrongSigmaRow(
                    test_function=k,
                    eps=float(eps),
                    distance=dist,
                    limit_distance=limit,
                    holds=bool(dist <= 2.0 * limit * (1.0 + 1e-9) + 1e-12),
                )
            )
    return rows
