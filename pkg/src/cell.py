"""
Periodic cell problems and effective fluxes.

The fast cell problem finds a zero-mean corrector pi2 on Z with
    int_Z a(y, z, r, xi + D pi2) . D theta dz = 0,
whose mean flux is h(y, r, xi); the intermediate cell problem does the same on Y
with h in place of a and yields q(r, xi). Many independent fast-cell problems are
solved at once as one block-diagonal system.
"""
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from .coeff import DEGENERATE_LAMBDA, Coefficient, effective_integrand
from .fields import Field, Mesh, QuadratureOperator
from .utils import (
    CoercivityError,
    DomainError,
    FluxCache,
    NewtonInfo,
    RangeError,
    SolverError,
    damped_newton,
    linear_solve,
    quantize,
)
from .utils.linalg import block_mean_projector

logger = logging.getLogger(__name__)

CHUNK_DOFS = 2**18
LINEAR_TOL = 1e-10
NONLINEAR_TOL = 1e-8
TABLE_HEADER = "# reiterhom flux table v1 "


@lru_cache(maxsize=32)
def quadrature(mesh: Mesh) -> QuadratureOperator:
    """Shared quadrature operator of a mesh."""
    return QuadratureOperator(mesh)


def _method(method: str, dim: int) -> str:
    if method == "auto":
        return "cg" if dim == 2 else "direct"
    return method


def _default_tol(coeff: Coefficient, tol: Optional[float]) -> float:
    if tol is not None:
        return tol
    return LINEAR_TOL if coeff.linear else NONLINEAR_TOL


def _positive(B: np.ndarray) -> bool:
    sym = 0.5 * (B + np.swapaxes(B, -1, -2))
    return bool(np.min(np.linalg.eigvalsh(sym.reshape(-1, B.shape[-1], B.shape[-1]))) > 0.0)


def _secant_modulus(
    F: np.ndarray, lam: np.ndarray, B: np.ndarray, unit: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    mu = F . lambda / |lambda|^2, the frozen-coefficient modulus (trace of B / d at lambda = 0).

    ``unit`` is the modulus at a unit gradient; it replaces a vanishing trace at lambda = 0,
    where degenerate fluxes such as the p-Laplacian have no tangent.
    """
    sq = np.sum(lam * lam, axis=-1)
    trace = np.trace(B, axis1=-2, axis2=-1) / lam.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.where(sq > DEGENERATE_LAMBDA**2, np.sum(F * lam, axis=-1) / np.where(sq > 0, sq, 1.0), trace)
    if unit is not None:
        mu = np.where((sq <= DEGENERATE_LAMBDA**2) & (trace <= 0.0), unit, mu)
    if np.any(~(mu > 0.0)):
        raise CoercivityError("frozen-coefficient modulus is not positive: the flux is not coercive")
    return mu


@dataclass
class CellSolution:
    """A zero-mean periodic corrector with its mean flux."""

    corrector: Field
    residual: float
    flux_sample: np.ndarray
    iterations: int = 0
    tangent: Optional[np.ndarray] = None
    energy: float = 0.0
    stalled: bool = False


@dataclass
class ZBatch:
    correctors: np.ndarray
    H: np.ndarray
    dH: np.ndarray
    residuals: np.ndarray
    energies: np.ndarray
    iterations: int = 0


class _FluxSystem:
    """
    m independent periodic problems sum_k G_k^T (w F_k(xi + D pi)) = 0 assembled block-diagonally.

    ``flux(lam)`` returns (F, B) at the quadrature points of every block, shapes
    (m, nq, d) and (m, nq, d, d).
    """

    def __init__(self, op: QuadratureOperator, xis: np.ndarray, flux, method: str, name: str):
        self.op = op
        self.xis = xis
        self.m = xis.shape[0]
        self.N = op.mesh.size
        self.flux_at = flux
        self.method = method
        self.name = name
        self._project = block_mean_projector(self.N)
        self._memo: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None

    def lam(self, x: np.ndarray) -> np.ndarray:
        return self.xis[:, None, :] + self.op.gradient_at(x.reshape(self.m, self.N))

    def evaluate(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self._memo is not None and np.array_equal(self._memo[0], x):
            return self._memo[1], self._memo[2]
        F, B = self.flux_at(self.lam(x))
        self._memo = (x.copy(), F, B)
        return F, B

    def residual(self, x: np.ndarray) -> np.ndarray:
        F, _ = self.evaluate(x)
        return self.op.divergence(F).ravel()

    def jacobian(self, x: np.ndarray) -> Tuple[sp.spmatrix, bool]:
        _, B = self.evaluate(x)
        return self.op.stiffness(B), _positive(B)

    def picard(self, x: np.ndarray) -> np.ndarray:
        F, B = self.evaluate(x)
        lam = self.lam(x)
        unit = None
        if np.any(np.sum(lam * lam, axis=-1) <= DEGENERATE_LAMBDA**2):
            e = np.zeros_like(lam)
            e[..., 0] = 1.0
            unit = self.flux_at(e)[0][..., 0]
        mu = _secant_modulus(F, lam, B, unit)
        d = self.op.dim
        A = self.op.stiffness(mu[..., None, None] * np.eye(d))
        rhs = -self.op.divergence(mu[..., None] * self.xis[:, None, :])
        return self.solve(A, rhs.ravel())

    def solve(self, A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
        return linear_solve(A, b, method=self.method, block=self.N)

    def project(self, x: np.ndarray) -> np.ndarray:
        return self._project(x)

    def run(self, tol: float, max_iter: int, stall: bool) -> Tuple[np.ndarray, NewtonInfo]:
        x0 = np.zeros(self.m * self.N)
        r0 = float(np.linalg.norm(self.residual(x0)))
        stall_tol = 1e-6 * max(1.0, r0) if stall else None
        return damped_newton(self, x0, tol=tol, max_iter=max_iter, stall_tol=stall_tol, name=self.name)

    def summarize(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Mean fluxes, linearized tangents, per-block residual norms and energies."""
        op, m, d = self.op, self.m, self.op.dim
        F, B = self.evaluate(x)
        w, V = op.weights, op.mesh.volume
        H = np.einsum("q,mqk->mk", w, F) / V
        grad = op.gradient_at(x.reshape(m, self.N))
        energies = np.einsum("q,mqk,mqk->m", w, F, grad)
        residuals = np.linalg.norm(op.divergence(F).reshape(m, self.N), axis=1)
        K = op.stiffness(B)
        dH = np.empty((m, d, d))
        for l in range(d):
            chi = self.solve(K, -op.divergence(B[..., :, l]).ravel())
            gchi = op.gradient_at(chi.reshape(m, self.N))
            col = B[..., :, l] + np.einsum("mqkj,mqj->mqk", B, gchi)
            dH[:, :, l] = np.einsum("q,mqk->mk", w, col) / V
        return H, dH, residuals, energies


def fast_factor(coeff: Coefficient) -> Coefficient:
    """The fast-variable factor a_z of a separable coefficient, as a coefficient of its own."""
    z_flux, z_jac = coeff.z_flux, coeff.z_jacobian
    return replace(
        coeff,
        flux_fn=lambda y, z, zeta, lam: z_flux(z, zeta, lam),
        jacobian_fn=None if z_jac is None else (lambda y, z, zeta, lam: z_jac(z, zeta, lam)),
        y_factor=lambda y: np.ones(y.shape[0]),
    )


def solve_z_batch(
    coeff: Coefficient,
    ys: np.ndarray,
    r: Union[float, np.ndarray],
    xis: np.ndarray,
    mesh: Mesh,
    tol: Optional[float] = None,
    method: str = "auto",
    max_iter: int = 50,
) -> ZBatch:
    """Solve the fast cell problem for every row of (ys, r, xis)."""
    if not mesh.periodic:
        raise DomainError("cell problems live on periodic meshes")
    b = effective_integrand(coeff)
    d = coeff.dim
    ys = np.asarray(ys, dtype=float).reshape(-1, d)
    xis = np.asarray(xis, dtype=float).reshape(-1, d)
    m = max(ys.shape[0], xis.shape[0])
    ys = np.broadcast_to(ys, (m, d))
    xis = np.broadcast_to(xis, (m, d))
    rs = np.broadcast_to(np.asarray(r, dtype=float).ravel(), (m,)) if np.ndim(r) else np.full(m, float(r))
    op = quadrature(mesh)
    tol = _default_tol(coeff, tol)
    chunk = max(1, CHUNK_DOFS // mesh.size)
    solver = _method(method, d)

    parts: List[ZBatch] = []
    for start in range(0, m, chunk):
        sl = slice(start, min(m, start + chunk))
        k = sl.stop - sl.start
        Y = np.repeat(ys[sl], op.nq, axis=0)
        Z = np.tile(op.points, (k, 1))
        R = np.repeat(rs[sl], op.nq)

        def flux(lam: np.ndarray, Y=Y, Z=Z, R=R, k=k):
            flat = lam.reshape(-1, d)
            F = b.flux(Y, Z, R, flat).reshape(k, op.nq, d)
            B = b.jacobian(Y, Z, R, flat).reshape(k, op.nq, d, d)
            return F, B

        system = _FluxSystem(op, np.array(xis[sl]), flux, solver, name="cell-z")
        x, info = system.run(tol, max_iter, stall=False)
        H, dH, res, energies = system.summarize(x)
        parts.append(ZBatch(x.reshape(k, mesh.size), H, dH, res, energies, info.iterations))

    return ZBatch(
        correctors=np.concatenate([p.correctors for p in parts]),
        H=np.concatenate([p.H for p in parts]),
        dH=np.concatenate([p.dH for p in parts]),
        residuals=np.concatenate([p.residuals for p in parts]),
        energies=np.concatenate([p.energies for p in parts]),
        iterations=max(p.iterations for p in parts),
    )


def solve_cell_z(
    coeff: Coefficient,
    y: Any,
    r: float,
    xi: Any,
    mesh: Mesh,
    tol: Optional[float] = None,
    method: str = "auto",
) -> CellSolution:
    """Corrector pi2(y, r, xi) on the fast cell; ``flux_sample`` is h(y, r, xi)."""
    batch = solve_z_batch(coeff, np.atleast_1d(y), r, np.atleast_1d(xi), mesh, tol, method)
    return CellSolution(
        corrector=Field(mesh, batch.correctors[0]),
        residual=float(batch.residuals[0]),
        flux_sample=batch.H[0],
        iterations=batch.iterations,
        tangent=batch.dH[0],
        energy=float(batch.energies[0]),
    )


def effective_h(coeff: Coefficient, y: Any, r: float, xi: Any, mesh: Mesh, **kwargs: Any) -> np.ndarray:
    return solve_cell_z(coeff, y, r, xi, mesh, **kwargs).flux_sample


class HEvaluator:
    """
    h(y, r, lambda) and d h / d lambda at many points, memoized in a FluxCache.

    Separable linear coefficients need one effective fast-cell tensor per r; separable
    nonlinear ones a fast-cell solve per distinct lambda; non-separable linear ones a
    tensor per distinct y; everything else a solve per distinct (y, lambda).
    """

    def __init__(
        self,
        coeff: Coefficient,
        mesh_z: Mesh,
        cache: Optional[FluxCache] = None,
        tol: Optional[float] = None,
        method: str = "auto",
    ):
        self.coeff = coeff
        self.mesh_z = mesh_z
        self.cache = FluxCache(seed=f"{coeff.name}:{mesh_z.n}") if cache is None else cache
        # shared caches see several coefficients
        self._prefix = (coeff.name, mesh_z.n) + tuple(sorted(coeff.params.items()))
        self.tol = tol
        self.method = method
        self._z = fast_factor(coeff) if coeff.separable else None
        self.solves = 0
        self._lock = threading.Lock()

    def _batch(self, coeff: Coefficient, ys: np.ndarray, r: float, xis: np.ndarray) -> ZBatch:
        with self._lock:
            self.solves += xis.shape[0]
        return solve_z_batch(coeff, ys, r, xis, self.mesh_z, self.tol, self.method)

    def _lookup(self, keys: List[Tuple], compute) -> List[Any]:
        """Fetch ``keys``; ``compute(indices)`` solves the distinct misses and returns their values."""
        keys = [self._prefix + k for k in keys]
        values = [self.cache.get(k) for k in keys]
        missing: Dict[Tuple, int] = {}
        for i, (k, v) in enumerate(zip(keys, values)):
            if v is None and k not in missing:
                missing[k] = i
        if missing:
            for (k, i), v in zip(missing.items(), compute(list(missing.values()))):
                self.cache.set(k, v)
            values = [v if v is not None else self.cache.get(k) for k, v in zip(keys, values)]
        return values

    def unit_tensor(self, r: float, y: Optional[np.ndarray] = None) -> np.ndarray:
        """Effective fast-cell tensor A with h = A lambda (linear coefficients)."""
        d = self.coeff.dim
        coeff = self._z if y is None else self.coeff
        yy = np.zeros((d, d)) if y is None else np.repeat(np.asarray(y, float).reshape(1, d), d, axis=0)
        return self._batch(coeff, yy, r, np.eye(d)).H.T

    def evaluate(self, ys: np.ndarray, r: float, lams: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        coeff, d = self.coeff, self.coeff.dim
        ys = np.asarray(ys, dtype=float).reshape(-1, d)
        lams = np.asarray(lams, dtype=float).reshape(-1, d)
        qr = quantize(r)

        if coeff.separable:
            cy = coeff.y_factor(ys)
            if coeff.linear:
                (A,) = self._lookup([("lin",) + qr], lambda idx: [self.unit_tensor(r)])
                H = cy[:, None] * (lams @ A.T)
                dH = cy[:, None, None] * A[None, :, :]
                return H, dH
            keys = [("sep",) + qr + quantize(lam) for lam in lams]

            def solve_sep(idx):
                batch = self._batch(self._z, np.zeros((len(idx), d)), r, lams[idx])
                return list(zip(batch.H, batch.dH))

            vals = self._lookup(keys, solve_sep)
            Hz = np.array([v[0] for v in vals])
            dHz = np.array([v[1] for v in vals])
            return cy[:, None] * Hz, cy[:, None, None] * dHz

        if coeff.linear:
            keys = [("A",) + quantize(y) + qr for y in ys]

            def solve_lin(idx):
                u = len(idx)
                batch = self._batch(coeff, np.repeat(ys[idx], d, axis=0), r, np.tile(np.eye(d), (u, 1)))
                return list(batch.H.reshape(u, d, d).transpose(0, 2, 1))

            A = np.array(self._lookup(keys, solve_lin))
            return np.einsum("mkl,ml->mk", A, lams), A

        keys = [("gen",) + quantize(y) + qr + quantize(lam) for y, lam in zip(ys, lams)]

        def solve_gen(idx):
            batch = self._batch(coeff, ys[idx], r, lams[idx])
            return list(zip(batch.H, batch.dH))

        vals = self._lookup(keys, solve_gen)
        return np.array([v[0] for v in vals]), np.array([v[1] for v in vals])


def solve_cell_y(
    coeff: Coefficient,
    r: float,
    xi: Any,
    mesh_y: Mesh,
    mesh_z: Mesh,
    cache: Optional[FluxCache] = None,
    tol: Optional[float] = None,
    method: str = "auto",
    evaluator: Optional[HEvaluator] = None,
    max_iter: int = 50,
) -> CellSolution:
    """Corrector pi1(r, xi) on the intermediate cell; ``flux_sample`` is q(r, xi)."""
    if not (mesh_y.periodic and mesh_z.periodic):
        raise DomainError("both cell meshes must be periodic")
    d = coeff.dim
    xi = np.asarray(xi, dtype=float).reshape(1, d)
    hev = evaluator if evaluator is not None else HEvaluator(coeff, mesh_z, cache, tol, method)
    op = quadrature(mesh_y)

    def flux(lam: np.ndarray):
        H, dH = hev.evaluate(op.points, r, lam.reshape(-1, d))
        return H[None], dH[None]

    system = _FluxSystem(op, xi, flux, _method(method, d), name="cell-y")
    x, info = system.run(_default_tol(coeff, tol), max_iter, stall=True)
    H, dH, res, energies = system.summarize(x)
    logger.debug(f"cell-y r={r:.4g} xi={xi[0].tolist()}: q={H[0].tolist()} after {info.iterations} steps")
    return CellSolution(
        corrector=Field(mesh_y, x),
        residual=float(res[0]),
        flux_sample=H[0],
        iterations=info.iterations,
        tangent=dH[0],
        energy=float(energies[0]),
        stalled=info.stalled,
    )


def effective_q(coeff: Coefficient, r: float, xi: Any, mesh_y: Mesh, mesh_z: Mesh, **kwargs: Any) -> np.ndarray:
    return solve_cell_y(coeff, r, xi, mesh_y, mesh_z, **kwargs).flux_sample


# flux tables


@dataclass(eq=False)
class FluxTable:
    """q(r, xi) on a tensor grid, interpolated multilinearly and clamped outside the grid."""

    r_grid: np.ndarray
    xi_grids: Tuple[np.ndarray, ...]
    q_values: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)
    clamped: int = 0

    def __post_init__(self):
        self.r_grid = np.asarray(self.r_grid, dtype=float)
        self.xi_grids = tuple(np.asarray(g, dtype=float) for g in self.xi_grids)
        self.q_values = np.asarray(self.q_values, dtype=float)
        axes = self.axes
        for a in axes:
            if a.ndim != 1 or a.size == 0 or np.any(np.diff(a) <= 0):
                raise DomainError("flux-table grids must be nonempty and strictly increasing")
        expected = tuple(a.size for a in axes) + (self.dim,)
        if self.q_values.shape != expected:
            raise DomainError(f"flux-table values need shape {expected}, got {self.q_values.shape}")
        if not np.all(np.isfinite(self.q_values)):
            raise DomainError("flux-table entries must be finite")
        self._active = [i for i, a in enumerate(axes) if a.size > 1]
        index = tuple(slice(None) if i in self._active else 0 for i in range(len(axes)))
        values = self.q_values[index]
        self._interp = (
            RegularGridInterpolator([axes[i] for i in self._active], values, method="linear")
            if self._active
            else None
        )
        self._constant = values
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return len(self.xi_grids)

    @property
    def axes(self) -> List[np.ndarray]:
        return [self.r_grid, *self.xi_grids]

    def _clip(self, pts: np.ndarray) -> np.ndarray:
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        return np.clip(pts, lo, hi)

    def _raw(self, pts: np.ndarray) -> np.ndarray:
        pts = self._clip(pts)
        if self._interp is None:
            return np.broadcast_to(self._constant, (pts.shape[0], self.dim)).copy()
        return self._interp(pts[:, self._active])

    def _points(self, r: Any, xi: Any) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).reshape(-1, self.dim)
        r = np.broadcast_to(np.asarray(r, dtype=float).ravel(), (xi.shape[0],)) if np.ndim(r) else np.full(
            xi.shape[0], float(r)
        )
        return np.column_stack([r, xi])

    def query(self, r: Any, xi: Any) -> np.ndarray:
        """q at (r, xi) rows; clamped queries are counted in ``clamped``."""
        pts = self._points(r, xi)
        # r is irrelevant for zeta-independent tables
        first = 0 if self.metadata.get("zeta_dependent", True) else 1
        outside = int(np.count_nonzero(np.any(self._clip(pts)[:, first:] != pts[:, first:], axis=1)))
        if outside:
            with self._lock:
                self.clamped += outside
        return self._raw(pts)

    __call__ = query

    def derivatives(self, r: Any, xi: Any) -> Tuple[np.ndarray, np.ndarray]:
        """Finite-difference (dq/dr, dq/dxi) with the grid spacing as step."""
        pts = self._points(r, xi)
        M = pts.shape[0]
        grads = np.zeros((M, self.dim, 1 + self.dim))
        for k, a in enumerate(self.axes):
            if a.size < 2:
                continue
            h = float(np.mean(np.diff(a)))
            up, down = pts.copy(), pts.copy()
            up[:, k] = np.minimum(pts[:, k] + h, a[-1])
            down[:, k] = np.maximum(pts[:, k] - h, a[0])
            span = up[:, k] - down[:, k]
            safe = np.where(span > 0, span, 1.0)
            grads[:, :, k] = np.where(span[:, None] > 0, (self._raw(up) - self._raw(down)) / safe[:, None], 0.0)
        return grads[:, :, 0], grads[:, :, 1:]

    def covers(self, r_range: Tuple[float, float], xi_range: Tuple[float, float], margin: float = 0.2) -> bool:
        """True when every axis contains the requested range widened by ``margin`` of its width."""

        def widened(lo, hi):
            pad = margin * max(hi - lo, 1e-12)
            return lo - pad, hi + pad

        checks = [] if not self.metadata.get("zeta_dependent", True) else [(self.r_grid, widened(*r_range))]
        checks += [(g, widened(*xi_range)) for g in self.xi_grids]
        return all(g[0] <= lo + 1e-12 and g[-1] >= hi - 1e-12 for g, (lo, hi) in checks)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        names = ["r"] + [f"xi_{i + 1}" for i in range(self.dim)] + [f"q_{i + 1}" for i in range(self.dim)]
        rows = []
        for index in product(*(range(a.size) for a in self.axes)):
            coords = [a[i] for a, i in zip(self.axes, index)]
            rows.append(coords + list(self.q_values[index]))
        header = TABLE_HEADER + json.dumps(self.metadata, sort_keys=True, default=str)
        with open(path, "w") as f:
            f.write(header + "\n")
            f.write(",".join(names) + "\n")
            for row in rows:
                f.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "FluxTable":
        path = Path(path)
        with open(path) as f:
            first = f.readline()
            names = f.readline().strip().split(",")
        if not first.startswith(TABLE_HEADER):
            raise RangeError(f"{path} is not a reiterhom flux table")
        metadata = json.loads(first[len(TABLE_HEADER) :])
        data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        d = (len(names) - 1) // 2
        axes = [np.unique(data[:, k]) for k in range(1 + d)]
        shape = tuple(a.size for a in axes)
        q = data[:, 1 + d :].reshape(shape + (d,))
        return cls(axes[0], tuple(axes[1:]), q, metadata)


def tabulate_flux(
    coeff: Coefficient,
    r_grid: Sequence[float],
    xi_grid: Union[Sequence[float], Sequence[Sequence[float]]],
    mesh_y: Mesh,
    mesh_z: Mesh,
    jobs: int = 1,
    cache: Optional[FluxCache] = None,
    tol: Optional[float] = None,
    method: str = "auto",
) -> FluxTable:
    """
    q at every node of r_grid x xi_grid^d.

    Coefficients that do not depend on zeta are solved on the first r only and the
    result is repeated along r.
    """
    d = coeff.dim
    r_grid = np.asarray(r_grid, dtype=float)
    first = np.asarray(xi_grid[0])
    xi_grids = tuple(np.asarray(g, float) for g in xi_grid) if first.ndim == 1 else (np.asarray(xi_grid, float),) * d
    if len(xi_grids) != d:
        raise DomainError(f"a {d}D table needs {d} xi grids")
    hev = HEvaluator(coeff, mesh_z, cache, tol, method)
    r_solve = r_grid if coeff.zeta_dependent else r_grid[:1]
    nodes = list(product(range(r_solve.size), *(range(g.size) for g in xi_grids)))

    def solve(node: Tuple[int, ...]) -> np.ndarray:
        r = float(r_solve[node[0]])
        xi = np.array([g[i] for g, i in zip(xi_grids, node[1:])])
        try:
            return solve_cell_y(coeff, r, xi, mesh_y, mesh_z, tol=tol, method=method, evaluator=hev).flux_sample
        except SolverError as e:
            raise SolverError(f"cell solve failed at r={r:.6g}, xi={xi.tolist()}: {e.message}", e.history) from e

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        values = list(pool.map(solve, nodes))

    q = np.empty((r_solve.size,) + tuple(g.size for g in xi_grids) + (d,))
    for node, v in zip(nodes, values):
        q[node] = v
    if not coeff.zeta_dependent:
        q = np.repeat(q, r_grid.size, axis=0)
    metadata = {
        "problem": coeff.name,
        "zeta_dependent": coeff.zeta_dependent,
        "cell_n_y": mesh_y.n,
        "cell_n_z": mesh_z.n,
        "node_solves": len(nodes),
        "z_solves": hev.solves,
        "cache": hev.cache.stats(),
    }
    logger.info(f"tabulated q for {coeff.name} on {len(nodes)} nodes ({hev.solves} fast-cell solves)")
    return FluxTable(r_grid, xi_grids, q, metadata)
