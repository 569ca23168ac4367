"""
Monotone elliptic solvers on the physical domain with homogeneous Dirichlet data.

``direct`` problems use the oscillating flux a(x/eps, x/eps^2, u, Du) and must
resolve the fast scale; ``effective`` problems use a tabulated q(u, Du). Both are
solved by damped Newton on the interior nodes. Corrector reconstruction lifts a
macroscopic solution back to the fine scales.
"""
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .cell import (
    HEvaluator,
    FluxTable,
    fast_factor,
    quadrature,
    solve_cell_y,
    solve_z_batch,
)
from .coeff import DEGENERATE_LAMBDA, Coefficient
from .datamodel import FieldKind, FluxMode, SolveStats
from .fields import Field, Mesh, MultiscaleField, TensorGrid, gradient, interpolate, luxemburg_norm, sobolev_norm
from .nfunc import NFunction, complementary
from .utils import CoercivityError, DomainError, FluxCache, ResolutionError, damped_newton, linear_solve, quantize

logger = logging.getLogger(__name__)

RESOLUTION = 0.25


@dataclass(eq=False)
class EllipticProblem:
    """-div flux(x, u, Du) = f on ``mesh`` with u = 0 on the boundary."""

    mesh: Mesh
    mode: FluxMode
    rhs: Field
    coeff: Optional[Coefficient] = None
    eps: Optional[float] = None
    table: Optional[FluxTable] = None
    nf: Optional[NFunction] = None

    def __post_init__(self):
        self.mode = FluxMode(self.mode)
        if self.mesh.periodic:
            raise DomainError("elliptic problems need a non-periodic mesh")
        if self.rhs.mesh != self.mesh or self.rhs.kind != FieldKind.scalar:
            raise DomainError("the right-hand side must be a scalar field on the problem mesh")
        if not np.all(np.isfinite(self.rhs.values)):
            raise DomainError("the right-hand side must be finite")
        if self.mode == FluxMode.direct:
            if self.coeff is None or self.eps is None:
                raise DomainError("direct problems need a coefficient and eps")
            if not 0.0 < self.eps <= 1.0:
                raise DomainError(f"eps must lie in (0, 1], got {self.eps}")
            if self.coeff.dim != self.mesh.dim:
                raise DomainError("coefficient and mesh dimensions differ")
            h = float(np.max(self.mesh.spacing))
            if h > RESOLUTION * self.eps**2 * (1.0 + 1e-12):
                raise ResolutionError(
                    f"mesh spacing {h:.3e} does not resolve eps^2/4 = {RESOLUTION * self.eps ** 2:.3e}"
                )
        else:
            if self.table is None:
                raise DomainError("effective problems need a flux table")
            if self.table.dim != self.mesh.dim:
                raise DomainError("flux table and mesh dimensions differ")
        if self.nf is None:
            self.nf = self.coeff.phi if self.coeff is not None else NFunction.power(2.0)

    @classmethod
    def direct(cls, coeff: Coefficient, eps: float, mesh: Mesh, rhs: Field) -> "EllipticProblem":
        return cls(mesh, FluxMode.direct, rhs, coeff=coeff, eps=eps)

    @classmethod
    def effective(cls, table: FluxTable, mesh: Mesh, rhs: Field, nf: Optional[NFunction] = None) -> "EllipticProblem":
        return cls(mesh, FluxMode.effective, rhs, table=table, nf=nf)

    @property
    def zeta_dependent(self) -> bool:
        if self.mode == FluxMode.direct:
            return self.coeff.zeta_dependent
        return bool(self.table.metadata.get("zeta_dependent", True))

    def flux(self, points: np.ndarray, u: np.ndarray, du: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flux, d flux / d Du and d flux / d u at quadrature points."""
        if self.mode == FluxMode.direct:
            y, z = points / self.eps, points / self.eps**2
            return (
                self.coeff.flux(y, z, u, du),
                self.coeff.jacobian(y, z, u, du),
                self.coeff.zeta_jacobian(y, z, u, du),
            )
        F = self.table.query(u, du)
        dr, dxi = self.table.derivatives(u, du)
        return F, dxi, dr


@dataclass
class SolveReport:
    solution: Field
    residual: float
    newton_iters: int
    energy: float
    mode: FluxMode = FluxMode.direct
    clamped: int = 0
    sobolev_norm: float = 0.0
    rhs_dual_norm: float = 0.0
    history: List[float] = field(default_factory=list)

    @property
    def stats(self) -> SolveStats:
        return SolveStats(
            mode=self.mode,
            residual=self.residual,
            newton_iters=self.newton_iters,
            energy=self.energy,
            clamped=self.clamped,
            sobolev_norm=self.sobolev_norm,
            rhs_dual_norm=self.rhs_dual_norm,
            history=self.history,
        )


class _DirichletSystem:
    """Interior-node residual sum_k G_k^T (w F_k) - load with boundary values eliminated."""

    def __init__(self, problem: EllipticProblem, method: str):
        self.problem = problem
        self.mesh = problem.mesh
        self.op = quadrature(problem.mesh)
        self.interior = np.flatnonzero(~self.mesh.boundary)
        f_q = self.op.value_at(problem.rhs.flat)
        self.load = self.op.value.T @ (self.op.weights * f_q)
        if method == "auto":
            method = "cg" if self.mesh.dim == 2 and not problem.zeta_dependent else "direct"
        self.method = method
        self._memo: Optional[Tuple[np.ndarray, Tuple[np.ndarray, ...]]] = None

    def full(self, x: np.ndarray) -> np.ndarray:
        u = np.zeros(self.mesh.size)
        u[self.interior] = x
        return u

    def state(self, x: np.ndarray) -> Tuple[np.ndarray, ...]:
        if self._memo is not None and np.array_equal(self._memo[0], x):
            return self._memo[1]
        u = self.full(x)
        uq = self.op.value_at(u)
        duq = self.op.gradient_at(u)
        F, B, D = self.problem.flux(self.op.points, uq, duq)
        out = (u, uq, duq, F, B, D)
        self._memo = (x.copy(), out)
        return out

    def residual(self, x: np.ndarray) -> np.ndarray:
        F = self.state(x)[3]
        return (self.op.divergence(F) - self.load)[self.interior]

    def _restrict(self, A: sp.spmatrix) -> sp.csr_matrix:
        A = A.tocsr()
        return A[self.interior][:, self.interior].tocsr()

    def jacobian(self, x: np.ndarray) -> Tuple[sp.spmatrix, bool]:
        _, _, _, _, B, D = self.state(x)
        J = self.op.stiffness(B)
        if np.any(D):
            J = J + self.op.coupling(D)
        sym = 0.5 * (B + np.swapaxes(B, -1, -2))
        positive = bool(np.min(np.linalg.eigvalsh(sym)) > 0.0)
        return self._restrict(J), positive

    def picard(self, x: np.ndarray) -> np.ndarray:
        _, uq, duq, F, B, _ = self.state(x)
        sq = np.sum(duq * duq, axis=1)
        trace = np.trace(B, axis1=1, axis2=2) / self.mesh.dim
        mu = np.where(sq > DEGENERATE_LAMBDA**2, np.sum(F * duq, axis=1) / np.where(sq > 0, sq, 1.0), trace)
        flat = (sq <= DEGENERATE_LAMBDA**2) & (trace <= 0.0)
        if np.any(flat):
            # no tangent at a vanishing gradient: use the secant modulus at a unit gradient
            e = np.zeros_like(duq)
            e[:, 0] = 1.0
            mu = np.where(flat, self.problem.flux(self.op.points, uq, e)[0][:, 0], mu)
        if np.any(~(mu > 0.0)):
            raise CoercivityError("frozen-coefficient modulus is not positive on the macroscopic domain")
        A = self.op.stiffness(mu[:, None, None] * np.eye(self.mesh.dim))
        return self.solve(self._restrict(A), self.load[self.interior])

    def solve(self, A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
        return linear_solve(A, b, method=self.method)

    def project(self, x: np.ndarray) -> np.ndarray:
        return x


def solve(
    problem: EllipticProblem,
    tol: Optional[float] = None,
    method: str = "auto",
    max_iter: int = 50,
) -> SolveReport:
    """Discrete weak solution of ``problem``; boundary nodal values are exactly zero."""
    linear = problem.mode == FluxMode.direct and problem.coeff.linear
    if tol is None:
        tol = 1e-10 if linear else 1e-8
    if not tol > 0:
        raise DomainError("tolerance must be positive")
    rhs_dual = luxemburg_norm(problem.rhs, complementary(problem.nf))
    if not np.isfinite(rhs_dual):
        raise DomainError("the right-hand side has infinite complementary Luxemburg norm")

    clamped_before = problem.table.clamped if problem.table is not None else 0
    system = _DirichletSystem(problem, method)
    x0 = np.zeros(system.interior.size)
    r0 = float(np.linalg.norm(system.residual(x0)))
    # roundoff floor of large fine-scale systems
    stall_tol = 1e3 * tol * max(1.0, r0)
    x, info = damped_newton(system, x0, tol=tol, max_iter=max_iter, stall_tol=stall_tol, name=problem.mode.value)
    u, uq, duq, F, _, _ = system.state(x)
    w = system.op.weights
    f_q = system.op.value_at(problem.rhs.flat)
    energy = float(w @ np.sum(F * duq, axis=1) - w @ (f_q * uq))
    solution = Field(problem.mesh, u)
    clamped = problem.table.clamped - clamped_before if problem.table is not None else 0
    if clamped:
        logger.warning(f"{clamped} flux-table queries were clamped to the table range")
    report = SolveReport(
        solution=solution,
        residual=info.residual,
        newton_iters=info.iterations,
        energy=energy,
        mode=problem.mode,
        clamped=clamped,
        sobolev_norm=sobolev_norm(solution, problem.nf),
        rhs_dual_norm=rhs_dual,
        history=info.history,
    )
    logger.info(
        f"{problem.mode.value} solve on n={problem.mesh.n}: {info.iterations} Newton steps, residual {info.residual:.3e}"
    )
    return report


def weak_form_defect(problem: EllipticProblem, solution: Field, test: Field) -> float:
    """|int flux . Dv - int f v| for a nodal test field v."""
    op = quadrature(problem.mesh)
    u = solution.flat
    F, _, _ = problem.flux(op.points, op.value_at(u), op.gradient_at(u))
    w = op.weights
    lhs = w @ np.sum(F * op.gradient_at(test.flat), axis=1)
    rhs = w @ (op.value_at(problem.rhs.flat) * op.value_at(test.flat))
    return abs(float(lhs - rhs))


# corrector reconstruction


def _cell_gradients(mesh: Mesh, U: np.ndarray) -> np.ndarray:
    """Nodal central-difference gradients of m periodic fields, (m, N) -> (m, N, d)."""
    m = U.shape[0]
    V = U.reshape((m,) + mesh.shape)
    comps = [(np.roll(V, -1, axis=k + 1) - np.roll(V, 1, axis=k + 1)) / (2.0 * h) for k, h in enumerate(mesh.spacing)]
    return np.stack(comps, axis=-1).reshape(m, mesh.size, mesh.dim)


@dataclass(eq=False)
class Reconstruction:
    """The two-scale corrected fields sampled on a fine mesh for one eps."""

    eps: float
    gradient: Field
    naive_gradient: Field
    first_order: Field
    correctors: "CorrectorField"


@dataclass(eq=False)
class CorrectorField:
    """
    Correctors at the reconstruction nodes x_j: pi1(u0, Du0) on the Y mesh and
    pi2(y, u0, Du0 + D_y pi1) on the Z mesh, with their gradients.
    """

    recon_mesh: Mesh
    y_mesh: Mesh
    z_mesh: Mesh
    du0: np.ndarray
    pi1: np.ndarray
    dpi1: np.ndarray
    pi2: np.ndarray
    dpi2: np.ndarray

    @property
    def correction(self) -> np.ndarray:
        """D_y pi1 + D_z pi2, shape (nx, Ny, Nz, d)."""
        return self.dpi1[:, :, None, :] + self.dpi2

    def correction_grid(self) -> TensorGrid:
        d = self.recon_mesh.dim
        shape = self.recon_mesh.shape + self.y_mesh.shape + self.z_mesh.shape + (d,)
        return TensorGrid(self.recon_mesh, self.correction.reshape(shape), self.y_mesh, self.z_mesh)

    def micro_gradient(self) -> MultiscaleField:
        """Du0(x) + D_y pi1(x, y) + D_z pi2(x, y, z) as a multiscale field."""
        d = self.recon_mesh.dim
        shape = self.recon_mesh.shape + self.y_mesh.shape + self.z_mesh.shape + (d,)
        values = self.du0[:, None, None, :] + self.correction
        return MultiscaleField(d, grid=TensorGrid(self.recon_mesh, values.reshape(shape), self.y_mesh, self.z_mesh))

    def sample(self, u0: Field, eps: float, mesh: Mesh) -> Reconstruction:
        """G_eps, Du0 and u0 + eps u1 + eps^2 u2 at the nodes of ``mesh``."""
        if not 0.0 < eps <= 1.0:
            raise DomainError(f"eps must lie in (0, 1], got {eps}")
        d = mesh.dim
        pts = mesh.points()
        y, z = pts / eps, pts / eps**2
        naive = interpolate(gradient(u0), pts).reshape(-1, d)
        corr = self.correction_grid()(pts, y, z).reshape(-1, d)
        nx = self.recon_mesh.shape
        u1 = TensorGrid(self.recon_mesh, self.pi1.reshape(nx + self.y_mesh.shape), self.y_mesh)(pts, y, z)[:, 0]
        u2 = TensorGrid(
            self.recon_mesh, self.pi2.reshape(nx + self.y_mesh.shape + self.z_mesh.shape), self.y_mesh, self.z_mesh
        )(pts, y, z)[:, 0]
        first = interpolate(u0, pts) + eps * u1 + eps**2 * u2
        return Reconstruction(
            eps=eps,
            gradient=Field(mesh, naive + corr, FieldKind.vector),
            naive_gradient=Field(mesh, naive, FieldKind.vector),
            first_order=Field(mesh, first),
            correctors=self,
        )


class _CorrectorBuilder:
    """Per-node cell solves; lambda-linear coefficients superpose unit correctors cached by r."""

    def __init__(self, coeff: Coefficient, mesh_y: Mesh, mesh_z: Mesh, cache: Optional[FluxCache], tol, method):
        self.coeff = coeff
        self.mesh_y = mesh_y
        self.mesh_z = mesh_z
        self.tol = tol
        self.method = method
        self.hev = HEvaluator(coeff, mesh_z, cache, tol, method)
        self.z_coeff = fast_factor(coeff) if coeff.separable else coeff
        self._units: Dict[Tuple, Tuple[np.ndarray, ...]] = {}
        self._lock = threading.Lock()

    def _z_batch(self, r: float, lams: np.ndarray):
        ys = np.zeros_like(lams) if self.coeff.separable else self.mesh_y.points()
        batch = solve_z_batch(self.z_coeff, ys, r, lams, self.mesh_z, self.tol, self.method)
        return batch.correctors, _cell_gradients(self.mesh_z, batch.correctors)

    def units(self, r: float) -> Tuple[np.ndarray, ...]:
        """(psi, dpsi, chi, dchi) for unit slopes e_l: shapes (d, Ny), (d, Ny, d), (d, Ny|1, Nz), (d, Ny|1, Nz, d)."""
        key = quantize(r) if self.coeff.zeta_dependent else ()
        with self._lock:
            hit = self._units.get(key)
        if hit is not None:
            return hit
        d, Ny = self.coeff.dim, self.mesh_y.size
        psi = np.empty((d, Ny))
        for l in range(d):
            sol = solve_cell_y(self.coeff, r, np.eye(d)[l], self.mesh_y, self.mesh_z, tol=self.tol, method=self.method, evaluator=self.hev)
            psi[l] = sol.corrector.flat
        dpsi = _cell_gradients(self.mesh_y, psi)
        if self.coeff.separable:
            chi, dchi = self._z_batch(r, np.eye(d))
            chi, dchi = chi[:, None], dchi[:, None]
        else:
            ys = np.repeat(self.mesh_y.points(), d, axis=0)
            batch = solve_z_batch(self.coeff, ys, r, np.tile(np.eye(d), (Ny, 1)), self.mesh_z, self.tol, self.method)
            Nz = self.mesh_z.size
            chi = batch.correctors.reshape(Ny, d, Nz).transpose(1, 0, 2)
            dchi = _cell_gradients(self.mesh_z, batch.correctors).reshape(Ny, d, Nz, d).transpose(1, 0, 2, 3)
        out = (psi, dpsi, chi, dchi)
        with self._lock:
            self._units.setdefault(key, out)
        return out

    def node(self, r: float, xi: np.ndarray) -> Tuple[np.ndarray, ...]:
        if self.coeff.linear:
            psi, dpsi, chi, dchi = self.units(r)
            pi1 = xi @ psi
            dpi1 = np.einsum("l,lnk->nk", xi, dpsi)
            lam = xi[None, :] + dpi1
            pi2 = np.einsum("nl,lnz->nz", lam, np.broadcast_to(chi, (chi.shape[0], lam.shape[0], chi.shape[2])))
            dchi_b = np.broadcast_to(dchi, (dchi.shape[0], lam.shape[0]) + dchi.shape[2:])
            dpi2 = np.einsum("nl,lnzk->nzk", lam, dchi_b)
            return pi1, dpi1, pi2, dpi2
        sol = solve_cell_y(self.coeff, r, xi, self.mesh_y, self.mesh_z, tol=self.tol, method=self.method, evaluator=self.hev)
        pi1 = sol.corrector.flat
        dpi1 = _cell_gradients(self.mesh_y, pi1[None])[0]
        lam = xi[None, :] + dpi1
        pi2, dpi2 = self._z_batch(r, lam)
        return pi1, dpi1, pi2, dpi2


def build_correctors(
    u0: Field,
    coeff: Coefficient,
    recon_n: int = 32,
    cell_n: int = 64,
    cell_n_y: Optional[int] = None,
    cache: Optional[FluxCache] = None,
    tol: Optional[float] = None,
    method: str = "auto",
    jobs: int = 1,
) -> CorrectorField:
    """Solve the cell problems at the (u0, Du0) values of a coarse reconstruction mesh."""
    if u0.mesh.dim != coeff.dim:
        raise DomainError("macroscopic solution and coefficient dimensions differ")
    d = coeff.dim
    recon = Mesh(d, u0.mesh.lo, u0.mesh.hi, recon_n)
    pts = recon.points()
    r = interpolate(u0, pts)
    xi = interpolate(gradient(u0), pts).reshape(-1, d)
    mesh_y = coeff.y_mesh(cell_n_y or cell_n)
    mesh_z = coeff.z_mesh(cell_n)
    builder = _CorrectorBuilder(coeff, mesh_y, mesh_z, cache, tol, method)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        parts = list(pool.map(lambda j: builder.node(float(r[j]), xi[j]), range(recon.size)))

    logger.info(f"correctors at {recon.size} nodes for {coeff.name} ({builder.hev.solves} fast-cell solves)")
    return CorrectorField(
        recon_mesh=recon,
        y_mesh=mesh_y,
        z_mesh=mesh_z,
        du0=xi,
        pi1=np.stack([p[0] for p in parts]),
        dpi1=np.stack([p[1] for p in parts]),
        pi2=np.stack([p[2] for p in parts]),
        dpi2=np.stack([p[3] for p in parts]),
    )


def corrector_reconstruct(
    u0: Field,
    coeff: Coefficient,
    eps: float,
    mesh: Mesh,
    correctors: Optional[CorrectorField] = None,
    **kwargs: Any,
) -> Reconstruction:
    """
    G_eps = Du0 + D_y pi1(x/eps) + D_z pi2(x/eps^2) and u0 + eps u1 + eps^2 u2 on ``mesh``.

    ``correctors`` from an earlier call can be reused across eps; otherwise they are
    built with ``kwargs`` forwarded to :func:`build_correctors`.
    """
    if correctors is None:
        correctors = build_correctors(u0, coeff, **kwargs)
    return correctors.sample(u0, eps, mesh)
