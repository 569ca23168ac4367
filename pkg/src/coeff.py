"""
Flux coefficients a(y, z, zeta, lambda), the built-in problem catalog and the
sampling validator for the structural hypotheses on a.

Fluxes are vectorized: y and z are (M, d) cell points, zeta is (M,) and lambda is
(M, d); the flux is returned as (M, d).
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import qmc

from .datamodel import AlgebraClass, CoefficientSpec, HypothesisCheck, HypothesisReport, ProblemConfig, StructureClass
from .fields import BInfinity, Mesh, MultiscaleField, TrigPoly
from .nfunc import NFunction, complementary, simonenko_bounds
from .utils import CatalogError, ConfigError, DomainError, compile_expression, dyadic_grid

logger = logging.getLogger(__name__)

SAMPLE_BOX = 10.0
MIN_SAMPLES = 1000
RHO_GRID = (1e-1, 1e-2, 1e-3, 1e-4)
DEGENERATE_LAMBDA = 1e-14
CONTINUITY_FLOOR = 1e-3
TWO_PI = 2.0 * np.pi

FluxFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _points(v: Any, dim: int) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return np.full((1, dim), float(arr))
    if arr.ndim == 1:
        return arr[:, None] if dim == 1 else arr[None, :]
    return arr


@dataclass(frozen=True, eq=False)
class Coefficient:
    name: str
    dim: int
    flux_fn: FluxFn
    structure_class: StructureClass
    phi: NFunction
    psi: Optional[NFunction] = None
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0
    c5: float = 1.0
    h_fn: Callable[[np.ndarray], np.ndarray] = field(default=lambda t: np.full(np.shape(t), 0.5))
    h_min: float = 0.5
    jacobian_fn: Optional[Callable[..., np.ndarray]] = None
    zeta_jacobian_fn: Optional[Callable[..., np.ndarray]] = None
    y_factor: Optional[Callable[[np.ndarray], np.ndarray]] = None
    z_flux: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    z_jacobian: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    linear: bool = False
    zeta_dependent: bool = False
    y_box: Tuple[float, float] = (0.0, 1.0)
    z_box: Tuple[float, float] = (0.0, 1.0)
    dictionary: Tuple[MultiscaleField, ...] = ()
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError("coefficients are defined in 1D or 2D")
        if self.psi is None:
            # Psi = Phi is always admissible in the growth chain
            object.__setattr__(self, "psi", self.phi)
        object.__setattr__(self, "structure_class", StructureClass(self.structure_class))

    def _broadcast(self, y, z, zeta, lam):
        d = self.dim
        y, z, lam = _points(y, d), _points(z, d), _points(lam, d)
        zeta = np.atleast_1d(np.asarray(zeta, dtype=float)).ravel()
        M = max(y.shape[0], z.shape[0], lam.shape[0], zeta.shape[0])
        return (
            np.broadcast_to(y, (M, d)),
            np.broadcast_to(z, (M, d)),
            np.broadcast_to(zeta, (M,)),
            np.broadcast_to(lam, (M, d)),
        )

    def flux(self, y: Any, z: Any, zeta: Any, lam: Any) -> np.ndarray:
        """a(y, z, zeta, lambda) as an (M, d) array."""
        return np.asarray(self.flux_fn(*self._broadcast(y, z, zeta, lam)), dtype=float)

    __call__ = flux

    def jacobian(self, y: Any, z: Any, zeta: Any, lam: Any) -> np.ndarray:
        """d a / d lambda, shape (M, d, d); central differences without an analytic form."""
        y, z, zeta, lam = self._broadcast(y, z, zeta, lam)
        if self.jacobian_fn is not None:
            return np.asarray(self.jacobian_fn(y, z, zeta, lam), dtype=float)
        out = np.empty(lam.shape + (self.dim,))
        for k in range(self.dim):
            step = 1e-6 * np.maximum(1.0, np.abs(lam[:, k]))
            shift = np.zeros_like(lam)
            shift[:, k] = step
            diff = self.flux_fn(y, z, zeta, lam + shift) - self.flux_fn(y, z, zeta, lam - shift)
            out[:, :, k] = diff / (2.0 * step[:, None])
        return out

    def zeta_jacobian(self, y: Any, z: Any, zeta: Any, lam: Any) -> np.ndarray:
        """d a / d zeta, shape (M, d)."""
        y, z, zeta, lam = self._broadcast(y, z, zeta, lam)
        if not self.zeta_dependent:
            return np.zeros(lam.shape)
        if self.zeta_jacobian_fn is not None:
            return np.asarray(self.zeta_jacobian_fn(y, z, zeta, lam), dtype=float)
        step = 1e-6 * np.maximum(1.0, np.abs(zeta))
        diff = self.flux_fn(y, z, zeta + step, lam) - self.flux_fn(y, z, zeta - step, lam)
        return diff / (2.0 * step[:, None])

    @property
    def separable(self) -> bool:
        """True when a = c_y(y) a_z(z, zeta, lambda)."""
        return self.y_factor is not None and self.z_flux is not None

    @property
    def y_algebra(self) -> AlgebraClass:
        if self.structure_class in (StructureClass.ap_periodic, StructureClass.ap_binf):
            return AlgebraClass.almost_periodic
        return AlgebraClass.periodic

    @property
    def z_algebra(self) -> AlgebraClass:
        if self.structure_class in (StructureClass.ap_binf, StructureClass.periodic_binf):
            return AlgebraClass.b_infinity
        return AlgebraClass.periodic

    def y_mesh(self, n: int) -> Mesh:
        lo, hi = self.y_box
        return Mesh(self.dim, (lo,) * self.dim, (hi,) * self.dim, n, periodic=True)

    def z_mesh(self, n: int) -> Mesh:
        lo, hi = self.z_box
        return Mesh(self.dim, (lo,) * self.dim, (hi,) * self.dim, n, periodic=True)

    def theta(self, zeta: Any) -> np.ndarray:
        """Phi~^{-1}(Phi(h(|zeta|))), the degenerate coercivity modulus."""
        h = self.h_fn(np.abs(np.asarray(zeta, dtype=float)))
        return complementary(self.phi).inverse(self.phi.value(h))

    def describe(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "dim": self.dim,
            "structure_class": self.structure_class.value,
            "phi": self.phi.describe(),
            "psi": self.psi.describe(),
            "constants": {f"c{i}": getattr(self, f"c{i}") for i in range(1, 6)},
            "h_min": self.h_min,
            "linear": self.linear,
            "zeta_dependent": self.zeta_dependent,
            "separable": self.separable,
            "y_box": list(self.y_box),
            "z_box": list(self.z_box),
            "params": dict(self.params),
        }


def effective_integrand(coeff: Coefficient) -> Coefficient:
    """
    The flux used inside the cell problems.

    On concrete representatives the conjugation to the spectrum is the identity, so
    this is the coefficient itself evaluated on cell coordinates.
    """
    if not isinstance(coeff.structure_class, StructureClass):
        raise DomainError(f"unknown structure class {coeff.structure_class}")
    return coeff


# validation


def _rel(smaller: np.ndarray, larger: np.ndarray) -> np.ndarray:
    """(larger - smaller) / (|larger| + |smaller|), 1 where both vanish."""
    den = np.abs(larger) + np.abs(smaller)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (larger - smaller) / den
    return np.where(den > 0, out, 1.0)


class _Samples:
    def __init__(self, coeff: Coefficient, samples: int, seed: int):
        d = coeff.dim
        u = qmc.Halton(d=4 * d + 2, scramble=True, seed=seed).random(samples)
        ylo, yhi = coeff.y_box
        zlo, zhi = coeff.z_box
        self.y = ylo + (yhi - ylo) * u[:, :d]
        self.z = zlo + (zhi - zlo) * u[:, d : 2 * d]
        self.zeta = SAMPLE_BOX * (2.0 * u[:, 2 * d] - 1.0)
        self.lam = SAMPLE_BOX * (2.0 * u[:, 2 * d + 1 : 3 * d + 1] - 1.0)
        self.zeta2 = SAMPLE_BOX * (2.0 * u[:, 3 * d + 1] - 1.0)
        self.lam2 = SAMPLE_BOX * (2.0 * u[:, 3 * d + 2 :] - 1.0)

    def witness(self, i: int, with_primes: bool = True) -> Dict[str, Any]:
        out = {
            "y": self.y[i].tolist(),
            "z": self.z[i].tolist(),
            "zeta": float(self.zeta[i]),
            "lam": self.lam[i].tolist(),
        }
        if with_primes:
            out["zeta2"] = float(self.zeta2[i])
            out["lam2"] = self.lam2[i].tolist()
        return out


def _check(name: str, margins: np.ndarray, s: _Samples, strict: bool = True, note: str = "") -> HypothesisCheck:
    margins = np.where(np.isnan(margins), -np.inf, margins)
    i = int(np.argmin(margins))
    worst = float(margins[i])
    passed = worst > 0 if strict else worst >= 0
    return HypothesisCheck(
        name=name,
        passed=bool(passed),
        margin=worst if np.isfinite(worst) else -1.0,
        witness=None if passed else s.witness(i),
        note=note,
    )


def _check_measurability(coeff: Coefficient, s: _Samples, A: np.ndarray, A2: np.ndarray) -> HypothesisCheck:
    finite = np.all(np.isfinite(A), axis=1) & np.all(np.isfinite(A2), axis=1)
    at_zero = coeff.flux(s.y, s.z, 0.0, np.zeros_like(s.lam))
    sup = float(np.max(np.abs(at_zero))) if np.all(np.isfinite(at_zero)) else np.inf
    if not np.all(finite) or not np.isfinite(sup):
        i = int(np.argmin(finite)) if not np.all(finite) else 0
        return HypothesisCheck(name="measurability", passed=False, margin=-1.0, witness=s.witness(i))
    return HypothesisCheck(
        name="measurability", passed=True, margin=1.0 / (1.0 + sup), note=f"sup |a(y,z,0,0)| = {sup:.3e}"
    )


def _check_growth(coeff: Coefficient) -> HypothesisCheck:
    grid = dyadic_grid()
    grid = grid[grid <= min(coeff.phi.t_max, coeff.psi.t_max)]
    sp = simonenko_bounds(coeff.phi, grid)
    sq = simonenko_bounds(coeff.psi, grid)
    chain = sp["lo"] - sq["hi"]
    constants = min(coeff.c1 - 0.5, coeff.c3 - 0.5, coeff.c2, coeff.c4)
    note = f"rho0={sq['lo']:.6g} t psi/Psi<={sq['hi']:.6g} t phi/Phi in [{sp['lo']:.6g}, {sp['hi']:.6g}]"
    if chain >= -1e-10:
        margin = min(sq["lo"] - 1.0, constants)
    else:
        margin = chain
    passed = margin > 0
    witness = None
    if not passed:
        ratio = grid * coeff.psi.density(grid) / coeff.psi.value(grid)
        witness = {"t": float(grid[int(np.argmax(ratio))])}
    return HypothesisCheck(name="growth_indices", passed=passed, margin=float(margin), witness=witness, note=note)


def _check_continuity(coeff: Coefficient, s: _Samples, A: np.ndarray, A2: np.ndarray) -> HypothesisCheck:
    lhs = np.linalg.norm(A - A2, axis=1)
    dz = np.abs(s.zeta - s.zeta2)
    dl = np.linalg.norm(s.lam - s.lam2, axis=1)
    phi_c, psi_c = complementary(coeff.phi), complementary(coeff.psi)
    rhs = coeff.c1 * psi_c.inverse(coeff.phi.value(coeff.c2 * dz)) + coeff.c3 * phi_c.inverse(
        coeff.phi.value(coeff.c4 * dl)
    )
    return _check("continuity", _rel(lhs, rhs), s, strict=False)


def _check_h(coeff: Coefficient) -> HypothesisCheck:
    t = np.concatenate([np.linspace(0.0, SAMPLE_BOX, 1001)])
    hv = np.asarray(coeff.h_fn(t), dtype=float)
    rise = float(np.max(np.diff(hv))) if hv.size > 1 else 0.0
    mismatch = abs(float(np.min(hv)) - coeff.h_min)
    if rise > 1e-14:
        i = int(np.argmax(np.diff(hv)))
        return HypothesisCheck(name="decreasing_h", passed=False, margin=-rise, witness={"t": float(t[i + 1])})
    if mismatch > 1e-10:
        return HypothesisCheck(
            name="decreasing_h",
            passed=False,
            margin=-mismatch,
            witness={"t": float(t[int(np.argmin(hv))])},
            note=f"declared h_min {coeff.h_min} differs from the sampled minimum",
        )
    margin = min(float(np.min(hv)), 1.0 - float(np.max(hv)))
    witness = None if margin > 0 else {"t": float(t[int(np.argmin(np.minimum(hv, 1.0 - hv)))])}
    return HypothesisCheck(name="decreasing_h", passed=margin > 0, margin=margin, witness=witness)


def _check_coercivity(coeff: Coefficient, s: _Samples, A: np.ndarray) -> HypothesisCheck:
    lhs = np.sum(A * s.lam, axis=1)
    rhs = coeff.theta(s.zeta) * coeff.phi.value(np.linalg.norm(s.lam, axis=1))
    return _check("coercivity", _rel(rhs, lhs), s)


def _check_positivity(s: _Samples, A: np.ndarray, A3: np.ndarray) -> HypothesisCheck:
    D = A - A3
    dl = s.lam - s.lam2
    den = np.linalg.norm(D, axis=1) * np.linalg.norm(dl, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = np.where(den > 0, np.sum(D * dl, axis=1) / den, 0.0)
    return _check("positivity", cosine, s)


def _check_local_continuity(coeff: Coefficient, s: _Samples, A: np.ndarray) -> HypothesisCheck:
    eta = 1e-3 * max(1.0, float(np.max(np.abs(A))))
    dl = s.lam2 - s.lam
    norms = np.linalg.norm(dl, axis=1, keepdims=True)
    direction = np.where(norms > 0, dl / np.where(norms > 0, norms, 1.0), 0.0)
    best, best_rho, worst_i = np.inf, None, 0
    for rho in RHO_GRID:
        shifted = coeff.flux(s.y - rho * direction, s.z, s.zeta, s.lam)
        dev = np.linalg.norm(shifted - A, axis=1)
        sup = float(np.max(dev))
        if sup < best:
            best, best_rho, worst_i = sup, rho, int(np.argmax(dev))
    margin = (eta - best) / eta
    return HypothesisCheck(
        name="local_continuity_y",
        passed=margin > 0,
        margin=margin,
        witness=None if margin > 0 else s.witness(worst_i, with_primes=False),
        note=f"rho={best_rho:g} eta={eta:.3e}",
    )


def _check_strict_monotonicity(coeff: Coefficient, s: _Samples, A: np.ndarray, A3: np.ndarray) -> HypothesisCheck:
    dl = s.lam - s.lam2
    v = np.sum((A - A3) * dl, axis=1)
    rhs = coeff.c5 * coeff.phi.value(np.linalg.norm(dl, axis=1))
    return _check("strict_monotonicity", _rel(rhs, v), s, note="checked at equal zeta")


def validate(coeff: Coefficient, samples: int = 10_000, seed: int = 0) -> HypothesisReport:
    """
    Check the structural hypotheses on seeded quasi-random samples.

    Failures are reported as data with the worst sample as witness; no exception is
    raised for a failing hypothesis.
    """
    if samples < MIN_SAMPLES:
        raise DomainError(f"validation needs at least {MIN_SAMPLES} samples, got {samples}")
    s = _Samples(coeff, samples, seed)
    A = coeff.flux(s.y, s.z, s.zeta, s.lam)
    A2 = coeff.flux(s.y, s.z, s.zeta2, s.lam2)
    A3 = coeff.flux(s.y, s.z, s.zeta, s.lam2)

    with np.errstate(over="ignore", invalid="ignore"):
        checks = [
            _check_measurability(coeff, s, A, A2),
            _check_growth(coeff),
            _check_continuity(coeff, s, A, A2),
            _check_h(coeff),
            _check_coercivity(coeff, s, A),
            _check_positivity(s, A, A3),
            _check_local_continuity(coeff, s, A),
            _check_strict_monotonicity(coeff, s, A, A3),
        ]
    report = HypothesisReport(problem=coeff.name, samples=samples, seed=seed, checks=checks)
    for c in checks:
        if not c.passed:
            logger.warning(f"{coeff.name}: hypothesis {c.name} fails with margin {c.margin:.3e}")
    return report


# catalog


def _const_h(value: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda t: np.full(np.shape(t), value)


def _separable(
    name: str,
    dim: int,
    cy: Callable[[np.ndarray], np.ndarray],
    z_flux: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    z_jac: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    **kwargs: Any,
) -> Coefficient:
    def flux_fn(y, z, zeta, lam):
        return cy(y)[:, None] * z_flux(z, zeta, lam)

    def jacobian_fn(y, z, zeta, lam):
        return cy(y)[:, None, None] * z_jac(z, zeta, lam)

    return Coefficient(
        name=name,
        dim=dim,
        flux_fn=flux_fn,
        jacobian_fn=jacobian_fn,
        y_factor=cy,
        z_flux=z_flux,
        z_jacobian=z_jac,
        **kwargs,
    )


def _scaled_identity(cz: Callable[[np.ndarray], np.ndarray]):
    def z_flux(z, zeta, lam):
        return cz(z)[:, None] * lam

    def z_jac(z, zeta, lam):
        return cz(z)[:, None, None] * np.eye(lam.shape[1])[None, :, :]

    return z_flux, z_jac


def _sin(axis: int = 0, dim: int = 1, omega: float = TWO_PI) -> TrigPoly:
    freq = np.zeros(dim)
    freq[axis] = omega
    return TrigPoly.from_terms([(freq, 0.0, 1.0)], dim)


def _cos(omega: float, dim: int = 1) -> TrigPoly:
    return TrigPoly.from_terms([(np.full(dim, omega), 1.0, 0.0)], dim)


def _bump(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.sum(z * z, axis=1))


def _ap_factor(y: np.ndarray) -> np.ndarray:
    return 2.0 + np.cos(y[:, 0]) + np.cos(np.sqrt(2.0) * y[:, 0])


def lin1d() -> Coefficient:
    """a = (2 + sin 2 pi y)(2 + sin 2 pi z) lambda."""
    z_flux, z_jac = _scaled_identity(lambda z: 2.0 + np.sin(TWO_PI * z[:, 0]))
    sy, sz = _sin(), _sin()
    return _separable(
        "lin1d",
        1,
        lambda y: 2.0 + np.sin(TWO_PI * y[:, 0]),
        z_flux,
        z_jac,
        structure_class=StructureClass.periodic_periodic,
        phi=NFunction.power(2.0),
        c4=10.0,
        linear=True,
        dictionary=(
            MultiscaleField.separable(wy=sy),
            MultiscaleField.separable(vz=sz),
            MultiscaleField.separable(wy=sy, vz=sz),
            MultiscaleField.separable(wy=_cos(TWO_PI)),
        ),
    )


def plap2d(p: float = 3.0, kappa: float = 0.0, ay: float = 0.0) -> Coefficient:
    """
    a = c(y, z) (kappa + |lambda|)^(p-2) lambda with c = (1 + ay sin^2 pi(y1+y2))(2 + sin 2 pi z1 sin 2 pi z2).

    kappa = 0 is the p-Laplacian with Phi = t^p/p. For p > 2 its continuity bound only holds for
    increments above ``CONTINUITY_FLOOR`` inside the sample box, and c4 is sized for that range.
    A positive kappa gives the non-degenerate law with Phi = shifted_power(p, kappa).
    """
    if p < 2.0:
        raise DomainError(f"plap2d needs p >= 2, got {p}")
    if kappa < 0.0 or ay <= -1.0:
        raise DomainError("plap2d needs kappa >= 0 and ay > -1")

    def cy(y):
        return 1.0 + ay * np.sin(np.pi * (y[:, 0] + y[:, 1])) ** 2

    def cz(z):
        return 2.0 + np.sin(TWO_PI * z[:, 0]) * np.sin(TWO_PI * z[:, 1])

    def z_flux(z, zeta, lam):
        mag = np.linalg.norm(lam, axis=1)
        return (cz(z) * (kappa + mag) ** (p - 2.0))[:, None] * lam

    def z_jac(z, zeta, lam):
        mag = np.linalg.norm(lam, axis=1)
        base = (kappa + mag) ** (p - 2.0)
        safe = np.where(mag > DEGENERATE_LAMBDA, mag, 1.0)
        weight = np.where(mag > DEGENERATE_LAMBDA, (p - 2.0) / (safe * (kappa + safe)), 0.0)
        outer = lam[:, :, None] * lam[:, None, :]
        J = np.eye(2)[None, :, :] + weight[:, None, None] * outer
        return (cz(z) * base)[:, None, None] * J

    c_min, c_max = min(1.0, 1.0 + ay), 3.0 * max(1.0, 1.0 + ay)
    radius = np.sqrt(2.0) * SAMPLE_BOX
    if kappa > 0.0:
        phi = NFunction.shifted_power(p, kappa)
        growth = c_max * (p - 1.0) * (kappa + radius) ** (p - 2.0)
        c4 = 2.0 * growth / kappa ** (p - 2.0)
        c5 = 0.5 * c_min * p * 2.0 ** (2.0 - p) / (p - 1.0)
    else:
        phi = NFunction.power(p)
        # Phi~^{-1}(Phi(t)) = k t^(p-1) against the Lipschitz bound of |lambda|^(p-2) lambda on the box
        k = float(complementary(phi).inverse(phi.value(1.0)))
        lipschitz = c_max * (p - 1.0) * radius ** (p - 2.0)
        c4 = 2.0 * (lipschitz * CONTINUITY_FLOOR ** (2.0 - p) / k) ** (1.0 / (p - 1.0))
        c5 = 0.5 * c_min * p * 2.0 ** (2.0 - p)
    diag = TrigPoly.from_terms([((TWO_PI, TWO_PI), 0.0, 1.0)], 2)
    checker = TrigPoly.from_terms([((TWO_PI, -TWO_PI), 0.5, 0.0), ((TWO_PI, TWO_PI), -0.5, 0.0)], 2)
    return _separable(
        "plap2d",
        2,
        cy,
        z_flux,
        z_jac,
        structure_class=StructureClass.periodic_periodic,
        phi=phi,
        psi=NFunction.power(2.0),
        c4=float(c4),
        c5=float(c5),
        linear=p == 2.0,
        dictionary=(
            MultiscaleField.separable(wy=diag, dim=2),
            MultiscaleField.separable(vz=checker, dim=2),
            MultiscaleField.separable(wy=diag, vz=checker, dim=2),
        ),
        params={"p": p, "kappa": kappa, "ay": ay},
    )


def deg1d() -> Coefficient:
    """a = Phi~^{-1}(Phi(h(|zeta|))) phi(|lambda|) lambda/|lambda| with h(t) = 0.5 + 0.4/(1+t), Phi = t^2/2."""
    phi = NFunction.power(2.0)
    conj = complementary(phi)

    def h(t):
        return 0.5 + 0.4 / (1.0 + np.asarray(t, dtype=float))

    def theta(zeta):
        return conj.inverse(phi.value(h(np.abs(zeta))))

    def z_flux(z, zeta, lam):
        mag = np.abs(lam[:, 0])
        safe = np.where(mag > DEGENERATE_LAMBDA, mag, 1.0)
        direction = np.where(mag > DEGENERATE_LAMBDA, lam[:, 0] / safe, 0.0)
        return (theta(zeta) * phi.density(mag) * direction)[:, None]

    def z_jac(z, zeta, lam):
        return (theta(zeta) * phi.density(np.ones_like(zeta)))[:, None, None] * np.ones((1, 1, 1))

    sy, sz = _sin(), _sin()
    return _separable(
        "deg1d",
        1,
        lambda y: np.ones(y.shape[0]),
        z_flux,
        z_jac,
        structure_class=StructureClass.periodic_periodic,
        phi=phi,
        c2=5.0,
        c5=0.5,
        h_fn=h,
        h_min=float(h(SAMPLE_BOX)),
        linear=True,
        zeta_dependent=True,
        dictionary=(MultiscaleField.separable(wy=sy), MultiscaleField.separable(vz=sz)),
    )


def ap1d(cell_length_ap: float = 10.0 * np.pi) -> Coefficient:
    """a = (2 + cos y + cos sqrt2 y)(2 + sin 2 pi z) lambda, almost periodic in y."""
    z_flux, z_jac = _scaled_identity(lambda z: 2.0 + np.sin(TWO_PI * z[:, 0]))
    cy1, cy2, sz = _cos(1.0), _cos(np.sqrt(2.0)), _sin()
    return _separable(
        "ap1d",
        1,
        _ap_factor,
        z_flux,
        z_jac,
        structure_class=StructureClass.ap_periodic,
        phi=NFunction.power(2.0),
        c4=13.0,
        c5=0.01,
        h_fn=_const_h(0.01),
        h_min=0.01,
        linear=True,
        y_box=(0.0, float(cell_length_ap)),
        dictionary=(
            MultiscaleField.separable(wy=cy1),
            MultiscaleField.separable(wy=cy2),
            MultiscaleField.separable(vz=sz),
            MultiscaleField.separable(wy=cy1, vz=sz),
        ),
        params={"cell_length_ap": cell_length_ap},
    )


def binf1d(cell_length_binf: float = 16.0) -> Coefficient:
    """a = (2 + sin 2 pi y)(1.5 + exp(-z^2)) lambda, converging at infinity in z."""
    z_flux, z_jac = _scaled_identity(lambda z: 1.5 + _bump(z))
    sy = _sin()
    bump = BInfinity(0.0, _bump, radius=6.0)
    half = 0.5 * float(cell_length_binf)
    return _separable(
        "binf1d",
        1,
        lambda y: 2.0 + np.sin(TWO_PI * y[:, 0]),
        z_flux,
        z_jac,
        structure_class=StructureClass.periodic_binf,
        phi=NFunction.power(2.0),
        c4=8.0,
        linear=True,
        z_box=(-half, half),
        dictionary=(
            MultiscaleField.separable(wy=sy),
            MultiscaleField.separable(vz=bump),
            MultiscaleField.separable(wy=sy, vz=bump),
        ),
        params={"cell_length_binf": cell_length_binf},
    )


def apbinf1d(cell_length_ap: float = 10.0 * np.pi, cell_length_binf: float = 16.0) -> Coefficient:
    """a = (2 + cos y + cos sqrt2 y)(1.5 + exp(-z^2)) lambda."""
    z_flux, z_jac = _scaled_identity(lambda z: 1.5 + _bump(z))
    cy1 = _cos(1.0)
    bump = BInfinity(0.0, _bump, radius=6.0)
    half = 0.5 * float(cell_length_binf)
    return _separable(
        "apbinf1d",
        1,
        _ap_factor,
        z_flux,
        z_jac,
        structure_class=StructureClass.ap_binf,
        phi=NFunction.power(2.0),
        c4=11.0,
        c5=0.01,
        h_fn=_const_h(0.01),
        h_min=0.01,
        linear=True,
        y_box=(0.0, float(cell_length_ap)),
        z_box=(-half, half),
        dictionary=(
            MultiscaleField.separable(wy=cy1),
            MultiscaleField.separable(vz=bump),
            MultiscaleField.separable(wy=cy1, vz=bump),
        ),
        params={"cell_length_ap": cell_length_ap, "cell_length_binf": cell_length_binf},
    )


def const1d(c0: float = 2.0) -> Coefficient:
    """a = c0 lambda; both correctors vanish."""
    if c0 <= 0:
        raise DomainError("const1d needs c0 > 0")
    z_flux, z_jac = _scaled_identity(lambda z: np.full(z.shape[0], c0))
    return _separable(
        "const1d",
        1,
        lambda y: np.ones(y.shape[0]),
        z_flux,
        z_jac,
        structure_class=StructureClass.periodic_periodic,
        phi=NFunction.power(2.0),
        c4=c0 + 1.0,
        c5=min(1.0, c0),
        linear=True,
        dictionary=(MultiscaleField.separable(wy=_sin()), MultiscaleField.separable(vz=_sin())),
        params={"c0": c0},
    )


def linear(expression: str = "(2+sin(2*pi*y))*(2+sin(2*pi*z))", dim: int = 1) -> Coefficient:
    """a = c(y, z) lambda for a 1-periodic expression c; y, z in 1D, y1, y2, z1, z2 in 2D."""
    names = ["y", "z"] if dim == 1 else ["y1", "y2", "z1", "z2"]
    c = compile_expression(expression, names)

    def cval(y, z):
        return c(*y.T, *z.T)

    n = 64 if dim == 1 else 16
    axis = np.arange(n) / n
    grid = np.stack(np.meshgrid(*([axis] * (2 * dim)), indexing="ij"), axis=-1).reshape(-1, 2 * dim)
    sampled = cval(grid[:, :dim], grid[:, dim:])
    c_min, c_max = float(np.min(sampled)), float(np.max(sampled))
    if not np.isfinite(c_min) or not np.isfinite(c_max):
        raise ConfigError(f"coefficient expression {expression!r} is not finite on the unit cells")

    def flux_fn(y, z, zeta, lam):
        return cval(y, z)[:, None] * lam

    def jacobian_fn(y, z, zeta, lam):
        return cval(y, z)[:, None, None] * np.eye(dim)[None, :, :]

    h = min(0.5, c_min) if c_min > 0 else 0.5
    return Coefficient(
        name="linear",
        dim=dim,
        flux_fn=flux_fn,
        jacobian_fn=jacobian_fn,
        structure_class=StructureClass.periodic_periodic,
        phi=NFunction.power(2.0),
        c4=c_max + 1.0,
        c5=c_min if c_min > 0 else 1.0,
        h_fn=_const_h(h),
        h_min=h,
        linear=True,
        dictionary=(
            MultiscaleField.separable(wy=_sin(0, dim), dim=dim),
            MultiscaleField.separable(vz=_sin(0, dim), dim=dim),
        ),
        params={"expression": expression, "c_min": c_min, "c_max": c_max},
    )


def flipped1d() -> Coefficient:
    """a = -lambda; violates monotonicity on purpose."""
    return Coefficient(
        name="flipped1d",
        dim=1,
        flux_fn=lambda y, z, zeta, lam: -lam,
        jacobian_fn=lambda y, z, zeta, lam: -np.ones((lam.shape[0], 1, 1)),
        structure_class=StructureClass.periodic_periodic,
        phi=NFunction.power(2.0),
        linear=True,
    )


CATALOG: Dict[str, Callable[..., Coefficient]] = {
    "lin1d": lin1d,
    "plap2d": plap2d,
    "deg1d": deg1d,
    "ap1d": ap1d,
    "binf1d": binf1d,
    "apbinf1d": apbinf1d,
    "const1d": const1d,
    "linear": linear,
    "flipped1d": flipped1d,
}

PLANTED = ("flipped1d",)


def catalog_names(include_planted: bool = False) -> List[str]:
    return [n for n in CATALOG if include_planted or n not in PLANTED]


def builtin_problem(name: str, **params: Any) -> Coefficient:
    """Build a catalog coefficient; unknown names raise CatalogError."""
    try:
        builder = CATALOG[name]
    except KeyError:
        raise CatalogError(f"unknown problem {name!r}; known: {', '.join(catalog_names())}") from None
    try:
        return builder(**{k: v for k, v in params.items() if v is not None})
    except TypeError as e:
        raise ConfigError(f"invalid parameters for {name}: {e}") from e


def coefficient_from_config(config: ProblemConfig) -> Coefficient:
    """The coefficient of a problem config; the space dimension must match the domain."""
    spec: CoefficientSpec = config.coefficient
    params = spec.params()
    if spec.name == "linear":
        params["dim"] = config.domain.dim
    elif "expression" in params:
        raise ConfigError("'expression' applies to the 'linear' family only")
    coeff = builtin_problem(spec.name, **params)
    if coeff.dim != config.domain.dim:
        raise ConfigError(f"{coeff.name} is a {coeff.dim}D problem but the domain is {config.domain.dim}D")
    return coeff
