"""
N-function calculus.

An N-function is stored through its density phi; the function itself is
Phi(t) = int_0^t phi(s) ds. Closed forms are used where they exist, monotone
cubic splines for tabulated densities and bisection for every inverse.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from .datamodel import GrowthReport, NFunctionKind, NFunctionSpec
from .utils import DomainError, RangeError, bisect_increasing, dyadic_grid

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

DELTA2_K = (2.1, 4.0, 8.0, 16.0, 32.0)
DELTA_PRIME_BETA = tuple(float(2**k) for k in range(11))
GRID_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class NFunction:
    """
    A Young function Phi with density phi.

    ``power``          Phi = scale * t^p (scale defaults to 1/p)
    ``power_log``      Phi = t^p ln(1+t)
    ``exp_minus_one``  Phi = exp(t^r) - 1
    ``shifted_power``  phi = (kappa + t)^(p-2) t
    ``tabulated``      phi is a monotone spline through (t, phi) samples
    ``conjugate``      numeric complementary function of ``primal``
    """

    kind: NFunctionKind
    p: Optional[float] = None
    scale: Optional[float] = None
    kappa: float = 0.0
    r: float = 1.0
    table_t: Optional[np.ndarray] = None
    table_phi: Optional[np.ndarray] = None
    primal: Optional["NFunction"] = None
    _spline: Any = field(default=None, repr=False)
    _antiderivative: Any = field(default=None, repr=False)

    def __post_init__(self):
        kind = NFunctionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (NFunctionKind.power, NFunctionKind.shifted_power):
            if self.p is None or self.p <= 1.0:
                raise DomainError(f"{kind.value} needs p > 1, got {self.p}")
        if kind == NFunctionKind.power:
            scale = 1.0 / self.p if self.scale is None else float(self.scale)
            if scale <= 0:
                raise DomainError("power scale must be positive")
            object.__setattr__(self, "scale", scale)
        if kind == NFunctionKind.power_log and (self.p is None or self.p < 1.0):
            raise DomainError(f"power_log needs p >= 1, got {self.p}")
        if kind == NFunctionKind.exp_minus_one and self.r <= 0:
            raise DomainError("exp_minus_one needs r > 0")
        if kind == NFunctionKind.shifted_power and self.kappa < 0:
            raise DomainError("shifted_power needs kappa >= 0")
        if kind == NFunctionKind.conjugate and self.primal is None:
            raise DomainError("a conjugate N-function needs its primal")
        if kind == NFunctionKind.tabulated:
            self._build_table()

    def _build_table(self):
        if self.table_t is None or self.table_phi is None:
            raise DomainError("tabulated N-function needs t and phi samples")
        t = np.asarray(self.table_t, dtype=float)
        ph = np.asarray(self.table_phi, dtype=float)
        if t.ndim != 1 or t.shape != ph.shape or t.size < 2:
            raise DomainError("table t and phi must be 1D arrays of equal length >= 2")
        if t[0] != 0.0 or ph[0] != 0.0:
            raise DomainError("tabulated density must start at phi(0) = 0")
        if np.any(np.diff(t) <= 0):
            raise DomainError("table abscissae must be strictly increasing")
        if np.any(np.diff(ph) < 0) or np.any(ph[1:] <= 0):
            raise DomainError("tabulated density must be positive and nondecreasing")
        spline = PchipInterpolator(t, ph, extrapolate=False)
        object.__setattr__(self, "table_t", t)
        object.__setattr__(self, "table_phi", ph)
        object.__setattr__(self, "_spline", spline)
        object.__setattr__(self, "_antiderivative", spline.antiderivative())

    # constructors

    @classmethod
    def power(cls, p: float, scale: Optional[float] = None) -> "NFunction":
        return cls(NFunctionKind.power, p=p, scale=scale)

    @classmethod
    def power_log(cls, p: float) -> "NFunction":
        return cls(NFunctionKind.power_log, p=p)

    @classmethod
    def exp_minus_one(cls, r: float = 1.0) -> "NFunction":
        return cls(NFunctionKind.exp_minus_one, r=r)

    @classmethod
    def shifted_power(cls, p: float, kappa: float = 1.0) -> "NFunction":
        return cls(NFunctionKind.shifted_power, p=p, kappa=kappa)

    @classmethod
    def tabulated(cls, t: ArrayLike, phi: ArrayLike) -> "NFunction":
        return cls(NFunctionKind.tabulated, table_t=np.asarray(t, float), table_phi=np.asarray(phi, float))

    @classmethod
    def from_spec(cls, spec: NFunctionSpec) -> "NFunction":
        if spec.kind == NFunctionKind.power:
            return cls.power(spec.p, spec.scale)
        if spec.kind == NFunctionKind.power_log:
            return cls.power_log(1.0 if spec.p is None else spec.p)
        if spec.kind == NFunctionKind.exp_minus_one:
            return cls.exp_minus_one(spec.r)
        if spec.kind == NFunctionKind.shifted_power:
            return cls.shifted_power(spec.p, spec.kappa)
        return cls.tabulated(spec.t, spec.phi)

    # evaluation

    @property
    def t_max(self) -> float:
        if self.kind == NFunctionKind.tabulated:
            return float(self.table_t[-1])
        if self.kind == NFunctionKind.conjugate and self.primal.kind == NFunctionKind.tabulated:
            return float(self.primal.table_phi[-1])
        return float("inf")

    def _check_range(self, t: np.ndarray):
        if np.any(t < 0):
            raise DomainError("N-functions are evaluated at t >= 0 only")
        if np.any(t > self.t_max * (1 + 1e-14)):
            raise RangeError(f"t = {float(np.max(t)):.6g} outside the table range [0, {self.t_max:.6g}]")

    def density(self, t: ArrayLike) -> np.ndarray:
        """phi(t)."""
        t = np.asarray(t, dtype=float)
        self._check_range(t)
        with np.errstate(over="ignore"):
            if self.kind == NFunctionKind.power:
                return self.scale * self.p * t ** (self.p - 1.0)
            if self.kind == NFunctionKind.power_log:
                return self.p * t ** (self.p - 1.0) * np.log1p(t) + t**self.p / (1.0 + t)
            if self.kind == NFunctionKind.exp_minus_one:
                return self.r * t ** (self.r - 1.0) * np.exp(t**self.r)
            if self.kind == NFunctionKind.shifted_power:
                return (self.kappa + t) ** (self.p - 2.0) * t
            if self.kind == NFunctionKind.tabulated:
                return self._spline(np.minimum(t, self.t_max))
            return self.primal.density_inverse(t)

    def value(self, t: ArrayLike) -> np.ndarray:
        """Phi(t)."""
        t = np.asarray(t, dtype=float)
        self._check_range(t)
        with np.errstate(over="ignore", invalid="ignore"):
            if self.kind == NFunctionKind.power:
                return self.scale * t**self.p
            if self.kind == NFunctionKind.power_log:
                return t**self.p * np.log1p(t)
            if self.kind == NFunctionKind.exp_minus_one:
                return np.expm1(t**self.r)
            if self.kind == NFunctionKind.shifted_power:
                return self._shifted_value(t)
            if self.kind == NFunctionKind.tabulated:
                return self._antiderivative(np.minimum(t, self.t_max))
            s = self.primal.density_inverse(t)
            return np.maximum(t * s - self.primal.value(s), 0.0)

    __call__ = value

    def _shifted_value(self, t: np.ndarray) -> np.ndarray:
        p, k = self.p, self.kappa
        if k == 0.0:
            return t**p / p
        ell = np.log1p(t / k)
        return k**p * (np.expm1(p * ell) / p - np.expm1((p - 1.0) * ell) / (p - 1.0))

    def density_inverse(self, s: ArrayLike) -> np.ndarray:
        """phi^{-1}(s), by bisection unless a closed form exists."""
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("phi^{-1} is evaluated at s >= 0 only")
        if self.kind == NFunctionKind.power:
            return (s / (self.scale * self.p)) ** (1.0 / (self.p - 1.0))
        if self.kind == NFunctionKind.conjugate:
            return self.primal.density(s)
        if self.kind == NFunctionKind.tabulated:
            top = float(self.table_phi[-1])
            if np.any(s > top * (1 + 1e-14)):
                raise RangeError(f"phi^{{-1}}({float(np.max(s)):.6g}) exceeds the tabulated density range")
            return bisect_increasing(self.density, np.minimum(s, top), 0.0, np.full(s.shape, self.t_max))
        return bisect_increasing(self.density, s, 0.0, 1.0)

    def inverse(self, v: ArrayLike) -> np.ndarray:
        """Phi^{-1}(v), by bisection unless a closed form exists."""
        v = np.asarray(v, dtype=float)
        if np.any(v < 0):
            raise DomainError("Phi^{-1} is evaluated at v >= 0 only")
        if self.kind == NFunctionKind.power:
            return (v / self.scale) ** (1.0 / self.p)
        if self.kind == NFunctionKind.conjugate:
            # Phi~(phi(s)) = s phi(s) - Phi(s) is increasing in s
            primal = self.primal

            def legendre(s: np.ndarray) -> np.ndarray:
                return s * primal.density(s) - primal.value(s)

            hi = np.full(v.shape, primal.t_max if np.isfinite(primal.t_max) else 1.0)
            return primal.density(bisect_increasing(legendre, v, 0.0, hi))
        if np.isfinite(self.t_max):
            return bisect_increasing(self.value, v, 0.0, np.full(v.shape, self.t_max))
        return bisect_increasing(self.value, v, 0.0, 1.0)

    def describe(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind.value}
        if self.p is not None:
            out["p"] = self.p
        if self.kind == NFunctionKind.power:
            out["scale"] = self.scale
        if self.kind == NFunctionKind.shifted_power:
            out["kappa"] = self.kappa
        if self.kind == NFunctionKind.exp_minus_one:
            out["r"] = self.r
        if self.kind == NFunctionKind.conjugate:
            out["primal"] = self.primal.describe()
        return out


def evaluate(nf: NFunction, t: ArrayLike) -> Union[float, np.ndarray]:
    """Phi(t); a float for scalar input."""
    out = nf.value(t)
    return float(out) if np.ndim(out) == 0 else out


def complementary(nf: NFunction) -> NFunction:
    """
    The complementary N-function sup_s (s t - Phi(s)).

    Powers pair in closed form, scale * t^p <-> t^q / (q (scale p)^(q-1)); the
    complement of a conjugate is its primal; every other kind gets a numeric
    Legendre transform.
    """
    if nf.kind == NFunctionKind.power:
        q = nf.p / (nf.p - 1.0)
        return NFunction.power(q, scale=1.0 / (q * (nf.scale * nf.p) ** (q - 1.0)))
    if nf.kind == NFunctionKind.conjugate:
        return nf.primal
    return NFunction(NFunctionKind.conjugate, primal=nf)


def young_gap(nf: NFunction, s: ArrayLike, t: ArrayLike) -> np.ndarray:
    """Phi(s) + Phi~(t) - s t, nonnegative by the Young inequality."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return nf.value(s) + complementary(nf).value(t) - s * t


def check_nfunction(nf: NFunction, grid: Optional[np.ndarray] = None) -> List[str]:
    """Return the N-function axioms violated on ``grid`` (empty when none)."""
    grid = dyadic_grid() if grid is None else np.asarray(grid, dtype=float)
    grid = grid[grid <= nf.t_max]
    issues = []
    if abs(float(nf.density(0.0))) > 1e-20:
        issues.append("phi(0) != 0")
    ph = nf.density(grid)
    if np.any(ph <= 0):
        issues.append("phi vanishes at a positive t")
    if np.any(np.diff(ph) < -GRID_TOL * np.abs(ph[1:])):
        issues.append("phi is not nondecreasing")
    ratio = nf.value(grid) / grid
    if not ratio[0] <= 1e-2 * ratio[-1]:
        issues.append("Phi(t)/t does not decay at 0 relative to its growth at infinity")
    return issues


def young_margins(nf: NFunction, grid: Optional[np.ndarray] = None) -> Dict[str, float]:
    """
    Relative margins of t phi/Phi >= 1 and Phi~(phi(t)) <= t phi(t) <= Phi(2t) on ``grid``.

    Every margin is nonnegative (up to round-off) for a genuine N-function.
    """
    grid = dyadic_grid() if grid is None else np.asarray(grid, dtype=float)
    grid = grid[2.0 * grid <= nf.t_max]
    Phi = nf.value(grid)
    tphi = grid * nf.density(grid)
    conj = complementary(nf).value(nf.density(grid))
    with np.errstate(over="ignore", invalid="ignore"):
        upper = nf.value(2.0 * grid)
        return {
            "index": float(np.min(tphi / Phi) - 1.0),
            "conjugate": float(np.min((tphi - conj) / tphi)),
            "doubling": float(np.min((upper - tphi) / upper)),
        }


def simonenko_bounds(nf: NFunction, grid: np.ndarray) -> Dict[str, float]:
    grid = np.asarray(grid, dtype=float)
    ratio = grid * nf.density(grid) / nf.value(grid)
    return {"lo": float(np.min(ratio)), "hi": float(np.max(ratio))}


def _value_or_nan(nf: NFunction, t: np.ndarray) -> np.ndarray:
    out = np.full(t.shape, np.nan)
    inside = t <= nf.t_max
    out[inside] = nf.value(t[inside])
    return out


def growth_report(nf: NFunction, grid: ArrayLike) -> GrowthReport:
    """
    Decide Delta_2 and Delta' on a finite grid and record the Simonenko bounds.

    Delta_2 holds when, for some k in DELTA2_K, Phi(2t) <= k Phi(t) on every grid point
    from some t0 in the lower half of the grid on. Delta' holds when
    Phi(ts) <= beta Phi(t) Phi(s) on all grid pairs for some beta in DELTA_PRIME_BETA.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise DomainError("growth grid is empty")
    if np.any(grid <= 0):
        raise DomainError("growth grid entries must be positive")
    if np.any(np.diff(grid) < 0):
        raise DomainError("growth grid must be sorted")

    inside = grid[grid <= nf.t_max]
    Phi = nf.value(inside)
    with np.errstate(over="ignore", invalid="ignore"):
        doubled = _value_or_nan(nf, 2.0 * inside)

        delta2, t0, k_found = False, None, None
        half = (inside.size + 1) // 2
        for k in DELTA2_K:
            ok = np.isnan(doubled) | (doubled <= k * Phi * (1.0 + GRID_TOL))
            bad = np.flatnonzero(~ok)
            start = 0 if bad.size == 0 else int(bad[-1]) + 1
            if start < half and start < inside.size:
                delta2, t0, k_found = True, float(inside[start]), k
                break

        products = np.multiply.outer(inside, inside)
        ratio = _value_or_nan(nf, products) / np.multiply.outer(Phi, Phi)
        finite = ratio[~np.isnan(ratio)]
        worst = float(np.max(finite)) if finite.size else float("inf")
    beta = next((b for b in DELTA_PRIME_BETA if worst <= b * (1.0 + GRID_TOL)), None)

    bounds = simonenko_bounds(nf, inside)
    return GrowthReport(
        delta2=delta2,
        delta2_t0=t0,
        delta2_k=k_found,
        delta_prime=beta is not None,
        delta_prime_beta=beta,
        simonenko_lo=bounds["lo"],
        simonenko_hi=bounds["hi"],
    )


def coercivity_constant(nf: NFunction, h_min: float) -> float:
    """theta = Phi~^{-1}(Phi(h_min)) for 0 < h_min < 1."""
    if not 0.0 < h_min < 1.0:
        raise DomainError(f"h_min must lie in (0, 1), got {h_min}")
    theta = float(complementary(nf).inverse(nf.value(h_min)))
    logger.debug(f"coercivity constant for {nf.kind.value}: theta = {theta:.6g}")
    return theta
