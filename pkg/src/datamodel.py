import json
from datetime import datetime
from enum import Enum
from typing import Any, ClassVar, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class NFunctionKind(str, Enum):
    power = "power"
    power_log = "power_log"
    exp_minus_one = "exp_minus_one"
    tabulated = "tabulated"
    shifted_power = "shifted_power"
    conjugate = "conjugate"


class StructureClass(str, Enum):
    periodic_periodic = "periodic_periodic"
    ap_periodic = "ap_periodic"
    ap_binf = "ap_binf"
    periodic_binf = "periodic_binf"


class AlgebraClass(str, Enum):
    periodic = "periodic"
    almost_periodic = "almost_periodic"
    b_infinity = "b_infinity"


class FieldKind(str, Enum):
    scalar = "scalar"
    vector = "vector"


class FluxMode(str, Enum):
    direct = "direct"
    effective = "effective"


# problem configuration

# error columns of the convergence table measured in each norm: L = L^Phi of values, W1 = L^Phi of gradients
NORM_COLUMNS: Dict[str, Tuple[str, ...]] = {
    "L": ("err_u", "err_first_order"),
    "W1": ("err_grad_rec", "err_grad_naive"),
}


def _check_norms(v: List[str]) -> List[str]:
    unknown = [n for n in v if n not in NORM_COLUMNS]
    if unknown:
        raise ValueError(f"unknown norms {unknown}; known: {list(NORM_COLUMNS)}")
    if not v:
        raise ValueError("at least one norm must be selected")
    return [n for n in NORM_COLUMNS if n in v]


class NFunctionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: NFunctionKind = NFunctionKind.power
    p: Optional[float] = None
    scale: Optional[float] = None
    kappa: float = 0.0
    r: float = 1.0
    t: Optional[List[float]] = Field(default=None, description="Abscissae of a tabulated density.")
    phi: Optional[List[float]] = Field(default=None, description="Tabulated density values.")

    @field_validator("p")
    @classmethod
    def check_p(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v < 1.0:
            raise ValueError(f"exponent p must be at least 1, got {v}")
        return v

    @model_validator(mode="after")
    def check_kind(self) -> "NFunctionSpec":
        if self.kind in (NFunctionKind.power, NFunctionKind.shifted_power) and (self.p is None or self.p <= 1.0):
            raise ValueError(f"{self.kind.value} needs p > 1")
        if self.kind == NFunctionKind.tabulated and (self.t is None or self.phi is None):
            raise ValueError("tabulated N-function needs both 't' and 'phi'")
        if self.kind == NFunctionKind.conjugate:
            raise ValueError("conjugate N-functions are derived, not declared")
        return self


class CoefficientSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "lin1d"
    expression: Optional[str] = Field(default=None, description="c(y,z) for the linear expression family.")
    p: Optional[float] = None
    kappa: Optional[float] = None
    ay: Optional[float] = None
    c0: Optional[float] = None
    cell_length_ap: Optional[float] = None
    cell_length_binf: Optional[float] = None

    def params(self) -> Dict[str, Any]:
        return {k: v for k, v in self.model_dump().items() if k != "name" and v is not None}


class DomainSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dim: int = 1
    lo: List[float] = Field(default_factory=lambda: [0.0])
    hi: List[float] = Field(default_factory=lambda: [1.0])
    n: int = 256

    @model_validator(mode="after")
    def check_box(self) -> "DomainSpec":
        if self.dim not in (1, 2):
            raise ValueError("only dim 1 and 2 are supported")
        if len(self.lo) != self.dim or len(self.hi) != self.dim:
            raise ValueError("lo and hi need one entry per dimension")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("domain box must satisfy lo < hi")
        if self.n < 2:
            raise ValueError("meshes need n >= 2")
        if self.dim == 2 and self.n > 512:
            raise ValueError("2D meshes are limited to n <= 512 per axis")
        return self


class SolverSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cell_n: int = 128
    cell_n_y: Optional[int] = None
    tol: float = 1e-10
    nonlinear_tol: float = 1e-8
    max_newton: int = 50
    rhs: str = "1"
    r_grid: List[float] = Field(default_factory=lambda: [-0.5, 0.0, 0.5])
    xi_grid: List[float] = Field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.5, 1.0])
    linear_solver: str = "auto"

    @field_validator("r_grid", "xi_grid")
    @classmethod
    def check_grid(cls, v: List[float]) -> List[float]:
        if len(v) == 0 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("flux-table grids must be nonempty and strictly increasing")
        return v

    @field_validator("linear_solver")
    @classmethod
    def check_linear_solver(cls, v: str) -> str:
        if v not in ("auto", "direct", "cg"):
            raise ValueError("linear_solver must be one of auto, direct, cg")
        return v


class StudySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    eps_list: List[float] = Field(default_factory=lambda: [0.25, 0.125, 0.0625, 0.03125])
    points_per_period: int = 16
    recon_n: int = 32
    samples: int = 10_000
    seed: int = 0
    jobs: int = 1
    out: str = "out"
    norms: List[str] = Field(default_factory=lambda: ["L", "W1"], description="Error norms to report: L, W1.")

    @field_validator("norms")
    @classmethod
    def check_norms(cls, v: List[str]) -> List[str]:
        return _check_norms(v)


class SigmaSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    u0: str = "sin(2*pi*y)"
    f: str = "sin(2*pi*y)"
    mesh_n: Optional[int] = None


class ProblemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nfunction: Optional[NFunctionSpec] = None
    coefficient: CoefficientSpec = Field(default_factory=CoefficientSpec)
    domain: DomainSpec = Field(default_factory=DomainSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    study: StudySpec = Field(default_factory=StudySpec)
    sigma: SigmaSpec = Field(default_factory=SigmaSpec)


# reports


class GrowthReport(BaseModel):
    delta2: bool
    delta2_t0: Optional[float] = None
    delta2_k: Optional[float] = None
    delta_prime: bool
    delta_prime_beta: Optional[float] = None
    simonenko_lo: float
    simonenko_hi: float

    CSV_HEADER: ClassVar[str] = "delta2,delta2_t0,delta2_k,delta_prime,delta_prime_beta,simonenko_lo,simonenko_hi"

    def csv_row(self) -> str:
        cells = [
            int(self.delta2),
            self.delta2_t0,
            self.delta2_k,
            int(self.delta_prime),
            self.delta_prime_beta,
            self.simonenko_lo,
            self.simonenko_hi,
        ]
        return ",".join("" if c is None else f"{c:.12g}" for c in cells)

    def as_text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.model_dump().items())


class HypothesisCheck(BaseModel):
    name: str
    passed: bool
    margin: float
    witness: Optional[Dict[str, Any]] = None
    note: str = ""


class HypothesisReport(BaseModel):
    problem: str
    samples: int
    seed: int
    checks: List[HypothesisCheck] = Field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_text(self) -> str:
        lines = [f"problem = {self.problem}", f"samples = {self.samples}", f"seed = {self.seed}"]
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            line = f"{c.name:<4} {status} margin={c.margin:.6e}"
            if c.note:
                line += f" ({c.note})"
            if c.witness is not None and not c.passed:
                line += f" witness={json.dumps(c.witness)}"
            lines.append(line)
        return "\n".join(lines)


class SigmaTestReport(BaseModel):
    eps_list: List[float]
    lhs: List[float]
    rhs: float
    gap: List[float]

    @model_validator(mode="after")
    def check_lengths(self) -> "SigmaTestReport":
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        if not (len(self.lhs) == len(self.gap) == len(self.eps_list)):
            raise ValueError("lhs and gap need one entry per eps")
        return self

    def decreasing_in_trend(self, floor: float = 1e-12) -> bool:
        return self.gap[-1] < self.gap[0] or self.gap[-1] <= floor

    def to_csv(self) -> str:
        rows = ["eps,lhs,rhs,gap"]
        rows += [f"{e:.12g},{l:.12e},{self.rhs:.12e},{g:.12e}" for e, l, g in zip(self.eps_list, self.lhs, self.gap)]
        return "\n".join(rows) + "\n"


class StrongSigmaRow(BaseModel):
    test_function: int
    eps: float
    distance: float
    limit_distance: float
    holds: bool


class SolveStats(BaseModel):
    """Serializable part of a solver run."""

    mode: FluxMode
    residual: float
    newton_iters: int
    energy: float
    clamped: int = 0
    sobolev_norm: float = 0.0
    rhs_dual_norm: float = 0.0
    history: List[float] = Field(default_factory=list)

    def as_text(self) -> str:
        body = self.model_dump(exclude={"history"})
        body["mode"] = self.mode.value
        return "\n".join(f"{k} = {v}" for k, v in body.items())


class ConvergenceRow(BaseModel):
    eps: float
    err_u: Optional[float] = None
    err_grad_rec: Optional[float] = None
    err_grad_naive: Optional[float] = None
    err_first_order: Optional[float] = None
    mean_gap: float
    sigma_gap: float
    newton_iters: int = 0
    residual: float = 0.0


class ConvergenceTable(BaseModel):
    problem: str
    rows: List[ConvergenceRow] = Field(default_factory=list)
    hypotheses: Optional[HypothesisReport] = None
    macro: Optional[SolveStats] = None
    table_clamped: bool = False
    norms: List[str] = Field(default_factory=lambda: ["L", "W1"])
    violations: List[str] = Field(default_factory=list)

    CSV_COLUMNS: ClassVar[Tuple[str, ...]] = (
        "eps",
        "err_u",
        "err_grad_rec",
        "err_grad_naive",
        "err_first_order",
        "mean_gap",
        "sigma_gap",
    )

    def columns(self) -> Tuple[str, ...]:
        """CSV_COLUMNS without the error columns of unselected norms."""
        skipped = {c for norm, cols in NORM_COLUMNS.items() if norm not in self.norms for c in cols}
        return tuple(c for c in self.CSV_COLUMNS if c not in skipped)

    def column(self, name: str) -> List[float]:
        return [getattr(r, name) for r in self.rows]

    def to_csv(self) -> str:
        columns = self.columns()
        lines = [",".join(columns)]
        for row in self.rows:
            lines.append(",".join(f"{getattr(row, c):.12e}" for c in columns))
        return "\n".join(lines) + "\n"


class StudyConfig(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    problem: ProblemConfig
    config_path: Optional[str] = None
    eps_list: List[float]
    macro_n: int
    cell_n: int
    recon_n: int = 32
    points_per_period: int = 16
    norms: List[str] = Field(default_factory=lambda: ["L", "W1"])
    out_dir: str = "out"
    seed: int = 0
    jobs: int = 1
    samples: int = 10_000
    created_at: datetime = Field(default_factory=datetime.now)

    @field_validator("eps_list")
    @classmethod
    def check_eps(cls, v: List[float]) -> List[float]:
        if len(v) == 0:
            raise ValueError("eps_list must not be empty")
        if any(e <= 0 or e > 1 for e in v):
            raise ValueError("every eps must lie in (0, 1]")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        return v

    @field_validator("norms")
    @classmethod
    def check_norms(cls, v: List[str]) -> List[str]:
        return _check_norms(v)

    def dict(self, **kwargs: Any) -> Dict[str, Any]:
        result = super().model_dump(**kwargs)
        result["created_at"] = self.created_at.isoformat()
        return result


# web requests


class NFunctionWebRequestModel(BaseModel):
    nfunction: NFunctionSpec
    grid_n: int = 200
    grid_lo: float = 1e-3
    grid_hi: float = 1e3


class ValidateWebRequestModel(BaseModel):
    coefficient: Optional[CoefficientSpec] = None
    dim: int = 1
    samples: Optional[int] = None
    seed: Optional[int] = None


class CellWebRequestModel(BaseModel):
    coefficient: Optional[CoefficientSpec] = None
    dim: int = 1
    r: float = 0.0
    xi: List[float] = Field(default_factory=lambda: [1.0])
    y: Optional[List[float]] = Field(default=None, description="Intermediate cell point; q(r, xi) when omitted.")
    cell_n: int = 64


class SigmaWebRequestModel(BaseModel):
    u0: str = "sin(2*pi*y)"
    f: str = "sin(2*pi*y)"
    dim: int = 1
    lo: List[float] = Field(default_factory=lambda: [0.0])
    hi: List[float] = Field(default_factory=lambda: [1.0])
    eps_list: List[float] = Field(default_factory=lambda: [0.25, 0.125])
    n: int = 1024
