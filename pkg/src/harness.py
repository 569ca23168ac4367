"""
Convergence studies: validate -> upscale -> macro -> eps-sweep -> reconstruct -> norms.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .cell import FluxTable, tabulate_flux
from .coeff import Coefficient, coefficient_from_config, validate
from .datamodel import ConvergenceRow, ConvergenceTable, HypothesisReport, ProblemConfig, StudyConfig
from .fields import Field, Mesh, MultiscaleField, gradient, interpolate, luxemburg_norm
from .meanvalue import sigma_limit, sigma_pairing
from .solver import CorrectorField, EllipticProblem, SolveReport, build_correctors, solve
from .utils import (
    ConfigError,
    FluxCache,
    ReiterhomError,
    RunLogger,
    StageError,
    compile_expression,
    ensure_folder,
    load_toml,
)

logger = logging.getLogger(__name__)

FINE_CAP = {1: 16384, 2: 512}
MIN_EPS_2D = 0.125
ERROR_FLOOR = 1e-6
SIGMA_FLOOR = 1e-12
COVERAGE_MARGIN = 0.2
FINAL_RATIO = 0.25


def load_problem(path: Union[str, Path]) -> ProblemConfig:
    """Read and validate a TOML problem config."""
    try:
        return ProblemConfig.model_validate(load_toml(path))
    except ValueError as e:
        if isinstance(e, ReiterhomError):
            raise
        raise ConfigError(f"invalid problem config {path}: {e}") from e


def source_field(text: Union[str, float], mesh: Mesh) -> Field:
    """The right-hand side f(x) compiled from an expression in x (1D) or x1, x2 (2D)."""
    names = ["x"] if mesh.dim == 1 else ["x1", "x2"]
    fn = compile_expression(text, names)
    return Field.from_function(mesh, lambda pts: fn(*pts.T))


def domain_mesh(problem: ProblemConfig, n: Optional[int] = None) -> Mesh:
    d = problem.domain
    return Mesh(d.dim, tuple(d.lo), tuple(d.hi), n or d.n)


def fine_mesh_n(eps: float, length: float, dim: int, points_per_period: int = 16) -> int:
    """
    Cells per axis for the eps-problem: ``points_per_period`` nodes per fast period
    eps^2, capped per dimension, never coarser than eps^2/4.
    """
    need = math.ceil(4.0 * length / eps**2 - 1e-9)
    cap = FINE_CAP[dim]
    if need > cap:
        raise ConfigError(f"eps={eps} needs n >= {need} cells per axis, above the {dim}D limit of {cap}")
    return min(max(need, math.ceil(points_per_period * length / eps**2 - 1e-9)), cap)


def study_config(problem: ProblemConfig, config_path: Optional[str] = None, **overrides: Any) -> StudyConfig:
    """Assemble a StudyConfig from a problem config and CLI overrides (None values are ignored)."""
    s = problem.study
    values: Dict[str, Any] = {
        "problem": problem,
        "config_path": config_path,
        "eps_list": list(s.eps_list),
        "macro_n": problem.domain.n,
        "cell_n": problem.solver.cell_n,
        "recon_n": s.recon_n,
        "points_per_period": s.points_per_period,
        "norms": list(s.norms),
        "out_dir": s.out,
        "seed": s.seed,
        "jobs": s.jobs,
        "samples": s.samples,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = StudyConfig(**values)
    except ValueError as e:
        raise ConfigError(f"invalid study config: {e}") from e
    check_study(cfg)
    return cfg


def check_study(cfg: StudyConfig):
    """Direct-mode resolution must be satisfiable for every eps."""
    dom = cfg.problem.domain
    length = max(b - a for a, b in zip(dom.lo, dom.hi))
    if cfg.points_per_period < 4:
        raise ConfigError("points_per_period below 4 cannot resolve eps^2/4")
    for eps in cfg.eps_list:
        if dom.dim == 2 and eps < MIN_EPS_2D:
            raise ConfigError(f"2D studies need eps >= {MIN_EPS_2D}, got {eps}")
        fine_mesh_n(eps, length, dom.dim, cfg.points_per_period)


class StudyManager:
    """
    Runs one convergence study and keeps every intermediate result.

    Each stage is logged through a RunLogger; a failing stage raises StageError with
    the stage name and the original cause.
    """

    def __init__(
        self,
        config: StudyConfig,
        coeff: Optional[Coefficient] = None,
        run_logger: Optional[RunLogger] = None,
    ) -> None:
        self.config = config
        self.problem = config.problem
        self.coeff = coeff or coefficient_from_config(self.problem)
        self.run_logger = run_logger
        self.cache = FluxCache(seed=self.coeff.name)
        self.mesh = domain_mesh(self.problem, config.macro_n)
        self.rhs_text = self.problem.solver.rhs
        self.tol = self.problem.solver.tol if self.coeff.linear else self.problem.solver.nonlinear_tol
        self.method = self.problem.solver.linear_solver
        self.hypotheses: Optional[HypothesisReport] = None
        self.table: Optional[FluxTable] = None
        self.macro: Optional[SolveReport] = None
        self.correctors: Optional[CorrectorField] = None
        self.eps_reports: Dict[float, SolveReport] = {}

    def _stage(self, name: str, fn: Callable[..., Any], *args: Any) -> Any:
        start = time.perf_counter()
        if self.run_logger:
            self.run_logger.log_stage(name, "started")
        logger.info(f"stage {name}: started")
        try:
            result = fn(*args)
        except ReiterhomError as e:
            if self.run_logger:
                self.run_logger.log_stage(name, "failed", error=str(e))
            raise StageError(name, e) from e
        elapsed = time.perf_counter() - start
        if self.run_logger:
            self.run_logger.log_stage(name, "done", seconds=elapsed)
        logger.info(f"stage {name}: done in {elapsed:.2f}s")
        return result

    # stages

    def validate(self) -> HypothesisReport:
        self.hypotheses = validate(self.coeff, samples=self.config.samples, seed=self.config.seed)
        return self.hypotheses

    def upscale(self, r_grid: Optional[np.ndarray] = None, xi_grid: Optional[np.ndarray] = None) -> FluxTable:
        solver = self.problem.solver
        cell_n = self.config.cell_n
        self.table = tabulate_flux(
            self.coeff,
            solver.r_grid if r_grid is None else r_grid,
            solver.xi_grid if xi_grid is None else xi_grid,
            self.coeff.y_mesh(solver.cell_n_y or cell_n),
            self.coeff.z_mesh(cell_n),
            jobs=self.config.jobs,
            cache=self.cache,
            tol=self.tol,
            method=self.method,
        )
        return self.table

    def _ranges(self, u: Field) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        du = gradient(u).flat
        return (float(u.flat.min()), float(u.flat.max())), (float(du.min()), float(du.max()))

    def _widened_grids(self, r_range, xi_range) -> Tuple[np.ndarray, np.ndarray]:
        def grid(lo, hi, old):
            pad = COVERAGE_MARGIN * max(hi - lo, 1e-3)
            lo, hi = min(lo - pad, old[0]), max(hi + pad, old[-1])
            return np.linspace(lo, hi, max(len(old), 3))

        return grid(*r_range, self.table.r_grid), grid(*xi_range, self.table.xi_grids[0])

    def solve_macro(self) -> SolveReport:
        """Effective solve; re-tabulates once with widened grids when the solution leaves the table."""
        rhs = source_field(self.rhs_text, self.mesh)
        for attempt in range(2):
            problem = EllipticProblem.effective(self.table, self.mesh, rhs, nf=self.coeff.phi)
            self.macro = solve(problem, tol=self.tol, method=self.method, max_iter=self.problem.solver.max_newton)
            r_range, xi_range = self._ranges(self.macro.solution)
            if self.table.covers(r_range, xi_range, COVERAGE_MARGIN) or attempt == 1:
                break
            logger.info(f"solution range r={r_range}, Du={xi_range} leaves the flux table; re-tabulating")
            self.upscale(*self._widened_grids(r_range, xi_range))
        return self.macro

    def fine_mesh(self, eps: float) -> Mesh:
        dom = self.problem.domain
        length = max(b - a for a, b in zip(dom.lo, dom.hi))
        return domain_mesh(self.problem, fine_mesh_n(eps, length, dom.dim, self.config.points_per_period))

    def solve_eps(self, eps: float) -> SolveReport:
        mesh = self.fine_mesh(eps)
        problem = EllipticProblem.direct(self.coeff, eps, mesh, source_field(self.rhs_text, mesh))
        report = solve(problem, tol=self.tol, method=self.method, max_iter=self.problem.solver.max_newton)
        self.eps_reports[eps] = report
        return report

    def sweep(self) -> List[SolveReport]:
        with ThreadPoolExecutor(max_workers=max(1, self.config.jobs)) as pool:
            return list(pool.map(self.solve_eps, self.config.eps_list))

    def reconstruct(self) -> CorrectorField:
        cell_n = self.config.cell_n if self.coeff.dim == 1 else min(self.config.cell_n, 16)
        recon_n = self.config.recon_n if self.coeff.dim == 1 else min(self.config.recon_n, 8)
        self.correctors = build_correctors(
            self.macro.solution,
            self.coeff,
            recon_n=recon_n,
            cell_n=cell_n,
            cache=self.cache,
            tol=self.tol,
            method=self.method,
            jobs=self.config.jobs,
        )
        return self.correctors

    def _sigma_limits(self, micro: MultiscaleField) -> List[np.ndarray]:
        return [np.atleast_1d(sigma_limit(micro, f, self.mesh)) for f in self.coeff.dictionary]

    def row(self, eps: float, limits: List[np.ndarray]) -> ConvergenceRow:
        nf = self.coeff.phi
        u0 = self.macro.solution
        report = self.eps_reports[eps]
        u_eps = report.solution
        mesh = u_eps.mesh
        u0_fine = Field(mesh, interpolate(u0, mesh.points()))
        rec = self.correctors.sample(u0, eps, mesh)
        du_eps = gradient(u_eps)
        gaps = [
            float(np.max(np.abs(np.atleast_1d(sigma_pairing(du_eps, f, eps)) - lim)))
            for f, lim in zip(self.coeff.dictionary, limits)
        ]
        errors: Dict[str, float] = {}
        if "L" in self.config.norms:
            errors["err_u"] = luxemburg_norm(u_eps - u0_fine, nf)
            errors["err_first_order"] = luxemburg_norm(u_eps - rec.first_order, nf)
        if "W1" in self.config.norms:
            errors["err_grad_rec"] = luxemburg_norm(du_eps - rec.gradient, nf)
            errors["err_grad_naive"] = luxemburg_norm(du_eps - rec.naive_gradient, nf)
        return ConvergenceRow(
            eps=eps,
            **errors,
            mean_gap=abs(float(u_eps.mean()) - float(u0.mean())),
            sigma_gap=max(gaps) if gaps else 0.0,
            newton_iters=report.newton_iters,
            residual=report.residual,
        )

    def norms(self) -> List[ConvergenceRow]:
        limits = self._sigma_limits(self.correctors.micro_gradient())
        return [self.row(eps, limits) for eps in self.config.eps_list]

    def run(self) -> ConvergenceTable:
        self._stage("validate", self.validate)
        self._stage("upscale", self.upscale)
        self._stage("macro", self.solve_macro)
        self._stage("eps", self.sweep)
        self._stage("reconstruct", self.reconstruct)
        rows = self._stage("norms", self.norms)
        table = ConvergenceTable(
            problem=self.coeff.name,
            rows=rows,
            hypotheses=self.hypotheses,
            macro=self.macro.stats,
            table_clamped=self.macro.clamped > 0,
            norms=list(self.config.norms),
        )
        table.violations = check_trends(table)
        if not self.hypotheses.all_passed:
            failed = [c.name for c in self.hypotheses.checks if not c.passed]
            table.violations.append(f"hypotheses failed: {', '.join(failed)}")
        return table


def _decreasing(values: List[float], floor: float) -> bool:
    return all(b < a or b <= floor for a, b in zip(values, values[1:]))


def check_trends(table: ConvergenceTable) -> List[str]:
    """The violated convergence trends of a study, empty when every trend holds."""
    violations = []
    if not table.rows:
        return ["empty convergence table"]
    columns = table.columns()
    for name in columns[1:]:
        if not all(np.isfinite(table.column(name))):
            violations.append(f"{name} has non-finite entries")
    if "err_u" in columns:
        err = table.column("err_u")
        if not _decreasing(err, ERROR_FLOOR):
            violations.append("err_u is not strictly decreasing")
        if len(err) > 1 and err[-1] > max(FINAL_RATIO * err[0], ERROR_FLOOR):
            violations.append(f"final err_u exceeds {FINAL_RATIO:g} x the first")
    if "err_grad_rec" in columns:
        for row in table.rows:
            if row.err_grad_rec >= row.err_grad_naive and row.err_grad_naive > ERROR_FLOOR:
                violations.append(f"reconstruction does not beat Du0 at eps={row.eps:g}")
    mean_gap = table.column("mean_gap")
    if len(mean_gap) > 1 and not (mean_gap[-1] < mean_gap[0] or mean_gap[-1] <= ERROR_FLOOR):
        violations.append("mean gap is not decreasing in trend")
    sigma = table.column("sigma_gap")
    if len(sigma) > 1 and not (sigma[-1] < sigma[0] or sigma[-1] <= SIGMA_FLOOR):
        violations.append("sigma gap is not decreasing in trend")
    return violations


def run_convergence_study(
    cfg: StudyConfig,
    coeff: Optional[Coefficient] = None,
    run_logger: Optional[RunLogger] = None,
) -> ConvergenceTable:
    return StudyManager(cfg, coeff, run_logger).run()


GNUPLOT = """set terminal pngcairo size 900,600
set output 'convergence.png'
set datafile separator ','
set logscale xy
set key left top
set xlabel 'eps'
set ylabel 'Luxemburg norm'
set title 'convergence study: {problem}'
plot {curves}
"""

CURVE_TITLES = {
    "err_u": "|u_eps - u_0|",
    "err_grad_rec": "|Du_eps - G_eps|",
    "err_grad_naive": "|Du_eps - Du_0|",
    "err_first_order": "|u_eps - (u_0 + eps u_1 + eps^2 u_2)|",
    "sigma_gap": "sigma gap",
}


def gnuplot_script(table: ConvergenceTable) -> str:
    """Plot script for the columns convergence.csv actually holds."""
    curves = []
    for k, name in enumerate(table.columns(), start=1):
        if name in CURVE_TITLES:
            source = "'convergence.csv'" if not curves else "''"
            curves.append(f"{source} every ::1 using 1:{k} with linespoints title '{CURVE_TITLES[name]}'")
    return GNUPLOT.format(problem=table.problem, curves=", \\\n     ".join(curves))


def emit_report(table: ConvergenceTable, out_dir: Union[str, Path]) -> List[Path]:
    """Write convergence.csv, study.gp and report.txt; identical tables give identical files."""
    out = ensure_folder(out_dir)
    csv_path = out / "convergence.csv"
    gp_path = out / "study.gp"
    txt_path = out / "report.txt"
    csv_path.write_text(table.to_csv())
    gp_path.write_text(gnuplot_script(table))

    lines = [f"# reiterhom convergence study: {table.problem}", "", "[hypotheses]"]
    lines.append(table.hypotheses.as_text() if table.hypotheses else "not run")
    lines += ["", "[macro solve]"]
    lines.append(table.macro.as_text() if table.macro else "not run")
    lines += ["", "[table]", f"clamped = {table.table_clamped}", "", "[rows]"]
    for row in table.rows:
        lines.append(f"eps={row.eps:.6g} newton_iters={row.newton_iters} residual={row.residual:.3e}")
    lines += ["", "[trends]"]
    lines += [f"violated: {v}" for v in table.violations] or ["all trends hold"]
    txt_path.write_text("\n".join(lines) + "\n")
    return [csv_path, gp_path, txt_path]
