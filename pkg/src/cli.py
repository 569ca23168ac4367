import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import typer

from .cell import FluxTable, solve_cell_y, solve_cell_z
from .coeff import coefficient_from_config, validate as validate_coefficient
from .datamodel import GrowthReport
from .fields import MultiscaleField, write_field_csv
from .harness import (
    StudyManager,
    domain_mesh,
    emit_report,
    fine_mesh_n,
    load_problem,
    source_field,
    study_config,
)
from .meanvalue import sigma_test
from .nfunc import NFunction, growth_report
from .solver import EllipticProblem, solve
from .utils import ReiterhomError, RunLogger, dyadic_grid, ensure_folder

logger = logging.getLogger(__name__)

app = typer.Typer(name="reiterhom", help="Reiterated homogenization engine.", no_args_is_help=True)

state: Dict[str, Any] = {"seed": None, "jobs": None, "out": None, "verbose": False}


def _floats(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise typer.BadParameter(f"expected comma-separated numbers, got '{text}'")


def _out(default: str) -> Path:
    return ensure_folder(state["out"] or default)


def command(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Map engine errors to exit code 2 with a one-line message."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except ReiterhomError as e:
            typer.echo(f"error: {e}", err=True)
            raise typer.Exit(code=2)

    return wrapper


@app.callback()
def main(
    seed: Optional[int] = typer.Option(None, help="Seed of every sampled check."),
    jobs: Optional[int] = typer.Option(None, help="Worker threads for independent solves."),
    out: Optional[str] = typer.Option(None, help="Output directory."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log solver progress."),
):
    state.update(seed=seed, jobs=jobs, out=out, verbose=verbose)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@app.command("validate")
@command
def validate_cmd(
    config: Path = typer.Argument(..., help="Problem TOML file."),
    samples: Optional[int] = typer.Option(None, help="Number of sampled points."),
):
    """Print the growth classes of the N-function, then check the structural hypotheses of the coefficient."""
    problem = load_problem(config)
    coeff = coefficient_from_config(problem)
    nf = NFunction.from_spec(problem.nfunction) if problem.nfunction is not None else coeff.phi
    growth = growth_report(nf, dyadic_grid())
    typer.echo(growth.as_text())
    typer.echo(GrowthReport.CSV_HEADER)
    typer.echo(growth.csv_row())
    seed = state["seed"] if state["seed"] is not None else problem.study.seed
    report = validate_coefficient(coeff, samples=samples or problem.study.samples, seed=seed)
    typer.echo(report.as_text())
    if not report.all_passed:
        raise typer.Exit(code=1)


@app.command("sigma")
@command
def sigma_cmd(
    config: Path = typer.Argument(..., help="Problem TOML file."),
    eps: Optional[str] = typer.Option(None, help="Comma-separated decreasing eps values."),
    n: Optional[int] = typer.Option(None, help="Cells per axis of the sampling mesh."),
):
    """Quadrature check of reiterated Sigma-convergence for the configured u0 and f."""
    problem = load_problem(config)
    dim = problem.domain.dim
    eps_list = _floats(eps) or problem.study.eps_list
    length = max(b - a for a, b in zip(problem.domain.lo, problem.domain.hi))
    mesh_n = n or problem.sigma.mesh_n or fine_mesh_n(min(eps_list), length, dim, problem.study.points_per_period)
    mesh = domain_mesh(problem, mesh_n)
    u0 = MultiscaleField.from_expression(problem.sigma.u0, dim)
    f = MultiscaleField.from_expression(problem.sigma.f, dim)
    report = sigma_test(u0, f, mesh, eps_list, jobs=state["jobs"] or problem.study.jobs)
    typer.echo(report.to_csv(), nl=False)
    if not report.decreasing_in_trend():
        raise typer.Exit(code=1)


@app.command("cell")
@command
def cell_cmd(
    config: Path = typer.Argument(..., help="Problem TOML file."),
    r: float = typer.Option(0.0, help="Value of the solution variable zeta."),
    xi: str = typer.Option("1", help="Comma-separated macroscopic gradient."),
    y: Optional[str] = typer.Option(None, help="Intermediate cell point; omit for q(r, xi)."),
):
    """Solve one cell problem: h(y, r, xi) when --y is given, q(r, xi) otherwise."""
    problem = load_problem(config)
    coeff = coefficient_from_config(problem)
    solver = problem.solver
    xi_v = np.array(_floats(xi))
    if xi_v.size != coeff.dim:
        raise typer.BadParameter(f"xi needs {coeff.dim} components")
    mesh_z = coeff.z_mesh(solver.cell_n)
    if y is not None:
        sol = solve_cell_z(coeff, np.array(_floats(y)), r, xi_v, mesh_z, method=solver.linear_solver)
        label = "h"
    else:
        mesh_y = coeff.y_mesh(solver.cell_n_y or solver.cell_n)
        sol = solve_cell_y(coeff, r, xi_v, mesh_y, mesh_z, method=solver.linear_solver)
        label = "q"
    typer.echo(f"{label} = {', '.join(f'{v:.12g}' for v in sol.flux_sample)}")
    typer.echo(f"residual = {sol.residual:.3e}")
    typer.echo(f"iterations = {sol.iterations}")


def _manager(problem, config: Path, **overrides: Any) -> StudyManager:
    cfg = study_config(
        problem,
        config_path=str(config),
        seed=state["seed"],
        jobs=state["jobs"],
        out_dir=state["out"],
        **overrides,
    )
    return StudyManager(cfg)


@app.command("upscale")
@command
def upscale_cmd(config: Path = typer.Argument(..., help="Problem TOML file.")):
    """Tabulate q(r, xi) and write flux_table.csv."""
    problem = load_problem(config)
    manager = _manager(problem, config)
    table = manager.upscale()
    path = table.to_csv(_out(problem.study.out) / "flux_table.csv")
    typer.echo(f"wrote {path} ({table.q_values.size // table.dim} nodes)")


@app.command("macro")
@command
def macro_cmd(
    config: Path = typer.Argument(..., help="Problem TOML file."),
    table: Optional[Path] = typer.Option(None, help="Existing flux_table.csv; tabulated when omitted."),
):
    """Solve the homogenized problem and write u0.csv."""
    problem = load_problem(config)
    manager = _manager(problem, config)
    manager.table = FluxTable.from_csv(table) if table is not None else manager.upscale()
    report = manager.solve_macro()
    out = _out(problem.study.out)
    write_field_csv(report.solution, out / "u0.csv")
    (out / "macro.txt").write_text(report.stats.as_text() + "\n")
    typer.echo(report.stats.as_text())


@app.command("eps")
@command
def eps_cmd(
    config: Path = typer.Argument(..., help="Problem TOML file."),
    eps: float = typer.Option(..., help="Scale parameter of the oscillating problem."),
    n: Optional[int] = typer.Option(None, help="Cells per axis; the resolution rule applies."),
):
    """Solve the oscillating problem for one eps and write u_eps.csv."""
    problem = load_problem(config)
    coeff = coefficient_from_config(problem)
    length = max(b - a for a, b in zip(problem.domain.lo, problem.domain.hi))
    mesh = domain_mesh(problem, n or fine_mesh_n(eps, length, problem.domain.dim, problem.study.points_per_period))
    tol = problem.solver.tol if coeff.linear else problem.solver.nonlinear_tol
    report = solve(
        EllipticProblem.direct(coeff, eps, mesh, source_field(problem.solver.rhs, mesh)),
        tol=tol,
        method=problem.solver.linear_solver,
        max_iter=problem.solver.max_newton,
    )
    out = _out(problem.study.out)
    stem = f"u_eps_{eps:g}".replace(".", "p")
    write_field_csv(report.solution, out / f"{stem}.csv")
    (out / f"{stem}.txt").write_text(report.stats.as_text() + "\n")
    typer.echo(report.stats.as_text())


@app.command("converge")
@command
def converge_cmd(
    config: Path = typer.Argument(..., help="Problem TOML file."),
    eps_list: Optional[str] = typer.Option(None, help="Comma-separated decreasing eps values."),
    recon_n: Optional[int] = typer.Option(None, help="Cells per axis of the reconstruction mesh."),
):
    """Run the full convergence study and write convergence.csv, study.gp and report.txt."""
    problem = load_problem(config)
    cfg = study_config(
        problem,
        config_path=str(config),
        seed=state["seed"],
        jobs=state["jobs"],
        out_dir=state["out"],
        eps_list=_floats(eps_list),
        recon_n=recon_n,
    )
    out = ensure_folder(cfg.out_dir)
    run_logger = RunLogger({"log_dir": str(out / "reiterhom_logs")})
    run_logger.start()
    try:
        table = StudyManager(cfg, run_logger=run_logger).run()
    finally:
        run_logger.stop()
    for path in emit_report(table, out):
        typer.echo(f"wrote {path}")
    typer.echo(table.to_csv(), nl=False)
    if table.violations:
        for v in table.violations:
            typer.echo(f"trend violated: {v}", err=True)
        raise typer.Exit(code=1)


@app.command("serve")
def serve_cmd(
    host: Optional[str] = typer.Option(None, help="Bind address."),
    port: Optional[int] = typer.Option(None, help="Port."),
):
    """Serve the HTTP surface."""
    import uvicorn

    from .web.app import app as web_app, config as web_config

    uvicorn.run(web_app, host=host or web_config.get("host", "127.0.0.1"), port=port or web_config.get("port", 8081))
