from pathlib import Path

import pytest

from src.coeff import coefficient_from_config
from src.datamodel import (
    CoefficientSpec,
    ConvergenceRow,
    ConvergenceTable,
    DomainSpec,
    ProblemConfig,
    SolverSpec,
    StudySpec,
)
from src.harness import (
    StudyManager,
    check_trends,
    emit_report,
    fine_mesh_n,
    gnuplot_script,
    load_problem,
    run_convergence_study,
    study_config,
)
from src.utils import ConfigError, StageError

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))


def _row(eps, err_u, rec=0.01, naive=0.5):
    return ConvergenceRow(
        eps=eps,
        err_u=err_u,
        err_grad_rec=rec,
        err_grad_naive=naive,
        err_first_order=err_u / 2,
        mean_gap=err_u / 10,
        sigma_gap=err_u / 100,
        newton_iters=1,
        residual=1e-12,
    )


def test_fine_mesh_n():
    assert fine_mesh_n(0.25, 1.0, 1) == 256
    assert fine_mesh_n(0.125, 1.0, 2) == 512
    with pytest.raises(ConfigError):
        fine_mesh_n(0.01, 1.0, 1)


def test_study_config_overrides():
    problem = ProblemConfig()
    cfg = study_config(problem, eps_list=[0.5, 0.25], recon_n=None)
    assert cfg.eps_list == [0.5, 0.25]
    assert cfg.recon_n == problem.study.recon_n
    with pytest.raises(ConfigError):
        study_config(problem, eps_list=[])
    with pytest.raises(ConfigError):
        study_config(problem, eps_list=[0.125, 0.25])
    with pytest.raises(ConfigError):
        study_config(problem, points_per_period=2)
    square = ProblemConfig(
        coefficient=CoefficientSpec(name="plap2d"),
        domain=DomainSpec(dim=2, lo=[0.0, 0.0], hi=[1.0, 1.0], n=16),
    )
    with pytest.raises(ConfigError):
        study_config(square, eps_list=[0.25, 0.0625])


def test_check_trends():
    good = ConvergenceTable(problem="lin1d", rows=[_row(0.25, 0.1), _row(0.125, 0.02)])
    assert check_trends(good) == []
    bad = ConvergenceTable(problem="lin1d", rows=[_row(0.25, 0.1), _row(0.125, 0.2, rec=0.6)])
    violations = check_trends(bad)
    assert "err_u is not strictly decreasing" in violations
    assert any("does not beat" in v for v in violations)
    assert check_trends(ConvergenceTable(problem="lin1d")) == ["empty convergence table"]


def test_check_trends_needs_a_quarter_of_the_first_error():
    # halving eps once at first order is not enough
    slow = ConvergenceTable(problem="lin1d", rows=[_row(0.25, 0.1), _row(0.125, 0.05)])
    assert check_trends(slow) == ["final err_u exceeds 0.25 x the first"]
    bumpy = ConvergenceTable(problem="lin1d", rows=[_row(0.25, 0.1), _row(0.125, 0.12), _row(0.0625, 0.02)])
    assert check_trends(bumpy) == ["err_u is not strictly decreasing"]
    floor = ConvergenceTable(problem="const1d", rows=[_row(0.25, 1e-9), _row(0.125, 5e-10)])
    assert check_trends(floor) == []


def test_norm_selection():
    rows = [
        ConvergenceRow(eps=0.25, err_u=0.1, err_first_order=0.05, mean_gap=0.01, sigma_gap=0.001),
        ConvergenceRow(eps=0.125, err_u=0.02, err_first_order=0.01, mean_gap=0.002, sigma_gap=0.0001),
    ]
    table = ConvergenceTable(problem="lin1d", rows=rows, norms=["L"])
    assert table.columns() == ("eps", "err_u", "err_first_order", "mean_gap", "sigma_gap")
    assert table.to_csv().splitlines()[0] == "eps,err_u,err_first_order,mean_gap,sigma_gap"
    assert check_trends(table) == []
    script = gnuplot_script(table)
    assert "using 1:2 " in script and "using 1:3 " in script and "using 1:5 " in script
    assert "G_eps" not in script
    problem = ProblemConfig()
    assert study_config(problem, norms=["W1", "L", "W1"]).norms == ["L", "W1"]
    with pytest.raises(ConfigError):
        study_config(problem, norms=["H2"])
    with pytest.raises(ConfigError):
        study_config(problem, norms=[])


def test_emit_report_is_deterministic(tmp_path):
    table = ConvergenceTable(problem="lin1d", rows=[_row(0.25, 0.1), _row(0.125, 0.05), _row(0.0625, 0.02)])
    paths = emit_report(table, tmp_path / "a")
    assert [p.name for p in paths] == ["convergence.csv", "study.gp", "report.txt"]
    assert len(paths[0].read_text().splitlines()) == 4
    assert "all trends hold" in paths[2].read_text()
    again = emit_report(table, tmp_path / "b")
    for first, second in zip(paths, again):
        assert first.read_bytes() == second.read_bytes()


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    problem = load_problem(path)
    coeff = coefficient_from_config(problem)
    assert coeff.dim == problem.domain.dim
    study_config(problem)


def test_load_problem_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_problem(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text('[domain]\ndim = 3\n')
    with pytest.raises(ConfigError):
        load_problem(bad)


def test_planted_violation_fails_at_macro_stage():
    problem = ProblemConfig(
        coefficient=CoefficientSpec(name="flipped1d"),
        domain=DomainSpec(n=32),
        solver=SolverSpec(cell_n=16),
        study=StudySpec(eps_list=[0.5], samples=1000),
    )
    manager = StudyManager(study_config(problem))
    with pytest.raises(StageError) as info:
        manager.run()
    assert info.value.stage == "macro"
    assert manager.hypotheses is not None and not manager.hypotheses.all_passed


def test_constant_coefficient_study_has_no_homogenization_error():
    problem = load_problem(Path(__file__).parent.parent / "configs" / "const1d.toml")
    # every eps lands on the capped fine mesh, which is also the macroscopic mesh
    cfg = study_config(problem, eps_list=[0.25, 0.125], macro_n=16384, points_per_period=16384, samples=1000)
    table = run_convergence_study(cfg)
    for row in table.rows:
        for name in ("err_u", "err_grad_rec", "err_grad_naive", "err_first_order", "mean_gap"):
            assert getattr(row, name) <= 1e-6, (row.eps, name)


@pytest.mark.slow
def test_lin1d_study_end_to_end(tmp_path):
    problem = load_problem(Path(__file__).parent.parent / "configs" / "lin1d.toml")
    eps_list = [0.25, 0.125, 0.0625, 0.03125]
    cfg = study_config(problem, eps_list=eps_list, macro_n=256, cell_n=64, recon_n=16, samples=1000)
    table = run_convergence_study(cfg)
    assert [r.eps for r in table.rows] == eps_list
    assert table.hypotheses.all_passed
    err = table.column("err_u")
    assert all(b < a for a, b in zip(err, err[1:])), err
    assert err[-1] <= 0.25 * err[0]
    for row in table.rows:
        assert row.err_grad_rec < row.err_grad_naive
    paths = emit_report(table, tmp_path)
    assert all(p.exists() for p in paths)
