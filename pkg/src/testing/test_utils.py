import json

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from src.utils import (
    ConfigError,
    FluxCache,
    ResourceError,
    RunLogger,
    SolverError,
    StageError,
    bisect_increasing,
    compile_expression,
    damped_newton,
    linear_solve,
    load_toml,
    pcg,
    quantize,
)


def test_flux_cache_first_writer_wins():
    with FluxCache(seed="a") as cache:
        cache.set((1, 2), "first")
        cache.set((1, 2), "second")
        assert cache.get((1, 2)) == "first"
        assert cache.get((3,), default="miss") == "miss"
        assert cache.stats() == {"entries": 1, "hits": 1, "misses": 1}
    assert len(cache) == 0


def test_flux_cache_budget():
    cache = FluxCache(budget=2)
    cache.set("a", 1)
    cache.set("b", 2)
    cache.set("a", 3)
    with pytest.raises(ResourceError):
        cache.set("c", 4)


def test_flux_cache_seeds_do_not_mix():
    a, b = FluxCache(seed="lin1d"), FluxCache(seed="plap2d")
    a.set("k", 1.0)
    assert b.get("k") is None


def test_quantize():
    assert quantize(0.1) == quantize(0.1 + 1e-12)
    assert quantize([0.0, 1.0]) != quantize([0.0, 1.0 + 1e-6])


def _laplacian(n):
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_pcg_matches_direct_solve():
    A = _laplacian(50)
    b = np.linspace(-1.0, 1.0, 50)
    x, info = pcg(A, b, tol=1e-12)
    assert info["success"]
    np.testing.assert_allclose(x, spsolve(A.tocsc(), b), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(linear_solve(A, b, method="cg"), linear_solve(A, b, method="direct"), atol=1e-8)


def test_block_solves_have_zero_mean():
    # two periodic 1D Laplacians stacked block-diagonally
    n = 8
    P = _laplacian(n).tolil()
    P[0, n - 1] = P[n - 1, 0] = -1.0
    A = sp.block_diag([P, P], format="csr")
    b = np.sin(2 * np.pi * np.arange(2 * n) / n)
    for method in ("direct", "cg"):
        x = linear_solve(A, b, method=method, block=n)
        np.testing.assert_allclose(x.reshape(2, n).mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(A @ x, b - b.reshape(2, n).mean(axis=1).repeat(n), atol=1e-8)


class _Cubic:
    """x + x^3 = b componentwise."""

    def __init__(self, b):
        self.b = b

    def residual(self, x):
        return x + x**3 - self.b

    def jacobian(self, x):
        return sp.diags(1.0 + 3.0 * x**2, format="csr"), True

    def picard(self, x):
        return self.b / (1.0 + x**2)

    def solve(self, A, b):
        return spsolve(A.tocsc(), b)

    def project(self, x):
        return x


def test_damped_newton_converges():
    b = np.array([2.0, 10.0, -30.0])
    x, info = damped_newton(_Cubic(b), np.zeros(3), tol=1e-12)
    np.testing.assert_allclose(x + x**3, b, atol=1e-10)
    assert info.history[0] > info.residual
    assert info.picard_steps == 0


def test_damped_newton_reports_history():
    with pytest.raises(SolverError) as err:
        damped_newton(_Cubic(np.array([100.0])), np.zeros(1), max_iter=1)
    assert len(err.value.history) == 2
    assert err.value.residual == err.value.history[-1]


def test_stage_error_keeps_cause():
    cause = ConfigError("bad")
    err = StageError("macro", cause)
    assert err.stage == "macro" and err.cause is cause
    assert "macro" in str(err)


def test_compile_expression():
    fn = compile_expression("2 + sin(2*pi*y)", ["y"])
    np.testing.assert_allclose(fn(np.array([0.0, 0.25])), [2.0, 3.0])
    np.testing.assert_allclose(compile_expression(3, ["x"])(np.zeros(4)), 3.0)
    with pytest.raises(ConfigError):
        compile_expression("y + w", ["y"])
    with pytest.raises(ConfigError):
        compile_expression("y +* 2", ["y"])


def test_bisect_increasing():
    t = bisect_increasing(lambda s: s**2, np.array([4.0, 0.25, 1e6]))
    np.testing.assert_allclose(t, [2.0, 0.5, 1e3], rtol=1e-10)


def test_load_toml(tmp_path):
    with pytest.raises(ConfigError):
        load_toml(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[domain\n")
    with pytest.raises(ConfigError):
        load_toml(bad)
    good = tmp_path / "good.toml"
    good.write_text('[coefficient]\nname = "lin1d"\n')
    assert load_toml(good) == {"coefficient": {"name": "lin1d"}}


def test_run_logger_writes_json_lines(tmp_path):
    run_logger = RunLogger({"log_dir": str(tmp_path), "filename": "run.log"})
    session = run_logger.start()
    run_logger.log_stage("upscale", "done", seconds=1.5, grid=np.arange(3))
    run_logger.stop()
    records = [json.loads(line) for line in (tmp_path / "run.log").read_text().splitlines()]
    assert [r["event"] for r in records] == ["session", "stage", "session"]
    assert all(r["session_id"] == session for r in records)
    assert records[1]["payload"] == {"stage": "upscale", "status": "done", "seconds": 1.5, "grid": [0, 1, 2]}
