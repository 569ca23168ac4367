import json
import logging
import os
from typing import Optional

import numpy as np
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from ..cell import solve_cell_y, solve_cell_z
from ..coeff import catalog_names, builtin_problem, coefficient_from_config, validate
from ..datamodel import (
    CellWebRequestModel,
    CoefficientSpec,
    DomainSpec,
    NFunctionWebRequestModel,
    ProblemConfig,
    SigmaWebRequestModel,
    ValidateWebRequestModel,
)
from ..fields import Mesh, MultiscaleField
from ..meanvalue import sigma_test
from ..nfunc import NFunction, growth_report, young_margins
from ..utils import ConfigError, ReiterhomError, dyadic_grid

logger = logging.getLogger(__name__)

root_file_path = os.path.dirname(os.path.abspath(__file__))

with open(os.path.join(root_file_path, "config.json")) as config_file:
    config = json.load(config_file)

default_problem = config.get("default_problem", "lin1d")
default_samples = config.get("default_samples", 10_000)
default_seed = config.get("default_seed", 0)
served_host = config.get("host", "127.0.0.1")
served_port = config.get("port", 8081)
allowed_origins = sorted({f"http://{served_host}:{served_port}", f"http://localhost:{served_port}"})

app = FastAPI()

# only the address this app is served on
app.add_middleware(
    CORSMiddleware,
    allow_origins=allowed_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

api = FastAPI(root_path="/api")
app.mount("/api", api)


def _problem(spec: Optional[CoefficientSpec], dim: int) -> ProblemConfig:
    spec = spec or CoefficientSpec(name=default_problem)
    try:
        return ProblemConfig(coefficient=spec, domain=DomainSpec(dim=dim, lo=[0.0] * dim, hi=[1.0] * dim))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _failure(action: str, error: Exception) -> dict:
    logger.warning(f"{action} failed: {error}")
    return {"status": False, "message": f"Error occurred while {action}: {error}"}


@api.get("/problems")
def get_problems():
    """List the catalog problems with their descriptions."""
    try:
        data = [builtin_problem(name).describe() for name in catalog_names(include_planted=True)]
        return {"status": True, "data": data, "message": "Problems retrieved successfully"}
    except ReiterhomError as ex_error:
        return _failure("listing problems", ex_error)


@api.post("/nfunction")
def check_nfunction(req: NFunctionWebRequestModel):
    """Growth classes and the Young-inequality margins of an N-function."""
    try:
        nf = NFunction.from_spec(req.nfunction)
        grid = dyadic_grid(req.grid_n, req.grid_lo, req.grid_hi)
        margins = young_margins(nf, grid)
        return {
            "status": True,
            "data": {"nfunction": nf.describe(), "growth": growth_report(nf, grid).model_dump(), "margins": margins},
            "message": "N-function checked successfully",
        }
    except ReiterhomError as ex_error:
        return _failure("checking the N-function", ex_error)


@api.post("/validate")
def validate_problem(req: ValidateWebRequestModel):
    """Hypothesis report of a coefficient."""
    try:
        coeff = coefficient_from_config(_problem(req.coefficient, req.dim))
        report = validate(coeff, samples=req.samples or default_samples, seed=default_seed if req.seed is None else req.seed)
        return {"status": True, "data": report.model_dump(), "message": "Coefficient validated"}
    except ReiterhomError as ex_error:
        return _failure("validating the coefficient", ex_error)


@api.post("/cell")
def solve_cell(req: CellWebRequestModel):
    """h(y, r, xi) when a cell point is given, q(r, xi) otherwise."""
    try:
        coeff = coefficient_from_config(_problem(req.coefficient, req.dim))
        xi = np.asarray(req.xi, dtype=float)
        mesh_z = coeff.z_mesh(req.cell_n)
        if req.y is not None:
            sol = solve_cell_z(coeff, np.asarray(req.y, dtype=float), req.r, xi, mesh_z)
        else:
            sol = solve_cell_y(coeff, req.r, xi, coeff.y_mesh(req.cell_n), mesh_z)
        data = {
            "flux": sol.flux_sample.tolist(),
            "residual": sol.residual,
            "iterations": sol.iterations,
            "tangent": None if sol.tangent is None else sol.tangent.tolist(),
        }
        return {"status": True, "data": data, "message": "Cell problem solved"}
    except ReiterhomError as ex_error:
        return _failure("solving the cell problem", ex_error)


@api.post("/sigma")
def run_sigma_test(req: SigmaWebRequestModel):
    """Quadrature check of reiterated Sigma-convergence."""
    try:
        mesh = Mesh(req.dim, tuple(req.lo), tuple(req.hi), req.n)
        u0 = MultiscaleField.from_expression(req.u0, req.dim)
        f = MultiscaleField.from_expression(req.f, req.dim)
        report = sigma_test(u0, f, mesh, req.eps_list)
        return {"status": True, "data": report.model_dump(), "message": "Sigma test completed"}
    except ReiterhomError as ex_error:
        return _failure("running the sigma test", ex_error)
