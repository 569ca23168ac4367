import logging
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .exceptions import DomainError, ShapeError

logger = logging.getLogger(__name__)


def block_mean_projector(block: int) -> Callable[[np.ndarray], np.ndarray]:
    """Projector removing the mean of every consecutive block of ``block`` entries."""

    def project(v: np.ndarray) -> np.ndarray:
        w = v.reshape(-1, block)
        return (w - w.mean(axis=1, keepdims=True)).reshape(v.shape)

    return project


def jacobi(A: sp.spmatrix) -> np.ndarray:
    d = np.asarray(A.diagonal(), dtype=float)
    inv = np.ones_like(d)
    nz = np.abs(d) > 0
    inv[nz] = 1.0 / d[nz]
    return inv


def pcg(
    A: sp.spmatrix,
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    tol: float = 1e-12,
    maxiter: Optional[int] = None,
    M: Optional[np.ndarray] = None,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    Preconditioned conjugate gradient for a symmetric positive (semi-)definite system Ax=b.

    Parameters
    ----------
    A : scipy.sparse matrix
        Left-hand-side matrix of the linear system.

    b : numpy.ndarray
        Right-hand-side vector.

    x0 : numpy.ndarray
        First guess of the solution (optional).

    tol : float
        Relative tolerance on the Euclidean norm of the residual r = b - A*x.

    maxiter : int
        Maximum number of iterations, 10 times the number of unknowns by default.

    M : numpy.ndarray
        Inverse diagonal preconditioner; Jacobi when omitted.

    project : callable
        Projector onto the complement of the nullspace of A, applied to the right-hand
        side and to the returned solution (semi-definite periodic systems).

    Returns
    -------
    x : numpy.ndarray
        Solution estimate.

    info : dict
        Keys 'niter', 'success' and 'res_norm'.
    """
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ShapeError(f"pcg expects a square system, got A{A.shape} and b{b.shape}")
    maxiter = 10 * n if maxiter is None else maxiter
    M = jacobi(A) if M is None else M

    if project is not None:
        b = project(b)
    x = np.zeros(n) if x0 is None else x0.astype(float).copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), {"niter": 0, "success": True, "res_norm": 0.0}

    r = b - A @ x
    z = M * r
    p = z.copy()
    rz = float(r @ z)
    res_norm = float(np.linalg.norm(r))
    success = res_norm <= tol * bnorm
    niter = 0
    while not success and niter < maxiter:
        niter += 1
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res_norm = float(np.linalg.norm(r))
        if res_norm <= tol * bnorm:
            success = True
            break
        z = M * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    if project is not None:
        x = project(x)
    return x, {"niter": niter, "success": success, "res_norm": res_norm}


def direct_solve(A: sp.spmatrix, b: np.ndarray, pinned: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Sparse LU solve; entries listed in ``pinned`` are fixed to zero and their rows dropped.
    """
    A = sp.csr_matrix(A)
    if pinned is None or len(pinned) == 0:
        return np.atleast_1d(spsolve(A.tocsc(), b))
    keep = np.ones(A.shape[0], dtype=bool)
    keep[pinned] = False
    x = np.zeros(A.shape[0])
    x[keep] = np.atleast_1d(spsolve(A[keep][:, keep].tocsc(), b[keep]))
    return x


def linear_solve(
    A: sp.spmatrix,
    b: np.ndarray,
    method: str = "direct",
    block: Optional[int] = None,
    tol: float = 1e-12,
) -> np.ndarray:
    """
    Solve Ax=b with either sparse LU or Jacobi-PCG.

    :param A: sparse matrix; symmetric when ``method`` is "cg".
    :param b: right-hand side.
    :param method: "direct" or "cg".
    :param block: when given, A is block diagonal with blocks of this size, each with
        the constants as nullspace; the returned solution has zero mean per block.
    :param tol: relative residual tolerance for PCG.
    """
    project = block_mean_projector(block) if block else None
    if method == "cg":
        x, info = pcg(A, b, tol=tol, project=project)
        if info["success"]:
            return x
        logger.warning(
            f"pcg stopped after {info['niter']} iterations at residual {info['res_norm']:.3e}; falling back to LU"
        )
    elif method != "direct":
        raise DomainError(f"unknown linear solver method: {method}")

    if block:
        n_blocks = A.shape[0] // block
        x = direct_solve(A, project(b), pinned=np.arange(n_blocks) * block)
        return project(x)
    return direct_solve(A, b)
