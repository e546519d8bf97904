"""
Small dense semidefinite programs through cvxopt's primal-dual interior-point
solver.

Only two problem shapes are needed: the margin form of an affine LMI
(``lmi_margin``) and spectral-norm minimization of an affine matrix
(``min_spectral_norm``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from cvxopt import matrix, solvers

from .linalg import symmetric_basis, symmetric_from_vector


class SolverError(RuntimeError):
    """The interior-point solver failed for numerical reasons."""


@dataclass
class MatrixVariable:
    """A symmetric k x k decision variable constrained by ``X >= lower * I``."""

    name: str
    size: int
    lower: float = 0.0

    @property
    def n_params(self) -> int:
        return self.size * (self.size + 1) // 2


@dataclass
class MarginResult:
    status: str
    t: float | None
    values: dict[str, np.ndarray] | None
    dual_bound: float | None


def _solve(c, Gl, hl, Gs, hs, A=None, b=None):
    opts = {"show_progress": False, "maxiters": 100, "abstol": 1e-9, "reltol": 1e-8, "feastol": 1e-9}
    try:
        if A is None:
            return solvers.sdp(c, Gl=Gl, hl=hl, Gs=Gs, hs=hs, options=opts)
        return solvers.sdp(c, Gl=Gl, hl=hl, Gs=Gs, hs=hs, A=A, b=b, options=opts)
    except (ArithmeticError, ValueError) as exc:
        raise SolverError(str(exc)) from exc


def lmi_margin(operator, variables: list[MatrixVariable], trace_bound: float,
               t_floor: float = 1.0) -> MarginResult:
    """
    Minimize t subject to ``operator(X_1, ..., X_r) <= t I``.

    `operator` is affine in the symmetric variables. The variables satisfy
    ``X_j >= lower_j I`` and ``sum_j trace(X_j) <= trace_bound``, and t is
    kept above ``-t_floor`` so strictly feasible problems stay bounded.
    """
    bases = [symmetric_basis(v.size) for v in variables]
    zeros = [np.zeros((v.size, v.size)) for v in variables]
    const = np.asarray(operator(*zeros), dtype=float)
    k = const.shape[0]
    cols = []
    for j, basis in enumerate(bases):
        for E in basis:
            args = list(zeros)
            args[j] = E
            cols.append((np.asarray(operator(*args)) - const).ravel())
    n_theta = len(cols)
    nv = n_theta + 1

    c = matrix([0.0] * n_theta + [1.0])
    G0 = np.column_stack(cols + [-np.eye(k).ravel()])
    Gs, hs = [matrix(G0)], [matrix(-const)]
    offset = 0
    trace_row = np.zeros(nv)
    for v, basis in zip(variables, bases):
        block = np.zeros((v.size * v.size, nv))
        for i, E in enumerate(basis):
            block[:, offset + i] = -E.ravel()
            trace_row[offset + i] = np.trace(E)
        Gs.append(matrix(block))
        hs.append(matrix(-v.lower * np.eye(v.size)))
        offset += len(basis)
    floor_row = np.zeros(nv)
    floor_row[-1] = -1.0
    Gl = matrix(np.vstack([trace_row, floor_row]))
    hl = matrix([float(trace_bound), float(t_floor)])

    sol = _solve(c, Gl, hl, Gs, hs)
    x = sol.get("x")
    values = None
    if x is not None:
        theta = np.array(x).ravel()
        values, offset = {}, 0
        for v in variables:
            values[v.name] = symmetric_from_vector(theta[offset:offset + v.n_params], v.size)
            offset += v.n_params
    t = None if x is None else float(x[-1])
    dual = sol.get("dual objective")
    return MarginResult(status=sol["status"], t=t, values=values,
                        dual_bound=None if dual is None else float(dual))


def min_spectral_norm(M0, Ms: list[np.ndarray]) -> tuple[float, np.ndarray]:
    """
    Minimize ``||M0 + sum_i y_i Ms[i]||`` over real y via the epigraph form
    ``[[t I, M], [M^T, t I]] >= 0``.

    Returns the optimal norm and y.
    """
    M0 = np.asarray(M0, dtype=float)
    r, c = M0.shape
    k = r + c
    nv = len(Ms) + 1

    def embed(M):
        out = np.zeros((k, k))
        out[:r, r:] = M
        out[r:, :r] = M.T
        return out

    cols = [-embed(M).ravel() for M in Ms] + [-np.eye(k).ravel()]
    G = matrix(np.column_stack(cols)) if cols else None
    h = matrix(embed(M0))
    cvec = matrix([0.0] * len(Ms) + [1.0])
    Gl = matrix(np.zeros((1, nv)))
    Gl[0, nv - 1] = -1.0
    sol = _solve(cvec, Gl, matrix([0.0]), [G], [h])
    if sol.get("x") is None:
        raise SolverError(f"spectral-norm problem failed: {sol['status']}")
    y = np.array(sol["x"]).ravel()[:-1]
    M = M0 + sum(yi * Mi for yi, Mi in zip(y, Ms))
    return float(np.linalg.norm(M, 2)), y
