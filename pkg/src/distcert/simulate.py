"""
Synchronous network simulation of a realization on quadratic local
functions and time-varying Laplacians.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algorithms import (FixedPoint, Realization, check_fixed_point, construct_fixed_point,
                         evaluation_order)
from .linalg import projector


class BadInitializationError(ValueError):
    """The initial state violates the conserved quantity of the realization."""


class NotImplementableError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class QuadraticLocalFunction:
    """f(y) = 1/2 (y - r)^T H (y - r)."""

    H: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        r = np.asarray(self.r, dtype=float).reshape(-1)
        if H.shape != (r.size, r.size) or not np.allclose(H, H.T, atol=1e-12):
            raise ValueError("H must be symmetric and match r")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "r", r)

    def value(self, y) -> float:
        e = np.asarray(y, dtype=float) - self.r
        return 0.5 * float(e @ self.H @ e)

    def grad(self, y) -> np.ndarray:
        return self.H @ (np.asarray(y, dtype=float) - self.r)

    def in_sector(self, m: float, L: float, tol: float = 1e-12) -> bool:
        w = np.linalg.eigvalsh(self.H)
        return bool(w.min() >= m - tol and w.max() <= L + tol)


def random_quadratics(n: int, d: int, m: float, L: float, seed=None, r_scale: float = 1.0):
    """n quadratics with Hessian spectra uniform in [m, L] and random minimizers."""
    rng = _rng(seed)
    out = []
    for _ in range(n):
        U, _ = np.linalg.qr(rng.standard_normal((d, d)))
        H = (U * rng.uniform(m, L, d)) @ U.T
        out.append(QuadraticLocalFunction(0.5 * (H + H.T), r_scale * rng.standard_normal(d)))
    return out


def optimum(funcs: Sequence[QuadraticLocalFunction]) -> tuple[np.ndarray, np.ndarray]:
    """Minimizer of the sum and the local gradients there."""
    Hs = sum(f.H for f in funcs)
    y = np.linalg.solve(Hs, sum(f.H @ f.r for f in funcs))
    return y, np.stack([f.grad(y) for f in funcs])


def random_laplacian(n: int, sigma: float, seed=None) -> np.ndarray:
    """
    Symmetric L = (I - Pi) - U D U^T with U an orthonormal basis of the
    complement of the ones vector and D uniform in [-sigma, sigma].
    """
    if n < 2:
        raise ValueError("need at least two agents")
    if not 0 <= sigma < 1:
        raise ValueError("sigma must lie in [0, 1)")
    rng = _rng(seed)
    G = rng.standard_normal((n, n - 1))
    G -= G.mean(axis=0)
    U, _ = np.linalg.qr(G)
    D = rng.uniform(-sigma, sigma, n - 1)
    Lap = (np.eye(n) - projector(n)) - (U * D) @ U.T
    return 0.5 * (Lap + Lap.T)


@dataclass
class LaplacianSequence:
    mats: list
    sigma_bound: float

    def __post_init__(self):
        for k, Lk in enumerate(self.mats):
            check_laplacian(Lk, self.sigma_bound, tol=1e-9, where=f"L^{k}")

    @classmethod
    def random(cls, n: int, sigma: float, K: int, seed=None, constant: bool = False):
        rng = _rng(seed)
        if constant:
            Lk = random_laplacian(n, sigma, rng)
            return cls([Lk] * K, sigma)
        return cls([random_laplacian(n, sigma, rng) for _ in range(K)], sigma)

    def __len__(self):
        return len(self.mats)

    def __getitem__(self, k):
        return self.mats[k]


def check_laplacian(Lk, sigma: float, tol: float = 1e-9, where: str = "L") -> None:
    Lk = np.asarray(Lk, dtype=float)
    n = Lk.shape[0]
    one = np.ones(n)
    if np.abs(Lk @ one).max() > tol or np.abs(one @ Lk).max() > tol:
        raise ValueError(f"{where} does not annihilate the ones vector")
    gap = np.linalg.norm(np.eye(n) - projector(n) - Lk, 2)
    if gap > sigma + tol:
        raise ValueError(f"{where} has ||I - Pi - L|| = {gap:.6g} > {sigma}")


@dataclass
class Trajectory:
    """
    Recorded signals. x has shape (K+1, n, n_x, d); y, u have shape
    (K, n, d); z, v have shape (K, n, p, d). Errors are taken relative to
    `fixed_point`.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray
    fixed_point: FixedPoint
    metadata: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.y.shape[0]

    @property
    def x_err(self) -> np.ndarray:
        return self.x - self.fixed_point.x[None]

    @property
    def y_err(self) -> np.ndarray:
        return self.y - self.fixed_point.y[None]

    def x_err_norms(self) -> np.ndarray:
        e = self.x_err
        return np.sqrt((e ** 2).reshape(e.shape[0], -1).sum(axis=1))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "agent", "||x_err||", "||y_err||"])
        xe, ye = self.x_err, self.y_err
        for k in range(self.K):
            for i in range(xe.shape[1]):
                w.writerow([k, i, f"{np.linalg.norm(xe[k, i]):.12e}", f"{np.linalg.norm(ye[k, i]):.12e}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def metadata_json(self, **kwargs) -> str:
        return json.dumps(self.metadata, **kwargs)


def run(r: Realization, funcs: Sequence[QuadraticLocalFunction],
        laps: LaplacianSequence | Sequence | Callable[[int], np.ndarray], K: int, init,
        fixed_point: FixedPoint | None = None, invariant_tol: float = 1e-8) -> Trajectory:
    """
    Iterate the realization for K rounds.

    Parameters
    ----------
    r : Realization
    funcs : list of QuadraticLocalFunction
        One per agent.
    laps : LaplacianSequence, list of arrays or callable k -> L^k
    K : int
    init : ndarray, shape (n, n_x, d)
    fixed_point : FixedPoint, optional
        Reference for error coordinates; built from the witness by default.

    Raises
    ------
    NotImplementableError
        If the feedthrough terms are circular.
    BadInitializationError
        If the conserved quantity sum_j (F_x x_j + F_u u_j) is nonzero at k = 0.
    """
    order = evaluation_order(r)
    if order is None:
        raise NotImplementableError(f"{r.name}: circular feedthrough")
    X = np.array(init, dtype=float)
    n = len(funcs)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.shape[:2] != (n, r.n_states):
        raise ValueError(f"init has shape {X.shape}, expected ({n}, {r.n_states}, d)")
    d = X.shape[2]
    p = r.n_comm
    get_lap = laps if callable(laps) else (lambda k: laps[k])
    if fixed_point is None:
        ok, wit = check_fixed_point(r)
        if not ok:
            raise ValueError(f"{r.name}: no fixed point")
        y_opt, g = optimum(funcs)
        fixed_point = construct_fixed_point(r, wit, g, y_opt)

    xs = np.empty((K + 1, n, r.n_states, d))
    ys = np.empty((K, n, d))
    us = np.empty((K, n, d))
    zs = np.empty((K, n, p, d))
    vs = np.empty((K, n, p, d))
    xs[0] = X
    for k in range(K):
        Lk = np.asarray(get_lap(k), dtype=float)
        y = np.zeros((n, d))
        u = np.zeros((n, d))
        z = np.zeros((n, p, d))
        v = np.zeros((n, p, d))
        for kind, j in order:
            if kind == "y":
                y = (np.einsum("a,iad->id", r.C_y[0], X) + r.D_yu[0, 0] * u
                     + np.einsum("b,ibd->id", r.D_yv[0], v))
            elif kind == "u":
                u = np.stack([f.grad(y[i]) for i, f in enumerate(funcs)])
            elif kind == "z":
                z[:, j] = (np.einsum("a,iad->id", r.C_z[j], X) + r.D_zu[j, 0] * u
                           + np.einsum("b,ibd->id", r.D_zv[j], v))
            else:
                v[:, j] = Lk @ z[:, j]
        if k == 0:
            _check_invariant(r, X, u, invariant_tol)
        X = (np.einsum("ab,ibd->iad", r.A, X) + r.B_u[None, :, 0, None] * u[:, None, :]
             + np.einsum("ab,ibd->iad", r.B_v, v))
        xs[k + 1], ys[k], us[k], zs[k], vs[k] = X, y, u, z, v
    return Trajectory(x=xs, y=ys, z=zs, u=us, v=vs, fixed_point=fixed_point,
                      metadata={"algorithm": r.name, "params": dict(r.params), "n": n, "d": d, "K": K})


def invariant_value(r: Realization, X, u) -> np.ndarray:
    """sum_j (F_x x_j + F_u u_j), shape (q, d)."""
    return np.einsum("qa,iad->qd", r.F_x, X) + np.einsum("q,id->qd", r.F_u[:, 0], u)


def _check_invariant(r, X, u, tol):
    if r.n_invariants == 0:
        return
    val = np.abs(invariant_value(r, X, u)).max()
    scale = max(1.0, np.abs(X).max(), np.abs(u).max())
    if val > tol * scale:
        raise BadInitializationError(f"{r.name}: conserved quantity is {val:.3e} at k = 0, not zero")


def canonical_initialization(r: Realization, funcs: Sequence[QuadraticLocalFunction], x0,
                             laplacian=None) -> np.ndarray:
    """
    Initial agent states satisfying the conserved quantity.

    EXTRA and NIDS start from x^1 = x^0 - alpha grad f(x^0) - mu L x^0,
    gradient-tracking methods from s^0 = grad f(x^0), and methods with an
    integral state (SVL, uDIG, uEXTRA) from a zero second state. Other
    realizations get generic states with the agent sum projected onto the
    invariant subspace.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    g0 = np.stack([f.grad(x0[i]) for i, f in enumerate(funcs)])
    Lap = np.zeros((n, n)) if laplacian is None else np.asarray(laplacian, dtype=float)
    name = r.name
    a = r.params.get("alpha", 0.0)
    mu = r.params.get("mu", 1.0)
    X = np.zeros((n, r.n_states, d))
    if name in ("EXTRA", "NIDS"):
        X[:, 0] = x0 - a * g0 - mu * Lap @ x0
        X[:, 1] = x0
        X[:, 2] = g0
    elif name in ("DIGing", "AugDGM"):
        X[:, 0] = x0
        X[:, 1] = g0
        X[:, 2] = g0
    elif name == "ExDiff":
        X[:, 0] = x0
        X[:, 1] = x0
    elif name in ("SVL", "uDIG", "uEXTRA"):
        X[:, 0] = x0
    else:
        X[:, 0] = x0
        if r.n_invariants:
            if np.any(r.F_u):
                raise BadInitializationError(f"{name}: no generic initialization when F_u != 0")
            total = np.einsum("qa,iad->qd", r.F_x, X)
            corr = np.linalg.pinv(r.F_x) @ total / n
            X -= corr[None]
    if r.n_invariants and not np.any(r.F_u):
        total = np.abs(np.einsum("qa,iad->qd", r.F_x, X)).max()
        if total > 1e-8 * max(1.0, np.abs(X).max()):
            raise BadInitializationError(f"{name}: canonical initialization does not fit this realization")
    return X


def lyapunov_series(traj: Trajectory, cert) -> np.ndarray:
    """V^k = x~^T (Pi (x) P + (I - Pi) (x) Q) x~ along the trajectory."""
    e = traj.x_err
    xbar = e.mean(axis=1)
    dev = e - xbar[:, None]
    n = e.shape[1]
    return (n * np.einsum("kad,ab,kbd->k", xbar, cert.P, xbar)
            + np.einsum("kiad,ab,kibd->k", dev, cert.Q, dev))


def empirical_rate(traj, burn_in: int = 0, floor: float = 1e-13) -> float:
    """
    exp of the least-squares slope of log ||x~^k|| for k >= burn_in.

    `traj` is a Trajectory or a 1-D sequence of error norms. The series is
    cut at the first entry below `floor`.
    """
    errs = traj.x_err_norms() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if burn_in >= len(errs):
        raise InsufficientDataError("burn_in exceeds the trajectory length")
    ks = np.arange(len(errs))
    errs, ks = errs[burn_in:], ks[burn_in:]
    small = np.nonzero(~(errs >= floor))[0]
    if small.size:
        errs, ks = errs[:small[0]], ks[:small[0]]
    if len(errs) < 5:
        raise InsufficientDataError(f"only {len(errs)} usable points")
    slope = np.polyfit(ks, np.log(errs), 1)[0]
    return float(np.exp(slope))


def lower_bound(kappa: float, sigma: float) -> float:
    """max{(kappa - 1)/(kappa + 1), sigma}."""
    if kappa < 1 or not 0 <= sigma < 1:
        raise ValueError("need kappa >= 1 and sigma in [0, 1)")
    return max((kappa - 1) / (kappa + 1), sigma)
