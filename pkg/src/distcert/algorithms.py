"""
Distributed algorithms in linear state-space form.

Each agent i runs

    x_i^{k+1} = A x_i^k + B_u u_i^k + B_v v_i^k
    y_i^k     = C_y x_i^k + D_yu u_i^k + D_yv v_i^k
    z_i^k     = C_z x_i^k + D_zu u_i^k + D_zv v_i^k
    u_i^k     = grad f_i(y_i^k),    v_i^k = sum_j L^k_ij z_j^k

subject to the invariant sum_j (F_x x_j^k + F_u u_j^k) = 0. For a d-dimensional
domain every scalar signal becomes a 1 x d row, so an agent's state is an
``n_x x d`` array and the matrices act on the left.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import nullspace_basis

MATRIX_NAMES = ("A", "B_u", "B_v", "C_y", "D_yu", "D_yv", "C_z", "D_zu", "D_zv", "F_x", "F_u")

CATALOG_NAMES = ("EXTRA", "NIDS", "DIGing", "AugDGM", "ExDiff", "uDIG", "uEXTRA", "SVL")

FP_TOL = 1e-9


class CatalogError(ValueError):
    """Unknown algorithm name or missing parameter."""


class RealizationError(ValueError):
    """Inconsistent or non-finite realization data."""


class InconsistentOptimumError(ValueError):
    """Local gradients at the claimed optimum do not sum to zero."""


def _mat(value, shape, name):
    arr = np.asarray(value, dtype=float)
    if arr.size == 0 and 0 in shape:
        arr = np.zeros(shape)
    arr = arr.reshape(shape) if arr.size == int(np.prod(shape)) else arr
    if arr.shape != shape:
        raise RealizationError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise RealizationError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class Realization:
    """The eleven matrices describing one algorithm, plus a label."""

    A: np.ndarray
    B_u: np.ndarray
    B_v: np.ndarray
    C_y: np.ndarray
    D_yu: np.ndarray
    D_yv: np.ndarray
    C_z: np.ndarray
    D_zu: np.ndarray
    D_zv: np.ndarray
    F_x: np.ndarray
    F_u: np.ndarray
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise RealizationError(f"A must be square with n_x >= 1, got shape {A.shape}")
        nx = A.shape[0]
        B_v = np.atleast_2d(np.asarray(self.B_v, dtype=float))
        p = B_v.shape[1]
        if p < 1:
            raise RealizationError("at least one communicated variable is required")
        F_x = np.asarray(self.F_x, dtype=float)
        q = 0 if F_x.size == 0 else np.atleast_2d(F_x).shape[0]
        shapes = {
            "A": (nx, nx), "B_u": (nx, 1), "B_v": (nx, p),
            "C_y": (1, nx), "D_yu": (1, 1), "D_yv": (1, p),
            "C_z": (p, nx), "D_zu": (p, 1), "D_zv": (p, p),
            "F_x": (q, nx), "F_u": (q, 1),
        }
        for key, shape in shapes.items():
            object.__setattr__(self, key, _mat(getattr(self, key), shape, key))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_comm(self) -> int:
        return self.B_v.shape[1]

    @property
    def n_invariants(self) -> int:
        return self.F_x.shape[0]

    def matrices(self) -> dict[str, np.ndarray]:
        return {key: getattr(self, key) for key in MATRIX_NAMES}

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "n_states": self.n_states,
            "n_comm": self.n_comm,
            "n_invariants": self.n_invariants,
        }
        out.update({key: getattr(self, key).tolist() for key in MATRIX_NAMES})
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Realization":
        missing = [key for key in MATRIX_NAMES if key not in data]
        if missing:
            raise RealizationError(f"missing matrices: {', '.join(missing)}")
        r = cls(**{key: data[key] for key in MATRIX_NAMES}, name=str(data.get("name", "custom")))
        declared = {"n_states": r.n_states, "n_comm": r.n_comm, "n_invariants": r.n_invariants}
        for key, actual in declared.items():
            if key in data and int(data[key]) != actual:
                raise RealizationError(f"{key}={data[key]} disagrees with matrix sizes ({actual})")
        return r


def load_realization(path) -> Realization:
    """Read an algorithm definition from a JSON file."""
    with open(Path(path), encoding="utf-8") as fh:
        data = json.load(fh, parse_constant=_reject_constant)
    return Realization.from_dict(data)


def _reject_constant(token):
    raise RealizationError(f"non-finite value {token} in algorithm definition")


def save_realization(r: Realization, path) -> None:
    Path(path).write_text(json.dumps(r.to_dict(), indent=2), encoding="utf-8")


# ---------------------------------------------------------------------------
# Catalog

def _require(name, **values):
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise CatalogError(f"{name} requires parameter(s): {', '.join(missing)}")


def canonical_name(name: str) -> str:
    lookup = {n.lower(): n for n in CATALOG_NAMES}
    lookup["exdiffusion"] = "ExDiff"
    lookup["exact-diffusion"] = "ExDiff"
    try:
        return lookup[name.lower()]
    except KeyError:
        raise CatalogError(f"unknown algorithm {name!r}; choose from {', '.join(CATALOG_NAMES)}") from None


def catalog(name: str, alpha: float | None = None, mu: float | None = 1.0, *,
            beta: float | None = None, gamma: float | None = None, delta: float | None = None,
            m: float | None = None, L: float | None = None) -> Realization:
    """
    Build one of the tabulated algorithms with numeric parameters.

    Parameters
    ----------
    name : str
        One of EXTRA, NIDS, DIGing, AugDGM, ExDiff, uDIG, uEXTRA, SVL
        (case-insensitive).
    alpha : float
        Stepsize.
    mu : float, optional
        Overrelaxation parameter in W = I - mu L (ignored by SVL).
    beta, gamma, delta : float, optional
        SVL parameters.
    m, L : float, optional
        Sector bounds, embedded in the uDIG and uEXTRA realizations.

    Returns
    -------
    Realization
    """
    key = canonical_name(name)
    _require(key, alpha=alpha)
    a = float(alpha)
    if a <= 0:
        raise CatalogError("alpha must be positive")
    if key != "SVL":
        _require(key, mu=mu)
        u = float(mu)
        if u == 0:
            raise CatalogError("mu must be nonzero")
    z1 = [[0.0]]

    if key == "SVL":
        _require(key, beta=beta, gamma=gamma, delta=delta)
        b, g, dl = float(beta), float(gamma), float(delta)
        mats = dict(
            A=[[1, b], [0, 1]], B_u=[[-a], [0]], B_v=[[-g], [-1]],
            C_y=[[1, 0]], D_yu=z1, D_yv=[[-dl]],
            C_z=[[1, 0]], D_zu=z1, D_zv=z1,
            F_x=[[0, 1]], F_u=z1,
        )
        params = dict(alpha=a, beta=b, gamma=g, delta=dl)
    elif key in ("EXTRA", "NIDS"):
        mats = dict(
            A=[[2, -1, a], [1, 0, 0], [0, 0, 0]], B_u=[[-a], [0], [1]], B_v=[[-u], [0], [0]],
            C_y=[[1, 0, 0]], D_yu=z1, D_yv=z1,
            C_z=[[1, -0.5, 0]], D_zu=z1, D_zv=z1,
            F_x=[[1, -1, a]], F_u=z1,
        )
        if key == "NIDS":
            mats["C_z"] = [[1, -0.5, a / 2]]
            mats["D_zu"] = [[-a / 2]]
        params = dict(alpha=a, mu=u)
    elif key == "ExDiff":
        mats = dict(
            A=[[2, -1], [1, 0]], B_u=[[-a], [-a]], B_v=[[-u], [-u / 2]],
            C_y=[[1, 0]], D_yu=z1, D_yv=[[-u / 2]],
            C_z=[[1, 0]], D_zu=z1, D_zv=z1,
            F_x=[[1, -1]], F_u=z1,
        )
        params = dict(alpha=a, mu=u)
    elif key in ("uDIG", "uEXTRA"):
        _require(key, m=m, L=L)
        mm, LL = float(m), float(L)
        if not 0 < mm <= LL:
            raise CatalogError("need 0 < m <= L")
        mats = dict(
            A=[[1, -a], [0, 1]], B_u=[[-a], [0]], B_v=[[-u, 0], [0, -u]],
            C_y=[[1, 0]], D_yu=z1, D_yv=[[0, 0]],
            C_z=[[1, 0], [-(LL + mm) / 2, 1]], D_zu=[[0], [1]], D_zv=[[0, 0], [0, 0]],
            F_x=[[0, 1]], F_u=z1,
        )
        if key == "uEXTRA":
            mats["C_z"] = [[1, 0], [-LL, 1]]
            mats["D_zv"] = [[0, 0], [LL * u, 0]]
        params = dict(alpha=a, mu=u, m=mm, L=LL)
    else:  # DIGing, AugDGM
        mats = dict(
            A=[[1, -a, 0], [0, 1, -1], [0, 0, 0]], B_u=[[0], [1], [1]],
            B_v=[[-u, 0], [0, -u], [0, 0]],
            C_y=[[1, -a, 0]], D_yu=z1, D_yv=[[-u, 0]],
            C_z=[[1, 0, 0], [0, 1, 0]], D_zu=[[0], [0]], D_zv=[[0, 0], [0, 0]],
            F_x=[[0, 1, -1]], F_u=z1,
        )
        if key == "AugDGM":
            mats["B_v"] = [[-u, a * u], [0, -u], [0, 0]]
            mats["D_yv"] = [[-u, a * u]]
        params = dict(alpha=a, mu=u)
    return Realization(**mats, name=key, params=params)


# ---------------------------------------------------------------------------
# Fixed points

@dataclass(frozen=True)
class FixedPointWitness:
    """Vectors p, q with (A-I)p = 0, F_x p = 0, C_y p = 1 and
    (A-I)q = B_u, C_y q = D_yu, C_z q = D_zu."""

    p_vec: np.ndarray
    q_vec: np.ndarray


@dataclass(frozen=True)
class FixedPoint:
    """Per-agent fixed-point signals; shapes (n, n_x, d), (n, d), (n, p, d), (n, d), (n, p, d)."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray


def check_fixed_point(r: Realization, tol: float = FP_TOL) -> tuple[bool, FixedPointWitness | None]:
    """
    Decide whether the algorithm has a fixed point at the optimum for every
    admissible problem instance, and return a witness when it does.

    The first condition asks for a direction p that is invariant under A,
    compatible with the invariant rows F_x, and visible in the output y
    (C_y p != 0). The second asks that [B_u; D_yu; D_zu] lie in the column
    space of [A - I; C_y; C_z].
    """
    witness, _ = _fixed_point(r, tol)
    return witness is not None, witness


def fixed_point_diagnostic(r: Realization, tol: float = FP_TOL) -> str | None:
    """Human-readable reason why `check_fixed_point` fails, or None if it passes."""
    return _fixed_point(r, tol)[1]


def _fixed_point(r: Realization, tol: float):
    nx = r.n_states
    AmI = r.A - np.eye(nx)
    stacked = np.vstack([AmI, r.F_x]) if r.n_invariants else AmI
    N = nullspace_basis(stacked, tol)
    if N.shape[1] == 0:
        return None, "no direction p with (A - I) p = 0 and F_x p = 0 (states cannot hold a consensus value)"
    c = (r.C_y @ N).ravel()
    scale = max(np.abs(r.C_y).max(), 1.0)
    if np.linalg.norm(c) <= tol * scale:
        return None, "every p with (A - I) p = 0 and F_x p = 0 has C_y p = 0 (the output cannot reach the optimum)"
    p_vec = N @ c / (c @ c)

    lhs = np.vstack([AmI, r.C_y, r.C_z])
    rhs = np.vstack([r.B_u, r.D_yu, r.D_zu]).ravel()
    q_vec, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    resid = np.linalg.norm(lhs @ q_vec - rhs)
    scale = max(np.linalg.norm(lhs, 2), np.linalg.norm(rhs), 1.0)
    if resid > tol * scale:
        return None, (f"[B_u; D_yu; D_zu] is not in the range of [A - I; C_y; C_z] "
                      f"(residual {resid:.3e}; local gradients cannot be absorbed at the optimum)")
    return FixedPointWitness(p_vec=p_vec, q_vec=q_vec), None


def construct_fixed_point(r: Realization, witness: FixedPointWitness, gradients_at_opt,
                          y_opt, tol: float = 1e-8) -> FixedPoint:
    """Build x_i* = p y_opt - q g_i and the matching outputs for every agent."""
    g = np.atleast_2d(np.asarray(gradients_at_opt, dtype=float))
    y_opt = np.asarray(y_opt, dtype=float).reshape(-1)
    n, d = g.shape
    if y_opt.shape[0] != d:
        raise ValueError(f"y_opt has dimension {y_opt.shape[0]}, gradients have {d}")
    total = np.abs(g.sum(axis=0)).max()
    if total > tol * max(1.0, np.abs(g).max()):
        raise InconsistentOptimumError(f"gradients at the optimum sum to {total:.3e}, not zero")
    p, q = witness.p_vec, witness.q_vec
    x = p[None, :, None] * y_opt[None, None, :] - q[None, :, None] * g[:, None, :]
    y = np.repeat(y_opt[None, :], n, axis=0)
    zc = (r.C_z @ p)[:, None] * y_opt[None, :]
    z = np.repeat(zc[None], n, axis=0)
    v = np.zeros((n, r.n_comm, d))
    return FixedPoint(x=x, y=y, z=z, u=g.copy(), v=v)


# ---------------------------------------------------------------------------
# Implementability

def matches_feedthrough_pattern(r: Realization) -> bool:
    """True iff the feedthrough block is [0, D_yv; 0, 0] or [0, 0; D_zu, 0]."""
    zero = lambda M: not np.any(M)  # noqa: E731
    pattern_y = zero(r.D_yu) and zero(r.D_zu) and zero(r.D_zv)
    pattern_z = zero(r.D_yu) and zero(r.D_yv) and zero(r.D_zv)
    return pattern_y or pattern_z


def evaluation_order(r: Realization) -> list[tuple[str, int]] | None:
    """
    Order in which an agent can evaluate its signals within one iteration.

    Nodes are ('y', 0), ('u', 0), ('z', j) and ('v', j). Returns None when
    the feedthrough terms create a circular dependency.
    """
    p = r.n_comm
    nodes = [("y", 0), ("u", 0)] + [("z", j) for j in range(p)] + [("v", j) for j in range(p)]
    deps: dict[tuple[str, int], set] = {node: set() for node in nodes}
    deps[("u", 0)].add(("y", 0))
    if r.D_yu[0, 0] != 0:
        deps[("y", 0)].add(("u", 0))
    for j in range(p):
        deps[("v", j)].add(("z", j))
        if r.D_yv[0, j] != 0:
            deps[("y", 0)].add(("v", j))
        if r.D_zu[j, 0] != 0:
            deps[("z", j)].add(("u", 0))
        for l in range(p):
            if r.D_zv[j, l] != 0:
                deps[("z", j)].add(("v", l))
    order, done = [], set()
    while len(order) < len(nodes):
        ready = [nd for nd in nodes if nd not in done and deps[nd] <= done]
        if not ready:
            return None
        order.append(ready[0])
        done.add(ready[0])
    return order


def check_implementable(r: Realization) -> bool:
    """
    True when the signals of one iteration can be computed without solving
    an implicit equation.

    Both feedthrough patterns [0, D_yv; 0, 0] and [0, 0; D_zu, 0] qualify;
    more generally any feedthrough whose dependency graph is acyclic does
    (uEXTRA, for instance, feeds v_1 into z_2).
    """
    return evaluation_order(r) is not None
