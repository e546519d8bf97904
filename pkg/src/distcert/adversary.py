"""
Approximate worst-case trajectories.

At each step an adversary picks gradient errors u~ and graph outputs v~
that maximize the Lyapunov increment V^{k+1} - rho^2 V^k, subject to the
per-agent sector constraint, the graph constraint and 1^T v~ = 0. All of
these are quadratic in the decision variables once the current state is
fixed, so each is built once as an explicit quadratic form and handed to a
local SQP solver from several starts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .algorithms import FixedPoint, Realization, evaluation_order
from .certify import Certificate, ProblemClass, lyapunov_value
from .linalg import nullspace_basis, projector
from .sdp import min_spectral_norm
from .simulate import Trajectory

log = logging.getLogger(__name__)

SAFETY = 1 - 1e-9
V_FLOOR = 1e-20
TIE_TOL = 1e-6
# round-off allowance when checking a repaired point (at sigma = 0 the graph set is a single point)
REPAIR_TOL = 1e-12


class AdversaryInfeasibleError(RuntimeError):
    """No feasible point was found; this indicates a bug since zero signals are feasible."""


class NoLaplacianError(ValueError):
    """The linear constraints L z = v admit no balanced Laplacian."""


def sector_violation(y_err, u_err, m: float, L: float) -> np.ndarray:
    """
    -2 (u - m y)^T (u - L y) per agent; the sector constraint holds iff >= 0.

    Inputs have shape (n, d) or (d,).
    """
    y = np.atleast_2d(np.asarray(y_err, dtype=float))
    u = np.atleast_2d(np.asarray(u_err, dtype=float))
    if y.shape != u.shape:
        raise ValueError("y_err and u_err must have matching shapes")
    return -2 * np.einsum("id,id->i", u - m * y, u - L * y)


def graph_violation(z_err, v_err, sigma: float, R=None) -> float:
    """
    The graph quadratic form sigma^2 |Zc|_R^2 + 2 <Zc, v>_R - |v|_R^2 - |Zc|_R^2
    with Zc = (I - Pi) z; feasible iff >= 0.

    Inputs have shape (n, p, d), (n, p) or (n,). R weights the p channels
    and defaults to the identity.
    """
    z = np.asarray(z_err, dtype=float)
    v = np.asarray(v_err, dtype=float)
    if z.shape != v.shape:
        raise ValueError("z_err and v_err must have matching shapes")
    n = z.shape[0]
    z = z.reshape(n, 1, 1) if z.ndim == 1 else z.reshape(n, z.shape[1], -1)
    v = v.reshape(z.shape)
    R = np.eye(z.shape[1]) if R is None else np.atleast_2d(R)
    Pc = np.eye(n) - projector(n)
    zc = np.einsum("ik,kpd->ipd", Pc, z)
    vc = np.einsum("ik,kpd->ipd", Pc, v)
    form = lambda a, b: float(np.einsum("ipd,pq,iqd->", a, R, b))  # noqa: E731
    return (sigma ** 2 - 1) * form(zc, zc) + 2 * form(zc, vc) - form(vc, vc)


# ---------------------------------------------------------------------------
# quadratic forms in the decision vector

@dataclass
class _Quad:
    H: np.ndarray
    g: np.ndarray
    c: float

    def __call__(self, th):
        return float(th @ self.H @ th + self.g @ th + self.c)

    def grad(self, th):
        return 2 * self.H @ th + self.g

    def __add__(self, other):
        return _Quad(self.H + other.H, self.g + other.g, self.c + other.c)

    def scale(self, s):
        return _Quad(s * self.H, s * self.g, s * self.c)


def _bilinear(a0, Ja, b0, Jb, W) -> _Quad:
    """(a0 + Ja th)^T W (b0 + Jb th)."""
    H = Ja.T @ W @ Jb
    return _Quad(0.5 * (H + H.T), Ja.T @ W @ b0 + Jb.T @ W.T @ a0, float(a0 @ W @ b0))


@dataclass
class GreedyStepProblem:
    """
    One greedy step at the error state `x` of shape (n, n_x, d). With
    `free_initial` the state itself is optimized subject to the invariant
    and V = 1.
    """

    realization: Realization
    pc: ProblemClass
    cert: Certificate
    x: np.ndarray
    restarts: int = 8
    free_initial: bool = False
    enforce_cert_R: bool | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 2:
            self.x = self.x[:, :, None]
        self.n, nx, self.d = self.x.shape
        if self.n < 2:
            raise ValueError("the adversary needs at least two agents")
        if nx != self.realization.n_states:
            raise ValueError("state dimension does not match the realization")
        r = self.realization
        self.p = r.n_comm
        self.order = evaluation_order(r)
        if self.order is None:
            raise ValueError(f"{r.name}: circular feedthrough")
        if self.enforce_cert_R is None:
            self.enforce_cert_R = self.p > 1
        self.Uc = nullspace_basis(np.ones((1, self.n)))
        self.nu = self.n * self.d
        self.nw = (self.n - 1) * self.p * self.d
        if self.free_initial:
            Nx = nullspace_basis(r.F_x) if r.n_invariants else np.eye(nx)
            self.Nx = Nx
            self.nx_mean = Nx.shape[1] * self.d
            self.nx_dev = (self.n - 1) * nx * self.d
        else:
            self.nx_mean = self.nx_dev = 0
        self.dim = self.nu + self.nw + self.nx_mean + self.nx_dev
        self._build()

    # -- signals -----------------------------------------------------------
    def split(self, th):
        n, d, p, nx = self.n, self.d, self.p, self.realization.n_states
        U = th[:self.nu].reshape(n, d)
        W = th[self.nu:self.nu + self.nw].reshape(n - 1, p, d)
        V = np.einsum("il,lpd->ipd", self.Uc, W)
        if self.free_initial:
            o = self.nu + self.nw
            a = th[o:o + self.nx_mean].reshape(-1, d)
            B = th[o + self.nx_mean:].reshape(n - 1, nx, d)
            X = (self.Nx @ a)[None] + np.einsum("il,lad->iad", self.Uc, B)
        else:
            X = self.x
        return X, U, V

    def join(self, X, U, V):
        parts = [U.ravel(), np.einsum("il,ipd->lpd", self.Uc, V).ravel()]
        if self.free_initial:
            xbar = X.mean(axis=0)
            a = np.linalg.lstsq(self.Nx, xbar, rcond=None)[0]
            B = np.einsum("il,iad->lad", self.Uc, X)
            parts += [a.ravel(), B.ravel()]
        return np.concatenate(parts)

    def signals(self, th):
        """All error signals implied by the decision vector."""
        r = self.realization
        X, U, V = self.split(th)
        Y = np.einsum("a,iad->id", r.C_y[0], X) + r.D_yu[0, 0] * U + np.einsum("b,ibd->id", r.D_yv[0], V)
        Z = (np.einsum("ja,iad->ijd", r.C_z, X) + r.D_zu[None, :, 0, None] * U[:, None, :]
             + np.einsum("jl,ild->ijd", r.D_zv, V))
        Xn = (np.einsum("ab,ibd->iad", r.A, X) + r.B_u[None, :, 0, None] * U[:, None, :]
              + np.einsum("ab,ibd->iad", r.B_v, V))
        return {"X": X, "U": U, "V": V, "Y": Y, "Z": Z, "Xn": Xn}

    def _affine(self, key):
        z = np.zeros(self.dim)
        base = self.signals(z)[key].ravel().copy()
        J = np.empty((base.size, self.dim))
        for k in range(self.dim):
            z[k] = 1.0
            J[:, k] = self.signals(z)[key].ravel() - base
            z[k] = 0.0
        return base, J

    def _build(self):
        r, pc, cert = self.realization, self.pc, self.cert
        n, d, p = self.n, self.d, self.p
        nx = r.n_states
        aff = {k: self._affine(k) for k in ("X", "U", "V", "Y", "Z", "Xn")}
        Pi = projector(n)
        T = np.kron(np.kron(Pi, cert.P) + np.kron(np.eye(n) - Pi, cert.Q), np.eye(d))
        self.V_next = _bilinear(*aff["Xn"], *aff["Xn"], T)
        self.V_now = _bilinear(*aff["X"], *aff["X"], T)
        self.objective = self.V_next + self.V_now.scale(-cert.rho ** 2)

        # sector: -2 (u_i - m y_i).(u_i - L y_i)
        u0, Ju = aff["U"]
        y0, Jy = aff["Y"]
        self.sector = []
        for i in range(n):
            sl = slice(i * d, (i + 1) * d)
            a0, Ja = u0[sl] - pc.m * y0[sl], Ju[sl] - pc.m * Jy[sl]
            b0, Jb = u0[sl] - pc.L * y0[sl], Ju[sl] - pc.L * Jy[sl]
            self.sector.append(_bilinear(a0, Ja, b0, Jb, np.eye(d)).scale(-2.0))

        # graph: sigma^2 |Zc|_R^2 - |V - Zc|_R^2
        Pc = np.kron(np.eye(n) - Pi, np.eye(p * d))
        z0, Jz = aff["Z"]
        v0, Jv = aff["V"]
        zc0, Jzc = Pc @ z0, Pc @ Jz
        dl0, Jdl = v0 - zc0, Jv - Jzc
        weights = [np.eye(p)]
        if self.enforce_cert_R:
            weights.append(np.atleast_2d(cert.R))
        self.graph = []
        for R in weights:
            Wt = np.kron(np.eye(n), np.kron(R, np.eye(d)))
            self.graph.append(_bilinear(zc0, Jzc, zc0, Jzc, Wt).scale(pc.sigma ** 2)
                              + _bilinear(dl0, Jdl, dl0, Jdl, Wt).scale(-1.0))
        self.graph_weights = weights

    # -- feasibility ---------------------------------------------------------
    def constraint_values(self, th) -> tuple[np.ndarray, np.ndarray]:
        return np.array([q(th) for q in self.sector]), np.array([q(th) for q in self.graph])

    def repair(self, th, sweeps: int = 20):
        """
        Shrink the signals toward the centre of each constraint set, in
        evaluation order, until every constraint holds. Returns None if that
        fails.
        """
        pc = self.pc
        c, rad = 0.5 * (pc.m + pc.L), 0.5 * (pc.L - pc.m)
        th = th.copy()
        last_v = max(i for i, nd in enumerate(self.order) if nd[0] == "v")
        for _ in range(sweeps):
            for idx, (kind, _) in enumerate(self.order):
                if kind == "u":
                    s = self.signals(th)
                    D = s["U"] - c * s["Y"]
                    lim = SAFETY * rad * np.linalg.norm(s["Y"], axis=1)
                    nrm = np.linalg.norm(D, axis=1)
                    scale = np.where(nrm > lim, lim / np.where(nrm > 0, nrm, 1.0), 1.0)
                    th = self.join(s["X"], c * s["Y"] + scale[:, None] * D, s["V"])
                elif idx == last_v:
                    s = self.signals(th)
                    n = self.n
                    Zc = np.einsum("ik,kpd->ipd", np.eye(n) - projector(n), s["Z"])
                    Dl = s["V"] - Zc
                    t = 1.0
                    for R in self.graph_weights:
                        num = np.einsum("ipd,pq,iqd->", Zc, R, Zc)
                        den = np.einsum("ipd,pq,iqd->", Dl, R, Dl)
                        if den > 0:
                            t = min(t, SAFETY * self.pc.sigma * np.sqrt(max(num, 0.0) / den))
                    th = self.join(s["X"], s["U"], Zc + t * Dl)
            sec, gr = self.constraint_values(th)
            slack = -REPAIR_TOL * (1.0 + float(th @ th))
            if sec.min(initial=0) >= slack and gr.min(initial=0) >= slack:
                return th
        return None

    def random_start(self, rng) -> np.ndarray:
        th = rng.standard_normal(self.dim)
        s = self.signals(np.zeros(self.dim))
        ys = np.sqrt(np.mean(s["Y"] ** 2)) + np.sqrt(np.mean(s["Z"] ** 2)) + 1e-12
        th[:self.nu + self.nw] *= self.pc.L * ys
        return th


def _solve_local(prob: GreedyStepProblem, th0):
    cons = [{"type": "ineq", "fun": q, "jac": q.grad} for q in prob.sector + prob.graph]
    if prob.free_initial:
        cons.append({"type": "eq", "fun": lambda t: prob.V_now(t) - 1.0, "jac": prob.V_now.grad})
    obj = prob.objective
    res = minimize(lambda t: -obj(t), th0, jac=lambda t: -obj.grad(t), method="SLSQP",
                   constraints=cons, options={"maxiter": 300, "ftol": 1e-13})
    return res.x


def _normalize_initial(prob, th):
    v = prob.V_now(th)
    return th / np.sqrt(v) if v > 0 else None


def greedy_step(prob: GreedyStepProblem, warm=None, seed=None, preferred=None, tie_tol: float = TIE_TOL):
    """
    Best increment over a warm start and `prob.restarts` random starts.

    Parameters
    ----------
    prob : GreedyStepProblem
    warm : ndarray, optional
        Decision vector from the previous step.
    seed : int or Generator, optional
    preferred : ndarray, optional
        Structured candidate (see `mode_policy`). It is kept, after repair,
        unless some local solution beats it by more than `tie_tol` (the state
        is normalized to V = 1, so this is relative). Otherwise it only
        serves as one more start.

    Returns
    -------
    theta : ndarray
        Decision vector (use ``prob.signals`` to unpack).
    increment : float
        V^{k+1} - rho^2 V^k at theta.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    zero = np.zeros(prob.dim)
    if not prob.free_initial and prob.V_now(zero) <= 0:
        return zero, 0.0
    starts = [] if warm is None else [np.asarray(warm, dtype=float)]
    pref, pref_val = None, -np.inf
    if preferred is not None:
        pref = prob.repair(np.asarray(preferred, dtype=float))
        if pref is not None and prob.free_initial:
            pref = _normalize_initial(prob, pref)
        if pref is not None:
            pref_val = prob.objective(pref)
            starts.insert(0, pref)
    starts += [prob.random_start(rng) for _ in range(prob.restarts)]
    best, best_val = None, -np.inf
    for th0 in starts:
        th0 = prob.repair(th0)
        if th0 is None:
            continue
        if prob.free_initial:
            th0 = _normalize_initial(prob, th0)
            if th0 is None:
                continue
        try:
            th = _solve_local(prob, th0)
        except (ValueError, np.linalg.LinAlgError):
            th = th0
        cands = [th0]
        if np.all(np.isfinite(th)):
            fixed = prob.repair(th)
            if fixed is not None and prob.free_initial:
                fixed = _normalize_initial(prob, fixed)
            if fixed is not None:
                cands.append(fixed)
        for c in cands:
            val = prob.objective(c)
            if val > best_val:
                best, best_val = c, val
    if best is None:
        if prob.free_initial:
            raise AdversaryInfeasibleError("no feasible initial state found")
        best = prob.repair(zero)
        if best is None:
            raise AdversaryInfeasibleError("even zero signals violate the constraints")
        best_val = prob.objective(best)
    if pref is not None and pref_val >= best_val - tie_tol:
        return pref, pref_val
    return best, best_val


# ---------------------------------------------------------------------------
# time-invariant worst-case mode

@dataclass
class WorstMode:
    """
    Constant scalar gains u = s y, v = ell (I - Pi) z acting on one
    disagreement direction, and the dominant closed-loop eigenpair.

    Complex gains are realized in two coordinates as rotation-scalings, so
    they need d >= 2.
    """

    s: complex
    ell: complex
    radius: float
    vector: np.ndarray

    @property
    def is_complex(self) -> bool:
        return bool(abs(np.imag(self.s)) + abs(np.imag(self.ell)) > 0 or np.any(np.imag(self.vector)))


def _closed_loop(r: Realization, s, ell):
    """Per-agent state matrices for stacked scalar gains s, ell (same shape)."""
    s = np.asarray(s, dtype=complex).ravel()
    ell = np.asarray(ell, dtype=complex).ravel()
    p = r.n_comm
    N = s.size
    Kmat = np.zeros((N, 1 + p, 1 + p), dtype=complex)
    Kmat[:, 0, 0] = 1 - s * r.D_yu[0, 0]
    Kmat[:, 0, 1:] = -ell[:, None] * r.D_yv[0][None, :]
    Kmat[:, 1:, 0] = -s[:, None] * r.D_zu[None, :, 0]
    Kmat[:, 1:, 1:] = np.eye(p)[None] - ell[:, None, None] * r.D_zv[None]
    rhs = np.broadcast_to(np.vstack([r.C_y, r.C_z]), (N, 1 + p, r.n_states))
    G = np.linalg.solve(Kmat, rhs)
    return (r.A[None] + s[:, None, None] * r.B_u[None, :, :1] @ G[:, :1]
            + ell[:, None, None] * (r.B_v[None] @ G[:, 1:]))


def worst_mode(r: Realization, pc: ProblemClass, complex_gains: bool = True, grid: int = 48) -> WorstMode:
    """
    Gains maximizing the spectral radius of the per-agent disagreement
    dynamics over the sector disk |s - (m+L)/2| <= (L-m)/2 and the graph
    disk |ell - 1| <= sigma.

    With complex gains the maximum sits on the product of the two circles
    (the log spectral radius is plurisubharmonic), which is scanned on a
    grid and polished by Nelder-Mead. Real gains range over the two
    intervals.
    """
    c, rad, sig = 0.5 * (pc.m + pc.L), 0.5 * (pc.L - pc.m), pc.sigma
    if complex_gains:
        to_gains = lambda t: (c + rad * np.exp(1j * t[0]), 1 + sig * np.exp(1j * t[1]))  # noqa: E731
        t1, t2 = np.meshgrid(np.linspace(0, 2 * np.pi, grid, endpoint=False),
                             np.linspace(0, 2 * np.pi, grid, endpoint=False))
    else:
        to_gains = lambda t: (c + rad * np.clip(t[0], -1, 1), 1 + sig * np.clip(t[1], -1, 1))  # noqa: E731
        t1, t2 = np.meshgrid(np.linspace(-1, 1, grid), np.linspace(-1, 1, grid))
    s, ell = to_gains((t1.ravel(), t2.ravel()))
    with np.errstate(all="ignore"):
        rad_all = np.abs(np.linalg.eigvals(_closed_loop(r, s, ell))).max(axis=1)
    rad_all = np.where(np.isfinite(rad_all), rad_all, -np.inf)
    i = int(np.argmax(rad_all))
    t0 = np.array([t1.ravel()[i], t2.ravel()[i]])

    def neg_radius(t):
        sv, lv = to_gains(t)
        with np.errstate(all="ignore"):
            val = np.abs(np.linalg.eigvals(_closed_loop(r, sv, lv)[0])).max()
        return -val if np.isfinite(val) else np.inf

    step = 2 * np.pi / grid if complex_gains else 2.0 / grid
    res = minimize(neg_radius, t0, method="Nelder-Mead",
                   options={"initial_simplex": [t0, t0 + [step, 0], t0 + [0, step]],
                            "xatol": 1e-10, "fatol": 1e-14})
    t = res.x if res.fun <= neg_radius(t0) else t0
    sv, lv = to_gains(t)
    M = _closed_loop(r, sv, lv)[0]
    w, E = np.linalg.eig(M)
    j = int(np.argmax(np.abs(w)))
    vec = E[:, j]
    if not complex_gains:
        vec = np.real(vec) if np.linalg.norm(np.real(vec)) >= np.linalg.norm(np.imag(vec)) else np.imag(vec)
        vec = vec / np.linalg.norm(vec)
    return WorstMode(s=complex(sv), ell=complex(lv), radius=float(np.abs(w[j])), vector=vec)


def _gain_matrix(g: complex, d: int) -> np.ndarray:
    """Real d x d matrix acting as multiplication by g on the first two coordinates."""
    G = np.real(g) * np.eye(d)
    if d >= 2:
        G[0, 1], G[1, 0] = -np.imag(g), np.imag(g)
    return G


def mode_state(mode: WorstMode, n: int, d: int) -> np.ndarray:
    """Error state (n, n_x, d) placing the mode on one disagreement direction."""
    nx = mode.vector.size
    E = np.zeros((nx, d))
    E[:, 0] = np.real(mode.vector)
    if d >= 2:
        E[:, 1] = np.imag(mode.vector)
    c = nullspace_basis(np.ones((1, n)))[:, 0]
    return c[:, None, None] * E[None]


def mode_policy(prob: GreedyStepProblem, mode: WorstMode, X=None) -> np.ndarray:
    """
    Decision vector applying the constant gains of `mode` at state X
    (defaults to the problem's state): u_i = S y_i and v_i = Lambda (z_i - z_bar)
    with S, Lambda the real matrices of s and ell.
    """
    r = prob.realization
    n, d, p = prob.n, prob.d, prob.p
    X = prob.x if X is None else np.asarray(X, dtype=float)
    S, Lam = _gain_matrix(mode.s, d), _gain_matrix(mode.ell, d)
    I = np.eye((1 + p) * d)

    def solve(Xpart, lam):
        top = np.hstack([np.kron(r.D_yu, S), np.kron(r.D_yv, lam)])
        bot = np.hstack([np.kron(r.D_zu, S), np.kron(r.D_zv, lam)])
        rhs = np.concatenate([np.einsum("ja,iad->ijd", r.C_y, Xpart), np.einsum("ja,iad->ijd", r.C_z, Xpart)], axis=1)
        sol = np.linalg.solve(I - np.vstack([top, bot]), rhs.reshape(n, -1).T).T
        return sol.reshape(n, 1 + p, d)

    xbar = X.mean(axis=0, keepdims=True)
    W = solve(np.broadcast_to(xbar, X.shape), np.zeros((d, d))) + solve(X - xbar, Lam)
    Y, Z = W[:, 0], W[:, 1:]
    Zc = Z - Z.mean(axis=0, keepdims=True)
    U = Y @ S.T
    V = np.einsum("ed,ipd->ipe", Lam, Zc)
    return prob.join(X, U, V)


@dataclass
class WorstCaseResult:
    trajectory: Trajectory
    V: np.ndarray
    increments: np.ndarray
    steps: list = field(default_factory=list)

    def steps_json(self, **kwargs) -> str:
        return json.dumps(self.steps, **kwargs)


def worst_trajectory(r: Realization, pc: ProblemClass, cert: Certificate, n: int, d: int, K: int,
                     seed: int = 0, restarts: int = 8, reconstruct: bool = False,
                     guided: bool = True) -> WorstCaseResult:
    """
    Greedy worst-case trajectory in error coordinates.

    The first step also optimizes the initial state with V^0 = 1. Each
    later step is solved on the state rescaled to V = 1 (the problem is
    homogeneous) and warm-started from the previous solution. The run stops
    early once V falls below 1e-20.

    With `guided`, every step also considers the constant-gain policy of
    `worst_mode` (complex gains when d >= 2), started from its eigenvector,
    and keeps it unless a local solve is better by more than TIE_TOL. A
    purely myopic adversary tends to collapse onto a single coordinate,
    where a rotating worst case is out of reach.
    """
    if K < 10:
        raise ValueError("K must be at least 10")
    rng = np.random.default_rng(seed)
    nx, p = r.n_states, r.n_comm
    xs, ys, us, zs, vs, Vs, incs, steps = [], [], [], [], [], [], [], []
    prob = GreedyStepProblem(r, pc, cert, np.zeros((n, nx, d)), restarts=restarts, free_initial=True)
    mode = worst_mode(r, pc, complex_gains=d >= 2) if guided else None
    pref = mode_policy(prob, mode, mode_state(mode, n, d)) if guided else None
    th, inc = greedy_step(prob, seed=rng, preferred=pref)
    s = prob.signals(th)
    scale = 1.0
    X = s["X"]
    Vs.append(lyapunov_value(cert, X, n))
    warm = None
    for k in range(K):
        if k > 0:
            vk = lyapunov_value(cert, X, n)
            if vk * scale ** 2 < V_FLOOR:
                break
            prob = GreedyStepProblem(r, pc, cert, X / np.sqrt(vk), restarts=restarts)
            scale *= np.sqrt(vk)
            warm_th = None
            if warm is not None:
                warm_th = warm / np.sqrt(vk)
            pref = mode_policy(prob, mode) if guided else None
            th, inc = greedy_step(prob, warm=warm_th, seed=rng, preferred=pref)
            s = prob.signals(th)
        sec, gr = prob.constraint_values(th)
        step = {"k": k, "increment": inc * scale ** 2, "relative_increment": inc / prob.V_now(th),
                "sector_min": float(sec.min()), "graph_min": float(gr.min()),
                "laplacian": None, "achieved_norm": None}
        if reconstruct:
            try:
                Lk, nrm = reconstruct_laplacian(s["Z"], s["V"], n, d, pc.sigma)
                step["laplacian"], step["achieved_norm"] = Lk.tolist(), nrm
            except NoLaplacianError as exc:
                step["error"] = str(exc)
        steps.append(step)
        xs.append(s["X"] * scale)
        ys.append(s["Y"] * scale)
        us.append(s["U"] * scale)
        zs.append(s["Z"] * scale)
        vs.append(s["V"] * scale)
        incs.append(inc * scale ** 2)
        X = s["Xn"]
        Vs.append(lyapunov_value(cert, X, n) * scale ** 2)
        warm = th
    xs.append(X * scale)
    zero_fp = FixedPoint(x=np.zeros((n, nx, d)), y=np.zeros((n, d)), z=np.zeros((n, p, d)),
                         u=np.zeros((n, d)), v=np.zeros((n, p, d)))
    traj = Trajectory(x=np.array(xs), y=np.array(ys), z=np.array(zs), u=np.array(us), v=np.array(vs),
                      fixed_point=zero_fp,
                      metadata={"algorithm": r.name, "params": dict(r.params), "n": n, "d": d, "K": K,
                                "seed": seed, "kind": "relaxed worst case",
                                "certificate": cert.to_dict()})
    return WorstCaseResult(trajectory=traj, V=np.array(Vs), increments=np.array(incs), steps=steps)


def reconstruct_laplacian(z_k, v_k, n: int, d: int, sigma: float | None = None, tol: float = 1e-8):
    """
    Balanced Laplacian closest to the complete-graph average, I - Pi, that
    maps z to v.

    Writes L = U K U^T with U an orthonormal basis of the complement of the
    ones vector, eliminates the linear constraint K (U^T z) = U^T v and
    minimizes ||I - K|| = ||I - Pi - L|| by a spectral-norm SDP.

    Parameters
    ----------
    z_k, v_k : ndarray
        Stacked signals with n rows (any trailing shape).
    n, d : int
    sigma : float, optional
        Only recorded; the caller compares the achieved norm against it.

    Returns
    -------
    L : ndarray, shape (n, n)
    achieved_norm : float

    Raises
    ------
    NoLaplacianError
        If 1^T v != 0 or no L satisfies L z = v.
    """
    Z = np.asarray(z_k, dtype=float).reshape(n, -1)
    Vv = np.asarray(v_k, dtype=float).reshape(n, -1)
    scale = max(1.0, np.abs(Z).max(), np.abs(Vv).max())
    if np.abs(Vv.sum(axis=0)).max() > tol * scale:
        raise NoLaplacianError("v does not sum to zero across agents")
    U = nullspace_basis(np.ones((1, n)))
    Zt, Vt = U.T @ Z, U.T @ Vv
    # rank decided on an absolute scale so that round-off in U^T z is ignored
    Ul, sv, Vr = np.linalg.svd(Zt, full_matrices=True)
    rank = int(np.sum(sv > tol * scale))
    K0 = Vt @ Vr[:rank].T @ np.diag(1.0 / sv[:rank]) @ Ul[:, :rank].T
    if np.abs(K0 @ Zt - Vt).max() > tol * scale:
        raise NoLaplacianError("no Laplacian maps z to v")
    m = n - 1
    Nb = Ul[:, rank:]
    M0 = np.eye(m) - K0
    Ms = []
    for a in range(m):
        for b in range(Nb.shape[1]):
            E = np.zeros((m, Nb.shape[1]))
            E[a, b] = -1.0
            Ms.append(E @ Nb.T)
    if Ms:
        _, y = min_spectral_norm(M0, Ms)
        K = np.eye(m) - (M0 + sum(yi * Mi for yi, Mi in zip(y, Ms)))
    else:
        K = K0
    L = U @ K @ U.T
    return L, float(np.linalg.norm(np.eye(n) - projector(n) - L, 2))


def replay_with_laplacians(r: Realization, x0, us, laplacians):
    """
    Re-run the error recursion with explicit Laplacians and the given
    gradient errors; returns the state sequence, shape (K+1, n, n_x, d).
    """
    X = np.array(x0, dtype=float)
    out = [X]
    for U, Lk in zip(us, laplacians):
        Z = np.einsum("ja,iad->ijd", r.C_z, X) + r.D_zu[None, :, 0, None] * U[:, None, :]
        V = np.zeros_like(Z)
        for j in range(r.n_comm):
            if np.any(r.D_zv[j]):
                Z[:, j] += np.einsum("l,ild->id", r.D_zv[j], V)
            V[:, j] = Lk @ Z[:, j]
        X = (np.einsum("ab,ibd->iad", r.A, X) + r.B_u[None, :, 0, None] * U[:, None, :]
             + np.einsum("ab,ibd->iad", r.B_v, V))
        out.append(X)
    return np.array(out)
