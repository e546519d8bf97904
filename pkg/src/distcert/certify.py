"""
Worst-case rate certificates from two small linear matrix inequalities.

For a candidate rate rho the algorithm is certified when there are P > 0,
Q > 0 and R >= 0 such that the consensus LMI (in P) and the disagreement
LMI (in Q and R) are negative semidefinite. Both are monotone in rho, so the
smallest certifiable rate is found by bisection.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .algorithms import Realization, fixed_point_diagnostic
from .linalg import max_eigenvalue_symmetric, min_eigenvalue_symmetric, nullspace_basis, projector
from .sdp import MatrixVariable, SolverError, lmi_margin

log = logging.getLogger(__name__)

FEAS_TOL = 1e-7
DEFINITE_TOL = 1e-9
R_PROJECT_TOL = 1e-10
TRACE_PER_STATE = 1e3
# alternative normalizations tried when cvxopt breaks down numerically
TRACE_RETRY = (1e2, 1e4)


class InvalidAlgorithmError(ValueError):
    """The realization has no fixed point at the optimum."""


class UncertifiableError(RuntimeError):
    """No rate up to the bisection ceiling could be certified."""


@dataclass(frozen=True)
class ProblemClass:
    """Sector bounds 0 < m <= L on the gradients and graph bound sigma in [0, 1)."""

    m: float
    L: float
    sigma: float

    def __post_init__(self):
        if not (self.m > 0 and self.L >= self.m):
            raise ValueError(f"need 0 < m <= L, got m={self.m}, L={self.L}")
        if not 0 <= self.sigma < 1:
            raise ValueError(f"sigma must lie in [0, 1), got {self.sigma}")

    @classmethod
    def from_kappa(cls, kappa: float, sigma: float) -> "ProblemClass":
        return cls(m=1.0, L=float(kappa), sigma=float(sigma))

    @property
    def kappa(self) -> float:
        return self.L / self.m

    def strict(self) -> "ProblemClass":
        """Copy with L nudged above m when the two coincide."""
        if self.L > self.m:
            return self
        return ProblemClass(self.m, self.L * (1 + 1e-9), self.sigma)


def build_m0(pc: ProblemClass) -> np.ndarray:
    m, L = pc.m, pc.L
    return np.array([[-2 * m * L, L + m], [L + m, -2.0]])


def build_m1(pc: ProblemClass) -> np.ndarray:
    return np.array([[pc.sigma ** 2 - 1, 1.0], [1.0, -1.0]])


def invariant_basis(r: Realization) -> np.ndarray:
    """Columns spanning the nullspace of [F_x F_u] (identity when there is no invariant)."""
    if r.n_invariants == 0:
        return np.eye(r.n_states + 1)
    return nullspace_basis(np.hstack([r.F_x, r.F_u]))


@dataclass(frozen=True)
class LMIPair:
    """
    The two certificate LMIs at a fixed rate, as affine maps of the
    Lyapunov matrices. ``m0_scale`` multiplies the sector multiplier; the
    certificate conditions are invariant under rescaling it together with
    (P, Q, R).
    """

    realization: Realization
    pc: ProblemClass
    rho: float
    psi: np.ndarray

    @property
    def consensus_size(self) -> int:
        return self.psi.shape[1]

    @property
    def disagreement_size(self) -> int:
        r = self.realization
        return r.n_states + 1 + r.n_comm

    def consensus(self, P, m0_scale: float = 1.0) -> np.ndarray:
        r = self.realization
        nx = r.n_states
        G = np.block([
            [r.A, r.B_u],
            [np.eye(nx), np.zeros((nx, 1))],
            [r.C_y, r.D_yu],
            [np.zeros((1, nx)), np.eye(1)],
        ]) @ self.psi
        W = block_diag(P, -self.rho ** 2 * P, m0_scale * build_m0(self.pc))
        out = G.T @ W @ G
        return 0.5 * (out + out.T)

    def disagreement(self, Q, R, m0_scale: float = 1.0) -> np.ndarray:
        r = self.realization
        nx, p = r.n_states, r.n_comm
        G = np.block([
            [r.A, r.B_u, r.B_v],
            [np.eye(nx), np.zeros((nx, 1 + p))],
            [r.C_y, r.D_yu, r.D_yv],
            [np.zeros((1, nx)), np.eye(1), np.zeros((1, p))],
            [r.C_z, r.D_zu, r.D_zv],
            [np.zeros((p, nx + 1)), np.eye(p)],
        ])
        R = np.atleast_2d(R)
        W = block_diag(Q, -self.rho ** 2 * Q, m0_scale * build_m0(self.pc), np.kron(build_m1(self.pc), R))
        out = G.T @ W @ G
        return 0.5 * (out + out.T)


def assemble_lmis(r: Realization, pc: ProblemClass, rho: float) -> LMIPair:
    if rho <= 0:
        raise ValueError("rho must be positive")
    reason = fixed_point_diagnostic(r)
    if reason is not None:
        raise InvalidAlgorithmError(f"{r.name}: no fixed point at the optimum: {reason}")
    return LMIPair(realization=r, pc=pc.strict(), rho=float(rho), psi=invariant_basis(r))


@dataclass
class Certificate:
    rho: float
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    margin: float
    margins: dict = field(default_factory=dict)

    def transform(self, n: int) -> np.ndarray:
        """T = Pi (x) P + (I - Pi) (x) Q for n agents."""
        Pi = projector(n)
        return np.kron(Pi, self.P) + np.kron(np.eye(n) - Pi, self.Q)

    def condition_number(self, n: int) -> float:
        eigs = np.linalg.eigvalsh(self.P)
        if n > 1:
            eigs = np.concatenate([eigs, np.linalg.eigvalsh(self.Q)])
        return float(eigs.max() / eigs.min())

    def bound_constant(self, V0: float, n: int) -> float:
        """The constant c in ||x_i^k - x_i*|| <= c rho^k, namely sqrt(cond(T) V0)."""
        return math.sqrt(self.condition_number(n) * V0)

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "margins": dict(self.margins, margin=self.margin),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "Certificate":
        margins = dict(data.get("margins", {}))
        margin = float(margins.pop("margin", 0.0))
        return cls(rho=float(data["rho"]), P=np.array(data["P"], dtype=float),
                   Q=np.array(data["Q"], dtype=float), R=np.atleast_2d(np.array(data["R"], dtype=float)),
                   margin=margin, margins=margins)


@dataclass
class CertificateReport:
    consensus_max_eig: float
    disagreement_max_eig: float
    P_min_eig: float
    Q_min_eig: float
    R_min_eig: float
    R_projected: bool = False

    @property
    def passed(self) -> bool:
        return (self.consensus_max_eig <= FEAS_TOL and self.disagreement_max_eig <= FEAS_TOL
                and self.P_min_eig >= DEFINITE_TOL and self.Q_min_eig >= DEFINITE_TOL
                and self.R_min_eig >= -R_PROJECT_TOL)


def _project_psd(R: np.ndarray) -> tuple[np.ndarray, bool]:
    w, V = np.linalg.eigh(0.5 * (R + R.T))
    if w.min() >= 0:
        return R, False
    if w.min() < -R_PROJECT_TOL:
        return R, False
    return (V * np.clip(w, 0, None)) @ V.T, True


def verify_certificate(r: Realization, pc: ProblemClass, cert: Certificate) -> CertificateReport:
    """Evaluate both LMIs at the certificate's rate and report their extreme eigenvalues."""
    lmis = assemble_lmis(r, pc, cert.rho)
    R = np.atleast_2d(cert.R)
    return CertificateReport(
        consensus_max_eig=max_eigenvalue_symmetric(lmis.consensus(cert.P)),
        disagreement_max_eig=max_eigenvalue_symmetric(lmis.disagreement(cert.Q, R)),
        P_min_eig=min_eigenvalue_symmetric(cert.P),
        Q_min_eig=min_eigenvalue_symmetric(cert.Q),
        R_min_eig=min_eigenvalue_symmetric(R),
        R_projected=bool(cert.margins.get("R_projected", False)),
    )


def _margin(operator, variables, nx):
    # the LMIs are homogeneous, so the trace bound only rescales the problem;
    # a different scale usually gets past an interior-point breakdown
    for i, scale in enumerate((TRACE_PER_STATE,) + TRACE_RETRY):
        try:
            return lmi_margin(operator, variables, scale * nx)
        except SolverError:
            if i == len(TRACE_RETRY):
                raise


def _solve_consensus(lmis: LMIPair, eps: float):
    nx = lmis.realization.n_states
    s = np.linalg.norm(build_m0(lmis.pc), 2)
    res = _margin(lambda P: lmis.consensus(P, 1.0 / s), [MatrixVariable("P", nx, eps / s)], nx)
    if res.values is None:
        raise SolverError(f"consensus LMI: solver returned {res.status}")
    P = s * res.values["P"]
    P = 0.5 * (P + P.T)
    worst = max_eigenvalue_symmetric(lmis.consensus(P))
    if res.t <= 0 and worst <= FEAS_TOL and min_eigenvalue_symmetric(P) >= DEFINITE_TOL:
        return P
    return _undecided(res, "consensus")


def _solve_disagreement(lmis: LMIPair, eps: float):
    r = lmis.realization
    nx, p = r.n_states, r.n_comm
    s = np.linalg.norm(build_m0(lmis.pc), 2)
    res = _margin(lambda Q, R: lmis.disagreement(Q, R, 1.0 / s),
                  [MatrixVariable("Q", nx, eps / s), MatrixVariable("R", p, 0.0)], nx)
    if res.values is None:
        raise SolverError(f"disagreement LMI: solver returned {res.status}")
    Q = s * res.values["Q"]
    Q = 0.5 * (Q + Q.T)
    R, projected = _project_psd(s * res.values["R"])
    worst = max_eigenvalue_symmetric(lmis.disagreement(Q, R))
    if (res.t <= 0 and worst <= FEAS_TOL and min_eigenvalue_symmetric(Q) >= DEFINITE_TOL
            and min_eigenvalue_symmetric(R) >= -R_PROJECT_TOL):
        return Q, R, projected
    return _undecided(res, "disagreement")


def _undecided(res, which):
    if res.status == "optimal" or (res.t is not None and res.t > 0) or \
            (res.dual_bound is not None and res.dual_bound > 0):
        return None
    raise SolverError(f"{which} LMI: solver status {res.status}, t={res.t}")


def _certificate(lmis: LMIPair, P, Q, R, projected) -> Certificate:
    margins = {
        "P_min_eig": min_eigenvalue_symmetric(P),
        "Q_min_eig": min_eigenvalue_symmetric(Q),
        "R_min_eig": min_eigenvalue_symmetric(R),
        "consensus_max_eig": max_eigenvalue_symmetric(lmis.consensus(P)),
        "disagreement_max_eig": max_eigenvalue_symmetric(lmis.disagreement(Q, R)),
        "R_projected": projected,
    }
    return Certificate(rho=lmis.rho, P=P, Q=Q, R=R,
                       margin=min(margins["P_min_eig"], margins["Q_min_eig"]), margins=margins)


def feasible(r: Realization, pc: ProblemClass, rho: float, eps: float = 1e-6) -> Certificate | None:
    """
    Look for (P, Q, R) certifying rate `rho`.

    Returns a verified Certificate, or None when the LMIs are infeasible.
    Raises SolverError when the solver fails without reaching a verdict.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    lmis = assemble_lmis(r, pc, rho)
    P = _solve_consensus(lmis, eps)
    if P is None:
        return None
    out = _solve_disagreement(lmis, eps)
    if out is None:
        return None
    return _certificate(lmis, P, *out)


def certify_rate(r: Realization, pc: ProblemClass, tol: float = 1e-6, *, eps: float = 1e-6,
                 rho_lo: float = 0.0, rho_hi: float = 2.0) -> tuple[float, Certificate]:
    """
    Smallest certifiable rate, to within `tol`, by bisection on (rho_lo, rho_hi].

    The two LMIs are tracked separately: a P (or Q, R) that works at some rate
    keeps working at every larger rate, so each side is re-solved only below
    the smallest rate where it already succeeded.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    base = assemble_lmis(r, pc, rho_hi)
    pc = base.pc

    def attempt(solve, rho):
        try:
            return solve(LMIPair(r, pc, rho, base.psi), eps)
        except SolverError as exc:
            log.debug("treating solver failure at rho=%.6g as infeasible: %s", rho, exc)
            return None

    P = attempt(_solve_consensus, rho_hi)
    QR = attempt(_solve_disagreement, rho_hi) if P is not None else None
    if P is None or QR is None:
        raise UncertifiableError(f"{r.name}: no certificate for rho <= {rho_hi} "
                                 f"(kappa={pc.kappa:g}, sigma={pc.sigma:g})")
    best_a, best_b = (rho_hi, P), (rho_hi, QR)
    lo, hi = rho_lo, rho_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid < best_a[0]:
            P = attempt(_solve_consensus, mid)
            if P is None:
                lo = mid
                continue
            best_a = (mid, P)
        if mid < best_b[0]:
            QR = attempt(_solve_disagreement, mid)
            if QR is None:
                lo = mid
                continue
            best_b = (mid, QR)
        hi = mid
    lmis = LMIPair(r, pc, hi, base.psi)
    cert = _certificate(lmis, best_a[1], *best_b[1])
    return hi, cert


def lyapunov_value(cert: Certificate, x_tilde, n: int) -> float:
    """
    Evaluate x~^T (Pi (x) P + (I - Pi) (x) Q) x~.

    `x_tilde` is either the stacked vector of length n * n_x * d or an array
    of shape (n, n_x, d) / (n, n_x).
    """
    nx = cert.P.shape[0]
    X = np.asarray(x_tilde, dtype=float)
    if X.size % (n * nx):
        raise ValueError(f"x_tilde has {X.size} entries, not a multiple of n*n_x={n * nx}")
    X = X.reshape(n, nx, -1)
    xbar = X.mean(axis=0)
    dev = X - xbar
    value = n * np.einsum("ad,ab,bd->", xbar, cert.P, xbar) + np.einsum("iad,ab,ibd->", dev, cert.Q, dev)
    return float(value)
