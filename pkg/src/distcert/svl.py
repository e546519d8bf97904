"""
Parameter design and analysis for the two-state SVL iteration

    v = L x,  y = x - delta v,  u = grad f(y),
    x+ = x + beta w - alpha u - gamma v,  w+ = w - v.

Given (kappa, sigma) the design picks the smallest rate rho for which some
beta places sigma^2 on the boundary of the achievable region, then sets
alpha = (1 - rho) / m, gamma = 1 + beta and delta = 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .algorithms import Realization, catalog
from .certify import Certificate, ProblemClass, assemble_lmis, verify_certificate
from .linalg import max_eigenvalue_symmetric

SING_TOL = 1e-14
KAPPA_UNITY = 1e-6  # below this kappa - 1 the consensus closed form is used


class SingularityError(ZeroDivisionError):
    """A denominator vanished; ``factor`` names it."""

    def __init__(self, factor: str, value: float):
        super().__init__(f"factor {factor} vanishes (value {value:.3g})")
        self.factor = factor
        self.value = value


class DesignInfeasibleError(ValueError):
    """No admissible cubic root; ``roots`` holds all three."""

    def __init__(self, message: str, roots=()):
        super().__init__(f"{message}; roots = {list(roots)}")
        self.roots = list(roots)


class NumericError(ArithmeticError):
    pass


class CertificateSignError(ValueError):
    """A sign condition of the closed-form certificate fails."""


def eta_of(rho: float, kappa: float) -> float:
    return 1 + rho - kappa * (1 - rho)


def _check(name: str, value: float, scale: float) -> float:
    if abs(value) <= SING_TOL * max(scale, 1.0):
        raise SingularityError(name, value)
    return value


def sigma_squared(beta: float, rho: float, kappa: float) -> float:
    """
    The achievable sigma^2 as a function of (beta, rho, kappa).

    Raises
    ------
    SingularityError
        If one of the three denominators is zero; the error names it.
    """
    b, r = float(beta), float(rho)
    e = eta_of(r, kappa)
    d1 = _check("beta - 1 + rho", b - 1 + r, abs(b) + 1)
    d2 = _check("2 rho^2 beta - (1 - rho^2) eta", 2 * r * r * b - (1 - r * r) * e, abs(b) + abs(e))
    a3 = (2 * r * r + e) * b
    d3 = _check("(1 + rho)(eta - 2 eta rho + 2 rho^2) - (2 rho^2 + eta) beta",
                (1 + r) * (e - 2 * e * r + 2 * r * r) - a3, abs(a3) + abs(e) + 1)
    return (r * r * (b - 1 + r * r) / d1 * (2 - e - 2 * b) / d2
            * ((2 * r * r + e) * b - (1 - r * r) * e) / d3)


def cubic_coeffs(rho: float, kappa: float) -> tuple[float, float, float, float]:
    """Coefficients (s0, s1, s2, s3) of the stationarity cubic of sigma^2 in beta."""
    r = float(rho)
    e = eta_of(r, kappa)
    w = 1 - r * r
    s0 = e * w ** 2 * (e - (3 - e) * e * r + 2 * (1 - e) * r ** 2 + 2 * r ** 3)
    s1 = -w * (e ** 3 * r + 4 * r ** 5 - 2 * e * r ** 2 * (2 * r ** 2 + r - 3)
               + e ** 2 * (4 * r ** 3 - 4 * r ** 2 - 6 * r + 3))
    s2 = 3 * e * (1 - r) ** 2 * (1 + r) * (2 * r ** 2 + e)
    s3 = (2 * r ** 2 + e) * (2 * r ** 3 - e)
    return s0, s1, s2, s3


def cubic_roots(s0: float, s1: float, s2: float, s3: float) -> list[complex]:
    """All roots of s0 + s1 x + s2 x^2 + s3 x^3 in closed form (Cardano / trigonometric)."""
    scale = max(abs(s0), abs(s1), abs(s2), abs(s3))
    if scale == 0:
        raise NumericError("all cubic coefficients vanish")
    if abs(s3) <= 1e-14 * scale:
        if abs(s2) <= 1e-14 * scale:
            return [complex(-s0 / s1)] if s1 else []
        disc = complex(s1 * s1 - 4 * s2 * s0)
        sq = disc ** 0.5
        return [(-s1 + sq) / (2 * s2), (-s1 - sq) / (2 * s2)]
    a, b, c = s2 / s3, s1 / s3, s0 / s3
    p = b - a * a / 3
    q = 2 * a ** 3 / 27 - a * b / 3 + c
    shift = -a / 3
    D = (q / 2) ** 2 + (p / 3) ** 3
    if D < 0:
        m = 2 * math.sqrt(-p / 3)
        arg = max(-1.0, min(1.0, 3 * q / (p * m)))
        th = math.acos(arg) / 3
        return [complex(m * math.cos(th - 2 * math.pi * k / 3) + shift) for k in range(3)]
    sq = math.sqrt(D)
    u = float(np.cbrt(-q / 2 + sq))
    v = float(np.cbrt(-q / 2 - sq))
    re = -(u + v) / 2 + shift
    im = math.sqrt(3) / 2 * (u - v)
    return [complex(u + v + shift), complex(re, im), complex(re, -im)]


def beta_region(beta: float, rho: float, kappa: float) -> float:
    """(2 beta - (1 - rho)(kappa + 1)) (beta - 1 + rho^2); admissible iff negative."""
    return (2 * beta - (1 - rho) * (kappa + 1)) * (beta - 1 + rho * rho)


def beta_interval(rho: float, kappa: float) -> tuple[float, float]:
    ends = sorted(((1 - rho) * (kappa + 1) / 2, 1 - rho * rho))
    return ends[0], ends[1]


def beta_star(rho: float, kappa: float) -> float:
    """
    The maximizer of sigma^2 over beta, selected as the unique real root of
    the stationarity cubic in the admissible open interval, polished with one
    Newton step.

    Raises
    ------
    DesignInfeasibleError
        When zero or several real roots are admissible.
    """
    coeffs = cubic_coeffs(rho, kappa)
    roots = cubic_roots(*coeffs)
    lo, hi = beta_interval(rho, kappa)
    admissible = []
    for z in roots:
        if abs(z.imag) > 1e-9 * max(1.0, abs(z.real)):
            continue
        x = _newton(coeffs, z.real)
        if lo < x < hi and beta_region(x, rho, kappa) < 0:
            admissible.append(x)
    if len(admissible) != 1:
        raise DesignInfeasibleError(
            f"{len(admissible)} admissible roots at rho={rho:.12g}, kappa={kappa:g}", roots)
    return admissible[0]


def _newton(coeffs, x: float) -> float:
    s0, s1, s2, s3 = coeffs
    f = s0 + x * (s1 + x * (s2 + x * s3))
    df = s1 + x * (2 * s2 + 3 * x * s3)
    if df == 0:
        return x
    step = x - f / df
    if not math.isfinite(step):
        raise NumericError(f"Newton polish diverged at beta={x}")
    return step


def sigma_hat(rho: float, kappa: float, h: float = 1e-7) -> float:
    """
    Largest sigma reachable at rate rho (0 at or below the gradient rate).

    Where the admissible beta interval collapses to a point the value is
    taken as the mean over rho +- h, since sigma_hat is continuous there.
    """
    if rho <= (kappa - 1) / (kappa + 1):
        return 0.0
    try:
        return math.sqrt(max(sigma_squared(beta_star(rho, kappa), rho, kappa), 0.0))
    except (DesignInfeasibleError, SingularityError):
        vals = [math.sqrt(max(sigma_squared(beta_star(r, kappa), r, kappa), 0.0))
                for r in (rho - h, rho + h)]
        return 0.5 * sum(vals)


@dataclass(frozen=True)
class SVLDesign:
    alpha: float
    beta: float
    gamma: float
    delta: float
    rho: float
    eta: float
    kappa: float
    sigma: float
    m: float = 1.0

    @property
    def L(self) -> float:
        return self.kappa * self.m

    def realization(self) -> Realization:
        return catalog("SVL", self.alpha, beta=self.beta, gamma=self.gamma, delta=self.delta)

    def sigma_residual(self) -> float:
        return abs(sigma_squared(self.beta, self.rho, self.kappa) - self.sigma ** 2)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("alpha", "beta", "gamma", "delta", "rho", "kappa", "sigma")}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _from_rho_beta(pc: ProblemClass, rho: float, beta: float) -> SVLDesign:
    return SVLDesign(alpha=(1 - rho) / pc.m, beta=beta, gamma=1 + beta, delta=1.0, rho=rho,
                     eta=eta_of(rho, pc.kappa), kappa=pc.kappa, sigma=pc.sigma, m=pc.m)


def design(pc: ProblemClass, eps: float = 1e-9) -> SVLDesign:
    """
    Compute SVL parameters for the class `pc` by bisection on rho.

    Parameters
    ----------
    pc : ProblemClass
    eps : float
        Terminal width of the rho bracket.

    Returns
    -------
    SVLDesign
        rho is the upper (achievable) end of the final bracket.

    Notes
    -----
    kappa = 1 (up to KAPPA_UNITY) and sigma = 0 use their closed forms. When
    the graph is so well connected that sigma_hat exceeds sigma for every
    rho above the gradient rate, rho is that gradient rate and beta is the
    root of sigma^2(beta) = sigma^2 on the side of beta_star nearest 1.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    kappa, sigma = pc.kappa, pc.sigma
    if kappa - 1 <= KAPPA_UNITY:
        return SVLDesign(alpha=1 / pc.L, beta=1.0, gamma=2.0, delta=1.0, rho=sigma,
                         eta=eta_of(sigma, kappa), kappa=kappa, sigma=sigma, m=pc.m)
    lb = (kappa - 1) / (kappa + 1)
    if sigma == 0:
        return SVLDesign(alpha=2 / (pc.L + pc.m), beta=1.0, gamma=2.0, delta=1.0, rho=lb,
                         eta=0.0, kappa=kappa, sigma=0.0, m=pc.m)

    lo, hi = 0.0, 1.0
    while hi - lo > eps:
        rho = 0.5 * (lo + hi)
        if sigma_hat(rho, kappa) < sigma:
            lo = rho
        else:
            hi = rho
    rho = hi
    if lo <= lb:
        # sigma is reachable arbitrarily close to the gradient rate
        rho = lb
        f = lambda b: sigma_squared(b, rho, kappa) - sigma ** 2  # noqa: E731
        b_lo, b_hi = _beta_max(rho, kappa, hi), 1.0 - 1e-15
        if f(b_hi) >= 0:
            # sigma^2 is below rounding at beta -> 1, the sigma = 0 design
            return _from_rho_beta(pc, rho, 1.0)
        return _from_rho_beta(pc, rho, brentq(f, b_lo, b_hi, xtol=1e-15))
    rho = _polish_rho(lo, hi, kappa, sigma)
    try:
        beta = beta_star(rho, kappa)
    except DesignInfeasibleError:
        rho = hi
        beta = beta_star(rho, kappa)
    return _from_rho_beta(pc, rho, beta)


def _polish_rho(lo: float, hi: float, kappa: float, sigma: float) -> float:
    """Root of sigma_hat(rho) = sigma inside the final bracket, so the
    design satisfies the sigma^2 equation to rounding error."""
    f = lambda r: sigma_hat(r, kappa) ** 2 - sigma ** 2  # noqa: E731
    try:
        flo, fhi = f(lo), f(hi)
    except (DesignInfeasibleError, SingularityError, NumericError):
        return hi
    if flo > 0 or fhi < 0:
        return hi
    if flo == 0:
        return lo
    return brentq(f, lo, hi, xtol=1e-16, maxiter=200)


def _beta_max(rho: float, kappa: float, rho_near: float) -> float:
    """beta_star at rho, falling back to the value at a nearby admissible rate."""
    try:
        return beta_star(rho, kappa)
    except (DesignInfeasibleError, SingularityError, NumericError):
        return beta_star(rho_near, kappa)


@dataclass
class ClosedFormCertificate:
    t1: float
    t2: float
    t3: float
    t4: float
    t5: float
    t6: float
    P11: float
    Q: np.ndarray
    R: float
    zeta: np.ndarray
    rho: float
    rank_one_error: float
    max_eig: float

    def as_certificate(self) -> Certificate:
        """Embed as a full certificate; the w-entry of P is inert and set to P11."""
        P = np.diag([self.P11, self.P11])
        R = np.array([[self.R]])
        margin = min(np.linalg.eigvalsh(P).min(), np.linalg.eigvalsh(self.Q).min())
        return Certificate(rho=self.rho, P=P, Q=self.Q.copy(), R=R, margin=float(margin))


def closed_form_certificate(pc: ProblemClass, d: SVLDesign) -> ClosedFormCertificate:
    """
    Explicit (P11, Q, R) for a designed SVL instance, with the rank-one
    factor zeta of the disagreement block.

    Raises
    ------
    SingularityError
        If beta = 1 - rho^2.
    CertificateSignError
        If a sign condition fails, which happens exactly when (beta, rho)
        leaves the admissible region.
    """
    m, L = pc.m, pc.L
    kappa = L / m
    rho, b, a = d.rho, d.beta, d.alpha
    e = eta_of(rho, kappa)
    w = 1 - rho * rho
    t1 = 2 * (1 - b) - e
    t2 = b - 1 + rho * rho
    if t2 == 0:
        raise SingularityError("t2 = beta - 1 + rho^2", t2)
    t3 = b * (e + 2 * rho * rho) - e * w
    t4 = 2 * b * rho * rho - e * w
    t5 = (1 - b - rho) * (b * (e + 2 * rho * rho) - w * (1 - kappa + 2 * kappa * rho))
    t6 = (2 - a * (L + m)) * w ** 2 - (2 * (1 - rho ** 4) - a * (L + m)) * b
    failures = []
    if not t3 > 0:
        failures.append("t3 > 0")
    if t4 == 0 or not t1 / t4 > 0:
        failures.append("t1/t4 > 0")
    if not t5 / t2 >= 0:
        failures.append("t5/t2 >= 0")
    if not t2 * t4 > 0:
        failures.append("t2*t4 > 0")
    if failures:
        raise CertificateSignError(
            f"sign conditions {failures} fail; (beta, rho) = ({b:.6g}, {rho:.6g}) "
            f"has beta-region value {beta_region(b, rho, kappa):.3g} (must be negative)")
    P11 = m * (L - m) / (rho * (1 - rho))
    Q = t3 / (a * a * rho * rho) * np.array([[1 + rho * rho * t1 / t4, -1.0], [-1.0, 1.0]])
    R = t5 / (a * a * t2)
    zeta = np.array([t6, -t2 * t3, a * t2 * (2 - a * (L + m)), b * (t3 - a * rho * rho * (L + m))]) / (a * rho)
    block = assemble_lmis(d.realization(), pc, rho).disagreement(Q, np.array([[R]]))
    err = float(np.abs(block + np.outer(zeta, zeta) / (t2 * t4)).max())
    return ClosedFormCertificate(t1=t1, t2=t2, t3=t3, t4=t4, t5=t5, t6=t6, P11=P11, Q=Q, R=R,
                                 zeta=zeta, rho=rho, rank_one_error=err,
                                 max_eig=max_eigenvalue_symmetric(block))


def verify_closed_form(pc: ProblemClass, d: SVLDesign):
    """Run the independent LMI check on the closed-form certificate."""
    return verify_certificate(d.realization(), pc, closed_form_certificate(pc, d).as_certificate())


def svl_step(x, w, laplacian, grad, d: SVLDesign):
    """
    One synchronous SVL round for all agents.

    Parameters
    ----------
    x, w : ndarray, shape (n, dim)
    laplacian : ndarray, shape (n, n)
    grad : callable
        Maps the (n, dim) array y to the stacked local gradients.
    d : SVLDesign or any object with alpha, beta, gamma, delta

    Returns
    -------
    x_next, w_next, y, u, v
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    v = np.asarray(laplacian) @ x
    y = x - d.delta * v
    u = np.asarray(grad(y), dtype=float)
    x_next = x + d.beta * w - d.alpha * u - d.gamma * v
    w_next = w - v
    return x_next, w_next, y, u, v


@dataclass(frozen=True)
class _Params:
    alpha: float
    beta: float
    gamma: float
    delta: float


def admm_equivalence_check(d: SVLDesign, seed: int = 0, K: int = 50, n: int = 3, dim: int = 1,
                           gamma: float | None = None) -> float:
    """
    Run SVL and the inexact ADMM recursion

        y^k = x^k - L^k x^k,  z^k = z^{k-1} + (beta/alpha)(x^k - y^k),
        x^{k+1} = y^k - alpha (grad f(y^k) + z^k),

    side by side from x^0 with w^0 = 0 and z^{-1} = 0, and return the largest
    deviation in x or in w^{k+1} + (alpha/beta) z^k. `gamma` overrides the
    SVL gamma (the two coincide only for gamma = 1 + beta).
    """
    if d.beta == 0:
        raise ValueError("the ADMM mapping needs beta != 0")
    from .simulate import random_laplacian, random_quadratics

    rng = np.random.default_rng(seed)
    funcs = random_quadratics(n, dim, d.m, d.L, rng)
    grad = lambda Y: np.stack([f.grad(Y[i]) for i, f in enumerate(funcs)])
    p = _Params(d.alpha, d.beta, d.gamma if gamma is None else gamma, d.delta)
    rate = d.beta / d.alpha
    x = rng.standard_normal((n, dim))
    xs, ws = x.copy(), np.zeros_like(x)
    xa, za = x.copy(), np.zeros_like(x)
    dev = 0.0
    for _ in range(K):
        Lk = random_laplacian(n, d.sigma, rng)
        xs, ws, _, _, _ = svl_step(xs, ws, Lk, grad, p)
        ya = xa - Lk @ xa
        za = za + rate * (xa - ya)
        xa = ya - d.alpha * (grad(ya) + za)
        dev = max(dev, float(np.abs(xs - xa).max()), float(np.abs(ws + za / rate).max()))
    return dev
