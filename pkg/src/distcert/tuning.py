"""
Derivative-free tuning of stepsize (and overrelaxation) against the
certified rate, and rate curves over a grid of graph gaps.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .algorithms import CatalogError, catalog, canonical_name
from .certify import ProblemClass, UncertifiableError, certify_rate
from .sdp import SolverError
from .svl import design

log = logging.getLogger(__name__)

PENALTY = 2.0
EVAL_TOL = 1e-4
FINAL_TOL = 1e-6
WINDOW = 0.05
CSV_HEADER = ["algorithm", "kappa", "sigma", "rho", "alpha", "mu", "status"]


class UncertifiableEverywhereError(RuntimeError):
    """Every sampled parameter value was uncertifiable."""


@dataclass
class TuneResult:
    alpha: float
    mu: float | None
    rho: float
    evaluations: int
    status: str = "ok"


class RateObjective:
    """
    Cached map (alpha, mu) -> certified rate; uncertifiable points and solver
    failures score PENALTY.

    Search evaluations bisect to `tol` inside a bracket just above the best
    rate seen so far (falling back to the full bracket), and `refine`
    re-certifies chosen points at `final_tol`.
    """

    def __init__(self, family: str, pc: ProblemClass, tol: float = EVAL_TOL,
                 final_tol: float = FINAL_TOL, **fixed):
        self.family = canonical_name(family)
        self.pc = pc
        self.tol = tol
        self.final_tol = final_tol
        self.fixed = fixed
        self.cache: dict[tuple[float, float], float] = {}
        self.fine: dict[tuple[float, float], float] = {}
        self.rho_lo = max(0.0, _lower_bound(pc) - 1e-6)
        self.best_rho = PENALTY

    def __call__(self, alpha: float, mu: float = 1.0) -> float:
        key = (float(alpha), float(mu))
        if key not in self.cache:
            val = self._evaluate(*key, self.tol)
            self.cache[key] = val
            self.best_rho = min(self.best_rho, val)
        return self.cache[key]

    def _evaluate(self, alpha, mu, tol, guided=True):
        if not (alpha > 0 and math.isfinite(alpha) and math.isfinite(mu)):
            return PENALTY
        try:
            r = catalog(self.family, alpha, mu, m=self.pc.m, L=self.pc.L, **self.fixed)
        except CatalogError:
            return PENALTY
        lo = self.rho_lo
        if guided and self.best_rho < PENALTY:
            hi = min(PENALTY, self.best_rho + WINDOW)
            try:
                return certify_rate(r, self.pc, tol, rho_lo=lo, rho_hi=hi)[0]
            except (UncertifiableError, SolverError):
                lo = hi
        try:
            return certify_rate(r, self.pc, tol, rho_lo=lo)[0]
        except (UncertifiableError, SolverError):
            return PENALTY

    def refine(self, points) -> tuple[float, float, float]:
        """Best (alpha, mu, rho) among `points` at the final tolerance."""
        best = None
        for a, mu in points:
            key = (float(a), float(mu))
            if key not in self.fine:
                self.fine[key] = self._evaluate(*key, self.final_tol, guided=False)
            if best is None or self.fine[key] < best[2]:
                best = (key[0], key[1], self.fine[key])
        return best

    def leaders(self, k: int = 3) -> list[tuple[float, float]]:
        return [key for key, _ in sorted(self.cache.items(), key=lambda kv: kv[1])[:k]]

    @property
    def evaluations(self) -> int:
        return len(self.cache)


def _lower_bound(pc: ProblemClass) -> float:
    return max((pc.kappa - 1) / (pc.kappa + 1), pc.sigma)


def default_bracket(pc: ProblemClass) -> tuple[float, float]:
    return 1e-3 / pc.L, 4.0 / pc.m


def _svl_fixed(fixed: dict) -> dict:
    return {"beta": fixed.get("beta", 1.0), "gamma": fixed.get("gamma", 2.0), "delta": fixed.get("delta", 1.0)}


def tune_alpha(family: str, pc: ProblemClass, mu: float = 1.0, bracket: tuple[float, float] | None = None,
               grid: int = 16, objective: RateObjective | None = None, **fixed) -> TuneResult:
    """
    Minimize alpha -> certified rate over `bracket` with mu held fixed.

    A log-spaced grid scan locates the basin, then bounded Brent refines it
    until the step is below 1e-5 of the bracket width. SVL is tuned with
    (beta, gamma, delta) from `fixed`, defaulting to (1, 2, 1).

    Raises
    ------
    UncertifiableEverywhereError
    """
    lo, hi = bracket or default_bracket(pc)
    if not 0 < lo < hi:
        raise ValueError("alpha bracket must be positive and increasing")
    if canonical_name(family) == "SVL":
        fixed = _svl_fixed(fixed)
    f = objective or RateObjective(family, pc, **fixed)
    alphas = np.geomspace(lo, hi, grid)
    vals = np.array([f(a, mu) for a in alphas])
    if np.all(vals >= PENALTY):
        raise UncertifiableEverywhereError(f"{family}: uncertifiable for every sampled alpha in [{lo:g}, {hi:g}]")
    i = int(np.argmin(vals))
    a_lo, a_hi = alphas[max(i - 1, 0)], alphas[min(i + 1, grid - 1)]
    res = minimize_scalar(lambda a: f(a, mu), bounds=(a_lo, a_hi), method="bounded",
                          options={"xatol": 1e-5 * (hi - lo)})
    f(float(res.x), mu)
    alpha, mu, rho = f.refine(sorted((k for k in f.cache if k[1] == mu), key=f.cache.get)[:3])
    return TuneResult(alpha=alpha, mu=mu, rho=rho, evaluations=f.evaluations)


def tune_alpha_mu(family: str, pc: ProblemClass, init_simplex=None, restarts: int = 3, seed: int = 0,
                  maxfev: int = 80, objective: RateObjective | None = None) -> TuneResult:
    """
    Nelder-Mead on (log alpha, mu) against the certified rate, best of
    several starts.

    The first start is the mu = 1 Brent optimum, so the result is never
    worse than tuning alpha alone. The next start is (2/(L+m), 1) and the
    rest are random perturbations of it; each initial simplex spreads the
    start by 30 percent in both coordinates. SVL has no free parameters
    and returns its designed values.

    Raises
    ------
    ValueError
        For a degenerate `init_simplex`.
    UncertifiableEverywhereError
    """
    if canonical_name(family) == "SVL":
        d = design(pc)
        return TuneResult(alpha=d.alpha, mu=None, rho=d.rho, evaluations=0)
    f = objective or RateObjective(family, pc)
    obj = lambda th: f(math.exp(th[0]), th[1])  # noqa: E731
    simplices = []
    if init_simplex is not None:
        S = np.asarray(init_simplex, dtype=float)
        if S.shape != (3, 2) or np.any(S[:, 0] <= 0):
            raise ValueError("init_simplex must be three points (alpha, mu) with alpha > 0")
        if abs(np.linalg.det(S[1:] - S[0])) < 1e-14:
            raise ValueError("degenerate initial simplex")
        S = np.column_stack([np.log(S[:, 0]), S[:, 1]])
        simplices.append(S)
    else:
        try:
            base = tune_alpha(family, pc, 1.0, objective=f)
            starts = [(base.alpha, 1.0)]
        except UncertifiableEverywhereError:
            starts = []
        rng = np.random.default_rng(seed)
        a0 = 2.0 / (pc.L + pc.m)
        starts.append((a0, 1.0))
        while len(starts) < restarts:
            starts.append((a0 * math.exp(rng.uniform(-1, 1)), rng.uniform(0.5, 1.5)))
        for a, mu in starts[:max(restarts, 1)]:
            th = np.array([math.log(a), mu])
            simplices.append(np.array([th, th + [math.log(1.3), 0], th + [0, 0.3 * mu]]))
    for S in simplices:
        minimize(obj, S[0], method="Nelder-Mead",
                 options={"initial_simplex": S, "xatol": 1e-5, "fatol": 1e-7, "maxfev": maxfev})
    if not f.cache or f.best_rho >= PENALTY:
        raise UncertifiableEverywhereError(f"{family}: no certifiable (alpha, mu) found")
    alpha, mu, rho = f.refine(f.leaders() + list(f.fine))
    return TuneResult(alpha=alpha, mu=mu, rho=rho, evaluations=f.evaluations)


@dataclass
class RateCurve:
    algorithm: str
    kappa: float
    points: list = field(default_factory=list)  # (sigma, rho, alpha, mu, status)

    def rows(self):
        for s, rho, a, mu, status in self.points:
            yield [self.algorithm, _fmt(self.kappa), _fmt(s), _fmt(rho), _fmt(a), _fmt(mu), status]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.10g}"


def curves_to_csv(curves: list[RateCurve], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in curves:
        for row in c.rows():
            w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _curve_point(args):
    family, m, L, sigma, tune_mu = args
    pc = ProblemClass(m, L, sigma)
    try:
        if canonical_name(family) == "SVL":
            d = design(pc)
            return sigma, d.rho, d.alpha, None, "ok"
        res = tune_alpha_mu(family, pc) if tune_mu else tune_alpha(family, pc, 1.0)
        return sigma, res.rho, res.alpha, res.mu, "ok"
    except UncertifiableEverywhereError:
        return sigma, math.nan, math.nan, None, "uncertifiable"
    except Exception as exc:  # keep the sweep going
        log.warning("%s at sigma=%g failed: %s", family, sigma, exc)
        return sigma, math.nan, math.nan, None, f"error:{type(exc).__name__}"


def rate_curve(families: list[str], kappa: float, sigma_grid, tune_mu: bool = True,
               workers: int = 1, m: float = 1.0) -> list[RateCurve]:
    """
    Tuned certified rate per family and sigma; SVL uses its design.

    Failures at individual points are recorded in the status column rather
    than aborting the sweep.
    """
    sigmas = [float(s) for s in sigma_grid]
    if any(not 0 <= s < 1 for s in sigmas):
        raise ValueError("sigma values must lie in [0, 1)")
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError("sigma grid must be strictly increasing")
    names = [canonical_name(f) for f in families]
    jobs = [(f, m, kappa * m, s, tune_mu) for f in names for s in sigmas]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_curve_point, jobs))
    else:
        results = [_curve_point(j) for j in jobs]
    curves, it = [], iter(results)
    for f in names:
        curves.append(RateCurve(f, kappa, [next(it) for _ in sigmas]))
    return curves
