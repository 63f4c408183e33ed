"""
Machine checks of rate inequalities along concrete trajectories.

Every check produces a CheckResult; a CertificationReport collects them and
serializes to the JSON contract {name, statement, tolerance, max_violation, pass}.
Wherever the s-norm enters, the solver's primal value is used as an upper
bound and its dual value as a lower bound.
"""
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from loguru import logger

from app.config import settings
from app.errors import CertificationFailed, DimensionMismatch, InvalidParameter, NotCertified
from app.lab.constructions import BakersParams, BlockConstruction, bakers_oracle, block_analytic_norms
from app.lab.hilbert import (SubspaceFamily, as_vector, family_hash, membership_residual,
                              sum_of_complements_is_full, vector_norm)
from app.lab.iterates import Policy, Trajectory, run
from app.lab.quantities import friedrichs_number, nu_decomposition, s_norm


@dataclass
class CheckResult:
    name: str
    statement: str
    tolerance: float
    max_violation: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "statement": self.statement,
            "tolerance": self.tolerance,
            "max_violation": self.max_violation,
            "pass": self.passed,
            **self.details,
        }


def _check(name: str, statement: str, tolerance: float, violations, **details) -> CheckResult:
    """Pass iff every violation is <= tolerance; `worst_step` is the argmax position."""
    v = np.asarray(violations, dtype=float)
    if v.size == 0:
        return CheckResult(name, statement, tolerance, 0.0, True, details)
    worst = int(np.argmax(v))
    result = CheckResult(name, statement, tolerance, float(v[worst]), bool(v[worst] <= tolerance),
                         {"worst_step": worst, **details})
    if not result.passed:
        logger.warning(f"⚠️ check {name} failed: violation {result.max_violation:.3e} at step {worst}")
    return result


@dataclass
class CertificationReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def extend(self, other: "CertificationReport | Sequence[CheckResult]") -> "CertificationReport":
        self.checks.extend(other.checks if isinstance(other, CertificationReport) else other)
        return self

    def raise_if_failed(self) -> None:
        if not self.passed:
            raise CertificationFailed(self.failed)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def _certified_s(F: SubspaceFamily, y, tol: float | None = None):
    result = s_norm(F, y, tol=settings.LEDGER_SNORM_TOL if tol is None else tol)
    if not result.certified:
        raise NotCertified(result)
    return result


# ========== PER-STEP IDENTITIES ==========

def step_identities(t: Trajectory, F: SubspaceFamily | None = None, tol: float | None = None) -> CertificationReport:
    """Monotone norms, Pythagoras per step, and the one-sweep identity for cyclic runs."""
    tol = settings.PYTHAGORAS_RTOL if tol is None else tol
    if F is not None:
        if t.K != F.K:
            raise InvalidParameter(f"trajectory has K = {t.K}, family has K = {F.K}")
        if t.iterates is not None and t.iterates.shape[1] != F.ambient_dim:
            raise DimensionMismatch("trajectory iterates do not live in the family's space")
        if t.metadata.get("family_hash") not in (None, family_hash(F)):
            raise InvalidParameter("trajectory was produced on a different family")

    norms = t.norms
    scale = max(float(norms[0]), np.finfo(float).tiny)
    increase = np.concatenate([[0.0], np.maximum(np.diff(norms), 0.0)]) / scale
    report = CertificationReport([
        _check("monotone_norms", "|x_{n+1}| <= |x_n|", tol, increase),
    ])

    before = np.maximum(norms[:-1], np.finfo(float).tiny)
    # ratios keep the identity meaningful near underflow
    defect = np.abs((norms[1:] / before) ** 2 + (t.step_dists / before) ** 2 - 1.0)
    defect[norms[:-1] == 0.0] = 0.0
    report.extend([_check("pythagoras", "|x_{n+1}|^2 + dist(x_n, L_i(n))^2 = |x_n|^2", tol, defect)])

    if t.policy == "cyclic" and F is not None and t.iterates is not None:
        sweeps = t.per_T_iterates
        violations = []
        for c in range(len(sweeps) - 1):
            y = sweeps[c]
            size = vector_norm(y)
            if size == 0.0:
                break
            nu = nu_decomposition(F, y)
            after = vector_norm(sweeps[c + 1]) / size
            violations.append(abs(after ** 2 - (1.0 - nu.nu ** 2)))
        report.extend([_check("one_sweep_identity", "|Ty|^2 = |y|^2 (1 - nu(y)^2)", tol, violations)])
    return report


# ========== RECURSIVE DECAY ==========

@dataclass
class DecayCheck:
    hypothesis: bool
    conclusion: bool
    first_hypothesis_failure: int | None
    first_conclusion_failure: int | None

    @property
    def passed(self) -> bool:
        return self.hypothesis and self.conclusion


def recursive_decay_check(c_seq: Sequence[float], A: float, rtol: float = 1e-12) -> DecayCheck:
    """Hypothesis c_1 <= A, c_n >= 0, c_{n+1} <= c_n (1 - c_n/A); conclusion c_n <= A/n.

    `c_seq[0]` is c_1.
    """
    if A <= 0:
        raise InvalidParameter("A must be positive")
    c = np.asarray(c_seq, dtype=float)
    if c.size == 0:
        return DecayCheck(True, True, None, None)
    n = np.arange(1, c.size + 1)

    bad = np.zeros(c.size, dtype=bool)
    bad[0] = c[0] > A * (1 + rtol)
    bad |= c < 0
    bad[1:] |= c[1:] > c[:-1] * (1 - c[:-1] / A) + rtol * A
    below = c <= (A / n) * (1 + rtol)

    hyp_fail = int(np.argmax(bad)) + 1 if bad.any() else None
    con_fail = int(np.argmin(below)) + 1 if not below.all() else None
    return DecayCheck(hyp_fail is None, con_fail is None, hyp_fail, con_fail)


# ========== CYCLIC RATE LEDGER ==========

@dataclass
class CyclicRateLedger:
    """a_n = |T^n x0|, b_0 = s_ub(x0), b_{n+1} = b_n + sqrt(K) a_n nu_n."""

    K: int
    a: np.ndarray
    b: np.ndarray
    nu: np.ndarray
    alpha_exp: float
    exponent: float
    c_x0: float
    s_ub: float
    checks: CertificationReport

    @property
    def passed(self) -> bool:
        return self.checks.passed

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "n_cycles": len(self.nu),
            "alpha_exp": self.alpha_exp,
            "exponent": self.exponent,
            "c_x0": self.c_x0,
            "s_ub": self.s_ub,
            "final_a": float(self.a[-1]),
            "final_b": float(self.b[-1]),
            **self.checks.to_dict(),
        }


def cyclic_rate_exponent(K: int) -> float:
    return 1.0 / (2.0 * (2.0 * K ** 1.5 + 1.0))


def cyclic_rate_ledger(F: SubspaceFamily, x0, n_steps: int, tol: float | None = None) -> CyclicRateLedger:
    """Run n_steps sweeps of T = P_K ... P_1 and check the polynomial decay chain."""
    tol = settings.LEDGER_TOL if tol is None else tol
    x0 = as_vector(x0, F.ambient_dim)
    if n_steps < 1:
        raise InvalidParameter("n_steps must be at least 1")
    if vector_norm(x0) == 0.0:
        raise InvalidParameter("x0 must be nonzero")
    s_ub = _certified_s(F, x0).value
    K = F.K

    t = run(F, x0, Policy.cyclic(), n_steps * K, stop_norm=settings.UNDERFLOW_NORM)
    sweeps = t.per_T_iterates
    a = np.array([vector_norm(y) for y in sweeps])
    nus = []
    for y, size in zip(sweeps[:-1], a[:-1]):
        if size < settings.UNDERFLOW_NORM:
            break
        nus.append(nu_decomposition(F, y).nu)
    nu = np.asarray(nus)
    a = a[: len(nu) + 1]
    b = np.empty(len(nu) + 1)
    b[0] = s_ub
    b[1:] = s_ub + np.cumsum(math.sqrt(K) * a[:-1] * nu)

    alpha = K ** -1.5
    exponent = cyclic_rate_exponent(K)
    size0 = float(a[0])
    c_x0 = size0 ** (2 / (2 + alpha)) * s_ub ** (alpha / (2 + alpha)) * K ** (alpha / (2 + alpha))
    n = np.arange(1, len(a))
    safe_a = np.maximum(a, np.finfo(float).tiny)

    one_step = np.abs((a[1:] / safe_a[:-1]) ** 2 - (1.0 - nu ** 2))
    log_product = 2 * np.log(safe_a) + alpha * np.log(b)
    product_growth = np.maximum(np.diff(log_product), 0.0)
    product_growth[a[1:] == 0.0] = 0.0
    ratio = np.maximum((a[1:] / b[1:]) ** 2 - K ** 2 / n, 0.0)
    final = np.maximum(a[1:] - c_x0 * n ** (-exponent), 0.0)
    nu_floor = np.maximum(a[:-1] / (K * b[:-1]) - nu, 0.0)

    checks = CertificationReport([
        _check("one_step_identity", "a_{n+1}^2 = a_n^2 (1 - nu_n^2)", tol, one_step),
        _check("ab_product", "a_n^2 b_n^alpha is non-increasing, alpha = K^(-3/2)", tol, product_growth),
        _check("sequence_bound", "a_n^2 / b_n^2 <= K^2 / n", tol, ratio),
        _check("final_bound", f"a_n <= c(x0) n^(-{exponent:.6f})", tol, final),
        _check("nu_floor", "nu_n >= a_n / (K b_n)", tol, nu_floor),
    ])
    logger.debug(f"ledger K={K}: {len(nu)} sweeps, final a {a[-1]:.3e}, passed {checks.passed}")
    return CyclicRateLedger(K, a, b, nu, alpha, exponent, c_x0, s_ub, checks)


# ========== RATE FIT ==========

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    power_law: bool
    n_points: int
    window: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "power_law": self.power_law,
            "n_points": self.n_points,
            "window": list(self.window),
        }


def rate_fit(norms: Sequence[float], window: tuple[int, int], ns: Sequence[float] | None = None) -> RateFit:
    """Least-squares slope of log|x_n| against log n for window[0] <= n <= window[1].

    Without `ns`, norms[n] belongs to step n.
    """
    values = np.asarray(norms, dtype=float)
    steps = np.arange(len(values), dtype=float) if ns is None else np.asarray(ns, dtype=float)
    if steps.shape != values.shape:
        raise DimensionMismatch("norms and ns differ in length")
    lo, hi = window
    if lo < 1 or hi < lo:
        raise InvalidParameter("window must satisfy 1 <= lo <= hi")
    mask = (steps >= lo) & (steps <= hi)
    if mask.sum() < 10:
        raise InvalidParameter("window holds fewer than 10 points")
    if np.any(values[mask] <= 0):
        raise InvalidParameter("norms in the window must be positive")

    x, y = np.log(steps[mask]), np.log(values[mask])
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    spread = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(residual ** 2)) / spread if spread > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, r2 > settings.R2_THRESHOLD, int(mask.sum()), (lo, hi))


# ========== PREDICTED FACTORS ==========

@dataclass
class RateReport:
    K: int
    friedrichs_c: float
    rho_star_lb: float
    remotest_factor: float
    alternating_factor: float
    empirical_factor: float | None = None
    empirical_policy: str | None = None

    def violations(self) -> list[str]:
        if self.remotest_factor > self.alternating_factor + 1e-15:
            return ["remotest factor exceeds alternating factor"]
        return []

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "friedrichs_c": self.friedrichs_c,
            "rho_star_lb": self.rho_star_lb,
            "predicted_remotest_factor": self.remotest_factor,
            "predicted_alternating_factor": self.alternating_factor,
            "empirical_factor": self.empirical_factor,
            "empirical_policy": self.empirical_policy,
            "violations": self.violations(),
        }


def empirical_factor(t: Trajectory) -> float | None:
    """Geometric mean per-step decay (per sweep for cyclic runs) while the norm is positive."""
    norms = t.per_T_norms if t.policy == "cyclic" else t.norms
    positive = np.flatnonzero(norms > 0)
    if len(norms) < 2 or positive[-1] == 0:
        return None
    last = int(positive[-1])
    if last == len(norms) - 1:
        return float((norms[last] / norms[0]) ** (1.0 / last))
    # hit exact zero
    return 0.0


def bound_report(F: SubspaceFamily, trajectory: Trajectory | None = None) -> RateReport:
    c = friedrichs_number(F)
    K = F.K
    rho_lb = min(1.0, (1.0 - c) / (K - 1))
    report = RateReport(
        K=K,
        friedrichs_c=c,
        rho_star_lb=rho_lb,
        remotest_factor=math.sqrt(max(0.0, 1.0 - rho_lb ** 2)),
        alternating_factor=math.sqrt(max(0.0, 1.0 - ((1.0 - c) / (4 * K)) ** 2)),
    )
    if trajectory is not None:
        report.empirical_factor = empirical_factor(trajectory)
        report.empirical_policy = trajectory.policy
    for v in report.violations():
        logger.warning(f"⚠️ bound report: {v}")
    return report


# ========== TRAJECTORY BOUNDS ==========

def remotest_geometric_bound(t: Trajectory, F: SubspaceFamily, tol: float | None = None) -> CheckResult:
    """|x_n| <= |x_0| (1 - rho*_lb^2)^((n-1)/2) with rho*_lb = (1 - c)/(K - 1)."""
    tol = settings.LEDGER_TOL if tol is None else tol
    if not sum_of_complements_is_full(F):
        raise InvalidParameter("geometric decay needs L_1^perp + ... + L_K^perp = R^d")
    q = bound_report(F).remotest_factor
    n = np.arange(1, len(t.norms))
    bound = t.norms[0] * q ** (n - 1)
    return _check("remotest_geometric_bound", "|x_n| <= |x_0| (1 - rho*^2)^((n-1)/2)", tol,
                  np.maximum(t.norms[1:] - bound, 0.0) / max(t.norms[0], np.finfo(float).tiny),
                  factor=q)


def remotest_sqrt_bound(t: Trajectory, F: SubspaceFamily, s_ub: float | None = None,
                        tol: float | None = None) -> CheckResult:
    """For K = 2: |x_n| <= s(x_1)/sqrt(n).

    `s_ub` is any upper bound on s(x_1) (see `decomposition_value`); by default
    the certified primal value of the solver.
    """
    tol = settings.LEDGER_TOL if tol is None else tol
    if F.K != 2:
        raise InvalidParameter("the square-root bound is stated for K = 2")
    if len(t.norms) < 2:
        raise InvalidParameter("need at least one step")
    if s_ub is None:
        if t.iterates is None:
            raise InvalidParameter("need iterates or an explicit s_ub")
        s_ub = _certified_s(F, t.iterates[1]).value
    n = np.arange(1, len(t.norms))
    return _check("remotest_sqrt_bound", "|x_n| <= s(x_1)/sqrt(n)", tol,
                  np.maximum(t.norms[1:] - s_ub / np.sqrt(n), 0.0), s_x1=s_ub)


def alternating_sqrt_bound(F: SubspaceFamily, x0, n_steps: int, s_ub: float | None = None,
                           tol: float | None = None) -> CheckResult:
    """For K = 2: |T^n x0|^2 <= s(P_1 x0)^2/(2n - 1)."""
    tol = settings.LEDGER_TOL if tol is None else tol
    if F.K != 2:
        raise InvalidParameter("the square-root bound is stated for K = 2")
    x0 = as_vector(x0, F.ambient_dim)
    p1, _ = F.split(0, x0)
    s1 = _certified_s(F, p1).value if s_ub is None else s_ub
    t = run(F, x0, Policy.cyclic(), 2 * n_steps, keep_iterates=False)
    a = t.per_T_norms[1:]
    n = np.arange(1, len(a) + 1)
    return _check("alternating_sqrt_bound", "|T^n x_0|^2 <= s(P_1 x_0)^2/(2n - 1)", tol,
                  np.maximum(a ** 2 - s1 ** 2 / (2 * n - 1), 0.0), s_p1x0=s1)


def s_monotonicity(t: Trajectory, F: SubspaceFamily, n_check: int = 50, tol: float | None = None) -> CheckResult:
    """For K = 2: s(x_{n+1}) <= s(x_n) from n = 1 on, up to twice the solver gap tolerance."""
    tol = settings.LEDGER_SNORM_TOL if tol is None else tol
    if F.K != 2:
        raise InvalidParameter("s-monotonicity is stated for K = 2")
    if t.iterates is None:
        raise InvalidParameter("need a trajectory with iterates")
    iterates = t.iterates[1: n_check + 2]
    values, sizes = [], []
    for x in iterates:
        size = vector_norm(x)
        if size == 0.0:
            break
        values.append(_certified_s(F, x, tol).value)
        sizes.append(size)
    values = np.asarray(values)
    slack = 2 * tol * (1 + np.asarray(sizes[:-1]))
    return _check("s_monotonicity", "s(x_{n+1}) <= s(x_n)", 0.0,
                  np.maximum(values[1:] - values[:-1] - slack, 0.0))


def greedy_rate_bound(t: Trajectory, rho_lb: float, weakness: Sequence[float] = (),
                      tol: float | None = None) -> CheckResult:
    """|x_n| <= |x_0| prod_k (1 - t_k^2 rho_lb^2)^(1/2) for a greedy run."""
    tol = settings.LEDGER_TOL if tol is None else tol
    if not 0.0 <= rho_lb <= 1.0:
        raise InvalidParameter("rho_lb must lie in [0, 1]")
    steps = len(t.norms) - 1
    ts = np.array([weakness[min(k, len(weakness) - 1)] if weakness else 1.0 for k in range(steps)])
    bound = t.norms[0] * np.sqrt(np.cumprod(np.maximum(0.0, 1.0 - ts ** 2 * rho_lb ** 2)))
    return _check("greedy_rate_bound", "|x_n| <= |x_0| prod (1 - t_k^2 rho(D)^2)^(1/2)", tol,
                  np.maximum(t.norms[1:] - bound, 0.0), rho_lb=rho_lb)


def membership_preserved(t: Trajectory, F: SubspaceFamily, tol: float | None = None) -> CheckResult:
    """Every iterate of a run started in L_1^perp + ... + L_K^perp stays there."""
    tol = settings.MEMBERSHIP_DRIFT_TOL if tol is None else tol
    if t.iterates is None:
        raise InvalidParameter("need a trajectory with iterates")
    residuals = [membership_residual(F, x) for x in t.iterates]
    return _check("membership_preserved", "P_j y stays in L_1^perp + ... + L_K^perp", tol, residuals)


# ========== NON-CYCLIC DYNAMICS ==========

def find_period(seq: Sequence[int], max_period: int, start: int = 0) -> int | None:
    """Smallest p <= max_period with seq[i + p] == seq[i] for all i >= start."""
    s = np.asarray(seq)[start:]
    for p in range(1, max_period + 1):
        if len(s) > p and np.array_equal(s[p:], s[:-p]):
            return p
    return None


def bakers_agreement(t: Trajectory, params: BakersParams, max_period: int = 20,
                     tol: float = 1e-12) -> CertificationReport:
    """Compare a remotest run on the non-cyclic family with the log-ratio orbit.

    Steps are compared until the simulated norm drops below UNDERFLOW_NORM.
    """
    if t.iterates is None:
        raise InvalidParameter("need a trajectory with iterates")
    live = np.flatnonzero(t.norms < settings.UNDERFLOW_NORM)
    horizon = int(live[0]) if live.size else len(t.norms) - 1
    horizon = min(horizon, t.n_steps)
    pairs = horizon // 2
    if pairs < 1:
        raise InvalidParameter("trajectory too short to compare")

    orbit = bakers_oracle(params, pairs)
    even = t.indices[0: 2 * pairs: 2]
    odd = t.indices[1: 2 * pairs: 2]

    cos2 = {3: (math.cos(params.beta) ** 2, math.cos(params.gamma) ** 2),
            2: (math.cos(params.alpha) ** 2, math.cos(params.delta) ** 2)}
    xi, eta = t.iterates[0: 2 * pairs + 1: 2, 0], t.iterates[0: 2 * pairs + 1: 2, 2]
    drift = []
    for k in range(pairs):
        fx, fe = cos2.get(int(even[k]), (np.nan, np.nan))
        drift.append(max(abs(xi[k + 1] - xi[k] * fx) / abs(xi[k] * fx),
                         abs(eta[k + 1] - eta[k] * fe) / abs(eta[k] * fe)))
    drift = np.nan_to_num(np.asarray(drift), nan=np.inf)

    long_orbit = bakers_oracle(params, max(500, pairs))
    period = find_period(long_orbit.even_indices, max_period, start=len(long_orbit.even_indices) // 2)
    return CertificationReport([
        _check("even_indices_match_orbit", "i(2k) = 3 iff lambda_k >= 0", 0.0,
               (even != orbit.even_indices).astype(float), compared_steps=2 * pairs, ties=list(orbit.ties)),
        _check("odd_indices_are_one", "i(2k+1) = 1", 0.0, (odd != 1).astype(float)),
        _check("pair_recurrence", "(xi, eta) scale by (cos^2 beta, cos^2 gamma) or (cos^2 alpha, cos^2 delta)",
               tol, drift),
        _check("no_short_period", f"no period <= {max_period} in the index orbit", 0.0,
               [0.0 if period is None else 1.0], period=period, orbit_length=len(long_orbit.even_indices)),
    ])


# ========== CONSTRUCTION CHECKS ==========

def analytic_agreement(cfg: BlockConstruction, t: Trajectory, tol: float = 1e-10) -> CheckResult:
    """Simulated |T^n x0| against the per-block closed form, relative."""
    simulated = t.per_T_norms
    exact = block_analytic_norms(cfg, range(len(simulated)))
    rel = np.abs(simulated - exact) / np.maximum(exact, np.finfo(float).tiny)
    rel[(exact == 0.0) & (simulated == 0.0)] = 0.0
    return _check("analytic_agreement", "simulated |T^n x_0| equals the block closed form", tol, rel)


def witness_floor(t: Trajectory, target: Sequence[float]) -> CheckResult:
    """|x_n| >= target_n for every recorded step within the target's horizon."""
    target = np.asarray(target, dtype=float)
    horizon = min(len(target), len(t.norms) - 1)
    shortfall = np.maximum(target[:horizon] - t.norms[1: horizon + 1], 0.0)
    return _check("witness_floor", "|x_n| >= alpha_n", 0.0, shortfall, horizon=horizon)
