"""
Scalar and directional quantities of a subspace family: the Friedrichs
number, the sphere constants rho / rho*, the s-norm, the greedy direction
and the per-sweep decay factor nu.
"""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.optimize
from loguru import logger

from app.config import settings
from app.errors import DegenerateInput, InvalidParameter, NotInSubspaceSum
from app.lab.hilbert import SubspaceFamily, as_vector, membership_residual, vector_norm
from app.lab.iterates import Dictionary, remotest_choice

FULL_SPHERE = "full_sphere"
RESTRICTED = "restricted"


# ========== FRIEDRICHS NUMBER ==========

def friedrichs_number(F: SubspaceFamily) -> float:
    """Largest eigenvalue of the zero-diagonal block Gram matrix, over K - 1."""
    bases = [m.basis for m in F.members if m.rank > 0]
    if not bases:
        raise InvalidParameter("every member has rank zero")
    if len(bases) < F.K:
        logger.warning("⚠️ zero-rank members contribute nothing to the Friedrichs number")
    stacked = np.hstack(bases)
    gram = stacked.T @ stacked
    start = 0
    for B in bases:
        stop = start + B.shape[1]
        gram[start:stop, start:stop] = 0.0
        start = stop
    top = scipy.linalg.eigh(gram, eigvals_only=True)[-1]
    return float(np.clip(top / (F.K - 1), 0.0, 1.0))


# ========== SPHERE ESTIMATORS ==========

@dataclass(frozen=True, eq=False)
class SphereEstimate:
    """Best value of a min-max objective over a unit sphere.

    `value` is attained at `witness`, hence an upper bound on the infimum;
    `lower_bound` is only set where a grid certifies one.
    """

    value: float
    witness: np.ndarray
    lower_bound: float | None
    method: str
    restarts: int
    iterations: int
    seed: int
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "witness": self.witness.tolist(),
            "lower_bound": self.lower_bound,
            "method": self.method,
            "restarts": self.restarts,
            "iterations": self.iterations,
            "seed": self.seed,
            **self.flags,
        }


Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


def _descend(objective: Objective, z0: np.ndarray, iterations: int, step0: float = 0.5) -> tuple[float, np.ndarray]:
    """Projected subgradient descent on the unit sphere, keeping the best point."""
    z = z0 / np.linalg.norm(z0)
    best_value, best_z = objective(z)[0], z
    for it in range(iterations):
        value, grad = objective(z)
        if value < best_value:
            best_value, best_z = value, z
        tangent = grad - (grad @ z) * z
        size = np.linalg.norm(tangent)
        if size == 0.0:
            break
        z = z - step0 / np.sqrt(it + 1.0) * tangent / size
        z = z / np.linalg.norm(z)
    return float(best_value), best_z


def _polish(objective: Objective, z0: np.ndarray) -> tuple[float, np.ndarray]:
    def scalar(z):
        size = np.linalg.norm(z)
        return objective(z / size)[0] if size > 0 else np.inf

    res = scipy.optimize.minimize(scalar, z0, method="Nelder-Mead",
                                  options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 400 * z0.size})
    z = res.x / np.linalg.norm(res.x)
    return float(objective(z)[0]), z


def _circle_search(batch: Callable[[np.ndarray], np.ndarray], step: float) -> tuple[float, np.ndarray, float]:
    """Grid over half the unit circle, then a bounded scalar refinement.

    Objectives here are even and 1-Lipschitz in the angle, so the grid
    minimum minus step/2 bounds the infimum from below.
    """
    thetas = np.arange(0.0, np.pi, step)
    values = batch(np.column_stack([np.cos(thetas), np.sin(thetas)]))
    i = int(np.argmin(values))
    grid_min = float(values[i])

    def scalar(theta):
        return float(batch(np.array([[np.cos(theta), np.sin(theta)]]))[0])

    res = scipy.optimize.minimize_scalar(scalar, bounds=(thetas[i] - step, thetas[i] + step),
                                         method="bounded", options={"xatol": 1e-13})
    if res.fun < grid_min:
        value, theta = float(res.fun), float(res.x)
    else:
        value, theta = grid_min, float(thetas[i])
    return value, np.array([np.cos(theta), np.sin(theta)]), max(0.0, grid_min - step / 2)


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    polar = np.arccos(1 - 2 * k / n)
    azimuth = np.pi * (1 + 5 ** 0.5) * k
    return np.column_stack([np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)])


def _multistart(objective: Objective, batch: Callable[[np.ndarray], np.ndarray] | None, dim: int,
                seeds: list[np.ndarray], restarts: int, iterations: int, rng: np.random.Generator
                ) -> tuple[float, np.ndarray, float | None, str]:
    if dim == 1:
        z = np.ones(1)
        return float(objective(z)[0]), z, float(objective(z)[0]), "exact"
    if dim == 2 and batch is not None:
        value, z, lower = _circle_search(batch, settings.GRID_STEP)
        for seed in seeds:
            size = np.linalg.norm(seed)
            if size > 0 and objective(seed / size)[0] < value:
                value, z = float(objective(seed / size)[0]), seed / size
        return value, z, lower, "grid"

    starts = list(seeds) + [rng.standard_normal(dim) for _ in range(restarts)]
    if dim == 3 and batch is not None:
        points = _fibonacci_sphere(20_000)
        values = batch(points)
        starts = [points[i] for i in np.argsort(values)[:4]] + starts

    # min by value, ties resolved by start order
    best = (np.inf, None)
    for z0 in starts:
        if np.linalg.norm(z0) == 0:
            continue
        value, z = _descend(objective, z0, iterations)
        if value < best[0]:
            best = (value, z)
    value, z = _polish(objective, best[1])
    if value > best[0]:
        value, z = best
    return value, z, None, "grid+polish" if dim == 3 and batch is not None else "multistart"


def _max_distance_objective(F: SubspaceFamily, embed: np.ndarray | None) -> tuple[Objective, Callable]:
    comps = [c.basis for c in F.complements]

    def objective(z):
        x = z if embed is None else embed @ z
        coords = [C.T @ x for C in comps]
        norms = np.array([np.linalg.norm(c) for c in coords])
        k = int(np.argmax(norms))
        if norms[k] == 0.0:
            return 0.0, np.zeros_like(z)
        grad = comps[k] @ coords[k] / norms[k]
        return float(norms[k]), grad if embed is None else embed.T @ grad

    def batch(Z):
        X = Z if embed is None else Z @ embed.T
        return np.max(np.column_stack([np.linalg.norm(X @ C, axis=1) for C in comps]), axis=1)

    return objective, batch


def _principal_pair(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Principal vectors with the smallest angle between span(A) and span(B)."""
    U, _, Vt = np.linalg.svd(A.T @ B)
    return A @ U[:, 0], B @ Vt[0]


def rho_estimate(F: SubspaceFamily, mode: str = FULL_SPHERE, restarts: int | None = None,
                 seed: int | None = None, iterations: int | None = None) -> SphereEstimate:
    """Upper estimate of rho (full sphere) or rho* (sphere of the union of members)."""
    restarts = settings.SPHERE_RESTARTS if restarts is None else restarts
    iterations = settings.SPHERE_ITERATIONS if iterations is None else iterations
    seed = settings.DEFAULT_SEED if seed is None else seed
    if restarts < 1:
        raise InvalidParameter("restarts must be at least 1")
    if mode not in (FULL_SPHERE, RESTRICTED):
        raise InvalidParameter(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    live = [m.basis for m in F.members if m.rank > 0]

    if mode == FULL_SPHERE:
        seeds = []
        for i in range(len(live)):
            for j in range(i + 1, len(live)):
                u, v = _principal_pair(live[i], live[j])
                seeds.append(u + v)
        objective, batch = _max_distance_objective(F, None)
        value, witness, lower, method = _multistart(objective, batch, F.ambient_dim, seeds,
                                                    restarts, iterations, rng)
    else:
        best, floors = None, []
        for k, member in enumerate(F.members):
            if member.rank == 0:
                continue
            B = member.basis
            seeds = [B.T @ _principal_pair(B, other)[0] for other in live if other is not B]
            objective, batch = _max_distance_objective(F, B)
            value, z, member_floor, method = _multistart(objective, batch, member.rank, seeds,
                                                         restarts, iterations, rng)
            floors.append(member_floor)
            if best is None or value < best[0]:
                best = (value, B @ z, method)
        value, witness, method = best
        # rho* is the minimum over members, so its floor is the minimum of theirs
        lower = None if None in floors else min(floors)

    logger.debug(f"{mode} estimate {value:.6f} ({method}, {restarts} restarts, seed {seed})")
    return SphereEstimate(value, witness, lower, method, restarts, iterations, seed, {"mode": mode})


def dictionary_rho(D: Dictionary, restarts: int | None = None, seed: int | None = None,
                   iterations: int | None = None) -> SphereEstimate:
    """Upper estimate of inf over the sphere of max_g |<x, g>| for a finite dictionary."""
    restarts = settings.SPHERE_RESTARTS if restarts is None else restarts
    iterations = settings.SPHERE_ITERATIONS if iterations is None else iterations
    seed = settings.DEFAULT_SEED if seed is None else seed
    if D.atoms is None:
        raise InvalidParameter("dictionary_rho needs an explicit dictionary; use rho_estimate for a family")
    atoms = D.atoms
    d = atoms.shape[1]
    if not D.spans_space:
        normal = scipy.linalg.null_space(atoms, rcond=settings.RANK_TOL)[:, 0]
        logger.warning("⚠️ dictionary does not span the space; rho(D) = 0")
        return SphereEstimate(0.0, normal, 0.0, "null_space", 0, 0, seed, {"spanning": False})

    def objective(z):
        inner = atoms @ z
        j = int(np.argmax(np.abs(inner)))
        return float(abs(inner[j])), np.sign(inner[j]) * atoms[j]

    def batch(Z):
        return np.max(np.abs(Z @ atoms.T), axis=1)

    rng = np.random.default_rng(seed)
    value, witness, lower, method = _multistart(objective, batch, d, [], restarts, iterations, rng)
    return SphereEstimate(value, witness, lower, method, restarts, iterations, seed, {"spanning": True})


# ========== S-NORM ==========

@dataclass(frozen=True, eq=False)
class SNormResult:
    value: float
    decomposition: tuple[np.ndarray, ...]
    dual_value: float
    gap: float
    certified: bool
    iterations: int
    dual_vector: np.ndarray

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "certified": self.certified,
            "iterations": self.iterations,
            "decomposition": [y.tolist() for y in self.decomposition],
        }


def _group_shrink(v: np.ndarray, kappa: float, slices: list[slice]) -> np.ndarray:
    out = np.zeros_like(v)
    for sl in slices:
        size = np.linalg.norm(v[sl])
        if size > kappa:
            out[sl] = (1.0 - kappa / size) * v[sl]
    return out


def s_norm(F: SubspaceFamily, y, tol: float | None = None, max_iter: int | None = None) -> SNormResult:
    """Minimal sum of norms of a decomposition y = y_1 + ... + y_K with y_k in L_k^perp.

    ADMM on the stacked complement coordinates with the coupling constraint
    as an affine projection. The dual certificate comes from the scaled
    multiplier, rescaled into the dual feasible set |P_k^perp u| <= 1.
    """
    tol = settings.SNORM_TOL if tol is None else tol
    max_iter = settings.SNORM_MAX_ITER if max_iter is None else max_iter
    if tol <= 0:
        raise InvalidParameter("tol must be positive")
    y = as_vector(y, F.ambient_dim)
    residual = membership_residual(F, y)
    if residual >= settings.MEMBERSHIP_TOL:
        raise NotInSubspaceSum(residual, settings.MEMBERSHIP_TOL)

    d = F.ambient_dim
    y_norm = vector_norm(y)
    if y_norm == 0.0:
        zeros = tuple(np.zeros(d) for _ in range(F.K))
        return SNormResult(0.0, zeros, 0.0, 0.0, True, 0, np.zeros(d))

    blocks = [c.basis for c in F.complements]
    slices, start = [], 0
    for C in blocks:
        slices.append(slice(start, start + C.shape[1]))
        start += C.shape[1]
    C = np.hstack(blocks)
    C_pinv = np.linalg.pinv(C, rcond=settings.RANK_TOL)

    def feasible(z):
        return z - C_pinv @ (C @ z - y)

    def primal(z):
        return float(sum(np.linalg.norm(z[sl]) for sl in slices))

    def dual(lam):
        worst = max(np.linalg.norm(B.T @ lam) for B in blocks if B.shape[1] > 0)
        if worst > 1.0:
            lam = lam / worst
        return float(y @ lam), lam

    def dual_from_primal(z):
        # active groups pin P_k^perp u to the unit direction of y_k
        rows, rhs = [], []
        for B, sl in zip(blocks, slices):
            size = np.linalg.norm(z[sl])
            if size > 1e-12 * y_norm:
                rows.append(B.T)
                rhs.append(z[sl] / size)
        if not rows:
            return -np.inf, np.zeros(d)
        lam = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)[0]
        return dual(lam)

    def primal_from_dual(lam):
        # optimal y_k are nonnegative multiples of P_k^perp lam
        coords = [B.T @ lam for B in blocks]
        directions = np.column_stack([B @ c for B, c in zip(blocks, coords)])
        t, _ = scipy.optimize.nnls(directions, y)
        zf = feasible(np.concatenate([tk * c for tk, c in zip(t, coords)]))
        return primal(zf), zf

    z = feasible(np.zeros(C.shape[1]))
    best_z, best_primal = z, primal(z)
    # y/|y| is always dual feasible, so s(y) >= |y|
    best_lam = y / y_norm
    best_dual = y_norm
    u = np.zeros_like(z)
    rho = 1.0 / y_norm
    certified = False
    iterations = 0
    threshold = tol * (1.0 + y_norm)

    for iterations in range(1, max_iter + 1):
        x = feasible(z - u)
        z_old = z
        z = _group_shrink(x + u, 1.0 / rho, slices)
        u = u + x - z
        if iterations % settings.SNORM_CHECK_EVERY and iterations != max_iter:
            continue

        zf = feasible(z)
        value = primal(zf)
        if value < best_primal:
            best_primal, best_z = value, zf
        for cand_value, cand_lam in (dual(C_pinv.T @ (rho * u)), dual_from_primal(best_z)):
            if cand_value > best_dual:
                best_dual, best_lam = cand_value, cand_lam
        value, zf = primal_from_dual(best_lam)
        if value < best_primal:
            best_primal, best_z = value, zf
        if best_primal - best_dual <= threshold:
            certified = True
            break

        r_norm = np.linalg.norm(x - z)
        s_norm_ = rho * np.linalg.norm(z - z_old)
        if r_norm > 10.0 * s_norm_:
            rho *= 2.0
            u /= 2.0
        elif s_norm_ > 10.0 * r_norm:
            rho /= 2.0
            u *= 2.0

    gap = max(best_primal - best_dual, 0.0)
    decomposition = tuple(B @ best_z[sl] for B, sl in zip(blocks, slices))
    if not certified:
        logger.warning(f"⚠️ s-norm not certified after {iterations} iterations (gap {gap:.3e})")
    return SNormResult(best_primal, decomposition, best_dual, gap, certified, iterations, best_lam)


def decomposition_value(F: SubspaceFamily, y, parts) -> float:
    """Sum of norms of an explicit decomposition y = sum parts[k], parts[k] in L_k^perp.

    Any such decomposition bounds s(y) from above.
    """
    y = as_vector(y, F.ambient_dim)
    if len(parts) != F.K:
        raise InvalidParameter(f"expected {F.K} parts, got {len(parts)}")
    parts = [as_vector(p, F.ambient_dim) for p in parts]
    scale = 1.0 + float(np.linalg.norm(y))
    for k, p in enumerate(parts):
        inside, _ = F.split(k, p)
        if np.linalg.norm(inside) > settings.MEMBERSHIP_TOL * scale:
            raise InvalidParameter(f"part {k + 1} is not orthogonal to member {k + 1}")
    if np.linalg.norm(sum(parts) - y) > settings.MEMBERSHIP_TOL * scale:
        raise InvalidParameter("parts do not sum to y")
    return float(sum(np.linalg.norm(p) for p in parts))


# ========== DIRECTIONS ==========

@dataclass(frozen=True, eq=False)
class GreedyDirection:
    g: np.ndarray
    rho_x: float
    achieving_index: int


def greedy_direction(F: SubspaceFamily, x) -> GreedyDirection:
    """Unit vector of the induced dictionary closest in direction to x."""
    x = as_vector(x, F.ambient_dim)
    size = vector_norm(x)
    if size == 0.0:
        raise DegenerateInput("greedy direction of the zero vector")
    label, _ = remotest_choice(F, x)
    _, r = F.split(label - 1, x)
    r_norm = vector_norm(r)
    if r_norm == 0.0:
        raise DegenerateInput("x lies in every member")
    return GreedyDirection(r / r_norm, r_norm / size, label)


@dataclass(frozen=True, eq=False)
class NuResult:
    v: tuple[np.ndarray, ...]
    nu: float
    image: np.ndarray


def nu_decomposition(F: SubspaceFamily, y) -> NuResult:
    """Per-factor residuals v_j = P_j^perp P_{j-1} ... P_1 y of one sweep."""
    y = as_vector(y, F.ambient_dim)
    size = vector_norm(y)
    if size == 0.0:
        raise DegenerateInput("nu is undefined at the zero vector")
    w, vs = y, []
    for k in range(F.K):
        w, r = F.split(k, w)
        vs.append(r)
    nu = vector_norm(np.concatenate(vs)) / size
    return NuResult(tuple(vs), nu, w)


# ========== REPORT ==========

@dataclass(frozen=True, eq=False)
class QuantityReport:
    K: int
    friedrichs_c: float
    rho: SphereEstimate
    rho_star: SphereEstimate

    @property
    def rho_star_floor(self) -> float:
        """(1 - c)/(K - 1), a lower bound on rho*."""
        return (1.0 - self.friedrichs_c) / (self.K - 1)

    def violations(self) -> list[str]:
        out = []
        if not 0.0 <= self.friedrichs_c < 1.0:
            out.append("friedrichs_c outside [0, 1)")
        if self.rho.value > self.rho_star.value + 1e-8:
            out.append("rho estimate exceeds rho* estimate")
        if self.rho_star.value < self.rho_star_floor - 1e-6:
            out.append("rho* estimate below the Friedrichs floor")
        return out

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "friedrichs_c": self.friedrichs_c,
            "rho_star_floor": self.rho_star_floor,
            "rho": self.rho.to_dict(),
            "rho_star": self.rho_star.to_dict(),
            "violations": self.violations(),
        }


def quantity_report(F: SubspaceFamily, restarts: int | None = None, seed: int | None = None) -> QuantityReport:
    c = friedrichs_number(F)
    rho = rho_estimate(F, FULL_SPHERE, restarts, seed)
    rho_star = rho_estimate(F, RESTRICTED, restarts, seed)
    if rho_star.value < rho.value:
        # points of the members are points of the sphere too
        rho = SphereEstimate(rho_star.value, rho_star.witness, rho.lower_bound, rho.method + "+restricted",
                             rho.restarts, rho.iterations, rho.seed, rho.flags)
    return QuantityReport(F.K, c, rho, rho_star)
