"""
Concrete families and starting points: slowly converging planar blocks,
the non-cyclic three-plane family in R^4, four lines in the plane, the
slow-convergence witness and a few generic generators.
"""
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from loguru import logger

from app.config import settings
from app.errors import InvalidFamily, InvalidParameter, TruncationTooSmall
from app.lab.hilbert import (
    Subspace,
    SubspaceFamily,
    family_from_spanning,
    make_family,
    subspace_from_spanning,
)

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


# ========== PLANAR BLOCKS ==========

@dataclass(frozen=True)
class BlockConstruction:
    """M mutually orthogonal planes; in plane m two lines meet at angle alpha_m."""

    M: int
    angles: tuple[float, ...]
    coeffs: tuple[float, ...]
    epsilon: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.M < 1:
            raise InvalidParameter("M must be at least 1")
        if len(self.angles) != self.M or len(self.coeffs) != self.M:
            raise InvalidParameter(f"expected {self.M} angles and coefficients")
        if any(not (0.0 < a <= math.pi / 2) for a in self.angles):
            raise InvalidParameter("block angles must lie in (0, pi/2]")
        if any(not (c > 0.0 and math.isfinite(c)) for c in self.coeffs):
            raise InvalidParameter("block coefficients must be positive")

    @classmethod
    def slow_blocks(cls, epsilon: float = 0.25, M: int = 400) -> "BlockConstruction":
        """alpha_m = 1/m, c_m = m^(-1/2 - epsilon)."""
        if epsilon <= 0:
            raise InvalidParameter("epsilon must be positive")
        m = np.arange(1, M + 1, dtype=float)
        return cls(M, tuple(1.0 / m), tuple(m ** (-0.5 - epsilon)), epsilon)

    @property
    def ambient_dim(self) -> int:
        return 2 * self.M

    def tail_bound(self) -> float | None:
        """Upper bound on the squared norm of the x0 terms cut off beyond block M."""
        if self.epsilon is None:
            return None
        # 4 sin^2(1/(2m)) <= 1/m^2, then an integral comparison
        return self.M ** (-2 - 2 * self.epsilon) / (2 + 2 * self.epsilon)

    def describe(self) -> dict:
        out = {"M": self.M, "epsilon": self.epsilon}
        if self.epsilon is None:
            out.update(angles=list(self.angles), coeffs=list(self.coeffs))
        return out


def _block_vectors(alpha: float) -> tuple[np.ndarray, ...]:
    e1 = np.array([1.0, 0.0])
    e2 = np.array([math.cos(alpha), math.sin(alpha)])
    y1 = np.array([0.0, 1.0])
    y2 = np.array([math.sin(alpha), -math.cos(alpha)])
    return e1, e2, y1, y2


def block_family(cfg: BlockConstruction) -> tuple[SubspaceFamily, np.ndarray]:
    d = cfg.ambient_dim
    first = np.zeros((d, cfg.M))
    second = np.zeros((d, cfg.M))
    x0 = np.zeros(d)
    for m, (alpha, c) in enumerate(zip(cfg.angles, cfg.coeffs)):
        e1, e2, y1, y2 = _block_vectors(alpha)
        rows = slice(2 * m, 2 * m + 2)
        first[rows, m] = e1
        second[rows, m] = e2
        x0[rows] = c * (y1 + y2)
    F = make_family([Subspace(d, first), Subspace(d, second)])
    return F, x0


def block_decomposition(cfg: BlockConstruction, x) -> tuple[np.ndarray, np.ndarray]:
    """Feasible split x = y_1 + y_2 with y_k in L_k^perp, solved block by block.

    Not optimal in general; its value bounds s(x) from above.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.ambient_dim,):
        raise InvalidParameter(f"expected a vector of length {cfg.ambient_dim}")
    first = np.zeros_like(x)
    second = np.zeros_like(x)
    for m, alpha in enumerate(cfg.angles):
        _, _, y1, y2 = _block_vectors(alpha)
        rows = slice(2 * m, 2 * m + 2)
        coef = np.linalg.solve(np.column_stack([y1, y2]), x[rows])
        first[rows] = coef[0] * y1
        second[rows] = coef[1] * y2
    return first, second


def _analytic_terms(cfg: BlockConstruction, n: int) -> np.ndarray:
    alpha = np.asarray(cfg.angles)
    c = np.asarray(cfg.coeffs)
    if n == 0:
        return c ** 2 * 4.0 * np.sin(alpha / 2) ** 2
    with np.errstate(divide="ignore"):
        log_cos = np.log(np.cos(alpha))
    return c ** 2 * np.sin(alpha) ** 2 * np.exp((4 * n - 2) * log_cos)


def block_analytic_norm(cfg: BlockConstruction, n: int) -> float:
    """|T^n x0| from the per-block closed form, with compensated summation."""
    if n < 0:
        raise InvalidParameter("n must be nonnegative")
    return math.sqrt(math.fsum(_analytic_terms(cfg, int(n))))


def block_analytic_norms(cfg: BlockConstruction, ns: Sequence[int]) -> np.ndarray:
    return np.array([block_analytic_norm(cfg, n) for n in ns])


# ========== NON-CYCLIC FAMILY ==========

def _prime_exponents(q: Fraction) -> dict[int, int]:
    out: dict[int, int] = {}
    for value, sign in ((q.numerator, 1), (q.denominator, -1)):
        p = 2
        while p * p <= value:
            while value % p == 0:
                out[p] = out.get(p, 0) + sign
                value //= p
            p += 1
        if value > 1:
            out[value] = out.get(value, 0) + sign
    return {p: e for p, e in out.items() if e}


def powers_never_meet(r1: Fraction, r2: Fraction) -> bool:
    """True when r1^m != r2^n for all positive integers m, n."""
    v1, v2 = _prime_exponents(r1), _prime_exponents(r2)
    if not v1 or not v2:
        return bool(v1) or bool(v2)
    if set(v1) != set(v2):
        return True
    ratios = {Fraction(v1[p], v2[p]) for p in v1}
    return len(ratios) != 1 or next(iter(ratios)) <= 0


@dataclass(frozen=True)
class BakersParams:
    """Angles of the three-plane family and the start of the log-ratio orbit.

    `exact_cos2` holds (cos^2 alpha, cos^2 beta, cos^2 gamma, cos^2 delta) as
    fractions when they are known exactly; the rationality conditions are
    only checked then.
    """

    alpha: float
    beta: float
    gamma: float
    delta: float
    lambda0: float = math.log(GOLDEN)
    exact_cos2: tuple[Fraction, Fraction, Fraction, Fraction] | None = None

    @classmethod
    def from_cos2(cls, cos2: Sequence[Fraction], lambda0: float = math.log(GOLDEN)) -> "BakersParams":
        ca, cb, cg, cd = (Fraction(v) for v in cos2)
        angles = [math.acos(math.sqrt(float(v))) for v in (ca, cb, cg, cd)]
        return cls(*angles, lambda0=lambda0, exact_cos2=(ca, cb, cg, cd))

    @property
    def a(self) -> float:
        return math.log(math.cos(self.beta) ** 2 / math.cos(self.gamma) ** 2)

    @property
    def b(self) -> float:
        return math.log(math.cos(self.delta) ** 2 / math.cos(self.alpha) ** 2)

    @property
    def r1(self) -> Fraction | None:
        return None if self.exact_cos2 is None else self.exact_cos2[0] / self.exact_cos2[3]

    @property
    def r2(self) -> Fraction | None:
        return None if self.exact_cos2 is None else self.exact_cos2[2] / self.exact_cos2[1]

    def conditions(self) -> dict[str, bool | None]:
        cos2 = [math.cos(t) ** 2 for t in (self.alpha, self.beta, self.gamma, self.delta)]
        ordering = self.alpha > self.gamma > self.beta > self.delta > self.alpha / 2
        balance = abs((cos2[3] - cos2[2]) - (cos2[1] - cos2[0])) <= 1e-12
        rational = powers = None
        if self.exact_cos2 is not None:
            ca, cb, cg, cd = self.exact_cos2
            balance = balance and (cd - cg == cb - ca)
            rational = True
            powers = powers_never_meet(self.r1, self.r2)
        return {
            "ordering": ordering,
            "balance": balance,
            "rational_ratios": rational,
            "powers_never_meet": powers,
            "b_gt_a_gt_0": self.b > self.a > 0,
        }

    def validate(self) -> "BakersParams":
        failed = [name for name, ok in self.conditions().items() if ok is False]
        if failed:
            raise InvalidParameter("angle conditions violated: " + ", ".join(failed))
        return self

    def describe(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "delta": self.delta,
            "a": self.a, "b": self.b, "lambda0": self.lambda0,
            "r1": None if self.r1 is None else str(self.r1),
            "r2": None if self.r2 is None else str(self.r2),
            "conditions": self.conditions(),
        }


NON_CYCLIC_COS2 = (Fraction(1, 11), Fraction(3, 11), Fraction(2, 11), Fraction(4, 11))


def non_cyclic_family(params: BakersParams | None = None) -> tuple[SubspaceFamily, BakersParams]:
    """Three planes L_j = span{e_j, u_j} in R^4 whose remotest index sequence never cycles.

    The e's live in the first coordinate plane with e_3 between e_1 and e_2,
    the u's in the second with u_2 between u_1 and u_3.
    """
    p = (params or BakersParams.from_cos2(NON_CYCLIC_COS2)).validate()

    def first(theta):
        return [math.cos(theta), math.sin(theta), 0.0, 0.0]

    def second(theta):
        return [0.0, 0.0, math.cos(theta), math.sin(theta)]

    F = family_from_spanning(
        [
            [first(0.0), second(0.0)],
            [first(p.alpha), second(p.delta)],
            [first(p.beta), second(p.gamma)],
        ],
        4,
    )
    return F, p


def non_cyclic_start(xi: float = 1.0, eta: float = GOLDEN) -> np.ndarray:
    """x0 = xi e_1 + eta u_1 in L_1."""
    if xi <= 0 or eta <= 0:
        raise InvalidParameter("xi and eta must be positive")
    return np.array([xi, 0.0, eta, 0.0])


@dataclass(frozen=True)
class BakersOrbit:
    lambdas: np.ndarray
    even_indices: np.ndarray
    ties: tuple[int, ...] = ()

    def schedule(self) -> np.ndarray:
        """Predicted labels for every step: the even-step prediction, then 1."""
        out = np.ones(2 * len(self.even_indices), dtype=int)
        out[::2] = self.even_indices
        return out


def bakers_oracle(p: BakersParams, n: int) -> BakersOrbit:
    """Iterate lambda_{k+1} = lambda_k - a (lambda_k >= 0), lambda_k + b (lambda_k < 0)."""
    if n < 1:
        raise InvalidParameter("n must be at least 1")
    a, b = p.a, p.b
    lambdas = np.empty(n + 1)
    indices = np.empty(n, dtype=int)
    ties = []
    lam = p.lambda0
    lambdas[0] = lam
    for k in range(n):
        if abs(lam) < settings.BAKERS_TIE_TOL:
            ties.append(k)
        indices[k] = 3 if lam >= 0 else 2
        lam = lam - a if lam >= 0 else lam + b
        lambdas[k + 1] = lam
    if ties:
        logger.warning(f"⚠️ log-ratio orbit passes within tie tolerance of 0 at {len(ties)} steps")
    return BakersOrbit(lambdas, indices, tuple(ties))


# ========== PLANAR EXAMPLES ==========

def four_lines_family(eps: float) -> SubspaceFamily:
    """Lines through (1,0), (0,1), (1,1) and (1, eps - 1)."""
    if not 0.0 < eps < 0.5:
        raise InvalidParameter("eps must lie in (0, 0.5)")
    return family_from_spanning([[[1.0, 0.0]], [[0.0, 1.0]], [[1.0, 1.0]], [[1.0, eps - 1.0]]], 2)


def orthogonal_axes(d: int = 2) -> SubspaceFamily:
    if d < 2:
        raise InvalidParameter("need at least two axes")
    return family_from_spanning([[row] for row in np.eye(d)], d)


def two_lines(theta: float) -> SubspaceFamily:
    """Two lines in R^2 meeting at angle theta."""
    if not 0.0 < theta <= math.pi / 2:
        raise InvalidParameter("theta must lie in (0, pi/2]")
    return family_from_spanning([[[1.0, 0.0]], [[math.cos(theta), math.sin(theta)]]], 2)


# ========== GENERIC ==========

def random_family(rng: np.random.Generator, d: int, K: int, ranks: Sequence[int] | None = None,
                  max_tries: int = 1000) -> SubspaceFamily:
    """Gaussian members of random rank, redrawn until the intersection is trivial."""
    if d < 2 or K < 2:
        raise InvalidParameter("random families need d >= 2 and K >= 2")
    if ranks is not None and (len(ranks) != K or any(not 0 <= r < d for r in ranks)):
        raise InvalidParameter(f"ranks must be {K} integers in [0, {d})")
    for _ in range(max_tries):
        rs = ranks if ranks is not None else rng.integers(1, d, size=K)
        members = [subspace_from_spanning(rng.standard_normal((int(r), d)), d) for r in rs]
        try:
            return make_family(members)
        except InvalidFamily:
            continue
    raise InvalidParameter(f"no family with trivial intersection after {max_tries} draws")


def padded_family(F: SubspaceFamily, extra_dim: int) -> SubspaceFamily:
    """Embed F into R^(d+p) with every member also containing the p new axes.

    The common part makes L_1^perp + ... + L_K^perp a proper subspace.
    """
    if extra_dim < 1:
        raise InvalidParameter("extra_dim must be at least 1")
    d = F.ambient_dim
    total = d + extra_dim
    members = []
    for m in F.members:
        basis = np.zeros((total, m.rank + extra_dim))
        basis[:d, : m.rank] = m.basis
        basis[d:, m.rank:] = np.eye(extra_dim)
        members.append(Subspace(total, basis))
    return make_family(members, require_trivial_intersection=False)


# ========== SLOW-CONVERGENCE WITNESS ==========

@dataclass(frozen=True, eq=False)
class SlowWitness:
    x0: np.ndarray
    family: SubspaceFamily
    scale: float
    m_seq: tuple[int, ...]
    blocks: tuple[int, ...]
    required_blocks: int

    def describe(self) -> dict:
        return {
            "scale": self.scale,
            "m_seq": list(self.m_seq),
            "blocks": list(self.blocks),
            "required_blocks": self.required_blocks,
        }


def log_target(horizon: int) -> np.ndarray:
    """alpha_n = 1/ln(n + 2) for n = 1..horizon."""
    n = np.arange(1, horizon + 1, dtype=float)
    return 1.0 / np.log(n + 2.0)


def slow_witness(cfg: BlockConstruction, target: Sequence[float], horizon: int | None = None) -> SlowWitness:
    """Start vector whose remotest residuals stay above `target` for n <= horizon.

    `target[n-1]` is the bound for |x_n|. Picks m_n minimal with
    alpha_m < 1/(2n+2) whenever horizon >= m > m_n/(4n), then one block per n
    whose dictionary incoherence sin(alpha_b/2) is at most 1/m_n.
    """
    values = np.asarray(target, dtype=float)
    horizon = len(values) if horizon is None else horizon
    if horizon < 1 or len(values) < horizon:
        raise InvalidParameter("target must cover the horizon")
    values = values[:horizon]
    if np.any(values < 0) or np.any(~np.isfinite(values)):
        raise InvalidParameter("target must be finite and nonnegative")
    if np.any(np.diff(values) > 0):
        raise InvalidParameter("target must be non-increasing")
    if horizon > 1 and values[0] > 0 and np.all(values == values[0]):
        raise InvalidParameter("constant target does not tend to zero")

    F, _ = block_family(cfg)
    d = cfg.ambient_dim

    def bisector(block: int) -> np.ndarray:
        e1, e2, _, _ = _block_vectors(cfg.angles[block])
        w = np.zeros(d)
        w[2 * block: 2 * block + 2] = (e1 + e2) / np.linalg.norm(e1 + e2)
        return w

    if values[0] == 0.0:
        return SlowWitness(bisector(0), F, 1.0, (), (1,), 1)

    scale = max(1.0, 2.0 * float(values[0]))
    scaled = values / scale
    positive = scaled[scaled > 0]
    n_max = int(np.max(np.floor(1.0 / (2.0 * positive))))
    m_seq: list[int] = []
    for n in range(1, n_max + 1):
        reach = np.flatnonzero(scaled >= 1.0 / (2 * n + 2))
        J = int(reach[-1]) + 1 if reach.size else 0
        m_seq.append(max(4 * n * J, (m_seq[-1] + 1) if m_seq else 1, 1))

    incoherence = np.sin(np.asarray(cfg.angles) / 2.0)
    blocks: list[int] = []
    nxt = 0
    for m_n in m_seq:
        fits = np.flatnonzero(incoherence[nxt:] <= 1.0 / m_n)
        if not fits.size:
            required = _blocks_needed(cfg, m_seq)
            raise TruncationTooSmall(f"slow witness needs about {required} blocks, have {cfg.M}", required)
        b = nxt + int(fits[0])
        blocks.append(b)
        nxt = b + 1

    x0 = scale * sum(bisector(b) / n for n, b in enumerate(blocks, start=1))
    logger.debug(f"slow witness: scale {scale:.3f}, m_n {m_seq}, blocks {[b + 1 for b in blocks]}")
    return SlowWitness(x0, F, scale, tuple(m_seq), tuple(b + 1 for b in blocks), blocks[-1] + 1)


def _blocks_needed(cfg: BlockConstruction, m_seq: Sequence[int]) -> int:
    # estimate assuming the block angles keep decaying like 1/m
    if cfg.epsilon is None:
        return cfg.M + len(m_seq)
    count = 0
    for m_n in m_seq:
        count = max(count + 1, math.ceil(1.0 / (2.0 * math.asin(1.0 / m_n))))
    return count


# ========== PRESETS ==========

@dataclass(frozen=True, eq=False)
class Construction:
    family: SubspaceFamily
    x0: np.ndarray | None
    provenance: dict
    params: object = None
    extras: dict = field(default_factory=dict)


def _float_param(p: dict, key: str, default: float) -> float:
    try:
        return float(p.get(key, default))
    except (TypeError, ValueError) as e:
        raise InvalidParameter(f"parameter {key!r} must be a number, got {p[key]!r}") from e


def _int_param(p: dict, key: str, default: int) -> int:
    value = p.get(key, default)
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidParameter(f"parameter {key!r} must be an integer, got {value!r}")
    return value


def _slow_blocks(p: dict, rng: np.random.Generator) -> Construction:
    cfg = BlockConstruction.slow_blocks(_float_param(p, "epsilon", 0.25), _int_param(p, "M", 400))
    F, x0 = block_family(cfg)
    return Construction(F, x0, {"construction": "slow_blocks", **cfg.describe(),
                                "x0_tail_bound": cfg.tail_bound()}, cfg)


def _non_cyclic(p: dict, rng: np.random.Generator) -> Construction:
    x0 = non_cyclic_start(_float_param(p, "xi", 1.0), _float_param(p, "eta", GOLDEN))
    F, params = non_cyclic_family(BakersParams.from_cos2(NON_CYCLIC_COS2, lambda0=math.log(x0[2] / x0[0])))
    return Construction(F, x0, {"construction": "non_cyclic", **params.describe()}, params)


def _four_lines(p: dict, rng: np.random.Generator) -> Construction:
    eps = _float_param(p, "eps", 0.1)
    return Construction(four_lines_family(eps), np.array([1.0, 1.0]), {"construction": "four_lines", "eps": eps})


def _orthogonal_axes(p: dict, rng: np.random.Generator) -> Construction:
    d = _int_param(p, "d", 2)
    x0 = np.arange(1.0, d + 1.0)
    return Construction(orthogonal_axes(d), x0, {"construction": "orthogonal_axes", "d": d})


def _two_lines(p: dict, rng: np.random.Generator) -> Construction:
    theta = _float_param(p, "theta", math.pi / 3)
    return Construction(two_lines(theta), np.array([0.0, 1.0]), {"construction": "two_lines", "theta": theta})


def _random(p: dict, rng: np.random.Generator) -> Construction:
    d, K = _int_param(p, "d", 4), _int_param(p, "K", 3)
    F = random_family(rng, d, K)
    return Construction(F, rng.standard_normal(d), {"construction": "random", "d": d, "K": K})


def _slow_witness(p: dict, rng: np.random.Generator) -> Construction:
    horizon = _int_param(p, "horizon", 50)
    cfg = BlockConstruction.slow_blocks(_float_param(p, "epsilon", 0.25), _int_param(p, "M", 320))
    witness = slow_witness(cfg, log_target(horizon), horizon)
    return Construction(witness.family, witness.x0,
                        {"construction": "slow_witness", "horizon": horizon, **cfg.describe(), **witness.describe()},
                        cfg, {"target": log_target(horizon).tolist()})


PRESETS: dict[str, Callable[[dict, np.random.Generator], Construction]] = {
    "orthogonal_axes": _orthogonal_axes,
    "four_lines": _four_lines,
    "slow_blocks": _slow_blocks,
    "non_cyclic": _non_cyclic,
    "two_lines": _two_lines,
    "random": _random,
    "slow_witness": _slow_witness,
}

PRESET_ALIASES = {"theorem5": "non_cyclic"}


def build_preset(name: str, params: dict | None = None, seed: int | None = None) -> Construction:
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise InvalidParameter(f"unknown construction {name!r}; choose from {sorted(PRESETS)}")
    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    return PRESETS[name](dict(params or {}), rng)
