"""
Projection engines: cyclic (alternating), remotest, explicit schedules and
greedy approximation over finite dictionaries.

Subspace and atom indices in every public record are 1-based labels
(member 1 is `F.members[0]`).
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import pandas as pd
from loguru import logger

from app.config import settings
from app.errors import InvalidParameter, InvalidPolicy
from app.lab.hilbert import SubspaceFamily, as_vector, family_hash, numerical_rank, vector_norm

TINY = np.finfo(float).tiny


class PolicyKind(str, Enum):
    CYCLIC = "cyclic"
    REMOTEST = "remotest"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    schedule: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.EXPLICIT:
            if not self.schedule:
                raise InvalidPolicy("explicit policy needs a nonempty schedule")
            object.__setattr__(self, "schedule", tuple(int(i) for i in self.schedule))
            if min(self.schedule) < 1:
                raise InvalidPolicy("schedule labels start at 1")
        elif self.schedule is not None:
            raise InvalidPolicy(f"{self.kind.value} policy takes no schedule")

    @classmethod
    def cyclic(cls) -> "Policy":
        return cls(PolicyKind.CYCLIC)

    @classmethod
    def remotest(cls) -> "Policy":
        return cls(PolicyKind.REMOTEST)

    @classmethod
    def explicit(cls, schedule: Sequence[int]) -> "Policy":
        return cls(PolicyKind.EXPLICIT, tuple(schedule))

    def describe(self) -> dict:
        return {"kind": self.kind.value, "schedule": list(self.schedule) if self.schedule else None}


@dataclass
class Trajectory:
    """Record of one run.

    `norms[n] = |x_n|` for n = 0..N; `indices[n]` and `step_dists[n]` describe
    the step producing x_{n+1} from x_n.
    """

    norms: np.ndarray
    indices: np.ndarray
    step_dists: np.ndarray
    iterates: np.ndarray | None
    policy: str
    K: int
    stopped_early: bool = False
    underflow: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.indices)

    @property
    def per_T_iterates(self) -> np.ndarray | None:
        """Iterates after each full sweep of a cyclic run (T^n x_0)."""
        if self.iterates is None:
            return None
        return self.iterates[:: self.K]

    @property
    def per_T_norms(self) -> np.ndarray:
        return self.norms[:: self.K]

    def to_frame(self) -> pd.DataFrame:
        """Rows `n,norm,index,step_dist`; row n carries the step that produced x_n."""
        n = np.arange(len(self.norms))
        index = pd.array([pd.NA] + [int(i) for i in self.indices], dtype="Int64")
        step = np.concatenate([[np.nan], self.step_dists])
        return pd.DataFrame({"n": n, "norm": self.norms, "index": index, "step_dist": step})

    def describe(self) -> dict:
        return {
            "policy": self.policy,
            "K": self.K,
            "n_steps": self.n_steps,
            "final_norm": float(self.norms[-1]),
            "stopped_early": self.stopped_early,
            "underflow": self.underflow,
            **self.metadata,
        }


def _argmax_lowest(scores: np.ndarray, scale: float) -> int:
    # lowest position whose score is within tie tolerance of the maximum
    top = np.max(scores)
    return int(np.flatnonzero(scores >= top - settings.TIE_TOL * scale)[0])


def remotest_choice(F: SubspaceFamily, x) -> tuple[int, np.ndarray]:
    """Label of the member farthest from x, and all K distances."""
    x = as_vector(x, F.ambient_dim)
    dists = F.distances(x)
    return _argmax_lowest(dists, vector_norm(x)) + 1, dists


class _Recorder:
    def __init__(self, x0: np.ndarray, keep_iterates: bool):
        self.norms = [vector_norm(x0)]
        self.indices: list[int] = []
        self.step_dists: list[float] = []
        self.iterates = [x0.copy()] if keep_iterates else None
        self.stopped_early = False
        self.underflow = False

    def record(self, label: int, step_dist: float, x: np.ndarray, stop_norm: float) -> bool:
        norm = vector_norm(x)
        self.indices.append(label)
        self.step_dists.append(step_dist)
        self.norms.append(norm)
        if self.iterates is not None:
            self.iterates.append(x.copy())
        if 0.0 < norm < TINY:
            self.underflow = True
            return True
        if norm <= stop_norm:
            self.stopped_early = True
            return True
        return False

    def build(self, policy: str, K: int, metadata: dict) -> Trajectory:
        return Trajectory(
            norms=np.asarray(self.norms),
            indices=np.asarray(self.indices, dtype=int),
            step_dists=np.asarray(self.step_dists),
            iterates=None if self.iterates is None else np.asarray(self.iterates),
            policy=policy,
            K=K,
            stopped_early=self.stopped_early,
            underflow=self.underflow,
            metadata=metadata,
        )


def run(F: SubspaceFamily, x0, policy: Policy, n_steps: int, stop_norm: float | None = None,
        keep_iterates: bool = True) -> Trajectory:
    """Apply one projection per step according to `policy`."""
    stop_norm = settings.STOP_NORM if stop_norm is None else stop_norm
    if n_steps < 1:
        raise InvalidParameter("n_steps must be at least 1")
    if stop_norm < 0:
        raise InvalidParameter("stop_norm must be nonnegative")
    x = as_vector(x0, F.ambient_dim).copy()
    if policy.kind is PolicyKind.EXPLICIT and max(policy.schedule) > F.K:
        raise InvalidPolicy(f"schedule refers to member {max(policy.schedule)} of {F.K}")

    rec = _Recorder(x, keep_iterates)
    if rec.norms[0] > stop_norm:
        for n in range(n_steps):
            if policy.kind is PolicyKind.CYCLIC:
                k = n % F.K
            elif policy.kind is PolicyKind.EXPLICIT:
                k = policy.schedule[n % len(policy.schedule)] - 1
            else:
                label, _ = remotest_choice(F, x)
                k = label - 1
            x, r = F.split(k, x)
            if rec.record(k + 1, vector_norm(r), x, stop_norm):
                break
    else:
        rec.stopped_early = True

    traj = rec.build(policy.kind.value, F.K, {"schedule": policy.describe()["schedule"],
                                               "family_hash": family_hash(F)})
    logger.debug(f"{policy.kind.value} run: {traj.n_steps} steps, final norm {traj.norms[-1]:.3e}")
    return traj


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Finite set of unit atoms (rows), or the dictionary induced by a family."""

    atoms: np.ndarray | None
    provenance: str = "explicit"
    family: SubspaceFamily | None = None

    def __post_init__(self):
        if self.provenance == "induced":
            if self.family is None:
                raise InvalidParameter("induced dictionary needs its family")
            return
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim != 2 or atoms.shape[0] == 0:
            raise InvalidParameter("dictionary is empty")
        if np.max(np.abs(np.linalg.norm(atoms, axis=1) - 1.0)) > settings.ORTHO_TOL:
            raise InvalidParameter("dictionary atoms must have unit norm")
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_vectors(cls, vectors: Sequence) -> "Dictionary":
        """Normalize nonzero vectors into atoms."""
        rows = np.atleast_2d(np.asarray(vectors, dtype=float))
        norms = np.array([vector_norm(row) for row in rows])
        if np.any(norms == 0):
            raise InvalidParameter("zero vector cannot be an atom")
        return cls(rows / norms[:, None])

    @classmethod
    def induced(cls, F: SubspaceFamily) -> "Dictionary":
        return cls(None, "induced", F)

    @property
    def ambient_dim(self) -> int:
        return self.family.ambient_dim if self.family is not None else self.atoms.shape[1]

    @property
    def spans_space(self) -> bool:
        if self.family is not None:
            return True
        return numerical_rank(self.atoms, settings.RANK_TOL) == self.ambient_dim


def _weakness_at(weakness: Sequence[float], n: int) -> float:
    if not weakness:
        return 1.0
    return float(weakness[min(n, len(weakness) - 1)])


def _pick(scores: np.ndarray, t: float, scale: float, wga_choice: str) -> int:
    if wga_choice == "first" and t < 1.0:
        passing = np.flatnonzero(scores >= t * np.max(scores) - settings.TIE_TOL * scale)
        return int(passing[0])
    return _argmax_lowest(scores, scale)


def greedy_run(source: "Dictionary | SubspaceFamily", x0, weakness: Sequence[float] = (),
               n_steps: int = 1, stop_norm: float | None = None, keep_iterates: bool = True,
               wga_choice: str = "max") -> Trajectory:
    """Pure (empty `weakness`) or weak greedy algorithm.

    `weakness[n]` is t_{n+1}; steps past the end of the list reuse its last value.
    On an induced dictionary the step is the remotest projection.
    """
    stop_norm = settings.STOP_NORM if stop_norm is None else stop_norm
    if n_steps < 1:
        raise InvalidParameter("n_steps must be at least 1")
    if any(not (0.0 < t <= 1.0) for t in weakness):
        raise InvalidParameter("weakness parameters must lie in (0, 1]")
    if wga_choice not in ("max", "first"):
        raise InvalidParameter(f"unknown WGA choice rule {wga_choice!r}")
    if isinstance(source, SubspaceFamily):
        source = Dictionary.induced(source)

    x = as_vector(x0, source.ambient_dim).copy()
    rec = _Recorder(x, keep_iterates)
    if rec.norms[0] <= stop_norm:
        rec.stopped_early = True
    else:
        for n in range(n_steps):
            t = _weakness_at(weakness, n)
            scale = vector_norm(x)
            if source.family is not None:
                F = source.family
                dists = F.distances(x)
                k = _pick(dists, t, scale, wga_choice)
                x, r = F.split(k, x)
                label, amount = k + 1, vector_norm(r)
            else:
                inner = source.atoms @ x
                j = _pick(np.abs(inner), t, scale, wga_choice)
                x = x - inner[j] * source.atoms[j]
                label, amount = j + 1, float(abs(inner[j]))
            if rec.record(label, amount, x, stop_norm):
                break

    K = source.family.K if source.family is not None else source.atoms.shape[0]
    metadata = {"provenance": source.provenance, "weakness": list(weakness), "wga_choice": wga_choice}
    if source.family is not None:
        metadata["family_hash"] = family_hash(source.family)
    traj = rec.build("greedy", K, metadata)
    logger.debug(f"greedy run ({source.provenance}): {traj.n_steps} steps, final norm {traj.norms[-1]:.3e}")
    return traj


