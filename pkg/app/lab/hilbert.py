"""
Dense subspace algebra in R^d.

Subspaces are stored by an orthonormal basis (columns of a d x r array);
projectors are only materialized on request.
"""
import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
from loguru import logger

from app.config import settings
from app.errors import DimensionMismatch, InvalidFamily, InvalidParameter, NonFiniteInput


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Validate `x` as a finite 1-D float vector, optionally of length `dim`."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatch(f"expected length {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteInput("vector has non-finite coordinates")
    return v


def vector_norm(x) -> float:
    """Euclidean norm through BLAS nrm2, which rescales and stays accurate for tiny vectors."""
    return float(scipy.linalg.norm(np.asarray(x, dtype=float), check_finite=False))


@dataclass(frozen=True, eq=False)
class Subspace:
    ambient_dim: int
    basis: np.ndarray
    tol: float = settings.RANK_TOL

    def __post_init__(self):
        basis = np.array(self.basis, dtype=float)
        if basis.ndim != 2 or basis.shape[0] != self.ambient_dim:
            raise DimensionMismatch(f"basis must have shape ({self.ambient_dim}, r), got {basis.shape}")
        if basis.shape[1] > self.ambient_dim:
            raise InvalidParameter("rank exceeds ambient dimension")
        if not np.all(np.isfinite(basis)):
            raise NonFiniteInput("basis has non-finite entries")
        gram = basis.T @ basis
        if gram.size and np.max(np.abs(gram - np.eye(basis.shape[1]))) > settings.ORTHO_TOL:
            raise InvalidParameter("basis is not orthonormal")
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def coords(self, x: np.ndarray) -> np.ndarray:
        return self.basis.T @ x

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T


def zero_subspace(ambient_dim: int, tol: float | None = None) -> Subspace:
    return Subspace(ambient_dim, np.zeros((ambient_dim, 0)), settings.RANK_TOL if tol is None else tol)


def subspace_from_spanning(vectors: Iterable, ambient_dim: int, tol: float | None = None) -> Subspace:
    """Orthonormal basis of span(vectors); rank decided by s > tol * s_max."""
    tol = settings.RANK_TOL if tol is None else tol
    if tol <= 0:
        raise InvalidParameter("tol must be positive")
    columns = [as_vector(v, ambient_dim) for v in vectors]
    if not columns:
        return zero_subspace(ambient_dim, tol)
    spanning = np.column_stack(columns)
    gram = spanning.T @ spanning
    if np.max(np.abs(gram - np.eye(len(columns)))) <= settings.ORTHO_TOL:
        # already orthonormal: keep the caller's coordinates exactly
        basis = spanning
    else:
        basis = scipy.linalg.orth(spanning, rcond=tol)
    return Subspace(ambient_dim, basis, tol)


def project(S: Subspace, x) -> np.ndarray:
    x = as_vector(x, S.ambient_dim)
    return S.basis @ (S.basis.T @ x)


def _coordinate_complement(S: Subspace) -> np.ndarray | None:
    # subspaces spanned by coordinate axes get an exact complement
    nonzero = np.abs(S.basis) > 0
    if not np.all(nonzero.sum(axis=0) == 1):
        return None
    used = set(np.argmax(nonzero, axis=0).tolist())
    free = [i for i in range(S.ambient_dim) if i not in used]
    return np.eye(S.ambient_dim)[:, free]


def complement(S: Subspace) -> Subspace:
    d = S.ambient_dim
    if S.rank == 0:
        basis = np.eye(d)
    elif S.rank == d:
        basis = np.zeros((d, 0))
    else:
        basis = _coordinate_complement(S)
        if basis is None:
            basis = scipy.linalg.null_space(S.basis.T, rcond=S.tol)
    return Subspace(d, basis, S.tol)


def distance(S: Subspace, x) -> float:
    x = as_vector(x, S.ambient_dim)
    return vector_norm(x - S.basis @ (S.basis.T @ x))


def numerical_rank(matrix: np.ndarray, tol: float) -> int:
    if matrix.size == 0:
        return 0
    s = np.linalg.svd(matrix, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


@dataclass(frozen=True, eq=False)
class SubspaceFamily:
    """K >= 2 subspaces of a common R^d together with their complements."""

    members: tuple[Subspace, ...]
    complements: tuple[Subspace, ...]
    trivial_intersection: bool = True

    @property
    def ambient_dim(self) -> int:
        return self.members[0].ambient_dim

    @property
    def K(self) -> int:
        return len(self.members)

    @cached_property
    def _use_complement(self) -> tuple[bool, ...]:
        return tuple(c.rank <= m.rank for m, c in zip(self.members, self.complements))

    @cached_property
    def sum_basis(self) -> np.ndarray:
        """Orthonormal basis of L_1^perp + ... + L_K^perp."""
        stacked = np.hstack([c.basis for c in self.complements])
        if stacked.shape[1] == 0:
            return stacked
        return scipy.linalg.orth(stacked, rcond=settings.RANK_TOL)

    def split(self, k: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(P_k x, P_k^perp x) for the member at 0-based position k."""
        if self._use_complement[k]:
            C = self.complements[k].basis
            r = C @ (C.T @ x)
            return x - r, r
        B = self.members[k].basis
        p = B @ (B.T @ x)
        return p, x - p

    def distances(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.K)
        for k in range(self.K):
            if self._use_complement[k]:
                out[k] = vector_norm(self.complements[k].basis.T @ x)
            else:
                B = self.members[k].basis
                out[k] = vector_norm(x - B @ (B.T @ x))
        return out


def make_family(members: Sequence[Subspace], *, require_trivial_intersection: bool = True,
                tol: float | None = None) -> SubspaceFamily:
    tol = settings.RANK_TOL if tol is None else tol
    members = tuple(members)
    if len(members) < 2:
        raise InvalidFamily("a family needs at least two subspaces")
    d = members[0].ambient_dim
    if any(m.ambient_dim != d for m in members):
        raise InvalidFamily("members live in different ambient spaces")
    complements = tuple(complement(m) for m in members)
    identity = np.eye(d)
    for k, (m, c) in enumerate(zip(members, complements), start=1):
        if np.max(np.abs(m.projector() + c.projector() - identity)) > settings.DECOMPOSITION_TOL:
            raise InvalidFamily(f"complement of member {k} failed the decomposition check")
    stacked = np.hstack([c.basis for c in complements])
    trivial = numerical_rank(stacked, tol) == d
    if not trivial:
        if require_trivial_intersection:
            raise InvalidFamily("members share a nonzero vector (complements do not span R^d)")
        logger.debug("family built with a nontrivial common subspace")
    if any(m.rank == 0 for m in members):
        logger.warning("⚠️ family contains a zero-rank member")
    return SubspaceFamily(members, complements, trivial)


def family_from_spanning(spanning_sets: Sequence[Sequence], ambient_dim: int, **kwargs) -> SubspaceFamily:
    return make_family([subspace_from_spanning(vs, ambient_dim) for vs in spanning_sets], **kwargs)


def sum_of_complements_is_full(F: SubspaceFamily, tol: float | None = None) -> bool:
    """Rank test for L_1^perp + ... + L_K^perp = R^d."""
    tol = settings.RANK_TOL if tol is None else tol
    stacked = np.hstack([c.basis for c in F.complements])
    return numerical_rank(stacked, tol) == F.ambient_dim


def membership_residual(F: SubspaceFamily, x) -> float:
    """Distance from x to the sum of complements."""
    x = as_vector(x, F.ambient_dim)
    Q = F.sum_basis
    return vector_norm(x - Q @ (Q.T @ x))


# ========== SERIALIZATION ==========

def subspace_to_dict(S: Subspace) -> dict:
    return {"ambient_dim": S.ambient_dim, "basis": S.basis.T.tolist()}


def subspace_from_dict(data: dict) -> Subspace:
    d = int(data["ambient_dim"])
    rows = np.asarray(data.get("basis") or [], dtype=float).reshape(-1, d)
    return Subspace(d, rows.T)


def family_to_dict(F: SubspaceFamily, provenance: dict | None = None) -> dict:
    out = {
        "ambient_dim": F.ambient_dim,
        "members": [subspace_to_dict(m) for m in F.members],
        "family_hash": family_hash(F),
    }
    if provenance is not None:
        out["provenance"] = provenance
    return out


def family_from_dict(data: dict, **kwargs) -> SubspaceFamily:
    d = int(data["ambient_dim"])
    members = []
    for entry in data["members"]:
        entry = {"ambient_dim": d, **entry}
        members.append(subspace_from_dict(entry))
    return make_family(members, **kwargs)


def family_hash(F: SubspaceFamily) -> str:
    digest = hashlib.sha256()
    for m in F.members:
        digest.update((np.round(m.projector(), 12) + 0.0).tobytes())
    return digest.hexdigest()[:16]
