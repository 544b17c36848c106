"""The response matrix over observed students, exercises and concepts.

Block layout (rows and columns both ordered students, exercises, concepts)::

    [[0,    I,   0 ],
     [I^T,  0,   Q ],
     [0,    Q^T, 0 ]]

``I`` holds +1 / -1 for correct / wrong observed answers (0 when unanswered)
and ``Q`` is the Q-matrix restricted to observed exercises and concepts. Each
entity's response feature is its row of this matrix; unseen entities get a
row built with the same pattern over the observed columns, so their feature
width never changes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import ENTITY_KINDS, ResponseLogs
from .errors import ContractViolation


@dataclass(frozen=True, eq=False)
class ObservedSpace:
    """Global entity indices that make up the observed feature space."""

    students: np.ndarray
    exercises: np.ndarray
    concepts: np.ndarray

    def __post_init__(self):
        for kind in ENTITY_KINDS:
            arr = np.asarray(getattr(self, f"{kind}s"), dtype=np.int64)
            if len(np.unique(arr)) != len(arr):
                raise ValueError(f"duplicate {kind} indices in observed space")
            arr.setflags(write=False)
            object.__setattr__(self, f"{kind}s", arr)
        lookup = {}
        for kind in ENTITY_KINDS:
            ids = getattr(self, f"{kind}s")
            size = int(ids.max()) + 1 if len(ids) else 0
            table = -np.ones(size, dtype=np.int64)
            table[ids] = np.arange(len(ids))
            lookup[kind] = table
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def from_sets(cls, sets: dict) -> "ObservedSpace":
        return cls(sets["student"], sets["exercise"], sets["concept"])

    def ids(self, kind: str) -> np.ndarray:
        return getattr(self, f"{kind}s")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.students), len(self.exercises), len(self.concepts)

    @property
    def n_features(self) -> int:
        return sum(self.sizes)

    def offset(self, kind: str) -> int:
        n_s, n_e, _ = self.sizes
        return {"student": 0, "exercise": n_s, "concept": n_s + n_e}[kind]

    def local(self, kind: str, global_ids, *, strict: bool = True) -> np.ndarray:
        """Observed-local index per global id; -1 (or an error) for unobserved ids."""
        global_ids = np.asarray(global_ids, dtype=np.int64)
        table = self._lookup[kind]
        out = -np.ones(global_ids.shape, dtype=np.int64)
        inside = (global_ids >= 0) & (global_ids < len(table))
        out[inside] = table[global_ids[inside]]
        if strict and (out < 0).any():
            bad = global_ids[out < 0][0]
            raise ContractViolation(f"{kind} {int(bad)} is not in the observed space")
        return out

    def position(self, kind: str, global_ids, *, strict: bool = True) -> np.ndarray:
        """Row/column of each global id in the response matrix."""
        loc = self.local(kind, global_ids, strict=strict)
        return np.where(loc >= 0, loc + self.offset(kind), -1)

    def contains(self, kind: str, global_ids) -> np.ndarray:
        return self.local(kind, global_ids, strict=False) >= 0


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    matrix: sp.csr_matrix
    space: ObservedSpace
    signed: bool = True

    @property
    def n_features(self) -> int:
        return self.space.n_features

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def rows(self, kind: str, local_ids) -> np.ndarray:
        pos = np.asarray(local_ids, dtype=np.int64) + self.space.offset(kind)
        return self.matrix[pos].toarray()

    def block_rows(self, kind: str) -> np.ndarray:
        n = self.space.sizes[ENTITY_KINDS.index(kind)]
        return self.rows(kind, np.arange(n))

    def edges(self) -> np.ndarray:
        """Undirected edges (i < j) at every nonzero entry, shape (n_edges, 2)."""
        upper = sp.triu(self.matrix, k=1).tocoo()
        return np.stack([upper.row, upper.col], axis=1).astype(np.int64)

    def triplets(self) -> np.ndarray:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order], coo.data[order]], axis=1)

    def dump_triplets(self, path) -> None:
        """Write ``row,col,value`` lines for audit."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("row,col,value\n")
            for r, c, v in self.triplets():
                fh.write(f"{int(r)},{int(c)},{int(v)}\n")


def _interaction_values(scores: np.ndarray, signed: bool) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.int64)
    if signed:
        return np.where(scores == 1, 1.0, -1.0)
    return np.ones(len(scores))


def build_response_matrix(logs: ResponseLogs, q: np.ndarray, space: ObservedSpace, signed: bool = True) -> ResponseMatrix:
    """Assemble the symmetric block matrix from observed logs and the full Q-matrix.

    ``logs`` and ``q`` use global indices; any log touching an entity outside
    ``space`` is a contract violation. With ``signed=False`` the interaction
    block records answered/unanswered only.
    """
    s_pos = space.position("student", logs.student)
    e_pos = space.position("exercise", logs.exercise)
    vals = _interaction_values(logs.score, signed)

    q_obs = np.asarray(q)[np.ix_(space.exercises, space.concepts)]
    qe, qc = np.nonzero(q_obs)
    qe = qe + space.offset("exercise")
    qc = qc + space.offset("concept")
    qv = np.ones(len(qe))

    rows = np.concatenate([s_pos, e_pos, qe, qc])
    cols = np.concatenate([e_pos, s_pos, qc, qe])
    data = np.concatenate([vals, vals, qv, qv])
    f = space.n_features
    # duplicates would be summed by the constructor; logs are unique per pair
    m = sp.csr_matrix((data, (rows, cols)), shape=(f, f))
    m.sum_duplicates()
    return ResponseMatrix(m, space, signed)


def observed_feature(kind: str, index: int, r: ResponseMatrix) -> np.ndarray:
    n = r.space.sizes[ENTITY_KINDS.index(kind)]
    if not 0 <= index < n:
        raise IndexError(f"observed {kind} index {index} outside [0, {n})")
    return r.rows(kind, [index])[0]


def unseen_feature(
    kind: str,
    space: ObservedSpace,
    *,
    students=None,
    exercises=None,
    scores=None,
    concepts=None,
    signed: bool = True,
) -> np.ndarray:
    """Response row for an entity outside the observed space.

    * student: ``exercises`` and ``scores`` of its answers;
    * exercise: ``students`` and ``scores`` of its answers plus related ``concepts``;
    * concept: the observed ``exercises`` assessing it.

    All counterparts must be observed.
    """
    row = np.zeros(space.n_features)
    if kind == "student":
        exercises = np.asarray(exercises if exercises is not None else [], dtype=np.int64)
        scores = np.asarray(scores if scores is not None else [], dtype=np.int64)
        row[space.position("exercise", exercises)] = _interaction_values(scores, signed)
    elif kind == "exercise":
        students = np.asarray(students if students is not None else [], dtype=np.int64)
        scores = np.asarray(scores if scores is not None else [], dtype=np.int64)
        row[space.position("student", students)] = _interaction_values(scores, signed)
        if concepts is not None:
            row[space.position("concept", np.asarray(concepts, dtype=np.int64))] = 1.0
    elif kind == "concept":
        exercises = np.asarray(exercises if exercises is not None else [], dtype=np.int64)
        row[space.position("exercise", exercises)] = 1.0
    else:
        raise ValueError(f"unknown entity kind {kind!r}")
    return row
