"""Response logs, Q-matrix and entity texts: loading, validation and statistics.

File formats
------------
Logs are CSV with the header ``student_id,exercise_id,score``. The Q-matrix and
texts share one JSON document::

    {"exercises": [{"id": ..., "text": ..., "concepts": [...]}],
     "concepts": [{"id": ..., "name": ...}]}
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DataFormatError, ValidationError

LOG_HEADER = ("student_id", "exercise_id", "score")
ENTITY_KINDS = ("student", "exercise", "concept")


class ResponseLog(NamedTuple):
    student: int
    exercise: int
    score: int


@dataclass(frozen=True)
class EntityVocab:
    student_ids: tuple
    exercise_ids: tuple
    concept_ids: tuple
    student_index: dict = field(init=False, repr=False, compare=False)
    exercise_index: dict = field(init=False, repr=False, compare=False)
    concept_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for kind in ENTITY_KINDS:
            ids = getattr(self, f"{kind}_ids")
            index = {ext: i for i, ext in enumerate(ids)}
            if len(index) != len(ids):
                raise ValidationError(f"duplicate {kind} identifiers")
            object.__setattr__(self, f"{kind}_index", index)
        seen = {}
        for kind in ENTITY_KINDS:
            for ext in getattr(self, f"{kind}_ids"):
                if ext in seen:
                    raise ValidationError(
                        f"identifier {ext!r} used as both {seen[ext]} and {kind}"
                    )
                seen[ext] = kind

    @property
    def n_students(self) -> int:
        return len(self.student_ids)

    @property
    def n_exercises(self) -> int:
        return len(self.exercise_ids)

    @property
    def n_concepts(self) -> int:
        return len(self.concept_ids)

    def size(self, kind: str) -> int:
        return len(getattr(self, f"{kind}_ids"))

    def ids(self, kind: str) -> tuple:
        return getattr(self, f"{kind}_ids")

    def index(self, kind: str) -> dict:
        return getattr(self, f"{kind}_index")


@dataclass(frozen=True, eq=False)
class ResponseLogs:
    """Column-oriented response triplets."""

    student: np.ndarray
    exercise: np.ndarray
    score: np.ndarray

    def __post_init__(self):
        for name in ("student", "exercise", "score"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.student) == len(self.exercise) == len(self.score)):
            raise ValidationError("log columns have different lengths")
        if len(self.score) and not np.isin(self.score, (0, 1)).all():
            raise ValidationError("scores must be 0 or 1")

    @classmethod
    def empty(cls) -> "ResponseLogs":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z)

    @classmethod
    def from_rows(cls, rows) -> "ResponseLogs":
        arr = np.asarray(list(rows), dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def __len__(self) -> int:
        return len(self.score)

    def __iter__(self) -> Iterator[ResponseLog]:
        for s, e, r in zip(self.student.tolist(), self.exercise.tolist(), self.score.tolist()):
            yield ResponseLog(s, e, r)

    def take(self, rows) -> "ResponseLogs":
        rows = np.asarray(rows, dtype=np.int64)
        return ResponseLogs(self.student[rows], self.exercise[rows], self.score[rows])


@dataclass(frozen=True, eq=False)
class Dataset:
    vocab: EntityVocab
    logs: ResponseLogs
    q: np.ndarray
    exercise_texts: dict
    concept_names: dict

    def __post_init__(self):
        q = np.ascontiguousarray(self.q, dtype=np.int8)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        validate_dataset(self)

    @property
    def n_students(self) -> int:
        return self.vocab.n_students

    @property
    def n_exercises(self) -> int:
        return self.vocab.n_exercises

    @property
    def n_concepts(self) -> int:
        return self.vocab.n_concepts


def validate_dataset(d: Dataset) -> None:
    v = d.vocab
    if d.q.shape != (v.n_exercises, v.n_concepts):
        raise ValidationError(
            f"Q-matrix shape {d.q.shape} does not match vocab "
            f"({v.n_exercises}, {v.n_concepts})"
        )
    if d.q.size and not np.isin(d.q, (0, 1)).all():
        raise ValidationError("Q-matrix entries must be 0 or 1")
    empty_rows = np.flatnonzero(d.q.sum(axis=1) == 0)
    if len(empty_rows):
        raise ValidationError(
            f"exercise {v.exercise_ids[empty_rows[0]]!r} has an empty concept set"
        )
    logs = d.logs
    if len(logs):
        if logs.student.min() < 0 or logs.student.max() >= v.n_students:
            raise ValidationError("log student index out of range")
        if logs.exercise.min() < 0 or logs.exercise.max() >= v.n_exercises:
            raise ValidationError("log exercise index out of range")
        pair = logs.student * max(v.n_exercises, 1) + logs.exercise
        if len(np.unique(pair)) != len(pair):
            raise ValidationError("more than one log for a (student, exercise) pair")


def _parse_score(raw: str, path, line: int) -> int:
    try:
        value = float(raw)
    except ValueError:
        raise DataFormatError(f"score {raw!r} is not a number", path, line) from None
    if value not in (0.0, 1.0):
        raise DataFormatError(f"score {raw!r} is not binary", path, line)
    return int(value)


def read_log_rows(path) -> list[tuple[str, str, int, int]]:
    """Parse the log CSV into ``(student_id, exercise_id, score, line)`` rows."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty log file", path, 1) from None
        if tuple(h.strip() for h in header) != LOG_HEADER:
            raise DataFormatError(
                f"expected header {','.join(LOG_HEADER)}, got {','.join(header)}", path, 1
            )
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataFormatError(f"expected 3 fields, got {len(row)}", path, line)
            sid, eid, score = (c.strip() for c in row)
            if not sid or not eid:
                raise DataFormatError("empty identifier", path, line)
            rows.append((sid, eid, _parse_score(score, path, line), line))
    return rows


def read_item_document(path) -> tuple[list[dict], list[dict]]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(exc.msg, path, exc.lineno) from None
    if not isinstance(doc, dict) or "exercises" not in doc or "concepts" not in doc:
        raise DataFormatError("expected an object with 'exercises' and 'concepts'", path)
    exercises, concepts = doc["exercises"], doc["concepts"]
    for i, ex in enumerate(exercises):
        if not isinstance(ex, dict) or "id" not in ex or "concepts" not in ex:
            raise DataFormatError(f"exercise entry {i} lacks 'id' or 'concepts'", path)
    for i, c in enumerate(concepts):
        if not isinstance(c, dict) or "id" not in c:
            raise DataFormatError(f"concept entry {i} lacks 'id'", path)
    return exercises, concepts


def load_dataset(logs_path, q_path, texts_path=None) -> Dataset:
    """Load logs plus the Q-matrix/text document.

    ``texts_path`` may point at a second document of the same schema whose
    ``text``/``name`` fields override those in ``q_path``; by default texts are
    read from ``q_path`` itself.
    """
    exercises, concepts = read_item_document(q_path)
    concept_ids = tuple(str(c["id"]) for c in concepts)
    concept_index = {c: k for k, c in enumerate(concept_ids)}
    if len(concept_index) != len(concept_ids):
        raise ValidationError(f"{q_path}: duplicate concept identifiers")
    exercise_ids = tuple(str(ex["id"]) for ex in exercises)
    exercise_index = {e: j for j, e in enumerate(exercise_ids)}
    if len(exercise_index) != len(exercise_ids):
        raise ValidationError(f"{q_path}: duplicate exercise identifiers")

    q = np.zeros((len(exercise_ids), len(concept_ids)), dtype=np.int8)
    for j, ex in enumerate(exercises):
        related = ex["concepts"]
        if not related:
            raise ValidationError(f"exercise {exercise_ids[j]!r} has an empty concept set")
        for c in related:
            c = str(c)
            if c not in concept_index:
                raise ValidationError(f"exercise {exercise_ids[j]!r} references unknown concept {c!r}")
            q[j, concept_index[c]] = 1

    exercise_texts = {j: str(ex.get("text", "")) for j, ex in enumerate(exercises)}
    concept_names = {k: str(c.get("name", c["id"])) for k, c in enumerate(concepts)}
    if texts_path is not None and Path(texts_path) != Path(q_path):
        t_ex, t_c = read_item_document(texts_path)
        for ex in t_ex:
            j = exercise_index.get(str(ex["id"]))
            if j is not None and "text" in ex:
                exercise_texts[j] = str(ex["text"])
        for c in t_c:
            k = concept_index.get(str(c["id"]))
            if k is not None and "name" in c:
                concept_names[k] = str(c["name"])

    student_index: dict[str, int] = {}
    last: dict[tuple[int, int], tuple[int, int]] = {}
    for pos, (sid, eid, score, line) in enumerate(read_log_rows(logs_path)):
        if eid not in exercise_index:
            raise ValidationError(f"{logs_path}:{line}: unknown exercise {eid!r}")
        s = student_index.setdefault(sid, len(student_index))
        key = (s, exercise_index[eid])
        last.pop(key, None)
        last[key] = (pos, score)
    # dict preserves insertion order; re-inserting on duplicates moves the pair
    # to the position of its last occurrence
    if last:
        keys = np.array(list(last.keys()), dtype=np.int64)
        scores = np.array([v[1] for v in last.values()], dtype=np.int64)
        logs = ResponseLogs(keys[:, 0], keys[:, 1], scores)
    else:
        logs = ResponseLogs.empty()

    vocab = EntityVocab(tuple(student_index), exercise_ids, concept_ids)
    return Dataset(vocab, logs, q, exercise_texts, concept_names)


def save_dataset(d: Dataset, logs_path, q_path) -> None:
    v = d.vocab
    with open(logs_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for s, e, r in d.logs:
            w.writerow((v.student_ids[s], v.exercise_ids[e], r))
    doc = {
        "exercises": [
            {
                "id": v.exercise_ids[j],
                "text": d.exercise_texts.get(j, ""),
                "concepts": [v.concept_ids[k] for k in np.flatnonzero(d.q[j])],
            }
            for j in range(v.n_exercises)
        ],
        "concepts": [
            {"id": v.concept_ids[k], "name": d.concept_names.get(k, v.concept_ids[k])}
            for k in range(v.n_concepts)
        ],
    }
    with open(q_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, indent=1)


def filter_min_activity(d: Dataset, min_logs: int = 50) -> Dataset:
    """Keep students with strictly more than ``min_logs`` answers."""
    counts = np.bincount(d.logs.student, minlength=d.n_students)
    keep = np.flatnonzero(counts > min_logs)
    remap = -np.ones(d.n_students, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    rows = np.flatnonzero(remap[d.logs.student] >= 0)
    logs = d.logs.take(rows)
    logs = ResponseLogs(remap[logs.student], logs.exercise, logs.score)
    vocab = EntityVocab(
        tuple(d.vocab.student_ids[i] for i in keep), d.vocab.exercise_ids, d.vocab.concept_ids
    )
    return Dataset(vocab, logs, d.q, dict(d.exercise_texts), dict(d.concept_names))


@dataclass(frozen=True)
class DatasetStats:
    n_students: int
    n_exercises: int
    n_concepts: int
    n_logs: int
    sparsity: float
    avg_correct_rate: float
    q_density: float

    def to_table_row(self, digits: int = 3) -> dict:
        """Column names and rounding of the usual dataset-statistics table."""
        return {
            "#Students": self.n_students,
            "#Exercises": self.n_exercises,
            "#Concepts": self.n_concepts,
            "#Response Logs": self.n_logs,
            "Sparsity": round(self.sparsity, digits),
            "Average Correct Rate": round(self.avg_correct_rate, digits),
            "Q Density": round(self.q_density, digits),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_table_row(), **kwargs)


def compute_stats(d: Dataset) -> DatasetStats:
    n_s, n_e = d.n_students, d.n_exercises
    n_logs = len(d.logs)
    cells = n_s * n_e
    sparsity = n_logs / cells if cells else 0.0
    correct = float(d.logs.score.mean()) if n_logs else 0.0
    density = float(d.q.sum()) / n_e if n_e else 0.0
    return DatasetStats(n_s, n_e, d.n_concepts, n_logs, sparsity, correct, density)


def exercises_of_concept(q: np.ndarray, concept: int) -> np.ndarray:
    return np.flatnonzero(q[:, concept])


def make_dataset(
    student_ids: Sequence,
    exercise_ids: Sequence,
    concept_ids: Sequence,
    logs: Sequence[tuple[int, int, int]] | ResponseLogs,
    q,
    exercise_texts=None,
    concept_names=None,
) -> Dataset:
    """Build a Dataset from in-memory indices (used by generators and tests)."""
    if not isinstance(logs, ResponseLogs):
        logs = ResponseLogs.from_rows(logs)
    vocab = EntityVocab(tuple(map(str, student_ids)), tuple(map(str, exercise_ids)), tuple(map(str, concept_ids)))
    if exercise_texts is None:
        exercise_texts = {j: f"exercise {e}" for j, e in enumerate(vocab.exercise_ids)}
    if concept_names is None:
        concept_names = {k: str(c) for k, c in enumerate(vocab.concept_ids)}
    return Dataset(vocab, logs, np.asarray(q), dict(exercise_texts), dict(concept_names))
