"""Score-prediction metrics and the degree of agreement (DOA@k)."""
from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from . import kernels
from .errors import UndefinedMetricError


def auc(scores, labels) -> float:
    """Rank-based ROC AUC; tied scores earn half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def acc(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if len(scores) == 0:
        raise UndefinedMetricError("ACC of an empty set")
    return float(np.mean((scores >= threshold).astype(np.int64) == labels))


def top_concepts(exercises, q: np.ndarray, k: int = 10) -> np.ndarray:
    """The ``k`` concepts with the most logs (ties to the lower index); unlogged concepts excluded."""
    counts = np.asarray(q, dtype=np.int64)[np.asarray(exercises, dtype=np.int64)].sum(axis=0)
    order = np.lexsort((np.arange(len(counts)), -counts))
    order = order[counts[order] > 0]
    return order[:k]


def response_table(students, exercises, scores, rows_of, columns) -> np.ndarray:
    """(n_rows, len(columns)) int8 table: 1 right, 0 wrong, -1 unanswered."""
    col_of = {int(e): i for i, e in enumerate(columns)}
    n_rows = max(rows_of.values(), default=-1) + 1
    table = -np.ones((n_rows, len(columns)), dtype=np.int8)
    for s, e, r in zip(students, exercises, scores):
        c = col_of.get(int(e))
        row = rows_of.get(int(s))
        if c is not None and row is not None:
            table[row, c] = r
    return table


def histogram_doa(hist: np.ndarray) -> Fraction | None:
    """Mean of ``num / den`` over the pairs counted in ``hist[den, num]``, exactly."""
    dens, nums = np.nonzero(hist)
    if len(dens) == 0:
        return None
    total = sum((Fraction(int(hist[t, u]) * int(u), int(t)) for t, u in zip(dens, nums)), Fraction(0))
    return total / int(hist.sum())


def doa_per_concept(mas, students, exercises, scores, q, concepts, student_ids=None) -> dict:
    """Exact DOA for each concept with at least one valid pair.

    ``mas`` rows follow ``student_ids`` (default ``0..n-1``); logs of students
    outside those rows are ignored.
    """
    mas = np.asarray(mas, dtype=np.float64)
    q = np.asarray(q)
    student_ids = np.arange(len(mas)) if student_ids is None else np.asarray(student_ids, dtype=np.int64)
    row_of_id = {int(s): i for i, s in enumerate(student_ids)}
    students = np.asarray(students, dtype=np.int64)
    exercises = np.asarray(exercises, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.int64)
    out = {}
    for k in concepts:
        cols = np.flatnonzero(q[:, k])
        on_k = np.isin(exercises, cols) & np.isin(students, student_ids)
        active = np.unique(students[on_k])
        if len(active) < 2:
            continue
        rows_of = {int(s): i for i, s in enumerate(active)}
        table = response_table(students[on_k], exercises[on_k], scores[on_k], rows_of, cols)
        col = np.ascontiguousarray(mas[[row_of_id[int(s)] for s in active], k])
        value = histogram_doa(kernels.doa_pair_histogram(col, table))
        if value is not None:
            out[int(k)] = value
    return out


def doa_at_k(mas, logs, q, k: int = 10, student_ids=None) -> float:
    """Uniform mean of per-concept DOA over the ``k`` most-logged concepts."""
    concepts = top_concepts(logs.exercise, q, k)
    per = doa_per_concept(mas, logs.student, logs.exercise, logs.score, q, concepts, student_ids)
    if not per:
        raise UndefinedMetricError("no concept has a pair of students with differing shared answers")
    return float(sum(per.values(), Fraction(0)) / len(per))
