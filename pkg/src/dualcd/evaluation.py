"""Scenario-restricted evaluation and metric reports."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import Dataset
from .errors import ContractViolation, UndefinedMetricError, ValidationError
from .metrics import acc, auc, doa_at_k
from .splits import SplitResult
from .text.features import TextualFeatureSet
from .training import BaselineState, CheckpointState, UnseenPayload, assign_unseen, id_forward, infer_unseen

METRICS = ("auc", "acc", "doa_at_10")
TABLE_HEADERS = {"auc": "AUC", "acc": "ACC", "doa_at_10": "DOA@10"}


@dataclass(frozen=True)
class SeedResult:
    seed: int
    auc: float
    acc: float
    doa_at_10: float | None
    n_evaluated_pairs: int
    infer_seconds: float = 0.0


@dataclass(frozen=True)
class MetricSummary:
    """Per-seed values (``None`` where undefined) with mean and population std of the defined ones."""

    values: tuple
    mean: float | None
    std: float | None

    @classmethod
    def of(cls, values) -> "MetricSummary":
        vals = tuple(None if x is None else float(x) for x in values)
        defined = np.asarray([x for x in vals if x is not None], dtype=np.float64)
        if len(defined) == 0:
            return cls(vals, None, None)
        return cls(vals, float(defined.mean()), float(defined.std()))


@dataclass(frozen=True)
class MetricReport:
    scenario: str
    model: str
    seeds: tuple
    auc: MetricSummary
    acc: MetricSummary
    doa_at_10: MetricSummary
    n_evaluated_pairs: tuple
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in METRICS:
            s = getattr(self, name)
            if len(s.values) != len(self.seeds):
                raise ValueError(f"{name} has {len(s.values)} values for {len(self.seeds)} seeds")
            if not all(x is None or 0.0 <= x <= 1.0 for x in s.values):
                raise ValueError(f"{name} outside [0, 1]")

    @classmethod
    def from_runs(cls, scenario: str, model: str, runs: list[SeedResult], extra=None) -> "MetricReport":
        if not runs:
            raise ValueError("a report needs at least one run")
        return cls(scenario, model, tuple(r.seed for r in runs),
                   *(MetricSummary.of([getattr(r, m) for r in runs]) for m in METRICS),
                   tuple(r.n_evaluated_pairs for r in runs), dict(extra or {}))

    def to_dict(self) -> dict:
        doc = {"scenario": self.scenario, "model": self.model, "seeds": list(self.seeds)}
        for m in METRICS:
            s = getattr(self, m)
            doc[m] = {"values": list(s.values), "mean": s.mean, "std": s.std}
        doc["n_evaluated_pairs"] = list(self.n_evaluated_pairs)
        if self.extra:
            doc["extra"] = self.extra
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        sums = [MetricSummary(tuple(doc[m]["values"]), doc[m]["mean"], doc[m]["std"]) for m in METRICS]
        return cls(doc["scenario"], doc["model"], tuple(doc["seeds"]), *sums,
                   tuple(doc["n_evaluated_pairs"]), doc.get("extra", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def format_table(reports: list[MetricReport]) -> str:
    """Aligned plain-text table, metrics in percent as ``mean ± std``."""
    head = ["Model", "Scenario", *(TABLE_HEADERS[m] for m in METRICS)]
    def cell(s: MetricSummary) -> str:
        return "n/a" if s.mean is None else f"{100 * s.mean:.2f} ± {100 * s.std:.2f}"

    rows = [[r.model, r.scenario, *(cell(getattr(r, m)) for m in METRICS)] for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(head, *rows)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)).rstrip() for line in [head, *rows]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# -- scenario restriction ----------------------------------------------------


def restricted_rows(d: Dataset, split: SplitResult) -> np.ndarray:
    rows = split.evaluation_rows(d)
    if len(rows) == 0:
        raise ValidationError(f"no test logs touch the unseen side of scenario {split.scenario!r}")
    kind = split.kind
    if kind is not None:
        logs = d.logs.take(rows)
        if kind == "student":
            inside = np.isin(logs.student, split.unobserved_sets["student"])
        elif kind == "exercise":
            inside = np.isin(logs.exercise, split.unobserved_sets["exercise"])
        else:
            inside = np.asarray(d.q)[logs.exercise][:, split.unobserved_sets["concept"]].any(axis=1)
        if not inside.all():
            raise ContractViolation("evaluation would score a log outside the scenario filter")
    return rows


def mastery_students(split: SplitResult, eval_students: np.ndarray) -> np.ndarray:
    if split.kind == "student":
        return np.asarray(split.unobserved_sets["student"], dtype=np.int64)
    return np.unique(eval_students)


def _metrics(seed, pred, mas, mas_students, logs, q, seconds=0.0) -> SeedResult:
    try:
        doa = doa_at_k(mas, logs, q, 10, mas_students)
    except UndefinedMetricError:
        # e.g. every unseen student assigned the same embedding: no ordered pairs exist
        doa = None
    return SeedResult(seed, auc(pred, logs.score), acc(pred, logs.score), doa, len(logs), seconds)


def evaluate_open(ckpt: CheckpointState, d: Dataset, split: SplitResult, textual: TextualFeatureSet,
                  seed: int | None = None, return_inference: bool = False):
    """Metrics over the scenario-restricted test logs; optionally also the raw inference."""
    rows = restricted_rows(d, split)
    logs = d.logs.take(rows)
    payload = UnseenPayload.from_split(d, split, textual)
    students = mastery_students(split, logs.student)
    res = infer_unseen(ckpt, payload, logs.student, logs.exercise, students)
    result = _metrics(split.seed if seed is None else seed, res.predictions, res.mastery, students, logs, d.q,
                      res.seconds)
    return (result, res) if return_inference else result


def evaluate_baseline(state: BaselineState, d: Dataset, split: SplitResult, how: str = "mean",
                      seed: int | None = None) -> SeedResult:
    rows = restricted_rows(d, split)
    logs = d.logs.take(rows)
    empty = TextualFeatureSet(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    payload = UnseenPayload.from_split(d, split, empty)
    model = assign_unseen(state, payload, how)
    q = torch.as_tensor(np.asarray(d.q, dtype=np.float32))
    students = mastery_students(split, logs.student)
    with torch.no_grad():
        pred = id_forward(model, logs, q).double().numpy()
        mas = model.mastery(torch.as_tensor(students)).double().numpy()
    return _metrics(split.seed if seed is None else seed, pred, mas, students, logs, d.q)
