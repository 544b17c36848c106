"""Standard and open-environment splits of a dataset's logs.

Open splits follow a fixed order: the test set is drawn first from all logs,
then a fraction of the scenario's entities is marked unobserved and every
remaining log touching them moves to the unobserved part, then validation is
carved from what is left. Everything else is the observed training set.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import ENTITY_KINDS, Dataset
from .errors import ValidationError

SCENARIOS = ("standard", "unseen_student", "unseen_exercise", "unseen_concept")
SCENARIO_KIND = {
    "unseen_student": "student",
    "unseen_exercise": "exercise",
    "unseen_concept": "concept",
}


@dataclass(frozen=True)
class SplitSpec:
    scenario: str = "unseen_student"
    test_size: float = 0.2
    unseen_ratio: float = 0.2
    val_ratio: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        _check_fractions(self.test_size, self.val_ratio)
        if not 0.0 < self.unseen_ratio < 1.0:
            raise ValueError(f"unseen_ratio must lie in (0, 1), got {self.unseen_ratio}")


def _check_fractions(test_size, val_ratio):
    for name, value in (("test_size", test_size), ("val_ratio", val_ratio)):
        if not 0.0 < value < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {value}")
    if test_size + val_ratio >= 1.0:
        raise ValueError("test_size + val_ratio must be < 1")


def _empty_sets() -> dict:
    return {k: np.zeros(0, dtype=np.int64) for k in ENTITY_KINDS}


@dataclass(frozen=True, eq=False)
class SplitResult:
    scenario: str
    observed_train: np.ndarray
    validation: np.ndarray
    unobserved: np.ndarray
    test: np.ndarray
    observed_sets: dict
    unobserved_sets: dict = field(default_factory=_empty_sets)
    seed: int | None = None

    def __post_init__(self):
        for name in ("observed_train", "validation", "unobserved", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for attr in ("observed_sets", "unobserved_sets"):
            sets = {k: np.asarray(getattr(self, attr).get(k, ()), dtype=np.int64) for k in ENTITY_KINDS}
            object.__setattr__(self, attr, sets)

    @property
    def kind(self) -> str | None:
        return SCENARIO_KIND.get(self.scenario)

    def parts(self) -> dict:
        return {
            "observed_train": self.observed_train,
            "validation": self.validation,
            "unobserved": self.unobserved,
            "test": self.test,
        }

    def evaluation_rows(self, d: Dataset) -> np.ndarray:
        """Test rows that score the scenario's unseen side (all test rows for standard)."""
        kind = self.kind
        if kind is None:
            return self.test
        logs = d.logs.take(self.test)
        if kind == "student":
            keep = np.isin(logs.student, self.unobserved_sets["student"])
        else:
            # for unseen concepts the unseen exercises are exactly those touching C^U
            keep = np.isin(logs.exercise, self.unobserved_sets["exercise"])
        return self.test[keep]

    def to_json(self) -> str:
        doc = {
            "scenario": self.scenario,
            "seed": self.seed,
            **{k: v.tolist() for k, v in self.parts().items()},
            "observed_sets": {k: v.tolist() for k, v in self.observed_sets.items()},
            "unobserved_sets": {k: v.tolist() for k, v in self.unobserved_sets.items()},
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "SplitResult":
        doc = json.loads(text)
        return cls(
            scenario=doc["scenario"],
            observed_train=doc["observed_train"],
            validation=doc["validation"],
            unobserved=doc["unobserved"],
            test=doc["test"],
            observed_sets=doc["observed_sets"],
            unobserved_sets=doc["unobserved_sets"],
            seed=doc.get("seed"),
        )


def make_standard_split(d: Dataset, test_size: float = 0.2, val_ratio: float = 0.1, seed: int = 0) -> SplitResult:
    _check_fractions(test_size, val_ratio)
    n = len(d.logs)
    if n == 0:
        raise ValidationError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = math.floor(test_size * n)
    n_val = math.floor(val_ratio * n)
    test = np.sort(perm[:n_test])
    val = np.sort(perm[n_test:n_test + n_val])
    train = np.sort(perm[n_test + n_val:])
    observed = {k: np.arange(d.vocab.size(k)) for k in ENTITY_KINDS}
    return SplitResult("standard", train, val, np.zeros(0, dtype=np.int64), test, observed, _empty_sets(), seed)


def make_split(d: Dataset, spec: SplitSpec) -> SplitResult:
    if spec.scenario == "standard":
        return make_standard_split(d, spec.test_size, spec.val_ratio, spec.seed)
    return make_open_split(d, spec)


def make_open_split(d: Dataset, spec: SplitSpec) -> SplitResult:
    if spec.scenario not in SCENARIO_KIND:
        raise ValueError(f"{spec.scenario!r} is not an open scenario")
    kind = SCENARIO_KIND[spec.scenario]
    n = len(d.logs)
    if n == 0:
        raise ValidationError("cannot split an empty dataset")
    n_kind = d.vocab.size(kind)
    if n_kind < 2:
        raise ValidationError(f"need at least 2 {kind}s for an open split, have {n_kind}")
    n_unseen = math.floor(spec.unseen_ratio * n_kind)
    if n_unseen == 0:
        raise ValidationError(
            f"unseen_ratio {spec.unseen_ratio} selects zero of {n_kind} {kind}s"
        )

    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    n_test = math.floor(spec.test_size * n)
    test = perm[:n_test]
    rest = perm[n_test:]

    sampled = np.sort(rng.choice(n_kind, size=n_unseen, replace=False))
    unseen = _empty_sets()
    unseen[kind] = sampled
    if kind == "concept":
        unseen["exercise"] = np.flatnonzero(d.q[:, sampled].any(axis=1))
        if len(unseen["exercise"]) == d.n_exercises:
            raise ValidationError("every exercise touches a sampled concept; no observed exercises remain")

    if kind == "student":
        touches = np.isin(d.logs.student[rest], unseen["student"])
    else:
        touches = np.isin(d.logs.exercise[rest], unseen["exercise"])
    unobserved = rest[touches]
    rest = rest[~touches]

    n_val = math.floor(spec.val_ratio * len(rest))
    rest = rest[rng.permutation(len(rest))]
    val = rest[:n_val]
    train = rest[n_val:]

    observed = {
        k: np.setdiff1d(np.arange(d.vocab.size(k)), unseen[k]) for k in ENTITY_KINDS
    }
    return SplitResult(
        spec.scenario,
        np.sort(train),
        np.sort(val),
        np.sort(unobserved),
        np.sort(test),
        observed,
        unseen,
        spec.seed,
    )
