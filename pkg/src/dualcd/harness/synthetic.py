"""Planted-mastery synthetic datasets with templated texts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Dataset, make_dataset
from ..errors import ValidationError

TOPICS = (
    "fractions", "decimals", "percentages", "ratios", "algebra", "equations", "inequalities", "functions",
    "geometry", "angles", "triangles", "circles", "probability", "statistics", "sequences", "vectors",
    "matrices", "logarithms", "trigonometry", "derivatives", "integrals", "graphs", "sets", "primes",
)
VERBS = ("solve", "compute", "simplify", "compare", "estimate", "evaluate", "prove", "sketch")


@dataclass(frozen=True)
class SyntheticSpec:
    n_students: int = 500
    n_exercises: int = 60
    n_concepts: int = 8
    min_concepts: int = 1
    max_concepts: int = 2
    response_rate: float = 0.6
    mastery_low: float = 0.05
    mastery_high: float = 0.95
    difficulty_low: float = 0.25
    difficulty_high: float = 0.75
    scale: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_students, self.n_exercises, self.n_concepts) < 2:
            raise ValidationError("synthetic datasets need at least 2 students, exercises and concepts")
        if not 1 <= self.min_concepts <= self.max_concepts <= self.n_concepts:
            raise ValidationError("need 1 <= min_concepts <= max_concepts <= n_concepts")
        if not 0.0 < self.response_rate <= 1.0:
            raise ValidationError("response_rate must lie in (0, 1]")
        if not 0.0 < self.mastery_low <= self.mastery_high < 1.0:
            raise ValidationError("planted mastery must lie in (0, 1)")
        if self.difficulty_low > self.difficulty_high or self.scale <= 0:
            raise ValidationError("invalid difficulty range or scale")


@dataclass(frozen=True, eq=False)
class PlantedTruth:
    mastery: np.ndarray      # (n_students, n_concepts)
    difficulty: np.ndarray   # (n_exercises,)
    probability: np.ndarray  # P(correct) per log row


def concept_name(k: int) -> str:
    base = TOPICS[k % len(TOPICS)]
    return base if k < len(TOPICS) else f"{base} {k // len(TOPICS)}"


def response_probability(mastery_rows, q_rows, difficulty, scale: float) -> np.ndarray:
    """sigma(scale * (mean mastery over the exercise's concepts - difficulty))."""
    q_rows = np.asarray(q_rows, dtype=np.float64)
    mean_mastery = (np.asarray(mastery_rows) * q_rows).sum(axis=1) / q_rows.sum(axis=1)
    return 1.0 / (1.0 + np.exp(-scale * (mean_mastery - np.asarray(difficulty))))


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> tuple[Dataset, PlantedTruth]:
    rng = np.random.default_rng(spec.seed)
    n_s, n_e, n_c = spec.n_students, spec.n_exercises, spec.n_concepts

    q = np.zeros((n_e, n_c), dtype=np.int8)
    for j in range(n_e):
        m = rng.integers(spec.min_concepts, spec.max_concepts + 1)
        q[j, rng.choice(n_c, size=m, replace=False)] = 1
    mastery = rng.uniform(spec.mastery_low, spec.mastery_high, size=(n_s, n_c))
    difficulty = rng.uniform(spec.difficulty_low, spec.difficulty_high, size=n_e)

    answered = rng.random((n_s, n_e)) < spec.response_rate
    # every student and exercise gets at least one log
    for s in np.flatnonzero(~answered.any(axis=1)):
        answered[s, rng.integers(n_e)] = True
    for j in np.flatnonzero(~answered.any(axis=0)):
        answered[rng.integers(n_s), j] = True
    students, exercises = np.nonzero(answered)
    prob = response_probability(mastery[students], q[exercises], difficulty[exercises], spec.scale)
    scores = (rng.random(len(prob)) < prob).astype(np.int64)

    names = [concept_name(k) for k in range(n_c)]
    texts = {}
    for j in range(n_e):
        topics = [names[k] for k in np.flatnonzero(q[j])]
        verb = VERBS[rng.integers(len(VERBS))]
        level = "an easy" if difficulty[j] < 0.4 else "a hard" if difficulty[j] > 0.6 else "a moderate"
        texts[j] = f"Exercise {j}: {verb} {level} problem about {' and '.join(topics)}."

    d = make_dataset(
        [f"s{s:04d}" for s in range(n_s)],
        [f"e{j:03d}" for j in range(n_e)],
        [f"c{k:02d}" for k in range(n_c)],
        list(zip(students.tolist(), exercises.tolist(), scores.tolist())),
        q,
        exercise_texts=texts,
        concept_names=dict(enumerate(names)),
    )
    return d, PlantedTruth(mastery, difficulty, prob)
