"""Prompt templates for the exercise and concept refiners."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

EXERCISE_SYSTEM = (
    "You summarize exercises for an educational diagnosis system. The input is the "
    "text of one exercise together with the knowledge concepts that experts "
    "annotated for it. Explain what the exercise actually tests, centred on the "
    "annotated concepts, and drop incidental details such as names or numbers.\n"
    "Answer with a JSON object containing exactly two string fields:\n"
    '  "analysis": a short note on the skills needed to solve the exercise;\n'
    '  "summary": at most three sentences describing the exercise in terms of the annotated concepts.'
)

EXERCISE_TASK = (
    "Exercise text:\n{text}\n\n"
    "Write the JSON object for this exercise using the annotated concepts below."
)

CONCEPT_SYSTEM = (
    "You describe knowledge concepts for an educational diagnosis system. The input "
    "is the name of one concept and a few exercises that assess it. Concept names "
    "can be ambiguous across subjects, so use the exercises to decide which subject "
    "and level the concept belongs to.\n"
    "Answer with a JSON object containing exactly two string fields:\n"
    '  "analysis": a short note on which subject the exercises point to;\n'
    '  "summary": at most three sentences defining the concept as it is used in these exercises.'
)

CONCEPT_TASK = (
    "Concept name: {name}\n\n"
    "Write the JSON object for this concept using the example exercises below."
)

DEFAULT_TOKEN_BUDGET = 512
DEFAULT_CONTEXT_EXERCISES = 5


@dataclass(frozen=True)
class PromptBundle:
    system_prompt: str
    task_prompt: str
    context: str
    subject: str = ""

    def __post_init__(self):
        for name in ("system_prompt", "task_prompt", "context"):
            if not getattr(self, name).strip():
                raise ValueError(f"prompt bundle field {name!r} is empty")

    @property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        for part in (self.system_prompt, self.task_prompt, self.context):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    def messages(self) -> list[dict]:
        return [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": f"{self.task_prompt}\n\n{self.context}"},
        ]


def truncate_tokens(text: str, budget: int) -> str:
    """Cut ``text`` to ``budget`` whitespace-delimited tokens."""
    tokens = text.split()
    if len(tokens) <= budget:
        return text
    return " ".join(tokens[:budget])


def exercise_bundle(text: str, concept_names: list[str], token_budget: int = DEFAULT_TOKEN_BUDGET) -> PromptBundle:
    context = "Annotated concepts: " + "; ".join(concept_names)
    return PromptBundle(
        EXERCISE_SYSTEM,
        EXERCISE_TASK.format(text=text.strip() or "(no text)"),
        truncate_tokens(context, token_budget),
        subject=text,
    )


def concept_bundle(name: str, exercise_texts: list[str], token_budget: int = DEFAULT_TOKEN_BUDGET) -> PromptBundle:
    lines = [f"Exercise {i + 1}: {t.strip()}" for i, t in enumerate(exercise_texts)]
    context = "Example exercises:\n" + ("\n".join(lines) if lines else "(none available)")
    return PromptBundle(
        CONCEPT_SYSTEM,
        CONCEPT_TASK.format(name=name.strip() or "(unnamed)"),
        truncate_tokens(context, token_budget),
        subject=name,
    )


def sample_context_exercises(candidates, k: int = DEFAULT_CONTEXT_EXERCISES, seed: int = 0, concept: int = 0) -> np.ndarray:
    """Deterministic sample of at most ``k`` exercise indices for a concept's context."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) <= k:
        return candidates
    rng = np.random.default_rng([seed, concept])
    return np.sort(rng.choice(candidates, size=k, replace=False))


def dataset_exercise_bundle(d, j: int, token_budget: int = DEFAULT_TOKEN_BUDGET) -> PromptBundle:
    names = [d.concept_names[k] for k in np.flatnonzero(d.q[j])]
    return exercise_bundle(d.exercise_texts.get(j, ""), names, token_budget)


def dataset_concept_bundle(d, k: int, *, n_context: int = DEFAULT_CONTEXT_EXERCISES, seed: int = 0,
                           token_budget: int = DEFAULT_TOKEN_BUDGET, allowed_exercises=None) -> PromptBundle:
    """Bundle for concept ``k``; ``allowed_exercises`` limits which exercise texts may appear."""
    candidates = np.flatnonzero(d.q[:, k])
    if allowed_exercises is not None:
        candidates = np.intersect1d(candidates, allowed_exercises)
    chosen = sample_context_exercises(candidates, n_context, seed, k)
    texts = [d.exercise_texts.get(int(j), "") for j in chosen]
    return concept_bundle(d.concept_names[k], texts, token_budget)
