"""Refined-text embeddings for exercises and concepts, pooled student rows."""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import UnavailableError, UndefinedMetricError
from .backends import parse_summary
from .cache import JsonlCache
from .prompts import (
    DEFAULT_CONTEXT_EXERCISES,
    DEFAULT_TOKEN_BUDGET,
    PromptBundle,
    dataset_concept_bundle,
    dataset_exercise_bundle,
)


@dataclass(frozen=True)
class RefinedText:
    kind: str
    index: int
    summary: str
    llm_tag: str
    content_hash: str


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    model_tag: str


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def refine_entity(kind: str, index: int, bundle: PromptBundle, client, cache: JsonlCache | None = None,
                  offline: bool = False) -> RefinedText:
    """Summarise one exercise or concept, reading and filling ``cache``."""
    if kind not in ("exercise", "concept"):
        raise ValueError(f"only exercises and concepts are refined, got {kind!r}")
    h = bundle.content_hash
    if cache is not None:
        hit = cache.get(kind, index, client.tag, h)
        if hit is not None:
            return RefinedText(kind, index, hit["summary"], client.tag, h)
    if offline and client.network:
        raise UnavailableError(f"offline and no cached summary for {kind} {index}")
    content = client.complete(bundle, entity=(kind, index))
    if not content or not content.strip():
        content = bundle.subject or bundle.context
    if cache is not None:
        content = cache.put(kind, index, client.tag, h, {"summary": content})["summary"]
    return RefinedText(kind, index, content, client.tag, h)


def embed_text(text: str, backend, cache: JsonlCache | None = None, offline: bool = False,
               kind: str = "text", index: int = -1) -> EmbeddingVector:
    if not text or not text.strip():
        raise ValueError("cannot embed empty text")
    h = text_hash(text)
    if cache is not None:
        hit = cache.get(kind, index, backend.tag, h)
        if hit is not None:
            return EmbeddingVector(np.asarray(hit["values"], dtype=np.float64), backend.tag)
    if offline and backend.network:
        raise UnavailableError(f"offline and no cached embedding for {kind} {index}")
    values = np.asarray(backend.embed([text])[0], dtype=np.float64)
    if values.shape != (backend.dim,) or not np.isfinite(values).all():
        raise ValueError(f"backend {backend.tag} returned an invalid vector")
    if cache is not None:
        values = np.asarray(cache.put(kind, index, backend.tag, h, {"values": values.tolist()})["values"])
    return EmbeddingVector(values, backend.tag)


class TextPipeline:
    """Refine-then-embed pipeline with on-disk caches.

    ``refiner=None`` skips refinement and embeds raw texts.
    """

    def __init__(self, refiner, embedder, cache_dir=None, *, offline: bool = False, max_in_flight: int = 4,
                 context_exercises: int = DEFAULT_CONTEXT_EXERCISES, token_budget: int = DEFAULT_TOKEN_BUDGET,
                 seed: int = 0, extract_summary: bool = False):
        self.refiner = refiner
        self.embedder = embedder
        self.offline = offline
        self.max_in_flight = max(1, int(max_in_flight))
        self.context_exercises = context_exercises
        self.token_budget = token_budget
        self.seed = seed
        self.extract_summary = extract_summary
        cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.summary_cache = JsonlCache(cache_dir / "refined.jsonl" if cache_dir else None)
        self.embedding_cache = JsonlCache(cache_dir / "embeddings.jsonl" if cache_dir else None)

    @property
    def dim(self) -> int:
        return self.embedder.dim

    @property
    def tags(self) -> dict:
        return {"llm": self.refiner.tag if self.refiner is not None else "none", "embedding": self.embedder.tag}

    def _map(self, fn, items, network: bool):
        if network and self.max_in_flight > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.max_in_flight) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def refine(self, kind: str, index: int, bundle: PromptBundle) -> RefinedText:
        return refine_entity(kind, index, bundle, self.refiner, self.summary_cache, self.offline)

    def embed(self, text: str, kind: str = "text", index: int = -1) -> np.ndarray:
        return embed_text(text, self.embedder, self.embedding_cache, self.offline, kind, index).values

    def entity_texts(self, d, kind: str, indices) -> list[str]:
        indices = [int(i) for i in indices]
        if self.refiner is None:
            if kind == "exercise":
                return [d.exercise_texts.get(i) or d.vocab.exercise_ids[i] for i in indices]
            return [d.concept_names.get(i) or d.vocab.concept_ids[i] for i in indices]
        if kind == "exercise":
            bundles = [dataset_exercise_bundle(d, i, self.token_budget) for i in indices]
        else:
            bundles = [dataset_concept_bundle(d, i, n_context=self.context_exercises, seed=self.seed,
                                              token_budget=self.token_budget) for i in indices]
        refined = self._map(lambda ib: self.refine(kind, ib[0], ib[1]), list(zip(indices, bundles)),
                            self.refiner.network)
        texts = [r.summary for r in refined]
        if self.extract_summary:
            texts = [parse_summary(t) for t in texts]
        return texts

    def embed_entities(self, d, kind: str, indices=None) -> np.ndarray:
        if indices is None:
            indices = range(d.vocab.size(kind))
        indices = [int(i) for i in indices]
        texts = self.entity_texts(d, kind, indices)
        rows = self._map(lambda it: self.embed(it[1], kind, it[0]), list(zip(indices, texts)), self.embedder.network)
        return np.stack(rows) if rows else np.zeros((0, self.dim))


def pool_student_features(exercises, exercise_features: np.ndarray) -> np.ndarray:
    """Mean embedding of the answered exercises; the global exercise mean if none."""
    exercises = np.asarray(exercises, dtype=np.int64)
    if len(exercises) == 0:
        return exercise_features.mean(axis=0)
    return exercise_features[exercises].mean(axis=0)


def pool_students(students: np.ndarray, exercises: np.ndarray, exercise_features: np.ndarray, n_students: int) -> np.ndarray:
    """Vectorised :func:`pool_student_features` for every student index below ``n_students``."""
    students = np.asarray(students, dtype=np.int64)
    exercises = np.asarray(exercises, dtype=np.int64)
    out = np.zeros((n_students, exercise_features.shape[1]))
    np.add.at(out, students, exercise_features[exercises])
    counts = np.bincount(students, minlength=n_students).astype(np.float64)
    has = counts > 0
    out[has] /= counts[has, None]
    out[~has] = exercise_features.mean(axis=0)
    return out


@dataclass(frozen=True, eq=False)
class TextualFeatureSet:
    student: np.ndarray
    exercise: np.ndarray
    concept: np.ndarray
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        widths = {self.student.shape[1], self.exercise.shape[1], self.concept.shape[1]}
        if len(widths) != 1:
            raise ValueError(f"feature widths differ: {widths}")
        for name in ("student", "exercise", "concept"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"non-finite values in {name} features")

    @property
    def dim(self) -> int:
        return self.exercise.shape[1]

    def of(self, kind: str) -> np.ndarray:
        return getattr(self, kind)

    def save(self, path) -> None:
        header = json.dumps({"d_l": self.dim, "tags": self.tags})
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(header), student=self.student, exercise=self.exercise, concept=self.concept)

    @classmethod
    def load(cls, path) -> "TextualFeatureSet":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            fs = cls(z["student"], z["exercise"], z["concept"], header.get("tags", {}))
        if fs.dim != header["d_l"]:
            raise ValueError("stored d_l does not match the matrices")
        return fs


def build_textual_features(d, exercise_features: np.ndarray, concept_features: np.ndarray, logs=None,
                           tags=None) -> TextualFeatureSet:
    """Assemble the feature set; student rows pool over ``logs`` (default: all logs)."""
    logs = d.logs if logs is None else logs
    student = pool_students(logs.student, logs.exercise, exercise_features, d.n_students)
    return TextualFeatureSet(student, np.asarray(exercise_features, dtype=np.float64),
                             np.asarray(concept_features, dtype=np.float64), dict(tags or {}))


def clustering_quality(exercise_features: np.ndarray, q: np.ndarray) -> dict:
    """Silhouette, Davies-Bouldin and Calinski-Harabasz with each exercise
    labelled by its first related concept."""
    from sklearn.metrics import calinski_harabasz_score, davies_bouldin_score, silhouette_score

    q = np.asarray(q)
    labels = np.argmax(q != 0, axis=1)
    n_clusters = len(np.unique(labels))
    if n_clusters < 2:
        raise UndefinedMetricError("clustering metrics need at least two clusters")
    if n_clusters >= len(labels):
        raise UndefinedMetricError("clustering metrics need fewer clusters than exercises")
    x = np.asarray(exercise_features, dtype=np.float64)
    return {
        "silhouette": float(silhouette_score(x, labels, metric="euclidean")),
        "davies_bouldin": float(davies_bouldin_score(x, labels)),
        "calinski_harabasz": float(calinski_harabasz_score(x, labels)),
    }
