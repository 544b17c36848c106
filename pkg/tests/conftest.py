import numpy as np
import pytest

from dualcd.data import make_dataset
from dualcd.harness.synthetic import SyntheticSpec, generate_synthetic
from dualcd.text import HashingEmbedder, TextPipeline, build_textual_features
from dualcd.data import ResponseLogs
from dualcd.training import TrainConfig


def random_dataset(rng, n_students=12, n_exercises=8, n_concepts=3, density=0.6):
    q = np.zeros((n_exercises, n_concepts), dtype=np.int8)
    for j in range(n_exercises):
        q[j, rng.choice(n_concepts, size=rng.integers(1, min(2, n_concepts) + 1), replace=False)] = 1
    answered = rng.random((n_students, n_exercises)) < density
    answered[:, 0] |= ~answered.any(axis=1)
    s, e = np.nonzero(answered)
    r = rng.integers(0, 2, size=len(s))
    logs = list(zip(s.tolist(), e.tolist(), r.tolist()))
    return make_dataset([f"s{i}" for i in range(n_students)], [f"e{j}" for j in range(n_exercises)],
                        [f"c{k}" for k in range(n_concepts)], logs, q)


def hashing_features(d, dim=16):
    pipe = TextPipeline(None, HashingEmbedder(dim))
    return build_textual_features(d, pipe.embed_entities(d, "exercise"), pipe.embed_entities(d, "concept"),
                                  logs=ResponseLogs.empty(), tags=pipe.tags)


FAST = TrainConfig(learning_rate=1e-3, batch_size=256, max_epochs=3, patience=2, d=32, seed=0)


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_synthetic(SyntheticSpec(n_students=80, n_exercises=20, n_concepts=6, seed=3))


@pytest.fixture(scope="session")
def small_features(small_synthetic):
    return hashing_features(small_synthetic[0])
