import json

import numpy as np
import pytest

from dualcd.data import ResponseLogs, make_dataset
from dualcd.errors import TransportError, UnavailableError, UndefinedMetricError
from dualcd.text import (
    EchoRefiner,
    HashingEmbedder,
    JsonlCache,
    OpenAIChatRefiner,
    OpenAIEmbedder,
    TextPipeline,
    TextualFeatureSet,
    build_textual_features,
    clustering_quality,
    embed_text,
    make_embedder,
    make_refiner,
    pool_student_features,
    pool_students,
    refine_entity,
)
from dualcd.text.backends import parse_summary
from dualcd.text.prompts import concept_bundle, exercise_bundle, sample_context_exercises, truncate_tokens


def tiny_dataset():
    q = [[1, 0], [0, 1], [1, 1]]
    texts = {0: "Add two fractions", 1: "Solve a linear equation", 2: "Fractions in equations"}
    return make_dataset(["s0", "s1"], ["e0", "e1", "e2"], ["c0", "c1"], [(0, 0, 1), (0, 1, 0), (1, 2, 1)], q,
                        exercise_texts=texts, concept_names={0: "fractions", 1: "equations"})


class FakeChat(OpenAIChatRefiner):
    def __init__(self, replies):
        super().__init__(model="fake", retries=1, backoff=0.0)
        self.replies = list(replies)
        self.calls = 0

    def _post(self, payload):
        self.calls += 1
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


def chat_reply(text):
    return {"choices": [{"message": {"content": text}}]}


class TestPrompts:
    def test_bundle_hash_and_messages(self):
        b = exercise_bundle("Add fractions", ["fractions"])
        assert b.content_hash == exercise_bundle("Add fractions", ["fractions"]).content_hash
        assert b.content_hash != exercise_bundle("Add fractions", ["ratios"]).content_hash
        assert [m["role"] for m in b.messages()] == ["system", "user"]

    def test_truncation(self):
        assert truncate_tokens("a b c d", 2) == "a b"
        b = concept_bundle("x", ["word " * 100], token_budget=10)
        assert len(b.context.split()) == 10

    def test_context_sample_deterministic(self):
        a = sample_context_exercises(np.arange(20), 5, seed=1, concept=3)
        assert np.array_equal(a, sample_context_exercises(np.arange(20), 5, seed=1, concept=3))
        assert len(a) == 5 and len(sample_context_exercises(np.arange(3), 5)) == 3


class TestBackends:
    def test_hashing_deterministic_unit(self):
        e = HashingEmbedder(32)
        v = e.embed(["add fractions", "add fractions"])
        assert np.array_equal(v[0], v[1]) and np.isclose(np.linalg.norm(v[0]), 1.0)
        assert EchoRefiner().network is False and e.network is False

    def test_shared_words_correlate(self):
        e = HashingEmbedder(256)
        a, b, c = e.embed(["solve fractions problem", "compute fractions problem", "triangles angles circles"])
        assert a @ b > a @ c

    def test_factories(self):
        assert make_refiner("echo").tag == "echo"
        assert make_embedder("hashing:16").dim == 16
        assert make_embedder("openai:text-embedding-3-small@256").dim == 256
        with pytest.raises(ValueError):
            make_refiner("llama")
        with pytest.raises(ValueError):
            make_embedder("word2vec")

    def test_retry_then_success(self):
        chat = FakeChat([RuntimeError("503"), chat_reply("summary")])
        assert chat.complete(exercise_bundle("x", ["c"])) == "summary"
        assert chat.calls == 2

    def test_retries_exhausted(self):
        chat = FakeChat([RuntimeError("a"), RuntimeError("b")])
        with pytest.raises(TransportError):
            chat.complete(exercise_bundle("x", ["c"]), entity=("exercise", 0))

    def test_malformed_reply(self):
        with pytest.raises(TransportError):
            FakeChat([{"choices": []}]).complete(exercise_bundle("x", ["c"]))

    def test_embedder_width_checked(self):
        class Fake(OpenAIEmbedder):
            def _post(self, texts):
                return {"data": [{"index": i, "embedding": [0.0] * 3} for i in range(len(texts))]}

        with pytest.raises(TransportError):
            Fake(dim=4, retries=0).embed(["a"])
        assert Fake(dim=3, retries=0).embed(["a", "b"]).shape == (2, 3)

    def test_parse_summary(self):
        assert parse_summary(json.dumps({"summary": "s"})) == "s"
        assert parse_summary("plain") == "plain"


class TestCache:
    def test_first_write_wins_and_persists(self, tmp_path):
        c = JsonlCache(tmp_path / "c.jsonl")
        c.put("exercise", 0, "m", "h", {"summary": "first"})
        c.put("exercise", 0, "m", "h", {"summary": "second"})
        again = JsonlCache(tmp_path / "c.jsonl")
        assert again.get("exercise", 0, "m", "h") == {"summary": "first"} and len(again) == 1

    def test_refine_uses_cache(self, tmp_path):
        cache = JsonlCache(tmp_path / "r.jsonl")
        b = exercise_bundle("x", ["c"])
        chat = FakeChat([chat_reply("once")])
        assert refine_entity("exercise", 0, b, chat, cache).summary == "once"
        assert refine_entity("exercise", 0, b, chat, cache, offline=True).summary == "once"
        assert chat.calls == 1

    def test_offline_miss(self):
        with pytest.raises(UnavailableError):
            refine_entity("exercise", 0, exercise_bundle("x", ["c"]), FakeChat([]), None, offline=True)

    def test_empty_reply_falls_back(self):
        b = exercise_bundle("my text", ["c"])
        assert refine_entity("exercise", 0, b, FakeChat([chat_reply("  ")])).summary == "my text"

    def test_only_exercise_or_concept(self):
        with pytest.raises(ValueError):
            refine_entity("student", 0, exercise_bundle("x", ["c"]), EchoRefiner())

    def test_embedding_cache_round_trip(self, tmp_path):
        cache = JsonlCache(tmp_path / "e.jsonl")
        v = embed_text("hello", HashingEmbedder(8), cache).values
        assert np.array_equal(embed_text("hello", HashingEmbedder(8), JsonlCache(tmp_path / "e.jsonl")).values, v)
        with pytest.raises(ValueError):
            embed_text("  ", HashingEmbedder(8))


class TestPipeline:
    def test_embed_entities_echo(self, tmp_path):
        d = tiny_dataset()
        pipe = TextPipeline(EchoRefiner(), HashingEmbedder(16), tmp_path)
        ze = pipe.embed_entities(d, "exercise")
        zc = pipe.embed_entities(d, "concept")
        assert ze.shape == (3, 16) and zc.shape == (2, 16)
        assert pipe.tags == {"llm": "echo", "embedding": "hashing:16"}
        again = TextPipeline(EchoRefiner(), HashingEmbedder(16), tmp_path, offline=True).embed_entities(d, "exercise")
        assert np.array_equal(ze, again)

    def test_network_refiner_threaded(self):
        d = tiny_dataset()
        chat = FakeChat([chat_reply(f"r{i}") for i in range(3)])
        pipe = TextPipeline(chat, HashingEmbedder(8), max_in_flight=3)
        assert sorted(pipe.entity_texts(d, "exercise", [0, 1, 2])) == ["r0", "r1", "r2"]


class TestPooling:
    def test_mean_and_empty(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        assert pool_student_features([0, 1], z).tolist() == [0.5, 0.5]
        assert np.allclose(pool_student_features([], z), z.mean(axis=0))

    def test_vectorised_matches_loop(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(6, 3))
        s, e = rng.integers(0, 4, size=15), rng.integers(0, 6, size=15)
        out = pool_students(s, e, z, 5)
        for i in range(5):
            assert np.allclose(out[i], pool_student_features(e[s == i], z))

    def test_feature_set_round_trip(self, tmp_path):
        d = tiny_dataset()
        fs = build_textual_features(d, np.ones((3, 4)), np.zeros((2, 4)), logs=ResponseLogs.empty(),
                                    tags={"embedding": "x"})
        fs.save(tmp_path / "f.npz")
        back = TextualFeatureSet.load(tmp_path / "f.npz")
        assert back.dim == 4 and back.tags == {"embedding": "x"}
        assert np.array_equal(back.student, fs.student)

    def test_widths_must_agree(self):
        with pytest.raises(ValueError):
            TextualFeatureSet(np.zeros((1, 2)), np.zeros((1, 3)), np.zeros((1, 3)))


class TestClustering:
    def test_separated_clusters(self):
        rng = np.random.default_rng(0)
        x = np.r_[rng.normal(0, 0.1, (10, 2)), rng.normal(5, 0.1, (10, 2))]
        q = np.r_[np.tile([1, 0], (10, 1)), np.tile([0, 1], (10, 1))]
        m = clustering_quality(x, q)
        assert m["silhouette"] > 0.9 and m["davies_bouldin"] < 0.1 and m["calinski_harabasz"] > 100

    def test_single_cluster(self):
        with pytest.raises(UndefinedMetricError):
            clustering_quality(np.zeros((3, 2)), np.ones((3, 1)))
