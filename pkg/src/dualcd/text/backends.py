"""LLM refiners and text-embedding backends.

Network backends speak the OpenAI-compatible ``/chat/completions`` and
``/embeddings`` endpoints. Local backends (``echo`` refiner, ``hashing``
embedder) need no network and make the whole pipeline runnable offline.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from functools import lru_cache

import numpy as np

from ..errors import TransportError

API_KEY_ENV = "DUALCD_API_KEY"
BASE_URL_ENV = "DUALCD_API_BASE"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_LLM = "openai:gpt-3.5-turbo"
DEFAULT_EMBEDDER = "hashing:128"

_network_lock = threading.Lock()
_network_calls = 0


def network_calls() -> int:
    """Number of HTTP requests issued by network backends in this process."""
    return _network_calls


def _count_network_call():
    global _network_calls
    with _network_lock:
        _network_calls += 1


def api_key() -> str | None:
    return os.environ.get(API_KEY_ENV) or os.environ.get("OPENAI_API_KEY")


def with_retries(fn, retries: int = 3, backoff: float = 1.0, entity=None):
    last = None
    for attempt in range(retries + 1):
        try:
            return fn()
        except Exception as exc:  # noqa: BLE001 - any backend failure is retried
            last = exc
            if attempt < retries:
                time.sleep(backoff * 2 ** attempt)
    raise TransportError(f"backend failed after {retries + 1} attempts: {last}", entity=entity) from last


class EchoRefiner:
    """Local refiner that returns the entity text joined with its context."""

    tag = "echo"
    network = False

    def complete(self, bundle, entity=None) -> str:
        return f"{bundle.subject.strip()}\n{bundle.context.strip()}".strip()


class OpenAIChatRefiner:
    network = True

    def __init__(self, model: str = "gpt-3.5-turbo", base_url: str | None = None,
                 temperature: float = 0.0, timeout: float = 60.0, retries: int = 3, backoff: float = 1.0):
        self.model = model
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL).rstrip("/")
        self.temperature = temperature
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.tag = f"openai:{model}"

    def _post(self, payload):
        import httpx

        key = api_key()
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        _count_network_call()
        resp = httpx.post(f"{self.base_url}/chat/completions", json=payload, headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()

    def complete(self, bundle, entity=None) -> str:
        payload = {"model": self.model, "messages": bundle.messages(), "temperature": self.temperature}
        body = with_retries(lambda: self._post(payload), self.retries, self.backoff, entity)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {exc}", entity=entity) from exc


class HashingEmbedder:
    """Deterministic bag-of-tokens hashing embedding.

    Each lower-cased word token maps to a Gaussian vector seeded by the token's
    hash; the sum over tokens plus a small whole-text component is normalised
    to unit length. Texts sharing words therefore get correlated vectors.
    """

    network = False

    def __init__(self, dim: int = 128, text_weight: float = 0.25):
        self.dim = int(dim)
        self.text_weight = float(text_weight)
        self.tag = f"hashing:{self.dim}"

    @staticmethod
    def _seed(s: str) -> int:
        return int.from_bytes(hashlib.sha256(s.encode("utf-8")).digest()[:8], "little")

    @lru_cache(maxsize=65536)
    def _token_vector(self, token: str) -> np.ndarray:
        return np.random.default_rng(self._seed("tok:" + token)).standard_normal(self.dim)

    def embed_one(self, text: str) -> np.ndarray:
        tokens = re.findall(r"\w+", text.lower())
        v = np.zeros(self.dim)
        for tok in tokens:
            v += self._token_vector(tok)
        if tokens:
            v /= np.sqrt(len(tokens))
        v += self.text_weight * np.random.default_rng(self._seed("txt:" + text)).standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.embed_one(t) for t in texts]) if texts else np.zeros((0, self.dim))


class OpenAIEmbedder:
    network = True

    def __init__(self, model: str = "text-embedding-ada-002", dim: int = 1536, base_url: str | None = None,
                 timeout: float = 60.0, retries: int = 3, backoff: float = 1.0, batch_size: int = 64):
        self.model = model
        self.dim = int(dim)
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL).rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.batch_size = batch_size
        self.tag = f"openai:{model}"

    def _post(self, texts):
        import httpx

        key = api_key()
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        _count_network_call()
        resp = httpx.post(f"{self.base_url}/embeddings", json={"model": self.model, "input": texts},
                          headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()

    def embed(self, texts: list[str]) -> np.ndarray:
        out = []
        for start in range(0, len(texts), self.batch_size):
            chunk = texts[start:start + self.batch_size]
            body = with_retries(lambda: self._post(chunk), self.retries, self.backoff)
            rows = sorted(body["data"], key=lambda r: r["index"])
            out.extend(r["embedding"] for r in rows)
        arr = np.asarray(out, dtype=np.float64).reshape(len(texts), -1)
        if arr.shape[1] != self.dim:
            raise TransportError(f"embedding width {arr.shape[1]} differs from declared {self.dim}")
        return arr


def make_refiner(spec: str, **kwargs):
    """``echo`` or ``openai:<model>``."""
    name, _, arg = spec.partition(":")
    if name == "echo":
        return EchoRefiner()
    if name == "openai":
        return OpenAIChatRefiner(model=arg or "gpt-3.5-turbo", **kwargs)
    raise ValueError(f"unknown LLM backend {spec!r}")


def make_embedder(spec: str, **kwargs):
    """``hashing[:dim]`` or ``openai:<model>[@dim]``."""
    name, _, arg = spec.partition(":")
    if name == "hashing":
        return HashingEmbedder(dim=int(arg) if arg else 128)
    if name == "openai":
        model, _, dim = (arg or "text-embedding-ada-002").partition("@")
        return OpenAIEmbedder(model=model, dim=int(dim) if dim else 1536, **kwargs)
    raise ValueError(f"unknown embedding backend {spec!r}")


def parse_summary(content: str) -> str:
    """Best-effort extraction of a ``summary`` field from a JSON reply."""
    try:
        doc = json.loads(content)
    except (json.JSONDecodeError, TypeError):
        return content
    if isinstance(doc, dict) and isinstance(doc.get("summary"), str):
        return doc["summary"]
    return content
