"""Append-only JSON-lines cache for refined texts and embeddings."""
from __future__ import annotations

import json
import threading
from pathlib import Path


class JsonlCache:
    """Persistent map ``(kind, index, model_tag, content_hash) -> payload``.

    Each record is one line ``{kind, index, model_tag, content_hash, payload}``.
    The first write for a key wins; later writes with the same key are ignored,
    so a cached LLM response is frozen once stored.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._data: dict[tuple, object] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    key = (rec["kind"], int(rec["index"]), rec["model_tag"], rec["content_hash"])
                    self._data.setdefault(key, rec["payload"])

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key) -> bool:
        return tuple(key) in self._data

    def get(self, kind: str, index: int, model_tag: str, content_hash: str):
        return self._data.get((kind, int(index), model_tag, content_hash))

    def put(self, kind: str, index: int, model_tag: str, content_hash: str, payload):
        key = (kind, int(index), model_tag, content_hash)
        with self._lock:
            if key in self._data:
                return self._data[key]
            # store what a reader would get back from disk
            payload = json.loads(json.dumps(payload))
            self._data[key] = payload
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                rec = {"kind": kind, "index": int(index), "model_tag": model_tag,
                       "content_hash": content_hash, "payload": payload}
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            return payload
