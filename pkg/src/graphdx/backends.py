"""Chat and embedding backends: deterministic offline mocks plus HTTP clients.

Every embedding returned by any backend is a unit-norm float64 numpy vector,
so cosine similarity reduces to a dot product everywhere downstream. The
mocks are fully deterministic: chat responses are keyed by a stable hash of
(system_text, user_text), and mock embeddings are seeded by the text bytes.
Tests needing controlled cosine geometry inject exact vectors through an
embedding table instead of relying on the pseudo-random projection.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from .config import AppConfig

log = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-9


class BackendError(RuntimeError):
    """Backend call failed. `retriable` hints whether retrying may help."""

    def __init__(self, message: str, *, retriable: bool = False, status: int | None = None):
        super().__init__(message)
        self.retriable = retriable
        self.status = status


class MissingScriptError(BackendError):
    """Mock chat had no entry for the exchange and no fallback was set."""


@dataclass(frozen=True, slots=True)
class ChatExchange:
    system_text: str
    user_text: str
    response_text: str
    model_tag: str


class ChatBackend(Protocol):
    model_tag: str

    def chat(self, system_text: str, user_text: str) -> str: ...


class EmbeddingBackend(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def exchange_key(system_text: str, user_text: str) -> str:
    """Stable key for a (system, user) exchange. Used by mock transcripts."""
    h = hashlib.sha256()
    h.update(system_text.encode("utf-8"))
    h.update(b"\x1e")
    h.update(user_text.encode("utf-8"))
    return h.hexdigest()


def unit(vector: np.ndarray) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < UNIT_NORM_TOL:
        raise BackendError("cannot normalize a zero-norm vector")
    return v / norm


class MockChatBackend:
    """Transcript-keyed chat mock. Same input always yields the same output."""

    model_tag = "mock-chat"

    def __init__(self, script: dict[str, str] | None = None, fallback: str | None = None):
        self._script = dict(script or {})
        self._fallback = fallback

    @classmethod
    def from_transcript(cls, path: str | Path, fallback: str | None = None) -> "MockChatBackend":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in doc.items()
        ):
            raise BackendError(f"transcript must be a JSON object of strings: {path}")
        return cls(script=doc, fallback=fallback)

    def script_exchange(self, system_text: str, user_text: str, response: str) -> None:
        """Register a response for an exact (system, user) pair."""
        self._script[exchange_key(system_text, user_text)] = response

    def chat(self, system_text: str, user_text: str) -> str:
        key = exchange_key(system_text, user_text)
        if key in self._script:
            return self._script[key]
        if self._fallback is not None:
            return self._fallback
        raise MissingScriptError(
            f"no scripted response for exchange {key[:12]}… and no fallback configured"
        )


class MockEmbeddingBackend:
    """Deterministic embedding mock.

    Texts present in the optional table map to the exact vector given
    (renormalized); any other text maps to a pseudo-random unit vector whose
    rng is seeded from the text bytes, so identical texts always agree.
    """

    model_tag = "mock-embed"

    def __init__(self, dimension: int = 32, table: dict[str, Sequence[float]] | None = None):
        if dimension < 2:
            raise ValueError(f"embedding dimension must be >= 2, got {dimension}")
        self.dimension = dimension
        self._table: dict[str, np.ndarray] = {}
        for text, values in (table or {}).items():
            v = np.asarray(list(values), dtype=np.float64)
            if v.shape != (dimension,):
                raise ValueError(
                    f"table vector for {text!r} has shape {v.shape}, expected ({dimension},)"
                )
            self._table[text] = unit(v)

    @classmethod
    def from_table_file(cls, path: str | Path, dimension: int | None = None) -> "MockEmbeddingBackend":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict) or not doc:
            raise ValueError(f"embedding table must be a non-empty JSON object: {path}")
        dims = {len(v) for v in doc.values()}
        if len(dims) != 1:
            raise ValueError(f"embedding table vectors have mixed dimensions: {sorted(dims)}")
        return cls(dimension=dimension or dims.pop(), table=doc)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if len(texts) == 0:
            raise ValueError("embed requires a non-empty list of texts")
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> np.ndarray:
        hit = self._table.get(text)
        if hit is not None:
            return hit.copy()
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        return unit(rng.standard_normal(self.dimension))


class RecordingChat:
    """Wraps a chat backend and records every exchange for inspection."""

    def __init__(self, inner: ChatBackend):
        self._inner = inner
        self.exchanges: list[ChatExchange] = []

    @property
    def model_tag(self) -> str:
        return self._inner.model_tag

    def chat(self, system_text: str, user_text: str) -> str:
        response = self._inner.chat(system_text, user_text)
        self.exchanges.append(
            ChatExchange(
                system_text=system_text,
                user_text=user_text,
                response_text=response,
                model_tag=self._inner.model_tag,
            )
        )
        return response


class TokenBucket:
    """Classic token bucket; acquire() blocks until a token is available."""

    def __init__(self, rate_per_sec: float, capacity: int):
        if rate_per_sec <= 0 or capacity < 1:
            raise ValueError("rate must be positive and capacity >= 1")
        self._rate = rate_per_sec
        self._capacity = float(capacity)
        self._tokens = float(capacity)
        self._updated = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self._capacity, self._tokens + (now - self._updated) * self._rate)
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            time.sleep(wait)


class LiveChatBackend:
    """Chat-completions client over HTTP+JSON (OpenAI-compatible shape)."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "",
        client: httpx.Client | None = None,
        bucket: TokenBucket | None = None,
        timeout: float = 60.0,
    ):
        self.model_tag = model
        self._model = model
        self._bucket = bucket
        headers = {}
        key = os.environ.get(api_key_env, "") if api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(
            base_url=base_url, headers=headers, timeout=timeout
        )

    def chat(self, system_text: str, user_text: str) -> str:
        if self._bucket is not None:
            self._bucket.acquire()
        payload = {
            "model": self._model,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
        }
        data = _post_json(self._client, "/chat/completions", payload)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {exc}") from exc
        if not isinstance(text, str) or not text:
            raise BackendError("chat response content is empty")
        return text


class LiveEmbeddingBackend:
    """Embeddings client over HTTP+JSON; renormalizes every vector on receipt."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "",
        client: httpx.Client | None = None,
        bucket: TokenBucket | None = None,
        timeout: float = 60.0,
    ):
        self.model_tag = model
        self._model = model
        self._bucket = bucket
        self.dimension = -1  # learned from the first response
        headers = {}
        key = os.environ.get(api_key_env, "") if api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(
            base_url=base_url, headers=headers, timeout=timeout
        )

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if len(texts) == 0:
            raise ValueError("embed requires a non-empty list of texts")
        if self._bucket is not None:
            self._bucket.acquire()
        payload = {"model": self._model, "input": list(texts)}
        data = _post_json(self._client, "/embeddings", payload)
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            vectors = [unit(np.asarray(r["embedding"], dtype=np.float64)) for r in rows]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed embedding response: {exc}") from exc
        if len(vectors) != len(texts):
            raise BackendError(
                f"embedding response returned {len(vectors)} vectors for {len(texts)} inputs"
            )
        if self.dimension == -1:
            self.dimension = int(vectors[0].shape[0])
        return vectors


def _post_json(client: httpx.Client, path: str, payload: dict) -> dict:
    try:
        response = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        raise BackendError(f"backend request failed: {exc}", retriable=True) from exc
    if response.status_code >= 400:
        retriable = response.status_code == 429 or response.status_code >= 500
        raise BackendError(
            f"backend returned HTTP {response.status_code}: {response.text[:200]}",
            retriable=retriable,
            status=response.status_code,
        )
    try:
        return response.json()
    except ValueError as exc:
        raise BackendError(f"backend returned non-JSON body: {exc}") from exc


def make_backends(cfg: AppConfig) -> tuple[ChatBackend, EmbeddingBackend]:
    """Build the (chat, embed) pair described by the config."""
    if cfg.backend.mode == "mock":
        script: dict[str, str] = {}
        if cfg.mock.transcript_path:
            chat = MockChatBackend.from_transcript(
                cfg.mock.transcript_path, fallback=cfg.mock.chat_fallback
            )
        else:
            chat = MockChatBackend(script, fallback=cfg.mock.chat_fallback)
        if cfg.mock.embedding_table_path:
            embed = MockEmbeddingBackend.from_table_file(cfg.mock.embedding_table_path)
        else:
            embed = MockEmbeddingBackend(dimension=cfg.mock.embed_dimension)
        return chat, embed
    if cfg.backend.mode == "live":
        bucket = TokenBucket(rate_per_sec=4.0, capacity=8)
        chat_live = LiveChatBackend(
            cfg.backend.base_url, cfg.backend.chat_model, cfg.backend.api_key_env, bucket=bucket
        )
        embed_live = LiveEmbeddingBackend(
            cfg.backend.base_url, cfg.backend.embed_model, cfg.backend.api_key_env, bucket=bucket
        )
        return chat_live, embed_live
    raise ValueError(f"unknown backend mode: {cfg.backend.mode!r}")
