"""Embedding providers: a deterministic built-in and a line-protocol client.

The built-in provider needs no model downloads: it hashes token counts
into a fixed number of buckets and applies a seeded random projection,
then unit-normalizes.  Same text, same bytes, every run.

External encoders plug in over a line protocol (subprocess stdio or a
TCP endpoint): one request object ``{"id": ..., "text": ...}`` per
line in, one ``{"id": ..., "vec": [...]}`` per line out.  Requests are
issued in bounded batches and responses are reordered by id, so batch
results are independent of provider-side reply interleaving.
"""

from __future__ import annotations

import hashlib
import json
import socket
import subprocess
from typing import Protocol, Sequence

import numpy as np

from .lexicon import tokenize


class EmbeddingError(Exception):
    """Raised for provider protocol violations and degenerate vectors."""


class Embedder(Protocol):
    """Minimal provider interface: a fixed dimension and embed()."""

    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def is_zero(vec: np.ndarray) -> bool:
    return not np.any(vec)


class HashingEmbedder:
    """Deterministic test embedder: hashed token counts, seeded projection.

    Tokens hash (sha1) into ``dim`` buckets; bucket counts are scaled by
    a seeded Gaussian diagonal projection and unit-normalized.  Empty
    text embeds to the zero vector, which callers treat as flagged.
    """

    def __init__(self, dim: int = 64, seed: int = 0) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._projection = np.random.default_rng(seed).standard_normal(dim)
        self._bucket_cache: dict[str, int] = {}

    def _bucket(self, token: str) -> int:
        b = self._bucket_cache.get(token)
        if b is None:
            digest = hashlib.sha1(token.encode("utf-8")).digest()
            b = int.from_bytes(digest[:8], "big") % self.dim
            self._bucket_cache[token] = b
        return b

    def embed(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text).tokens:
            counts[self._bucket(token)] += 1.0
        vec = counts * self._projection
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            return np.zeros(self.dim, dtype=np.float64)
        return vec / norm

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


class _LineChannel:
    """One request/response line transport (subprocess pipe or socket)."""

    def send_lines(self, lines: list[str]) -> list[str]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class _SubprocessChannel(_LineChannel):
    def __init__(self, cmd: Sequence[str]) -> None:
        self._proc = subprocess.Popen(
            list(cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def send_lines(self, lines: list[str]) -> list[str]:
        if self._proc.poll() is not None:
            raise EmbeddingError("embedding subprocess exited")
        assert self._proc.stdin is not None and self._proc.stdout is not None
        for line in lines:
            self._proc.stdin.write(line + "\n")
        self._proc.stdin.flush()
        out = []
        for _ in lines:
            reply = self._proc.stdout.readline()
            if not reply:
                raise EmbeddingError("embedding subprocess closed its stream")
            out.append(reply)
        return out

    def close(self) -> None:
        if self._proc.poll() is None:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class _TcpChannel(_LineChannel):
    def __init__(self, host: str, port: int) -> None:
        self._sock = socket.create_connection((host, port))
        self._reader = self._sock.makefile("r", encoding="utf-8")
        self._writer = self._sock.makefile("w", encoding="utf-8")

    def send_lines(self, lines: list[str]) -> list[str]:
        for line in lines:
            self._writer.write(line + "\n")
        self._writer.flush()
        out = []
        for _ in lines:
            reply = self._reader.readline()
            if not reply:
                raise EmbeddingError("embedding endpoint closed the connection")
            out.append(reply)
        return out

    def close(self) -> None:
        self._sock.close()


class LineProtocolEmbedder:
    """Client for an external encoder speaking the JSONL line protocol."""

    def __init__(
        self,
        cmd: Sequence[str] | None = None,
        endpoint: tuple[str, int] | None = None,
        batch_size: int = 64,
    ) -> None:
        if (cmd is None) == (endpoint is None):
            raise ValueError("provide exactly one of cmd or endpoint")
        self._channel: _LineChannel
        if cmd is not None:
            self._channel = _SubprocessChannel(cmd)
        else:
            assert endpoint is not None
            self._channel = _TcpChannel(*endpoint)
        self._batch_size = batch_size
        self.dim = 0  # learned from the first response
        self._next_id = 0

    def _request(self, texts: Sequence[str]) -> list[np.ndarray]:
        ids = list(range(self._next_id, self._next_id + len(texts)))
        self._next_id += len(texts)
        lines = [
            json.dumps({"id": i, "text": t}, ensure_ascii=False)
            for i, t in zip(ids, texts)
        ]
        replies = self._channel.send_lines(lines)
        by_id: dict[int, np.ndarray] = {}
        for reply in replies:
            try:
                obj = json.loads(reply)
                vec = np.asarray(obj["vec"], dtype=np.float64)
                rid = int(obj["id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise EmbeddingError(f"malformed embedder response: {reply!r}") from exc
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"non-finite embedding for id {rid}")
            if self.dim == 0:
                self.dim = vec.shape[0]
            if vec.shape != (self.dim,):
                raise EmbeddingError(
                    f"dimension changed mid-run: got {vec.shape[0]}, expected {self.dim}"
                )
            by_id[rid] = vec
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise EmbeddingError(f"missing responses for ids {missing}")
        out = []
        for i in ids:
            vec = by_id[i]
            norm = float(np.linalg.norm(vec))
            out.append(vec / norm if norm > 0 else vec)
        return out

    def embed(self, text: str) -> np.ndarray:
        return self._request([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for start in range(0, len(texts), self._batch_size):
            out.extend(self._request(texts[start : start + self._batch_size]))
        return out

    def close(self) -> None:
        self._channel.close()


def make_embedder(spec: dict) -> Embedder:
    """Build a provider from its config object (see StudyConfig)."""
    kind = spec.get("type", "builtin")
    if kind == "builtin":
        return HashingEmbedder(
            dim=int(spec.get("dim", 64)), seed=int(spec.get("seed", 0))
        )
    if kind == "subprocess":
        return LineProtocolEmbedder(
            cmd=spec["cmd"], batch_size=int(spec.get("batch_size", 64))
        )
    if kind == "tcp":
        return LineProtocolEmbedder(
            endpoint=(spec["host"], int(spec["port"])),
            batch_size=int(spec.get("batch_size", 64)),
        )
    raise ValueError(f"unknown embedder type: {kind!r}")
