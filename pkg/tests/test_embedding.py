"""Embedding providers: the deterministic built-in and the line protocol."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

from feedshift.embedding import (
    EmbeddingError,
    HashingEmbedder,
    LineProtocolEmbedder,
    make_embedder,
)

_EMBEDDER_SCRIPT = Path(__file__).parent / "data" / "line_embedder.py"


def test_builtin_same_text_same_bits(embedder):
    a = embedder.embed("the quick brown fox")
    b = embedder.embed("the quick brown fox")
    assert a.tobytes() == b.tobytes()


def test_builtin_unit_norm_and_dim(embedder):
    v = embedder.embed("hello world")
    assert v.shape == (64,)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-9)


def test_builtin_empty_text_is_zero_vector(embedder):
    assert not np.any(embedder.embed(""))
    assert not np.any(embedder.embed("https://only.a.url/x"))


def test_builtin_different_seeds_differ():
    text = "the quick brown fox jumps over the lazy dog"
    a = HashingEmbedder(dim=64, seed=0).embed(text)
    b = HashingEmbedder(dim=64, seed=1).embed(text)
    assert not np.allclose(a, b)


def test_subprocess_provider_roundtrip():
    client = LineProtocolEmbedder(cmd=[sys.executable, str(_EMBEDDER_SCRIPT)])
    try:
        vec = client.embed("abba cd")
        assert client.dim == 8
        # 2 a's, 2 b's, 1 c, 1 d; normalized
        raw = np.array([2.0, 2.0, 1.0, 1.0, 0, 0, 0, 0])
        assert np.allclose(vec, raw / np.linalg.norm(raw))
    finally:
        client.close()


def test_subprocess_provider_batch_order_preserved():
    client = LineProtocolEmbedder(
        cmd=[sys.executable, str(_EMBEDDER_SCRIPT)], batch_size=2
    )
    try:
        texts = ["a", "b", "c", "ab", "abc"]
        vecs = client.embed_batch(texts)
        assert len(vecs) == 5
        assert vecs[0][0] == pytest.approx(1.0)  # "a" -> e_a
        assert vecs[1][1] == pytest.approx(1.0)  # "b" -> e_b
        assert vecs[4][0] == pytest.approx(1 / np.sqrt(3))
    finally:
        client.close()


def test_make_embedder_builtin_spec():
    emb = make_embedder({"type": "builtin", "dim": 32, "seed": 5})
    assert emb.embed("x").shape == (32,)


def test_make_embedder_rejects_unknown():
    with pytest.raises(ValueError, match="unknown embedder"):
        make_embedder({"type": "quantum"})


def test_line_protocol_requires_exactly_one_transport():
    with pytest.raises(ValueError):
        LineProtocolEmbedder()


def test_subprocess_provider_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.py"
    bad.write_text(
        "import sys\n"
        "for line in iter(sys.stdin.readline, ''):\n"
        "    print('nope', flush=True)\n"
    )
    client = LineProtocolEmbedder(cmd=[sys.executable, str(bad)])
    try:
        with pytest.raises(EmbeddingError, match="malformed"):
            client.embed("x")
    finally:
        client.close()
