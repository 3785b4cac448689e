import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atcadet import text as tx
from atcadet.errors import (
    BadJson,
    DuplicateUtt,
    EmptyCaption,
    MissingIndexEntry,
    ShapeMismatch,
    UnknownStyle,
)
from atcadet.text import CaptionSet, TextEmbedding, ToyEmbedderConfig


def _oracle_fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) % (1 << 64)
    return h


def _oracle_mix64(x: int) -> int:
    m = (1 << 64) - 1
    z = x & m
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & m
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & m
    return z ^ (z >> 31)


def _oracle_token_vector(token: str, cfg: ToyEmbedderConfig) -> np.ndarray:
    bucket = _oracle_fnv1a64(token.encode()) % cfg.vocab_hash_buckets
    state = _oracle_mix64(bucket ^ _oracle_mix64(cfg.seed))
    vals = []
    for _ in range(cfg.dim):
        state = (state + 0x9E3779B97F4A7C15) % (1 << 64)
        z = _oracle_mix64(state)
        vals.append((z >> 11) * 2.0**-53 * 2.0 - 1.0)
    return np.array(vals)


class TestCaptions:
    def test_single_style_decode(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"utt_id":"u1","captions":{"clotho":"rain on a roof"}}\n')
        sets = tx.load_captions(p)
        assert len(sets) == 1
        assert sets[0].utt_id == "u1"
        assert sets[0].captions == {"clotho": "rain on a roof"}

    def test_duplicate_utt(self, tmp_path):
        p = tmp_path / "c.jsonl"
        line = '{"utt_id":"u1","captions":{"clotho":"x"}}\n'
        p.write_text(line + line)
        with pytest.raises(DuplicateUtt):
            tx.load_captions(p)

    def test_unknown_style(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"utt_id":"u1","captions":{"audioset2":"x"}}\n')
        with pytest.raises(UnknownStyle):
            tx.load_captions(p)

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"utt_id": "u1", "captions": {\n')
        with pytest.raises(BadJson):
            tx.load_captions(p)

    def test_empty_captions_rejected(self):
        with pytest.raises(BadJson):
            CaptionSet("u1", {})

    def test_write_read_round_trip(self, tmp_path):
        p = tmp_path / "c.jsonl"
        sets = [
            CaptionSet("a", {"audioset": "dog bark", "clotho": "a dog barking outside"}),
            CaptionSet("b", {"audiocaps": "rain falls"}),
        ]
        tx.write_captions(p, sets)
        again = tx.load_captions(p)
        assert [c.utt_id for c in again] == ["a", "b"]
        assert again[0].captions == sets[0].captions


class TestTokenize:
    def test_lowercase_and_punctuation(self):
        assert tx.tokenize("Rain, on a ROOF!") == ["rain", "on", "a", "roof"]

    def test_digits_kept(self):
        assert tx.tokenize("50Hz hum") == ["50hz", "hum"]

    def test_empty(self):
        assert tx.tokenize("...") == []


class TestToyEmbed:
    def test_matches_independent_reimplementation(self):
        cfg = ToyEmbedderConfig(dim=32, seed=7, vocab_hash_buckets=4096)
        emb = tx.toy_embed(CaptionSet("u", {"audioset": "rain"}), cfg)
        oracle = _oracle_token_vector("rain", cfg)
        scaled = emb.matrix[0] * np.linalg.norm(oracle)
        np.testing.assert_allclose(scaled, oracle, atol=1e-12)

    def test_determinism(self):
        cs = CaptionSet("u", {"audioset": "dog bark", "clotho": "a dog barking"})
        a = tx.toy_embed(cs)
        b = tx.toy_embed(cs)
        np.testing.assert_array_equal(a.matrix, b.matrix)
        assert a.style_spans == b.style_spans

    def test_repeated_token_rows_identical(self):
        emb = tx.toy_embed(CaptionSet("u", {"audiocaps": "rain rain"}))
        np.testing.assert_array_equal(emb.matrix[0], emb.matrix[1])

    def test_rows_unit_norm(self):
        emb = tx.toy_embed(CaptionSet("u", {"clotho": "wind in tall trees at night"}))
        np.testing.assert_allclose(np.linalg.norm(emb.matrix, axis=1), 1.0, atol=1e-6)

    def test_style_order_fixed(self):
        a = tx.toy_embed(CaptionSet("u", {"clotho": "wind", "audioset": "rain"}))
        b = tx.toy_embed(CaptionSet("u", {"audioset": "rain", "clotho": "wind"}))
        np.testing.assert_array_equal(a.matrix, b.matrix)
        assert a.style_spans == (("audioset", 0, 1), ("clotho", 1, 2))

    def test_empty_caption(self):
        with pytest.raises(EmptyCaption):
            tx.toy_embed(CaptionSet("u", {"audioset": "!!!"}))

    def test_default_dim(self):
        emb = tx.toy_embed(CaptionSet("u", {"audioset": "rain"}))
        assert emb.matrix.shape == (1, 768)

    @given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), min_size=1))
    @settings(max_examples=50, deadline=None)
    def test_pure_in_caption_text(self, caption):
        cfg = ToyEmbedderConfig(dim=16, seed=3, vocab_hash_buckets=64)
        if not tx.tokenize(caption):
            return
        first = tx.toy_embed(CaptionSet("u", {"audiocaps": caption}), cfg)
        second = tx.toy_embed(CaptionSet("u", {"audiocaps": caption}), cfg)
        np.testing.assert_array_equal(first.matrix, second.matrix)


class TestPooling:
    def test_single_row_identity(self):
        emb = TextEmbedding("u", np.array([[1.0, 2.0, 3.0]]), (("audioset", 0, 1),))
        np.testing.assert_array_equal(tx.pool_text_vector(emb), [1.0, 2.0, 3.0])

    def test_symmetry(self):
        emb = TextEmbedding("u", np.array([[1.0, 0.0], [0.0, 1.0]]), (("audioset", 0, 2),))
        np.testing.assert_array_equal(tx.pool_text_vector(emb), [0.5, 0.5])

    def test_matches_bruteforce_sum(self):
        rng = np.random.default_rng(6)
        m = rng.normal(size=(5, 3))
        emb = TextEmbedding("u", m, (("clotho", 0, 5),))
        expected = np.array([sum(m[i, j] for i in range(5)) / 5.0 for j in range(3)])
        np.testing.assert_allclose(tx.pool_text_vector(emb), expected, atol=1e-12)

    def test_row_permutation_commutes(self):
        rng = np.random.default_rng(7)
        m = rng.normal(size=(6, 4))
        perm = rng.permutation(6)
        a = tx.pool_text_vector(TextEmbedding("u", m, (("audioset", 0, 6),)))
        b = tx.pool_text_vector(TextEmbedding("u", m[perm], (("audioset", 0, 6),)))
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestEmbeddingFiles:
    def _random_embeddings(self, rng, n=3):
        out = []
        for i in range(n):
            rows_a = int(rng.integers(1, 4))
            rows_b = int(rng.integers(1, 4))
            m = rng.normal(size=(rows_a + rows_b, 8)).astype(np.float32).astype(np.float64)
            spans = (("audioset", 0, rows_a), ("clotho", rows_a, rows_a + rows_b))
            out.append(TextEmbedding(f"u{i}", m, spans))
        return out

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        embs = self._random_embeddings(rng)
        p = tmp_path / "emb.bin"
        tx.write_embeddings(p, embs)
        again = tx.load_embeddings(p)
        assert [e.utt_id for e in again] == [e.utt_id for e in embs]
        for a, b in zip(again, embs):
            np.testing.assert_array_equal(a.matrix, b.matrix)
            assert a.style_spans == b.style_spans

    def test_index_length_disagreement(self, tmp_path):
        rng = np.random.default_rng(9)
        embs = self._random_embeddings(rng, n=1)
        p = tmp_path / "emb.bin"
        tx.write_embeddings(p, embs)
        idx = tmp_path / "emb.bin.index.jsonl"
        entry = json.loads(idx.read_text())
        entry["L"] += 1
        entry["spans"][-1][2] += 1
        idx.write_text(json.dumps(entry) + "\n")
        with pytest.raises(ShapeMismatch):
            tx.load_embeddings(p)

    def test_empty_index(self, tmp_path):
        p = tmp_path / "emb.bin"
        tx.write_embeddings(p, [])
        assert tx.load_embeddings(p) == []

    def test_lookup_single(self, tmp_path):
        rng = np.random.default_rng(10)
        embs = self._random_embeddings(rng)
        p = tmp_path / "emb.bin"
        tx.write_embeddings(p, embs)
        got = tx.load_embedding_for(p, "u1")
        np.testing.assert_array_equal(got.matrix, embs[1].matrix)
        with pytest.raises(MissingIndexEntry):
            tx.load_embedding_for(p, "nope")


class TestSpanValidation:
    def test_gap_rejected(self):
        with pytest.raises(ShapeMismatch):
            TextEmbedding("u", np.ones((3, 2)), (("audioset", 0, 1), ("clotho", 2, 3)))

    def test_short_cover_rejected(self):
        with pytest.raises(ShapeMismatch):
            TextEmbedding("u", np.ones((3, 2)), (("audioset", 0, 2),))

    def test_unknown_style_rejected(self):
        with pytest.raises(UnknownStyle):
            TextEmbedding("u", np.ones((1, 2)), (("freeform", 0, 1),))
