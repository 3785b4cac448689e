"""Caption handling and per-utterance text embeddings.

Captions come in three styles (audioset, audiocaps, clotho). Embeddings
either arrive precomputed in a binary payload with a JSONL index, or are
produced by a deterministic toy embedder that maps each token to a fixed
pseudo-random unit vector.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dsp import FEATURE_MAGIC, FEATURE_VERSION
from .errors import (
    BadHeader,
    BadJson,
    DuplicateUtt,
    EmptyCaption,
    MissingIndexEntry,
    NonFinite,
    ShapeMismatch,
    UnknownStyle,
)

STYLES = ("audioset", "audiocaps", "clotho")

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class CaptionSet:
    utt_id: str
    captions: dict

    def __post_init__(self):
        if not self.utt_id:
            raise BadJson("caption set requires a non-empty utt_id")
        if not self.captions:
            raise BadJson(f"{self.utt_id}: caption set requires at least one style")
        for style, text in self.captions.items():
            if style not in STYLES:
                raise UnknownStyle(f"{self.utt_id}: unknown caption style {style!r}")
            if not isinstance(text, str):
                raise BadJson(f"{self.utt_id}: caption for {style!r} is not a string")


@dataclass(frozen=True, eq=False)
class TextEmbedding:
    utt_id: str
    matrix: np.ndarray
    style_spans: tuple

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] < 1:
            raise ShapeMismatch(f"{self.utt_id}: embedding must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(matrix)):
            raise NonFinite(f"{self.utt_id}: embedding contains non-finite values")
        spans = tuple((str(s), int(a), int(b)) for s, a, b in self.style_spans)
        cursor = 0
        seen = set()
        for style, start, end in spans:
            if style not in STYLES:
                raise UnknownStyle(f"{self.utt_id}: unknown style {style!r} in spans")
            if style in seen:
                raise ShapeMismatch(f"{self.utt_id}: style {style!r} appears twice in spans")
            if start != cursor or end <= start:
                raise ShapeMismatch(f"{self.utt_id}: spans must partition rows in order")
            seen.add(style)
            cursor = end
        # empty spans mark an externally produced, unsegmented matrix
        if spans and cursor != matrix.shape[0]:
            raise ShapeMismatch(f"{self.utt_id}: spans cover {cursor} rows, matrix has {matrix.shape[0]}")
        matrix.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "style_spans", spans)


@dataclass(frozen=True)
class ToyEmbedderConfig:
    dim: int = 768
    seed: int = 0
    vocab_hash_buckets: int = 1 << 20

    def __post_init__(self):
        if self.dim < 8:
            raise ShapeMismatch(f"embedding dim must be >= 8, got {self.dim}")
        if self.vocab_hash_buckets < 1:
            raise ShapeMismatch("vocab_hash_buckets must be positive")
        if not 0 <= self.seed <= _MASK64:
            raise ShapeMismatch("seed must fit in 64 bits")


# ---------------------------------------------------------------------------
# Caption JSONL


def load_captions(path) -> list:
    sets = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BadJson(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(obj, dict) or "utt_id" not in obj or "captions" not in obj:
                raise BadJson(f"{path}:{lineno}: expected utt_id and captions keys")
            if not isinstance(obj["captions"], dict):
                raise BadJson(f"{path}:{lineno}: captions must be an object")
            cs = CaptionSet(str(obj["utt_id"]), dict(obj["captions"]))
            if cs.utt_id in seen:
                raise DuplicateUtt(f"{path}:{lineno}: duplicate utt_id {cs.utt_id!r}")
            seen.add(cs.utt_id)
            sets.append(cs)
    return sets


def write_captions(path, caption_sets) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cs in caption_sets:
            ordered = {s: cs.captions[s] for s in STYLES if s in cs.captions}
            fh.write(json.dumps({"utt_id": cs.utt_id, "captions": ordered}, sort_keys=False))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Toy embedder


def tokenize(text: str) -> list:
    """Lowercase, then split into maximal [a-z0-9] runs."""
    return _TOKEN_RE.findall(text.lower())


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def mix64(x: int) -> int:
    z = x & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@lru_cache(maxsize=65536)
def _token_vector(bucket: int, dim: int, seed: int) -> np.ndarray:
    """Unit vector for one hash bucket, from a splitmix64 stream."""
    state0 = mix64(bucket ^ mix64(seed))
    with np.errstate(over="ignore"):
        steps = np.arange(1, dim + 1, dtype=np.uint64)
        states = np.uint64(state0) + np.uint64(_GOLDEN) * steps
        draws = _mix64_array(states)
    floats = (draws >> np.uint64(11)).astype(np.float64) * 2.0**-53 * 2.0 - 1.0
    floats /= np.sqrt(np.add.reduce(floats * floats))
    floats.flags.writeable = False
    return floats


def token_bucket(token: str, vocab_hash_buckets: int) -> int:
    return fnv1a64(token.encode("utf-8")) % vocab_hash_buckets


def toy_embed(caption_set: CaptionSet, cfg: ToyEmbedderConfig = ToyEmbedderConfig()) -> TextEmbedding:
    """Deterministic embedding: one unit vector per token, styles stacked
    in the fixed order audioset, audiocaps, clotho."""
    rows = []
    spans = []
    cursor = 0
    for style in STYLES:
        if style not in caption_set.captions:
            continue
        tokens = tokenize(caption_set.captions[style])
        if not tokens:
            raise EmptyCaption(f"{caption_set.utt_id}: style {style!r} has no tokens")
        for token in tokens:
            rows.append(_token_vector(token_bucket(token, cfg.vocab_hash_buckets), cfg.dim, cfg.seed))
        spans.append((style, cursor, cursor + len(tokens)))
        cursor += len(tokens)
    return TextEmbedding(caption_set.utt_id, np.stack(rows), tuple(spans))


def pool_text_vector(embedding: TextEmbedding) -> np.ndarray:
    """Mean over token rows; the per-utterance text summary."""
    return embedding.matrix.mean(axis=0)


# ---------------------------------------------------------------------------
# Embedding payload + index files


def index_path_for(path) -> str:
    return f"{path}.index.jsonl"


def write_embeddings(path, embeddings) -> None:
    """Binary payload of stacked feature blocks plus a JSONL index sidecar."""
    index_lines = []
    with open(path, "wb") as fh:
        for emb in embeddings:
            offset = fh.tell()
            values = emb.matrix.astype("<f4")
            rows, dims = values.shape
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<III", FEATURE_VERSION, rows, dims))
            fh.write(values.tobytes(order="C"))
            index_lines.append(
                {
                    "utt_id": emb.utt_id,
                    "offset": offset,
                    "L": rows,
                    "Dt": dims,
                    "spans": [[s, a, b] for s, a, b in emb.style_spans],
                }
            )
    with open(index_path_for(path), "w", encoding="utf-8") as fh:
        for line in index_lines:
            fh.write(json.dumps(line))
            fh.write("\n")


def _read_index(path) -> list:
    entries = []
    seen = set()
    with open(index_path_for(path), "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BadJson(f"{path}.index.jsonl:{lineno}: {exc}") from exc
            utt = str(obj["utt_id"])
            if utt in seen:
                raise DuplicateUtt(f"{path}.index.jsonl:{lineno}: duplicate utt_id {utt!r}")
            seen.add(utt)
            entries.append(obj)
    return entries


def _read_block(fh, path, entry) -> TextEmbedding:
    fh.seek(int(entry["offset"]))
    head = fh.read(16)
    if len(head) < 16 or head[:4] != FEATURE_MAGIC:
        raise BadHeader(f"{path}: no feature block at offset {entry['offset']}")
    version, rows, dims = struct.unpack("<III", head[4:16])
    if version != FEATURE_VERSION:
        raise BadHeader(f"{path}: unsupported feature block version {version}")
    if rows != int(entry["L"]) or dims != int(entry["Dt"]):
        raise ShapeMismatch(
            f"{path}: index declares {entry['L']}x{entry['Dt']} for {entry['utt_id']!r}, block is {rows}x{dims}"
        )
    payload = fh.read(rows * dims * 4)
    if len(payload) != rows * dims * 4:
        raise ShapeMismatch(f"{path}: truncated block for {entry['utt_id']!r}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(rows, dims)
    spans = tuple((s, a, b) for s, a, b in entry["spans"])
    return TextEmbedding(str(entry["utt_id"]), values, spans)


def load_embeddings(path) -> list:
    entries = _read_index(path)
    out = []
    with open(path, "rb") as fh:
        for entry in entries:
            out.append(_read_block(fh, path, entry))
    return out


def load_embedding_for(path, utt_id: str) -> TextEmbedding:
    for entry in _read_index(path):
        if str(entry["utt_id"]) == utt_id:
            with open(path, "rb") as fh:
                return _read_block(fh, path, entry)
    raise MissingIndexEntry(f"{path}: no index entry for {utt_id!r}")
