"""Tokenization and hashed embedding tables.

Shared by the per-task classifiers and the retrieval encoder. The
tokenizer splits Latin-script text on whitespace/punctuation (lowercased
alphanumeric runs) and emits CJK codepoints as single-character tokens,
so the same scheme works for English and Chinese corpora. Tokens map to
embedding rows through a stable 64-bit FNV-1a hash; there is no stored
vocabulary, only a bucket count.
"""

from __future__ import annotations

import random
import unicodedata
from array import array

TOKENIZER_VERSION = "ws-cjk-1"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


def _is_cjk(cp: int) -> bool:
    return (
        0x3400 <= cp <= 0x4DBF
        or 0x4E00 <= cp <= 0x9FFF
        or 0xF900 <= cp <= 0xFAFF
        or 0x3040 <= cp <= 0x30FF
        or 0x20000 <= cp <= 0x2A6DF
    )


def tokenize(text: str) -> list[str]:
    """Split into lowercased alphanumeric runs; CJK chars stand alone."""
    tokens: list[str] = []
    buf: list[str] = []
    for ch in text:
        if _is_cjk(ord(ch)):
            if buf:
                tokens.append("".join(buf))
                buf = []
            tokens.append(ch)
        elif ch.isalnum():
            buf.append(ch.lower())
        else:
            if buf:
                tokens.append("".join(buf))
                buf = []
    if buf:
        tokens.append("".join(buf))
    return tokens


def normalize_whitespace(text: str) -> str:
    """NFC-normalize and collapse whitespace runs to single spaces."""
    return " ".join(unicodedata.normalize("NFC", text).split())


class HashedEmbedding:
    """Flat (n_buckets x dim) embedding table with seeded init.

    init="dense": every entry uniform in [-scale, scale]; suits mean
    pooling. init="sparse": each row activates dim//16 positions with
    values in [scale/2, scale] and zeros elsewhere, so a max pool over
    rows encodes token presence; suits the classifier.
    """

    def __init__(self, n_buckets: int, dim: int, seed: int, scale: float = 0.1,
                 table: array | None = None, init: str = "dense"):
        if init not in ("dense", "sparse"):
            raise ValueError(f"unknown init {init!r}")
        self.n_buckets = n_buckets
        self.dim = dim
        self.seed = seed
        self.scale = scale
        self.init = init
        if table is None:
            rng = random.Random(seed)
            if init == "dense":
                table = array("d", (rng.uniform(-scale, scale)
                                    for _ in range(n_buckets * dim)))
            else:
                k = max(1, dim // 16)
                table = array("d", bytes(8 * n_buckets * dim))
                for r in range(n_buckets):
                    for j in rng.sample(range(dim), k):
                        table[r * dim + j] = rng.uniform(scale / 2, scale)
        if len(table) != n_buckets * dim:
            raise ValueError("embedding table size does not match n_buckets * dim")
        self.table = table

    def bucket(self, token: str) -> int:
        return fnv1a64(token.encode("utf-8")) % self.n_buckets

    def ids_for(self, tokens: list[str]) -> array:
        return array("q", (self.bucket(t) for t in tokens))

    def ids_for_text(self, text: str) -> array:
        return self.ids_for(tokenize(text))
