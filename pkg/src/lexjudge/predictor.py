"""Per-task text classifier supplying candidate labels.

Architecture: hashed-embedding token rows, column-wise max pooling, one
affine layer with softmax. Trained by seeded mini-batch gradient
descent on mean cross-entropy; both the head and the embedding table
are learned (pooling routes gradients to the row that won each column).
The encoder is pluggable at the HashedEmbedding level so a stronger
text encoder can back the same head without touching this module's
pooling/softmax code.
"""

from __future__ import annotations

import json
import logging
import math
import random
import struct
from array import array
from dataclasses import dataclass

from . import kernels as K
from .corpus import (
    DEFAULT_TERM_BINS,
    LabelVocab,
    bin_prison_term,
    build_label_vocab,
    term_vocab_from_bins,
)
from .errors import (
    BadNError,
    DegenerateLabelsError,
    DimensionMismatchError,
    EmptyAfterTokenizationError,
    ModelFormatError,
    NonFiniteLossError,
    VocabMismatchError,
)
from .text import TOKENIZER_VERSION, HashedEmbedding

log = logging.getLogger("lexjudge.predictor")

DEFAULT_DIM = 64
DEFAULT_BUCKETS = 4096

_MAGIC = b"LJPM"
_FORMAT_VERSION = 1


class EmbeddingSequence:
    """One embedding row per token, as a flat (n_rows x dim) buffer."""

    def __init__(self, data: array, n_rows: int, dim: int):
        if len(data) != n_rows * dim:
            raise DimensionMismatchError("embedding buffer does not match its shape")
        self.data = data
        self.n_rows = n_rows
        self.dim = dim

    def row(self, i: int) -> array:
        return self.data[i * self.dim:(i + 1) * self.dim]

    def rows(self):
        for i in range(self.n_rows):
            yield self.row(i)


class ProbDist:
    """Probability vector over one task's labels; sums to 1 within 1e-6."""

    def __init__(self, probs):
        probs = array("d", probs)
        total = 0.0
        for p in probs:
            if p < 0:
                raise ValueError("probabilities must be non-negative")
            total += p
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        self.probs = probs

    def __len__(self):
        return len(self.probs)

    def argmax(self) -> int:
        best = 0
        for i in range(1, len(self.probs)):
            if self.probs[i] > self.probs[best]:
                best = i
        return best


@dataclass(frozen=True)
class CandidateSet:
    """Top-n labels of one task, descending probability."""

    task: str
    labels: list
    probs: list
    indices: list

    def __len__(self):
        return len(self.labels)


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 0.1
    batch: int = 32
    seed: int = 0
    dim: int = DEFAULT_DIM
    n_buckets: int = DEFAULT_BUCKETS


class PredictiveModel:
    """Encoder + classification head for one task.

    File format (all integers little-endian):
    magic "LJPM" | u32 format version | u64 header length | header JSON
    (task, m, d, n_buckets, seed/scale/init, tokenizer version, vocab +
    vocab hash, term bins, training log) | embedding table float64 |
    head weights float64 (m*d) | head bias float64 (m). Serialization
    round-trips bit-exactly; loading verifies the embedded vocab hash.
    """

    def __init__(self, task: str, embedding: HashedEmbedding, vocab: LabelVocab,
                 w: array | None = None, b: array | None = None,
                 term_bins=None, train_log=None, final_report=None):
        self.task = task
        self.embedding = embedding
        self.vocab = vocab
        m, d = len(vocab), embedding.dim
        self.w = w if w is not None else array("d", bytes(8 * m * d))
        self.b = b if b is not None else array("d", bytes(8 * m))
        if len(self.w) != m * d or len(self.b) != m:
            raise DimensionMismatchError("head shapes do not match (m, d)")
        self.term_bins = list(term_bins) if term_bins is not None else None
        self.train_log = train_log or []
        self.final_report = final_report

    @property
    def m(self) -> int:
        return len(self.vocab)

    @property
    def d(self) -> int:
        return self.embedding.dim

    def predict(self, fact: str) -> ProbDist:
        return pool_and_classify(encode(fact, self.embedding), self)

    # -- serialization ----------------------------------------------------

    def to_bytes(self) -> bytes:
        header = {
            "task": self.task,
            "m": self.m,
            "d": self.d,
            "n_buckets": self.embedding.n_buckets,
            "seed": self.embedding.seed,
            "scale": self.embedding.scale,
            "init": self.embedding.init,
            "tokenizer_version": TOKENIZER_VERSION,
            "vocab": self.vocab.to_json_obj(),
            "vocab_hash": self.vocab.vocab_hash,
            "term_bins": self.term_bins,
            "train_log": self.train_log,
            "final_report": self.final_report,
        }
        hj = json.dumps(header, ensure_ascii=True, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
        return b"".join([
            _MAGIC, struct.pack("<I", _FORMAT_VERSION), struct.pack("<Q", len(hj)), hj,
            self.embedding.table.tobytes(), self.w.tobytes(), self.b.tobytes(),
        ])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PredictiveModel":
        if blob[:4] != _MAGIC:
            raise ModelFormatError("not a predictive model file")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != _FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {version}")
        (hlen,) = struct.unpack_from("<Q", blob, 8)
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
        vocab = LabelVocab.from_json_obj(header["vocab"])
        if vocab.vocab_hash != header["vocab_hash"]:
            raise VocabMismatchError("embedded vocab hash does not match the stored vocab")
        m, d, buckets = header["m"], header["d"], header["n_buckets"]
        off = 16 + hlen
        table = array("d")
        table.frombytes(blob[off:off + 8 * buckets * d])
        off += 8 * buckets * d
        w = array("d")
        w.frombytes(blob[off:off + 8 * m * d])
        off += 8 * m * d
        b = array("d")
        b.frombytes(blob[off:off + 8 * m])
        emb = HashedEmbedding(buckets, d, header["seed"], header["scale"],
                              table=table, init=header.get("init", "dense"))
        return cls(header["task"], emb, vocab, w, b, term_bins=header["term_bins"],
                   train_log=header["train_log"], final_report=header["final_report"])

    @classmethod
    def load(cls, path, expect_vocab: LabelVocab | None = None) -> "PredictiveModel":
        with open(path, "rb") as fh:
            model = cls.from_bytes(fh.read())
        if expect_vocab is not None and expect_vocab.vocab_hash != model.vocab.vocab_hash:
            raise VocabMismatchError(
                f"model at {path} was trained with a different {model.task} vocabulary")
        return model


def encode(fact: str, encoder: HashedEmbedding) -> EmbeddingSequence:
    """Embedding row per token; position-independent lookups."""
    ids = encoder.ids_for_text(fact)
    if not ids:
        raise EmptyAfterTokenizationError(f"no tokens in {fact!r}")
    data = K.gather_rows(encoder.table, ids, encoder.dim)
    return EmbeddingSequence(data, len(ids), encoder.dim)


def pool_and_classify(H: EmbeddingSequence, model: PredictiveModel) -> ProbDist:
    """Column-wise max pool, then softmax(W.h + b)."""
    if H.dim != model.d:
        raise DimensionMismatchError(
            f"sequence dimension {H.dim} does not match model dimension {model.d}")
    pooled, _ = K.maxpool(H.data, H.n_rows, H.dim)
    logits = K.affine(model.w, model.b, pooled, model.m, model.d)
    K.softmax_inplace(logits)
    return ProbDist(logits)


def candidate_labels(dist: ProbDist, n: int, vocab: LabelVocab) -> CandidateSet:
    """Top-n labels by probability; ties broken by ascending label index."""
    m = len(vocab)
    if len(dist) != m:
        raise DimensionMismatchError("distribution does not match the vocabulary")
    if not 1 <= n <= m:
        raise BadNError(f"n must be in [1, {m}], got {n}")
    order = sorted(range(m), key=lambda i: (-dist.probs[i], i))[:n]
    return CandidateSet(
        task=vocab.task,
        labels=[vocab.label_at(i) for i in order],
        probs=[dist.probs[i] for i in order],
        indices=list(order),
    )


def _gold_index(case, task, vocab, bins):
    if task == "term":
        return vocab.index_of(bin_prison_term(case.term_months, bins))
    return vocab.index_of(getattr(case, task))


def train_predictor(train_cases, task: str, config: TrainConfig | None = None,
                    vocab: LabelVocab | None = None,
                    bins=DEFAULT_TERM_BINS) -> PredictiveModel:
    """Seeded mini-batch gradient descent on mean cross-entropy.

    Zero epochs returns the seeded initialization unchanged. The
    returned model carries a per-epoch loss/accuracy log plus a final
    clean-pass report.
    """
    config = config or TrainConfig()
    if vocab is None:
        if task == "term":
            vocab = term_vocab_from_bins(bins)
        else:
            vocab = build_label_vocab(train_cases, task)
    golds = [_gold_index(c, task, vocab, bins) for c in train_cases]
    if len(set(golds)) < 2:
        raise DegenerateLabelsError(
            f"training data contains {len(set(golds))} distinct {task} label(s); need >= 2")

    emb = HashedEmbedding(config.n_buckets, config.dim, seed=config.seed,
                          scale=1.0, init="sparse")
    model = PredictiveModel(task, emb, vocab,
                            term_bins=bins if task == "term" else None)
    m, d = model.m, model.d

    token_ids = [emb.ids_for_text(c.fact) for c in train_cases]
    for i, ids in enumerate(token_ids):
        if not ids:
            raise EmptyAfterTokenizationError(
                f"case {train_cases[i].id!r} has no tokens")

    rng = random.Random(config.seed)
    order = list(range(len(train_cases)))
    for epoch in range(config.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        epoch_hits = 0
        for start in range(0, len(order), config.batch):
            batch = order[start:start + config.batch]
            gw_sum = array("d", bytes(8 * m * d))
            gb_sum = array("d", bytes(8 * m))
            emb_grads = []  # (bucket row, column, value) triples
            batch_loss = 0.0
            for idx in batch:
                ids = token_ids[idx]
                rows = K.gather_rows(emb.table, ids, d)
                pooled, winners = K.maxpool(rows, len(ids), d)
                probs = K.affine(model.w, model.b, pooled, m, d)
                K.softmax_inplace(probs)
                gold = golds[idx]
                p_gold = probs[gold]
                if p_gold <= 0.0 or not math.isfinite(p_gold):
                    raise NonFiniteLossError(f"degenerate probability {p_gold!r}")
                batch_loss += -math.log(p_gold)
                best = 0
                for i in range(1, m):
                    if probs[i] > probs[best]:
                        best = i
                if best == gold:
                    epoch_hits += 1
                gw, gb, gx = K.head_backward(probs, gold, pooled, model.w, m, d)
                K.add_scaled(gw_sum, gw, 1.0)
                K.add_scaled(gb_sum, gb, 1.0)
                for j in range(d):
                    emb_grads.append((ids[winners[j]], j, gx[j]))
            if not math.isfinite(batch_loss):
                raise NonFiniteLossError("non-finite batch loss")
            step = -config.lr / len(batch)
            K.add_scaled(model.w, gw_sum, step)
            K.add_scaled(model.b, gb_sum, step)
            for row, col, val in emb_grads:
                emb.table[row * d + col] += step * val
            epoch_loss += batch_loss
        model.train_log.append({
            "epoch": epoch,
            "loss": epoch_loss / len(order),
            "accuracy": epoch_hits / len(order),
        })

    final_loss = 0.0
    final_hits = 0
    for idx in range(len(train_cases)):
        dist = pool_and_classify(
            EmbeddingSequence(K.gather_rows(emb.table, token_ids[idx], d),
                              len(token_ids[idx]), d), model)
        final_loss += -math.log(max(dist.probs[golds[idx]], 1e-300))
        if dist.argmax() == golds[idx]:
            final_hits += 1
    model.final_report = {"loss": final_loss / len(train_cases),
                          "accuracy": final_hits / len(train_cases)}
    log.info("trained %s predictor: loss %.4f accuracy %.4f", task,
             model.final_report["loss"], model.final_report["accuracy"])
    return model
