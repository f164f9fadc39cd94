"""Dual-encoder precedent retrieval over the case database.

One shared encoder (hashed-embedding mean pooling) embeds both sides;
retrieval scores are cosine similarities and the index is an in-memory
linear scan (a 4000-entry database does not justify approximate
search). Training is unsupervised and contrastive: two random crops of
the same document are positives, the rest of the batch are negatives.
Training logits are temperature-scaled raw dot products; with small
seeded initialization they start near zero, so the initial loss sits at
the uniform-logit value ln(batch). Retrieval-time scoring stays cosine.

Selection rule: for each candidate label, the database entry with the
highest cosine among entries bearing that label, exactly one per
candidate; score ties break toward the lower case id.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import struct
from array import array
from dataclasses import dataclass

from . import kernels as K
from .corpus import CaseDatabase, JudgmentTriple
from .errors import (
    BatchTooSmallError,
    DimensionMismatchError,
    EmptyTextError,
    ModelFormatError,
    NoCaseWithLabelError,
    NonFiniteLossError,
    StaleModelHashError,
    UntrainedModelError,
    ZeroNormError,
)
from .predictor import CandidateSet
from .reorganize import ReorganizedFact, concat_reorganized
from .text import TOKENIZER_VERSION, HashedEmbedding

log = logging.getLogger("lexjudge.retriever")

DEFAULT_DIM = 128
DEFAULT_BUCKETS = 4096
INIT_SCALE = 0.01

_MAGIC = b"LJRT"
_INDEX_MAGIC = b"LJIX"
_FORMAT_VERSION = 1


@dataclass
class RetrievalConfig:
    epochs: int = 5
    lr: float = 2.0  # dot-product logits start near zero; smaller rates stall
    batch: int = 32
    tau: float = 0.05
    seed: int = 0
    crop_min: float = 0.5
    crop_max: float = 0.9
    dim: int = DEFAULT_DIM
    n_buckets: int = DEFAULT_BUCKETS


class RetrievalModel:
    """Shared text encoder for queries and stored cases."""

    def __init__(self, embedding: HashedEmbedding, trained: bool = False,
                 train_log=None, first_batch_loss=None):
        self.embedding = embedding
        self.trained = trained
        self.train_log = train_log or []
        self.first_batch_loss = first_batch_loss
        self._hash = None

    @property
    def dim(self) -> int:
        return self.embedding.dim

    def embed(self, text: str) -> array:
        return embed_text(text, self)

    def to_bytes(self) -> bytes:
        header = {
            "d": self.dim,
            "n_buckets": self.embedding.n_buckets,
            "seed": self.embedding.seed,
            "scale": self.embedding.scale,
            "init": self.embedding.init,
            "tokenizer_version": TOKENIZER_VERSION,
            "trained": self.trained,
            "train_log": self.train_log,
            "first_batch_loss": self.first_batch_loss,
        }
        hj = json.dumps(header, ensure_ascii=True, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
        return b"".join([
            _MAGIC, struct.pack("<I", _FORMAT_VERSION), struct.pack("<Q", len(hj)), hj,
            self.embedding.table.tobytes(),
        ])

    def version_hash(self) -> str:
        if self._hash is None:
            self._hash = hashlib.sha256(self.to_bytes()).hexdigest()
        return self._hash

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "RetrievalModel":
        if blob[:4] != _MAGIC:
            raise ModelFormatError("not a retrieval model file")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != _FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {version}")
        (hlen,) = struct.unpack_from("<Q", blob, 8)
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
        table = array("d")
        table.frombytes(blob[16 + hlen:16 + hlen + 8 * header["n_buckets"] * header["d"]])
        emb = HashedEmbedding(header["n_buckets"], header["d"], header["seed"],
                              header["scale"], table=table,
                              init=header.get("init", "dense"))
        return cls(emb, trained=header["trained"], train_log=header["train_log"],
                   first_batch_loss=header["first_batch_loss"])

    @classmethod
    def load(cls, path) -> "RetrievalModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def new_retrieval_model(config: RetrievalConfig | None = None) -> RetrievalModel:
    config = config or RetrievalConfig()
    emb = HashedEmbedding(config.n_buckets, config.dim, seed=config.seed,
                          scale=INIT_SCALE)
    return RetrievalModel(emb)


def embed_text(text: str, model: RetrievalModel) -> array:
    """Mean of token embedding rows; deterministic for a fixed model."""
    ids = model.embedding.ids_for_text(text)
    if not ids:
        raise EmptyTextError(f"no tokens in {text!r}")
    return K.gather_mean(model.embedding.table, ids, model.dim)


def cosine_similarity(a, b) -> float:
    if len(a) != len(b):
        raise DimensionMismatchError(f"vector dimensions differ: {len(a)} vs {len(b)}")
    a = a if isinstance(a, array) else array("d", a)
    b = b if isinstance(b, array) else array("d", b)
    if K.norm(a) == 0.0 or K.norm(b) == 0.0:
        raise ZeroNormError("cosine similarity of a zero vector is undefined")
    return max(-1.0, min(1.0, K.cosine(a, b)))


def _crop(ids, rng, lo, hi):
    n = len(ids)
    span = max(1, round(rng.uniform(lo, hi) * n))
    start = rng.randint(0, n - span)
    return ids[start:start + span]


def train_retriever(texts, config: RetrievalConfig | None = None) -> RetrievalModel:
    """InfoNCE with in-batch negatives over two random crops per document.

    Deterministic per seed; incomplete trailing batches are dropped.
    Returns the model with its per-epoch loss curve and the loss of the
    very first batch (measured before any update).
    """
    config = config or RetrievalConfig()
    if len(texts) < config.batch:
        raise BatchTooSmallError(
            f"corpus of {len(texts)} documents is smaller than batch {config.batch}")
    model = new_retrieval_model(config)
    emb = model.embedding
    d = model.dim
    token_ids = [emb.ids_for_text(t) for t in texts]
    for i, ids in enumerate(token_ids):
        if not ids:
            raise EmptyTextError(f"document {i} has no tokens")

    rng = random.Random(config.seed)
    b = config.batch
    inv_tau = 1.0 / config.tau
    order = list(range(len(texts)))
    for epoch in range(config.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order) - b + 1, b):
            batch = order[start:start + b]
            views_a = [_crop(token_ids[i], rng, config.crop_min, config.crop_max)
                       for i in batch]
            views_b = [_crop(token_ids[i], rng, config.crop_min, config.crop_max)
                       for i in batch]
            za = array("d")
            zb = array("d")
            for v in views_a:
                za.extend(K.gather_mean(emb.table, v, d))
            for v in views_b:
                zb.extend(K.gather_mean(emb.table, v, d))
            logits = K.pair_scores(za, zb, b, d)
            K.scale_inplace(logits, inv_tau)

            # softmax per row; grads g_ij = (p_ij - delta_ij) / (b * tau)
            grads = array("d", bytes(8 * b * b))
            batch_loss = 0.0
            for i in range(b):
                row = logits[i * b:(i + 1) * b]
                K.softmax_inplace(row)
                p_ii = row[i]
                if p_ii <= 0.0 or not math.isfinite(p_ii):
                    raise NonFiniteLossError(f"degenerate contrastive probability {p_ii!r}")
                batch_loss += -math.log(p_ii)
                row[i] -= 1.0
                K.scale_inplace(row, inv_tau / b)
                grads[i * b:(i + 1) * b] = row
            batch_loss /= b
            if not math.isfinite(batch_loss):
                raise NonFiniteLossError("non-finite contrastive loss")
            if model.first_batch_loss is None:
                model.first_batch_loss = batch_loss

            grads_t = array("d", bytes(8 * b * b))
            for i in range(b):
                for j in range(b):
                    grads_t[j * b + i] = grads[i * b + j]
            for i in range(b):
                dza = K.weighted_sum_rows(grads[i * b:(i + 1) * b], zb, b, d)
                K.scatter_add(emb.table, views_a[i], dza, d,
                              -config.lr / len(views_a[i]))
            for j in range(b):
                dzb = K.weighted_sum_rows(grads_t[j * b:(j + 1) * b], za, b, d)
                K.scatter_add(emb.table, views_b[j], dzb, d,
                              -config.lr / len(views_b[j]))
            epoch_loss += batch_loss
            n_batches += 1
        model.train_log.append({"epoch": epoch, "loss": epoch_loss / n_batches})
    model.trained = True
    model._hash = None
    return model


def crop_similarity_stats(model: RetrievalModel, texts, n_pairs: int = 200,
                          seed: int = 0, crop_min: float = 0.5,
                          crop_max: float = 0.9) -> tuple[float, float]:
    """Mean cosine of (two crops of one doc) vs (crops of different docs)."""
    rng = random.Random(seed)
    ids = [model.embedding.ids_for_text(t) for t in texts]
    same_total = 0.0
    cross_total = 0.0
    d = model.dim
    for _ in range(n_pairs):
        i = rng.randrange(len(texts))
        j = rng.randrange(len(texts) - 1)
        if j >= i:
            j += 1
        vi1 = K.gather_mean(model.embedding.table,
                            _crop(ids[i], rng, crop_min, crop_max), d)
        vi2 = K.gather_mean(model.embedding.table,
                            _crop(ids[i], rng, crop_min, crop_max), d)
        vj = K.gather_mean(model.embedding.table,
                           _crop(ids[j], rng, crop_min, crop_max), d)
        same_total += cosine_similarity(vi1, vi2)
        cross_total += cosine_similarity(vi1, vj)
    return same_total / n_pairs, cross_total / n_pairs


@dataclass(frozen=True)
class Precedent:
    """A stored case selected to explain one candidate label."""

    case_id: str
    rf: ReorganizedFact
    judgment: JudgmentTriple
    score: float
    matched_label: object


class PrecedentIndex:
    """In-memory linear-scan index over the case database.

    Vectors are quantized to little-endian float32 at build time so a
    freshly built index and a reloaded one select identically.
    """

    def __init__(self, ids, vectors: array, dim: int, entries, model_hash: str):
        if len(vectors) != len(ids) * dim:
            raise DimensionMismatchError("vector buffer does not match index size")
        self.ids = list(ids)
        self.vectors = vectors
        self.dim = dim
        self.entries = entries  # DbEntry per row, the retrieval back-store
        self.model_hash = model_hash
        self._label_rows: dict = {}

    def __len__(self):
        return len(self.ids)

    def label_rows(self, task: str) -> dict:
        """Row numbers per label for one task."""
        if task not in self._label_rows:
            rows: dict = {}
            for r, entry in enumerate(self.entries):
                rows.setdefault(getattr(entry.judgment, "term" if task == "term" else task), []).append(r)
            self._label_rows[task] = rows
        return self._label_rows[task]


def _quantize32(vec: array) -> array:
    return array("d", array("f", vec))


def index_database(db: CaseDatabase, model: RetrievalModel,
                   allow_untrained: bool = False) -> PrecedentIndex:
    """Embed concat_reorganized of every entry into a scan-ready index."""
    if not model.trained and not allow_untrained:
        raise UntrainedModelError(
            "retrieval model is untrained; pass allow_untrained=True to index anyway")
    ids = []
    vectors = array("d")
    for entry in db.entries:
        vec = _quantize32(embed_text(concat_reorganized(entry.rf), model))
        for v in vec:
            if not math.isfinite(v):
                raise ValueError(f"non-finite embedding for case {entry.id!r}")
        ids.append(entry.id)
        vectors.extend(vec)
    return PrecedentIndex(ids, vectors, model.dim, list(db.entries),
                          model.version_hash())


def save_index(index: PrecedentIndex, path) -> None:
    """Index file: magic "LJIX" | u32 version | u64 header length |
    header JSON (model hash, dim, count) | packed little-endian float32
    vectors | u64 table length | id/label/rf table JSON."""
    header = {"model_hash": index.model_hash, "dim": index.dim, "count": len(index)}
    hj = json.dumps(header, ensure_ascii=True, sort_keys=True,
                    separators=(",", ":")).encode("utf-8")
    table = [{"id": e.id, "article": e.judgment.article, "charge": e.judgment.charge,
              "term_label": e.judgment.term, "sub": e.rf.sub, "obj": e.rf.obj,
              "ex": e.rf.ex} for e in index.entries]
    tj = json.dumps(table, ensure_ascii=True, sort_keys=True,
                    separators=(",", ":")).encode("utf-8")
    f32 = array("f", index.vectors)
    with open(path, "wb") as fh:
        fh.write(_INDEX_MAGIC)
        fh.write(struct.pack("<I", _FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(hj)))
        fh.write(hj)
        fh.write(f32.tobytes())
        fh.write(struct.pack("<Q", len(tj)))
        fh.write(tj)


def load_index(path, model: RetrievalModel | None = None) -> PrecedentIndex:
    """Load an index file; verifies the model hash when a model is given."""
    from .corpus import DbEntry  # local import to keep module load light

    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _INDEX_MAGIC:
        raise ModelFormatError("not an index file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _FORMAT_VERSION:
        raise ModelFormatError(f"unsupported index format version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    if model is not None and model.version_hash() != header["model_hash"]:
        raise StaleModelHashError(
            "index was built with a different retrieval model; re-index")
    off = 16 + hlen
    count, dim = header["count"], header["dim"]
    f32 = array("f")
    f32.frombytes(blob[off:off + 4 * count * dim])
    off += 4 * count * dim
    (tlen,) = struct.unpack_from("<Q", blob, off)
    table = json.loads(blob[off + 8:off + 8 + tlen].decode("utf-8"))
    entries = [DbEntry(id=rec["id"],
                       rf=ReorganizedFact(rec["sub"], rec["obj"], rec["ex"],
                                          source_case_id=rec["id"]),
                       judgment=JudgmentTriple(rec["article"], rec["charge"],
                                               rec["term_label"]))
               for rec in table]
    return PrecedentIndex([rec["id"] for rec in table], array("d", f32), dim,
                          entries, header["model_hash"])


def select_by_vector(query_vec: array, candidates: CandidateSet,
                     index: PrecedentIndex, missing: str = "error",
                     scores: array | None = None) -> list:
    """One precedent per candidate label: highest cosine, lower id on ties.

    missing="error" raises NoCaseWithLabel for a candidate label absent
    from the database; missing="none" emits a None placeholder instead,
    preserving the one-to-one candidate/precedent shape for callers that
    substitute a stub. A precomputed score vector may be passed to share
    one scan across several candidate sets for the same query.
    """
    if scores is None:
        scores = K.cosine_scores(query_vec, index.vectors, len(index), index.dim)
    rows_by_label = index.label_rows(candidates.task)
    out = []
    for label in candidates.labels:
        rows = rows_by_label.get(label)
        if not rows:
            if missing == "none":
                out.append(None)
                continue
            raise NoCaseWithLabelError(candidates.task, label)
        best_row = rows[0]
        best_score = scores[best_row]
        best_id = index.ids[best_row]
        for r in rows[1:]:
            s = scores[r]
            if s > best_score or (s == best_score and index.ids[r] < best_id):
                best_row, best_score, best_id = r, s, index.ids[r]
        entry = index.entries[best_row]
        out.append(Precedent(case_id=entry.id, rf=entry.rf, judgment=entry.judgment,
                             score=max(-1.0, min(1.0, best_score)),
                             matched_label=label))
    return out


def select_precedents(query: ReorganizedFact, candidates: CandidateSet,
                      index: PrecedentIndex, model: RetrievalModel) -> list:
    """Embed the reorganized query and pick one precedent per candidate."""
    if model.version_hash() != index.model_hash:
        raise StaleModelHashError("index does not belong to this retrieval model")
    return select_by_vector(embed_text(concat_reorganized(query), model),
                            candidates, index)
