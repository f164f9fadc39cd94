"""Case datasets: loading, validation, splitting, term binning, case database.

Input schema ("cases-v1"), line-delimited JSON, one object per line:

    {"id": str, "fact": str, "article": int, "charge": str,
     "term_months": int, "date": "YYYY-MM-DD"}

term_months sentinels: -1 encodes a life sentence, -2 a death sentence;
both map to the highest term interval so the term vocabulary keeps
exactly the configured bin count. The case database is persisted as
JSONL with keys {"id", "sub", "obj", "ex", "article", "charge",
"term_label"}.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
import math
import random
from dataclasses import dataclass
from datetime import date as _date
from typing import NamedTuple

from .errors import (
    BadRatiosError,
    BinningError,
    DuplicateIdError,
    InsufficientCasesError,
    MalformedLineError,
    MissingFieldError,
    MissingReorganizationError,
    NegativeTermError,
    UnknownLabelError,
)
from .reorganize import ReorganizedFact
from .text import normalize_whitespace

log = logging.getLogger("lexjudge.corpus")

TASKS = ("article", "charge", "term")

LIFE_SENTENCE = -1
DEATH_SENTENCE = -2

# Interval lower bounds in months, half-open [lo, hi); the last interval
# is [180, inf) and also receives the life/death sentinels. These are
# explicit defaults (the upstream datasets do not publish boundaries)
# and are overridable everywhere a bins argument appears.
DEFAULT_TERM_BINS = (0, 6, 9, 12, 24, 36, 60, 84, 120, 180)

DEFAULT_DB_SIZE = 4000

SCHEMA_ID = "cases-v1"


@dataclass(frozen=True)
class Case:
    id: str
    fact: str
    article: int
    charge: str
    term_months: int
    date: str

    def gold(self, task):
        return getattr(self, task) if task != "term" else self.term_months


class JudgmentTriple(NamedTuple):
    """Gold judgment of a stored case: article, charge, term label."""

    article: int
    charge: str
    term: int


class LabelVocab:
    """Ordered label set for one task; index positions are stable."""

    def __init__(self, task, labels, display=None):
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        labels = list(labels)
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")
        if display is None:
            display = [str(lab) for lab in labels]
        display = list(display)
        if len(display) != len(labels):
            raise ValueError("display list must parallel labels")
        if len(set(display)) != len(display):
            raise ValueError("display names must be unique")
        self.task = task
        self.labels = labels
        self.display = display
        self._index = {lab: i for i, lab in enumerate(labels)}

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self._index

    def index_of(self, label) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UnknownLabelError(self.task, label) from None

    def label_at(self, i):
        return self.labels[i]

    def display_of(self, label) -> str:
        return self.display[self.index_of(label)]

    def display_at(self, i) -> str:
        return self.display[i]

    @property
    def vocab_hash(self) -> str:
        payload = json.dumps([self.task, self.labels], ensure_ascii=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_json_obj(self):
        return {"task": self.task, "labels": self.labels, "display": self.display}

    @classmethod
    def from_json_obj(cls, obj):
        return cls(obj["task"], obj["labels"], obj["display"])


def build_label_vocab(cases, task) -> LabelVocab:
    """Vocabulary of observed article/charge labels, sorted for stability."""
    if task not in ("article", "charge"):
        raise ValueError("build_label_vocab covers article and charge; "
                         "use term_vocab_from_bins for term")
    labels = sorted({getattr(c, task) for c in cases})
    return LabelVocab(task, labels)


def term_vocab_from_bins(bins=DEFAULT_TERM_BINS) -> LabelVocab:
    _check_bins(bins)
    labels = list(range(len(bins)))
    display = []
    for i, lo in enumerate(bins):
        if i + 1 < len(bins):
            display.append(f"[{lo},{bins[i + 1]}) months")
        else:
            display.append(f"[{lo},inf) months")
    return LabelVocab("term", labels, display)


def _check_bins(bins):
    if len(bins) < 1:
        raise BinningError("bins must name at least one interval")
    for a, b in zip(bins, bins[1:]):
        if b <= a:
            raise BinningError("bin boundaries must be strictly increasing")


def bin_prison_term(term_months: int, bins=DEFAULT_TERM_BINS) -> int:
    """Interval index of a term; intervals are half-open [lo, hi).

    Sentinels (life/death) map to the top interval. A boundary value
    belongs to the higher bin.
    """
    _check_bins(bins)
    if term_months in (LIFE_SENTENCE, DEATH_SENTENCE):
        return len(bins) - 1
    if term_months < 0:
        raise NegativeTermError(f"negative non-sentinel term: {term_months}")
    if term_months < bins[0]:
        raise BinningError(f"{term_months} months is below the lowest boundary {bins[0]}")
    return bisect.bisect_right(bins, term_months) - 1


def _validate_record(rec, line_no, vocabs, strict):
    if not isinstance(rec, dict):
        raise MalformedLineError("record is not an object", line_no)
    for field in ("id", "fact", "article", "charge", "term_months", "date"):
        if field not in rec:
            raise MissingFieldError(field, line_no)
    if not isinstance(rec["id"], str) or not rec["id"]:
        raise MissingFieldError("id", line_no)
    if not isinstance(rec["fact"], str):
        raise MalformedLineError("fact must be a string", line_no)
    fact = normalize_whitespace(rec["fact"])
    if not fact:
        raise MissingFieldError("fact", line_no)
    if not isinstance(rec["article"], int) or isinstance(rec["article"], bool):
        raise MalformedLineError("article must be an integer label", line_no)
    if not isinstance(rec["charge"], str) or not rec["charge"]:
        raise MissingFieldError("charge", line_no)
    term = rec["term_months"]
    if not isinstance(term, int) or isinstance(term, bool):
        raise MalformedLineError("term_months must be an integer", line_no)
    if term < 0 and term not in (LIFE_SENTENCE, DEATH_SENTENCE):
        raise MalformedLineError(f"negative non-sentinel term_months {term}", line_no)
    if not isinstance(rec["date"], str):
        raise MalformedLineError("date must be a string", line_no)
    try:
        _date.fromisoformat(rec["date"])
    except ValueError:
        raise MalformedLineError(f"date {rec['date']!r} is not YYYY-MM-DD", line_no) from None
    if strict and vocabs:
        for task in ("article", "charge"):
            vocab = vocabs.get(task)
            if vocab is not None and rec[task] not in vocab:
                raise UnknownLabelError(task, rec[task], line_no)
    return Case(id=rec["id"], fact=fact, article=rec["article"], charge=rec["charge"],
                term_months=term, date=rec["date"])


def load_cases(path, schema: str = SCHEMA_ID, strict: bool = True,
               vocabs: dict | None = None) -> list[Case]:
    """Load and validate a JSONL case file, preserving input order.

    Strict mode (the default for training data) raises on the first
    invalid record, naming its line; lenient mode skips invalid records
    with a warning, which suits evaluation-only ingestion.
    """
    if schema != SCHEMA_ID:
        raise MalformedLineError(f"unknown schema {schema!r}")
    cases: list[Case] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedLineError(f"invalid JSON ({exc.msg})", line_no) from None
                case = _validate_record(rec, line_no, vocabs, strict)
                if case.id in seen_ids:
                    raise DuplicateIdError(f"duplicate case id {case.id!r}", line_no)
            except (MalformedLineError, MissingFieldError, DuplicateIdError,
                    UnknownLabelError) as exc:
                if strict:
                    raise
                log.warning("skipping invalid record: %s", exc)
                continue
            seen_ids.add(case.id)
            cases.append(case)
    return cases


def save_cases(cases, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in cases:
            rec = {"id": c.id, "fact": c.fact, "article": c.article,
                   "charge": c.charge, "term_months": c.term_months, "date": c.date}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def split_dataset(cases, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded disjoint train/val/test partition.

    Sizes are floor-allocated from the ratios with the remainder going
    to train.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise BadRatiosError(f"need three non-negative ratios, got {ratios!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatiosError(f"ratios must sum to 1, got {sum(ratios)!r}")
    if not cases:
        raise InsufficientCasesError("cannot split an empty case list")
    n = len(cases)
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    n_train = n - n_val - n_test  # floor(r0*n) plus the remainder
    shuffled = list(cases)
    random.Random(seed).shuffle(shuffled)
    train = shuffled[:n_train]
    val = shuffled[n_train:n_train + n_val]
    test = shuffled[n_train + n_val:]
    return train, val, test


@dataclass(frozen=True)
class DbEntry:
    id: str
    rf: ReorganizedFact
    judgment: JudgmentTriple


@dataclass
class CaseDatabase:
    """Reorganized training cases backing precedent retrieval."""

    entries: list

    @property
    def size(self) -> int:
        return len(self.entries)

    def ids(self) -> set:
        return {e.id for e in self.entries}


def sample_case_database(train, reorganized, n_db: int = DEFAULT_DB_SIZE,
                         seed: int = 0, bins=DEFAULT_TERM_BINS) -> CaseDatabase:
    """Uniform sample (without replacement) of reorganized training cases.

    `reorganized` maps case id -> ReorganizedFact; every sampled case
    must have one. Entries keep the train-list order.
    """
    if n_db > len(train):
        raise InsufficientCasesError(
            f"requested database of {n_db} from only {len(train)} training cases")
    picked = sorted(random.Random(seed).sample(range(len(train)), n_db))
    missing = [train[i].id for i in picked if train[i].id not in reorganized]
    if missing:
        raise MissingReorganizationError(sorted(missing))
    entries = []
    for i in picked:
        case = train[i]
        rf = reorganized[case.id]
        entries.append(DbEntry(
            id=case.id,
            rf=rf,
            judgment=JudgmentTriple(case.article, case.charge,
                                    bin_prison_term(case.term_months, bins)),
        ))
    return CaseDatabase(entries)


def save_case_database(db: CaseDatabase, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in db.entries:
            rec = {"id": e.id, "sub": e.rf.sub, "obj": e.rf.obj, "ex": e.rf.ex,
                   "article": e.judgment.article, "charge": e.judgment.charge,
                   "term_label": e.judgment.term}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_case_database(path) -> CaseDatabase:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                rf = ReorganizedFact(rec["sub"], rec["obj"], rec["ex"],
                                     source_case_id=rec["id"])
                entry = DbEntry(id=rec["id"], rf=rf,
                                judgment=JudgmentTriple(rec["article"], rec["charge"],
                                                        rec["term_label"]))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MalformedLineError(f"bad database record ({exc})", line_no) from None
            entries.append(entry)
    return CaseDatabase(entries)
