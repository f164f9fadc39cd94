"""Fact reorganization: LLM summarization into (sub, obj, ex), with caching.

Runs both at database-build time and at prediction time. The prompt
template is a versioned resource so alternate renderings (e.g. a
Chinese original) can be swapped in by config; the cache is
content-addressed on (fact, template version), so template edits
invalidate stale summaries.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from importlib import resources

from .errors import ParseFailureError
from .llm import LlmRequest

log = logging.getLogger("lexjudge.reorganize")

DEFAULT_TEMPLATE_VERSION = "v1"
SEP = " [SEP] "

_STRICT_SUFFIX = (
    "\nYour previous answer was not in the required format. Respond with "
    "exactly three lines starting with SUB:, OBJ:, and EX: and nothing else."
)


@dataclass(frozen=True)
class ReorganizedFact:
    """The (sub, obj, ex) summary triple of one fact description."""

    sub: str
    obj: str
    ex: str
    source_case_id: str = ""

    def __post_init__(self):
        for name in ("sub", "obj", "ex"):
            if not getattr(self, name).strip():
                raise ValueError(f"reorganized fact part {name!r} is empty")

    def parts(self) -> tuple[str, str, str]:
        return self.sub, self.obj, self.ex


def load_template(version: str = DEFAULT_TEMPLATE_VERSION) -> str:
    path = resources.files("lexjudge.data").joinpath(f"reorg_prompt_{version}.txt")
    return path.read_text(encoding="utf-8")


def render_reorg_prompt(fact: str, template_version: str = DEFAULT_TEMPLATE_VERSION) -> str:
    """Fixed summarization prompt; ends with the fact so prompts for two
    facts differ only in that suffix."""
    if not fact:
        raise ValueError("fact must be non-empty")
    template = load_template(template_version).rstrip("\n")
    return template.replace("{fact}", fact)


def cache_key(fact: str, template_version: str = DEFAULT_TEMPLATE_VERSION) -> str:
    return hashlib.sha256(f"{template_version}|{fact}".encode("utf-8")).hexdigest()


class ReorgCache:
    """JSONL-backed cache of reorganization triples.

    Entries are write-once: put() on an existing key keeps the stored
    triple (reorganizing an already-cached fact never mutates it).
    """

    def __init__(self, path=None):
        self.path = str(path) if path else None
        self._store: dict[str, tuple[str, str, str]] = {}
        if self.path:
            try:
                with open(self.path, encoding="utf-8") as fh:
                    for line in fh:
                        line = line.strip()
                        if not line:
                            continue
                        rec = json.loads(line)
                        self._store.setdefault(rec["key"], (rec["sub"], rec["obj"], rec["ex"]))
            except FileNotFoundError:
                pass

    def __len__(self):
        return len(self._store)

    def __contains__(self, key):
        return key in self._store

    def get(self, key):
        return self._store.get(key)

    def put(self, key, sub, obj, ex, template_version=DEFAULT_TEMPLATE_VERSION):
        if key in self._store:
            return
        self._store[key] = (sub, obj, ex)
        if self.path:
            rec = {"key": key, "sub": sub, "obj": obj, "ex": ex,
                   "template_version": template_version}
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def parse_reorg_completion(completion: str) -> tuple[str, str, str]:
    """Extract the SUB/OBJ/EX sections; raises ValueError naming missing ones.

    Section bodies may span lines (until the next marker); a present but
    empty section becomes the literal "none stated".
    """
    sections: dict[str, list[str]] = {}
    current = None
    for line in completion.splitlines():
        stripped = line.lstrip()
        upper = stripped[:4].upper()
        matched = None
        for marker in ("SUB:", "OBJ:"):
            if upper.startswith(marker):
                matched = marker[:3]
                body = stripped[4:]
                break
        if matched is None and stripped[:3].upper().startswith("EX:"):
            matched = "EX"
            body = stripped[3:]
        if matched is not None:
            current = matched
            sections[current] = [body.strip()] if body.strip() else []
        elif current is not None and stripped:
            sections[current].append(stripped)
    missing = [m for m in ("SUB", "OBJ", "EX") if m not in sections]
    if missing:
        raise ValueError(f"missing sections: {', '.join(missing)}")
    out = []
    for marker in ("SUB", "OBJ", "EX"):
        text = " ".join(sections[marker]).strip()
        out.append(text if text else "none stated")
    return tuple(out)


class Reorganizer:
    """Summarizes facts through an LLM client with caching and one reprompt."""

    def __init__(self, client, cache: ReorgCache | None = None,
                 template_version: str = DEFAULT_TEMPLATE_VERSION, max_tokens=512):
        self.client = client
        self.cache = cache if cache is not None else ReorgCache()
        self.template_version = template_version
        self.max_tokens = max_tokens
        load_template(template_version)  # fail fast on unknown version

    def render_prompt(self, fact: str) -> str:
        return render_reorg_prompt(fact, self.template_version)

    def reorganize(self, fact: str, case_id: str = "") -> ReorganizedFact:
        if not fact or not fact.strip():
            raise ValueError("fact must be non-empty")
        key = cache_key(fact, self.template_version)
        hit = self.cache.get(key)
        if hit is not None:
            return ReorganizedFact(*hit, source_case_id=case_id)

        tag = f"reorg:{case_id}" if case_id else "reorg"
        prompt = self.render_prompt(fact)
        completion = self.client.complete(
            LlmRequest(prompt, max_tokens=self.max_tokens, tag=tag))
        try:
            sub, obj, ex = parse_reorg_completion(completion)
        except ValueError:
            completion = self.client.complete(
                LlmRequest(prompt + _STRICT_SUFFIX, max_tokens=self.max_tokens, tag=tag))
            try:
                sub, obj, ex = parse_reorg_completion(completion)
            except ValueError as exc:
                raise ParseFailureError(
                    f"reorganization output unparseable after reprompt: {exc}") from None

        if len(sub) + len(obj) + len(ex) >= len(fact):
            log.warning("reorganization did not shorten the fact (case %s)",
                        case_id or "<unknown>")
        self.cache.put(key, sub, obj, ex, self.template_version)
        return ReorganizedFact(sub, obj, ex, source_case_id=case_id)


def _escape(part: str) -> str:
    return part.replace("\\", "\\\\").replace("[SEP]", "\\[SEP]")


def _unescape(part: str) -> str:
    out = []
    i = 0
    while i < len(part):
        ch = part[i]
        if ch == "\\" and part.startswith("\\\\", i):
            out.append("\\")
            i += 2
        elif ch == "\\" and part.startswith("\\[SEP]", i):
            out.append("[SEP]")
            i += 6
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def concat_reorganized(rf: ReorganizedFact) -> str:
    """Join the triple with the fixed separator; the retriever's document text.

    Parts containing the separator literal are escaped so
    split_concatenated recovers them exactly.
    """
    return SEP.join(_escape(p) for p in rf.parts())


def split_concatenated(text: str) -> tuple[str, str, str]:
    pieces = text.split(SEP)
    if len(pieces) != 3:
        raise ValueError(f"expected 3 separated parts, found {len(pieces)}")
    return tuple(_unescape(p) for p in pieces)
