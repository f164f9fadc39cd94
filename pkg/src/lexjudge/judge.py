"""Final-label decision: in-context precedent prompts, chained sub-tasks.

The three sub-tasks run in the fixed order article -> charge -> term;
charge prompts carry the article decision actually emitted and term
prompts carry both upstream decisions (unless the no_dependency
ablation is set). Any LLM-gateway failure at a stage degrades that
stage to the top-1 candidate and the chain continues.

Prompts are built as blocks joined by blank lines, so each ablation
removes exactly its own block and leaves every other byte unchanged.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from importlib import resources

from . import kernels as K
from .corpus import Case, LabelVocab, TASKS
from .errors import (
    BudgetUnsatisfiableError,
    ConfigError,
    LlmError,
    ParseFailureError,
    StaleModelHashError,
)
from .llm import DEFAULT_PROMPT_BUDGET, LlmRequest
from .predictor import CandidateSet, candidate_labels
from .reorganize import ReorganizedFact, concat_reorganized
from .retriever import embed_text, select_by_vector

log = logging.getLogger("lexjudge.judge")

JUDGE_TEMPLATE_VERSION = "v1"

ABLATIONS = ("no_precedents", "no_candidates", "no_dependency",
             "raw_fact_retrieval", "with_explanation")

TASK_PLURAL = {"article": "law articles", "charge": "charges", "term": "prison terms"}

RAW_EXCERPT_CHARS = 500
_TRUNCATION_FLOOR = 0

PROVENANCE_LLM = "llm"
PROVENANCE_FALLBACK_TOP1 = "fallback-top1"
PROVENANCE_FALLBACK_PARSE = "fallback-parse"


def _instruction_template(version: str = JUDGE_TEMPLATE_VERSION) -> str:
    path = resources.files("lexjudge.data").joinpath(f"judge_instruction_{version}.txt")
    return path.read_text(encoding="utf-8").rstrip("\n")


@dataclass
class JudgmentContext:
    """Everything a stage prompt needs, accumulated as the chain runs."""

    raw_fact: str
    rf: ReorganizedFact
    candidates: dict = field(default_factory=dict)   # task -> CandidateSet
    precedents: dict = field(default_factory=dict)   # task -> list[Precedent|None]
    vocabs: dict = field(default_factory=dict)       # task -> LabelVocab
    upstream: dict = field(default_factory=dict)     # task -> emitted label
    ablations: frozenset = frozenset()
    n: int = 3
    template_version: str = JUDGE_TEMPLATE_VERSION


@dataclass
class Judgment:
    """Pipeline output for one case: labels, provenance, stage records."""

    article: object
    charge: object
    term: object
    provenance: dict
    explanation: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    rf_provenance: str = PROVENANCE_LLM

    def label(self, task):
        return getattr(self, task)


def check_ablations(names) -> frozenset:
    names = frozenset(names)
    unknown = names - set(ABLATIONS)
    if unknown:
        raise ConfigError(f"unknown ablation flag(s): {', '.join(sorted(unknown))}")
    return names


def _fact_block(ctx: JudgmentContext) -> str:
    return (
        "Case facts (reorganized):\n"
        f"Subjective motivation: {ctx.rf.sub}\n"
        f"Objective behavior: {ctx.rf.obj}\n"
        f"Ex post facto circumstances: {ctx.rf.ex}\n"
        f"Raw fact excerpt: {ctx.raw_fact[:RAW_EXCERPT_CHARS]}"
    )


def _candidate_block(ctx: JudgmentContext, task: str) -> str:
    vocab = ctx.vocabs[task]
    lines = [f"Candidate {TASK_PLURAL[task]}:"]
    for i, label in enumerate(ctx.candidates[task].labels, start=1):
        lines.append(f"  {i}. {vocab.display_of(label)}")
    return "\n".join(lines)


def _precedent_block(ctx: JudgmentContext, task: str, overrides=None) -> str:
    vocab = ctx.vocabs[task]
    lines = ["Precedents (one per candidate label):"]
    for i, (label, prec) in enumerate(
            zip(ctx.candidates[task].labels, ctx.precedents[task]), start=1):
        lines.append(f"Precedent {i} (label: {vocab.display_of(label)}):")
        if prec is None:
            lines.append("  No stored case carries this label; treat the label "
                         "itself as the reference.")
            continue
        sub, obj, ex = prec.rf.parts()
        if overrides and (i - 1) in overrides:
            sub, obj, ex = overrides[i - 1]
        lines.append(f"  Subjective motivation: {sub}")
        lines.append(f"  Objective behavior: {obj}")
        lines.append(f"  Ex post facto circumstances: {ex}")
        art = ctx.vocabs["article"].display_of(prec.judgment.article)
        chg = ctx.vocabs["charge"].display_of(prec.judgment.charge)
        trm = ctx.vocabs["term"].display_of(prec.judgment.term)
        lines.append(f"  Judgment: law article {art}; charge {chg}; prison term {trm}")
    return "\n".join(lines)


_COUNT_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven",
                "eight", "nine", "ten")


def _instruction_block(ctx: JudgmentContext, task: str) -> str:
    explain = " and explain your choice" if "with_explanation" in ctx.ablations else ""
    count = _COUNT_WORDS[ctx.n] if ctx.n < len(_COUNT_WORDS) else str(ctx.n)
    return (_instruction_template(ctx.template_version)
            .replace("{task_plural}", TASK_PLURAL[task])
            .replace("{n}", count)
            .replace("{explain}", explain))


def _upstream_block(ctx: JudgmentContext, task: str) -> str | None:
    if task == "article" or "no_dependency" in ctx.ablations:
        return None
    art = ctx.vocabs["article"].display_of(ctx.upstream["article"])
    if task == "charge":
        return f"Predicted law article: {art}"
    chg = ctx.vocabs["charge"].display_of(ctx.upstream["charge"])
    return f"Predicted law article: {art}\nPredicted charge: {chg}"


_ANSWER_BLOCK = "Answer on a single line in the form LABEL: <label>."


def _assemble(ctx, task, overrides=None) -> str:
    blocks = [_fact_block(ctx)]
    if "no_candidates" not in ctx.ablations:
        blocks.append(_candidate_block(ctx, task))
    if "no_precedents" not in ctx.ablations:
        blocks.append(_precedent_block(ctx, task, overrides))
    blocks.append(_instruction_block(ctx, task))
    upstream = _upstream_block(ctx, task)
    if upstream is not None:
        blocks.append(upstream)
    blocks.append(_ANSWER_BLOCK)
    return "\n\n".join(blocks)


def render_judgment_prompt(ctx: JudgmentContext, task: str,
                           budget: int = DEFAULT_PROMPT_BUDGET) -> str:
    """Assemble the stage prompt, truncating precedent texts to fit.

    When over budget, the longest precedent field (sub/obj/ex across all
    precedent blocks) is halved repeatedly; if the prompt still exceeds
    the budget with every precedent field empty, the budget is
    unsatisfiable.
    """
    prompt = _assemble(ctx, task)
    if len(prompt) <= budget:
        return prompt
    if "no_precedents" in ctx.ablations or not ctx.precedents.get(task):
        raise BudgetUnsatisfiableError(
            f"{task} prompt needs {len(prompt)} chars with a budget of {budget}")
    overrides = {}
    for i, prec in enumerate(ctx.precedents[task]):
        if prec is not None:
            overrides[i] = list(prec.rf.parts())
    while True:
        prompt = _assemble(ctx, task, overrides)
        if len(prompt) <= budget:
            return prompt
        longest_key = None
        longest_len = _TRUNCATION_FLOOR
        for i in sorted(overrides):
            for f_idx in range(3):
                if len(overrides[i][f_idx]) > longest_len:
                    longest_key = (i, f_idx)
                    longest_len = len(overrides[i][f_idx])
        if longest_key is None:
            raise BudgetUnsatisfiableError(
                f"{task} prompt needs {len(prompt)} chars even with precedents "
                f"emptied; budget is {budget}")
        i, f_idx = longest_key
        text = overrides[i][f_idx]
        overrides[i][f_idx] = text[:len(text) // 2]


def _normalize_answer(text: str) -> str:
    previous = None
    while text != previous:
        previous = text
        text = text.strip().strip("\"'“”‘’").rstrip(".。")
    return " ".join(text.split()).casefold()


def parse_llm_label(completion: str, candidates: CandidateSet,
                    vocab: LabelVocab):
    """Total answer parser: (label, provenance); never raises.

    Precedence: exact candidate display match on any answer line, then
    whole-vocabulary match (logged as out-of-candidate), then the top-1
    candidate with fallback-parse provenance. An answer line's text is
    what follows its last colon.
    """
    cand_map = {_normalize_answer(vocab.display_of(lab)): lab
                for lab in candidates.labels}
    vocab_map = {_normalize_answer(disp): lab
                 for lab, disp in zip(vocab.labels, vocab.display)}
    lines = [ln for ln in completion.splitlines() if ln.strip()]
    tails = []
    for line in lines:
        tails.append(_normalize_answer(line.rsplit(":", 1)[-1]))
    for tail in tails:
        if tail in cand_map:
            return cand_map[tail], PROVENANCE_LLM
    for tail in tails:
        if tail in vocab_map:
            log.warning("answer named an out-of-candidate label %r; accepting",
                        vocab_map[tail])
            return vocab_map[tail], PROVENANCE_LLM
    if not candidates.labels:
        raise ValueError("cannot fall back without candidates")
    return candidates.labels[0], PROVENANCE_FALLBACK_PARSE


class JudgePipeline:
    """Chained per-case prediction with shared models and one LLM client."""

    def __init__(self, predictors: dict, retrieval_model, index, reorganizer,
                 client, n: int = 3, ablations=(), predict_from: str = "raw",
                 template_version: str = JUDGE_TEMPLATE_VERSION):
        if set(predictors) != set(TASKS):
            raise ConfigError(f"predictors must cover tasks {TASKS}")
        if predict_from not in ("raw", "reorganized"):
            raise ConfigError(f"predict_from must be raw|reorganized, not {predict_from!r}")
        if retrieval_model.version_hash() != index.model_hash:
            raise StaleModelHashError("index does not belong to this retrieval model")
        self.predictors = predictors
        self.retrieval_model = retrieval_model
        self.index = index
        self.reorganizer = reorganizer
        self.client = client
        self.n = n
        self.ablations = check_ablations(ablations)
        self.predict_from = predict_from
        self.template_version = template_version
        self.vocabs = {task: predictors[task].vocab for task in TASKS}

    def _reorganize(self, case: Case):
        try:
            return self.reorganizer.reorganize(case.fact, case.id), PROVENANCE_LLM
        except (LlmError, ParseFailureError) as exc:
            log.warning("reorganization failed for case %s (%s); using raw-fact "
                        "stand-in", case.id, type(exc).__name__)
            rf = ReorganizedFact(sub="none stated", obj=case.fact[:400],
                                 ex="none stated", source_case_id=case.id)
            return rf, "fallback-raw"

    def predict(self, case: Case) -> Judgment:
        rf, rf_prov = self._reorganize(case)
        ctx = JudgmentContext(raw_fact=case.fact, rf=rf, vocabs=self.vocabs,
                              ablations=self.ablations, n=self.n,
                              template_version=self.template_version)
        query_text = (case.fact if "raw_fact_retrieval" in self.ablations
                      else concat_reorganized(rf))
        query_vec = embed_text(query_text, self.retrieval_model)
        scores = K.cosine_scores(query_vec, self.index.vectors, len(self.index),
                                 self.index.dim)

        labels = {}
        provenance = {}
        explanation = {}
        stages = {}
        for task in TASKS:
            model = self.predictors[task]
            fact_in = case.fact if self.predict_from == "raw" else concat_reorganized(rf)
            dist = model.predict(fact_in)
            cands = candidate_labels(dist, self.n, model.vocab)
            ctx.candidates[task] = cands

            # None placeholders become stub blocks, keeping one block per
            # candidate even when a label has no stored case.
            precs = select_by_vector(query_vec, cands, self.index,
                                     missing="none", scores=scores)
            ctx.precedents[task] = precs

            stage = {"candidates": [model.vocab.display_of(l) for l in cands.labels],
                     "precedent_ids": [p.case_id if p else None for p in precs]}
            try:
                prompt = render_judgment_prompt(ctx, task, self.client.prompt_budget)
                stage["prompt_sha256"] = hashlib.sha256(
                    prompt.encode("utf-8")).hexdigest()
                completion = self.client.complete(LlmRequest(
                    prompt, tag=f"judge.{task}:{case.id}"))
                label, prov = parse_llm_label(completion, cands, model.vocab)
                stage["completion"] = completion
                if "with_explanation" in self.ablations:
                    explanation[task] = completion
            except (LlmError, BudgetUnsatisfiableError) as exc:
                log.warning("stage %s degraded to top-1 for case %s (%s)",
                            task, case.id, type(exc).__name__)
                label, prov = cands.labels[0], PROVENANCE_FALLBACK_TOP1
                stage["completion"] = None
                stage["error"] = type(exc).__name__
            stage["parsed_display"] = model.vocab.display_of(label)
            stage["provenance"] = prov
            stage["in_candidates"] = label in cands.labels
            stages[task] = stage
            labels[task] = label
            provenance[task] = prov
            ctx.upstream[task] = label

        return Judgment(article=labels["article"], charge=labels["charge"],
                        term=labels["term"], provenance=provenance,
                        explanation=explanation, stages=stages,
                        rf_provenance=rf_prov)


def predict_judgment(case: Case, predictors: dict, retrieval_model, index,
                     reorganizer, client, n: int = 3, ablations=(),
                     predict_from: str = "raw") -> Judgment:
    """One-shot convenience wrapper around JudgePipeline."""
    pipeline = JudgePipeline(predictors, retrieval_model, index, reorganizer,
                             client, n=n, ablations=ablations,
                             predict_from=predict_from)
    return pipeline.predict(case)
