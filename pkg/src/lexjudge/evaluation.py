"""Metrics and experiment harness.

Metric conventions, stated because macro-F1 implementations diverge:
precision/recall/F1 use 0/0 -> 0 on empty classes, macro averages run
over the FULL label vocabulary (classes absent from preds and golds
still contribute zeros), and Ma-F is the mean of per-class F1 (not the
F of macro-P/macro-R). Failed cases score as their fallback labels so
denominators stay honest. Reports are plain JSON plus an aligned text
table in Acc / Ma-P / Ma-R / Ma-F column order; nothing time-dependent
goes into a report, so mock-backend runs are byte-reproducible.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .corpus import (
    LabelVocab,
    TASKS,
    bin_prison_term,
    load_cases,
)
from .errors import BadNError, ConfigError, EmptyTableError, LengthMismatchError
from .judge import ABLATIONS, JUDGE_TEMPLATE_VERSION, JudgePipeline
from .llm import (
    LlmClient,
    ScriptedBackend,
    extract_candidates,
    extract_fact,
    make_backend,
    make_echo_reorganized,
)
from .predictor import PredictiveModel
from .reorganize import ReorgCache, Reorganizer
from .retriever import RetrievalModel, load_index

log = logging.getLogger("lexjudge.evaluation")


# --- metrics ---------------------------------------------------------------

class ConfusionTable:
    """Per-class TP/FP/FN over a full vocabulary."""

    def __init__(self, task, labels, tp, fp, fn, total_correct, total):
        if sum(tp.values()) != total_correct:
            raise ValueError("TP sum does not match total correct")
        if sum(tp[l] + fn[l] for l in labels) != total:
            raise ValueError("TP+FN sum does not match total examples")
        self.task = task
        self.labels = list(labels)
        self.tp = tp
        self.fp = fp
        self.fn = fn
        self.total_correct = total_correct
        self.total = total


def confusion_counts(preds, golds, vocab: LabelVocab) -> ConfusionTable:
    """Standard multi-class counts; all vocabulary classes appear."""
    if len(preds) != len(golds):
        raise LengthMismatchError(
            f"{len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise LengthMismatchError("need at least one (pred, gold) pair")
    tp = {label: 0 for label in vocab.labels}
    fp = {label: 0 for label in vocab.labels}
    fn = {label: 0 for label in vocab.labels}
    correct = 0
    for pred, gold in zip(preds, golds):
        vocab.index_of(pred)  # raises UnknownLabelError
        vocab.index_of(gold)
        if pred == gold:
            tp[pred] += 1
            correct += 1
        else:
            fp[pred] += 1
            fn[gold] += 1
    return ConfusionTable(vocab.task, vocab.labels, tp, fp, fn, correct, len(preds))


def per_class_prf(table: ConfusionTable) -> dict:
    """(precision, recall, f1) per class, 0/0 defined as 0."""
    out = {}
    for label in table.labels:
        tp, fp, fn = table.tp[label], table.fp[label], table.fn[label]
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out[label] = (p, r, f)
    return out


def metrics(table: ConfusionTable) -> dict:
    """Acc and macro P/R/F as percentages."""
    if table.total == 0:
        raise EmptyTableError("empty confusion table")
    prf = per_class_prf(table)
    k = len(table.labels)
    ma_p = sum(v[0] for v in prf.values()) / k
    ma_r = sum(v[1] for v in prf.values()) / k
    ma_f = sum(v[2] for v in prf.values()) / k
    return {
        "acc": 100.0 * table.total_correct / table.total,
        "ma_p": 100.0 * ma_p,
        "ma_r": 100.0 * ma_r,
        "ma_f": 100.0 * ma_f,
    }


# --- experiment configuration ----------------------------------------------

_CONFIG_FIELDS = ("test_path", "models_dir", "index_path", "backend",
                  "n_precedents", "ablations", "seed", "prompt_budget",
                  "output_dir", "reorg_cache", "predict_from", "jobs", "limit")


@dataclass
class ExperimentConfig:
    test_path: str
    models_dir: str
    index_path: str
    backend: object = "echo"
    n_precedents: int = 3
    ablations: tuple = ()
    seed: int = 0
    prompt_budget: int = 12000
    output_dir: str = "out"
    reorg_cache: str | None = None
    predict_from: str = "raw"
    jobs: int = 1
    limit: int | None = None

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        unknown = set(obj) - set(_CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown experiment config key(s): {sorted(unknown)}")
        missing = {"test_path", "models_dir", "index_path"} - set(obj)
        if missing:
            raise ConfigError(f"experiment config missing key(s): {sorted(missing)}")
        cfg = cls(**obj)
        cfg.ablations = tuple(cfg.ablations)
        return cfg

    def resolved(self) -> dict:
        """Fully explicit config; echoed into every report fingerprint."""
        return {name: getattr(self, name) for name in _CONFIG_FIELDS}

    def replace(self, **kw) -> "ExperimentConfig":
        merged = {**self.resolved(), **kw}
        return ExperimentConfig.from_dict(merged)


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError:
            try:
                import tomli as tomllib
            except ImportError:
                raise ConfigError(
                    "TOML configs need Python >= 3.11 or the tomli package; "
                    "use JSON instead") from None
        obj = tomllib.loads(text)
    else:
        obj = json.loads(text)
    return ExperimentConfig.from_dict(obj)


# --- backends needing dataset knowledge -------------------------------------

def make_gold_backend(cases, vocabs: dict, bins) -> ScriptedBackend:
    """Scripted backend answering the gold label whenever it is a candidate.

    Reorganization requests get the deterministic echo triple. Judgment
    requests return "LABEL: <gold display>" when the gold label appears
    among the prompt's candidates, otherwise a non-label marker that
    forces the parse fallback to top-1.
    """
    golds = {}
    for case in cases:
        per_task = {}
        if case.article in vocabs["article"]:
            per_task["article"] = vocabs["article"].display_of(case.article)
        if case.charge in vocabs["charge"]:
            per_task["charge"] = vocabs["charge"].display_of(case.charge)
        per_task["term"] = vocabs["term"].display_of(
            bin_prison_term(case.term_months, bins))
        golds[case.id] = per_task

    def responder(request):
        tag = request.tag
        if tag.startswith("reorg"):
            sub, obj, ex = make_echo_reorganized(extract_fact(request.prompt))
            return f"SUB: {sub}\nOBJ: {obj}\nEX: {ex}"
        if tag.startswith("judge."):
            task, _, case_id = tag[len("judge."):].partition(":")
            gold_display = golds.get(case_id, {}).get(task)
            if gold_display is not None and gold_display in extract_candidates(request.prompt):
                return f"LABEL: {gold_display}"
            return "NO-ANSWER"
        return "NO-ANSWER"

    return ScriptedBackend(responder=responder)


# --- experiment runner -------------------------------------------------------

def _load_models(config: ExperimentConfig):
    models_dir = Path(config.models_dir)
    predictors = {task: PredictiveModel.load(models_dir / f"{task}.bin")
                  for task in TASKS}
    retrieval_model = RetrievalModel.load(models_dir / "retriever.bin")
    index = load_index(config.index_path, model=retrieval_model)
    bins = predictors["term"].term_bins
    if bins is None:
        raise ConfigError("term model does not record its interval boundaries")
    return predictors, retrieval_model, index, bins


_PATH_FIELDS = ("test_path", "models_dir", "index_path", "output_dir", "reorg_cache")


def _fingerprint(config: ExperimentConfig, index, reorg_version) -> dict:
    # filesystem locations are echoed to resolved_config.json instead;
    # keeping them out of the fingerprint lets two runs of the same
    # experiment produce byte-identical reports from different directories
    semantic = {k: v for k, v in config.resolved().items() if k not in _PATH_FIELDS}
    return {
        "template_versions": {"reorg": reorg_version, "judge": JUDGE_TEMPLATE_VERSION},
        "seed": config.seed,
        "n_precedents": config.n_precedents,
        "ablations": sorted(config.ablations),
        "backend": config.backend,
        "predict_from": config.predict_from,
        "prompt_budget": config.prompt_budget,
        "index_model_hash": index.model_hash,
        "config": semantic,
    }


def render_report_text(report: dict) -> str:
    lines = [f"{'task':<9}{'Acc':>8}{'Ma-P':>8}{'Ma-R':>8}{'Ma-F':>8}"]
    for task in TASKS:
        row = report["tasks"][task]
        lines.append(f"{task:<9}{row['acc']:>8.2f}{row['ma_p']:>8.2f}"
                     f"{row['ma_r']:>8.2f}{row['ma_f']:>8.2f}")
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig):
    """Run predict_judgment over the test split and aggregate all tasks.

    Writes report.json, report.txt and cases.jsonl under the output
    directory; returns (report, per-case records). Deterministic under
    mock backends.
    """
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    cases = load_cases(config.test_path, strict=False)
    if config.limit is not None:
        cases = cases[:config.limit]
    if not cases:
        raise ConfigError(f"no usable cases in {config.test_path}")

    predictors, retrieval_model, index, bins = _load_models(config)
    vocabs = {task: predictors[task].vocab for task in TASKS}

    if config.backend == "gold":
        backend = make_gold_backend(cases, vocabs, bins)
    else:
        backend = make_backend(config.backend)

    transcript = outdir / "transcript.jsonl"
    if transcript.exists():
        transcript.unlink()
    client = LlmClient(backend, transcript_path=transcript,
                       prompt_budget=config.prompt_budget)
    cache_path = config.reorg_cache or outdir / "reorg_cache.jsonl"
    reorganizer = Reorganizer(client, ReorgCache(cache_path))
    pipeline = JudgePipeline(predictors, retrieval_model, index, reorganizer,
                             client, n=config.n_precedents,
                             ablations=config.ablations,
                             predict_from=config.predict_from)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            judgments = list(pool.map(pipeline.predict, cases))
    else:
        judgments = [pipeline.predict(case) for case in cases]

    report = {"tasks": {}, "n_cases": len(cases),
              "provenance": {}, "rf_provenance": {},
              "fingerprint": _fingerprint(config, index,
                                          reorganizer.template_version)}
    for task in TASKS:
        preds = [j.label(task) for j in judgments]
        if task == "term":
            golds = [bin_prison_term(c.term_months, bins) for c in cases]
        else:
            golds = [getattr(c, task) for c in cases]
        table = confusion_counts(preds, golds, vocabs[task])
        report["tasks"][task] = {k: round(v, 2) for k, v in metrics(table).items()}
        hist: dict = {}
        for j in judgments:
            hist[j.provenance[task]] = hist.get(j.provenance[task], 0) + 1
        report["provenance"][task] = hist
    for j in judgments:
        report["rf_provenance"][j.rf_provenance] = (
            report["rf_provenance"].get(j.rf_provenance, 0) + 1)

    records = []
    for case, j in zip(cases, judgments):
        records.append({
            "case_id": case.id,
            "gold": {"article": case.article, "charge": case.charge,
                     "term": bin_prison_term(case.term_months, bins)},
            "predicted": {"article": j.article, "charge": j.charge, "term": j.term},
            "provenance": j.provenance,
            "rf_provenance": j.rf_provenance,
            "stages": j.stages,
            "explanation": j.explanation,
        })

    (outdir / "resolved_config.json").write_text(
        json.dumps(config.resolved(), ensure_ascii=True, sort_keys=True,
                   indent=2, default=str) + "\n", encoding="utf-8")
    (outdir / "report.json").write_text(
        json.dumps(report, ensure_ascii=True, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (outdir / "report.txt").write_text(render_report_text(report), encoding="utf-8")
    with open(outdir / "cases.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=True, sort_keys=True) + "\n")
    return report, records


def run_ablations(config: ExperimentConfig) -> dict:
    """Base run plus the five single-flag ablation variants."""
    outdir = Path(config.output_dir)
    reports = {}
    variants = [("base", config.ablations)]
    variants += [(name, tuple(sorted(set(config.ablations) | {name})))
                 for name in ABLATIONS]
    for name, flags in variants:
        sub = config.replace(ablations=flags, output_dir=str(outdir / name))
        reports[name], _ = run_experiment(sub)
    summary = {
        name: {task: {"acc": rep["tasks"][task]["acc"],
                      "ma_f": rep["tasks"][task]["ma_f"]}
               for task in TASKS}
        for name, rep in reports.items()
    }
    (outdir / "ablation_summary.json").write_text(
        json.dumps(summary, ensure_ascii=True, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    lines = [f"{'variant':<20}" + "".join(f"{task + ' Acc':>13}{task + ' Ma-F':>13}"
                                          for task in TASKS)]
    for name, _ in variants:
        row = summary[name]
        lines.append(f"{name:<20}" + "".join(
            f"{row[task]['acc']:>13.2f}{row[task]['ma_f']:>13.2f}" for task in TASKS))
    (outdir / "ablation_summary.txt").write_text("\n".join(lines) + "\n",
                                                 encoding="utf-8")
    return reports


def sweep_precedents(config: ExperimentConfig, n_values) -> list:
    """Rerun the pipeline for each n; candidate and precedent counts move
    together. Returns plot-ready rows (one per n and task)."""
    outdir = Path(config.output_dir)
    predictors, _, _, _ = _load_models(config)
    max_n = min(len(predictors[task].vocab) for task in TASKS)
    for n in n_values:
        if not 1 <= n <= max_n:
            raise BadNError(f"n={n} outside [1, {max_n}] for this vocabulary")
    rows = []
    for n in n_values:
        sub = config.replace(n_precedents=n, output_dir=str(outdir / f"n{n}"))
        report, _ = run_experiment(sub)
        for task in TASKS:
            rows.append({"n": n, "task": task,
                         "acc": report["tasks"][task]["acc"],
                         "ma_f": report["tasks"][task]["ma_f"]})
    (outdir / "sweep.json").write_text(
        json.dumps(rows, ensure_ascii=True, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    lines = [f"{'n':>3} {'task':<9}{'Acc':>8}{'Ma-F':>8}"]
    for row in rows:
        lines.append(f"{row['n']:>3} {row['task']:<9}{row['acc']:>8.2f}"
                     f"{row['ma_f']:>8.2f}")
    (outdir / "sweep.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows
