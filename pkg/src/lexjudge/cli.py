"""Single entry point: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go
to stderr; data goes to files or stdout. Every subcommand that involves
randomness honors --seed, and with mock backends every run is
bit-reproducible.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .corpus import (
    DEFAULT_TERM_BINS,
    TASKS,
    Case,
    load_cases,
    sample_case_database,
    save_case_database,
    save_cases,
    split_dataset,
)
from .errors import LexjudgeError
from .evaluation import (
    load_experiment_config,
    render_report_text,
    run_ablations,
    run_experiment,
    sweep_precedents,
)
from .judge import ABLATIONS, JudgePipeline
from .llm import LlmClient, LlmRequest, make_backend
from .predictor import CandidateSet, PredictiveModel, TrainConfig, candidate_labels, train_predictor
from .reorganize import ReorgCache, Reorganizer, ReorganizedFact, cache_key, concat_reorganized
from .retriever import (
    RetrievalConfig,
    RetrievalModel,
    index_database,
    load_index,
    save_index,
    select_by_vector,
    embed_text,
    train_retriever,
)

log = logging.getLogger("lexjudge.cli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_floats(text):
    return tuple(float(x) for x in text.split(","))


def _csv_ints(text):
    return tuple(int(x) for x in text.split(","))


# --- command implementations -------------------------------------------------

def _cmd_corpus_validate(args) -> int:
    cases = load_cases(args.path, schema=args.schema, strict=not args.lenient)
    print(f"ok: {len(cases)} cases")
    return 0


def _cmd_corpus_split(args) -> int:
    cases = load_cases(args.path)
    train, val, test = split_dataset(cases, args.ratios, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("val", val), ("test", test)):
        save_cases(part, out / f"{name}.jsonl")
    print(json.dumps({"train": len(train), "val": len(val), "test": len(test)}))
    return 0


def _cmd_corpus_build_db(args) -> int:
    train = load_cases(args.train)
    cache = ReorgCache(args.reorg_cache)
    reorganized = {}
    for case in train:
        hit = cache.get(cache_key(case.fact, args.template_version))
        if hit is not None:
            reorganized[case.id] = ReorganizedFact(*hit, source_case_id=case.id)
    db = sample_case_database(train, reorganized, n_db=args.n, seed=args.seed,
                              bins=args.bins)
    save_case_database(db, args.out)
    print(json.dumps({"size": db.size, "out": str(args.out)}))
    return 0


def _cmd_reorg_run(args) -> int:
    cases = load_cases(args.input)
    client = LlmClient(make_backend(args.backend), prompt_budget=args.budget)
    reorganizer = Reorganizer(client, ReorgCache(args.cache),
                              template_version=args.template_version)
    fresh = 0
    for case in cases:
        key = cache_key(case.fact, args.template_version)
        if key not in reorganizer.cache:
            fresh += 1
        reorganizer.reorganize(case.fact, case.id)
    print(json.dumps({"cases": len(cases), "new": fresh, "cache": str(args.cache)}))
    return 0


def _cmd_predictor_train(args) -> int:
    cases = load_cases(args.data)
    config = TrainConfig(epochs=args.epochs, lr=args.lr, batch=args.batch,
                         seed=args.seed, dim=args.dim, n_buckets=args.buckets)
    model = train_predictor(cases, args.task, config, bins=args.bins)
    model.save(args.out)
    print(json.dumps({"task": args.task, "out": str(args.out),
                      "final": model.final_report}))
    return 0


def _cmd_predictor_topn(args) -> int:
    model = PredictiveModel.load(args.model)
    fact = Path(args.fact_file).read_text(encoding="utf-8").strip()
    cands = candidate_labels(model.predict(fact), args.n, model.vocab)
    print(json.dumps({
        "task": model.task,
        "labels": cands.labels,
        "displays": [model.vocab.display_of(l) for l in cands.labels],
        "probs": [round(p, 6) for p in cands.probs],
    }, ensure_ascii=False))
    return 0


def _cmd_retriever_train(args) -> int:
    from .corpus import load_case_database

    db = load_case_database(args.corpus)
    texts = [concat_reorganized(e.rf) for e in db.entries]
    config = RetrievalConfig(epochs=args.epochs, lr=args.lr, batch=args.batch,
                             tau=args.tau, seed=args.seed, dim=args.dim,
                             n_buckets=args.buckets)
    model = train_retriever(texts, config)
    model.save(args.out)
    print(json.dumps({"out": str(args.out), "loss_curve":
                      [round(e["loss"], 4) for e in model.train_log]}))
    return 0


def _cmd_retriever_index(args) -> int:
    from .corpus import load_case_database

    db = load_case_database(args.db)
    model = RetrievalModel.load(args.model)
    index = index_database(db, model, allow_untrained=args.allow_untrained)
    save_index(index, args.out)
    print(json.dumps({"entries": len(index), "dim": index.dim, "out": str(args.out)}))
    return 0


def _cmd_retriever_query(args) -> int:
    model = RetrievalModel.load(args.model)
    index = load_index(args.index, model=model)
    rf_obj = json.loads(Path(args.rf).read_text(encoding="utf-8"))
    rf = ReorganizedFact(rf_obj["sub"], rf_obj["obj"], rf_obj["ex"],
                         source_case_id=rf_obj.get("id", ""))
    labels = [int(x) if args.task in ("article", "term") else x
              for x in args.candidates.split(",")]
    cands = CandidateSet(task=args.task, labels=labels, probs=[], indices=[])
    precs = select_by_vector(embed_text(concat_reorganized(rf), model), cands, index)
    print(json.dumps([{"case_id": p.case_id, "score": round(p.score, 6),
                       "matched_label": p.matched_label}
                      for p in precs], ensure_ascii=False))
    return 0


def _cmd_judge_predict(args) -> int:
    rec = json.loads(Path(args.case_file).read_text(encoding="utf-8"))
    case = Case(id=rec.get("id", "case"), fact=rec["fact"],
                article=rec.get("article", 0), charge=rec.get("charge", ""),
                term_months=rec.get("term_months", 0),
                date=rec.get("date", "1970-01-01"))
    models_dir = Path(args.models)
    predictors = {task: PredictiveModel.load(models_dir / f"{task}.bin")
                  for task in TASKS}
    retrieval_model = RetrievalModel.load(models_dir / "retriever.bin")
    index = load_index(args.index, model=retrieval_model)
    client = LlmClient(make_backend(args.backend), prompt_budget=args.budget)
    reorganizer = Reorganizer(client, ReorgCache(args.reorg_cache))
    ablations = tuple(args.ablate.split(",")) if args.ablate else ()
    pipeline = JudgePipeline(predictors, retrieval_model, index, reorganizer,
                             client, n=args.n_precedents, ablations=ablations,
                             predict_from=args.predict_from)
    judgment = pipeline.predict(case)
    print(json.dumps({
        "case_id": case.id,
        "article": judgment.article,
        "charge": judgment.charge,
        "term": judgment.term,
        "provenance": judgment.provenance,
        "explanation": judgment.explanation,
    }, ensure_ascii=False))
    return 0


def _cmd_eval_run(args) -> int:
    config = load_experiment_config(args.config)
    if args.jobs is not None:
        config = config.replace(jobs=args.jobs)
    report, _ = run_experiment(config)
    sys.stdout.write(render_report_text(report))
    print(f"report: {Path(config.output_dir) / 'report.json'}")
    return 0


def _cmd_eval_ablate(args) -> int:
    config = load_experiment_config(args.config)
    run_ablations(config)
    summary = Path(config.output_dir) / "ablation_summary.txt"
    sys.stdout.write(summary.read_text(encoding="utf-8"))
    return 0


def _cmd_eval_sweep(args) -> int:
    config = load_experiment_config(args.config)
    sweep_precedents(config, list(args.n))
    sweep = Path(config.output_dir) / "sweep.txt"
    sys.stdout.write(sweep.read_text(encoding="utf-8"))
    return 0


def _cmd_llm_probe(args) -> int:
    client = LlmClient(make_backend(args.backend))
    started = time.monotonic()
    client.complete(LlmRequest("Reply with the single word: ok", tag="probe"))
    elapsed_ms = 1000.0 * (time.monotonic() - started)
    print(f"ok ({elapsed_ms:.1f} ms)")
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> _Parser:
    root = _Parser(prog="lexjudge",
                   description="Precedent-backed legal judgment prediction pipeline.")
    root.add_argument("--log-level", default="warning",
                      choices=["debug", "info", "warning", "error"])
    root.add_argument("--version", action="version", version=f"lexjudge {__version__}")
    groups = root.add_subparsers(dest="group", metavar="<command>")

    corpus = groups.add_parser("corpus", help="dataset loading, splits, case database")
    corpus_sub = corpus.add_subparsers(dest="action")
    p = corpus_sub.add_parser("validate", help="validate a JSONL case file")
    p.add_argument("path")
    p.add_argument("--schema", default="cases-v1")
    p.add_argument("--lenient", action="store_true",
                   help="skip invalid records with a warning instead of failing")
    p.set_defaults(func=_cmd_corpus_validate)
    p = corpus_sub.add_parser("split", help="seeded train/val/test split")
    p.add_argument("path")
    p.add_argument("--ratios", type=_csv_floats, default=(0.8, 0.1, 0.1))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_corpus_split)
    p = corpus_sub.add_parser("build-db", help="sample the precedent case database")
    p.add_argument("--train", required=True)
    p.add_argument("--reorg-cache", required=True)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=_csv_ints, default=DEFAULT_TERM_BINS)
    p.add_argument("--template-version", default="v1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_corpus_build_db)

    reorg = groups.add_parser("reorg", help="LLM fact reorganization")
    reorg_sub = reorg.add_subparsers(dest="action")
    p = reorg_sub.add_parser("run", help="reorganize every case into the cache")
    p.add_argument("--input", required=True)
    p.add_argument("--backend", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--budget", type=int, default=12000)
    p.add_argument("--template-version", default="v1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_reorg_run)

    predictor = groups.add_parser("predictor", help="per-task classifiers")
    predictor_sub = predictor.add_subparsers(dest="action")
    p = predictor_sub.add_parser("train")
    p.add_argument("--task", required=True, choices=list(TASKS))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--buckets", type=int, default=4096)
    p.add_argument("--bins", type=_csv_ints, default=DEFAULT_TERM_BINS)
    p.set_defaults(func=_cmd_predictor_train)
    p = predictor_sub.add_parser("topn")
    p.add_argument("--model", required=True)
    p.add_argument("--fact-file", required=True)
    p.add_argument("--n", type=int, default=3)
    p.set_defaults(func=_cmd_predictor_topn)

    retriever = groups.add_parser("retriever", help="dual-encoder precedent retrieval")
    retriever_sub = retriever.add_subparsers(dest="action")
    p = retriever_sub.add_parser("train")
    p.add_argument("--corpus", required=True, help="case database JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=2.0)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--buckets", type=int, default=4096)
    p.set_defaults(func=_cmd_retriever_train)
    p = retriever_sub.add_parser("index")
    p.add_argument("--db", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--allow-untrained", action="store_true")
    p.set_defaults(func=_cmd_retriever_index)
    p = retriever_sub.add_parser("query")
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--rf", required=True, help="JSON file with sub/obj/ex")
    p.add_argument("--candidates", required=True, help="comma-separated labels")
    p.add_argument("--task", required=True, choices=list(TASKS))
    p.set_defaults(func=_cmd_retriever_query)

    judge = groups.add_parser("judge", help="final-label prediction")
    judge_sub = judge.add_subparsers(dest="action")
    p = judge_sub.add_parser("predict")
    p.add_argument("--case-file", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--backend", required=True)
    p.add_argument("--ablate", default="",
                   help=f"comma-separated flags from: {', '.join(ABLATIONS)}")
    p.add_argument("--n-precedents", type=int, default=3)
    p.add_argument("--reorg-cache", default=None)
    p.add_argument("--budget", type=int, default=12000)
    p.add_argument("--predict-from", default="raw", choices=["raw", "reorganized"])
    p.set_defaults(func=_cmd_judge_predict)

    evalp = groups.add_parser("eval", help="experiments, ablations, sweeps")
    eval_sub = evalp.add_subparsers(dest="action")
    p = eval_sub.add_parser("run")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_eval_run)
    p = eval_sub.add_parser("ablate")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_eval_ablate)
    p = eval_sub.add_parser("sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=_csv_ints, default=(1, 2, 3, 4, 5))
    p.set_defaults(func=_cmd_eval_sweep)

    llm = groups.add_parser("llm", help="LLM backend utilities")
    llm_sub = llm.add_subparsers(dest="action")
    p = llm_sub.add_parser("probe", help="backend health check")
    p.add_argument("--backend", required=True)
    p.set_defaults(func=_cmd_llm_probe)

    return root


_KNOWN_COMMANDS = ("corpus", "reorg", "predictor", "retriever", "judge", "eval", "llm")


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help / --version print and exit
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        message = str(exc)
        if "invalid choice" in message:
            bad = message.split("invalid choice: '", 1)[-1].split("'", 1)[0]
            close = difflib.get_close_matches(bad, _KNOWN_COMMANDS, n=1)
            if close:
                print(f"did you mean: {close[0]}?", file=sys.stderr)
        return 1

    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, args.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    func = getattr(args, "func", None)
    if func is None:
        print("missing subcommand; see `lexjudge --help`", file=sys.stderr)
        return 1
    try:
        return func(args) or 0
    except LexjudgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> None:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))
