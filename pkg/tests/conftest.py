"""Shared fixtures: the bundled corpus and a trained desk-scale pipeline.

Training fixtures are session-scoped; the whole suite trains each model
once and reuses it.
"""

from pathlib import Path

import pytest

from lexjudge.corpus import (
    load_cases,
    sample_case_database,
    split_dataset,
)
from lexjudge.llm import EchoBackend, LlmClient
from lexjudge.predictor import TrainConfig, train_predictor
from lexjudge.reorganize import ReorgCache, Reorganizer, concat_reorganized
from lexjudge.retriever import RetrievalConfig, index_database, train_retriever

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_CORPUS = REPO_ROOT / "data" / "synthetic_cases.jsonl"

SPLIT_SEED = 7
DB_SIZE = 200


@pytest.fixture(scope="session")
def fixture_cases():
    return load_cases(FIXTURE_CORPUS)


@pytest.fixture(scope="session")
def splits(fixture_cases):
    return split_dataset(fixture_cases, (0.8, 0.1, 0.1), seed=SPLIT_SEED)


@pytest.fixture(scope="session")
def echo_reorganizer():
    client = LlmClient(EchoBackend())
    return Reorganizer(client, ReorgCache())


@pytest.fixture(scope="session")
def reorg_map(splits, echo_reorganizer):
    train, _, _ = splits
    return {c.id: echo_reorganizer.reorganize(c.fact, c.id) for c in train}


@pytest.fixture(scope="session")
def case_db(splits, reorg_map):
    train, _, _ = splits
    return sample_case_database(train, reorg_map, n_db=DB_SIZE, seed=SPLIT_SEED)


@pytest.fixture(scope="session")
def predictors(splits):
    train, _, _ = splits
    return {task: train_predictor(train, task, TrainConfig(epochs=20, seed=SPLIT_SEED))
            for task in ("article", "charge", "term")}


@pytest.fixture(scope="session")
def retrieval_model(case_db):
    texts = [concat_reorganized(e.rf) for e in case_db.entries]
    return train_retriever(texts, RetrievalConfig(seed=SPLIT_SEED))


@pytest.fixture(scope="session")
def precedent_index(case_db, retrieval_model):
    return index_database(case_db, retrieval_model)


@pytest.fixture(scope="session")
def artifacts_dir(tmp_path_factory, splits, predictors, retrieval_model,
                  precedent_index, case_db):
    """Models dir + index + splits on disk, as the CLI/eval layer expects."""
    from lexjudge.corpus import save_case_database, save_cases
    from lexjudge.retriever import save_index

    root = tmp_path_factory.mktemp("artifacts")
    models = root / "models"
    models.mkdir()
    for task, model in predictors.items():
        model.save(models / f"{task}.bin")
    retrieval_model.save(models / "retriever.bin")
    save_index(precedent_index, root / "idx.bin")
    save_case_database(case_db, root / "db.jsonl")
    train, val, test = splits
    save_cases(train, root / "train.jsonl")
    save_cases(val, root / "val.jsonl")
    save_cases(test, root / "test.jsonl")
    return root
