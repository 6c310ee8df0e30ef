"""Reader prompt assembly, answering, and prediction files."""

import pytest

from scentrank.corpus import Corpus, Passage
from scentrank.errors import ValidationError
from scentrank.reader import (
    ReaderConfig,
    answer,
    answer_all,
    build_reader_prompt,
    load_predictions,
    write_predictions,
)
from scentrank.rerank import RerankResult, ScoredCandidate
from .conftest import CountingGenerationBackend


def make_result(*passage_ids) -> RerankResult:
    candidates = tuple(
        ScoredCandidate(pid, i, float(10 - i), -1.0, 1, -1.0, i)
        for i, pid in enumerate(passage_ids, start=1)
    )
    return RerankResult("q1", "asrank", candidates)


@pytest.fixture
def corpus():
    return Corpus(
        [
            Passage("a", "", "first passage text"),
            Passage("b", "", "second passage text"),
            Passage("c", "", "third passage text"),
        ]
    )


def test_config_validation():
    with pytest.raises(ValidationError):
        ReaderConfig(top_k_docs=0)
    with pytest.raises(ValidationError):
        ReaderConfig(max_answer_tokens=0)
    with pytest.raises(ValidationError):
        ReaderConfig(prompt_template="missing documents {question}")
    with pytest.raises(ValidationError):
        ReaderConfig(prompt_template="{documents} {documents} {question}")


def test_prompt_single_doc_before_question(corpus):
    prompt = build_reader_prompt("who wrote it", [corpus["a"]])
    assert "first passage text" in prompt
    assert prompt.index("first passage text") < prompt.index("who wrote it")


def test_prompt_headers_in_rank_order(corpus):
    config = ReaderConfig(top_k_docs=2)
    prompt = build_reader_prompt("q", [corpus["b"], corpus["a"]], config)
    assert "[1] second passage text" in prompt
    assert "[2] first passage text" in prompt
    assert prompt.index("[1]") < prompt.index("[2]")


def test_prompt_rejects_empty_docs():
    with pytest.raises(ValidationError):
        build_reader_prompt("q", [])


def test_prompt_rejects_too_many_docs(corpus):
    with pytest.raises(ValidationError):
        build_reader_prompt("q", [corpus["a"], corpus["b"]], ReaderConfig(top_k_docs=1))


def test_answer_uses_top_k_docs(corpus):
    backend = CountingGenerationBackend("ANSWER")
    config = ReaderConfig(top_k_docs=2)
    text, doc_ids = answer(backend, "question", make_result("c", "a", "b"), corpus, config)
    assert text == "ANSWER"
    assert doc_ids == ["c", "a"]
    prompt = backend.prompts[0]
    assert "[1] third passage text" in prompt
    assert "[2] first passage text" in prompt
    assert "second passage" not in prompt


def test_answer_prompt_tracks_rerank_order(corpus):
    backend = CountingGenerationBackend("x")
    config = ReaderConfig(top_k_docs=2)
    answer(backend, "q", make_result("a", "b"), corpus, config)
    answer(backend, "q", make_result("b", "a"), corpus, config)
    assert backend.prompts[0] != backend.prompts[1]


def test_answer_question_only_mode(corpus):
    backend = CountingGenerationBackend("from memory")
    text, doc_ids = answer(backend, "the question", None, corpus, question_only=True)
    assert text == "from memory"
    assert doc_ids == []
    assert "passage" not in backend.prompts[0]
    assert "the question" in backend.prompts[0]


def test_answer_requires_result_unless_question_only(corpus):
    with pytest.raises(ValidationError):
        answer(CountingGenerationBackend(), "q", None, corpus)


def test_answer_truncates_to_token_budget(corpus):
    backend = CountingGenerationBackend("one two three four five six")
    config = ReaderConfig(max_answer_tokens=3)
    text, _ = answer(backend, "q", make_result("a"), corpus, config)
    assert text == "one two three"


def test_answer_deterministic_with_mock(corpus):
    backend = CountingGenerationBackend(lambda prompt: f"echo {len(prompt)}")
    first, _ = answer(backend, "q", make_result("a"), corpus)
    second, _ = answer(backend, "q", make_result("a"), corpus)
    assert first == second


def test_answer_all(corpus):
    backend = CountingGenerationBackend("ans")
    results = {"q1": make_result("a"), "q2": make_result("b")}
    predictions = answer_all(
        backend, {"q1": "first", "q2": "second"}, results, corpus
    )
    assert set(predictions) == {"q1", "q2"}
    assert backend.complete_calls == 2


def test_answer_all_skips_queries_without_results(corpus):
    backend = CountingGenerationBackend("ans")
    predictions = answer_all(
        backend, {"q1": "first", "q2": "no result"}, {"q1": make_result("a")}, corpus
    )
    assert set(predictions) == {"q1"}


def test_predictions_round_trip(tmp_path):
    predictions = {"q1": ("Stevie Wonder", ["a", "b"]), "q2": ("Paris", [])}
    path = tmp_path / "predictions.jsonl"
    write_predictions(predictions, path)
    loaded = load_predictions(path)
    assert loaded == predictions
    path2 = tmp_path / "predictions2.jsonl"
    write_predictions(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_predictions_malformed(tmp_path):
    path = tmp_path / "predictions.jsonl"
    path.write_text('{"query_id": "q1"}\n')
    with pytest.raises(ValidationError, match="predictions.jsonl:1"):
        load_predictions(path)
