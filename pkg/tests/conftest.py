"""Shared fixtures: toy corpora, the closed-loop synthetic dataset, and
instrumented mock backends."""

from __future__ import annotations

import json
import threading

import pytest

from scentrank.backends import ScoringRequest, ScoringResult, UnigramBackend, score_unigram
from scentrank.corpus import Corpus, Passage, QADataset, QAExample


@pytest.fixture
def toy_corpus() -> Corpus:
    """Three short passages used by the hand-computed BM25 cases."""
    return Corpus(
        [
            Passage("D1", "", "stevie wonder sang the song"),
            Passage("D2", "", "the song was long"),
            Passage("D3", "", "wonder what happened"),
        ]
    )


def build_closed_loop() -> tuple[Corpus, QADataset]:
    """50 passages, 20 queries, exactly one answer-bearing passage each.

    Construction (i in 0..19):
      p000-p019  "topic{i} relic{i}"            the only answer-bearing passage
      p020-p039  "topic{i} alpha"               short teaser, wins BM25 top-1
      p040-p049  "topic{i} alpha beta ..." x2   extra distractor (i in 0..9)

    Query i is "which entry covers topic{i} alpha beta" with gold "relic{i}".
    BM25 prefers the teaser/distractor passages (they match more query terms),
    so baseline top-1 is 0. A gold scent mentions relic{i}, which only the
    answer passage contains, so the smoothed-unigram reranker puts it first.
    """
    passages = []
    for i in range(20):
        passages.append(Passage(f"p{i:03d}", "", f"topic{i:02d} relic{i:02d}"))
    for i in range(20):
        passages.append(Passage(f"p{20 + i:03d}", "", f"topic{i:02d} alpha"))
    for i in range(10):
        passages.append(
            Passage(
                f"p{40 + i:03d}",
                "",
                f"topic{i:02d} alpha beta topic{i:02d} alpha beta",
            )
        )
    examples = [
        QAExample(
            f"q{i:02d}",
            f"which entry covers topic{i:02d} alpha beta",
            (f"relic{i:02d}",),
        )
        for i in range(20)
    ]
    return Corpus(passages), QADataset(examples)


@pytest.fixture(scope="session")
def closed_loop() -> tuple[Corpus, QADataset]:
    return build_closed_loop()


class CountingScoringBackend:
    """Wraps the unigram backend and counts score calls (thread-safe)."""

    def __init__(self):
        self._inner = UnigramBackend()
        self._lock = threading.Lock()
        self.score_calls = 0

    def probe(self) -> None:
        pass

    def score(self, request: ScoringRequest) -> ScoringResult:
        with self._lock:
            self.score_calls += 1
        return self._inner.score(request)

    def score_many(self, requests) -> list[ScoringResult]:
        return [self.score(r) for r in requests]


class CountingGenerationBackend:
    """Returns a canned completion and counts calls (thread-safe).

    ``reply`` may be a string or a callable taking the prompt.
    """

    def __init__(self, reply="a generated scent"):
        self._reply = reply
        self._lock = threading.Lock()
        self.complete_calls = 0
        self.prompts: list[str] = []

    def complete(self, prompt: str, temperature: float, max_tokens: int) -> str:
        with self._lock:
            self.complete_calls += 1
            self.prompts.append(prompt)
        return self._reply(prompt) if callable(self._reply) else self._reply


@pytest.fixture
def counting_scorer() -> CountingScoringBackend:
    return CountingScoringBackend()


@pytest.fixture
def counting_generator() -> CountingGenerationBackend:
    return CountingGenerationBackend()


def write_fixture_files(tmp_path, corpus: Corpus, qa: QADataset) -> dict[str, str]:
    """Materialize a corpus + dataset as pipeline input files."""
    corpus_path = tmp_path / "passages.jsonl"
    with open(corpus_path, "w", encoding="utf-8") as f:
        for p in corpus:
            f.write(json.dumps({"id": p.id, "title": p.title, "contents": p.body}) + "\n")
    qa_path = tmp_path / "qa.jsonl"
    with open(qa_path, "w", encoding="utf-8") as f:
        for ex in qa:
            f.write(
                json.dumps(
                    {
                        "query_id": ex.query_id,
                        "question": ex.question,
                        "answers": list(ex.gold_answers),
                    }
                )
                + "\n"
            )
    return {"corpus": str(corpus_path), "qa": str(qa_path)}


# score_unigram is re-exported here so property tests can build reference
# scores without importing backend internals everywhere.
__all__ = [
    "CountingGenerationBackend",
    "CountingScoringBackend",
    "build_closed_loop",
    "score_unigram",
    "write_fixture_files",
]
