"""Answer generation from top-ranked documents.

The reader prompts the generation backend with the top k reranked passages
(in rank order, with [1]/[2]... headers) followed by the question. A
question-only mode omits the document block entirely, as a no-retrieval
baseline.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backends import GenerationBackend
from .corpus import Corpus, Passage
from .errors import ValidationError
from .rerank import RerankResult

logger = logging.getLogger(__name__)

DEFAULT_READER_TEMPLATE = (
    "Answer the question using the documents.\n\n"
    "{documents}\n\n"
    "Question: {question}\n"
    "Answer:"
)
QUESTION_ONLY_TEMPLATE = "Question: {question}\nAnswer:"


@dataclass(frozen=True)
class ReaderConfig:
    top_k_docs: int = 1
    prompt_template: str = DEFAULT_READER_TEMPLATE
    max_answer_tokens: int = 64
    temperature: float = 0.0

    def __post_init__(self):
        if self.top_k_docs < 1:
            raise ValidationError(f"top_k_docs must be >= 1, got {self.top_k_docs}")
        if self.max_answer_tokens < 1:
            raise ValidationError(
                f"max_answer_tokens must be >= 1, got {self.max_answer_tokens}"
            )
        for placeholder in ("{question}", "{documents}"):
            if self.prompt_template.count(placeholder) != 1:
                raise ValidationError(
                    f"reader template must contain {placeholder} exactly once"
                )


def build_reader_prompt(
    question: str, docs: Sequence[Passage], config: ReaderConfig = ReaderConfig()
) -> str:
    """Documents in rank order with index headers, then the question."""
    if not docs:
        raise ValidationError("reader prompt requires at least one document")
    if len(docs) > config.top_k_docs:
        raise ValidationError(
            f"got {len(docs)} documents but top_k_docs={config.top_k_docs}"
        )
    block = "\n".join(f"[{i}] {doc.text}" for i, doc in enumerate(docs, start=1))
    return config.prompt_template.format(documents=block, question=question)


def answer(
    backend: GenerationBackend,
    question: str,
    result: RerankResult | None,
    corpus: Corpus,
    config: ReaderConfig = ReaderConfig(),
    question_only: bool = False,
) -> tuple[str, list[str]]:
    """Generate one answer; returns (answer text, ids of the docs used)."""
    if question_only:
        prompt, doc_ids = QUESTION_ONLY_TEMPLATE.format(question=question), []
    else:
        if result is None:
            raise ValidationError("reader needs a rerank result unless question_only")
        doc_ids = [c.passage_id for c in result.candidates[: config.top_k_docs]]
        docs = [corpus[pid] for pid in doc_ids]
        prompt = build_reader_prompt(question, docs, config)
    text = backend.complete(prompt, config.temperature, config.max_answer_tokens)
    words = text.strip().split()
    return " ".join(words[: config.max_answer_tokens]), doc_ids


def answer_all(
    backend: GenerationBackend,
    questions: dict[str, str],
    results: dict[str, RerankResult],
    corpus: Corpus,
    config: ReaderConfig = ReaderConfig(),
    question_only: bool = False,
    max_in_flight: int = 4,
) -> dict[str, tuple[str, list[str]]]:
    """Answer every question that has a rerank result, bounded-parallel."""
    if max_in_flight < 1:
        raise ValidationError(f"max_in_flight must be >= 1, got {max_in_flight}")
    query_ids = list(questions) if question_only else [
        qid for qid in questions if qid in results
    ]
    if not query_ids:
        raise ValidationError("no queries with rerank results to answer")

    def one(qid: str) -> tuple[str, list[str]]:
        return answer(
            backend, questions[qid], results.get(qid), corpus, config, question_only
        )

    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        answers = list(pool.map(one, query_ids))
    return dict(zip(query_ids, answers))


def write_predictions(
    predictions: dict[str, tuple[str, list[str]]], path: str | Path
) -> None:
    """Serialize {query_id, answer, doc_ids} rows as jsonl."""
    try:
        with open(path, "w", encoding="utf-8") as f:
            for qid, (text, doc_ids) in predictions.items():
                row = {"query_id": qid, "answer": text, "doc_ids": doc_ids}
                f.write(json.dumps(row, ensure_ascii=False) + "\n")
    except OSError as e:
        raise ValidationError(f"cannot write predictions {path}: {e}") from e


def load_predictions(path: str | Path) -> dict[str, tuple[str, list[str]]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"predictions file not found: {path}")
    out: dict[str, tuple[str, list[str]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[str(obj["query_id"])] = (
                    str(obj["answer"]),
                    [str(d) for d in obj["doc_ids"]],
                )
            except (json.JSONDecodeError, KeyError) as e:
                raise ValidationError(f"{path}:{lineno}: bad prediction row ({e})") from e
    return out
