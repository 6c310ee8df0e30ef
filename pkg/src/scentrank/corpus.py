"""Passage collections, QA datasets, retrieval runs, and relevance judgments.

File formats:
  passages jsonl  one object per line: {"id": ..., "title": ..., "contents": ...}
  passages tsv    header line "id<TAB>text<TAB>title"
  qa jsonl        {"query_id": ..., "question": ..., "answers": [...]}
  run trec        "<query_id> Q0 <passage_id> <rank> <score> <tag>"
  run jsonl       {"query_id", "passage_id", "rank", "score", "tag"}
  qrels           "<query_id> 0 <passage_id> <grade>"

Everything is immutable after load and safe for concurrent readers.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Passage:
    """A single evidence passage. ``title`` may be empty, ``body`` may not."""

    id: str
    title: str
    body: str

    @property
    def text(self) -> str:
        """Title and body joined for display/matching; body alone if untitled."""
        return f"{self.title} {self.body}" if self.title else self.body


class Corpus:
    """Immutable id-keyed passage collection."""

    def __init__(self, passages: Iterable[Passage]):
        self._by_id: dict[str, Passage] = {}
        for p in passages:
            if not p.id:
                raise ValidationError("passage with empty id")
            if not p.body:
                raise ValidationError(f"passage {p.id!r} has empty body")
            if p.id in self._by_id:
                raise ValidationError(f"duplicate passage id {p.id!r}")
            self._by_id[p.id] = p

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self._by_id

    def __getitem__(self, passage_id: str) -> Passage:
        try:
            return self._by_id[passage_id]
        except KeyError:
            raise ValidationError(f"unknown passage id {passage_id!r}") from None

    def __iter__(self) -> Iterator[Passage]:
        return iter(self._by_id.values())

    def ids(self) -> list[str]:
        return list(self._by_id)


@dataclass(frozen=True)
class QAExample:
    """A question with its gold answer strings (at least one, none empty)."""

    query_id: str
    question: str
    gold_answers: tuple[str, ...]

    def __post_init__(self):
        if not self.query_id:
            raise ValidationError("QA example with empty query_id")
        if not self.gold_answers:
            raise ValidationError(f"query {self.query_id!r} has no gold answers")
        if any(not a for a in self.gold_answers):
            raise ValidationError(f"query {self.query_id!r} has an empty gold answer")


class QADataset:
    """QA examples in file order, keyed by query_id."""

    def __init__(self, examples: Iterable[QAExample]):
        self._by_id: dict[str, QAExample] = {}
        for ex in examples:
            if ex.query_id in self._by_id:
                raise ValidationError(f"duplicate query_id {ex.query_id!r}")
            self._by_id[ex.query_id] = ex

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, query_id: str) -> bool:
        return query_id in self._by_id

    def __getitem__(self, query_id: str) -> QAExample:
        try:
            return self._by_id[query_id]
        except KeyError:
            raise ValidationError(f"unknown query_id {query_id!r}") from None

    def __iter__(self) -> Iterator[QAExample]:
        return iter(self._by_id.values())

    def questions(self) -> dict[str, str]:
        return {ex.query_id: ex.question for ex in self}


@dataclass(frozen=True)
class RunEntry:
    """One ranked candidate: 1-based rank, retrieval score."""

    passage_id: str
    score: float
    rank: int


class RetrievalRun:
    """Per-query ranked candidate lists from a first-stage retriever.

    Ranks must be 1..n consecutive and scores non-increasing with rank
    (ties allowed); construction validates both.
    """

    def __init__(self, retriever_name: str, rankings: dict[str, list[RunEntry]]):
        for query_id, entries in rankings.items():
            for i, entry in enumerate(entries, start=1):
                if entry.rank != i:
                    raise ValidationError(
                        f"query {query_id!r}: rank {entry.rank} at position {i}"
                        " (ranks must be consecutive from 1)"
                    )
                if i > 1 and entry.score > entries[i - 2].score:
                    raise ValidationError(
                        f"query {query_id!r}: score increases at rank {i}"
                    )
        self.retriever_name = retriever_name
        self._rankings = rankings

    @classmethod
    def from_rankings(
        cls, retriever_name: str, scored: dict[str, list[tuple[str, float]]]
    ) -> "RetrievalRun":
        """Build a run from (passage_id, score) lists, assigning ranks 1..n."""
        rankings = {
            qid: [RunEntry(pid, score, rank) for rank, (pid, score) in enumerate(pairs, 1)]
            for qid, pairs in scored.items()
        }
        return cls(retriever_name, rankings)

    def __len__(self) -> int:
        return len(self._rankings)

    def __contains__(self, query_id: str) -> bool:
        return query_id in self._rankings

    def __getitem__(self, query_id: str) -> list[RunEntry]:
        try:
            return self._rankings[query_id]
        except KeyError:
            raise ValidationError(f"no run entries for query {query_id!r}") from None

    def query_ids(self) -> list[str]:
        return list(self._rankings)

    def items(self) -> Iterator[tuple[str, list[RunEntry]]]:
        return iter(self._rankings.items())

    def validate_against(self, corpus: Corpus) -> None:
        """Every referenced passage_id must resolve in ``corpus``."""
        missing = sorted(
            {e.passage_id for entries in self._rankings.values() for e in entries}
            - set(corpus.ids())
        )
        if missing:
            raise ValidationError(
                f"run references {len(missing)} passage ids absent from the corpus: "
                + ", ".join(missing[:10])
                + ("..." if len(missing) > 10 else "")
            )


class QrelSet:
    """Graded relevance judgments; absent pairs are grade 0."""

    def __init__(self, grades: dict[tuple[str, str], int]):
        for (qid, pid), g in grades.items():
            if g < 0:
                raise ValidationError(f"negative grade for ({qid!r}, {pid!r})")
        self._grades = dict(grades)

    def grade(self, query_id: str, passage_id: str) -> int:
        return self._grades.get((query_id, passage_id), 0)

    def grades_for(self, query_id: str) -> dict[str, int]:
        return {
            pid: g for (qid, pid), g in self._grades.items() if qid == query_id
        }

    def __len__(self) -> int:
        return len(self._grades)


def load_passages(path: str | Path, format: str = "jsonl") -> Corpus:
    """Load a passage collection from a jsonl or tsv file."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"passage file not found: {path}")
    if format == "jsonl":
        passages = _read_passages_jsonl(path)
    elif format == "tsv":
        passages = _read_passages_tsv(path)
    else:
        raise ValidationError(f"unknown passage format {format!r} (expected jsonl or tsv)")
    corpus = Corpus(passages)
    logger.info("loaded %d passages from %s", len(corpus), path)
    return corpus


def _read_passages_jsonl(path: Path) -> list[Passage]:
    passages = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: malformed json ({e.msg})") from e
            try:
                passages.append(
                    Passage(id=str(obj["id"]), title=str(obj.get("title", "")), body=str(obj["contents"]))
                )
            except KeyError as e:
                raise ValidationError(f"{path}:{lineno}: missing field {e.args[0]!r}") from e
    return passages


def _read_passages_tsv(path: Path) -> list[Passage]:
    passages = []
    with open(path, encoding="utf-8", newline="") as f:
        header = f.readline().rstrip("\n")
        if header.split("\t") != ["id", "text", "title"]:
            raise ValidationError(f"{path}:1: expected tsv header 'id\\ttext\\ttitle'")
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) < 2:
                raise ValidationError(f"{path}:{lineno}: expected at least 2 tsv columns")
            pid, text = cols[0], cols[1]
            title = cols[2] if len(cols) > 2 else ""
            passages.append(Passage(id=pid, title=title, body=text))
    return passages


def load_qa(path: str | Path) -> QADataset:
    """Load a QA dataset (query_id, question, answers) from jsonl."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"qa file not found: {path}")
    examples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: malformed json ({e.msg})") from e
            try:
                examples.append(
                    QAExample(
                        query_id=str(obj["query_id"]),
                        question=str(obj["question"]),
                        gold_answers=tuple(str(a) for a in obj["answers"]),
                    )
                )
            except KeyError as e:
                raise ValidationError(f"{path}:{lineno}: missing field {e.args[0]!r}") from e
    dataset = QADataset(examples)
    logger.info("loaded %d qa examples from %s", len(dataset), path)
    return dataset


def load_run(
    path: str | Path, format: str = "trec", corpus: Corpus | None = None
) -> RetrievalRun:
    """Load a retrieval run from a trec or jsonl file.

    Ranks must be consecutive per query. Runs whose scores are not
    non-increasing in rank are repaired with a warning: entries are
    stably re-sorted by score descending and re-ranked.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"run file not found: {path}")
    if format == "trec":
        tag, raw = _read_run_trec(path)
    elif format == "jsonl":
        tag, raw = _read_run_jsonl(path)
    else:
        raise ValidationError(f"unknown run format {format!r} (expected trec or jsonl)")

    rankings: dict[str, list[RunEntry]] = {}
    for query_id, rows in raw.items():
        for i, (pid, score, rank) in enumerate(rows, start=1):
            if rank != i:
                raise ValidationError(
                    f"{path}: query {query_id!r} has rank {rank} at position {i}"
                    " (ranks must be consecutive from 1)"
                )
        scores = [score for _, score, _ in rows]
        if any(scores[i] > scores[i - 1] for i in range(1, len(scores))):
            logger.warning(
                "run %s: query %s has scores increasing with rank; re-sorting by score",
                path,
                query_id,
            )
            rows = sorted(rows, key=lambda r: -r[1])  # stable on input order
        rankings[query_id] = [
            RunEntry(pid, score, i) for i, (pid, score, _) in enumerate(rows, start=1)
        ]
    run = RetrievalRun(tag, rankings)
    if corpus is not None:
        run.validate_against(corpus)
    return run


def _read_run_trec(path: Path) -> tuple[str, dict[str, list[tuple[str, float, int]]]]:
    tag = "run"
    raw: dict[str, list[tuple[str, float, int]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValidationError(
                    f"{path}:{lineno}: expected 6 space-separated trec fields, got {len(parts)}"
                )
            query_id, _q0, pid, rank_s, score_s, tag = parts
            try:
                rank, score = int(rank_s), float(score_s)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: bad rank/score") from None
            raw.setdefault(query_id, []).append((pid, score, rank))
    return tag, raw


def _read_run_jsonl(path: Path) -> tuple[str, dict[str, list[tuple[str, float, int]]]]:
    tag = "run"
    raw: dict[str, list[tuple[str, float, int]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                qid = str(obj["query_id"])
                entry = (str(obj["passage_id"]), float(obj["score"]), int(obj["rank"]))
                tag = str(obj.get("tag", tag))
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise ValidationError(f"{path}:{lineno}: malformed run record ({e})") from e
            raw.setdefault(qid, []).append(entry)
    return tag, raw


def write_run(run: RetrievalRun, path: str | Path) -> None:
    """Write a run in trec format; scores serialized with 6 decimal places."""
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as f:
            for query_id, entries in run.items():
                for e in entries:
                    f.write(
                        f"{query_id} Q0 {e.passage_id} {e.rank} {e.score:.6f} {run.retriever_name}\n"
                    )
    except OSError as e:
        raise ValidationError(f"cannot write run file {path}: {e}") from e


def load_qrels(path: str | Path) -> QrelSet:
    """Load graded judgments from '<query_id> 0 <passage_id> <grade>' lines."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"qrels file not found: {path}")
    grades: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValidationError(f"{path}:{lineno}: expected 4 qrels fields")
            qid, _iter, pid, grade_s = parts
            try:
                grades[(qid, pid)] = int(grade_s)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: bad grade {grade_s!r}") from None
    return QrelSet(grades)
