"""BM25 first-stage retrieval over an in-memory inverted index.

Scoring uses the non-negative idf variant ln(1 + (N - df + 0.5) / (df + 0.5))
with k1 = 1.2 and b = 0.75 by default. No stopword removal, no stemming:
tokens are lowercased maximal alphanumeric runs.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, RetrievalRun
from .errors import ValidationError

# Unicode-aware "alphanumeric run": word chars minus underscore.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Split text into lowercased alphanumeric tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValidationError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValidationError(f"b must lie in [0, 1], got {self.b}")


class InvertedIndex:
    """Term -> {passage_id -> term frequency} postings with length stats.

    Indexes the concatenation of title and body of each passage.
    """

    def __init__(
        self,
        postings: dict[str, dict[str, int]],
        doc_lengths: dict[str, int],
        params: Bm25Params,
    ):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.params = params
        self.doc_count = len(doc_lengths)
        self.avg_doc_length = (
            sum(doc_lengths.values()) / self.doc_count if self.doc_count else 0.0
        )

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def score(self, query_terms: list[str], passage_id: str) -> float:
        """BM25 score of one passage for pre-tokenized query terms."""
        if passage_id not in self.doc_lengths:
            raise ValidationError(f"passage {passage_id!r} not in index")
        k1, b = self.params.k1, self.params.b
        dl = self.doc_lengths[passage_id]
        norm = k1 * (1.0 - b + b * dl / self.avg_doc_length) if self.avg_doc_length else k1
        total = 0.0
        for term in query_terms:
            tf = self.postings.get(term, {}).get(passage_id, 0)
            if tf == 0:
                continue
            total += self.idf(term) * tf * (k1 + 1.0) / (tf + norm)
        return total

    def save(self, path: str | Path) -> None:
        """Persist the index as deterministic JSON (sorted keys)."""
        snapshot = {
            "params": {"k1": self.params.k1, "b": self.params.b},
            "doc_lengths": self.doc_lengths,
            "postings": self.postings,
        }
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(snapshot, f, sort_keys=True, separators=(",", ":"))
        except OSError as e:
            raise ValidationError(f"cannot write index {path}: {e}") from e

    @classmethod
    def load(cls, path: str | Path) -> "InvertedIndex":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"index file not found: {path}")
        try:
            with open(path, encoding="utf-8") as f:
                snapshot = json.load(f)
            params = Bm25Params(**snapshot["params"])
            postings = {
                t: {pid: int(tf) for pid, tf in plist.items()}
                for t, plist in snapshot["postings"].items()
            }
            doc_lengths = {pid: int(n) for pid, n in snapshot["doc_lengths"].items()}
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"corrupt index file {path}: {e}") from e
        return cls(postings, doc_lengths, params)


def build_index(corpus: Corpus, params: Bm25Params = Bm25Params()) -> InvertedIndex:
    """Index every passage of the corpus (title + body)."""
    postings: dict[str, dict[str, int]] = {}
    doc_lengths: dict[str, int] = {}
    for passage in corpus:
        tokens = tokenize(passage.text)
        doc_lengths[passage.id] = len(tokens)
        for term in tokens:
            bucket = postings.setdefault(term, {})
            bucket[passage.id] = bucket.get(passage.id, 0) + 1
    return InvertedIndex(postings, doc_lengths, params)


def retrieve(index: InvertedIndex, query: str, k: int) -> list[tuple[str, float]]:
    """Top-k passages by BM25 score, ties broken by ascending passage id.

    Returns min(k, corpus size) pairs; zero-score passages fill the tail
    when fewer than k passages match any query term.
    """
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}")
    query_terms = tokenize(query)
    # Postings only select candidates; each candidate is then scored with the
    # same per-document accumulation as score(), so float summation order
    # cannot diverge between retrieval and direct scoring.
    matched = set()
    for term in set(query_terms):
        matched.update(index.postings.get(term, ()))
    scores = {pid: 0.0 for pid in index.doc_lengths}
    for pid in matched:
        scores[pid] = index.score(query_terms, pid)
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ordered[: min(k, len(ordered))]


def retrieve_all(
    index: InvertedIndex,
    questions: dict[str, str],
    k: int,
    tag: str = "bm25",
) -> RetrievalRun:
    """Run retrieval for every question and package the results as a run."""
    scored = {qid: retrieve(index, question, k) for qid, question in questions.items()}
    return RetrievalRun.from_rankings(tag, scored)
