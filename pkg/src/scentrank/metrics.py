"""Evaluation: answer matching, Top-K accuracy, nDCG, reader metrics, latency.

Answer matching uses SQuAD-style normalization (lowercase, strip punctuation,
drop the articles a/an/the, collapse whitespace) and token-boundary substring
containment, so "Wonder" does not match inside "wonderful".
"""

from __future__ import annotations

import json
import logging
import math
import re
import string
import threading
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Corpus, Passage, QADataset, QrelSet, RetrievalRun
from .errors import ValidationError
from .rerank import RerankResult

logger = logging.getLogger(__name__)

ARTICLES_REGEX = re.compile(r"\b(a|an|the)\b", re.UNICODE)
PHASES = ("scent", "score", "total")


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in string.punctuation)
    s = ARTICLES_REGEX.sub(" ", s)
    return " ".join(s.split())


def has_answer(passage: Passage, golds: Sequence[str]) -> bool:
    """True iff any normalized gold occurs token-aligned in title+body."""
    if not golds:
        raise ValidationError("has_answer requires at least one gold answer")
    haystack = f" {normalize_answer(passage.text)} "
    for gold in golds:
        needle = normalize_answer(gold)
        if needle and f" {needle} " in haystack:
            return True
    return False


@dataclass(frozen=True)
class MetricRow:
    """One report line; ``k`` is None for rows without a cutoff."""

    metric: str
    k: int | None
    value: float
    n_queries: int


class EvalReport:
    """Ordered metric rows with tsv and jsonl serialization."""

    def __init__(self, rows: Sequence[MetricRow]):
        self.rows = list(rows)

    def value(self, metric: str, k: int | None = None) -> float:
        for row in self.rows:
            if row.metric == metric and row.k == k:
                return row.value
        raise ValidationError(f"no row for metric {metric!r} at k={k}")

    def to_tsv(self) -> str:
        lines = ["metric\tk\tvalue\tn_queries"]
        for r in self.rows:
            k = "" if r.k is None else str(r.k)
            lines.append(f"{r.metric}\t{k}\t{r.value:.6f}\t{r.n_queries}")
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path: str | Path) -> None:
        try:
            with open(path, "w", encoding="utf-8") as f:
                for r in self.rows:
                    row = {
                        "metric": r.metric,
                        "k": r.k,
                        "value": r.value,
                        "n_queries": r.n_queries,
                    }
                    f.write(json.dumps(row) + "\n")
        except OSError as e:
            raise ValidationError(f"cannot write report {path}: {e}") from e

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "EvalReport":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"report file not found: {path}")
        rows = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    rows.append(
                        MetricRow(
                            metric=str(obj["metric"]),
                            k=None if obj["k"] is None else int(obj["k"]),
                            value=float(obj["value"]),
                            n_queries=int(obj["n_queries"]),
                        )
                    )
                except (json.JSONDecodeError, KeyError, ValueError) as e:
                    raise ValidationError(f"{path}:{lineno}: bad report row ({e})") from e
        return cls(rows)


def _ranked_ids(
    source: RetrievalRun | dict[str, RerankResult], query_id: str
) -> list[str] | None:
    """Ranked passage ids for one query, or None if the query is absent."""
    if isinstance(source, RetrievalRun):
        return [e.passage_id for e in source[query_id]] if query_id in source else None
    result = source.get(query_id)
    return [c.passage_id for c in result.candidates] if result else None


def topk_from_flags(flags: dict[str, Sequence[bool]], ks: Sequence[int]) -> EvalReport:
    """Top-K accuracy rows from precomputed per-rank answer flags.

    Adds an Avg row: the arithmetic mean of the per-k accuracies.
    """
    if not flags:
        raise ValidationError("no queries to evaluate")
    if not ks or any(k < 1 for k in ks):
        raise ValidationError(f"cutoffs must be positive, got {list(ks)}")
    n = len(flags)
    rows = []
    for k in sorted(ks):
        hits = sum(1 for seq in flags.values() if any(seq[:k]))
        rows.append(MetricRow("top_k_accuracy", k, hits / n, n))
    avg = sum(r.value for r in rows) / len(rows)
    rows.append(MetricRow("top_k_avg", None, avg, n))
    return EvalReport(rows)


def answer_flags(
    source: RetrievalRun | dict[str, RerankResult],
    qa: QADataset,
    corpus: Corpus,
) -> dict[str, list[bool]]:
    """Per-query has_answer flags in rank order; absent queries get []."""
    flags: dict[str, list[bool]] = {}
    for ex in qa:
        ids = _ranked_ids(source, ex.query_id)
        if ids is None:
            logger.warning(
                "query %s missing from the run; counted as a miss", ex.query_id
            )
            flags[ex.query_id] = []
            continue
        flags[ex.query_id] = [has_answer(corpus[pid], ex.gold_answers) for pid in ids]
    return flags


def topk_accuracy(
    source: RetrievalRun | dict[str, RerankResult],
    qa: QADataset,
    corpus: Corpus,
    ks: Sequence[int],
) -> EvalReport:
    """Fraction of queries whose top k passages contain a gold answer."""
    run_queries = (
        source.query_ids() if isinstance(source, RetrievalRun) else list(source)
    )
    unknown = [qid for qid in run_queries if qid not in qa]
    if unknown:
        raise ValidationError(
            f"run contains queries absent from the qa dataset: {unknown[:5]}"
        )
    return topk_from_flags(answer_flags(source, qa, corpus), ks)


def _dcg(grades: Sequence[int], k: int) -> float:
    return sum(
        (2**g - 1) / math.log2(rank + 1)
        for rank, g in enumerate(grades[:k], start=1)
    )


def ndcg_at_k(
    source: RetrievalRun | dict[str, RerankResult], qrels: QrelSet, k: int
) -> float:
    """Mean nDCG@k over the source's queries.

    Unjudged documents count as grade 0; queries with no relevant document
    contribute 0 and stay in the denominator.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    query_ids = source.query_ids() if isinstance(source, RetrievalRun) else list(source)
    if not query_ids:
        raise ValidationError("no queries to evaluate")
    total = 0.0
    for qid in query_ids:
        ids = _ranked_ids(source, qid) or []
        grades = [qrels.grade(qid, pid) for pid in ids]
        ideal = sorted(
            (g for g in qrels.grades_for(qid).values() if g > 0), reverse=True
        )
        idcg = _dcg(ideal, k)
        total += _dcg(grades, k) / idcg if idcg > 0 else 0.0
    return total / len(query_ids)


def reader_metrics(pred: str, golds: Sequence[str]) -> tuple[int, float, int]:
    """(exact match, token recall, containment) of one predicted answer.

    Recall is the best over golds of the fraction of gold tokens present in
    the prediction (multiset intersection); containment is normalized
    substring membership of any gold in the prediction.
    """
    if not golds:
        raise ValidationError("reader_metrics requires at least one gold answer")
    norm_pred = normalize_answer(pred)
    pred_tokens = Counter(norm_pred.split())
    em, recall, containment = 0, 0.0, 0
    for gold in golds:
        norm_gold = normalize_answer(gold)
        if norm_pred == norm_gold:
            em = 1
            # exact match always implies containment, even for the
            # degenerate gold that normalizes to the empty string
            containment = 1
        if norm_gold and norm_gold in norm_pred:
            containment = 1
        gold_tokens = Counter(norm_gold.split())
        if not gold_tokens:
            recall = max(recall, 1.0 if not pred_tokens else 0.0)
            continue
        matched = sum((gold_tokens & pred_tokens).values())
        recall = max(recall, matched / sum(gold_tokens.values()))
    return em, recall, containment


def reader_report(
    predictions: dict[str, str], qa: QADataset
) -> EvalReport:
    """Aggregate reader metrics over all predictions."""
    if not predictions:
        raise ValidationError("no predictions to evaluate")
    ems, recalls, containments = [], [], []
    for qid, pred in predictions.items():
        em, recall, containment = reader_metrics(pred, qa[qid].gold_answers)
        ems.append(em)
        recalls.append(recall)
        containments.append(containment)
    n = len(predictions)
    return EvalReport(
        [
            MetricRow("reader_em", None, sum(ems) / n, n),
            MetricRow("reader_recall", None, sum(recalls) / n, n),
            MetricRow("reader_containment", None, sum(containments) / n, n),
        ]
    )


def _percentile(sorted_values: list[float], p: float) -> float:
    """Nearest-rank percentile of a pre-sorted sample."""
    idx = max(0, math.ceil(p / 100.0 * len(sorted_values)) - 1)
    return sorted_values[idx]


def latency_report(samples: Sequence[tuple[str, float]]) -> EvalReport:
    """Mean/p50/p95 in milliseconds for each phase present in the samples."""
    if not samples:
        raise ValidationError("latency_report requires at least one sample")
    by_phase: dict[str, list[float]] = {}
    for phase, millis in samples:
        if phase not in PHASES:
            raise ValidationError(f"unknown latency phase {phase!r} (expected {PHASES})")
        by_phase.setdefault(phase, []).append(float(millis))
    rows = []
    for phase in PHASES:
        values = sorted(by_phase.get(phase, []))
        if not values:
            continue
        n = len(values)
        rows.append(MetricRow(f"latency_{phase}_mean_ms", None, sum(values) / n, n))
        rows.append(MetricRow(f"latency_{phase}_p50_ms", None, _percentile(values, 50), n))
        rows.append(MetricRow(f"latency_{phase}_p95_ms", None, _percentile(values, 95), n))
    return EvalReport(rows)


class LatencyRecorder:
    """Thread-safe wall-time sink for backend call phases."""

    def __init__(self):
        self._lock = threading.Lock()
        self._samples: list[tuple[str, float]] = []

    @contextmanager
    def track(self, phase: str):
        if phase not in PHASES:
            raise ValidationError(f"unknown latency phase {phase!r} (expected {PHASES})")
        start = time.perf_counter()
        try:
            yield
        finally:
            millis = (time.perf_counter() - start) * 1000.0
            with self._lock:
                self._samples.append((phase, millis))

    def record(self, phase: str, millis: float) -> None:
        if phase not in PHASES:
            raise ValidationError(f"unknown latency phase {phase!r} (expected {PHASES})")
        with self._lock:
            self._samples.append((phase, millis))

    @property
    def samples(self) -> list[tuple[str, float]]:
        with self._lock:
            return list(self._samples)

    def report(self) -> EvalReport:
        return latency_report(self.samples)
