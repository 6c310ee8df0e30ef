"""Candidate rescoring and reordering.

Each retrieved candidate is rescored by the mean per-token log-likelihood
of a target sequence (by default the answer scent) conditioned on
(document, question, scent). Modes:

  asrank          mean target log-likelihood only
  asrank_bayes    (1 - lam) * mean_loglik + lam * log softmax(retrieval score)
  upr             mean log-likelihood of the passage text given the question
  retrieval_only  keep the first-stage order (no scoring calls)

Sorting is by combined score descending with ties broken by ascending
retrieval rank, so results never depend on candidate input order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backends import ScoringBackend, ScoringRequest
from .corpus import Corpus, Passage, RetrievalRun, RunEntry
from .errors import BackendError, ValidationError
from .scents import AnswerScent

logger = logging.getLogger(__name__)

DEFAULT_LAYOUT = "Document: {document}\nQuestion: {question}\nHint: {scent}\nAnswer:"
UPR_PREFIX_LAYOUT = "Question: {question}\nPassage:"

MODES = ("asrank", "asrank_bayes", "upr", "retrieval_only")


def _truncate(text: str, cap: int) -> str:
    """Keep the first ``cap`` whitespace-delimited tokens."""
    return " ".join(text.split()[:cap])


@dataclass(frozen=True)
class RankTemplate:
    """Layout and length caps for assembling scoring inputs."""

    layout: str = DEFAULT_LAYOUT
    target_source: str = "scent"
    doc_token_cap: int = 220
    target_token_cap: int = 128
    constant_text: str = ""

    def __post_init__(self):
        for placeholder in ("{document}", "{question}", "{scent}"):
            if self.layout.count(placeholder) != 1:
                raise ValidationError(
                    f"rank layout must contain {placeholder} exactly once"
                )
        if self.target_source not in ("scent", "gold_answer", "constant"):
            raise ValidationError(f"unknown target_source {self.target_source!r}")
        if self.doc_token_cap < 1 or self.target_token_cap < 1:
            raise ValidationError("token caps must be >= 1")


@dataclass(frozen=True)
class ScoredCandidate:
    """One candidate after rescoring.

    ``mean_loglik`` and ``token_count`` are None when the mode issues no
    scoring call (retrieval_only) or the candidate's scoring failed in
    non-strict mode; failed candidates carry combined_score = -inf.
    """

    passage_id: str
    retrieval_rank: int
    retrieval_score: float
    mean_loglik: float | None
    token_count: int | None
    combined_score: float
    final_rank: int


@dataclass(frozen=True)
class RerankResult:
    query_id: str
    scoring_mode: str
    candidates: tuple[ScoredCandidate, ...]
    failed: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.candidates:
            raise ValidationError(f"rerank result for {self.query_id!r} is empty")

    @property
    def selected(self) -> str:
        return self.candidates[0].passage_id

    @property
    def partial(self) -> bool:
        return bool(self.failed)


def build_rank_input(
    passage: Passage,
    question: str,
    scent: AnswerScent,
    template: RankTemplate = RankTemplate(),
    gold_answer: str | None = None,
) -> ScoringRequest:
    """Assemble the (prefix, target) pair for one candidate.

    Prefix is the layout with the truncated document, the question, and the
    scent text substituted. The target defaults to the scent text, truncated
    to the target cap.
    """
    document = _truncate(passage.text, template.doc_token_cap)
    prefix = template.layout.format(
        document=document, question=question, scent=scent.text
    )
    if template.target_source == "scent":
        raw_target = scent.text
    elif template.target_source == "gold_answer":
        if gold_answer is None:
            raise ValidationError(
                "target_source=gold_answer requires a gold answer string"
            )
        raw_target = gold_answer
    else:
        raw_target = template.constant_text
    target = _truncate(raw_target, template.target_token_cap)
    if not target:
        raise ValidationError(
            f"empty scoring target after truncation (target_source="
            f"{template.target_source})"
        )
    return ScoringRequest(
        query_id=scent.query_id, candidate_id=passage.id, prefix=prefix, target=target
    )


def score_candidate(
    backend: ScoringBackend, request: ScoringRequest
) -> tuple[float, int]:
    """Mean per-token log-likelihood and token count for one request."""
    try:
        result = backend.score(request)
    except BackendError as e:
        raise BackendError(
            f"scoring failed for candidate {request.candidate_id!r}: {e}"
        ) from e
    return result.mean_loglik, result.token_count


def log_softmax(scores: Sequence[float]) -> list[float]:
    """Numerically stable log softmax."""
    if not scores:
        raise ValidationError("log_softmax of an empty sequence")
    m = max(scores)
    lse = m + math.log(sum(math.exp(s - m) for s in scores))
    return [s - lse for s in scores]


def combine_with_prior(
    mean_loglik: float,
    retrieval_scores: Sequence[float],
    index: int,
    lam: float,
) -> float:
    """Mix the likelihood score with a retrieval prior.

    The prior is the log softmax of the candidate list's retrieval scores.
    The per-query evidence term is constant across candidates and omitted;
    it cannot change the argmax.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")
    if not 0 <= index < len(retrieval_scores):
        raise ValidationError(f"index {index} out of range")
    return (1.0 - lam) * mean_loglik + lam * log_softmax(retrieval_scores)[index]


def upr_request(question: str, passage: Passage, cap: int) -> ScoringRequest:
    """Question-conditioned request whose target is the passage text."""
    target = _truncate(passage.text, cap)
    if not target:
        raise ValidationError(f"passage {passage.id!r} empty after truncation")
    prefix = UPR_PREFIX_LAYOUT.format(question=question)
    return ScoringRequest(
        query_id="", candidate_id=passage.id, prefix=prefix, target=target
    )


def upr_score(
    backend: ScoringBackend, question: str, passage: Passage, cap: int = 220
) -> float:
    """Mean log-likelihood of the passage given the question."""
    mean, _count = score_candidate(backend, upr_request(question, passage, cap))
    return mean


def rerank(
    backend: ScoringBackend | None,
    corpus: Corpus,
    query_id: str,
    question: str,
    scent: AnswerScent | None,
    candidates: Sequence[RunEntry],
    template: RankTemplate = RankTemplate(),
    mode: str = "asrank",
    lam: float = 0.0,
    gold_answer: str | None = None,
    strict: bool = True,
    aggregate: str = "mean",
) -> RerankResult:
    """Score and reorder the candidates of one query.

    Issues exactly one scoring call per candidate (none for retrieval_only)
    and no generation calls. With strict=False a failed candidate sinks to
    the bottom with a -inf score instead of aborting the query.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown scoring mode {mode!r} (expected one of {MODES})")
    if aggregate not in ("mean", "sum"):
        raise ValidationError(f"aggregate must be 'mean' or 'sum', got {aggregate!r}")
    if not candidates:
        raise ValidationError(f"no candidates to rerank for query {query_id!r}")
    if scent is None and mode in ("asrank", "asrank_bayes"):
        raise ValidationError(f"mode {mode!r} requires a scent for query {query_id!r}")

    retrieval_scores = [c.score for c in candidates]
    failed: list[str] = []
    scored: list[tuple[RunEntry, float | None, int | None, float]] = []

    for i, entry in enumerate(candidates):
        if mode == "retrieval_only":
            scored.append((entry, None, None, entry.score))
            continue
        passage = corpus[entry.passage_id]
        if mode == "upr":
            request = upr_request(question, passage, template.doc_token_cap)
        else:
            request = build_rank_input(passage, question, scent, template, gold_answer)
        try:
            result = backend.score(request)
        except BackendError as e:
            if strict:
                raise BackendError(
                    f"query {query_id!r}, candidate {entry.passage_id!r}: {e}"
                ) from e
            logger.warning(
                "query %s: candidate %s failed to score (%s); sinking to bottom",
                query_id,
                entry.passage_id,
                e,
            )
            failed.append(entry.passage_id)
            scored.append((entry, None, None, float("-inf")))
            continue
        base = result.mean_loglik if aggregate == "mean" else result.sum_loglik
        if mode == "asrank_bayes":
            combined = combine_with_prior(base, retrieval_scores, i, lam)
        else:
            combined = base
        scored.append((entry, result.mean_loglik, result.token_count, combined))

    ordered = sorted(scored, key=lambda row: (-row[3], row[0].rank))
    final = tuple(
        ScoredCandidate(
            passage_id=entry.passage_id,
            retrieval_rank=entry.rank,
            retrieval_score=entry.score,
            mean_loglik=mean,
            token_count=count,
            combined_score=combined,
            final_rank=rank,
        )
        for rank, (entry, mean, count, combined) in enumerate(ordered, start=1)
    )
    if failed:
        logger.warning(
            "query %s: %d/%d candidates failed scoring", query_id, len(failed), len(candidates)
        )
    return RerankResult(query_id, mode, final, tuple(failed))


def rerank_dataset(
    backend: ScoringBackend | None,
    corpus: Corpus,
    questions: dict[str, str],
    scents: dict[str, AnswerScent],
    run: RetrievalRun,
    candidate_count: int,
    template: RankTemplate = RankTemplate(),
    mode: str = "asrank",
    lam: float = 0.0,
    gold_answers: dict[str, str] | None = None,
    strict: bool = True,
    aggregate: str = "mean",
) -> dict[str, RerankResult]:
    """Rerank the top candidate_count entries of every query in the run."""
    if candidate_count < 1:
        raise ValidationError(f"candidate_count must be >= 1, got {candidate_count}")
    results: dict[str, RerankResult] = {}
    for query_id, entries in run.items():
        if query_id not in questions:
            raise ValidationError(f"run query {query_id!r} missing from the qa dataset")
        scent = scents.get(query_id) if scents else None
        if scent is None and mode in ("asrank", "asrank_bayes"):
            raise ValidationError(f"no scent available for query {query_id!r}")
        results[query_id] = rerank(
            backend,
            corpus,
            query_id,
            questions[query_id],
            scent,
            entries[:candidate_count],
            template=template,
            mode=mode,
            lam=lam,
            gold_answer=(gold_answers or {}).get(query_id),
            strict=strict,
            aggregate=aggregate,
        )
    return results


def results_to_run(results: dict[str, RerankResult], tag: str = "asrank") -> RetrievalRun:
    """Package rerank results as a run (combined score as the run score)."""
    rankings = {
        qid: [
            RunEntry(c.passage_id, c.combined_score, c.final_rank)
            for c in result.candidates
        ]
        for qid, result in results.items()
    }
    return RetrievalRun(tag, rankings)


def write_sidecar(results: dict[str, RerankResult], path: str | Path) -> None:
    """Per-candidate scoring details as jsonl, aligned with the run file."""
    try:
        with open(path, "w", encoding="utf-8") as f:
            for qid, result in results.items():
                for c in result.candidates:
                    row = {
                        "query_id": qid,
                        "passage_id": c.passage_id,
                        "rank": c.final_rank,
                        "mean_loglik": c.mean_loglik,
                        "token_count": c.token_count,
                        "retrieval_rank": c.retrieval_rank,
                    }
                    f.write(json.dumps(row, ensure_ascii=False) + "\n")
    except OSError as e:
        raise ValidationError(f"cannot write sidecar {path}: {e}") from e


def load_sidecar(path: str | Path) -> dict[str, list[dict]]:
    """Read a sidecar back as query_id -> candidate rows (rank order)."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"sidecar file not found: {path}")
    out: dict[str, list[dict]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                out.setdefault(str(row["query_id"]), []).append(row)
            except (json.JSONDecodeError, KeyError) as e:
                raise ValidationError(f"{path}:{lineno}: malformed sidecar row ({e})") from e
    return out
