"""Retrieve-and-rerank engine.

BM25 pulls candidate passages, a generative model writes one short "answer
scent" per query, and every candidate is rescored by the log-likelihood of
a target sequence conditioned on (document, question, scent). Evaluation
covers Top-K accuracy, nDCG, reader metrics, and latency.
"""

from .backends import (
    ChatCompletionsClient,
    CompletionsScoringClient,
    ScoringRequest,
    ScoringResult,
    TokenLogProb,
    UnigramBackend,
    UnigramOracleParams,
    score_unigram,
)
from .bm25 import Bm25Params, InvertedIndex, build_index, retrieve, retrieve_all, tokenize
from .corpus import (
    Corpus,
    Passage,
    QADataset,
    QAExample,
    QrelSet,
    RetrievalRun,
    RunEntry,
    load_passages,
    load_qa,
    load_qrels,
    load_run,
    write_run,
)
from .errors import BackendError, ScentRankError, ValidationError
from .metrics import (
    EvalReport,
    LatencyRecorder,
    MetricRow,
    has_answer,
    latency_report,
    ndcg_at_k,
    normalize_answer,
    reader_metrics,
    topk_accuracy,
)
from .reader import ReaderConfig, answer, build_reader_prompt
from .rerank import (
    RankTemplate,
    RerankResult,
    ScoredCandidate,
    build_rank_input,
    combine_with_prior,
    rerank,
    rerank_dataset,
    score_candidate,
    upr_score,
)
from .scents import (
    AnswerScent,
    ScentCache,
    ScentParams,
    build_scent_prompt,
    constant_scent,
    generate_scent,
    gold_scent,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerScent",
    "BackendError",
    "Bm25Params",
    "ChatCompletionsClient",
    "CompletionsScoringClient",
    "Corpus",
    "EvalReport",
    "InvertedIndex",
    "LatencyRecorder",
    "MetricRow",
    "Passage",
    "QADataset",
    "QAExample",
    "QrelSet",
    "RankTemplate",
    "ReaderConfig",
    "RerankResult",
    "RetrievalRun",
    "RunEntry",
    "ScentCache",
    "ScentParams",
    "ScentRankError",
    "ScoredCandidate",
    "ScoringRequest",
    "ScoringResult",
    "TokenLogProb",
    "UnigramBackend",
    "UnigramOracleParams",
    "ValidationError",
    "answer",
    "build_index",
    "build_rank_input",
    "build_reader_prompt",
    "build_scent_prompt",
    "combine_with_prior",
    "constant_scent",
    "generate_scent",
    "gold_scent",
    "has_answer",
    "latency_report",
    "load_passages",
    "load_qa",
    "load_qrels",
    "load_run",
    "ndcg_at_k",
    "normalize_answer",
    "reader_metrics",
    "rerank",
    "rerank_dataset",
    "retrieve",
    "retrieve_all",
    "score_candidate",
    "score_unigram",
    "tokenize",
    "topk_accuracy",
    "upr_score",
    "write_run",
]
