"""Command-line pipeline.

Stages (each independently re-runnable from its input artifacts):

  index     build the BM25 index snapshot from the passage file
  retrieve  first-stage run for every question
  scent     produce/cache one answer scent per question
  rerank    rescore the run's candidates, write reranked run + sidecar
  eval      Top-K accuracy (+ optional nDCG and reader metrics) report
  rag       generate reader answers from the top reranked documents
  sweep     re-run rerank+eval across one axis of values
  serve     HTTP rerank endpoint

Exit codes: 0 success, 1 validation/config error, 2 backend/transport error.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from pathlib import Path

from . import bm25
from .backends import (
    ChatCompletionsClient,
    CompletionsScoringClient,
    GenerationBackend,
    ScoringBackend,
    UnigramBackend,
    UnigramOracleParams,
)
from .config import PipelineConfig, add_config_flags, resolve_config
from .corpus import (
    Corpus,
    QADataset,
    RetrievalRun,
    load_passages,
    load_qa,
    load_qrels,
    load_run,
    write_run,
)
from .errors import BackendError, ValidationError
from .metrics import EvalReport, MetricRow, ndcg_at_k, reader_report, topk_accuracy
from .reader import ReaderConfig, answer_all, load_predictions, write_predictions
from .rerank import (
    RankTemplate,
    RerankResult,
    ScoredCandidate,
    rerank_dataset,
    results_to_run,
    write_sidecar,
)
from .scents import (
    AnswerScent,
    ScentCache,
    ScentParams,
    constant_scent,
    generate_all,
    gold_scent,
)
from .service import RerankService, make_server

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse parser whose errors follow the exit-code contract."""

    def error(self, message):
        raise ValidationError(message)


def _ensure_parent(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def _load_corpus(config: PipelineConfig) -> Corpus:
    return load_passages(config.path("corpus.path", must_exist=True), config["corpus.format"])


def _scoring_backend(config: PipelineConfig) -> ScoringBackend:
    kind = config["scoring.backend"]
    if kind == "unigram":
        return UnigramBackend(UnigramOracleParams(alpha=config["scoring.alpha"]))
    if kind == "http":
        if not config["scoring.endpoint"] or not config["scoring.model"]:
            raise ValidationError(
                "scoring.backend=http requires scoring.endpoint and scoring.model"
            )
        client = CompletionsScoringClient(
            endpoint=config["scoring.endpoint"],
            model=config["scoring.model"],
            timeout_ms=config["scoring.timeout_ms"],
            max_in_flight=config["scoring.max_in_flight"],
        )
        client.probe()
        return client
    raise ValidationError(f"scoring.backend must be unigram or http, got {kind!r}")


def _generation_backend(config: PipelineConfig) -> GenerationBackend:
    if not config["scent.endpoint"] or not config["scent.model"]:
        raise ValidationError(
            "generation requires scent.endpoint and scent.model to be set"
        )
    return ChatCompletionsClient(
        endpoint=config["scent.endpoint"],
        model=config["scent.model"],
        timeout_ms=config["scoring.timeout_ms"],
    )


def _scent_params(config: PipelineConfig) -> ScentParams:
    return ScentParams(
        model=config["scent.model"],
        temperature=config["scent.temperature"],
        max_tokens=config["scent.max_tokens"],
        prompt_template=config["scent.prompt_template"],
    )


def _load_scents(config: PipelineConfig, qa: QADataset) -> dict[str, AnswerScent]:
    """Scents for every query, per scent.mode, without backend calls.

    constant and gold scents are rebuilt inline; generated scents must
    already sit in the cache (run `scentrank scent` first).
    """
    mode = config["scent.mode"]
    if mode == "constant":
        text = config["scent.constant_text"]
        if not text:
            raise ValidationError("scent.mode=constant requires scent.constant_text")
        return {ex.query_id: constant_scent(ex.query_id, text) for ex in qa}
    if mode == "gold":
        return {ex.query_id: gold_scent(ex) for ex in qa}
    cache = ScentCache(config.path("scent.cache_path", must_exist=True))
    digest = _scent_params(config).digest()
    scents = {}
    for ex in qa:
        hit = cache.get(ex.query_id, digest)
        if hit is None:
            raise ValidationError(
                f"no cached scent for query {ex.query_id!r} with the current"
                " generation params (produce it with `scentrank scent`)"
            )
        scents[ex.query_id] = hit
    return scents


def _rank_template(config: PipelineConfig, target_cap: int | None = None) -> RankTemplate:
    return RankTemplate(
        layout=config["rank.layout"],
        target_source=config["rank.target_source"],
        doc_token_cap=config["rank.doc_token_cap"],
        target_token_cap=target_cap or config["rank.target_token_cap"],
        constant_text=config["rank.constant_text"],
    )


def _gold_answers(config: PipelineConfig, qa: QADataset) -> dict[str, str] | None:
    if config["rank.target_source"] != "gold_answer":
        return None
    return {ex.query_id: ex.gold_answers[0] for ex in qa}


def cmd_index(config: PipelineConfig) -> int:
    corpus = _load_corpus(config)
    params = bm25.Bm25Params(k1=config["retriever.k1"], b=config["retriever.b"])
    index = bm25.build_index(corpus, params)
    out = config.path("index.path")
    _ensure_parent(out)
    index.save(out)
    print(f"indexed {len(corpus)} passages -> {out}")
    return 0


def cmd_retrieve(config: PipelineConfig) -> int:
    index = bm25.InvertedIndex.load(config.path("index.path", must_exist=True))
    qa = load_qa(config.path("qa.path", must_exist=True))
    run = bm25.retrieve_all(
        index, qa.questions(), k=config["rerank.candidate_count"], tag="bm25"
    )
    out = config.path("run.path")
    _ensure_parent(out)
    write_run(run, out)
    depth = len(run[run.query_ids()[0]]) if len(run) else 0
    print(f"retrieved {depth} candidates for {len(run)} queries -> {out}")
    return 0


def cmd_scent(config: PipelineConfig) -> int:
    qa = load_qa(config.path("qa.path", must_exist=True))
    cache_path = config.path("scent.cache_path")
    _ensure_parent(cache_path)
    cache = ScentCache(cache_path)
    mode = config["scent.mode"]
    if mode == "generate":
        backend = _generation_backend(config)
        params = _scent_params(config)
        before = len(cache)
        generate_all(
            backend, qa, params, cache, max_in_flight=config["scent.max_in_flight"]
        )
        print(
            f"scents ready for {len(qa)} queries ({len(cache) - before} newly"
            f" generated) -> {cache_path}"
        )
        return 0
    # Offline modes also leave a cache record so the artifact trail is complete.
    scents = _load_scents(config, qa)
    for scent in scents.values():
        if cache.get(scent.query_id, scent.params_digest) is None:
            cache.put(scent)
    print(f"{mode} scents recorded for {len(qa)} queries -> {cache_path}")
    return 0


def cmd_rerank(config: PipelineConfig) -> int:
    corpus = _load_corpus(config)
    qa = load_qa(config.path("qa.path", must_exist=True))
    run = load_run(config.path("run.path", must_exist=True), corpus=corpus)
    mode = config["rerank.mode"]
    needs_scent = mode in ("asrank", "asrank_bayes")
    scents = _load_scents(config, qa) if needs_scent else {}
    backend = _scoring_backend(config) if mode != "retrieval_only" else None
    results = rerank_dataset(
        backend,
        corpus,
        qa.questions(),
        scents,
        run,
        candidate_count=config["rerank.candidate_count"],
        template=_rank_template(config),
        mode=mode,
        lam=config["rerank.lambda"],
        gold_answers=_gold_answers(config, qa),
        strict=config["rerank.strict"],
        aggregate=config["rerank.aggregate"],
    )
    out = config.path("reranked.path")
    _ensure_parent(out)
    write_run(results_to_run(results, tag=config["rerank.tag"]), out)
    sidecar = config.path("sidecar.path")
    _ensure_parent(sidecar)
    write_sidecar(results, sidecar)
    partial = sum(1 for r in results.values() if r.partial)
    note = f" ({partial} partial)" if partial else ""
    print(f"reranked {len(results)} queries ({mode}){note} -> {out}")
    return 0


def _eval_source(config: PipelineConfig, corpus: Corpus) -> tuple[RetrievalRun, Path]:
    """The run under evaluation: the reranked one if present, else first-stage."""
    reranked = config.path("reranked.path")
    if reranked.exists():
        return load_run(reranked, corpus=corpus), reranked
    first = config.path("run.path", must_exist=True)
    return load_run(first, corpus=corpus), first


def cmd_eval(config: PipelineConfig) -> int:
    corpus = _load_corpus(config)
    qa = load_qa(config.path("qa.path", must_exist=True))
    run, source = _eval_source(config, corpus)
    rows = list(topk_accuracy(run, qa, corpus, config["eval.ks"]).rows)
    if config["qrels.path"]:
        qrels = load_qrels(config.path("qrels.path", must_exist=True))
        value = ndcg_at_k(run, qrels, config["eval.ndcg_k"])
        rows.append(MetricRow("ndcg", config["eval.ndcg_k"], value, len(run)))
    predictions_path = config.path("predictions.path")
    if predictions_path.exists():
        predictions = load_predictions(predictions_path)
        rows.extend(reader_report({q: a for q, (a, _) in predictions.items()}, qa).rows)
    report = EvalReport(rows)
    out = config.path("report.path")
    _ensure_parent(out)
    report.write_jsonl(out)
    logger.info("evaluated %s", source)
    sys.stdout.write(report.to_tsv())
    return 0


def _results_from_run(run: RetrievalRun) -> dict[str, RerankResult]:
    """Wrap an already-ordered run so the reader can consume it."""
    return {
        qid: RerankResult(
            qid,
            "retrieval_only",
            tuple(
                ScoredCandidate(e.passage_id, e.rank, e.score, None, None, e.score, e.rank)
                for e in entries
            ),
        )
        for qid, entries in run.items()
    }


def cmd_rag(config: PipelineConfig) -> int:
    corpus = _load_corpus(config)
    qa = load_qa(config.path("qa.path", must_exist=True))
    run = load_run(config.path("reranked.path", must_exist=True), corpus=corpus)
    backend = _generation_backend(config)
    reader_config = ReaderConfig(
        top_k_docs=config["reader.top_k_docs"],
        prompt_template=config["reader.prompt_template"],
        max_answer_tokens=config["reader.max_answer_tokens"],
        temperature=config["reader.temperature"],
    )
    predictions = answer_all(
        backend,
        qa.questions(),
        _results_from_run(run),
        corpus,
        reader_config,
        question_only=config["reader.question_only"],
        max_in_flight=config["scent.max_in_flight"],
    )
    out = config.path("predictions.path")
    _ensure_parent(out)
    write_predictions(predictions, out)
    print(f"answered {len(predictions)} queries -> {out}")
    return 0


def _sweep_axes(config: PipelineConfig) -> list[tuple[str, list[int]]]:
    axes = [
        ("candidate_count", config["sweep.candidate_counts"]),
        ("scent_max_tokens", config["sweep.scent_max_tokens"]),
        ("target_cap", config["sweep.target_caps"]),
    ]
    active = [(name, values) for name, values in axes if values]
    if not active:
        raise ValidationError(
            "sweep needs one axis: set sweep.candidate_counts,"
            " sweep.scent_max_tokens, or sweep.target_caps"
        )
    if len(active) > 1 and not config["sweep.allow_multi_axis"]:
        raise ValidationError(
            "multiple sweep axes set; pass --sweep.allow_multi_axis true"
            " to run the full cross product"
        )
    return active


def _truncate_scent(scent: AnswerScent, cap: int) -> AnswerScent:
    words = scent.text.split()[:cap]
    if not words:
        raise ValidationError(f"scent for {scent.query_id!r} empty after truncation")
    return AnswerScent(
        scent.query_id, " ".join(words), scent.model, scent.params_digest, scent.created_at
    )


def cmd_sweep(config: PipelineConfig) -> int:
    axes = _sweep_axes(config)
    corpus = _load_corpus(config)
    qa = load_qa(config.path("qa.path", must_exist=True))
    run = load_run(config.path("run.path", must_exist=True), corpus=corpus)
    mode = config["rerank.mode"]
    needs_scent = mode in ("asrank", "asrank_bayes")
    base_scents = _load_scents(config, qa) if needs_scent else {}
    backend = _scoring_backend(config) if mode != "retrieval_only" else None

    rows: list[MetricRow] = []
    for point in itertools.product(*(values for _, values in axes)):
        overrides = dict(zip((name for name, _ in axes), point))
        label = ",".join(f"{name}={value}" for name, value in overrides.items())
        candidate_count = overrides.get(
            "candidate_count", config["rerank.candidate_count"]
        )
        template = _rank_template(config, target_cap=overrides.get("target_cap"))
        scents = base_scents
        if needs_scent and "scent_max_tokens" in overrides:
            scents = {
                qid: _truncate_scent(s, overrides["scent_max_tokens"])
                for qid, s in base_scents.items()
            }
        results = rerank_dataset(
            backend,
            corpus,
            qa.questions(),
            scents,
            run,
            candidate_count=candidate_count,
            template=template,
            mode=mode,
            lam=config["rerank.lambda"],
            gold_answers=_gold_answers(config, qa),
            strict=config["rerank.strict"],
            aggregate=config["rerank.aggregate"],
        )
        point_report = topk_accuracy(results, qa, corpus, config["eval.ks"])
        rows.extend(
            MetricRow(f"{r.metric}[{label}]", r.k, r.value, r.n_queries)
            for r in point_report.rows
        )
    report = EvalReport(rows)
    out = config.path("report.path")
    _ensure_parent(out)
    report.write_jsonl(out)
    sys.stdout.write(report.to_tsv())
    return 0


def cmd_serve(config: PipelineConfig) -> int:
    backend = _scoring_backend(config)
    service = RerankService(
        backend,
        template=_rank_template(config),
        mode=config["rerank.mode"],
        lam=config["rerank.lambda"],
    )
    server = make_server(config["serve.host"], config["serve.port"], service)
    host, port = server.server_address[:2]
    print(f"rerank service listening on http://{host}:{port}/rerank", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


COMMANDS = {
    "index": (cmd_index, "build the BM25 index snapshot"),
    "retrieve": (cmd_retrieve, "run first-stage retrieval for every question"),
    "scent": (cmd_scent, "produce and cache one answer scent per question"),
    "rerank": (cmd_rerank, "rescore candidates and write the reranked run"),
    "eval": (cmd_eval, "compute the metrics report"),
    "rag": (cmd_rag, "generate reader answers from top documents"),
    "sweep": (cmd_sweep, "rerank+eval across one axis of parameter values"),
    "serve": (cmd_serve, "serve POST /rerank over HTTP"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="store_true", help="log at debug level"
    )
    add_config_flags(common)
    parser = _Parser(prog="scentrank", description=__doc__.splitlines()[0])
    subparsers = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (func, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        sub.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        config = resolve_config(args)
        return args.func(config)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except BackendError as e:
        print(f"backend error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
