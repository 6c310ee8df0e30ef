"""Minimal HTTP rerank service for programmatic callers.

One endpoint: POST /rerank with a JSON body

    {"question": ..., "scent": ...?, "candidates": [{"id", "contents",
     "title"?, "score"?}, ...], "mode": ...?}

Candidates carry their text inline; input order is treated as retrieval
order. The reply lists candidates in scored order. No UI, no other routes.
"""

from __future__ import annotations

import json
import logging
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .backends import ScoringBackend
from .corpus import Corpus, Passage, RunEntry
from .errors import BackendError, ValidationError
from .rerank import MODES, RankTemplate, rerank
from .scents import constant_scent

logger = logging.getLogger(__name__)


class RerankService:
    """Stateless request handler around a configured scoring backend."""

    def __init__(
        self,
        backend: ScoringBackend,
        template: RankTemplate = RankTemplate(),
        mode: str = "asrank",
        lam: float = 0.0,
    ):
        if mode not in MODES:
            raise ValidationError(f"unknown scoring mode {mode!r}")
        self.backend = backend
        self.template = template
        self.mode = mode
        self.lam = lam

    def handle(self, payload: dict) -> dict:
        if not isinstance(payload, dict):
            raise ValidationError("request body must be a JSON object")
        question = payload.get("question")
        if not isinstance(question, str) or not question:
            raise ValidationError("'question' must be a non-empty string")
        raw = payload.get("candidates")
        if not isinstance(raw, list) or not raw:
            raise ValidationError("'candidates' must be a non-empty array")
        mode = payload.get("mode", self.mode)
        if mode not in MODES:
            raise ValidationError(f"unknown scoring mode {mode!r}")

        passages, entries = [], []
        for i, cand in enumerate(raw, start=1):
            if not isinstance(cand, dict) or "id" not in cand or "contents" not in cand:
                raise ValidationError(
                    f"candidate {i}: expected an object with 'id' and 'contents'"
                )
            passages.append(
                Passage(
                    id=str(cand["id"]),
                    title=str(cand.get("title", "")),
                    body=str(cand["contents"]),
                )
            )
            entries.append(RunEntry(str(cand["id"]), float(cand.get("score", 0.0)), i))
        corpus = Corpus(passages)

        scent_text = payload.get("scent")
        scent = None
        if scent_text is not None:
            if not isinstance(scent_text, str) or not scent_text:
                raise ValidationError("'scent' must be a non-empty string when given")
            scent = constant_scent("service", scent_text)
        result = rerank(
            self.backend,
            corpus,
            "service",
            question,
            scent,
            entries,
            template=self.template,
            mode=mode,
            lam=self.lam,
            strict=True,
        )
        return {
            "scoring_mode": result.scoring_mode,
            "selected": result.selected,
            "candidates": [
                {
                    "passage_id": c.passage_id,
                    "rank": c.final_rank,
                    "combined_score": c.combined_score,
                    "mean_loglik": c.mean_loglik,
                    "token_count": c.token_count,
                    "retrieval_rank": c.retrieval_rank,
                }
                for c in result.candidates
            ],
        }


def make_server(host: str, port: int, service: RerankService) -> ThreadingHTTPServer:
    """Build (but do not start) the HTTP server bound to host:port."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802 (http.server API name)
            if self.path != "/rerank":
                self._reply(404, {"error": "unknown path; POST /rerank"})
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
            except (ValueError, json.JSONDecodeError):
                self._reply(400, {"error": "request body is not valid JSON"})
                return
            try:
                self._reply(200, service.handle(payload))
            except ValidationError as e:
                self._reply(400, {"error": str(e)})
            except BackendError as e:
                self._reply(502, {"error": str(e)})
            except Exception:
                logger.exception("unhandled error in /rerank")
                self._reply(500, {"error": "internal error"})

        def _reply(self, status: int, body: dict):
            data = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, format, *args):
            logger.debug("%s " + format, self.client_address[0], *args)

    return ThreadingHTTPServer((host, port), Handler)
