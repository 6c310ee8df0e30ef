"""Scoring and generation backends.

Two backend families:

* ``UnigramBackend`` scores targets under an add-alpha smoothed unigram
  model estimated from the prefix alone. Deterministic and dependency-free,
  it exists so the whole pipeline can run and be tested offline.
* ``CompletionsScoringClient`` / ``ChatCompletionsClient`` talk to an
  OpenAI-compatible HTTP server: echoed-prompt logprobs for scoring,
  chat completions for generation.

All log-likelihoods are natural logs. Transport failures surface as
``BackendError`` after bounded retries with exponential backoff.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence, TypeVar

import httpx

from .bm25 import tokenize
from .errors import BackendError, ValidationError

logger = logging.getLogger(__name__)

ENV_API_KEY = "SCENTRANK_API_KEY"

T = TypeVar("T")


@dataclass(frozen=True)
class ScoringRequest:
    """Score ``target`` conditioned on ``prefix`` for one candidate."""

    query_id: str
    candidate_id: str
    prefix: str
    target: str

    def __post_init__(self):
        if not self.target:
            raise ValidationError(
                f"empty scoring target for query {self.query_id!r},"
                f" candidate {self.candidate_id!r}"
            )


@dataclass(frozen=True)
class TokenLogProb:
    token: str
    logprob: float

    def __post_init__(self):
        if self.logprob > 0.0:
            raise ValidationError(
                f"token logprob must be <= 0, got {self.logprob} for {self.token!r}"
            )


@dataclass(frozen=True)
class ScoringResult:
    """Per-token log-likelihoods for the target region of one request."""

    query_id: str
    candidate_id: str
    tokens: tuple[TokenLogProb, ...]

    def __post_init__(self):
        if not self.tokens:
            raise ValidationError(
                f"scoring result with no tokens for query {self.query_id!r},"
                f" candidate {self.candidate_id!r}"
            )

    @property
    def token_count(self) -> int:
        return len(self.tokens)

    @property
    def sum_loglik(self) -> float:
        return sum(t.logprob for t in self.tokens)

    @property
    def mean_loglik(self) -> float:
        return self.sum_loglik / self.token_count


class ScoringBackend(Protocol):
    def probe(self) -> None: ...

    def score(self, request: ScoringRequest) -> ScoringResult: ...

    def score_many(self, requests: Sequence[ScoringRequest]) -> list[ScoringResult]: ...


class GenerationBackend(Protocol):
    def complete(self, prompt: str, temperature: float, max_tokens: int) -> str: ...


@dataclass(frozen=True)
class UnigramOracleParams:
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValidationError(f"alpha must be > 0, got {self.alpha}")


def score_unigram(
    request: ScoringRequest, params: UnigramOracleParams = UnigramOracleParams()
) -> ScoringResult:
    """Score the target under an add-alpha unigram model of the prefix.

    Vocabulary is the distinct tokens of prefix and target combined, so a
    target token unseen in the prefix still gets finite mass:

        logprob(w) = ln((count_prefix(w) + alpha) / (n_prefix + alpha * |V|))
    """
    prefix_tokens = tokenize(request.prefix)
    target_tokens = tokenize(request.target)
    if not target_tokens:
        raise BackendError(
            f"target for query {request.query_id!r}, candidate"
            f" {request.candidate_id!r} has no scorable tokens"
        )
    counts: dict[str, int] = {}
    for tok in prefix_tokens:
        counts[tok] = counts.get(tok, 0) + 1
    vocab_size = len(set(prefix_tokens) | set(target_tokens))
    denom = len(prefix_tokens) + params.alpha * vocab_size
    scored = tuple(
        TokenLogProb(tok, math.log((counts.get(tok, 0) + params.alpha) / denom))
        for tok in target_tokens
    )
    return ScoringResult(request.query_id, request.candidate_id, scored)


class UnigramBackend:
    """Offline scoring backend built on :func:`score_unigram`."""

    def __init__(self, params: UnigramOracleParams = UnigramOracleParams()):
        self.params = params

    def probe(self) -> None:
        pass

    def score(self, request: ScoringRequest) -> ScoringResult:
        return score_unigram(request, self.params)

    def score_many(self, requests: Sequence[ScoringRequest]) -> list[ScoringResult]:
        return [self.score(r) for r in requests]


def _with_retries(
    fn: Callable[[], T],
    what: str,
    max_retries: int = 3,
    base_delay: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Run ``fn`` up to ``max_retries`` times with exponential backoff.

    Retries transport errors and retryable HTTP statuses (429, 5xx); other
    HTTP errors fail immediately. The terminal failure is a BackendError.
    """
    last: Exception | None = None
    for attempt in range(max_retries):
        try:
            return fn()
        except httpx.HTTPStatusError as e:
            status = e.response.status_code
            if status != 429 and status < 500:
                raise BackendError(f"{what}: server returned {status}") from e
            last = e
        except httpx.HTTPError as e:
            last = e
        if attempt < max_retries - 1:
            delay = base_delay * (2**attempt)
            logger.warning("%s failed (%s); retrying in %.1fs", what, last, delay)
            sleep(delay)
    raise BackendError(f"{what} failed after {max_retries} attempts: {last}") from last


def _auth_headers(api_key: str | None) -> dict[str, str]:
    key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
    return {"Authorization": f"Bearer {key}"} if key else {}


class CompletionsScoringClient:
    """Scores targets via an OpenAI-compatible /v1/completions endpoint.

    The full prompt (prefix + target) is sent with echo and logprobs on and
    max_tokens = 0, so the server returns per-token logprobs for the prompt
    itself. Target tokens are the echoed tokens whose character offset falls
    at or beyond the end of the prefix.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout_ms: int = 30000,
        max_in_flight: int = 8,
        max_retries: int = 3,
        transport: httpx.BaseTransport | None = None,
    ):
        if max_in_flight < 1:
            raise ValidationError(f"max_in_flight must be >= 1, got {max_in_flight}")
        self.model = model
        self.max_in_flight = max_in_flight
        self.max_retries = max_retries
        self._client = httpx.Client(
            base_url=endpoint.rstrip("/"),
            headers=_auth_headers(api_key),
            timeout=timeout_ms / 1000.0,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def probe(self) -> None:
        """Verify the endpoint supports echoed prompt logprobs; raise if not."""
        result = self._post_completion("probe:", " ok")
        if not result:
            raise BackendError(
                "scoring endpoint does not return echoed prompt logprobs;"
                " a completions server with echo+logprobs support is required"
            )

    def score(self, request: ScoringRequest) -> ScoringResult:
        tokens = self._post_completion(request.prefix, request.target)
        if not tokens:
            raise BackendError(
                f"no tokens aligned to the target for query {request.query_id!r},"
                f" candidate {request.candidate_id!r}; the prefix/target boundary"
                " may fall inside a model token"
            )
        return ScoringResult(request.query_id, request.candidate_id, tuple(tokens))

    def score_many(self, requests: Sequence[ScoringRequest]) -> list[ScoringResult]:
        """Score requests concurrently; results keep the request order."""
        if not requests:
            return []
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(self.score, requests))

    def _post_completion(self, prefix: str, target: str) -> list[TokenLogProb]:
        payload = {
            "model": self.model,
            "prompt": prefix + target,
            "echo": True,
            "logprobs": 1,
            "max_tokens": 0,
            "temperature": 0,
        }

        def call() -> dict:
            resp = self._client.post("/v1/completions", json=payload)
            resp.raise_for_status()
            return resp.json()

        body = _with_retries(call, "scoring request", self.max_retries)
        try:
            lp = body["choices"][0]["logprobs"]
            tokens = lp["tokens"]
            token_logprobs = lp["token_logprobs"]
            offsets = lp["text_offset"]
        except (KeyError, IndexError, TypeError) as e:
            raise BackendError(f"scoring response missing logprob fields: {e}") from e
        boundary = len(prefix)
        out = []
        for tok, logprob, offset in zip(tokens, token_logprobs, offsets):
            if offset < boundary:
                continue
            if logprob is None:
                raise BackendError(
                    f"server returned no logprob for target token {tok!r}"
                )
            # Guard against tiny positive values from lossy serialization.
            out.append(TokenLogProb(tok, min(float(logprob), 0.0)))
        return out


class ChatCompletionsClient:
    """Generates text via an OpenAI-compatible /v1/chat/completions endpoint."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout_ms: int = 30000,
        max_retries: int = 3,
        transport: httpx.BaseTransport | None = None,
    ):
        self.model = model
        self.max_retries = max_retries
        self._client = httpx.Client(
            base_url=endpoint.rstrip("/"),
            headers=_auth_headers(api_key),
            timeout=timeout_ms / 1000.0,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def complete(self, prompt: str, temperature: float, max_tokens: int) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }

        def call() -> dict:
            resp = self._client.post("/v1/chat/completions", json=payload)
            resp.raise_for_status()
            return resp.json()

        body = _with_retries(call, "generation request", self.max_retries)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise BackendError(f"generation response missing content: {e}") from e
        if not isinstance(content, str):
            raise BackendError("generation response content is not a string")
        return content
