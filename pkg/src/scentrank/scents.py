"""Answer-scent generation and caching.

A scent is a short generated draft answer for one question. It is produced
once per query, cached on disk, and later conditions the reranker. Besides
the generated kind there are two offline producers: a constant placeholder
text and the first gold answer (useful as an upper-bound probe).
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .backends import GenerationBackend
from .corpus import QADataset, QAExample
from .errors import BackendError, ValidationError

logger = logging.getLogger(__name__)

SCENT_PROMPT_TEMPLATE = (
    "Generate a brief, insightful answer scent to the following question: {question}"
)


@dataclass(frozen=True)
class ScentParams:
    """Generation settings; the digest keys the cache."""

    model: str
    temperature: float = 0.7
    max_tokens: int = 128
    prompt_template: str = SCENT_PROMPT_TEMPLATE

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValidationError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise ValidationError(f"temperature must be >= 0, got {self.temperature}")

    def digest(self) -> str:
        canon = json.dumps(
            {
                "model": self.model,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
                "prompt_template": self.prompt_template,
            },
            sort_keys=True,
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def build_scent_prompt(question: str, template: str = SCENT_PROMPT_TEMPLATE) -> str:
    """Fill the question into the prompt template.

    The template must contain the ``{question}`` placeholder exactly once
    and no other placeholders.
    """
    if template.count("{question}") != 1:
        raise ValidationError(
            "scent prompt template must contain '{question}' exactly once"
        )
    try:
        return template.format(question=question)
    except (KeyError, IndexError, ValueError) as e:
        raise ValidationError(f"bad scent prompt template: {e}") from e


@dataclass(frozen=True)
class AnswerScent:
    query_id: str
    text: str
    model: str
    params_digest: str
    created_at: str

    def __post_init__(self):
        if not self.text:
            raise ValidationError(f"empty scent text for query {self.query_id!r}")


class ScentCache:
    """Append-only jsonl cache of scents, keyed by (query_id, params_digest).

    The file doubles as the scent stage artifact: re-running generation with
    the same params reads everything back instead of calling the backend.
    Later entries for the same key win, so a corrected scent can be appended
    without rewriting history.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str], AnswerScent] = {}
        if self.path.exists():
            self._read_existing()

    def _read_existing(self) -> None:
        with open(self.path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    scent = AnswerScent(
                        query_id=str(obj["query_id"]),
                        text=str(obj["scent"]),
                        model=str(obj["model"]),
                        params_digest=str(obj["params_digest"]),
                        created_at=str(obj["created_at"]),
                    )
                except (json.JSONDecodeError, KeyError) as e:
                    raise ValidationError(
                        f"{self.path}:{lineno}: malformed scent record ({e})"
                    ) from e
                self._entries[(scent.query_id, scent.params_digest)] = scent
        logger.info("scent cache %s: %d entries", self.path, len(self._entries))

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, query_id: str, params_digest: str) -> AnswerScent | None:
        with self._lock:
            return self._entries.get((query_id, params_digest))

    def put(self, scent: AnswerScent) -> None:
        row = {
            "query_id": scent.query_id,
            "scent": scent.text,
            "model": scent.model,
            "params_digest": scent.params_digest,
            "created_at": scent.created_at,
        }
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(row, ensure_ascii=False) + "\n")
            self._entries[(scent.query_id, scent.params_digest)] = scent


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def generate_scent(
    backend: GenerationBackend,
    query_id: str,
    question: str,
    params: ScentParams,
    cache: ScentCache | None = None,
) -> AnswerScent:
    """Produce the scent for one question, consulting the cache first.

    A cache hit never touches the backend. An empty (or whitespace-only)
    completion is a backend failure, not a silent empty scent.
    """
    digest = params.digest()
    if cache is not None:
        hit = cache.get(query_id, digest)
        if hit is not None:
            return hit
    prompt = build_scent_prompt(question, params.prompt_template)
    text = backend.complete(prompt, params.temperature, params.max_tokens).strip()
    if not text:
        raise BackendError(f"generation returned an empty scent for query {query_id!r}")
    scent = AnswerScent(query_id, text, params.model, digest, _now_iso())
    if cache is not None:
        cache.put(scent)
    return scent


def constant_scent(query_id: str, text: str) -> AnswerScent:
    """A fixed scent text, for ablations and offline runs."""
    return AnswerScent(query_id, text, "constant", "constant", _now_iso())


def gold_scent(example: QAExample) -> AnswerScent:
    """The first gold answer as the scent: an oracle upper-bound probe."""
    return AnswerScent(example.query_id, example.gold_answers[0], "gold", "gold", _now_iso())


def generate_all(
    backend: GenerationBackend,
    dataset: QADataset,
    params: ScentParams,
    cache: ScentCache | None = None,
    max_in_flight: int = 4,
) -> dict[str, AnswerScent]:
    """Generate scents for every query, bounded-parallel, one per query."""
    if max_in_flight < 1:
        raise ValidationError(f"max_in_flight must be >= 1, got {max_in_flight}")
    examples = list(dataset)

    def one(ex: QAExample) -> AnswerScent:
        return generate_scent(backend, ex.query_id, ex.question, params, cache)

    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        scents = list(pool.map(one, examples))
    return {s.query_id: s for s in scents}
