"""Pipeline configuration.

A single flat registry of dotted keys drives both the YAML config file and
the CLI flags: every key lives under a top-level ``scentrank:`` mapping in
the file and is overridable by a ``--<key>`` flag of the same name.
Precedence: built-in default < config file < flag.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ValidationError
from .reader import DEFAULT_READER_TEMPLATE
from .rerank import DEFAULT_LAYOUT, MODES
from .scents import SCENT_PROMPT_TEMPLATE


@dataclass(frozen=True)
class ConfigKey:
    name: str
    kind: str  # str | int | float | bool | int_list
    default: object
    help: str


REGISTRY: tuple[ConfigKey, ...] = (
    ConfigKey("corpus.path", "str", None, "passage collection file"),
    ConfigKey("corpus.format", "str", "jsonl", "passage file format: jsonl or tsv"),
    ConfigKey("qa.path", "str", None, "question/answers jsonl file"),
    ConfigKey("qrels.path", "str", None, "graded judgments file (nDCG)"),
    ConfigKey("index.path", "str", "artifacts/index.json", "index snapshot file"),
    ConfigKey("run.path", "str", "artifacts/run.trec", "first-stage run file"),
    ConfigKey("reranked.path", "str", "artifacts/reranked.trec", "reranked run file"),
    ConfigKey("sidecar.path", "str", "artifacts/reranked.sidecar.jsonl",
              "per-candidate scoring detail file"),
    ConfigKey("predictions.path", "str", "artifacts/predictions.jsonl",
              "reader predictions file"),
    ConfigKey("report.path", "str", "artifacts/report.jsonl", "eval report file"),
    ConfigKey("retriever.k1", "float", 1.2, "BM25 k1"),
    ConfigKey("retriever.b", "float", 0.75, "BM25 b"),
    ConfigKey("scent.mode", "str", "generate",
              "scent source: generate, constant, or gold"),
    ConfigKey("scent.endpoint", "str", "", "chat completions endpoint base url"),
    ConfigKey("scent.model", "str", "", "scent model name"),
    ConfigKey("scent.temperature", "float", 0.7, "scent sampling temperature"),
    ConfigKey("scent.max_tokens", "int", 128, "scent generation token budget"),
    ConfigKey("scent.prompt_template", "str", SCENT_PROMPT_TEMPLATE,
              "scent prompt; must contain {question} once"),
    ConfigKey("scent.cache_path", "str", "artifacts/scents.jsonl",
              "append-only scent cache"),
    ConfigKey("scent.constant_text", "str", "<UNK>",
              "scent text for scent.mode=constant"),
    ConfigKey("scent.max_in_flight", "int", 4, "parallel generation requests"),
    ConfigKey("scoring.backend", "str", "unigram", "scoring backend: unigram or http"),
    ConfigKey("scoring.endpoint", "str", "", "completions endpoint base url"),
    ConfigKey("scoring.model", "str", "", "rank model name"),
    ConfigKey("scoring.max_in_flight", "int", 8, "parallel scoring requests"),
    ConfigKey("scoring.timeout_ms", "int", 30000, "per-request timeout"),
    ConfigKey("scoring.alpha", "float", 1.0, "unigram smoothing constant"),
    ConfigKey("rank.layout", "str", DEFAULT_LAYOUT, "scoring prefix layout"),
    ConfigKey("rank.target_source", "str", "scent",
              "target text: scent, gold_answer, or constant"),
    ConfigKey("rank.doc_token_cap", "int", 220, "document truncation (tokens)"),
    ConfigKey("rank.target_token_cap", "int", 128, "target truncation (tokens)"),
    ConfigKey("rank.constant_text", "str", "", "target for rank.target_source=constant"),
    ConfigKey("rerank.mode", "str", "asrank",
              "scoring mode: " + ", ".join(MODES)),
    ConfigKey("rerank.lambda", "float", 0.0, "retrieval prior weight in [0,1]"),
    ConfigKey("rerank.candidate_count", "int", 1000, "candidates scored per query"),
    ConfigKey("rerank.aggregate", "str", "mean", "score aggregation: mean or sum"),
    ConfigKey("rerank.strict", "bool", False,
              "abort on scoring failure instead of sinking the candidate"),
    ConfigKey("rerank.tag", "str", "asrank", "run tag for the reranked output"),
    ConfigKey("eval.ks", "int_list", [1, 5, 10], "Top-K cutoffs"),
    ConfigKey("eval.ndcg_k", "int", 10, "nDCG cutoff (needs qrels.path)"),
    ConfigKey("reader.top_k_docs", "int", 1, "documents fed to the reader"),
    ConfigKey("reader.max_answer_tokens", "int", 64, "answer token budget"),
    ConfigKey("reader.temperature", "float", 0.0, "reader sampling temperature"),
    ConfigKey("reader.prompt_template", "str", DEFAULT_READER_TEMPLATE,
              "reader prompt; must contain {question} and {documents} once"),
    ConfigKey("reader.question_only", "bool", False, "answer without documents"),
    ConfigKey("sweep.candidate_counts", "int_list", [], "sweep axis: candidate counts"),
    ConfigKey("sweep.scent_max_tokens", "int_list", [], "sweep axis: scent lengths"),
    ConfigKey("sweep.target_caps", "int_list", [], "sweep axis: target caps"),
    ConfigKey("sweep.allow_multi_axis", "bool", False,
              "permit sweeping more than one axis at once"),
    ConfigKey("serve.host", "str", "127.0.0.1", "rerank service bind host"),
    ConfigKey("serve.port", "int", 8080, "rerank service port"),
)

_BY_NAME = {key.name: key for key in REGISTRY}

# Which command produces each artifact, for actionable missing-file errors.
PRODUCED_BY = {
    "index.path": "scentrank index",
    "run.path": "scentrank retrieve",
    "scent.cache_path": "scentrank scent",
    "reranked.path": "scentrank rerank",
    "sidecar.path": "scentrank rerank",
    "predictions.path": "scentrank rag",
}


def _coerce(key: ConfigKey, raw: object) -> object:
    """Parse a YAML or CLI value into the key's declared type."""
    try:
        if key.kind == "str":
            return None if raw is None else str(raw)
        if key.kind == "int":
            return int(raw)
        if key.kind == "float":
            return float(raw)
        if key.kind == "bool":
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("true", "1", "yes"):
                return True
            if text in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if key.kind == "int_list":
            if isinstance(raw, (list, tuple)):
                return [int(v) for v in raw]
            parts = [p for p in str(raw).split(",") if p.strip()]
            return [int(p) for p in parts]
    except (TypeError, ValueError) as e:
        raise ValidationError(f"config key {key.name!r}: {e}") from e
    raise ValidationError(f"config key {key.name!r} has unknown kind {key.kind!r}")


class PipelineConfig:
    """Resolved key/value view consumed by the CLI commands."""

    def __init__(self, values: dict[str, object]):
        self._values = values

    def __getitem__(self, name: str):
        if name not in self._values:
            raise ValidationError(f"unknown config key {name!r}")
        return self._values[name]

    def path(self, name: str, must_exist: bool = False) -> Path:
        """The key's value as a Path; optionally require it on disk."""
        value = self[name]
        if not value:
            raise ValidationError(f"config key {name!r} is required but unset")
        p = Path(str(value))
        if must_exist and not p.exists():
            hint = PRODUCED_BY.get(name)
            raise ValidationError(
                f"{name} file not found: {p}"
                + (f" (produce it with `{hint}`)" if hint else "")
            )
        return p

    def validate(self) -> None:
        """Cross-key checks that hold for every command."""
        ks = self["eval.ks"]
        if ks and self["rerank.candidate_count"] < max(ks):
            raise ValidationError(
                f"rerank.candidate_count ({self['rerank.candidate_count']}) must be"
                f" >= max(eval.ks) ({max(ks)})"
            )
        if self["rerank.mode"] not in MODES:
            raise ValidationError(
                f"rerank.mode must be one of {MODES}, got {self['rerank.mode']!r}"
            )
        if not 0.0 <= self["rerank.lambda"] <= 1.0:
            raise ValidationError("rerank.lambda must lie in [0, 1]")
        if self["scent.mode"] not in ("generate", "constant", "gold"):
            raise ValidationError(
                f"scent.mode must be generate, constant, or gold,"
                f" got {self['scent.mode']!r}"
            )


def load_config_file(path: str | Path) -> dict[str, object]:
    """Read the ``scentrank:`` mapping of dotted keys from a YAML file."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            doc = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ValidationError(f"cannot parse config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ValidationError(f"config {path} must be a mapping")
    section = doc.get("scentrank", {})
    if not isinstance(section, dict):
        raise ValidationError(f"config {path}: 'scentrank' must be a mapping")
    out: dict[str, object] = {}
    for name, raw in section.items():
        if name not in _BY_NAME:
            raise ValidationError(f"config {path}: unknown key scentrank.{name}")
        out[name] = _coerce(_BY_NAME[name], raw)
    return out


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """Attach --config plus one flag per registry key."""
    parser.add_argument("--config", metavar="FILE", help="YAML config file")
    group = parser.add_argument_group("config overrides")
    for key in REGISTRY:
        group.add_argument(
            f"--{key.name}", metavar="V", default=None, dest=key.name, help=key.help
        )


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Merge defaults, the optional config file, and CLI flag overrides."""
    values: dict[str, object] = {key.name: key.default for key in REGISTRY}
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(load_config_file(config_path))
    flat = vars(args)
    for key in REGISTRY:
        raw = flat.get(key.name)
        if raw is not None:
            values[key.name] = _coerce(key, raw)
    config = PipelineConfig(values)
    config.validate()
    return config
