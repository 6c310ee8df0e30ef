"""Scent prompt assembly, caching, and the three scent producers."""

import json
import threading

import pytest

from scentrank.corpus import QADataset, QAExample
from scentrank.errors import BackendError, ValidationError
from scentrank.scents import (
    SCENT_PROMPT_TEMPLATE,
    AnswerScent,
    ScentCache,
    ScentParams,
    build_scent_prompt,
    constant_scent,
    generate_all,
    generate_scent,
    gold_scent,
)
from .conftest import CountingGenerationBackend


def test_default_prompt_template_wording():
    prompt = build_scent_prompt("who sang the song")
    assert prompt == (
        "Generate a brief, insightful answer scent to the following"
        " question: who sang the song"
    )


def test_prompt_template_placeholder_validation():
    with pytest.raises(ValidationError, match="exactly once"):
        build_scent_prompt("q", "no placeholder here")
    with pytest.raises(ValidationError, match="exactly once"):
        build_scent_prompt("q", "{question} and {question}")
    with pytest.raises(ValidationError):
        build_scent_prompt("q", "{question} with {other}")


def test_params_digest_stable_and_sensitive():
    a = ScentParams(model="m", temperature=0.7, max_tokens=128)
    b = ScentParams(model="m", temperature=0.7, max_tokens=128)
    c = ScentParams(model="m", temperature=0.7, max_tokens=64)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    assert len(a.digest()) == 12


def test_params_validation():
    with pytest.raises(ValidationError):
        ScentParams(model="m", max_tokens=0)
    with pytest.raises(ValidationError):
        ScentParams(model="m", temperature=-0.1)


def test_default_generation_settings():
    params = ScentParams(model="m")
    assert params.temperature == 0.7
    assert params.max_tokens == 128
    assert params.prompt_template == SCENT_PROMPT_TEMPLATE


def test_answer_scent_rejects_empty_text():
    with pytest.raises(ValidationError):
        AnswerScent("q1", "", "m", "d", "2026-01-01T00:00:00+00:00")


def test_generate_scent_calls_backend_once(tmp_path):
    backend = CountingGenerationBackend("the answer is 42")
    cache = ScentCache(tmp_path / "scents.jsonl")
    params = ScentParams(model="m")
    scent = generate_scent(backend, "q1", "what is it", params, cache)
    assert scent.text == "the answer is 42"
    assert backend.complete_calls == 1
    assert "what is it" in backend.prompts[0]


def test_generate_scent_cache_hit_skips_backend(tmp_path):
    backend = CountingGenerationBackend()
    cache = ScentCache(tmp_path / "scents.jsonl")
    params = ScentParams(model="m")
    first = generate_scent(backend, "q1", "question", params, cache)
    second = generate_scent(backend, "q1", "question", params, cache)
    assert backend.complete_calls == 1
    assert second == first


def test_generate_scent_distinct_params_miss_cache(tmp_path):
    backend = CountingGenerationBackend()
    cache = ScentCache(tmp_path / "scents.jsonl")
    generate_scent(backend, "q1", "question", ScentParams(model="m"), cache)
    generate_scent(
        backend, "q1", "question", ScentParams(model="m", max_tokens=32), cache
    )
    assert backend.complete_calls == 2


def test_generate_scent_empty_completion_is_backend_error(tmp_path):
    backend = CountingGenerationBackend("   ")
    with pytest.raises(BackendError, match="empty scent"):
        generate_scent(backend, "q1", "question", ScentParams(model="m"))


def test_cache_survives_reload(tmp_path):
    path = tmp_path / "scents.jsonl"
    params = ScentParams(model="m")
    backend = CountingGenerationBackend("cached text")
    generate_scent(backend, "q1", "question", params, ScentCache(path))
    # fresh process: re-open the file, no backend call needed
    reopened = ScentCache(path)
    hit = reopened.get("q1", params.digest())
    assert hit is not None and hit.text == "cached text"
    assert generate_scent(backend, "q1", "question", params, reopened).text == "cached text"
    assert backend.complete_calls == 1


def test_cache_file_shape(tmp_path):
    path = tmp_path / "scents.jsonl"
    generate_scent(
        CountingGenerationBackend("text"),
        "q1",
        "question",
        ScentParams(model="m"),
        ScentCache(path),
    )
    row = json.loads(path.read_text().splitlines()[0])
    assert set(row) == {"query_id", "scent", "model", "params_digest", "created_at"}


def test_cache_append_only_last_entry_wins(tmp_path):
    path = tmp_path / "scents.jsonl"
    cache = ScentCache(path)
    old = constant_scent("q1", "old text")
    new = AnswerScent("q1", "new text", old.model, old.params_digest, old.created_at)
    cache.put(old)
    cache.put(new)
    assert len(path.read_text().splitlines()) == 2
    assert ScentCache(path).get("q1", old.params_digest).text == "new text"


def test_cache_rejects_malformed_rows(tmp_path):
    path = tmp_path / "scents.jsonl"
    path.write_text('{"query_id": "q1"}\n')
    with pytest.raises(ValidationError, match="scents.jsonl:1"):
        ScentCache(path)


def test_cache_concurrent_puts(tmp_path):
    cache = ScentCache(tmp_path / "scents.jsonl")

    def put_many(start):
        for i in range(start, start + 25):
            cache.put(constant_scent(f"q{i}", f"text {i}"))

    threads = [threading.Thread(target=put_many, args=(n * 25,)) for n in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(cache) == 100
    # every line on disk is intact json
    reloaded = ScentCache(tmp_path / "scents.jsonl")
    assert len(reloaded) == 100


def test_constant_and_gold_scents():
    assert constant_scent("q1", "<UNK>").text == "<UNK>"
    ex = QAExample("q1", "who", ("First Answer", "Second"))
    assert gold_scent(ex).text == "First Answer"
    with pytest.raises(ValidationError):
        constant_scent("q1", "")


def test_generate_all_one_call_per_query(tmp_path):
    backend = CountingGenerationBackend(lambda prompt: f"scent for [{prompt[-4:]}]")
    dataset = QADataset(
        [QAExample(f"q{i}", f"question {i}", ("a",)) for i in range(10)]
    )
    cache = ScentCache(tmp_path / "scents.jsonl")
    scents = generate_all(backend, dataset, ScentParams(model="m"), cache, max_in_flight=4)
    assert backend.complete_calls == 10
    assert set(scents) == {f"q{i}" for i in range(10)}
    # rerun: all hits, zero extra calls
    again = generate_all(backend, dataset, ScentParams(model="m"), cache)
    assert backend.complete_calls == 10
    assert again == scents
