"""The POST /rerank HTTP endpoint."""

import threading

import httpx
import pytest

from scentrank.backends import UnigramBackend
from scentrank.errors import ValidationError
from scentrank.service import RerankService, make_server


@pytest.fixture
def service():
    return RerankService(UnigramBackend())


@pytest.fixture
def server_url(service):
    server = make_server("127.0.0.1", 0, service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


CANDIDATES = [
    {"id": "answer", "contents": "topic01 relic01", "score": 1.0},
    {"id": "teaser", "contents": "topic01 alpha", "score": 2.0},
]


def test_handle_reranks_with_scent(service):
    reply = service.handle(
        {
            "question": "which entry covers topic01",
            "scent": "probably relic01",
            "candidates": CANDIDATES,
        }
    )
    assert reply["selected"] == "answer"
    assert reply["scoring_mode"] == "asrank"
    assert [c["passage_id"] for c in reply["candidates"]] == ["answer", "teaser"]
    assert reply["candidates"][0]["rank"] == 1
    assert reply["candidates"][0]["mean_loglik"] <= 0.0


def test_handle_mode_override_upr(service):
    reply = service.handle(
        {
            "question": "topic01 relic01 please",
            "candidates": CANDIDATES,
            "mode": "upr",
        }
    )
    assert reply["scoring_mode"] == "upr"
    assert reply["selected"] == "answer"


def test_handle_validation_errors(service):
    with pytest.raises(ValidationError, match="question"):
        service.handle({"candidates": CANDIDATES})
    with pytest.raises(ValidationError, match="candidates"):
        service.handle({"question": "q", "candidates": []})
    with pytest.raises(ValidationError, match="id"):
        service.handle({"question": "q", "candidates": [{"contents": "x"}]})
    with pytest.raises(ValidationError, match="scent"):
        service.handle({"question": "q", "candidates": CANDIDATES, "scent": ""})
    with pytest.raises(ValidationError, match="mode"):
        service.handle(
            {"question": "q", "candidates": CANDIDATES, "mode": "telepathy"}
        )


def test_handle_asrank_without_scent_is_invalid(service):
    with pytest.raises(ValidationError):
        service.handle({"question": "q", "candidates": CANDIDATES})


def test_http_round_trip(server_url):
    reply = httpx.post(
        f"{server_url}/rerank",
        json={
            "question": "which entry covers topic01",
            "scent": "probably relic01",
            "candidates": CANDIDATES,
        },
        timeout=10,
    )
    assert reply.status_code == 200
    body = reply.json()
    assert body["selected"] == "answer"


def test_http_bad_request(server_url):
    reply = httpx.post(
        f"{server_url}/rerank", json={"question": "q"}, timeout=10
    )
    assert reply.status_code == 400
    assert "error" in reply.json()


def test_http_invalid_json(server_url):
    reply = httpx.post(
        f"{server_url}/rerank",
        content=b"{nope",
        headers={"Content-Type": "application/json"},
        timeout=10,
    )
    assert reply.status_code == 400


def test_http_unknown_path(server_url):
    reply = httpx.post(f"{server_url}/other", json={}, timeout=10)
    assert reply.status_code == 404


def test_http_concurrent_requests(server_url):
    payload = {
        "question": "which entry covers topic01",
        "scent": "probably relic01",
        "candidates": CANDIDATES,
    }
    results = []
    lock = threading.Lock()

    def post():
        reply = httpx.post(f"{server_url}/rerank", json=payload, timeout=10)
        with lock:
            results.append(reply.json()["selected"])

    threads = [threading.Thread(target=post) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == ["answer"] * 8


def test_service_rejects_bad_default_mode():
    with pytest.raises(ValidationError):
        RerankService(UnigramBackend(), mode="nope")
