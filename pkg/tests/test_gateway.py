import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from areatag.gateway import (
    GenerationRequest,
    HttpGateway,
    MockGateway,
    MockModel,
    ModelRejected,
    TransportError,
    mock_embedding,
    normalize_response,
)
from areatag.metrics import cosine


@pytest.mark.parametrize("raw, expected", [
    ('  "Medicine".\n', "Medicine"),
    ("domain: Life Sciences", "Life Sciences"),
    ("Life Sciences\nBecause the paper discusses cells", "Life Sciences"),
    ("**Answer:** `Virology`", "Virology"),
    ("\n\n  Topic : 'Optics.'  ", "Optics"),
    ("", ""),
    ("Dr. Who.", "Dr. Who"),
])
def test_normalize_response(raw, expected):
    assert normalize_response(raw) == expected


@given(st.text())
def test_normalize_idempotent(raw):
    once = normalize_response(raw)
    assert normalize_response(once) == once


def test_temperature_range():
    with pytest.raises(ValueError, match=r"\[0,1\]"):
        GenerationRequest("m", "p", temperature=1.2)
    GenerationRequest("m", "p", temperature=0.0)
    GenerationRequest("m", "p", temperature=1.0)


def test_mock_marker_lookup():
    gw = MockGateway({"mock": MockModel({"VIROLOGY-PAPER": "Virology"})})
    prompt = "Scientific text to annotate is: a study, see VIROLOGY-PAPER."
    assert gw.complete(GenerationRequest("mock", prompt)).raw_text == "Virology"
    # markers outside the record section are ignored
    assert gw.complete(GenerationRequest("mock", "VIROLOGY-PAPER\nGiven this paper: x")).raw_text == ""


def test_mock_is_whole_token():
    model = MockModel({"REC-001": "a", "REC-0011": "b"})
    assert model.answer("Given this paper: REC-0011") == "b"


def test_mock_stage_and_flat_answers():
    model = MockModel({"K": {"domain": "Life Sciences", "subject": "Medicine", "topic": "Virology"}},
                      confusion={"K": {"subject": "Biology"}})
    assert model.answer("The list of valid domains is: [].\nGiven this paper: K") == "Life Sciences"
    assert model.answer("list of subjects under this domain: []\ngiven this paper: K") == "Biology"
    assert model.answer("Scientific text to annotate is: K") == (
        "domain: Life Sciences\nsubject: Biology\ntopic: Virology")


def test_mock_unknown_model():
    gw = MockGateway({"mock": MockModel({})})
    with pytest.raises(ModelRejected, match="nope"):
        gw.complete(GenerationRequest("nope", "x"))


def test_mock_embedding_cache_and_identity():
    gw = MockGateway({})
    a = gw.embed("mock-embed", "abc")
    b = gw.embed("mock-embed", "abc")
    assert a == b and gw.embed_calls == 1
    m = gw.embed("mock-embed", "Medicine")
    assert cosine(m, gw.embed("mock-embed", "Medicine")) == pytest.approx(1.0)
    assert len(a) == 64
    with pytest.raises(ValueError, match="empty embedding input"):
        gw.embed("mock-embed", "")
    with pytest.raises(ModelRejected):
        gw.embed("other", "abc")


def test_mock_embedding_is_stable():
    assert mock_embedding("Virology") == mock_embedding("Virology")
    assert mock_embedding("Virology") != mock_embedding("Biology")


class _SlowGateway(MockGateway):
    def _embed(self, model_id, text):
        time.sleep(0.02)
        return super()._embed(model_id, text)


def test_embedding_cache_single_flight():
    gw = _SlowGateway({}, max_in_flight=8)
    texts = ["a", "b", "c"] * 20
    with ThreadPoolExecutor(16) as pool:
        vectors = list(pool.map(lambda t: gw.embed("mock-embed", t), texts))
    assert gw.embed_calls == 3
    assert vectors[0] == vectors[3] == vectors[57]


class _CountingGateway(MockGateway):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.active = self.peak = 0
        self._lock = threading.Lock()

    def _complete(self, request):
        with self._lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.01)
        with self._lock:
            self.active -= 1
        return super()._complete(request)


def test_limiter_caps_in_flight():
    gw = _CountingGateway({"m": MockModel({})}, max_in_flight=3)
    with ThreadPoolExecutor(12) as pool:
        list(pool.map(lambda _: gw.complete(GenerationRequest("m", "x")), range(30)))
    assert gw.peak <= 3


# ---------------------------------------------------------------- HTTP


class _Server:
    def __init__(self, responder):
        calls = self.calls = []

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                calls.append((self.path, body))
                status, payload = responder(self.path, body, len(calls))
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def server():
    servers = []

    def make(responder):
        s = _Server(responder)
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.close()


def test_http_generate(server):
    srv = server(lambda path, body, n: (200, {"response": " Medicine.\n", "done": True}))
    gw = HttpGateway(srv.url)
    result = gw.complete(GenerationRequest("llama3", "hello", temperature=0.4, max_output_tokens=32))
    assert result.raw_text == " Medicine.\n"
    assert result.model_id == "llama3"
    path, body = srv.calls[0]
    assert path == "/api/generate"
    assert body == {"model": "llama3", "prompt": "hello", "stream": False,
                    "options": {"temperature": 0.4, "num_predict": 32}}


def test_http_unknown_model_surfaces_server_message(server):
    srv = server(lambda path, body, n: (404, {"error": "model 'ghost' not found, try pulling it first"}))
    gw = HttpGateway(srv.url, retries=2, backoff=0)
    with pytest.raises(ModelRejected, match="try pulling it first"):
        gw.complete(GenerationRequest("ghost", "x"))
    assert len(srv.calls) == 1  # no retry on rejection


def test_http_retries_on_server_error(server):
    srv = server(lambda path, body, n: (500, {"error": "busy"}) if n < 3 else (200, {"response": "ok"}))
    gw = HttpGateway(srv.url, retries=3, backoff=0.001)
    assert gw.complete(GenerationRequest("m", "x")).raw_text == "ok"
    assert len(srv.calls) == 3


def test_http_gives_up_after_retries(server):
    srv = server(lambda path, body, n: (503, {"error": "overloaded"}))
    gw = HttpGateway(srv.url, retries=2, backoff=0.001)
    with pytest.raises(TransportError, match="overloaded"):
        gw.complete(GenerationRequest("m", "x"))
    assert len(srv.calls) == 3


def test_http_empty_output_not_retried(server):
    srv = server(lambda path, body, n: (200, {"response": ""}))
    gw = HttpGateway(srv.url, retries=3, backoff=0.001)
    assert gw.complete(GenerationRequest("m", "x")).raw_text == ""
    assert len(srv.calls) == 1


def test_http_connection_refused():
    gw = HttpGateway("http://127.0.0.1:9", retries=1, backoff=0.001, timeout=2)
    with pytest.raises(TransportError):
        gw.complete(GenerationRequest("m", "x"))


def test_http_embeddings_cached(server):
    srv = server(lambda path, body, n: (200, {"embedding": [1.0, 2.0, 2.0]}))
    gw = HttpGateway(srv.url)
    assert gw.embed("nomic", "abc").components == (1.0, 2.0, 2.0)
    gw.embed("nomic", "abc")
    assert srv.calls == [("/api/embeddings", {"model": "nomic", "prompt": "abc"})]


def test_endpoint_from_environment(monkeypatch):
    monkeypatch.setenv("AREATAG_ENDPOINT", "http://example.invalid:1234/")
    assert HttpGateway().base_url == "http://example.invalid:1234"
