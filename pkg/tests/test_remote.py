import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from metapolicy.policy import PolicyContext, RemotePolicy, render_prompt
from metapolicy.remote import RemoteClient, RemoteError
from metapolicy.textworld import TextWorld, act


class Endpoint:
    """Local HTTP stub; ``script`` holds (status, body) pairs, last one repeats."""

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        owner = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                owner.requests.append((dict(self.headers), json.loads(self.rfile.read(length))))
                status, body = owner.script[min(len(owner.requests), len(owner.script)) - 1]
                data = body if isinstance(body, bytes) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/v1/complete"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def _client(url, **kw):
    kw.setdefault("timeout", 5)
    return RemoteClient(url, token="secret", backoff=0, **kw)


def test_request_shape_and_reply():
    with Endpoint([(200, {"text": "open(fridge)"})]) as ep:
        assert _client(ep.url).complete("hello", max_reply_tokens=12) == "open(fridge)"
    headers, body = ep.requests[0]
    assert body == {"prompt": "hello", "max_reply_tokens": 12, "temperature": 0}
    assert headers["Authorization"] == "Bearer secret"


def test_server_errors_are_retried():
    with Endpoint([(503, {"error": "busy"}), (500, {}), (200, {"text": "look()"})]) as ep:
        assert _client(ep.url, retries=3).complete("p") == "look()"
    assert len(ep.requests) == 3


def test_retries_exhausted_raise():
    with Endpoint([(502, {})]) as ep:
        with pytest.raises(RemoteError, match="after 2 attempts"):
            _client(ep.url, retries=2).complete("p")
    assert len(ep.requests) == 2


def test_client_errors_are_not_retried():
    with Endpoint([(401, {"error": "no"})]) as ep:
        with pytest.raises(RemoteError, match="HTTP 401"):
            _client(ep.url).complete("p")
    assert len(ep.requests) == 1


@pytest.mark.parametrize("body", [b"not json", {"answer": "x"}, [1, 2]])
def test_malformed_responses(body):
    with Endpoint([(200, body)]) as ep:
        with pytest.raises(RemoteError):
            _client(ep.url).complete("p")


def test_unreachable_endpoint():
    with pytest.raises(RemoteError, match="unreachable"):
        _client("http://127.0.0.1:9/none", retries=1, timeout=0.5).complete("p")


def test_from_env(monkeypatch):
    monkeypatch.delenv("MPR_ENDPOINT_URL", raising=False)
    with pytest.raises(RemoteError):
        RemoteClient.from_env()
    monkeypatch.setenv("MPR_ENDPOINT_URL", "http://x")
    monkeypatch.setenv("MPR_AUTH_TOKEN", "t")
    c = RemoteClient.from_env(retries=1)
    assert (c.url, c.token, c.retries) == ("http://x", "t", 1)


def test_remote_policy_sends_prompt_and_parses_reply(kitchen):
    obs = TextWorld().reset(kitchen)
    ctx = PolicyContext(kitchen.goal, obs)
    with Endpoint([(200, {"text": "Sure. I will open(fridge) now."})]) as ep:
        action = RemotePolicy(_client(ep.url)).decide(ctx)
    assert action == act("open", "fridge")
    assert ep.requests[0][1]["prompt"] == render_prompt(ctx)
