"""HTTP transport shared by the remote policy and the remote reflector.

Request: ``POST <url>`` with JSON ``{"prompt": ..., "max_reply_tokens": N,
"temperature": 0}``; response JSON ``{"text": ...}``.  The URL and bearer
token come from ``MPR_ENDPOINT_URL`` and ``MPR_AUTH_TOKEN``.
"""

from __future__ import annotations

import json
import logging
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

log = logging.getLogger(__name__)

ENV_URL = "MPR_ENDPOINT_URL"
ENV_TOKEN = "MPR_AUTH_TOKEN"


class RemoteError(RuntimeError):
    pass


@dataclass
class RemoteClient:
    url: str
    token: str | None = None
    timeout: float = 30.0
    retries: int = 3
    max_reply_tokens: int = 256
    backoff: float = 0.5

    @classmethod
    def from_env(cls, **kwargs) -> RemoteClient:
        url = os.environ.get(ENV_URL)
        if not url:
            raise RemoteError(f"{ENV_URL} is not set")
        return cls(url=url, token=os.environ.get(ENV_TOKEN), **kwargs)

    def complete(self, prompt: str, max_reply_tokens: int | None = None) -> str:
        body = json.dumps(
            {
                "prompt": prompt,
                "max_reply_tokens": max_reply_tokens or self.max_reply_tokens,
                "temperature": 0,
            }
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last: Exception | None = None
        for attempt in range(1, self.retries + 1):
            req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                if exc.code < 500:
                    raise RemoteError(f"endpoint rejected request: HTTP {exc.code}") from exc
                last = exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = exc
            except json.JSONDecodeError as exc:
                raise RemoteError(f"endpoint returned invalid JSON: {exc}") from exc
            else:
                if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
                    raise RemoteError("endpoint response lacks a 'text' string")
                return payload["text"]
            log.warning("remote call failed (attempt %d/%d): %s", attempt, self.retries, last)
            if attempt < self.retries and self.backoff:
                time.sleep(self.backoff * attempt)
        raise RemoteError(f"endpoint unreachable after {self.retries} attempts: {last}")
