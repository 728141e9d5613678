"""JSON-over-HTTP clients for the external model services.

The embedding encoder, the summarizer and the claim classifier all run
out of process. Each client takes a ``transport``: any callable mapping a
request dict to a response dict. ``HttpJsonTransport`` is the real one;
tests pass plain functions.
"""

from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request
from typing import Any, Callable

logger = logging.getLogger(__name__)

Transport = Callable[[dict], dict]


class ServiceError(RuntimeError):
    """An external service failed. ``kind`` is ``unreachable`` or ``malformed_response``."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class HttpJsonTransport:
    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def __call__(self, payload: dict) -> dict:
        body = json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint,
            data=body,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
        except (urllib.error.URLError, OSError) as exc:
            raise ServiceError("unreachable", f"{self.endpoint}: {exc}") from exc
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ServiceError("malformed_response", f"non-JSON body from {self.endpoint}") from exc
        if not isinstance(data, dict):
            raise ServiceError("malformed_response", "response body is not an object")
        return data


def call_with_retries(transport: Transport, payload: dict, retries: int = 2, backoff: float = 0.0) -> dict:
    """Call ``transport``, retrying ``unreachable`` failures up to ``retries`` times.

    Malformed responses are not retried.
    """
    attempt = 0
    while True:
        try:
            return transport(payload)
        except ServiceError as exc:
            if exc.kind != "unreachable" or attempt >= retries:
                raise
        except (OSError, TimeoutError) as exc:
            if attempt >= retries:
                raise ServiceError("unreachable", str(exc)) from exc
        attempt += 1
        logger.warning("service call failed, retry %d/%d", attempt, retries)
        if backoff:
            time.sleep(backoff * attempt)


def require(data: dict, key: str, kind: type | tuple[type, ...]) -> Any:
    value = data.get(key)
    if not isinstance(value, kind):
        raise ServiceError("malformed_response", f"field {key!r} missing or wrong type")
    return value
