from __future__ import annotations

import datetime as dt

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_record(pid, vec, day, domain="a.example", article=None, text="", ordinal=0):
    from narrwatch.embeddings import PassageRecord

    v = np.asarray(vec, dtype=np.float64)
    return PassageRecord(pid, article or pid.split(":")[0], domain, day, ordinal, v / np.linalg.norm(v), text)


@pytest.fixture
def record():
    return make_record


@pytest.fixture
def day0():
    return dt.date(2022, 3, 1)


class _Service:
    """Local JSON-over-HTTP stub. ``handler(payload) -> (status, body)``."""

    def __init__(self, handler):
        import http.server
        import json
        import threading

        svc = self
        self.handler = handler
        self.calls = []

        class H(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(n))
                svc.calls.append(payload)
                status, body = svc.handler(payload)
                raw = body if isinstance(body, bytes) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

            def log_message(self, *a):
                pass

        self.server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), H)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def service():
    started = []

    def start(handler):
        s = _Service(handler)
        started.append(s)
        return s

    yield start
    for s in started:
        s.close()


@pytest.fixture
def dead_url():
    import socket

    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return f"http://127.0.0.1:{port}/"


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
