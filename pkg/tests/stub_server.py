"""Tiny completion API stand-in for HTTP contract tests."""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubCompletionServer:
    """Serves scripted (status, body, delay) replies and records every request."""

    def __init__(self, responder=None) -> None:
        # responder(body) -> (status, body) answers anything the reply queue does not
        self.responder = responder
        self.replies: deque = deque()
        self.requests: list[dict] = []
        self.default = (200, {"choices": [{"text": "e2e4"}], "usage": {"completion_tokens": 2}}, 0.0)
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                stub.requests.append({
                    "path": self.path,
                    "headers": dict(self.headers),
                    "body": json.loads(raw) if raw else None,
                })
                if stub.replies:
                    status, body, delay = stub.replies.popleft()
                elif stub.responder is not None:
                    status, body = stub.responder(stub.requests[-1]["body"])
                    delay = 0.0
                else:
                    status, body, delay = stub.default
                if delay:
                    time.sleep(delay)
                payload = body if isinstance(body, bytes) else json.dumps(body).encode()
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                except (BrokenPipeError, ConnectionResetError):
                    pass

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def reply(self, status=200, body=None, delay=0.0) -> None:
        self.replies.append((status, body if body is not None else self.default[1], delay))

    def __enter__(self) -> "StubCompletionServer":
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self.server.server_close()
