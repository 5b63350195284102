import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class _Handler(BaseHTTPRequestHandler):
    # set per server: callable(sequences) -> (status, body bytes)
    responder = None

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if self.path != "/v1/logits":
            status, payload = 404, b"{}"
        else:
            status, payload = self.server.responder(body["sequences"])
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def logit_server():
    """Start a local victim server; yields a function taking a responder and returning its URL."""
    servers = []

    def start(responder):
        srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        srv.responder = responder
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        servers.append(srv)
        return f"http://127.0.0.1:{srv.server_address[1]}"

    yield start
    for srv in servers:
        srv.shutdown()
        srv.server_close()


def json_reply(fn):
    """Responder returning 200 with ``{"logits": fn(sequences)}``."""
    return lambda seqs: (200, json.dumps({"logits": fn(seqs)}).encode())


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
