"""In-process HTTP server exposing any GenerationBackend over the wire
protocol.  Used by the test suite to exercise the real client against the
procedural backend, and runnable standalone:

    python -m panoweave.backends.mock_server --port 8787
"""

from __future__ import annotations

import argparse
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from panoweave.backends import GenerationBackend, ProtocolViolation
from panoweave.backends.procedural import ProceduralBackend
from panoweave.backends.wire import (
    CaptionRequest,
    CaptionResponse,
    DriftTolerance,
    GenerateRequest,
    Healthz,
    ImageResponse,
    OutpaintRequest,
    error_body,
    parse_json,
)


def _make_handler(backend: GenerationBackend, healthz: Healthz):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _send(self, status: int, payload: str) -> None:
            data = payload.encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _fail(self, status: int, code: str, message: str) -> None:
            self._send(status, error_body(code, message))

        def do_GET(self):
            if self.path == "/healthz":
                self._send(200, healthz.to_json())
            else:
                self._fail(404, "not-found", f"no route {self.path}")

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length)
            try:
                body = parse_json(raw, self.path)
                if self.path == "/generate":
                    req = GenerateRequest.from_body(body)
                    if req.width <= 0 or req.height <= 0:
                        self._fail(400, "bad-request", "dimensions must be positive")
                        return
                    image = backend.generate(req.prompt, req.seed, req.width, req.height)
                    self._send(200, ImageResponse(image, healthz.model_id).to_json())
                elif self.path == "/outpaint":
                    req = OutpaintRequest.from_body(body)
                    image = backend.outpaint(req.image, req.generate_mask, req.prompt, req.seed)
                    self._send(200, ImageResponse(image, healthz.model_id).to_json())
                elif self.path == "/caption":
                    req = CaptionRequest.from_body(body)
                    self._send(200, CaptionResponse(backend.caption(req.image)).to_json())
                else:
                    self._fail(404, "not-found", f"no route {self.path}")
            except ProtocolViolation as exc:
                self._fail(400, "bad-request", str(exc))
            except ValueError as exc:
                self._fail(400, "bad-request", str(exc))
            except Exception as exc:  # pragma: no cover - defensive
                self._fail(500, "internal", f"{type(exc).__name__}: {exc}")

    return Handler


class MockServer:
    """Threaded wire-protocol server around a backend; ephemeral port by default."""

    def __init__(self, backend: GenerationBackend | None = None, host: str = "127.0.0.1",
                 port: int = 0):
        self.backend = backend or ProceduralBackend()
        healthz = Healthz(
            capabilities=tuple(sorted(self.backend.capabilities)),
            model_id=self.backend.identity,
            drift=DriftTolerance(band_px=0, max_delta=0),
        )
        self._server = ThreadingHTTPServer((host, port), _make_handler(self.backend, healthz))
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Serve the procedural backend over HTTP")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8787)
    args = parser.parse_args(argv)
    server = MockServer(host=args.host, port=args.port)
    print(f"serving procedural backend at {server.base_url}", flush=True)
    try:
        server._server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
