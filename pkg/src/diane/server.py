"""HTTP front: /soap for the service actions, /streams for the relay."""

import re
import sys
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .soap import Service
from .stream import (
    BadFrame,
    NoSuchSession,
    PullTimeout,
    Relay,
    SessionClosed,
    StaleSequence,
)

_STREAM_RE = re.compile(r"^/streams/([^/]+)(/frames|/live)?$")
_PGM_TYPE = "image/x-portable-graymap"
_BOUNDARY = "frame"


class _Http(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, handler, service: Service, relay: Relay, log):
        self.service = service
        self.relay = relay
        self.log_stream = log
        super().__init__(addr, handler)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    # one line per request goes through _log instead
    def log_message(self, fmt, *args):
        pass

    def _log(self, action: str, status: int, t0: float) -> None:
        ms = (time.monotonic() - t0) * 1000.0
        print(f"{self.command} {action} {status} {ms:.1f}ms",
              file=self.server.log_stream, flush=True)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length > 0 else b""

    def _reply(self, status: int, payload: bytes = b"",
               content_type: str = "text/plain; charset=utf-8") -> None:
        self.send_response(status)
        if payload or status not in (204,):
            self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if payload:
            self.wfile.write(payload)

    # -- routes --

    def do_POST(self):
        t0 = time.monotonic()
        if self.path == "/soap":
            status, data, action = self.server.service.handle_request(
                self._body())
            self._reply(status, data, "text/xml; charset=utf-8")
            self._log(action, status, t0)
            return
        if self.path == "/streams":
            session = self.server.relay.create_session()
            self._reply(201, (session.session_id + "\n").encode("ascii"))
            self._log("/streams", 201, t0)
            return
        m = _STREAM_RE.match(self.path)
        if m and m.group(2) == "/frames":
            status = self._publish(m.group(1))
            self._log(self.path, status, t0)
            return
        self._reply(404, b"no such path\n")
        self._log(self.path, 404, t0)

    def _publish(self, session_id: str) -> int:
        body = self._body()
        raw_seq = self.headers.get("X-Frame-Seq", "")
        try:
            seq = int(raw_seq)
        except ValueError:
            self._reply(400, f"bad X-Frame-Seq {raw_seq!r}\n".encode())
            return 400
        try:
            self.server.relay.publish_frame(session_id, seq, body)
        except BadFrame as e:
            self._reply(400, f"{e}\n".encode())
            return 400
        except NoSuchSession as e:
            self._reply(404, f"{e}\n".encode())
            return 404
        except SessionClosed as e:
            self._reply(410, f"{e}\n".encode())
            return 410
        except StaleSequence as e:
            self._reply(409, f"{e}\n".encode())
            return 409
        self._reply(202, b"accepted\n")
        return 202

    def do_GET(self):
        t0 = time.monotonic()
        m = _STREAM_RE.match(self.path)
        if not (m and m.group(2) == "/live"):
            self._reply(404, b"no such path\n")
            self._log(self.path, 404, t0)
            return
        try:
            feed = self.server.relay.subscribe(m.group(1))
        except NoSuchSession as e:
            self._reply(404, f"{e}\n".encode())
            self._log(self.path, 404, t0)
            return
        self.send_response(200)
        self.send_header("Content-Type",
                         f"multipart/x-mixed-replace; boundary={_BOUNDARY}")
        self.end_headers()
        status = 200
        try:
            while True:
                try:
                    frame = feed.pull(timeout=1.0)
                except PullTimeout:
                    continue
                if frame is None:
                    self.wfile.write(f"--{_BOUNDARY}--\r\n".encode())
                    break
                part = (f"--{_BOUNDARY}\r\n"
                        f"X-Frame-Seq: {frame.seq}\r\n"
                        f"Content-Type: {_PGM_TYPE}\r\n"
                        f"Content-Length: {len(frame.image)}\r\n"
                        "\r\n").encode() + frame.image + b"\r\n"
                self.wfile.write(part)
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            status = 499  # viewer went away mid-stream
        finally:
            self.close_connection = True
        self._log(self.path, status, t0)

    def do_DELETE(self):
        t0 = time.monotonic()
        m = _STREAM_RE.match(self.path)
        if not (m and m.group(2) is None):
            self._reply(404, b"no such path\n")
            self._log(self.path, 404, t0)
            return
        try:
            self.server.relay.close_session(m.group(1))
        except NoSuchSession as e:
            self._reply(404, f"{e}\n".encode())
            self._log(self.path, 404, t0)
            return
        self._reply(204)
        self._log(self.path, 204, t0)


class AppServer:
    """Threaded HTTP server hosting one Service and one Relay."""

    def __init__(self, service: Service, relay: Relay,
                 host: str = "127.0.0.1", port: int = 8070,
                 log=sys.stderr):
        self.relay = relay
        self._httpd = _Http((host, port), _Handler, service, relay, log)

    @property
    def address(self):
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def serve_forever(self) -> None:
        self._httpd.serve_forever(poll_interval=0.2)

    def shutdown(self) -> None:
        # end feeds first so live handlers drain instead of blocking
        self.relay.close_all()
        self._httpd.shutdown()
        self._httpd.server_close()
