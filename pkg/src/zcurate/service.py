"""HTTP JSON API over the curation service, plus static UI hosting.

Runs on the stdlib threading HTTP server; task mutations are already
serialized inside CurationService, so concurrent requests are safe. Errors
come back as {"code", "message"} with a status mapped from the error code.
"""

from __future__ import annotations

import json
import re
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .curation import CurationService, PseudoLabel
from .errors import ZCurateError

_STATUS_BY_CODE = {
    "not_found": 404,
    "lease_violation": 409,
    "bad_transition": 409,
    "bad_verdict": 400,
    "parse": 400,
    "bad_request": 400,
}

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript",
    ".css": "text/css",
    ".json": "application/json",
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".svg": "image/svg+xml",
}


def _sniff_media_type(data: bytes) -> str:
    if data.startswith(b"\x89PNG"):
        return "image/png"
    if data.startswith(b"\xff\xd8"):
        return "image/jpeg"
    return "application/octet-stream"


class CurationRequestHandler(BaseHTTPRequestHandler):
    service: CurationService
    static_dir: Path | None
    clock = staticmethod(time.time)

    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    # -- helpers -----------------------------------------------------------

    def _send_json(self, obj, status: int = 200) -> None:
        body = json.dumps(obj, ensure_ascii=False, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_body(self, code: str, message: str) -> None:
        self._send_json({"code": code, "message": message}, _STATUS_BY_CODE.get(code, 500))

    def _send_empty(self, status: int) -> None:
        self.send_response(status)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        try:
            obj = json.loads(raw)
            if not isinstance(obj, dict):
                raise ValueError
            return obj
        except ValueError:
            raise ZCurateError("parse", "body is not a JSON object") from None

    def _task_json(self, task) -> dict:
        return task.to_dict()

    # -- routing -----------------------------------------------------------

    def do_GET(self) -> None:
        try:
            url = urlparse(self.path)
            if url.path == "/api/tasks/next":
                self._get_next_task(parse_qs(url.query))
            elif m := re.fullmatch(r"/api/tasks/([^/]+)", url.path):
                self._send_json(self._task_json(self.service.get_task(m.group(1))))
            elif url.path == "/api/stats":
                self._send_json(self.service.stats())
            elif m := re.fullmatch(r"/api/media/([0-9a-f]+)", url.path):
                self._get_media(m.group(1))
            elif url.path.startswith("/api/"):
                self._send_error_body("not_found", f"no route {url.path}")
            else:
                self._get_static(url.path)
        except ZCurateError as e:
            self._send_error_body(e.code, str(e))
        except Exception as e:  # pragma: no cover - defensive
            self._send_error_body("internal", str(e))

    def do_POST(self) -> None:
        try:
            url = urlparse(self.path)
            if m := re.fullmatch(r"/api/tasks/([^/]+)/verdict", url.path):
                self._post_verdict(m.group(1))
            elif url.path == "/api/feedback/apply":
                delta = self.service.apply_feedback()
                self._send_json(delta.to_dict())
            else:
                self._send_error_body("not_found", f"no route {url.path}")
        except ZCurateError as e:
            self._send_error_body(e.code, str(e))
        except Exception as e:  # pragma: no cover - defensive
            self._send_error_body("internal", str(e))

    # -- handlers ----------------------------------------------------------

    def _get_next_task(self, query: dict) -> None:
        holder = (query.get("holder") or [""])[0]
        if not holder:
            raise ZCurateError("bad_request", "holder query parameter required")
        task = self.service.lease_next(holder, now=self.clock())
        if task is None:
            self._send_empty(204)
        else:
            self._send_json(self._task_json(task))

    def _post_verdict(self, task_id: str) -> None:
        body = self._read_json()
        holder = body.get("holder") or ""
        verdict = body.get("verdict") or ""
        if not holder:
            raise ZCurateError("bad_request", "holder required")
        correction = None
        if body.get("correction"):
            correction = PseudoLabel.from_dict(body["correction"])
        task = self.service.submit_human_verdict(
            task_id, holder, verdict, correction=correction, now=self.clock()
        )
        self._send_json(self._task_json(task))

    def _get_media(self, record_id: str) -> None:
        data = self.service.store.media_for(record_id)
        self.send_response(200)
        self.send_header("Content-Type", _sniff_media_type(data))
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _get_static(self, path: str) -> None:
        if self.static_dir is None:
            self._send_error_body("not_found", "no static assets configured")
            return
        rel = path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        root = self.static_dir.resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            self._send_error_body("not_found", path)
            return
        data = target.read_bytes()
        self.send_response(200)
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def make_server(
    service: CurationService,
    host: str = "127.0.0.1",
    port: int = 0,
    static_dir: str | Path | None = None,
    clock=time.time,
) -> ThreadingHTTPServer:
    handler = type(
        "BoundHandler",
        (CurationRequestHandler,),
        {
            "service": service,
            "static_dir": Path(static_dir) if static_dir else None,
            "clock": staticmethod(clock),
        },
    )
    return ThreadingHTTPServer((host, port), handler)
