"""HTTP service exposing a stack and its labels to the browser labeling tool.

Endpoints (JSON unless noted):

- GET  /api/stack                       -> {count, width, height, labeled, unlabeled}
- GET  /api/images?status=&offset=&limit= -> [{id, label}]
- GET  /api/image/{id}.png              -> 8-bit grayscale PNG render
- POST /api/label {id, label}           -> {ok: true}; idempotent, last-write-wins
- GET  /api/export?format=csv           -> label CSV (id,label with +/- tokens)

Static assets (the frontend) are served from an optional directory at /.
The label store is a CSV rewritten atomically (write-temp-then-rename) on
every change; a lock serializes writers. The stack itself is never mutated.
"""
from __future__ import annotations

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image as PilImage

from .imgio import ImageStack, LabelTable, read_label_csv, write_label_csv

__all__ = ["LabelStore", "render_png", "make_server"]

_LABEL_TOKENS = {"+": 1, "-": -1, "unlabeled": 0}
_TOKEN_OF = {1: "+", -1: "-", 0: "unlabeled"}


class LabelStore:
    """Single-writer label table persisted to a CSV path."""

    def __init__(self, path: str, n_images: int):
        self.path = str(path)
        self.n_images = n_images
        self._lock = threading.Lock()
        if Path(self.path).exists():
            self.table = read_label_csv(self.path)
        else:
            self.table = LabelTable()

    def set_label(self, image_id: int, label: int) -> None:
        if not 0 <= image_id < self.n_images:
            raise ValueError(f"image id {image_id} out of range")
        with self._lock:
            self.table.set_label(image_id, label)
            write_label_csv(self.table, self.path, atomic=True)

    def label_of(self, image_id: int) -> int:
        return self.table.label_of(image_id)

    def counts(self) -> tuple[int, int]:
        labeled = len(self.table.labels)
        return labeled, self.n_images - labeled

    def export_csv(self) -> bytes:
        with self._lock:
            lines = ["id,label"]
            for i in self.table.labeled_ids():
                lines.append(f"{i},{_TOKEN_OF[self.table.labels[i]]}")
        return ("\n".join(lines) + "\n").encode()


def render_png(image: np.ndarray) -> bytes:
    """Min-max contrast stretch to 8-bit grayscale PNG."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = (img - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(img)
    buf = io.BytesIO()
    PilImage.fromarray(np.round(scaled).astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
    ".map": "application/json",
}


def make_server(
    stack: ImageStack,
    store: LabelStore,
    port: int = 8080,
    static_dir: str | None = None,
    host: str = "127.0.0.1",
) -> ThreadingHTTPServer:
    """Build (but do not start) the threaded HTTP server."""
    static_root = Path(static_dir).resolve() if static_dir else None

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, code: int, body: bytes, content_type: str) -> None:
            self.send_response(code)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, payload, code: int = 200) -> None:
            self._send(code, json.dumps(payload).encode(), "application/json")

        def _error(self, code: int, message: str) -> None:
            self._send_json({"error": message}, code=code)

        def do_GET(self):  # noqa: N802 - http.server API
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            try:
                if url.path == "/api/stack":
                    labeled, unlabeled = store.counts()
                    self._send_json(
                        {
                            "count": len(stack),
                            "width": stack.width,
                            "height": stack.height,
                            "labeled": labeled,
                            "unlabeled": unlabeled,
                        }
                    )
                elif url.path == "/api/images":
                    query = parse_qs(url.query)
                    status = query.get("status", ["all"])[0]
                    offset = int(query.get("offset", ["0"])[0])
                    limit = int(query.get("limit", [str(len(stack))])[0])
                    rows = []
                    for i in range(len(stack)):
                        label = store.label_of(i)
                        if status == "unlabeled" and label != 0:
                            continue
                        if status == "labeled" and label == 0:
                            continue
                        rows.append({"id": i, "label": _TOKEN_OF[label]})
                    self._send_json(rows[offset : offset + limit])
                elif len(parts) == 3 and parts[:2] == ["api", "image"] and parts[2].endswith(".png"):
                    image_id = int(parts[2][: -len(".png")])
                    if not 0 <= image_id < len(stack):
                        self._error(404, f"no image {image_id}")
                        return
                    self._send(200, render_png(stack[image_id]), "image/png")
                elif url.path == "/api/export":
                    self._send(200, store.export_csv(), "text/csv; charset=utf-8")
                elif static_root is not None:
                    self._serve_static(url.path)
                else:
                    self._error(404, "not found")
            except (ValueError, KeyError) as exc:
                self._error(400, str(exc))

        def _serve_static(self, path: str) -> None:
            rel = path.lstrip("/") or "index.html"
            target = (static_root / rel).resolve()
            if not str(target).startswith(str(static_root)) or not target.is_file():
                self._error(404, "not found")
                return
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self._send(200, target.read_bytes(), ctype)

        def do_POST(self):  # noqa: N802 - http.server API
            url = urlparse(self.path)
            if url.path != "/api/label":
                self._error(404, "not found")
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length) or b"{}")
                image_id = int(payload["id"])
                token = payload["label"]
                if token not in _LABEL_TOKENS:
                    raise ValueError(f"label must be one of {sorted(_LABEL_TOKENS)}")
                store.set_label(image_id, _LABEL_TOKENS[token])
                self._send_json({"ok": True})
            except (ValueError, KeyError, json.JSONDecodeError) as exc:
                self._error(400, str(exc))

    return ThreadingHTTPServer((host, port), Handler)
