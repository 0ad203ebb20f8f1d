"""HTTP service backing the soft-brush annotation UI.

Serves greyscale images and persists per-pixel confidence labels, validating
every write against the .cmap contract and the image's dimensions.  Writes
are atomic (temp file + rename) and serialized per image id, so a concurrent
reader always observes a complete map.

    GET  /api/images                -> [{id, width, height, has_label}]
    GET  /api/images/{id}/meta      -> {"width": w, "height": h}
    GET  /api/images/{id}/raw       -> PGM bytes
    GET  /api/labels/{id}           -> .cmap bytes (404 when unlabeled)
    PUT  /api/labels/{id}           -> {"revision": n} | 422 {"error": reason}
    GET  /api/channels              -> the 6 channel names in canonical order

The built UI (when present) is hosted statically at /.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from confseg.dataio import FormatError, cmap_from_bytes, read_pgm
from confseg.labels import CHANNEL_NAMES

_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")

_UI_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript",
    ".css": "text/css",
    ".svg": "image/svg+xml",
    ".map": "application/json",
}

_PLACEHOLDER = (
    "<!doctype html><title>confseg annotator</title>"
    "<p>UI assets not built; the JSON API under /api is live.</p>"
)


class AnnotationStore:
    """Image/label directory with per-id write locks and revision counters."""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        if not self.data_dir.is_dir():
            raise NotADirectoryError(f"data dir {self.data_dir} not readable")
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._revisions: dict[str, int] = {}

    def _lock_for(self, image_id: str) -> threading.Lock:
        with self._locks_guard:
            if image_id not in self._locks:
                self._locks[image_id] = threading.Lock()
            return self._locks[image_id]

    def _image_path(self, image_id: str) -> Path:
        return self.data_dir / f"{image_id}.pgm"

    def _label_path(self, image_id: str) -> Path:
        return self.data_dir / f"{image_id}.cmap"

    def valid_id(self, image_id: str) -> bool:
        return bool(_ID_RE.match(image_id)) and self._image_path(image_id).exists()

    def list_images(self) -> list[dict]:
        rows = []
        for path in sorted(self.data_dir.glob("*.pgm")):
            img = read_pgm(path)
            rows.append({
                "id": path.stem,
                "width": int(img.shape[1]),
                "height": int(img.shape[0]),
                "has_label": self._label_path(path.stem).exists(),
            })
        return rows

    def image_meta(self, image_id: str) -> dict:
        img = read_pgm(self._image_path(image_id))
        return {"width": int(img.shape[1]), "height": int(img.shape[0])}

    def image_bytes(self, image_id: str) -> bytes:
        return self._image_path(image_id).read_bytes()

    def label_bytes(self, image_id: str) -> bytes | None:
        path = self._label_path(image_id)
        return path.read_bytes() if path.exists() else None

    def put_label(self, image_id: str, blob: bytes) -> int:
        """Validate and persist one label; returns the new revision."""
        cmap = cmap_from_bytes(blob)  # FormatError on anything malformed
        meta = self.image_meta(image_id)
        if (cmap.width, cmap.height) != (meta["width"], meta["height"]):
            raise FormatError(
                f"dimension mismatch: label {cmap.width}x{cmap.height}, "
                f"image {meta['width']}x{meta['height']}"
            )
        lock = self._lock_for(image_id)
        with lock:
            fd, tmp_name = tempfile.mkstemp(
                prefix=f".{image_id}.", suffix=".cmap.tmp", dir=self.data_dir
            )
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(blob)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp_name, self._label_path(image_id))
            except BaseException:
                if os.path.exists(tmp_name):
                    os.unlink(tmp_name)
                raise
            revision = self._revisions.get(image_id, 0) + 1
            self._revisions[image_id] = revision
            return revision


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    store: AnnotationStore = None
    ui_dir: Path | None = None

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, code: int, body: bytes, content_type: str):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, code: int, doc):
        self._send(code, json.dumps(doc).encode("utf-8"), "application/json")

    def do_GET(self):
        try:
            self._route_get()
        except FileNotFoundError:
            self._json(404, {"error": "not found"})
        except Exception as exc:  # noqa: BLE001 - surface as 500
            self._json(500, {"error": str(exc)})

    def _route_get(self):
        path = self.path.split("?", 1)[0]
        if path == "/api/images":
            self._json(200, self.store.list_images())
            return
        if path == "/api/channels":
            self._json(200, list(CHANNEL_NAMES))
            return
        m = re.match(r"^/api/images/([^/]+)/meta$", path)
        if m:
            if not self.store.valid_id(m.group(1)):
                self._json(404, {"error": f"unknown image {m.group(1)!r}"})
                return
            self._json(200, self.store.image_meta(m.group(1)))
            return
        m = re.match(r"^/api/images/([^/]+)/raw$", path)
        if m:
            if not self.store.valid_id(m.group(1)):
                self._json(404, {"error": f"unknown image {m.group(1)!r}"})
                return
            self._send(200, self.store.image_bytes(m.group(1)),
                       "application/octet-stream")
            return
        m = re.match(r"^/api/labels/([^/]+)$", path)
        if m:
            if not self.store.valid_id(m.group(1)):
                self._json(404, {"error": f"unknown image {m.group(1)!r}"})
                return
            blob = self.store.label_bytes(m.group(1))
            if blob is None:
                self._json(404, {"error": f"image {m.group(1)!r} has no label"})
                return
            self._send(200, blob, "application/octet-stream")
            return
        self._static(path)

    def _static(self, path: str):
        if self.ui_dir is None:
            if path in ("/", "/index.html"):
                self._send(200, _PLACEHOLDER.encode("utf-8"),
                           "text/html; charset=utf-8")
            else:
                self._json(404, {"error": "not found"})
            return
        rel = "index.html" if path == "/" else path.lstrip("/")
        target = (self.ui_dir / rel).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())) or not target.is_file():
            self._json(404, {"error": "not found"})
            return
        ctype = _UI_TYPES.get(target.suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), ctype)

    def do_PUT(self):
        path = self.path.split("?", 1)[0]
        m = re.match(r"^/api/labels/([^/]+)$", path)
        if not m:
            self._json(404, {"error": "not found"})
            return
        image_id = m.group(1)
        if not self.store.valid_id(image_id):
            self._json(404, {"error": f"unknown image {image_id!r}"})
            return
        length = int(self.headers.get("Content-Length", 0))
        blob = self.rfile.read(length)
        try:
            revision = self.store.put_label(image_id, blob)
        except FormatError as exc:
            self._json(422, {"error": str(exc)})
            return
        self._json(200, {"revision": revision})


class _Server(ThreadingHTTPServer):
    # Deep accept backlog: annotation bursts (and the stress tests) open
    # hundreds of simultaneous connections.
    request_queue_size = 128
    daemon_threads = True


def make_server(data_dir, host: str = "127.0.0.1", port: int = 0,
                ui_dir=None) -> ThreadingHTTPServer:
    store = AnnotationStore(data_dir)
    handler = type("BoundHandler", (_Handler,), {
        "store": store,
        "ui_dir": Path(ui_dir) if ui_dir else None,
    })
    return _Server((host, port), handler)


def serve(data_dir, host: str = "127.0.0.1", port: int = 8289, ui_dir=None):
    server = make_server(data_dir, host, port, ui_dir)
    addr = server.server_address
    print(f"annotation service on http://{addr[0]}:{addr[1]}/ (data: {data_dir})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
