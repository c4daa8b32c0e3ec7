"""Online ranking service over an immutable, atomically swappable model snapshot.

Endpoints (JSON, UTF-8):
    POST /rank          {"context": {...}, "endorsements": [...], "top_n": 10}
    GET  /health
    GET  /profiles
    POST /admin/reload  {"path": "..."}   (path optional: reload current file)
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import threading
import time
from dataclasses import dataclass
from functools import lru_cache
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from ..core import EncodingError, encode_context
from ..profiles import (ARTIFACT_VERSION, ArtifactError, ModelArtifact, assign, describe_cups,
                        loads_artifact)
from ..ranker import rank

log = logging.getLogger(__name__)

MAX_BODY = 1 << 20
ASSIGN_CACHE = 4096


class RequestError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ModelSnapshot:
    artifact: ModelArtifact
    path: str
    digest: str
    seq: int
    loaded_at: float
    version: int = ARTIFACT_VERSION

    def __post_init__(self):
        # per-snapshot memo of context -> CUP; a context is assigned once per session
        cache = lru_cache(maxsize=ASSIGN_CACHE)(self._assign_uncached)
        object.__setattr__(self, "assign_cached", cache)

    @property
    def tag(self) -> str:
        return f"{self.seq}:{self.digest[:16]}"

    def _assign_uncached(self, context_key: tuple) -> int:
        block = encode_context(dict(context_key), self.artifact.schema)
        return assign(block, self.artifact.cups)


def _snapshot_from_file(path: str | Path, seq: int) -> ModelSnapshot:
    data = Path(path).read_bytes()
    artifact = loads_artifact(data)
    return ModelSnapshot(artifact, str(path), hashlib.sha256(data).hexdigest(), seq, time.time())


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode()


class RankingService:
    """Transport-independent request handling.

    Readers take one reference to the current snapshot and use it for the
    whole request; `reload` builds the replacement fully before swapping the
    reference, so a request never sees a half-loaded or mixed model.
    """

    def __init__(self, strict: bool = True):
        self.strict = strict
        self._snapshot: ModelSnapshot | None = None
        self._reload_lock = threading.Lock()
        self._seq = itertools.count(1)

    @property
    def snapshot(self) -> ModelSnapshot | None:
        return self._snapshot

    def load(self, path: str | Path) -> ModelSnapshot:
        with self._reload_lock:
            snap = _snapshot_from_file(path, next(self._seq))
            self._snapshot = snap
        log.info("serving snapshot %s from %s", snap.tag, path)
        return snap

    def reload(self, body: bytes = b"") -> tuple[int, dict]:
        try:
            req = json.loads(body) if body.strip() else {}
        except json.JSONDecodeError:
            return 400, {"error": "request body is not JSON"}
        current = self._snapshot
        path = req.get("path") if isinstance(req, dict) else None
        path = path or (current.path if current else None)
        if not path:
            return 400, {"error": "no artifact path given"}
        try:
            snap = self.load(path)
        except (OSError, ArtifactError) as exc:
            log.warning("reload of %s failed: %s", path, exc)
            out = {"error": f"reload failed: {exc}"}
            if current is not None:
                out["snapshot"] = current.tag
            return 422, out
        return 200, {"status": "reloaded", "snapshot": snap.tag, "version": snap.version}

    def health(self) -> tuple[int, dict]:
        snap = self._snapshot
        if snap is None:
            return 503, {"status": "no model"}
        return 200, {"status": "ok", "snapshot": snap.tag, "version": snap.version,
                     "cups": len(snap.artifact.cups)}

    def profiles(self) -> tuple[int, dict]:
        snap = self._snapshot
        if snap is None:
            return 503, {"error": "no model loaded"}
        return 200, {"snapshot": snap.tag, "profiles": describe_cups(snap.artifact)}

    def _parse(self, body: bytes, snap: ModelSnapshot):
        try:
            req = json.loads(body)
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise RequestError("request body is not JSON") from None
        if not isinstance(req, dict):
            raise RequestError("request must be a JSON object")
        context = req.get("context", {})
        ends = req.get("endorsements", [])
        top_n = req.get("top_n", 10)
        if not isinstance(context, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in context.items()):
            raise RequestError("context must map feature names to category names")
        if not isinstance(ends, list) or not all(isinstance(e, str) for e in ends):
            raise RequestError("endorsements must be a list of strings")
        if isinstance(top_n, bool) or not isinstance(top_n, int) or top_n < 1:
            raise RequestError("top_n must be a positive integer")
        schema, vocab = snap.artifact.schema, snap.artifact.vocab
        ignored = []
        clean_ctx = {}
        for f, c in context.items():
            try:
                schema.coordinate(f, c)
                clean_ctx[f] = c
            except EncodingError as exc:
                if self.strict:
                    raise RequestError(str(exc)) from None
                ignored.append(f"{f}={c}")
        query = []
        for e in ends:
            if e in vocab:
                query.append(e)
            elif self.strict:
                raise RequestError(f"unknown endorsement {e!r}")
            else:
                ignored.append(e)
        return clean_ctx, frozenset(query), top_n, ignored

    def rank(self, body: bytes) -> tuple[int, dict]:
        snap = self._snapshot
        if snap is None:
            return 503, {"error": "no model loaded"}
        try:
            context, query, top_n, ignored = self._parse(body, snap)
        except RequestError as exc:
            return 400, {"error": str(exc)}
        cup = snap.assign_cached(tuple(sorted(context.items())))
        model, fallback = snap.artifact.rankers.model_for(cup)
        ranked = rank(model, query, top_n)
        results = [{"destination": d, "score": s if math.isfinite(s) else None}
                   for d, s in ranked]
        out = {"cup_id": cup, "used_fallback": fallback, "results": results,
               "snapshot": snap.tag}
        if ignored:
            out["ignored"] = sorted(ignored)
        return 200, out


class _Handler(BaseHTTPRequestHandler):
    service: RankingService
    server_version = "cuprank"
    sys_version = ""
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, payload: dict):
        body = _dumps(payload)
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> bytes | None:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            self._send(413, {"error": "request body too large"})
            return None
        return self.rfile.read(length) if length else b""

    def do_GET(self):
        if self.path == "/health":
            self._send(*self.service.health())
        elif self.path == "/profiles":
            self._send(*self.service.profiles())
        else:
            self._send(404, {"error": f"no route {self.path}"})

    def do_POST(self):
        body = self._body()
        if body is None:
            return
        if self.path == "/rank":
            self._send(*self.service.rank(body))
        elif self.path == "/admin/reload":
            self._send(*self.service.reload(body))
        else:
            self._send(404, {"error": f"no route {self.path}"})


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 1024


def make_server(service: RankingService, host: str = "127.0.0.1", port: int = 8080):
    handler = type("Handler", (_Handler,), {"service": service})
    return _Server((host, port), handler)


def parse_listen(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    return host or "127.0.0.1", int(port)

