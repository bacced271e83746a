"""Interactive retrieval over HTTP.

A session holds one hidden target image from the test split and an
evolving slot bank.  Each submitted query is encoded, written into a slot
(greedy policy), and the whole corpus is re-ranked; the client sees the
top-K renderings and whether the target has entered them.  Sessions end
as "found" (target ranked within the top K) or "exhausted" (turn cap).

Endpoints (JSON unless noted):

    POST /api/session                 -> new session payload
    POST /api/session/{id}/query      -> {"text": ...} -> turn result
    GET  /api/session/{id}            -> full session state (for reloads)
    GET  /api/image/{id}.svg          -> SVG rendering of a corpus image

The service never trains: model parameters and the region index are
read-only after startup.  Session mutations are serialized per session;
the store evicts least-recently-used sessions beyond its capacity.
"""

from __future__ import annotations

import json
import re
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .model import Model
from .scenes import Scene, render_svg
from .simrank import RetrievalIndex, rank_corpus
from .statebank import StateSet, fixed_policy_slot, init_states, select_slot, update_slot
from .text import tokenize
from .evaluate import encode_query

DEFAULT_TOP_K = 5
DEFAULT_MAX_TURNS = 5
DEFAULT_CAPACITY = 256
ENV_PREFIX = "SLOTSEARCH_"


class UnknownSessionError(KeyError):
    pass


class SessionConflictError(RuntimeError):
    def __init__(self, status: str):
        super().__init__(f"session is {status}, not active")
        self.status = status


class InvalidQueryError(ValueError):
    pass


@dataclass
class Session:
    id: str
    target_id: int
    states: StateSet
    turn: int = 0
    status: str = "active"
    history: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class RetrievalService:
    """Session book-keeping plus retrieval; no HTTP here."""

    def __init__(self, model: Model, scenes: list[Scene], top_k: int = DEFAULT_TOP_K,
                 max_turns: int = DEFAULT_MAX_TURNS, capacity: int = DEFAULT_CAPACITY,
                 rng: np.random.Generator | None = None):
        if not scenes:
            raise ValueError("service needs a non-empty corpus")
        if top_k < 1 or max_turns < 1 or capacity < 1:
            raise ValueError("top_k, max_turns, and capacity must be >= 1")
        self.model = model
        self.scenes = {s.id: s for s in scenes}
        self.index = RetrievalIndex.from_scenes(scenes, model.img_w.data,
                                                model.img_b.data)
        self.top_k = top_k
        self.max_turns = max_turns
        self.capacity = capacity
        self._rng = rng if rng is not None else np.random.default_rng()
        self._sessions: OrderedDict[str, Session] = OrderedDict()
        self._store_lock = threading.Lock()
        self._svg_cache: dict[int, str] = {}
        self._target_ids = sorted(self.scenes)

    # -- rendering ---------------------------------------------------------

    def image_svg(self, image_id: int) -> str:
        if image_id not in self.scenes:
            raise KeyError(f"unknown image id {image_id}")
        svg = self._svg_cache.get(image_id)
        if svg is None:
            svg = render_svg(self.scenes[image_id])
            self._svg_cache[image_id] = svg
        return svg

    # -- session store -----------------------------------------------------

    def _remember(self, session: Session) -> None:
        with self._store_lock:
            self._sessions[session.id] = session
            self._sessions.move_to_end(session.id)
            while len(self._sessions) > self.capacity:
                self._sessions.popitem(last=False)

    def _lookup(self, session_id: str) -> Session:
        with self._store_lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise UnknownSessionError(session_id)
            self._sessions.move_to_end(session_id)
            return session

    def session_count(self) -> int:
        with self._store_lock:
            return len(self._sessions)

    # -- operations --------------------------------------------------------

    def create_session(self) -> dict:
        target = int(self._target_ids[self._rng.integers(len(self._target_ids))])
        session = Session(
            id=uuid.uuid4().hex,
            target_id=target,
            states=init_states(self.model.effective_slots, self.model.state_dim),
        )
        self._remember(session)
        return self._session_payload(session)

    def get_session(self, session_id: str) -> dict:
        return self._session_payload(self._lookup(session_id))

    def submit_query(self, session_id: str, text: str) -> dict:
        session = self._lookup(session_id)
        with session.lock:
            if session.status != "active":
                raise SessionConflictError(session.status)
            tokens = tokenize(text if isinstance(text, str) else "")
            if not tokens:
                raise InvalidQueryError("query has no usable words")
            ids = self.model.vocab.encode(tokens)
            q = encode_query(self.model, ids)
            if self.model.policy is not None:
                k, _ = select_slot(session.states, q, self.model.policy, "greedy")
            else:
                k = fixed_policy_slot(session.turn + 1, self.model.effective_slots)
            session.states = update_slot(session.states, k, q, self.model.fuse)
            session.turn += 1

            cfg = self.model.config
            ranking, target_rank = rank_corpus(
                session.states, self.index, session.target_id,
                cfg.sharpness, cfg.literal_inverse_n)
            results = [{
                "image_id": int(image_id),
                "svg": self.image_svg(int(image_id)),
                "score": float(score),
                "rank": position,
            } for position, (image_id, score) in enumerate(ranking[:self.top_k], 1)]

            if target_rank <= self.top_k:
                session.status = "found"
            elif session.turn >= self.max_turns:
                session.status = "exhausted"
            entry = {
                "turn": session.turn,
                "text": text,
                "results": results,
                "target_rank": target_rank,
                "status": session.status,
            }
            session.history.append(entry)
            return dict(entry)

    def _session_payload(self, session: Session) -> dict:
        # the target is exposed only as a rendering, never as an id
        return {
            "session_id": session.id,
            "target_svg": self.image_svg(session.target_id),
            "max_turns": self.max_turns,
            "top_k": self.top_k,
            "turn": session.turn,
            "status": session.status,
            "history": [dict(h) for h in session.history],
        }


# ---------------------------------------------------------------------------
# HTTP plumbing

_SESSION_ROUTE = re.compile(r"^/api/session/([0-9a-f]+)$")
_QUERY_ROUTE = re.compile(r"^/api/session/([0-9a-f]+)/query$")
_IMAGE_ROUTE = re.compile(r"^/api/image/(\d+)\.svg$")


class _Handler(BaseHTTPRequestHandler):
    service: RetrievalService | None = None

    # -- helpers -----------------------------------------------------------

    def _cors(self) -> None:
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _send(self, code: int, body: bytes, content_type: str) -> None:
        self.send_response(code)
        self._cors()
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, payload: dict) -> None:
        self._send(code, json.dumps(payload).encode(), "application/json")

    def _send_error_json(self, code: int, message: str, **extra) -> None:
        self._send_json(code, {"error": message, **extra})

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            raise InvalidQueryError("empty request body")
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InvalidQueryError(f"invalid JSON body: {exc}") from exc
        if not isinstance(doc, dict):
            raise InvalidQueryError("request body must be a JSON object")
        return doc

    def log_message(self, fmt, *args):  # quiet by default
        pass

    # -- verbs -------------------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        service = self.service
        if service is None:
            self._send_error_json(503, "service not ready")
            return
        match = _IMAGE_ROUTE.match(self.path)
        if match:
            try:
                svg = service.image_svg(int(match.group(1)))
            except KeyError:
                self._send_error_json(404, "unknown image")
                return
            self._send(200, svg.encode(), "image/svg+xml")
            return
        match = _SESSION_ROUTE.match(self.path)
        if match:
            try:
                payload = service.get_session(match.group(1))
            except UnknownSessionError:
                self._send_error_json(404, "unknown session")
                return
            self._send_json(200, payload)
            return
        self._send_error_json(404, "no such endpoint")

    def do_POST(self):
        service = self.service
        if service is None:
            self._send_error_json(503, "service not ready")
            return
        if self.path == "/api/session":
            self._send_json(200, service.create_session())
            return
        match = _QUERY_ROUTE.match(self.path)
        if match:
            try:
                doc = self._read_json()
                text = doc.get("text")
                if not isinstance(text, str):
                    raise InvalidQueryError('body must carry a string "text" field')
                payload = service.submit_query(match.group(1), text)
            except UnknownSessionError:
                self._send_error_json(404, "unknown session")
            except SessionConflictError as exc:
                self._send_error_json(409, str(exc), status=exc.status)
            except InvalidQueryError as exc:
                self._send_error_json(400, str(exc))
            else:
                self._send_json(200, payload)
            return
        self._send_error_json(404, "no such endpoint")


def make_server(service: RetrievalService, port: int,
                host: str = "127.0.0.1") -> ThreadingHTTPServer:
    """Bind a threading HTTP server to the service; port 0 picks a free one."""
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve(service: RetrievalService, port: int, host: str = "127.0.0.1",
          log=print) -> None:
    server = make_server(service, port, host)
    actual = server.server_address[1]
    if log:
        log(f"retrieval service on http://{host}:{actual} "
            f"(top_k={service.top_k}, max_turns={service.max_turns}, "
            f"corpus={len(service.scenes)} images)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
