"""Network front ends for a World: admin HTTP API and the device wire port.

Everything stateful lives in the World; these classes only translate
HTTP requests and wire frames into its calls. All responses are
canonical JSON. The event stream endpoint pushes NDJSON lines and
closes when the client goes away.
"""

from __future__ import annotations

import json
import queue
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from socketserver import StreamRequestHandler, ThreadingTCPServer
from urllib.parse import parse_qs, urlsplit

from .attendance import DuplicateSession, UnknownSession
from .events import record_to_line
from .model import DuplicateUid, canonical_json, rfc3339
from .payments import PayStatus
from .wire import Command, FrameCodec, Hello, encode_frame
from .world import BadToken, UnknownDoor, World


class _HttpError(Exception):
    def __init__(self, status: int, message: str) -> None:
        super().__init__(message)
        self.status = status
        self.message = message


_ROUTES = [
    ("POST", re.compile(r"/cards\Z"), "create_card"),
    ("GET", re.compile(r"/cards\Z"), "list_cards"),
    ("DELETE", re.compile(r"/cards/([0-9A-Fa-f]{8})\Z"), "revoke_card"),
    ("POST", re.compile(r"/sessions\Z"), "create_session"),
    ("POST", re.compile(r"/sessions/([^/]+)/close\Z"), "close_session"),
    ("GET", re.compile(r"/sessions/([^/]+)/attendance\.csv\Z"),
     "attendance_csv"),
    ("GET", re.compile(r"/accounts/([0-9A-Fa-f]{8})\Z"), "get_account"),
    ("POST", re.compile(r"/accounts/([0-9A-Fa-f]{8})/topup\Z"), "topup"),
    ("POST", re.compile(r"/doors/([^/]+)/shutdown\Z"), "door_shutdown"),
    ("POST", re.compile(r"/doors/([^/]+)/clear\Z"), "door_clear"),
    ("GET", re.compile(r"/events\Z"), "get_events"),
    ("GET", re.compile(r"/events/stream\Z"), "stream_events"),
]


class _HttpHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "campus-pass"

    # -- plumbing ----------------------------------------------------------

    @property
    def world(self) -> World:
        return self.server.world  # type: ignore[attr-defined]

    def log_message(self, fmt: str, *args) -> None:
        pass  # keep stdout for the CLI's own output

    def _cors(self) -> None:
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods",
                         "GET, POST, DELETE, OPTIONS")
        self.send_header("Access-Control-Allow-Headers",
                         "Content-Type, X-Admin-Token")

    def _reply(self, status: int, obj: object, *,
               content_type: str = "application/json") -> None:
        body = obj if isinstance(obj, bytes) else canonical_json(obj)
        self.send_response(status)
        self._cors()
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            raise _HttpError(422, "request body required")
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            raise _HttpError(422, "body is not valid JSON") from None
        if not isinstance(obj, dict):
            raise _HttpError(422, "body must be a JSON object")
        return obj

    def _require(self, body: dict, key: str, cls: type = str):
        value = body.get(key)
        if not isinstance(value, cls) or (cls is str and not value):
            raise _HttpError(422, f"missing or invalid field {key!r}")
        return value

    def _dispatch(self, method: str) -> None:
        path, query = urlsplit(self.path).path, urlsplit(self.path).query
        try:
            token = self.headers.get("X-Admin-Token", "")
            if token != self.world.admin_token:
                raise _HttpError(403, "bad admin token")
            for verb, pattern, name in _ROUTES:
                if verb != method:
                    continue
                m = pattern.match(path)
                if m:
                    getattr(self, "_h_" + name)(*m.groups(),
                                                query=parse_qs(query))
                    return
            raise _HttpError(404, f"no route for {method} {path}")
        except _HttpError as err:
            self._reply(err.status, {"error": err.message})
        except DuplicateUid as err:
            self._reply(409, {"error": f"uid already registered: {err}"})
        except DuplicateSession as err:
            self._reply(409, {"error": f"session already exists: {err}"})
        except (UnknownSession, UnknownDoor, KeyError) as err:
            self._reply(404, {"error": f"not found: {err}"})
        except ValueError as err:
            self._reply(422, {"error": str(err)})
        except BrokenPipeError:
            pass

    def do_GET(self) -> None:  # noqa: N802 (stdlib naming)
        self._dispatch("GET")

    def do_POST(self) -> None:  # noqa: N802
        self._dispatch("POST")

    def do_DELETE(self) -> None:  # noqa: N802
        self._dispatch("DELETE")

    def do_OPTIONS(self) -> None:  # noqa: N802
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    # -- route handlers ----------------------------------------------------

    @staticmethod
    def _card_obj(card) -> dict:
        return {
            "uid": card.uid,
            "holder_name": card.holder_name,
            "role": card.role.value,
            "status": card.status.value,
            "owner_phone": card.owner_phone or "",
            "registered_at": rfc3339(card.registered_at),
        }

    def _h_create_card(self, query: dict) -> None:
        body = self._json_body()
        card = self.world.register_card(
            self._require(body, "uid"),
            self._require(body, "holder_name"),
            self._require(body, "pin"),
            self._require(body, "role"),
            body.get("owner_phone") or None)
        self._reply(201, self._card_obj(card))

    def _h_list_cards(self, query: dict) -> None:
        self._reply(200, {"cards": [self._card_obj(c)
                                    for c in self.world.list_cards()]})

    def _h_revoke_card(self, uid: str, query: dict) -> None:
        card = self.world.revoke_card(uid)
        self._reply(200, self._card_obj(card))

    def _h_create_session(self, query: dict) -> None:
        body = self._json_body()
        session_id = self._require(body, "session_id")
        self.world.open_session(session_id,
                                self._require(body, "course"),
                                self._require(body, "device_id"))
        self._reply(201, {"session_id": session_id, "status": "open"})

    def _h_close_session(self, session_id: str, query: dict) -> None:
        self.world.close_session(session_id)
        self._reply(200, {"session_id": session_id, "status": "closed"})

    def _h_attendance_csv(self, session_id: str, query: dict) -> None:
        body = self.world.export_attendance_csv(session_id)
        self._reply(200, body, content_type="text/csv; charset=utf-8")

    def _h_get_account(self, uid: str, query: dict) -> None:
        acct = self.world.get_account(uid.upper())
        self._reply(200, {"uid": acct.uid,
                          "balance_minor": acct.balance_minor,
                          "updated_at": rfc3339(acct.updated_at)})

    def _h_topup(self, uid: str, query: dict) -> None:
        body = self._json_body()
        amount = self._require(body, "amount_minor", int)
        result = self.world.topup(uid, amount,
                                  self._require(body, "vendor_uid"))
        if result.status is PayStatus.FORBIDDEN:
            raise _HttpError(403, "vendor role required")
        if result.status is PayStatus.UNKNOWN_CARD:
            raise _HttpError(404, f"no account for {uid}")
        self._reply(200, {"uid": uid.upper(),
                          "balance_minor": result.balance_minor})

    def _h_door_shutdown(self, door_id: str, query: dict) -> None:
        self.world.command_door(door_id, "shutdown", via="http")
        self._reply(200, {"door_id": door_id, "command": "shutdown"})

    def _h_door_clear(self, door_id: str, query: dict) -> None:
        self.world.command_door(door_id, "clear", via="http")
        self._reply(200, {"door_id": door_id, "command": "clear"})

    @staticmethod
    def _int_param(query: dict, key: str) -> int | None:
        values = query.get(key)
        if not values:
            return None
        try:
            return int(values[0])
        except ValueError:
            raise _HttpError(422, f"{key} must be an integer") from None

    def _h_get_events(self, query: dict) -> None:
        since = self._int_param(query, "since") or 0
        limit = self._int_param(query, "limit")
        records = self.world.store.records(since=since, limit=limit)
        self._reply(200, [r.to_obj() for r in records])

    def _h_stream_events(self, query: dict) -> None:
        since = self._int_param(query, "since")
        backlog, feed = self.world.store.subscribe_with_backlog(since)
        try:
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Cache-Control", "no-store")
            self.send_header("Connection", "close")
            self.end_headers()
            self.close_connection = True
            for rec in backlog:
                self.wfile.write(record_to_line(rec))
            self.wfile.flush()
            while not self.server.stopping.is_set():  # type: ignore[attr-defined]
                try:
                    rec = feed.get(timeout=0.25)
                except queue.Empty:
                    continue
                self.wfile.write(record_to_line(rec))
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            self.world.store.unsubscribe(feed)


class _AdminHttpServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, world: World) -> None:
        super().__init__(addr, _HttpHandler)
        self.world = world
        self.stopping = threading.Event()


class _WireHandler(StreamRequestHandler):
    """One device connection: hello first, then framed messages."""

    def handle(self) -> None:
        world: World = self.server.world  # type: ignore[attr-defined]
        codec = FrameCodec()
        device_id: str | None = None
        write_lock = threading.Lock()

        def sink(msg) -> None:
            with write_lock:
                try:
                    self.wfile.write(encode_frame(msg))
                    self.wfile.flush()
                except OSError:
                    pass

        try:
            while not self.server.stopping.is_set():  # type: ignore[attr-defined]
                try:
                    chunk = self.request.recv(4096)
                except OSError:
                    break
                if not chunk:
                    break
                messages, errors = codec.feed(chunk)
                for msg in messages:
                    if device_id is None:
                        if not isinstance(msg, Hello):
                            world.protocol_error(None, "hello_expected",
                                                 f"got {msg.TYPE}")
                            return
                        try:
                            world.connect_device(msg.device_id, msg.kind,
                                                 msg.token, sink=sink)
                        except BadToken:
                            return
                        device_id = msg.device_id
                        sink(Command(name="ack", reason="hello"))
                        continue
                    for reply in world.handle_wire(msg):
                        sink(reply)
                if errors:
                    err = errors[0]
                    world.protocol_error(device_id, err.kind, err.detail)
                    return
        finally:
            if device_id is not None:
                world.disconnect_device(device_id)


class _WireServer(ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, world: World) -> None:
        super().__init__(addr, _WireHandler)
        self.world = world
        self.stopping = threading.Event()


class ControlServer:
    """Bundles the HTTP admin API and the device wire port around a World."""

    def __init__(self, world: World, host: str = "127.0.0.1",
                 http_port: int = 7400, wire_port: int = 7410) -> None:
        self.world = world
        self.http = _AdminHttpServer((host, http_port), world)
        self.wire = _WireServer((host, wire_port), world)
        self._threads: list[threading.Thread] = []

    @property
    def http_port(self) -> int:
        return self.http.server_address[1]

    @property
    def wire_port(self) -> int:
        return self.wire.server_address[1]

    def start(self) -> None:
        for srv in (self.http, self.wire):
            t = threading.Thread(target=srv.serve_forever,
                                 kwargs={"poll_interval": 0.1}, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self.http.stopping.set()
        self.wire.stopping.set()
        self.http.shutdown()
        self.wire.shutdown()
        self.http.server_close()
        self.wire.server_close()
        for t in self._threads:
            t.join(timeout=2)
        self._threads.clear()
