"""HTTP admin API and the device wire port, tested over real sockets."""

from __future__ import annotations

import socket
import threading
import time

import httpx
import pytest

from campus_pass.server import ControlServer
from campus_pass.wire import (
    AttendanceReply,
    AttendanceTap,
    BalanceReply,
    CardTap,
    ChargeRequest,
    Command,
    FrameCodec,
    Heartbeat,
    Hello,
    encode_frame,
)
from campus_pass.world import World

ADMIN = {"X-Admin-Token": "campus-admin"}


@pytest.fixture
def server(world: World):
    srv = ControlServer(world, http_port=0, wire_port=0)
    srv.start()
    yield srv
    srv.stop()


@pytest.fixture
def client(server: ControlServer):
    base = f"http://127.0.0.1:{server.http_port}"
    with httpx.Client(base_url=base, headers=ADMIN, timeout=5.0) as c:
        yield c


class WireClient:
    """Tiny line client for the device port."""

    def __init__(self, server: ControlServer):
        self.sock = socket.create_connection(
            ("127.0.0.1", server.wire_port), timeout=5.0)
        self.codec = FrameCodec()

    def send(self, msg) -> None:
        self.sock.sendall(encode_frame(msg))

    def recv_messages(self, n: int = 1, timeout: float = 5.0) -> list:
        got: list = []
        deadline = time.monotonic() + timeout
        while len(got) < n and time.monotonic() < deadline:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                break
            if not chunk:
                break
            msgs, _ = self.codec.feed(chunk)
            got += msgs
        return got

    def closed_by_peer(self, timeout: float = 5.0) -> bool:
        self.sock.settimeout(timeout)
        try:
            return self.sock.recv(4096) == b""
        except socket.timeout:
            return False

    def close(self) -> None:
        self.sock.close()


def hello(server: ControlServer, device_id: str, kind: str = "door",
          token: str = "campus-device") -> WireClient:
    wc = WireClient(server)
    wc.send(Hello(device_id=device_id, kind=kind, token=token))
    return wc


# Cards over HTTP -----------------------------------------------------------

def test_card_lifecycle(client: httpx.Client):
    created = client.post("/cards", json={
        "uid": "0badcafe", "holder_name": "Kiran", "pin": "1234",
        "role": "student", "owner_phone": "+919876512345"})
    assert created.status_code == 201
    body = created.json()
    assert body["uid"] == "0BADCAFE"
    assert body["status"] == "active"
    assert "pin" not in body and "pin_digest" not in body

    listed = client.get("/cards")
    assert listed.status_code == 200
    uids = {c["uid"] for c in listed.json()["cards"]}
    assert "0BADCAFE" in uids and "9ABC1234" in uids

    gone = client.delete("/cards/0BADCAFE")
    assert gone.status_code == 200
    assert gone.json()["status"] == "revoked"


def test_card_conflicts_and_validation(client: httpx.Client):
    assert client.post("/cards", json={
        "uid": "9ABC1234", "holder_name": "X", "pin": "1234",
        "role": "student"}).status_code == 409
    assert client.post("/cards", json={
        "uid": "nothex!", "holder_name": "X", "pin": "1234",
        "role": "student"}).status_code == 422
    assert client.post("/cards", json={
        "uid": "0BADCAFE", "holder_name": "X", "pin": "12",
        "role": "student"}).status_code == 422
    assert client.post("/cards", json={"uid": "0BADCAFE"}).status_code == 422
    assert client.post("/cards", content=b"{not json").status_code == 422
    assert client.delete("/cards/00000000").status_code == 404


def test_reregister_after_revoke_via_http(client: httpx.Client):
    client.delete("/cards/9ABC1234")
    again = client.post("/cards", json={
        "uid": "9ABC1234", "holder_name": "Shravan", "pin": "9876",
        "role": "student"})
    assert again.status_code == 201


def test_admin_token_required(server: ControlServer):
    base = f"http://127.0.0.1:{server.http_port}"
    with httpx.Client(base_url=base, timeout=5.0) as bare:
        assert bare.get("/cards").status_code == 403
        assert bare.get(
            "/cards", headers={"X-Admin-Token": "wrong"}).status_code == 403
        # Preflight is exempt so browsers can discover CORS policy.
        preflight = bare.options("/cards")
        assert preflight.status_code == 204
        assert preflight.headers["Access-Control-Allow-Origin"] == "*"
        allow_headers = preflight.headers["Access-Control-Allow-Headers"]
        assert "X-Admin-Token" in allow_headers


def test_cors_header_on_normal_responses(client: httpx.Client):
    response = client.get("/cards")
    assert response.headers["Access-Control-Allow-Origin"] == "*"


def test_unknown_route_404(client: httpx.Client):
    assert client.get("/teapot").status_code == 404


# Sessions and attendance ---------------------------------------------------

def test_session_lifecycle_and_csv(client: httpx.Client, server):
    opened = client.post("/sessions", json={
        "session_id": "S1", "course": "CS101", "device_id": "reader-1"})
    assert opened.status_code == 201
    assert client.post("/sessions", json={
        "session_id": "S1", "course": "CS101",
        "device_id": "reader-1"}).status_code == 409
    assert client.post("/sessions", json={
        "course": "CS101", "device_id": "reader-1"}).status_code == 422

    wc = hello(server, "reader-1", kind="attendance")
    assert wc.recv_messages(1) == [Command(name="ack", reason="hello")]
    wc.send(AttendanceTap(device_id="reader-1", session_id="S1",
                          uid="9ABC1234", ts="2024-01-01T09:00:00Z"))
    assert wc.recv_messages(1) == [
        AttendanceReply(status="accepted", holder_name="Shravan")]
    wc.close()

    csv_response = client.get("/sessions/S1/attendance.csv")
    assert csv_response.status_code == 200
    assert csv_response.headers["content-type"].startswith("text/csv")
    lines = csv_response.text.strip().split("\n")
    assert lines[0] == "uid,name,timestamp"
    assert lines[1].startswith("9ABC1234,Shravan,")

    closed = client.post("/sessions/S1/close")
    assert closed.status_code == 200
    assert client.post("/sessions/S1/close").status_code == 200  # idempotent
    assert client.get("/sessions/none/attendance.csv").status_code == 404


# Accounts ------------------------------------------------------------------

def test_account_topup_and_lookup(client: httpx.Client):
    assert client.get("/accounts/9ABC1234").json()["balance_minor"] == 0
    ok = client.post("/accounts/9ABC1234/topup", json={
        "amount_minor": 2500, "vendor_uid": "DEADBEEF"})
    assert ok.status_code == 200
    assert ok.json()["balance_minor"] == 2500
    assert client.get("/accounts/00000000").status_code == 404
    forbidden = client.post("/accounts/9ABC1234/topup", json={
        "amount_minor": 100, "vendor_uid": "11112222"})
    assert forbidden.status_code == 403
    missing = client.post("/accounts/00000000/topup", json={
        "amount_minor": 100, "vendor_uid": "DEADBEEF"})
    assert missing.status_code == 404
    assert client.post("/accounts/9ABC1234/topup", json={
        "amount_minor": -5, "vendor_uid": "DEADBEEF"}).status_code == 422


# Doors ---------------------------------------------------------------------

def test_door_commands_reach_the_device(client: httpx.Client, server):
    assert client.post("/doors/door-101/shutdown").status_code == 404
    wc = hello(server, "door-101", kind="door")
    assert wc.recv_messages(1) == [Command(name="ack", reason="hello")]
    assert client.post("/doors/door-101/shutdown").status_code == 200
    assert wc.recv_messages(1) == [Command(name="shutdown")]
    assert client.post("/doors/door-101/clear").status_code == 200
    assert wc.recv_messages(1) == [Command(name="clear")]
    wc.close()


def test_door_command_rejects_non_door_device(client, server):
    wc = hello(server, "reader-1", kind="attendance")
    wc.recv_messages(1)
    assert client.post("/doors/reader-1/shutdown").status_code == 404
    wc.close()


# Events --------------------------------------------------------------------

def test_events_endpoint_pagination(client: httpx.Client, world: World):
    total = world.store.last_seq
    everything = client.get("/events").json()
    assert [r["seq"] for r in everything] == list(range(1, total + 1))
    tail = client.get("/events", params={"since": total - 1}).json()
    assert [r["seq"] for r in tail] == [total]
    page = client.get("/events", params={"since": 0, "limit": 2}).json()
    assert [r["seq"] for r in page] == [1, 2]


def test_event_stream_backfills_then_follows(client, server, world: World):
    world.open_session("S9", "C", "reader-1")
    seen: list[dict] = []
    ready = threading.Event()

    def consume():
        with client.stream("GET", "/events/stream",
                           params={"since": 0}) as response:
            assert response.headers["content-type"].startswith(
                "application/x-ndjson")
            for line in response.iter_lines():
                if not line:
                    continue
                import json as _json
                seen.append(_json.loads(line))
                if seen[-1]["kind"] == "session_opened":
                    ready.set()
                if seen[-1]["kind"] == "card_revoked":
                    return

    thread = threading.Thread(target=consume, daemon=True)
    thread.start()
    assert ready.wait(5.0), "stream never delivered the backlog"
    world.revoke_card("11112222")  # a live event after subscription
    thread.join(5.0)
    assert not thread.is_alive()
    assert [r["seq"] for r in seen] == list(range(1, len(seen) + 1))
    assert seen[-1]["kind"] == "card_revoked"


def test_event_stream_since_omitted_starts_now(client, server, world: World):
    got: list = []
    started = threading.Event()

    def consume():
        with client.stream("GET", "/events/stream") as response:
            started.set()
            for line in response.iter_lines():
                if line:
                    import json as _json
                    got.append(_json.loads(line))
                    return

    thread = threading.Thread(target=consume, daemon=True)
    thread.start()
    started.wait(5.0)
    time.sleep(0.3)  # let the handler finish subscribing
    world.open_session("S10", "C", "reader-1")
    thread.join(5.0)
    assert not thread.is_alive()
    assert len(got) == 1 and got[0]["kind"] == "session_opened"


# Wire port -----------------------------------------------------------------

def test_wire_hello_ack_and_journal(server, world: World):
    wc = hello(server, "door-7")
    assert wc.recv_messages(1) == [Command(name="ack", reason="hello")]
    assert world.devices.get("door-7") == "door"
    wc.close()
    for _ in range(50):
        if "door-7" not in world.devices:
            break
        time.sleep(0.05)
    kinds = [r.kind for r in world.store.records()]
    assert "device_connected" in kinds and "device_disconnected" in kinds


def test_wire_bad_token_closes_silently(server, world: World):
    wc = hello(server, "door-7", token="wrong")
    assert wc.closed_by_peer()
    last = [r for r in world.store.records() if r.kind == "protocol_error"]
    assert last and last[-1].data["kind"] == "bad_token"
    assert "door-7" not in world.devices


def test_wire_requires_hello_first(server, world: World):
    wc = WireClient(server)
    wc.send(Heartbeat(ts="2024-01-01T00:00:00Z"))
    assert wc.closed_by_peer()
    errors = [r for r in world.store.records() if r.kind == "protocol_error"]
    assert errors


def test_wire_garbage_line_drops_connection(server, world: World):
    wc = hello(server, "door-7")
    wc.recv_messages(1)
    wc.sock.sendall(b"this is not json\n")
    assert wc.closed_by_peer()
    errors = [r for r in world.store.records() if r.kind == "protocol_error"]
    assert errors


def test_wire_card_tap_and_charge_round_trip(client, server, world: World):
    client.post("/accounts/9ABC1234/topup",
                json={"amount_minor": 3000, "vendor_uid": "DEADBEEF"})
    wc = hello(server, "pos-1", kind="pos")
    wc.recv_messages(1)
    wc.send(CardTap(device_id="pos-1", uid="9ABC1234",
                    ts="2024-01-01T00:00:00Z"))
    wc.send(ChargeRequest(device_id="pos-1", uid="9ABC1234", pin="1234",
                          amount_minor=1250, ts="2024-01-01T00:00:01Z"))
    assert wc.recv_messages(1) == [
        BalanceReply(uid="9ABC1234", balance_minor=1750)]
    wc.close()
    kinds = [r.kind for r in world.store.records()]
    assert "card_tap" in kinds and "charge" in kinds
