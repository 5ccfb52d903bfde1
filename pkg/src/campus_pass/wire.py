"""Device-to-server wire protocol: framing and the message catalog.

One message per line. A line is a canonical JSON object (keys sorted,
compact separators, UTF-8) terminated by exactly one LF; lines are capped
at 64 KiB. Every message carries `v` (always 1) and `type`. Unknown
fields are ignored on receipt; an unknown type is a protocol error.

Catalog (device -> server unless noted):

    hello            device_id, kind(door|attendance|pos), token
    heartbeat        ts
    card_tap         device_id, uid, ts
    door_event       device_id, kind, data, ts
    attendance_tap   device_id, session_id, uid, ts
    balance_inquiry  device_id, uid, pin, ts
    charge_request   device_id, uid, pin, amount_minor, ts
    command          (server->device) name(shutdown|clear|ack|deny), reason
    balance_reply    (server->device) uid, balance_minor
    attendance_reply (server->device) status(accepted|duplicate|unknown),
                     holder_name

Timestamps travel as RFC 3339 UTC strings and are kept as strings here so
that decode(encode(m)) == m is plain equality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import Any, Callable, ClassVar

from .model import canonical_json, is_canonical_uid, parse_rfc3339

MAX_LINE = 65536

PROTOCOL_VERSION = 1

DEVICE_KINDS = ("door", "attendance", "pos")
COMMAND_NAMES = ("shutdown", "clear", "ack", "deny")
ATTENDANCE_STATUSES = ("accepted", "duplicate", "unknown")


class UnencodableMessage(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class WireError:
    """One dropped line. `at_message_index` counts messages decoded before
    it, so interleaving survives chunked delivery."""

    kind: str  # line_too_long | malformed_json | unknown_type | invalid_message
    detail: str
    at_message_index: int


# Field validators ----------------------------------------------------------

def _nonempty_str(v: object) -> bool:
    return isinstance(v, str) and len(v) > 0


def _any_str(v: object) -> bool:
    return isinstance(v, str)


def _ts(v: object) -> bool:
    if not isinstance(v, str):
        return False
    try:
        parse_rfc3339(v)
        return True
    except ValueError:
        return False


def _uid(v: object) -> bool:
    return is_canonical_uid(v)


def _pin(v: object) -> bool:
    return isinstance(v, str) and v.isascii() and v.isdigit()


def _pos_int(v: object) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v > 0


def _nonneg_int(v: object) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _data_dict(v: object) -> bool:
    return isinstance(v, dict) and all(isinstance(k, str) for k in v)


def _one_of(options: tuple[str, ...]) -> Callable[[object], bool]:
    return lambda v: isinstance(v, str) and v in options


# Catalog -------------------------------------------------------------------

class WireMessage:
    """Base for catalog messages; concrete classes are flat dataclasses."""

    TYPE: ClassVar[str]
    CHECKS: ClassVar[dict[str, Callable[[object], bool]]]

    def to_obj(self) -> dict[str, Any]:
        obj = {f.name: getattr(self, f.name) for f in fields(self)}
        obj["type"] = self.TYPE
        obj["v"] = PROTOCOL_VERSION
        return obj

    def validate(self) -> None:
        for name, check in self.CHECKS.items():
            if not check(getattr(self, name)):
                raise UnencodableMessage(
                    f"{self.TYPE}.{name}={getattr(self, name)!r}")


@dataclass(frozen=True, slots=True)
class Hello(WireMessage):
    device_id: str
    kind: str
    token: str

    TYPE = "hello"
    CHECKS = {"device_id": _nonempty_str, "kind": _one_of(DEVICE_KINDS),
              "token": _any_str}


@dataclass(frozen=True, slots=True)
class Heartbeat(WireMessage):
    ts: str

    TYPE = "heartbeat"
    CHECKS = {"ts": _ts}


@dataclass(frozen=True, slots=True)
class CardTap(WireMessage):
    device_id: str
    uid: str
    ts: str

    TYPE = "card_tap"
    CHECKS = {"device_id": _nonempty_str, "uid": _uid, "ts": _ts}


@dataclass(frozen=True)
class DoorEvent(WireMessage):
    device_id: str
    kind: str
    data: dict
    ts: str

    TYPE = "door_event"
    CHECKS = {"device_id": _nonempty_str, "kind": _nonempty_str,
              "data": _data_dict, "ts": _ts}


@dataclass(frozen=True, slots=True)
class AttendanceTap(WireMessage):
    device_id: str
    session_id: str
    uid: str
    ts: str

    TYPE = "attendance_tap"
    CHECKS = {"device_id": _nonempty_str, "session_id": _nonempty_str,
              "uid": _uid, "ts": _ts}


@dataclass(frozen=True, slots=True)
class BalanceInquiry(WireMessage):
    device_id: str
    uid: str
    pin: str
    ts: str

    TYPE = "balance_inquiry"
    CHECKS = {"device_id": _nonempty_str, "uid": _uid, "pin": _pin, "ts": _ts}


@dataclass(frozen=True, slots=True)
class ChargeRequest(WireMessage):
    device_id: str
    uid: str
    pin: str
    amount_minor: int
    ts: str

    TYPE = "charge_request"
    CHECKS = {"device_id": _nonempty_str, "uid": _uid, "pin": _pin,
              "amount_minor": _pos_int, "ts": _ts}


@dataclass(frozen=True, slots=True)
class Command(WireMessage):
    name: str
    reason: str = ""

    TYPE = "command"
    CHECKS = {"name": _one_of(COMMAND_NAMES), "reason": _any_str}


@dataclass(frozen=True, slots=True)
class BalanceReply(WireMessage):
    uid: str
    balance_minor: int

    TYPE = "balance_reply"
    CHECKS = {"uid": _uid, "balance_minor": _nonneg_int}


@dataclass(frozen=True, slots=True)
class AttendanceReply(WireMessage):
    status: str
    holder_name: str

    TYPE = "attendance_reply"
    CHECKS = {"status": _one_of(ATTENDANCE_STATUSES),
              "holder_name": _any_str}


CATALOG: dict[str, type[WireMessage]] = {
    cls.TYPE: cls
    for cls in (Hello, Heartbeat, CardTap, DoorEvent, AttendanceTap,
                BalanceInquiry, ChargeRequest, Command, BalanceReply,
                AttendanceReply)
}


# Framing -------------------------------------------------------------------

def encode_frame(msg: WireMessage) -> bytes:
    """One LF-terminated canonical JSON line for a well-formed message."""
    if type(msg) not in CATALOG.values():
        raise UnencodableMessage(f"not a catalog message: {msg!r}")
    msg.validate()
    return canonical_json(msg.to_obj()) + b"\n"


class _LineError(Exception):
    def __init__(self, kind: str, detail: str) -> None:
        self.kind = kind
        self.detail = detail


def _decode_line(line: bytes) -> WireMessage:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _LineError("malformed_json", str(exc)) from exc
    if not isinstance(obj, dict):
        raise _LineError("malformed_json", "not a JSON object")
    if obj.get("v") != PROTOCOL_VERSION:
        raise _LineError("invalid_message", f"bad version {obj.get('v')!r}")
    mtype = obj.get("type")
    cls = CATALOG.get(mtype) if isinstance(mtype, str) else None
    if cls is None:
        raise _LineError("unknown_type", repr(mtype))
    kwargs = {}
    for f in fields(cls):
        if f.name not in obj:
            raise _LineError("invalid_message", f"{mtype}: missing {f.name}")
        kwargs[f.name] = obj[f.name]
    msg = cls(**kwargs)  # unknown fields in obj are ignored
    try:
        msg.validate()
    except UnencodableMessage as exc:
        raise _LineError("invalid_message", str(exc)) from exc
    return msg


def decode_frame(line: bytes) -> WireMessage:
    """Decode one complete line (with or without its trailing LF)."""
    return _decode_line(line.rstrip(b"\n"))


class FrameCodec:
    """Incremental decoder over arbitrary chunk boundaries.

    Completed messages come out in order; a partial trailing line stays
    buffered. Bad lines are dropped with an error record and decoding
    continues. The buffer never holds more than MAX_LINE carried-over
    octets: an overlong line flips the codec into discard mode until its
    terminating LF arrives.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self._discarding = False
        self._messages_out = 0

    def feed(self, chunk: bytes) -> tuple[list[WireMessage], list[WireError]]:
        messages: list[WireMessage] = []
        errors: list[WireError] = []
        self._buf += chunk
        while True:
            idx = self._buf.find(b"\n")
            if idx < 0:
                if len(self._buf) > MAX_LINE:
                    if not self._discarding:
                        errors.append(self._error(
                            "line_too_long", f"line exceeds {MAX_LINE} octets"))
                        self._discarding = True
                    self._buf.clear()
                break
            line = bytes(self._buf[:idx])
            del self._buf[:idx + 1]
            if self._discarding:
                self._discarding = False  # the overlong line just ended
                continue
            if len(line) > MAX_LINE:
                errors.append(self._error(
                    "line_too_long", f"line exceeds {MAX_LINE} octets"))
                continue
            if not line:
                continue
            try:
                msg = _decode_line(line)
            except _LineError as exc:
                errors.append(self._error(exc.kind, exc.detail))
                continue
            messages.append(msg)
            self._messages_out += 1
        return messages, errors

    def _error(self, kind: str, detail: str) -> WireError:
        return WireError(kind=kind, detail=detail,
                         at_message_index=self._messages_out)

    @property
    def buffered(self) -> int:
        return len(self._buf)
