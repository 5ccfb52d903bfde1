"""Class-session attendance: duplicate-free check-in, CSV export, and the
raw serial-log style local fallback (which deliberately never dedupes)."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import TextIO

from .model import CardRegistry, CardUid, rfc3339


class UnknownSession(KeyError):
    pass


class DuplicateSession(ValueError):
    pass


@dataclass
class Session:
    session_id: str
    course: str
    device_id: str
    opened_at: datetime
    closed_at: datetime | None = None

    @property
    def is_open(self) -> bool:
        return self.closed_at is None


@dataclass(frozen=True, slots=True)
class AttendanceRecord:
    session_id: str
    uid: CardUid
    holder_name: str
    ts: datetime


class TapStatus(Enum):
    ACCEPTED = "accepted"
    DUPLICATE = "duplicate"
    UNKNOWN_CARD = "unknown_card"
    SESSION_CLOSED = "session_closed"


@dataclass(frozen=True, slots=True)
class TapResult:
    status: TapStatus
    record: AttendanceRecord | None = None
    holder_name: str = ""


class AttendanceLedger:
    """All sessions and accepted check-ins; at most one per card per session."""

    def __init__(self) -> None:
        self.sessions: dict[str, Session] = {}
        self._records: list[AttendanceRecord] = []
        self._seen: set[tuple[str, CardUid]] = set()

    def open_session(self, session_id: str, course: str, device_id: str,
                     now: datetime) -> Session:
        if session_id in self.sessions:
            raise DuplicateSession(session_id)
        session = Session(session_id, course, device_id, opened_at=now)
        self.sessions[session_id] = session
        return session

    def close_session(self, session_id: str, now: datetime) -> Session:
        session = self.session(session_id)
        if session.closed_at is None:
            session.closed_at = now
        return session

    def session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(session_id) from None

    def evaluate_tap(self, session_id: str, uid: CardUid,
                     registry: CardRegistry, now: datetime) -> TapResult:
        """Decide a tap's outcome without touching the ledger.

        An Accepted result carries the record that record_tap would add;
        the split lets an event-sourced caller journal first, then apply.
        An unknown session raises; callers decide that policy.
        """
        session = self.session(session_id)
        if not session.is_open:
            return TapResult(TapStatus.SESSION_CLOSED)
        rec = registry.active(uid)
        if rec is None:
            return TapResult(TapStatus.UNKNOWN_CARD)
        if (session_id, uid) in self._seen:
            return TapResult(TapStatus.DUPLICATE, holder_name=rec.holder_name)
        record = AttendanceRecord(session_id, uid, rec.holder_name, now)
        return TapResult(TapStatus.ACCEPTED, record=record,
                         holder_name=rec.holder_name)

    def record_tap(self, session_id: str, uid: CardUid,
                   registry: CardRegistry, now: datetime) -> TapResult:
        """Accept the first tap of an active registered card per open session.

        Everything else is a status, not a fault, and leaves the ledger
        untouched.
        """
        result = self.evaluate_tap(session_id, uid, registry, now)
        if result.status is TapStatus.ACCEPTED:
            self.apply_accepted(result.record)
        return result

    def apply_accepted(self, record: AttendanceRecord) -> None:
        """Mutation primitive shared with event-log replay."""
        self._seen.add((record.session_id, record.uid))
        self._records.append(record)

    def records_for(self, session_id: str) -> list[AttendanceRecord]:
        self.session(session_id)
        return [r for r in self._records if r.session_id == session_id]

    def all_records(self) -> list[AttendanceRecord]:
        return list(self._records)

    def export_csv(self, session_id: str) -> bytes:
        """UTF-8, LF-terminated rows sorted by (timestamp, uid).

        Names containing a comma or double quote are quoted, internal
        quotes doubled; nothing else is ever quoted.
        """
        rows = sorted(self.records_for(session_id),
                      key=lambda r: (r.ts, r.uid))
        lines = ["uid,name,timestamp"]
        for r in rows:
            lines.append(f"{r.uid},{_csv_field(r.holder_name)},{rfc3339(r.ts)}")
        return ("\n".join(lines) + "\n").encode("utf-8")


def _csv_field(value: str) -> str:
    if '"' in value or "," in value or "\n" in value:
        return '"' + value.replace('"', '""') + '"'
    return value


def record_local(log_sink: TextIO, uid: CardUid, registry: CardRegistry,
                 now: datetime) -> str:
    """Append one line to the device-local fallback log and return it.

    Mirrors a raw serial-monitor capture: no dedupe, unknown cards are
    logged as UNKNOWN rather than rejected.
    """
    rec = registry.active(uid)
    name = rec.holder_name if rec is not None else "UNKNOWN"
    line = f"{rfc3339(now)} {uid} {name}\n"
    log_sink.write(line)
    return line
