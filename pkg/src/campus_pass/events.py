"""Append-only platform event log: the server's source of truth.

Each event is one canonical JSON line (the wire protocol's form). The
sequence is gapless from 1; replaying a log rebuilds server state. A
store may be purely in memory or mirrored to a file as it grows.
"""

from __future__ import annotations

import json
import threading
from datetime import datetime
from pathlib import Path
from queue import Queue

from .model import EventRecord, canonical_json


class CorruptLog(ValueError):
    """Seq gap or malformed line; startup must refuse such a log."""


def record_to_line(record: EventRecord) -> bytes:
    return canonical_json(record.to_obj()) + b"\n"


def parse_event_line(line: bytes, lineno: int | None = None) -> EventRecord:
    where = "" if lineno is None else f"line {lineno}: "
    try:
        obj = json.loads(line.decode("utf-8"))
        return EventRecord.from_obj(obj)
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptLog(f"{where}{exc}") from exc


def load_event_log(path: str | Path) -> list[EventRecord]:
    """Read and verify a log file; raises CorruptLog on any defect."""
    records: list[EventRecord] = []
    data = Path(path).read_bytes()
    for lineno, raw in enumerate(data.split(b"\n"), start=1):
        if not raw:
            continue
        rec = parse_event_line(raw, lineno)
        if rec.seq != len(records) + 1:
            raise CorruptLog(
                f"line {lineno}: seq {rec.seq}, expected {len(records) + 1}")
        records.append(rec)
    return records


class EventStore:
    """Ordered event sequence with optional file mirroring and fan-out.

    Subscribers receive every record appended after they join; each
    subscriber has its own queue so a slow one cannot lose events.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self._records: list[EventRecord] = []
        self._subscribers: list[Queue] = []
        self._lock = threading.Lock()
        self._file = None
        if path is not None:
            self._file = open(path, "ab")

    @property
    def last_seq(self) -> int:
        with self._lock:
            return len(self._records)

    def append(self, ts: datetime, source: str, kind: str,
               data: dict | None = None) -> EventRecord:
        with self._lock:
            record = EventRecord(seq=len(self._records) + 1, ts=ts,
                                 source=source, kind=kind, data=data or {})
            self._records.append(record)
            if self._file is not None:
                self._file.write(record_to_line(record))
                self._file.flush()
            for q in self._subscribers:
                q.put(record)
        return record

    def adopt(self, records: list[EventRecord]) -> None:
        """Seed the store with an already-verified replayed history."""
        with self._lock:
            if self._records:
                raise RuntimeError("store is not empty")
            self._records = list(records)

    def records(self, since: int = 0, limit: int | None = None) -> list[EventRecord]:
        """Events with seq > since, oldest first."""
        with self._lock:
            out = self._records[since:]
        if limit is not None:
            out = out[:limit]
        return out

    def subscribe(self) -> Queue:
        q: Queue = Queue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def subscribe_with_backlog(self, since: int | None) -> tuple[list[EventRecord], Queue]:
        """Atomically snapshot events past `since` and join the live feed.

        Nothing can fall between the snapshot and the subscription, so a
        consumer dedupes only on seq. `since=None` means "from now on".
        """
        q: Queue = Queue()
        with self._lock:
            backlog = [] if since is None else self._records[since:]
            self._subscribers.append(q)
        return list(backlog), q

    def unsubscribe(self, q: Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
