"""Attendance ledger: one accepted check-in per card per session, CSV
export, and the never-deduping local fallback log."""

from __future__ import annotations

import csv
import io
import random
from datetime import timedelta

import pytest

from campus_pass.attendance import (
    AttendanceLedger,
    DuplicateSession,
    TapStatus,
    UnknownSession,
    record_local,
)
from campus_pass.model import utc
from tests.conftest import CARDS, FIXTURES, build_registry

T0 = utc(2024, 1, 1, 9, 0, 0)


def open_ledger(session_id: str = "CS101-P1") -> AttendanceLedger:
    ledger = AttendanceLedger()
    ledger.open_session(session_id, "CS101", "reader-1", T0)
    return ledger


def test_first_tap_accepted_then_duplicate():
    ledger = open_ledger()
    reg = build_registry()
    first = ledger.record_tap("CS101-P1", "9ABC1234", reg, T0)
    assert first.status is TapStatus.ACCEPTED
    assert first.record.holder_name == "Shravan"
    again = ledger.record_tap("CS101-P1", "9ABC1234", reg,
                              T0 + timedelta(seconds=5))
    assert again.status is TapStatus.DUPLICATE
    assert len(ledger.records_for("CS101-P1")) == 1


def test_unknown_and_revoked_cards_rejected():
    ledger = open_ledger()
    reg = build_registry()
    assert ledger.record_tap("CS101-P1", "00000000", reg, T0).status \
        is TapStatus.UNKNOWN_CARD
    reg.revoke("9ABC1234")
    assert ledger.record_tap("CS101-P1", "9ABC1234", reg, T0).status \
        is TapStatus.UNKNOWN_CARD
    assert ledger.records_for("CS101-P1") == []


def test_closed_session_rejects_without_mutating():
    ledger = open_ledger()
    reg = build_registry()
    ledger.close_session("CS101-P1", T0 + timedelta(minutes=50))
    result = ledger.record_tap("CS101-P1", "9ABC1234", reg,
                               T0 + timedelta(minutes=51))
    assert result.status is TapStatus.SESSION_CLOSED
    assert ledger.records_for("CS101-P1") == []
    # Closing twice is idempotent and keeps the first closed_at.
    closed_at = ledger.session("CS101-P1").closed_at
    ledger.close_session("CS101-P1", T0 + timedelta(hours=2))
    assert ledger.session("CS101-P1").closed_at == closed_at


def test_unknown_session_raises():
    ledger = AttendanceLedger()
    with pytest.raises(UnknownSession):
        ledger.record_tap("nope", "9ABC1234", build_registry(), T0)
    with pytest.raises(UnknownSession):
        ledger.records_for("nope")


def test_duplicate_session_id_refused():
    ledger = open_ledger()
    with pytest.raises(DuplicateSession):
        ledger.open_session("CS101-P1", "CS102", "reader-2", T0)


def test_same_card_across_sessions_is_fresh():
    ledger = open_ledger("A")
    ledger.open_session("B", "CS102", "reader-2", T0)
    reg = build_registry()
    assert ledger.record_tap("A", "9ABC1234", reg, T0).status \
        is TapStatus.ACCEPTED
    assert ledger.record_tap("B", "9ABC1234", reg, T0).status \
        is TapStatus.ACCEPTED


def test_evaluate_does_not_mutate():
    ledger = open_ledger()
    reg = build_registry()
    result = ledger.evaluate_tap("CS101-P1", "9ABC1234", reg, T0)
    assert result.status is TapStatus.ACCEPTED
    # Nothing applied yet: evaluating again still says accepted.
    assert ledger.evaluate_tap("CS101-P1", "9ABC1234", reg, T0).status \
        is TapStatus.ACCEPTED
    ledger.apply_accepted(result.record)
    assert ledger.evaluate_tap("CS101-P1", "9ABC1234", reg, T0).status \
        is TapStatus.DUPLICATE


# Randomized dedupe property -------------------------------------------------

def test_accepted_count_is_exactly_one_per_pair():
    rng = random.Random(42)
    reg = build_registry()
    ledger = AttendanceLedger()
    sessions = ["S1", "S2", "S3"]
    for s in sessions:
        ledger.open_session(s, "C", "reader-1", T0)
    uids = [c[0] for c in CARDS] + ["00000000", "FFFFFFFF"]
    accepted = set()
    for i in range(2_000):
        s = rng.choice(sessions)
        uid = rng.choice(uids)
        result = ledger.record_tap(s, uid, reg,
                                   T0 + timedelta(seconds=i))
        if result.status is TapStatus.ACCEPTED:
            assert (s, uid) not in accepted  # never accepted twice
            accepted.add((s, uid))
    by_pair: dict = {}
    for rec in ledger.all_records():
        key = (rec.session_id, rec.uid)
        by_pair[key] = by_pair.get(key, 0) + 1
    assert set(by_pair) == accepted
    assert all(n == 1 for n in by_pair.values())


# CSV export ----------------------------------------------------------------

def test_export_csv_matches_fixture_bytes():
    from campus_pass.model import CardRegistry, Role, make_card

    reg = CardRegistry()
    for uid, name in [("9ABC1234", "Shravan"), ("11112222", "Asha"),
                      ("DEADBEEF", "Rao, Kiran")]:
        reg.register(make_card(uid, name, "1234", Role.STUDENT, T0))
    ledger = open_ledger()
    ledger.record_tap("CS101-P1", "9ABC1234", reg, T0)
    ledger.record_tap("CS101-P1", "11112222", reg, T0 + timedelta(seconds=5))
    ledger.record_tap("CS101-P1", "DEADBEEF", reg, T0 + timedelta(seconds=10))
    blob = ledger.export_csv("CS101-P1")
    assert blob == (FIXTURES / "attendance_three.csv").read_bytes()
    # And a standard CSV reader agrees on the quoted comma.
    rows = list(csv.reader(io.StringIO(blob.decode("utf-8"))))
    assert rows[0] == ["uid", "name", "timestamp"]
    assert rows[3] == ["DEADBEEF", "Rao, Kiran", "2024-01-01T09:00:10Z"]


def test_export_csv_sorted_by_time_then_uid():
    reg = build_registry()
    ledger = open_ledger()
    ledger.record_tap("CS101-P1", "11112222", reg, T0 + timedelta(seconds=9))
    ledger.record_tap("CS101-P1", "9ABC1234", reg, T0)
    blob = ledger.export_csv("CS101-P1").decode()
    lines = blob.strip().split("\n")
    assert lines[1].startswith("9ABC1234")
    assert lines[2].startswith("11112222")


def test_csv_parse_back_equals_accepted_set():
    rng = random.Random(7)
    reg = build_registry()
    ledger = open_ledger()
    uids = [c[0] for c in CARDS] + ["00000000"]
    for i in range(300):
        ledger.record_tap("CS101-P1", rng.choice(uids), reg,
                          T0 + timedelta(seconds=i))
    blob = ledger.export_csv("CS101-P1").decode("utf-8")
    parsed = {(row[0], row[2])
              for row in list(csv.reader(io.StringIO(blob)))[1:]}
    from campus_pass.model import rfc3339
    accepted = {(r.uid, rfc3339(r.ts))
                for r in ledger.records_for("CS101-P1")}
    assert parsed == accepted


# Local fallback log --------------------------------------------------------

def test_record_local_never_dedupes_and_logs_unknown():
    reg = build_registry()
    sink = io.StringIO()
    record_local(sink, "9ABC1234", reg, T0)
    record_local(sink, "9ABC1234", reg, T0 + timedelta(seconds=1))
    record_local(sink, "00000000", reg, T0 + timedelta(seconds=2))
    lines = sink.getvalue().splitlines()
    assert len(lines) == 3
    assert lines[0] == "2024-01-01T09:00:00Z 9ABC1234 Shravan"
    assert lines[1].endswith("Shravan")
    assert lines[2].endswith("UNKNOWN")
