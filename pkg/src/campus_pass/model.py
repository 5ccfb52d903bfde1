"""Shared domain types: card identity, PINs, clocks, platform config, events.

Everything here is a plain value. Records are immutable after construction
and safe to pass between threads; the registry is mutated only through the
server's serialized command path.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Iterator, Protocol

# A card UID is the canonical text form of a 4-octet identifier:
# exactly 8 uppercase hex characters.
CardUid = str

_UID_RE = re.compile(r"[0-9A-F]{8}\Z")
_UID_LOOSE_RE = re.compile(r"[0-9a-fA-F]{8}\Z")
_PIN_RE = re.compile(r"[0-9]+\Z")
_PHONE_RE = re.compile(r"\+?[0-9]{3,15}\Z")


class MalformedUid(ValueError):
    """Input is not 8 hex characters."""


class DuplicateUid(ValueError):
    """UID already present in the registry."""


def parse_uid(text: str) -> CardUid:
    """Parse a card UID, canonicalizing to uppercase.

    Raises MalformedUid unless the input is exactly 8 hex characters.
    """
    if not isinstance(text, str) or not _UID_LOOSE_RE.match(text):
        raise MalformedUid(f"not a card uid: {text!r}")
    return text.upper()


def render_uid(uid: CardUid) -> str:
    return uid


def is_canonical_uid(text: object) -> bool:
    return isinstance(text, str) and bool(_UID_RE.match(text))


def is_pin(text: object) -> bool:
    """Digits only; the keypad's letter column does not exist here."""
    return isinstance(text, str) and bool(_PIN_RE.match(text))


def is_phone(text: object) -> bool:
    return isinstance(text, str) and bool(_PHONE_RE.match(text))


# ---------------------------------------------------------------------------
# Timestamps. RFC 3339 UTC with trailing 'Z', millisecond resolution.
# Sub-millisecond digits are truncated; a zero fraction is omitted.

UTC = timezone.utc

_TS_RE = re.compile(
    r"(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,3}))?Z\Z"
)


def rfc3339(ts: datetime) -> str:
    """Render a UTC timestamp. Naive datetimes are taken as UTC."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=UTC)
    else:
        ts = ts.astimezone(UTC)
    ms = ts.microsecond // 1000
    base = ts.strftime("%Y-%m-%dT%H:%M:%S")
    return f"{base}.{ms:03d}Z" if ms else f"{base}Z"


def parse_rfc3339(text: str) -> datetime:
    m = _TS_RE.match(text)
    if not m:
        raise ValueError(f"not an RFC 3339 UTC timestamp: {text!r}")
    y, mo, d, h, mi, s = (int(g) for g in m.groups()[:6])
    frac = m.group(7) or ""
    micro = int(frac.ljust(3, "0")) * 1000 if frac else 0
    return datetime(y, mo, d, h, mi, s, micro, tzinfo=UTC)


def utc(y: int, mo: int = 1, d: int = 1, h: int = 0, mi: int = 0,
        s: int = 0, ms: int = 0) -> datetime:
    return datetime(y, mo, d, h, mi, s, ms * 1000, tzinfo=UTC)


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    """Wall clock clamped to be monotone non-decreasing within one run."""

    def __init__(self) -> None:
        self._last = datetime.min.replace(tzinfo=UTC)

    def now(self) -> datetime:
        t = datetime.now(UTC)
        if t < self._last:
            t = self._last
        self._last = t
        return t


# ---------------------------------------------------------------------------
# Cards

class Role(Enum):
    STUDENT = "student"
    STAFF = "staff"
    VENDOR = "vendor"
    ADMIN = "admin"


class CardStatus(Enum):
    ACTIVE = "active"
    REVOKED = "revoked"


@dataclass(frozen=True, slots=True)
class CardRecord:
    """One registered RFID card. The PIN is stored only as a salted digest."""

    uid: CardUid
    holder_name: str
    pin_digest: bytes
    salt: bytes
    role: Role
    status: CardStatus
    owner_phone: str | None
    registered_at: datetime

    def revoked(self) -> "CardRecord":
        return replace(self, status=CardStatus.REVOKED)

    @property
    def is_active(self) -> bool:
        return self.status is CardStatus.ACTIVE


def pin_digest(salt: bytes, pin: str) -> bytes:
    return hashlib.sha256(salt + pin.encode("utf-8")).digest()


def make_card(uid: CardUid, holder_name: str, pin: str, role: Role,
              now: datetime, owner_phone: str | None = None,
              pin_length: int = 4, salt: bytes | None = None) -> CardRecord:
    """Build a CardRecord, salting and digesting the PIN.

    `salt` may be supplied for deterministic fixtures; defaults to 16
    random octets.
    """
    uid = parse_uid(uid)
    if not is_pin(pin) or len(pin) != pin_length:
        raise ValueError(f"pin must be {pin_length} digits")
    # "" and None both mean "no phone on file".
    if owner_phone and not is_phone(owner_phone):
        raise ValueError(f"not a phone number: {owner_phone!r}")
    if salt is None:
        salt = os.urandom(16)
    return CardRecord(
        uid=uid,
        holder_name=holder_name,
        pin_digest=pin_digest(salt, pin),
        salt=salt,
        role=role,
        status=CardStatus.ACTIVE,
        owner_phone=owner_phone or None,
        registered_at=now,
    )


def verify_pin(record: CardRecord, attempt: str) -> bool:
    """True iff the attempt digests to the stored value.

    Comparison is timing-uniform (no short-circuit on the first differing
    octet). Status checks belong to the door FSM, not here.
    """
    return hmac.compare_digest(record.pin_digest,
                               pin_digest(record.salt, attempt))


class CardRegistry:
    """UID-keyed card store. Registration refuses duplicates outright."""

    def __init__(self) -> None:
        self._cards: dict[CardUid, CardRecord] = {}

    def register(self, record: CardRecord) -> None:
        if record.uid in self._cards:
            raise DuplicateUid(record.uid)
        self._cards[record.uid] = record

    def replace(self, record: CardRecord) -> None:
        """Swap in a new record for an existing uid (server re-registration)."""
        if record.uid not in self._cards:
            raise KeyError(record.uid)
        self._cards[record.uid] = record

    def revoke(self, uid: CardUid) -> CardRecord:
        rec = self._cards[uid].revoked()
        self._cards[uid] = rec
        return rec

    def get(self, uid: CardUid) -> CardRecord | None:
        return self._cards.get(uid)

    def active(self, uid: CardUid) -> CardRecord | None:
        rec = self._cards.get(uid)
        return rec if rec is not None and rec.is_active else None

    def __contains__(self, uid: CardUid) -> bool:
        return uid in self._cards

    def __len__(self) -> int:
        return len(self._cards)

    def __iter__(self) -> Iterator[CardRecord]:
        return iter(self._cards.values())


def register_card(registry: CardRegistry, record: CardRecord) -> CardRegistry:
    """Add a card; on DuplicateUid the registry is left untouched."""
    registry.register(record)
    return registry


# ---------------------------------------------------------------------------
# Platform configuration

@dataclass(frozen=True, slots=True)
class PlatformConfig:
    pin_length: int = 4
    pin_entry_timeout: float = 10.0
    relock_after: float = 5.0
    failed_attempts_to_lockdown: int = 1
    system_phone: str = "+910000000000"

    def __post_init__(self) -> None:
        if not 4 <= self.pin_length <= 8:
            raise ValueError("pin_length must be within 4..8")
        if self.pin_entry_timeout <= 0 or self.relock_after <= 0:
            raise ValueError("durations must be strictly positive")
        if self.failed_attempts_to_lockdown < 1:
            raise ValueError("failed_attempts_to_lockdown must be >= 1")
        if not is_phone(self.system_phone):
            raise ValueError(f"not a phone number: {self.system_phone!r}")

    @property
    def pin_timeout_delta(self) -> timedelta:
        return timedelta(seconds=self.pin_entry_timeout)

    @property
    def relock_delta(self) -> timedelta:
        return timedelta(seconds=self.relock_after)


# ---------------------------------------------------------------------------
# Platform events

@dataclass(frozen=True)
class EventRecord:
    """One globally sequenced platform event; the server's source of truth."""

    seq: int
    ts: datetime
    source: str
    kind: str
    data: dict = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "data": self.data,
            "kind": self.kind,
            "seq": self.seq,
            "source": self.source,
            "ts": rfc3339(self.ts),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "EventRecord":
        if not isinstance(obj, dict):
            raise ValueError("event must be a JSON object")
        try:
            seq = obj["seq"]
            ts = parse_rfc3339(obj["ts"])
            source = obj["source"]
            kind = obj["kind"]
            data = obj.get("data", {})
        except (KeyError, TypeError) as exc:
            raise ValueError(f"bad event record: {exc}") from exc
        if not isinstance(seq, int) or isinstance(seq, bool) or seq < 1:
            raise ValueError(f"bad event seq: {seq!r}")
        if not isinstance(source, str) or not isinstance(kind, str):
            raise ValueError("event source and kind must be strings")
        if not isinstance(data, dict):
            raise ValueError("event data must be an object")
        return cls(seq=seq, ts=ts, source=source, kind=kind, data=data)


def canonical_json(obj: object) -> bytes:
    """The platform's one JSON form: sorted keys, no spaces, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")
