"""The platform's heart: one event-sourced state machine for everything.

Every mutation is journalled to the event store first, then applied to
in-memory state by `_apply_event`. Replaying a stored log drives the
same `_apply_event` path, so a rebuilt world matches the live one byte
for byte (compare `snapshot()` outputs).

The world also owns the side-effect edges: SMS alerts go out through a
virtual modem when unlock/breach events are appended (live only, never
during replay), and inbound SMS arrive through the modem's +CMT bytes.
"""

from __future__ import annotations

import os
import re
import threading
from datetime import datetime
from typing import Callable

from .attendance import (
    AttendanceLedger,
    AttendanceRecord,
    DuplicateSession,
    TapResult,
    TapStatus,
    UnknownSession,
)
from .door import render_alert_text
from .events import EventStore
from .model import (
    CardRecord,
    CardRegistry,
    CardStatus,
    CardUid,
    Clock,
    DuplicateUid,
    EventRecord,
    MalformedUid,
    PlatformConfig,
    Role,
    SystemClock,
    canonical_json,
    is_phone,
    is_pin,
    parse_uid,
    pin_digest,
    rfc3339,
)
from .modem import CmtParser, Modem, ModemLink, SmsMessage
from .payments import PaymentLedger, PayResult, PayStatus, ReconcileResult
from .wire import (
    AttendanceReply,
    AttendanceTap,
    BalanceInquiry,
    BalanceReply,
    CardTap,
    ChargeRequest,
    Command,
    DoorEvent,
    Heartbeat,
    Hello,
    WireMessage,
)


class BadToken(PermissionError):
    """Device or admin credential mismatch."""


class UnknownDoor(KeyError):
    """No connected door answers to that id."""


# Door administrative mode, as far as the server can tell from events.
_DOOR_MODE_BY_KIND = {
    "pin_prompt": "awaiting_pin",
    "pin_timeout": "locked",
    "door_unlocked": "unlocked",
    "inside_unlock": "unlocked",
    "door_relocked": "locked",
    "breach_attempt": "locked",
    "lockdown": "lockdown",
    "remote_shutdown": "shutdown",
    "lockdown_cleared": "locked",
}

_SMS_COMMAND_RE = re.compile(r"(SHUTDOWN|CLEAR) (\S+)\Z")

_TAP_STATUS_WIRE = {
    TapStatus.ACCEPTED: "accepted",
    TapStatus.DUPLICATE: "duplicate",
    TapStatus.UNKNOWN_CARD: "unknown",
}


class World:
    """All server state plus the journal that can rebuild it."""

    def __init__(self, config: PlatformConfig | None = None, *,
                 clock: Clock | None = None,
                 store: EventStore | None = None,
                 modem: Modem | None = None,
                 device_token: str = "campus-device",
                 admin_token: str = "campus-admin") -> None:
        self.config = config or PlatformConfig()
        self.clock = clock or SystemClock()
        self.store = store or EventStore()
        self.device_token = device_token
        self.admin_token = admin_token

        self.registry = CardRegistry()
        self.payments = PaymentLedger()
        self.attendance = AttendanceLedger()
        self.doors: dict[str, str] = {}
        self.door_alert_phones: dict[str, str] = {}
        self.devices: dict[str, str] = {}

        self.sms_log: list[tuple[str, str]] = []
        self.modem = modem
        self.modem_link = ModemLink(modem) if modem is not None else None
        self._cmt = CmtParser()

        self._sinks: dict[str, Callable[[WireMessage], None]] = {}
        self._live = True
        self.lock = threading.RLock()

    # Journal plumbing -----------------------------------------------------

    def _commit(self, source: str, kind: str, data: dict,
                now: datetime) -> EventRecord:
        """Append one event, apply it, and run live side effects."""
        with self.lock:
            rec = self.store.append(ts=now, source=source, kind=kind,
                                    data=data)
            self._apply_event(rec)
            if self._live:
                self._dispatch_alert(rec)
            return rec

    def _apply_event(self, rec: EventRecord) -> None:
        """Mutate state from one event; shared by live path and replay."""
        kind, data = rec.kind, rec.data
        if kind == "card_registered":
            record = CardRecord(
                uid=data["uid"], holder_name=data["holder_name"],
                pin_digest=bytes.fromhex(data["pin_digest"]),
                salt=bytes.fromhex(data["salt"]),
                role=Role(data["role"]), status=CardStatus.ACTIVE,
                owner_phone=data["owner_phone"] or None,
                registered_at=rec.ts)
            if record.uid in self.registry:
                self.registry.replace(record)
            else:
                self.registry.register(record)
            self.payments.ensure_account(record.uid, rec.ts)
        elif kind == "card_revoked":
            self.registry.revoke(data["uid"])
        elif kind == "session_opened":
            self.attendance.open_session(data["session_id"], data["course"],
                                         data["device_id"], rec.ts)
        elif kind == "session_closed":
            self.attendance.close_session(data["session_id"], rec.ts)
        elif kind == "attendance_accepted":
            self.attendance.apply_accepted(AttendanceRecord(
                data["session_id"], data["uid"], data["holder_name"], rec.ts))
        elif kind in ("topup", "charge"):
            self.payments.apply_entry(kind, data["uid"], data["amount_minor"],
                                      data["device_id"], rec.ts)
        elif kind == "device_connected":
            self.devices[data["device_id"]] = data["kind"]
            if data["kind"] == "door":
                self.doors.setdefault(data["device_id"], "locked")
        elif kind == "device_disconnected":
            self.devices.pop(data["device_id"], None)
        elif kind in _DOOR_MODE_BY_KIND:
            self.doors[rec.source] = _DOOR_MODE_BY_KIND[kind]
        # Remaining kinds (card_tap, sms_*, charge_denied, balance_mismatch,
        # door_command, protocol_error, attendance_duplicate/rejected) are
        # audit records; they change no state.

    def _dispatch_alert(self, rec: EventRecord) -> None:
        if rec.kind == "door_unlocked":
            alert_kind = "unlocked"
        elif rec.kind == "breach_attempt":
            alert_kind = "breach"
        else:
            return
        to = self._alert_phone(rec.source, rec.data.get("uid"))
        text = render_alert_text(alert_kind, rec.source, rec.ts)
        self.sms_log.append((to, text))
        if self.modem_link is not None:
            self.modem_link.send_sms(to, text)

    def _alert_phone(self, door_id: str, uid: str | None) -> str:
        if uid:
            card = self.registry.get(uid)
            if card is not None and card.owner_phone:
                return card.owner_phone
        return self.door_alert_phones.get(door_id, "") or self.config.system_phone

    def _now(self, now: datetime | None) -> datetime:
        return now if now is not None else self.clock.now()

    # Registry administration ----------------------------------------------

    def register_card(self, uid: str, holder_name: str, pin: str, role: str,
                      owner_phone: str | None = None,
                      now: datetime | None = None,
                      salt: bytes | None = None) -> CardRecord:
        """Register a card; a revoked uid may be registered afresh."""
        now = self._now(now)
        uid = parse_uid(uid)
        if not holder_name:
            raise ValueError("holder_name must not be empty")
        if not (is_pin(pin) and len(pin) == self.config.pin_length):
            raise ValueError(
                f"pin must be exactly {self.config.pin_length} digits")
        role_value = Role(role)
        if owner_phone and not is_phone(owner_phone):
            raise ValueError(f"not a phone number: {owner_phone!r}")
        with self.lock:
            existing = self.registry.get(uid)
            if existing is not None and existing.is_active:
                raise DuplicateUid(uid)
            salt = salt if salt is not None else os.urandom(16)
            data = {
                "uid": uid,
                "holder_name": holder_name,
                "role": role_value.value,
                "owner_phone": owner_phone or "",
                "salt": salt.hex(),
                "pin_digest": pin_digest(salt, pin).hex(),
            }
            self._commit("server", "card_registered", data, now)
            return self.registry.get(uid)

    def revoke_card(self, uid: str, now: datetime | None = None) -> CardRecord:
        now = self._now(now)
        uid = parse_uid(uid)
        with self.lock:
            existing = self.registry.get(uid)
            if existing is None:
                raise KeyError(uid)
            if existing.is_active:
                self._commit("server", "card_revoked", {"uid": uid}, now)
            return self.registry.get(uid)

    def list_cards(self) -> list[CardRecord]:
        with self.lock:
            return list(self.registry)

    # Sessions and attendance ----------------------------------------------

    def open_session(self, session_id: str, course: str, device_id: str,
                     now: datetime | None = None) -> None:
        now = self._now(now)
        if not session_id:
            raise ValueError("session_id must not be empty")
        with self.lock:
            if session_id in self.attendance.sessions:
                raise DuplicateSession(session_id)
            self._commit("server", "session_opened",
                         {"session_id": session_id, "course": course,
                          "device_id": device_id}, now)

    def close_session(self, session_id: str,
                      now: datetime | None = None) -> None:
        now = self._now(now)
        with self.lock:
            session = self.attendance.session(session_id)
            if session.is_open:
                self._commit("server", "session_closed",
                             {"session_id": session_id}, now)

    def attendance_tap(self, session_id: str, uid: str, device_id: str,
                       now: datetime | None = None) -> TapResult:
        """Record one reader tap; every outcome leaves an audit event."""
        now = self._now(now)
        try:
            uid = parse_uid(uid)
        except MalformedUid:
            pass  # falls through to UnknownCard via registry miss
        with self.lock:
            try:
                result = self.attendance.evaluate_tap(session_id, uid,
                                                      self.registry, now)
            except UnknownSession:
                self._commit(device_id, "attendance_rejected",
                             {"session_id": session_id, "uid": uid,
                              "reason": "unknown_session",
                              "device_id": device_id}, now)
                raise
            if result.status is TapStatus.ACCEPTED:
                self._commit(device_id, "attendance_accepted",
                             {"session_id": session_id, "uid": uid,
                              "holder_name": result.holder_name,
                              "device_id": device_id}, now)
            elif result.status is TapStatus.DUPLICATE:
                self._commit(device_id, "attendance_duplicate",
                             {"session_id": session_id, "uid": uid,
                              "holder_name": result.holder_name,
                              "device_id": device_id}, now)
            elif result.status is TapStatus.UNKNOWN_CARD:
                self._commit(device_id, "attendance_rejected",
                             {"session_id": session_id, "uid": uid,
                              "reason": "unknown_card",
                              "device_id": device_id}, now)
            else:
                self._commit(device_id, "attendance_rejected",
                             {"session_id": session_id, "uid": uid,
                              "reason": "session_closed",
                              "device_id": device_id}, now)
            return result

    def export_attendance_csv(self, session_id: str) -> bytes:
        with self.lock:
            return self.attendance.export_csv(session_id)

    # Payments -------------------------------------------------------------

    def topup(self, uid: str, amount_minor: int, vendor_uid: str,
              device_id: str = "server",
              now: datetime | None = None) -> PayResult:
        now = self._now(now)
        uid = parse_uid(uid)
        with self.lock:
            vendor = self.registry.get(parse_uid(vendor_uid))
            if vendor is None:
                return PayResult(PayStatus.FORBIDDEN)
            result = self.payments.evaluate_topup(uid, amount_minor, vendor)
            if result.ok:
                self._commit(device_id, "topup",
                             {"uid": uid, "amount_minor": amount_minor,
                              "balance_minor": result.balance_minor,
                              "vendor_uid": vendor.uid,
                              "device_id": device_id}, now)
            return result

    def charge(self, uid: str, pin: str, amount_minor: int, device_id: str,
               now: datetime | None = None) -> PayResult:
        now = self._now(now)
        with self.lock:
            result = self.payments.evaluate_charge(uid, pin, amount_minor,
                                                   self.registry)
            if result.ok:
                self._commit(device_id, "charge",
                             {"uid": uid, "amount_minor": amount_minor,
                              "balance_minor": result.balance_minor,
                              "device_id": device_id}, now)
            else:
                self._commit(device_id, "charge_denied",
                             {"uid": uid, "amount_minor": amount_minor,
                              "reason": result.status.value,
                              "device_id": device_id}, now)
            return result

    def balance_inquiry(self, uid: str, pin: str) -> PayResult:
        with self.lock:
            return self.payments.balance_inquiry(uid, pin, self.registry)

    def get_account(self, uid: str):
        with self.lock:
            acct = self.payments.accounts.get(uid)
            if acct is None:
                raise KeyError(uid)
            return acct

    def reconcile_cache(self, uid: str, cached_minor: int | None,
                        device_id: str,
                        now: datetime | None = None) -> ReconcileResult:
        """Check a device's cached balance; the server number wins."""
        now = self._now(now)
        with self.lock:
            acct = self.payments.accounts.get(uid)
            if acct is None:
                raise KeyError(uid)
            result = PaymentLedger.reconcile(cached_minor, acct)
            if result.mismatch:
                self._commit(device_id, "balance_mismatch",
                             {"uid": uid, "cached_minor": cached_minor,
                              "authoritative_minor": result.authoritative_minor,
                              "device_id": device_id}, now)
            return result

    # Devices and doors ----------------------------------------------------

    def connect_device(self, device_id: str, kind: str, token: str,
                       sink: Callable[[WireMessage], None] | None = None,
                       now: datetime | None = None) -> None:
        now = self._now(now)
        with self.lock:
            if token != self.device_token:
                self._commit("server", "protocol_error",
                             {"device_id": device_id, "kind": "bad_token",
                              "detail": "device token mismatch"}, now)
                raise BadToken(device_id)
            if sink is not None:
                self._sinks[device_id] = sink
            self._commit("server", "device_connected",
                         {"device_id": device_id, "kind": kind}, now)

    def protocol_error(self, device_id: str | None, kind: str, detail: str,
                       now: datetime | None = None) -> None:
        """Journal a wire protocol violation before dropping the offender."""
        self._commit("server", "protocol_error",
                     {"device_id": device_id or "", "kind": kind,
                      "detail": detail}, self._now(now))

    def disconnect_device(self, device_id: str,
                          now: datetime | None = None) -> None:
        now = self._now(now)
        with self.lock:
            self._sinks.pop(device_id, None)
            if device_id in self.devices:
                self._commit("server", "device_disconnected",
                             {"device_id": device_id}, now)

    def door_emit(self, door_id: str, kind: str, data: dict,
                  now: datetime | None = None) -> EventRecord:
        """Journal one event a door's state machine emitted."""
        return self._commit(door_id, kind, dict(data), self._now(now))

    def command_door(self, door_id: str, name: str, via: str = "http",
                     now: datetime | None = None) -> None:
        """Push shutdown/clear to a connected door."""
        now = self._now(now)
        if name not in ("shutdown", "clear"):
            raise ValueError(f"not a door command: {name!r}")
        with self.lock:
            sink = self._sinks.get(door_id)
            if sink is None or self.devices.get(door_id) != "door":
                raise UnknownDoor(door_id)
            self._commit("server", "door_command",
                         {"door_id": door_id, "name": name, "via": via}, now)
        sink(Command(name=name))

    # SMS ------------------------------------------------------------------

    def sms_inbound(self, sender: str, body: str,
                    now: datetime | None = None) -> bool:
        """Deliver an SMS through the modem's +CMT bytes, then act on it."""
        now = self._now(now)
        if self.modem is not None:
            raw = self.modem.deliver_incoming_sms(
                SmsMessage(sender=sender, to=self.modem.msisdn, body=body,
                           ts=now))
            handled = False
            for msg in self._cmt.feed(raw):
                handled = self.handle_sms(msg.body, msg.sender, now) or handled
            return handled
        return self.handle_sms(body, sender, now)

    def handle_sms(self, text: str, sender: str,
                   now: datetime | None = None) -> bool:
        """`SHUTDOWN <door>` / `CLEAR <door>` from an owner phone, verbatim."""
        now = self._now(now)
        with self.lock:
            m = _SMS_COMMAND_RE.match(text)
            if not m:
                self._commit("server", "sms_rejected",
                             {"from": sender, "text": text,
                              "reason": "bad_grammar"}, now)
                return False
            verb, door_id = m.group(1), m.group(2)
            if not self._sender_authorized(sender):
                self._commit("server", "sms_rejected",
                             {"from": sender, "text": text,
                              "reason": "unauthorized"}, now)
                return False
            sink = self._sinks.get(door_id)
            if sink is None or self.devices.get(door_id) != "door":
                self._commit("server", "sms_rejected",
                             {"from": sender, "text": text,
                              "reason": "unknown_door"}, now)
                return False
            self._commit("server", "sms_command",
                         {"verb": verb, "door_id": door_id, "from": sender},
                         now)
        sink(Command(name=verb.lower()))
        return True

    def _sender_authorized(self, sender: str) -> bool:
        return any(card.is_active and card.owner_phone == sender
                   for card in self.registry)

    # Wire message routing -------------------------------------------------

    def handle_wire(self, msg: WireMessage,
                    now: datetime | None = None) -> list[WireMessage]:
        """Process one device message; returns replies to send back."""
        now = self._now(now)
        if isinstance(msg, (Hello, Heartbeat)):
            return []  # hello handled at connect; heartbeats are ephemeral
        if isinstance(msg, CardTap):
            self._commit(msg.device_id, "card_tap", {"uid": msg.uid}, now)
            return []
        if isinstance(msg, DoorEvent):
            self.door_emit(msg.device_id, msg.kind, msg.data, now)
            return []
        if isinstance(msg, AttendanceTap):
            try:
                result = self.attendance_tap(msg.session_id, msg.uid,
                                             msg.device_id, now)
            except UnknownSession:
                return [Command(name="deny", reason="unknown_session")]
            if result.status is TapStatus.SESSION_CLOSED:
                return [Command(name="deny", reason="session_closed")]
            return [AttendanceReply(status=_TAP_STATUS_WIRE[result.status],
                                    holder_name=result.holder_name)]
        if isinstance(msg, BalanceInquiry):
            result = self.balance_inquiry(msg.uid, msg.pin)
            if result.ok:
                return [BalanceReply(uid=msg.uid,
                                     balance_minor=result.balance_minor)]
            return [Command(name="deny", reason=result.status.value)]
        if isinstance(msg, ChargeRequest):
            result = self.charge(msg.uid, msg.pin, msg.amount_minor,
                                 msg.device_id, now)
            if result.ok:
                return [BalanceReply(uid=msg.uid,
                                     balance_minor=result.balance_minor)]
            return [Command(name="deny", reason=result.status.value)]
        return [Command(name="deny", reason="unhandled_message")]

    # Snapshots and replay -------------------------------------------------

    def snapshot(self) -> bytes:
        """Canonical serialization of all rebuildable state."""
        with self.lock:
            obj = {
                "accounts": {
                    uid: {"balance_minor": a.balance_minor,
                          "updated_at": rfc3339(a.updated_at)}
                    for uid, a in self.payments.accounts.items()},
                "attendance": {
                    "records": [
                        {"session_id": r.session_id, "uid": r.uid,
                         "holder_name": r.holder_name, "ts": rfc3339(r.ts)}
                        for r in self.attendance.all_records()],
                    "sessions": {
                        sid: {"course": s.course, "device_id": s.device_id,
                              "opened_at": rfc3339(s.opened_at),
                              "closed_at": (rfc3339(s.closed_at)
                                            if s.closed_at else None)}
                        for sid, s in self.attendance.sessions.items()},
                },
                "devices": dict(self.devices),
                "doors": dict(self.doors),
                "event_seq": self.store.last_seq,
                "ledger": [
                    {"seq": e.seq, "uid": e.uid,
                     "delta_minor": e.delta_minor, "kind": e.kind,
                     "device_id": e.device_id, "ts": rfc3339(e.ts)}
                    for e in self.payments.entries],
                "registry": {
                    card.uid: {"holder_name": card.holder_name,
                               "role": card.role.value,
                               "status": card.status.value,
                               "owner_phone": card.owner_phone or "",
                               "salt": card.salt.hex(),
                               "pin_digest": card.pin_digest.hex(),
                               "registered_at": rfc3339(card.registered_at)}
                    for card in self.registry},
            }
            return canonical_json(obj)

    @classmethod
    def replay(cls, records: list[EventRecord],
               config: PlatformConfig | None = None, *,
               clock: Clock | None = None,
               store: EventStore | None = None,
               device_token: str = "campus-device",
               admin_token: str = "campus-admin") -> "World":
        """Rebuild a world from its journal; no side effects fire."""
        world = cls(config, clock=clock, store=store,
                    device_token=device_token, admin_token=admin_token)
        world._live = False
        try:
            for rec in records:
                world._apply_event(rec)
        finally:
            world._live = True
        world.store.adopt(records)
        return world
