"""Deterministic in-process simulation of a whole campus installation.

A world file declares devices, cards and sessions; a scenario script
drives them with timed directives:

    at <seconds> tap <device> <uid>
    at <seconds> key <device> <ch>
    at <seconds> switch <device>
    at <seconds> sms <from> <text...>
    at <seconds> expect <event-kind> <device>

Time is simulated: the run advances straight to the next scheduled
moment, and door timers (PIN timeout, relock) fire at exactly their
deadlines. Identical inputs always give byte-identical event traces.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from . import door as fsm
from .attendance import UnknownSession
from .events import EventStore
from .model import EventRecord, PlatformConfig, parse_uid, utc
from .modem import Modem
from .payments import PayStatus
from .wire import Command
from .world import World

SIM_EPOCH = utc(2024, 1, 1)


class ParseError(ValueError):
    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownDevice(KeyError):
    pass


class SimClock:
    """Simulated time; only the event loop moves it, never backwards."""

    def __init__(self, epoch: datetime = SIM_EPOCH) -> None:
        self._now = epoch

    def now(self) -> datetime:
        return self._now

    def advance_to(self, ts: datetime) -> None:
        if ts < self._now:
            raise ValueError("simulated clock cannot go backwards")
        self._now = ts


# World files ----------------------------------------------------------------

@dataclass
class CardSpec:
    uid: str
    holder_name: str
    pin: str
    role: str
    owner_phone: str | None


@dataclass
class SessionSpec:
    session_id: str
    course: str
    device_id: str


@dataclass
class WorldSpec:
    doors: list[str] = field(default_factory=list)
    attendance_devices: list[str] = field(default_factory=list)
    pos_devices: list[str] = field(default_factory=list)
    cards: list[CardSpec] = field(default_factory=list)
    sessions: list[SessionSpec] = field(default_factory=list)
    config_overrides: dict[str, str] = field(default_factory=dict)


_CONFIG_KEYS = {
    "pin_length": int,
    "pin_entry_timeout": float,
    "relock_after": float,
    "failed_attempts_to_lockdown": int,
    "system_phone": str,
}


def parse_world(text: str) -> WorldSpec:
    """Parse the `key=value` world declaration format."""
    spec = WorldSpec()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", lineno)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "door":
            spec.doors.append(value)
        elif key == "attendance":
            spec.attendance_devices.append(value)
        elif key == "pos":
            spec.pos_devices.append(value)
        elif key == "card":
            parts = [p.strip() for p in value.split(",")]
            if len(parts) not in (4, 5):
                raise ParseError(
                    "card needs uid,name,pin,role[,phone]", lineno)
            phone = parts[4] if len(parts) == 5 else None
            spec.cards.append(CardSpec(parts[0], parts[1], parts[2],
                                       parts[3], phone))
        elif key == "session":
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 3:
                raise ParseError("session needs id,course,device", lineno)
            spec.sessions.append(SessionSpec(*parts))
        elif key.startswith("config."):
            name = key[len("config."):]
            if name not in _CONFIG_KEYS:
                raise ParseError(f"unknown config key {name!r}", lineno)
            spec.config_overrides[name] = value
        else:
            raise ParseError(f"unknown declaration {key!r}", lineno)
    return spec


def _registration_salt(uid: str, holder_name: str) -> bytes:
    # Fixed per card so repeated runs journal identical registration events.
    return hashlib.sha256(f"{uid}:{holder_name}".encode("utf-8")).digest()[:16]


# Device hosts ---------------------------------------------------------------

class DoorHost:
    """In-process door: the pure FSM wired to the world's journal."""

    def __init__(self, door_id: str, world: World) -> None:
        self.door_id = door_id
        self.world = world
        self.state = fsm.DoorState()
        self.outputs: list[fsm.DoorOutput] = []
        self.commands_received: list[Command] = []
        world.connect_device(door_id, "door", world.device_token,
                             sink=self.deliver)

    def _ctx(self) -> fsm.DoorContext:
        return fsm.DoorContext(
            self.door_id, self.world.config, self.world.registry,
            self.world.door_alert_phones.get(self.door_id, ""))

    def apply(self, inp: fsm.DoorInput,
              now: datetime | None = None) -> list[fsm.DoorOutput]:
        now = now if now is not None else self.world.clock.now()
        self.state, outs = fsm.step(self.state, inp, self._ctx(), now)
        self.outputs.extend(outs)
        for out in outs:
            if isinstance(out, fsm.Emit):
                self.world.door_emit(self.door_id, out.kind, dict(out.data),
                                     now)
        return outs

    def deliver(self, cmd) -> None:
        """Server push: shutdown/clear commands reach the FSM here."""
        self.commands_received.append(cmd)
        if cmd.name == "shutdown":
            self.apply(fsm.RemoteShutdown())
        elif cmd.name == "clear":
            self.apply(fsm.AdminClear())

    def next_deadline(self) -> datetime | None:
        return fsm.next_deadline(self.state)


class AttendanceHost:
    """Reader that forwards taps into whichever of its sessions is open."""

    def __init__(self, device_id: str, world: World) -> None:
        self.device_id = device_id
        self.world = world
        self.display: list[str] = []
        world.connect_device(device_id, "attendance", world.device_token)

    def _open_session(self) -> str | None:
        for sid, sess in self.world.attendance.sessions.items():
            if sess.device_id == self.device_id and sess.is_open:
                return sid
        return None

    def tap(self, uid: str, now: datetime | None = None) -> str:
        now = now if now is not None else self.world.clock.now()
        sid = self._open_session()
        if sid is None:
            shown = "no session"
        else:
            try:
                result = self.world.attendance_tap(sid, uid, self.device_id,
                                                   now)
                shown = result.status.value.lower()
                if result.holder_name:
                    shown += f" {result.holder_name}"
            except UnknownSession:
                shown = "no session"
        self.display.append(shown)
        return shown


class PosHost:
    """Point-of-sale: tap, PIN, '#' shows the server-checked balance.

    Keeps the last balance it saw per card as a local cache, the way the
    original card-stored value worked; every inquiry reconciles that
    cache against the server and the server's number is what displays.
    """

    def __init__(self, device_id: str, world: World) -> None:
        self.device_id = device_id
        self.world = world
        self.display: list[str] = []
        self.cache: dict[str, int] = {}
        self._uid: str | None = None
        self._digits = ""
        world.connect_device(device_id, "pos", world.device_token)

    def tap(self, uid: str, now: datetime | None = None) -> None:
        self._uid = uid
        self._digits = ""

    def key(self, ch: str, now: datetime | None = None) -> None:
        now = now if now is not None else self.world.clock.now()
        if ch == "*":
            self._digits = ""
            return
        if ch != "#":
            self._digits += ch
            return
        uid, pin = self._uid, self._digits
        self._uid, self._digits = None, ""
        if uid is None:
            self.display.append("no card")
            return
        result = self.world.balance_inquiry(uid, pin)
        if result.status is not PayStatus.OK:
            self.display.append(result.status.value)
            return
        reconciled = self.world.reconcile_cache(uid, self.cache.get(uid),
                                                self.device_id, now)
        self.cache[uid] = reconciled.authoritative_minor
        self.display.append(f"balance {reconciled.authoritative_minor}")


# Scenario scripts ------------------------------------------------------------

_VERBS = ("tap", "key", "switch", "sms", "expect")


@dataclass(frozen=True)
class Directive:
    at: float
    verb: str
    args: tuple[str, ...]
    line: int


def parse_scenario(text: str) -> list[Directive]:
    directives: list[Directive] = []
    last_at = 0.0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 3 or parts[0] != "at":
            raise ParseError(f"expected `at <seconds> <verb> ...`: {line!r}",
                             lineno)
        try:
            at = float(parts[1])
        except ValueError:
            raise ParseError(f"bad time {parts[1]!r}", lineno) from None
        if at < last_at:
            raise ParseError("directive times must be non-decreasing", lineno)
        last_at = at
        verb, args = parts[2], tuple(parts[3:])
        if verb not in _VERBS:
            raise ParseError(f"unknown directive {verb!r}", lineno)
        if verb == "tap" and len(args) != 2:
            raise ParseError("tap needs <device> <uid>", lineno)
        if verb == "key":
            if len(args) != 2 or len(args[1]) != 1 or \
                    args[1] not in fsm.KEYPAD_KEYS:
                raise ParseError("key needs <device> <one keypad char>",
                                 lineno)
        if verb == "switch" and len(args) != 1:
            raise ParseError("switch needs <device>", lineno)
        if verb == "sms" and len(args) < 2:
            raise ParseError("sms needs <from> <text...>", lineno)
        if verb == "expect" and len(args) != 2:
            raise ParseError("expect needs <event-kind> <device>", lineno)
        directives.append(Directive(at, verb, args, lineno))
    return directives


@dataclass(frozen=True)
class ExpectResult:
    at: float
    kind: str
    device: str
    passed: bool
    line: int


@dataclass
class ScenarioResult:
    world: World
    trace: list[EventRecord]
    expects: list[ExpectResult]
    hosts: dict[str, object]

    @property
    def ok(self) -> bool:
        return all(e.passed for e in self.expects)


def build_world(spec: WorldSpec, *, modem: Modem | None = None,
                store: EventStore | None = None) -> tuple[World, dict[str, object]]:
    """Stand up a world plus hosts for every declared device at t=0."""
    kwargs = {}
    for name, conv in _CONFIG_KEYS.items():
        if name in spec.config_overrides:
            kwargs[name] = conv(spec.config_overrides[name])
    config = PlatformConfig(**kwargs)
    clock = SimClock()
    if modem is None:
        modem = Modem(msisdn=config.system_phone, now_fn=clock.now)
    world = World(config, clock=clock, store=store, modem=modem)

    hosts: dict[str, object] = {}
    for door_id in spec.doors:
        hosts[door_id] = DoorHost(door_id, world)
    for dev in spec.attendance_devices:
        hosts[dev] = AttendanceHost(dev, world)
    for dev in spec.pos_devices:
        hosts[dev] = PosHost(dev, world)
    for card in spec.cards:
        world.register_card(card.uid, card.holder_name, card.pin, card.role,
                            card.owner_phone,
                            salt=_registration_salt(card.uid,
                                                    card.holder_name))
    for sess in spec.sessions:
        world.open_session(sess.session_id, sess.course, sess.device_id)
    return world, hosts


def run_scenario(script_text: str, world_text: str) -> ScenarioResult:
    """Execute a script against a fresh world; fully deterministic."""
    directives = parse_scenario(script_text)
    world, hosts = build_world(parse_world(world_text))
    clock: SimClock = world.clock  # type: ignore[assignment]

    # Discrete-event queue: door timers (priority 0) fire ahead of
    # directives (priority 1) scheduled at the same instant.
    counter = itertools.count()
    heap: list[tuple[datetime, int, int, tuple]] = []

    def push_timer(host: DoorHost) -> None:
        deadline = host.next_deadline()
        if deadline is not None:
            heapq.heappush(heap, (deadline, 0, next(counter),
                                  ("tick", host)))

    for d in directives:
        ts = SIM_EPOCH + timedelta(seconds=d.at)
        heapq.heappush(heap, (ts, 1, next(counter), ("directive", d)))

    expects: list[ExpectResult] = []
    while heap:
        ts, _prio, _seq, item = heapq.heappop(heap)
        clock.advance_to(ts)
        if item[0] == "tick":
            host = item[1]
            deadline = host.next_deadline()
            if deadline is not None and deadline <= ts:
                host.apply(fsm.Tick(), ts)
            push_timer(host)
            continue
        d: Directive = item[1]
        if d.verb == "expect":
            kind, device = d.args
            seen = any(rec.kind == kind and rec.source == device
                       for rec in world.store.records())
            expects.append(ExpectResult(d.at, kind, device, seen, d.line))
            continue
        if d.verb == "sms":
            sender, text = d.args[0], " ".join(d.args[1:])
            world.sms_inbound(sender, text, ts)
            continue
        device = d.args[0]
        host = hosts.get(device)
        if host is None:
            raise UnknownDevice(device)
        if d.verb == "tap":
            uid = d.args[1]
            try:
                uid = parse_uid(uid)
            except ValueError:
                pass  # let the hosts treat it as an unknown card
            if isinstance(host, DoorHost):
                host.apply(fsm.CardTap(uid), ts)
                push_timer(host)
            elif isinstance(host, AttendanceHost):
                host.tap(uid, ts)
            elif isinstance(host, PosHost):
                host.tap(uid, ts)
        elif d.verb == "key":
            ch = d.args[1]
            if isinstance(host, DoorHost):
                host.apply(fsm.KeyPress(ch), ts)
                push_timer(host)
            elif isinstance(host, PosHost):
                host.key(ch, ts)
            else:
                raise UnknownDevice(f"{device} has no keypad")
        elif d.verb == "switch":
            if not isinstance(host, DoorHost):
                raise UnknownDevice(f"{device} has no inside switch")
            host.apply(fsm.InsideSwitch(), ts)
            push_timer(host)

    return ScenarioResult(world=world, trace=world.store.records(),
                          expects=expects, hosts=hosts)
