"""Pure state machine for one door unit.

No I/O happens here: `step` maps (state, input, context, now) to a new
state plus an ordered list of outputs (actuator commands, buzzer, SMS
alert requests, events to emit). The host decides what to do with them.

Behavior summary:

  Locked      --tap(active card)-->        AwaitingPin (PIN prompt)
  Locked      --tap(unknown/revoked)-->    failure; Lockdown at threshold
  AwaitingPin --digit-->                   digit buffered (capped at pin length)
  AwaitingPin --'*'-->                     buffer cleared
  AwaitingPin --'#', correct PIN-->        Unlocked, relocks after a delay
  AwaitingPin --'#', wrong PIN-->          failure; Lockdown at threshold
  AwaitingPin --tick past deadline-->      Locked (entry timed out)
  Unlocked    --tick past relock time-->   Locked
  Locked/Unlocked --inside switch-->       Unlocked (occupant lets someone in)
  any live mode --remote shutdown-->       Shutdown
  Lockdown/Shutdown                        absorb everything except AdminClear

Every failed attempt buzzes, raises a breach alert SMS and emits a
breach_attempt event; crossing the configured failure threshold also
drops the door into Lockdown and emits lockdown.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime

from .model import (
    CardRegistry,
    CardUid,
    PlatformConfig,
    parse_rfc3339,
    rfc3339,
    verify_pin,
)

KEYPAD_KEYS = "0123456789*#"


# Modes ---------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Locked:
    pass


@dataclass(frozen=True, slots=True)
class AwaitingPin:
    uid: CardUid
    digits_so_far: str
    deadline: datetime


@dataclass(frozen=True, slots=True)
class Unlocked:
    relock_at: datetime


@dataclass(frozen=True, slots=True)
class Lockdown:
    pass


@dataclass(frozen=True, slots=True)
class Shutdown:
    pass


Mode = Locked | AwaitingPin | Unlocked | Lockdown | Shutdown


@dataclass(frozen=True, slots=True)
class DoorState:
    mode: Mode = field(default_factory=Locked)
    failed_attempts: int = 0


# Inputs --------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class CardTap:
    uid: CardUid


@dataclass(frozen=True, slots=True)
class KeyPress:
    ch: str

    def __post_init__(self) -> None:
        # Substring check alone would admit "" and runs like "12".
        if len(self.ch) != 1 or self.ch not in KEYPAD_KEYS:
            raise ValueError(f"not a keypad key: {self.ch!r}")


@dataclass(frozen=True, slots=True)
class InsideSwitch:
    pass


@dataclass(frozen=True, slots=True)
class Tick:
    # Carries no time of its own; step()'s `now` is authoritative.
    pass


@dataclass(frozen=True, slots=True)
class RemoteShutdown:
    pass


@dataclass(frozen=True, slots=True)
class AdminClear:
    pass


DoorInput = CardTap | KeyPress | InsideSwitch | Tick | RemoteShutdown | AdminClear


# Outputs -------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ActuatorUnlock:
    pass


@dataclass(frozen=True, slots=True)
class ActuatorLock:
    pass


@dataclass(frozen=True, slots=True)
class BuzzerOn:
    pass


@dataclass(frozen=True, slots=True)
class SmsAlert:
    to: str
    text: str


@dataclass(frozen=True)
class Emit:
    kind: str
    data: dict = field(default_factory=dict)


DoorOutput = ActuatorUnlock | ActuatorLock | BuzzerOn | SmsAlert | Emit


@dataclass(frozen=True, slots=True)
class DoorContext:
    """What one door knows about the world: its id, config and card list."""

    door_id: str
    config: PlatformConfig
    registry: CardRegistry
    # Door-specific alert number; empty string falls back to the platform one.
    alert_phone: str = ""


# Alert texts ---------------------------------------------------------------

_UNLOCK_ALERT_RE = re.compile(
    r"\AALERT: door (.+) unlocked at "
    r"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d{1,3})?Z)\Z"
)
_BREACH_ALERT_RE = re.compile(
    r"\AALERT: breach attempt at door (.+) at "
    r"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d{1,3})?Z)\Z"
)


def render_alert_text(kind: str, door_id: str, ts: datetime) -> str:
    stamp = rfc3339(ts)
    if kind == "unlocked":
        return f"ALERT: door {door_id} unlocked at {stamp}"
    if kind == "breach":
        return f"ALERT: breach attempt at door {door_id} at {stamp}"
    raise ValueError(f"unknown alert kind: {kind!r}")


def parse_alert_text(text: str) -> tuple[str, str, datetime]:
    """Inverse of render_alert_text: (kind, door_id, ts)."""
    m = _UNLOCK_ALERT_RE.match(text)
    if m:
        return "unlocked", m.group(1), parse_rfc3339(m.group(2))
    m = _BREACH_ALERT_RE.match(text)
    if m:
        return "breach", m.group(1), parse_rfc3339(m.group(2))
    raise ValueError(f"not an alert text: {text!r}")


# Transitions ---------------------------------------------------------------

def _alert_phone(ctx: DoorContext, uid: CardUid | None) -> str:
    if uid is not None:
        rec = ctx.registry.get(uid)
        if rec is not None and rec.owner_phone:
            return rec.owner_phone
    return ctx.alert_phone or ctx.config.system_phone


def _failure(state: DoorState, ctx: DoorContext, now: datetime,
             uid: CardUid | None, reason: str) -> tuple[DoorState, list[DoorOutput]]:
    attempts = state.failed_attempts + 1
    data: dict = {"reason": reason}
    if uid is not None:
        data["uid"] = uid
    outputs: list[DoorOutput] = [
        BuzzerOn(),
        SmsAlert(to=_alert_phone(ctx, uid),
                 text=render_alert_text("breach", ctx.door_id, now)),
        Emit("breach_attempt", data),
    ]
    if attempts >= ctx.config.failed_attempts_to_lockdown:
        outputs.append(Emit("lockdown", {}))
        return DoorState(Lockdown(), attempts), outputs
    return DoorState(Locked(), attempts), outputs


def _unlock(state: DoorState, ctx: DoorContext, now: datetime,
            uid: CardUid) -> tuple[DoorState, list[DoorOutput]]:
    relock_at = now + ctx.config.relock_delta
    outputs: list[DoorOutput] = [
        ActuatorUnlock(),
        SmsAlert(to=_alert_phone(ctx, uid),
                 text=render_alert_text("unlocked", ctx.door_id, now)),
        Emit("door_unlocked", {"uid": uid}),
    ]
    return DoorState(Unlocked(relock_at), 0), outputs


def step(state: DoorState, inp: DoorInput, ctx: DoorContext,
         now: datetime) -> tuple[DoorState, list[DoorOutput]]:
    """Advance the machine one input. Total: unlisted pairs are no-ops."""
    mode = state.mode

    # Absorbing modes first: only AdminClear gets the door back.
    if isinstance(mode, (Lockdown, Shutdown)):
        if isinstance(inp, AdminClear):
            return DoorState(Locked(), 0), [Emit("lockdown_cleared", {})]
        return state, []

    if isinstance(inp, RemoteShutdown):
        return DoorState(Shutdown(), state.failed_attempts), [
            ActuatorLock(), Emit("remote_shutdown", {})]

    if isinstance(inp, InsideSwitch):
        if isinstance(mode, (Locked, Unlocked)):
            relock_at = now + ctx.config.relock_delta
            return DoorState(Unlocked(relock_at), state.failed_attempts), [
                ActuatorUnlock(), Emit("inside_unlock", {})]
        return state, []

    if isinstance(mode, Locked):
        if isinstance(inp, CardTap):
            rec = ctx.registry.get(inp.uid)
            if rec is not None and rec.is_active:
                deadline = now + ctx.config.pin_timeout_delta
                return DoorState(AwaitingPin(inp.uid, "", deadline),
                                 state.failed_attempts), [
                    Emit("pin_prompt", {"uid": inp.uid})]
            reason = "revoked_card" if rec is not None else "unknown_card"
            return _failure(state, ctx, now, inp.uid, reason)
        return state, []

    if isinstance(mode, AwaitingPin):
        if isinstance(inp, KeyPress):
            if inp.ch == "*":
                return DoorState(AwaitingPin(mode.uid, "", mode.deadline),
                                 state.failed_attempts), []
            if inp.ch == "#":
                rec = ctx.registry.get(mode.uid)
                if (rec is not None and rec.is_active
                        and verify_pin(rec, mode.digits_so_far)):
                    return _unlock(state, ctx, now, mode.uid)
                return _failure(state, ctx, now, mode.uid, "bad_pin")
            digits = mode.digits_so_far
            if len(digits) < ctx.config.pin_length:
                digits += inp.ch
            return DoorState(AwaitingPin(mode.uid, digits, mode.deadline),
                             state.failed_attempts), []
        if isinstance(inp, Tick) and now >= mode.deadline:
            return DoorState(Locked(), state.failed_attempts), [
                Emit("pin_timeout", {"uid": mode.uid})]
        return state, []

    if isinstance(mode, Unlocked):
        if isinstance(inp, Tick) and now >= mode.relock_at:
            return DoorState(Locked(), state.failed_attempts), [
                ActuatorLock(), Emit("door_relocked", {})]
        return state, []

    return state, []


def next_deadline(state: DoorState) -> datetime | None:
    """When the host should next feed a Tick, if any timer is pending."""
    if isinstance(state.mode, AwaitingPin):
        return state.mode.deadline
    if isinstance(state.mode, Unlocked):
        return state.mode.relock_at
    return None
