"""Byte-level emulator of a SIM900-class modem, text mode only.

Understood command set (case-insensitive, one per CR/CRLF line):

    AT              liveness check            -> OK
    ATE0            echo off                  -> OK
    AT+CMGF=0/1     select PDU/text mode      -> OK (PDU sends then ERROR)
    AT+CMGS="num"   start an SMS (text mode)  -> "> " prompt, body follows

An SMS body is terminated by Ctrl-Z (0x1A, send) or ESC (0x1B, abort).
Anything else answers ERROR; the emulator never drops the session. Echo
defaults to on, per AT convention, and reproduces consumed input bytes
verbatim ahead of each response.

Incoming SMS are surfaced as +CMT unsolicited result codes, which is how
the platform's remote shutdown texts reach the server.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime
from typing import Callable

from .model import UTC, is_phone

SMS_BODY_LIMIT = 160

CTRL_Z = 0x1A
ESC = 0x1B

_CRLF = b"\r\n"
_OK = b"\r\nOK\r\n"
_ERROR = b"\r\nERROR\r\n"
_PROMPT = b"\r\n> "

_CMGS_RE = re.compile(r'AT\+CMGS="([^"]*)"\Z', re.IGNORECASE)
_CMGF_RE = re.compile(r"AT\+CMGF=([01])\Z", re.IGNORECASE)


class UnknownCommand(ValueError):
    pass


class MalformedNumber(ValueError):
    pass


class NotInTextMode(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class Attention:
    pass


@dataclass(frozen=True, slots=True)
class EchoOff:
    pass


@dataclass(frozen=True, slots=True)
class SetTextMode:
    mode: int


@dataclass(frozen=True, slots=True)
class SendSmsHeader:
    number: str


AtCommand = Attention | EchoOff | SetTextMode | SendSmsHeader


@dataclass(frozen=True, slots=True)
class SmsMessage:
    sender: str
    to: str
    body: str
    ts: datetime

    def __post_init__(self) -> None:
        if len(self.body) > SMS_BODY_LIMIT:
            raise ValueError(f"SMS body over {SMS_BODY_LIMIT} characters")


def parse_at_line(line: bytes) -> AtCommand:
    """Parse one logical command line (terminator already stripped or not).

    Raises UnknownCommand for anything outside the supported set and
    MalformedNumber for a CMGS header whose number is invalid.
    """
    text = line.decode("ascii", errors="replace").rstrip("\r\n")
    up = text.upper()
    if up == "AT":
        return Attention()
    if up == "ATE0":
        return EchoOff()
    m = _CMGF_RE.match(text)
    if m:
        return SetTextMode(int(m.group(1)))
    m = _CMGS_RE.match(text)
    if m:
        number = m.group(1)
        if not is_phone(number):
            raise MalformedNumber(number)
        return SendSmsHeader(number)
    raise UnknownCommand(text)


def _cmt_timestamp(ts: datetime) -> str:
    return ts.astimezone(UTC).strftime("%y/%m/%d,%H:%M:%S+00")


_CMT_TS_RE = re.compile(r"(\d{2})/(\d{2})/(\d{2}),(\d{2}):(\d{2}):(\d{2})\+00\Z")


def parse_cmt_timestamp(text: str) -> datetime:
    m = _CMT_TS_RE.match(text)
    if not m:
        raise ValueError(f"not a +CMT timestamp: {text!r}")
    yy, mo, d, h, mi, s = (int(g) for g in m.groups())
    return datetime(2000 + yy, mo, d, h, mi, s, tzinfo=UTC)


class Modem:
    """One virtual modem. Feed it bytes, read back response bytes and SMS.

    State is private to the instance; distinct modems are independent.
    """

    def __init__(self, msisdn: str = "+910000000000",
                 now_fn: Callable[[], datetime] | None = None) -> None:
        self.msisdn = msisdn
        self._now = now_fn or (lambda: datetime.now(UTC))
        self.echo = True
        self.text_mode = False
        self.sent_counter = 1
        self._awaiting_body_to: str | None = None
        self._swallow_body_lf = False
        self._line_buf = bytearray()
        self._body_buf = bytearray()

    @property
    def awaiting_body(self) -> bool:
        return self._awaiting_body_to is not None

    def feed(self, data: bytes) -> tuple[bytes, list[SmsMessage]]:
        """Process input bytes; returns (response bytes, sent messages)."""
        out = bytearray()
        sent: list[SmsMessage] = []
        for i in range(len(data)):
            b = data[i:i + 1]
            if self.echo:
                out += b
            if self._awaiting_body_to is not None:
                self._feed_body_byte(b[0], out, sent)
            else:
                self._feed_line_byte(b[0], out)
        return bytes(out), sent

    # Command mode: accumulate until CR or LF; blank lines are ignored.
    def _feed_line_byte(self, b: int, out: bytearray) -> None:
        if b in (0x0D, 0x0A):
            line = bytes(self._line_buf)
            self._line_buf.clear()
            if line.strip():
                out += self._run_command(line)
        else:
            self._line_buf += bytes([b])

    def _feed_body_byte(self, b: int, out: bytearray,
                        sent: list[SmsMessage]) -> None:
        # The LF of the header line's CRLF is terminator, not body.
        if self._swallow_body_lf:
            self._swallow_body_lf = False
            if b == 0x0A:
                return
        if b == ESC:
            self._awaiting_body_to = None
            self._body_buf.clear()
            out += _OK
            return
        if b == CTRL_Z:
            to = self._awaiting_body_to
            raw = bytes(self._body_buf)
            self._awaiting_body_to = None
            self._body_buf.clear()
            try:
                body = raw.decode("utf-8")
            except UnicodeDecodeError:
                out += _ERROR
                return
            if len(body) > SMS_BODY_LIMIT:
                out += _ERROR
                return
            n = self.sent_counter
            self.sent_counter += 1
            sent.append(SmsMessage(sender=self.msisdn, to=to, body=body,
                                   ts=self._now()))
            out += f"\r\n+CMGS: {n}\r\n\r\nOK\r\n".encode("ascii")
            return
        self._body_buf += bytes([b])

    def _run_command(self, line: bytes) -> bytes:
        try:
            cmd = parse_at_line(line)
        except (UnknownCommand, MalformedNumber):
            return _ERROR
        if isinstance(cmd, Attention):
            return _OK
        if isinstance(cmd, EchoOff):
            self.echo = False
            return _OK
        if isinstance(cmd, SetTextMode):
            self.text_mode = cmd.mode == 1
            return _OK
        if isinstance(cmd, SendSmsHeader):
            if not self.text_mode:
                return _ERROR
            self._awaiting_body_to = cmd.number
            self._swallow_body_lf = True
            return _PROMPT
        return _ERROR

    def deliver_incoming_sms(self, msg: SmsMessage) -> bytes:
        """Render an incoming SMS as a +CMT unsolicited result code."""
        if not self.text_mode:
            raise NotInTextMode("set AT+CMGF=1 first")
        header = f'+CMT: "{msg.sender}","","{_cmt_timestamp(msg.ts)}"'
        return _CRLF + header.encode("utf-8") + _CRLF + \
            msg.body.encode("utf-8") + _CRLF


_CMT_HEADER_RE = re.compile(r'\+CMT: "([^"]*)","([^"]*)","([^"]*)"\Z')


class CmtParser:
    """Reassembles +CMT notifications from a modem's output byte stream."""

    def __init__(self) -> None:
        self._buf = bytearray()
        self._pending_header: tuple[str, datetime] | None = None

    def feed(self, data: bytes) -> list[SmsMessage]:
        self._buf += data
        messages: list[SmsMessage] = []
        while True:
            idx = self._buf.find(b"\r\n")
            if idx < 0:
                break
            line = bytes(self._buf[:idx]).decode("utf-8", errors="replace")
            del self._buf[:idx + 2]
            if self._pending_header is not None:
                sender, ts = self._pending_header
                self._pending_header = None
                messages.append(SmsMessage(sender=sender, to="", body=line,
                                           ts=ts))
                continue
            m = _CMT_HEADER_RE.match(line)
            if m:
                try:
                    ts = parse_cmt_timestamp(m.group(3))
                except ValueError:
                    continue
                self._pending_header = (m.group(1), ts)
        return messages


class ModemLink:
    """Drives a modem the way a host microcontroller would, over bytes.

    Collects every SMS the modem sends into `outbox`. Used by the server
    to dispatch alerts and by tests to capture transcripts.
    """

    def __init__(self, modem: Modem) -> None:
        self.modem = modem
        self.outbox: list[SmsMessage] = []
        self.transcript = bytearray()
        self._exchange(b"ATE0\r\n")
        self._exchange(b"AT+CMGF=1\r\n")

    def _exchange(self, data: bytes) -> bytes:
        resp, sent = self.modem.feed(data)
        self.transcript += resp
        self.outbox.extend(sent)
        return resp

    def send_sms(self, to: str, text: str) -> bool:
        """Returns True when the modem acknowledged the send with +CMGS."""
        resp = self._exchange(f'AT+CMGS="{to}"\r\n'.encode("utf-8"))
        if not resp.endswith(_PROMPT):
            return False
        resp = self._exchange(text.encode("utf-8") + bytes([CTRL_Z]))
        return b"+CMGS:" in resp
