"""AT command emulator: golden transcript, echo semantics, text-mode SMS
send/receive, and a large fuzz run that must never crash."""

from __future__ import annotations

import random

import pytest

from campus_pass.model import utc
from campus_pass.modem import (
    Attention,
    CmtParser,
    EchoOff,
    MalformedNumber,
    Modem,
    ModemLink,
    NotInTextMode,
    SendSmsHeader,
    SetTextMode,
    SmsMessage,
    UnknownCommand,
    parse_at_line,
    parse_cmt_timestamp,
)
from tests.conftest import FIXTURES

T0 = utc(2024, 1, 1, 9, 30, 0)


def make_modem() -> Modem:
    return Modem(msisdn="+910000000000", now_fn=lambda: T0)


# Command line parsing ------------------------------------------------------

def test_parse_at_line_commands():
    assert isinstance(parse_at_line(b"AT"), Attention)
    assert isinstance(parse_at_line(b"ATE0"), EchoOff)
    assert parse_at_line(b"AT+CMGF=1") == SetTextMode(1)
    assert parse_at_line(b"AT+CMGF=0") == SetTextMode(0)
    assert parse_at_line(b'AT+CMGS="+919876543210"') == \
        SendSmsHeader("+919876543210")


def test_parse_at_line_is_case_insensitive():
    assert isinstance(parse_at_line(b"at+cmgf=1"), SetTextMode)
    assert isinstance(parse_at_line(b"ate0"), EchoOff)


def test_parse_at_line_rejects_unknown_and_malformed():
    with pytest.raises(UnknownCommand):
        parse_at_line(b"AT+CSQ")
    with pytest.raises(MalformedNumber):
        parse_at_line(b'AT+CMGS="not a number"')
    with pytest.raises(UnknownCommand):
        parse_at_line(b"HELLO")


# Golden transcript ---------------------------------------------------------

def test_golden_transcript_byte_exact():
    raw_in = (FIXTURES / "modem_golden_input.bin").read_bytes()
    want = (FIXTURES / "modem_golden_output.bin").read_bytes()
    modem = make_modem()
    out, sent = modem.feed(raw_in)
    assert out == want
    assert sent == [SmsMessage(sender="+910000000000", to="+919876543210",
                               body="door-101 unlocked", ts=T0)]


def test_golden_transcript_split_per_byte():
    # Feeding the same script one byte at a time produces the same output.
    raw_in = (FIXTURES / "modem_golden_input.bin").read_bytes()
    want = (FIXTURES / "modem_golden_output.bin").read_bytes()
    modem = make_modem()
    out = bytearray()
    sent = []
    for i in range(len(raw_in)):
        chunk_out, chunk_sent = modem.feed(raw_in[i:i + 1])
        out += chunk_out
        sent += chunk_sent
    assert bytes(out) == want
    assert len(sent) == 1


def test_echo_stops_at_the_cr_that_carries_ate0():
    modem = make_modem()
    out, _ = modem.feed(b"ATE0\r\n")
    # The CR is echoed (it is consumed while echo is still on); the LF
    # that follows is not, because running ATE0 already turned echo off.
    assert out == b"ATE0\r\r\nOK\r\n"


def test_echo_on_echoes_everything_consumed():
    modem = make_modem()
    out, _ = modem.feed(b"AT\r\n")
    # Per-byte duplex: the CR's echo and the response precede the LF's
    # echo, because the response is written while processing the CR.
    assert out == b"AT\r\r\nOK\r\n\n"


def test_cmgs_before_text_mode_is_an_error():
    modem = make_modem()
    modem.feed(b"ATE0\r\n")
    out, sent = modem.feed(b'AT+CMGS="+911234567890"\r\n')
    assert out == b"\r\nERROR\r\n"
    assert sent == []
    assert not modem.awaiting_body


def test_message_reference_increments():
    modem = make_modem()
    modem.feed(b"ATE0\r\nAT+CMGF=1\r\n")
    for n in (1, 2, 3):
        out, sent = modem.feed(f'AT+CMGS="+911111111111"\r\nhi\x1a'.encode())
        assert f"+CMGS: {n}\r\n".encode() in out
        assert len(sent) == 1


def test_escape_cancels_the_pending_send():
    modem = make_modem()
    modem.feed(b"ATE0\r\nAT+CMGF=1\r\n")
    out, sent = modem.feed(b'AT+CMGS="+911111111111"\r\nabandoned\x1b')
    assert out.endswith(b"\r\nOK\r\n")
    assert sent == []
    assert not modem.awaiting_body


def test_oversize_body_is_an_error_not_a_truncation():
    modem = make_modem()
    modem.feed(b"ATE0\r\nAT+CMGF=1\r\n")
    body = b"x" * 161
    out, sent = modem.feed(b'AT+CMGS="+911111111111"\r\n' + body + b"\x1a")
    assert out.endswith(b"\r\nERROR\r\n")
    assert sent == []


def test_undecodable_body_is_an_error():
    modem = make_modem()
    modem.feed(b"ATE0\r\nAT+CMGF=1\r\n")
    out, sent = modem.feed(b'AT+CMGS="+911111111111"\r\n\xff\xfe\x1a')
    assert out.endswith(b"\r\nERROR\r\n")
    assert sent == []
    # The modem is back in command mode and still usable.
    out, _ = modem.feed(b"AT\r\n")
    assert out == b"\r\nOK\r\n"


def test_unknown_command_answers_error_and_continues():
    modem = make_modem()
    modem.feed(b"ATE0\r\n")
    out, _ = modem.feed(b"AT+CSQ\r\n")
    assert out == b"\r\nERROR\r\n"
    out, _ = modem.feed(b"AT\r\n")
    assert out == b"\r\nOK\r\n"


# Incoming SMS (+CMT) -------------------------------------------------------

def test_deliver_incoming_renders_cmt():
    modem = make_modem()
    modem.feed(b"ATE0\r\nAT+CMGF=1\r\n")
    chunk = modem.deliver_incoming_sms(
        SmsMessage(sender="+919876543210", to="+910000000000",
                   body="SHUTDOWN door-101", ts=utc(2024, 1, 1, 0, 0, 2)))
    assert chunk == (b'\r\n+CMT: "+919876543210","","24/01/01,00:00:02+00"'
                     b"\r\nSHUTDOWN door-101\r\n")


def test_deliver_incoming_requires_text_mode():
    modem = make_modem()
    with pytest.raises(NotInTextMode):
        modem.deliver_incoming_sms(
            SmsMessage(sender="+91", to="", body="x", ts=T0))


def test_cmt_parser_roundtrip():
    modem = make_modem()
    modem.feed(b"ATE0\r\nAT+CMGF=1\r\n")
    msg = SmsMessage(sender="+919876543210", to="",
                     body="CLEAR door-101", ts=utc(2024, 1, 1, 0, 0, 2))
    chunk = modem.deliver_incoming_sms(msg)
    parser = CmtParser()
    # Feed in awkward splits; the comma inside the timestamp must not
    # derail header parsing.
    got = []
    for i in range(0, len(chunk), 7):
        got += parser.feed(chunk[i:i + 7])
    assert got == [msg]


def test_cmt_parser_ignores_interleaved_responses():
    parser = CmtParser()
    assert parser.feed(b"\r\nOK\r\n") == []
    assert parser.feed(b'\r\n+CMT: "+911234567890","","24/01/01,'
                       b'09:30:00+00"\r\n') == []
    msgs = parser.feed(b"hello there\r\n\r\nOK\r\n")
    assert len(msgs) == 1
    assert msgs[0].body == "hello there"
    assert msgs[0].ts == T0


def test_parse_cmt_timestamp():
    assert parse_cmt_timestamp("24/01/01,00:00:02+00") == \
        utc(2024, 1, 1, 0, 0, 2)
    with pytest.raises(ValueError):
        parse_cmt_timestamp("2024/01/01,00:00:02+00")


# Host-side link ------------------------------------------------------------

def test_modem_link_sends_and_collects():
    link = ModemLink(Modem(msisdn="+910000000000", now_fn=lambda: T0))
    assert link.send_sms("+919876543210", "ALERT: test")
    assert [m.to for m in link.outbox] == ["+919876543210"]
    assert link.outbox[0].body == "ALERT: test"
    assert b"+CMGS: 1" in bytes(link.transcript)


def test_modem_link_reports_oversize_failure():
    link = ModemLink(Modem(now_fn=lambda: T0))
    assert not link.send_sms("+919876543210", "y" * 200)
    assert link.outbox == []


# Fuzz ----------------------------------------------------------------------

def test_fuzz_one_hundred_thousand_lines_never_crash():
    rng = random.Random(0xC0FFEE)
    modem = Modem(now_fn=lambda: T0)
    fragments = [
        b"AT", b"ATE0", b"ATE1", b"AT+CMGF=1", b"AT+CMGF=0",
        b'AT+CMGS="+911234567890"', b'AT+CMGS="junk"', b"AT+CSQ",
        b"", b"\x00\x01\x02", b"\xff" * 8, b"hello world",
        b'AT+CMGS="+91', b'"', b"=1", b"\x1a", b"\x1b",
    ]
    terminators = [b"\r\n", b"\r", b"\n", b""]
    lines = 0
    while lines < 100_000:
        line = rng.choice(fragments)
        if rng.random() < 0.1:
            line += bytes(rng.randrange(256) for _ in range(rng.randrange(6)))
        out, sent = modem.feed(line + rng.choice(terminators))
        assert isinstance(out, bytes)
        assert all(isinstance(m, SmsMessage) for m in sent)
        lines += 1
    # Still alive and coherent afterwards.
    modem.feed(b"\x1b")  # cancel any pending body from the fuzz tail
    out, _ = modem.feed(b"\r\nAT\r\n")
    assert out.endswith(b"\r\nOK\r\n")
