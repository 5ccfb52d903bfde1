"""Command-line entry point.

Subcommands:

    serve                     run the control server (HTTP + wire port)
    device door|attendance|pos  host one virtual device over the wire port
    scenario run              execute a scripted world in-process
    export attendance         fetch one session's CSV from a server
    events tail               print the event stream as NDJSON
    report                    render CSV + figures from an event log file
"""

from __future__ import annotations

import argparse
import queue
import socket
import sys
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path

from . import door as fsm
from .config import ENV_VAR, ConfigError, Settings, load_settings
from .events import CorruptLog, EventStore, load_event_log
from .model import CardRegistry, PlatformConfig, Role, SystemClock, make_card, rfc3339
from .modem import Modem, ModemLink
from .server import ControlServer
from .sim import ParseError, UnknownDevice, run_scenario
from .wire import (
    AttendanceTap,
    BalanceInquiry,
    CardTap,
    ChargeRequest,
    Command,
    FrameCodec,
    Hello,
    encode_frame,
)
from .world import World


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


# serve ----------------------------------------------------------------------

def _overrides_from_args(args: argparse.Namespace) -> dict[str, str]:
    overrides = {}
    for key in ("host", "http_port", "wire_port", "event_log",
                "admin_token", "device_token"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    return overrides


def _build_world(settings: Settings) -> World:
    modem = Modem(msisdn=settings.modem_msisdn)
    log_path = settings.event_log
    if log_path and Path(log_path).exists() and Path(log_path).stat().st_size:
        records = load_event_log(log_path)
        world = World.replay(records, settings.platform,
                             store=EventStore(log_path),
                             device_token=settings.device_token,
                             admin_token=settings.admin_token)
        world.clock = SystemClock()
        world.modem = modem
        world.modem_link = ModemLink(modem)
        return world
    store = EventStore(log_path) if log_path else EventStore()
    return World(settings.platform, store=store, modem=modem,
                 device_token=settings.device_token,
                 admin_token=settings.admin_token)


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        settings = load_settings(args.config, _overrides_from_args(args))
        world = _build_world(settings)
    except (ConfigError, CorruptLog) as exc:
        return _fail(str(exc))
    server = ControlServer(world, host=settings.host,
                           http_port=settings.http_port,
                           wire_port=settings.wire_port)
    server.start()
    print(f"http on {settings.host}:{server.http_port}, "
          f"wire on {settings.host}:{server.wire_port}", flush=True)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        world.store.close()
    return 0


# device ---------------------------------------------------------------------

def _load_cards(path: str | None) -> CardRegistry:
    registry = CardRegistry()
    if not path:
        return registry
    clock = SystemClock()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (4, 5):
            raise ConfigError(
                f"{path}:{lineno}: need uid,name,pin,role[,phone]")
        phone = parts[4] if len(parts) == 5 else None
        registry.register(make_card(parts[0], parts[1], parts[2],
                                    Role(parts[3]), clock.now(),
                                    owner_phone=phone))
    return registry


class _DeviceLink:
    """Socket + codec + hello handshake shared by all device kinds."""

    def __init__(self, device_id: str, kind: str, addr: str,
                 token: str) -> None:
        host, _, port = addr.rpartition(":")
        self.sock = socket.create_connection((host or "127.0.0.1", int(port)))
        self.device_id = device_id
        self.codec = FrameCodec()
        self.incoming: queue.Queue = queue.Queue()
        self._wlock = threading.Lock()
        self.send(Hello(device_id=device_id, kind=kind, token=token))
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def send(self, msg) -> None:
        with self._wlock:
            self.sock.sendall(encode_frame(msg))

    def _read_loop(self) -> None:
        while True:
            try:
                chunk = self.sock.recv(4096)
            except OSError:
                break
            if not chunk:
                break
            messages, errors = self.codec.feed(chunk)
            for msg in messages:
                self.incoming.put(msg)
            if errors:
                break


def _stdin_lines():
    for line in sys.stdin:
        yield line.strip()


def cmd_device(args: argparse.Namespace) -> int:
    try:
        registry = _load_cards(getattr(args, "cards", None))
    except (OSError, ConfigError, ValueError) as exc:
        return _fail(str(exc))
    try:
        link = _DeviceLink(args.id, args.kind, args.connect, args.token)
    except OSError as exc:
        return _fail(f"cannot connect to {args.connect}: {exc}")
    clock = SystemClock()

    if args.kind == "door":
        return _run_door_device(args, link, registry, clock)
    return _run_simple_device(args, link, clock)


def _run_door_device(args, link: _DeviceLink, registry: CardRegistry,
                     clock: SystemClock) -> int:
    config = PlatformConfig()
    state = fsm.DoorState()
    ctx = fsm.DoorContext(args.id, config, registry)
    lock = threading.Lock()

    def apply(inp) -> None:
        nonlocal state
        with lock:
            now = clock.now()
            state, outs = fsm.step(state, inp, ctx, now)
            for out in outs:
                if isinstance(out, fsm.Emit):
                    link.send(fsm_event_msg(args.id, out, now))
                print(f"door: {type(out).__name__.lower()}", flush=True)

    def fsm_event_msg(device_id: str, out: fsm.Emit, now):
        from .wire import DoorEvent
        return DoorEvent(device_id=device_id, kind=out.kind,
                         data=dict(out.data), ts=rfc3339(now))

    def pump_commands() -> None:
        while True:
            msg = link.incoming.get()
            if isinstance(msg, Command):
                if msg.name == "shutdown":
                    apply(fsm.RemoteShutdown())
                elif msg.name == "clear":
                    apply(fsm.AdminClear())

    def pump_timers() -> None:
        while True:
            time.sleep(0.2)
            with lock:
                deadline = fsm.next_deadline(state)
            if deadline is not None and clock.now() >= deadline:
                apply(fsm.Tick())

    threading.Thread(target=pump_commands, daemon=True).start()
    threading.Thread(target=pump_timers, daemon=True).start()

    for line in _stdin_lines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "tap" and len(parts) == 2:
            link.send(CardTap(device_id=args.id, uid=parts[1].upper(),
                              ts=rfc3339(clock.now())))
            apply(fsm.CardTap(parts[1].upper()))
        elif parts[0] == "key" and len(parts) == 2 and \
                parts[1] in fsm.KEYPAD_KEYS:
            apply(fsm.KeyPress(parts[1]))
        elif parts[0] == "switch":
            apply(fsm.InsideSwitch())
        elif parts[0] == "quit":
            return 0
        else:
            print(f"? {line}", file=sys.stderr, flush=True)
    # stdin closed: stay resident for server-pushed commands
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        return 0


def _run_simple_device(args, link: _DeviceLink, clock: SystemClock) -> int:
    def print_replies() -> None:
        while True:
            msg = link.incoming.get()
            print(msg.to_obj(), flush=True)

    threading.Thread(target=print_replies, daemon=True).start()

    for line in _stdin_lines():
        parts = line.split()
        if not parts:
            continue
        now = rfc3339(clock.now())
        if args.kind == "attendance" and parts[0] == "tap" and len(parts) == 2:
            link.send(AttendanceTap(device_id=args.id, session_id=args.session,
                                    uid=parts[1].upper(), ts=now))
        elif args.kind == "pos" and parts[0] == "balance" and len(parts) == 3:
            link.send(BalanceInquiry(device_id=args.id, uid=parts[1].upper(),
                                     pin=parts[2], ts=now))
        elif args.kind == "pos" and parts[0] == "charge" and len(parts) == 4:
            link.send(ChargeRequest(device_id=args.id, uid=parts[1].upper(),
                                    pin=parts[2], amount_minor=int(parts[3]),
                                    ts=now))
        elif parts[0] == "quit":
            return 0
        else:
            print(f"? {line}", file=sys.stderr, flush=True)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        return 0


# scenario -------------------------------------------------------------------

def cmd_scenario_run(args: argparse.Namespace) -> int:
    try:
        script = Path(args.script).read_text(encoding="utf-8")
        world_text = Path(args.world).read_text(encoding="utf-8")
    except OSError as exc:
        return _fail(str(exc))
    try:
        result = run_scenario(script, world_text)
    except (ParseError, UnknownDevice) as exc:
        return _fail(str(exc))
    if not args.quiet:
        from .events import record_to_line
        for rec in result.trace:
            sys.stdout.buffer.write(record_to_line(rec))
        sys.stdout.flush()
    for exp in result.expects:
        status = "pass" if exp.passed else "FAIL"
        print(f"expect {exp.kind} {exp.device} at {exp.at}: {status}",
              file=sys.stderr)
    return 0 if result.ok else 1


# HTTP client helpers --------------------------------------------------------

def _http_get(url: str, token: str):
    req = urllib.request.Request(url, headers={"X-Admin-Token": token})
    return urllib.request.urlopen(req)  # noqa: S310 (local admin tool)


def cmd_export_attendance(args: argparse.Namespace) -> int:
    url = f"{args.server}/sessions/{args.session}/attendance.csv"
    try:
        with _http_get(url, args.token) as resp:
            data = resp.read()
    except urllib.error.HTTPError as exc:
        return _fail(f"server said {exc.code} for {url}")
    except OSError as exc:
        return _fail(f"cannot reach {args.server}: {exc}")
    Path(args.out).write_bytes(data)
    print(f"wrote {args.out}")
    return 0


def cmd_events_tail(args: argparse.Namespace) -> int:
    url = f"{args.server}/events/stream?since={args.since}"
    try:
        with _http_get(url, args.token) as resp:
            for line in resp:
                sys.stdout.buffer.write(line)
                sys.stdout.flush()
    except urllib.error.HTTPError as exc:
        return _fail(f"server said {exc.code} for {url}")
    except KeyboardInterrupt:
        return 0
    except OSError as exc:
        return _fail(f"cannot reach {args.server}: {exc}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from .report import render_report
    try:
        records = load_event_log(args.log)
    except (OSError, CorruptLog) as exc:
        return _fail(str(exc))
    paths = render_report(records, args.out)
    for path in paths:
        print(path)
    return 0


# argument wiring ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="campus-pass",
        description="RFID campus platform: doors, attendance, payments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the control server")
    p.add_argument("--config", help=f"config file (or ${ENV_VAR})")
    p.add_argument("--host")
    p.add_argument("--http-port", type=int, dest="http_port")
    p.add_argument("--wire-port", type=int, dest="wire_port")
    p.add_argument("--event-log", dest="event_log")
    p.add_argument("--admin-token", dest="admin_token")
    p.add_argument("--device-token", dest="device_token")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("device", help="run one virtual device")
    p.add_argument("kind", choices=("door", "attendance", "pos"))
    p.add_argument("--id", required=True)
    p.add_argument("--connect", required=True, metavar="HOST:PORT")
    p.add_argument("--token", default="campus-device")
    p.add_argument("--cards", help="door card file: uid,name,pin,role[,phone]")
    p.add_argument("--session", help="session id for attendance taps")
    p.set_defaults(func=cmd_device)

    p = sub.add_parser("scenario", help="deterministic script runner")
    scen_sub = p.add_subparsers(dest="scenario_command", required=True)
    pr = scen_sub.add_parser("run", help="run a scenario script")
    pr.add_argument("script")
    pr.add_argument("--world", required=True)
    pr.add_argument("--quiet", action="store_true")
    pr.set_defaults(func=cmd_scenario_run)

    p = sub.add_parser("export", help="export data from a running server")
    exp_sub = p.add_subparsers(dest="export_command", required=True)
    pa = exp_sub.add_parser("attendance")
    pa.add_argument("--session", required=True)
    pa.add_argument("--out", required=True)
    pa.add_argument("--server", default="http://127.0.0.1:7400")
    pa.add_argument("--token", default="campus-admin")
    pa.set_defaults(func=cmd_export_attendance)

    p = sub.add_parser("events", help="follow the event stream")
    ev_sub = p.add_subparsers(dest="events_command", required=True)
    pt = ev_sub.add_parser("tail")
    pt.add_argument("--server", default="http://127.0.0.1:7400")
    pt.add_argument("--since", type=int, default=0)
    pt.add_argument("--token", default="campus-admin")
    pt.set_defaults(func=cmd_events_tail)

    p = sub.add_parser("report", help="render CSV and figures from a log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
