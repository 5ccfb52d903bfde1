"""Shared fixtures: a frozen clock, a small card population, and worlds
built on both. Also the acceptance-verdict reporting hook."""

from __future__ import annotations

from datetime import datetime, timedelta
from pathlib import Path

import pytest

from campus_pass.model import CardRegistry, PlatformConfig, Role, make_card, utc
from campus_pass.modem import Modem
from campus_pass.world import World

FIXTURES = Path(__file__).parent / "fixtures"

_config = None


def pytest_configure(config):
    global _config
    _config = config


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        report.acceptance_label = marker.args[0]


@pytest.hookimpl(trylast=True)
def pytest_runtest_logreport(report):
    """One verdict line per acceptance test, past capture, pass or fail."""
    label = getattr(report, "acceptance_label", None)
    if label is None or _config is None:
        return
    # Looked up lazily: the terminal plugin registers after conftest.
    terminal = _config.pluginmanager.get_plugin("terminalreporter")
    if terminal is None:
        return
    status = "pass" if report.passed else "FAIL"
    terminal.ensure_newline()
    terminal.write_line(f"ACCEPTANCE {status}  {label}")

T0 = utc(2024, 1, 1)


class FakeClock:
    """Manually advanced clock; starts at T0."""

    def __init__(self, start: datetime = T0) -> None:
        self._now = start

    def now(self) -> datetime:
        return self._now

    def advance(self, seconds: float) -> datetime:
        self._now += timedelta(seconds=seconds)
        return self._now


CARDS = [
    # (uid, holder, pin, role, phone)
    ("9ABC1234", "Shravan", "1234", Role.STUDENT, "+919876543210"),
    ("11112222", "Asha", "4321", Role.STUDENT, "+919876500001"),
    ("AB00CD00", "Meera", "2468", Role.STAFF, ""),
    ("DEADBEEF", "Vendor Desk", "9999", Role.VENDOR, "+919876599999"),
]


def build_registry(now: datetime = T0) -> CardRegistry:
    registry = CardRegistry()
    for i, (uid, holder, pin, role, phone) in enumerate(CARDS):
        registry.register(make_card(uid, holder, pin, role, now,
                                    owner_phone=phone,
                                    salt=bytes([i]) * 16))
    return registry


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def registry() -> CardRegistry:
    return build_registry()


@pytest.fixture
def config() -> PlatformConfig:
    return PlatformConfig()


@pytest.fixture
def world(clock: FakeClock) -> World:
    """Fresh world on the fake clock with the standard cards registered."""
    w = World(PlatformConfig(), clock=clock, modem=Modem(now_fn=clock.now))
    for i, (uid, holder, pin, role, phone) in enumerate(CARDS):
        w.register_card(uid, holder, pin, role.value, owner_phone=phone,
                        salt=bytes([i]) * 16)
    return w
