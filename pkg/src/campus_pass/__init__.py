"""Campus access platform: RFID doors, attendance, payments, one event log.

The public surface re-exports the pieces most callers need; the modules
themselves stay importable for everything else.
"""

from .door import DoorContext, DoorState, render_alert_text, step
from .events import EventStore, load_event_log
from .model import (
    CardRecord,
    CardRegistry,
    EventRecord,
    PlatformConfig,
    Role,
    make_card,
    parse_uid,
    verify_pin,
)
from .sim import run_scenario
from .world import World

__version__ = "0.1.0"

__all__ = [
    "CardRecord",
    "CardRegistry",
    "DoorContext",
    "DoorState",
    "EventRecord",
    "EventStore",
    "PlatformConfig",
    "Role",
    "World",
    "__version__",
    "load_event_log",
    "make_card",
    "parse_uid",
    "render_alert_text",
    "run_scenario",
    "step",
    "verify_pin",
]
