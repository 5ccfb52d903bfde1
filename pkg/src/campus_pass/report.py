"""Offline reporting: turn an event log into CSV plus rendered figures.

The `report` CLI subcommand drives this. Figures are written as PNG
files next to the delimited export so a run's outcome can be reviewed
without any server running.
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # file rendering only; never needs a display

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .model import EventRecord, rfc3339  # noqa: E402
from .world import World  # noqa: E402


def write_events_csv(records: list[EventRecord], path: Path) -> None:
    lines = ["seq,ts,source,kind,data"]
    for rec in records:
        data = json.dumps(rec.data, sort_keys=True, separators=(",", ":"))
        quoted = '"' + data.replace('"', '""') + '"'
        lines.append(f"{rec.seq},{rfc3339(rec.ts)},{rec.source},{rec.kind},"
                     f"{quoted}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _render_timeline(records: list[EventRecord], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(9, 4.5))
    if records:
        kinds = sorted({r.kind for r in records})
        lane = {kind: i for i, kind in enumerate(kinds)}
        t0 = records[0].ts
        xs = [(r.ts - t0).total_seconds() for r in records]
        ys = [lane[r.kind] for r in records]
        ax.scatter(xs, ys, s=18)
        ax.set_yticks(range(len(kinds)))
        ax.set_yticklabels(kinds, fontsize=8)
    ax.set_xlabel("seconds since first event")
    ax.set_title("event timeline")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _render_balances(world: World, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    accounts = sorted(world.payments.accounts.values(), key=lambda a: a.uid)
    if accounts:
        ax.bar([a.uid for a in accounts],
               [a.balance_minor for a in accounts])
        ax.tick_params(axis="x", rotation=45, labelsize=8)
    ax.set_ylabel("balance (minor units)")
    ax.set_title("account balances")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _render_attendance(records: list[EventRecord], path: Path) -> None:
    counts = Counter(r.data.get("session_id", "?")
                     for r in records if r.kind == "attendance_accepted")
    fig, ax = plt.subplots(figsize=(7, 4))
    if counts:
        sessions = sorted(counts)
        ax.bar(sessions, [counts[s] for s in sessions])
        ax.tick_params(axis="x", rotation=45, labelsize=8)
    ax.set_ylabel("accepted check-ins")
    ax.set_title("attendance per session")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_report(records: list[EventRecord], out_dir: str | Path) -> list[Path]:
    """Write events.csv and the standard figures; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = World.replay(records)
    paths = [out / "events.csv", out / "timeline.png",
             out / "balances.png", out / "attendance.png"]
    write_events_csv(records, paths[0])
    _render_timeline(records, paths[1])
    _render_balances(world, paths[2])
    _render_attendance(records, paths[3])
    return paths
