"""Ordered, byte-stable session event log (JSON Lines)."""

from __future__ import annotations

import json
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

EVENT_KINDS = (
    "check_state",
    "check_data",
    "calibrate",
    "diagnose_enter",
    "diagnose_exit",
    "param_update",
    "error",
)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass(frozen=True)
class Event:
    t: float
    event: str
    node: str
    outcome: str
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        # key order is part of the file format
        return json.dumps({
            "t": float(self.t),
            "event": self.event,
            "node": self.node,
            "outcome": self.outcome,
            "detail": _plain(self.detail),
        })


class EventLog:
    def __init__(self):
        self.events: list[Event] = []

    def emit(self, t: float, event: str, node: str, outcome: str, detail: dict | None = None) -> Event:
        if event not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {event!r}")
        ev = Event(t, event, node, outcome, detail or {})
        self.events.append(ev)
        return ev

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def since(self, mark: int) -> list[Event]:
        return self.events[mark:]

    def to_jsonl(self) -> str:
        return "".join(ev.to_json() + "\n" for ev in self.events)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())
