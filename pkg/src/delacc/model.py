"""Shared primitives: actors, campaign record, deterministic id allocation."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timezone
from enum import Enum


class Actor(str, Enum):
    RESEARCHER = "researcher"
    PARTICIPANT = "participant"
    CONTROLLER = "controller"
    SYSTEM = "system"


class CampaignStatus(str, Enum):
    OPEN = "open"
    WRAP_UP = "wrap_up"
    CLOSED = "closed"


@dataclass
class Campaign:
    id: str
    name: str
    status: CampaignStatus = CampaignStatus.OPEN
    started_at: datetime | None = None
    stopped_at: datetime | None = None
    export_completed: bool = False

    def enter_wrap_up(self, at: datetime) -> None:
        self.status = CampaignStatus.WRAP_UP
        self.stopped_at = at

    def close(self) -> None:
        self.status = CampaignStatus.CLOSED

    @property
    def duration_days(self) -> int:
        if self.started_at is None or self.stopped_at is None:
            return 0
        return (self.stopped_at.date() - self.started_at.date()).days


class IdAllocator:
    """Sequential per-prefix ids ("p1", "c3", ...); deterministic given call order."""

    def __init__(self, counters: dict[str, int] | None = None):
        self._counters: dict[str, int] = dict(counters or {})

    def next(self, prefix: str) -> str:
        n = self._counters.get(prefix, 0) + 1
        self._counters[prefix] = n
        return f"{prefix}{n}"

    def to_dict(self) -> dict[str, int]:
        return dict(self._counters)


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def iso(ts: datetime | date | None) -> str | None:
    return ts.isoformat() if ts is not None else None


def parse_dt(value: str | None) -> datetime | None:
    return datetime.fromisoformat(value) if value else None


def parse_date(value: str | None) -> date | None:
    return date.fromisoformat(value) if value else None
