"""Response assessment and campaign statistics.

A request's verdict comes from three ingredients: whether a substantive
response arrived at all, whether the first substantive response beat the
effective deadline, and which of the five content dimensions the response
covered. "Substantive" is an operator judgment recorded during triage;
acknowledgments and demands for extra identification do not count.

Verdict rules:
    no response at all            -> no_response
    on time and all five covered  -> compliant
    responded, zero dimensions    -> non_compliant
    anything else                 -> partial
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from datetime import datetime
from enum import Enum

from . import errors
from .lifecycle import AccessRequest, DeadlinePolicy, RequestState
from .mailroom import Direction, Thread
from .model import Campaign

COMPLETENESS_DIMENSIONS = ("data_copy", "source", "purposes", "recipients", "retention")


@dataclass(frozen=True)
class Completeness:
    data_copy: bool = False
    source: bool = False
    purposes: bool = False
    recipients: bool = False
    retention: bool = False

    def all(self) -> bool:
        return all(getattr(self, d) for d in COMPLETENESS_DIMENSIONS)

    def any(self) -> bool:
        return any(getattr(self, d) for d in COMPLETENESS_DIMENSIONS)

    def to_dict(self) -> dict:
        return {d: getattr(self, d) for d in COMPLETENESS_DIMENSIONS}

    @classmethod
    def full(cls) -> "Completeness":
        return cls(True, True, True, True, True)

    @classmethod
    def none(cls) -> "Completeness":
        return cls()


class Verdict(str, Enum):
    COMPLIANT = "compliant"
    PARTIAL = "partial"
    NON_COMPLIANT = "non_compliant"
    NO_RESPONSE = "no_response"


def verdict_for(responded: bool, within_deadline: bool,
                completeness: Completeness) -> Verdict:
    """Total over all flag combinations; responded=False dominates."""
    if not responded:
        return Verdict.NO_RESPONSE
    if within_deadline and completeness.all():
        return Verdict.COMPLIANT
    if not completeness.any():
        return Verdict.NON_COMPLIANT
    return Verdict.PARTIAL


@dataclass
class ComplianceAssessment:
    request_id: str
    responded: bool
    within_deadline: bool
    completeness: Completeness
    verdict: Verdict

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "responded": self.responded,
            "within_deadline": self.within_deadline,
            "completeness": self.completeness.to_dict(),
            "verdict": self.verdict.value,
        }


ASSESSABLE_STATES = (RequestState.RESPONDED, RequestState.ASSESSED,
                     RequestState.ESCALATED, RequestState.WITHDRAWN,
                     RequestState.CLOSED)


def first_substantive_response(thread: Thread) -> datetime | None:
    stamps = [m.envelope.timestamp for m in thread.messages
              if m.direction == Direction.INBOUND and m.substantive]
    return min(stamps) if stamps else None


def assess_response(request: AccessRequest, thread: Thread, policy: DeadlinePolicy,
                    completeness: Completeness, now: datetime) -> ComplianceAssessment:
    """Derive timeliness from the thread; completeness is operator-entered."""
    deadline = request.effective_deadline
    past_deadline = deadline is not None and now.date() > deadline
    if request.state not in ASSESSABLE_STATES and not past_deadline:
        raise errors.TooEarly(
            f"request {request.id} is {request.state.value} and its deadline "
            f"has not passed",
            subject_refs=[request.id],
        )
    first = first_substantive_response(thread)
    responded = first is not None
    within = bool(responded and deadline is not None and first.date() <= deadline)
    return ComplianceAssessment(
        request_id=request.id,
        responded=responded,
        within_deadline=within,
        completeness=completeness if responded else Completeness.none(),
        verdict=verdict_for(responded, within, completeness if responded
                            else Completeness.none()),
    )


@dataclass
class TimeLogEntry:
    request_id: str
    role: str  # "researcher" | "participant"
    minutes: float
    note: str = ""


@dataclass
class CampaignStats:
    controllers: int
    researchers: int
    participants: int
    duration_days: int
    response_rate: float
    compliance_rate: float
    minutes_per_request_researcher: float
    minutes_per_request_participant: float

    def __post_init__(self):
        if not 0.0 <= self.compliance_rate <= self.response_rate <= 1.0:
            raise ValueError(
                f"need 0 <= compliance ({self.compliance_rate}) <= "
                f"response ({self.response_rate}) <= 1"
            )

    def to_dict(self) -> dict:
        return {
            "controllers": self.controllers,
            "researchers": self.researchers,
            "participants": self.participants,
            "duration_days": self.duration_days,
            "response_rate": self.response_rate,
            "compliance_rate": self.compliance_rate,
            "minutes_per_request_researcher": self.minutes_per_request_researcher,
            "minutes_per_request_participant": self.minutes_per_request_participant,
        }


def campaign_stats(campaign: Campaign, assessments: list[ComplianceAssessment],
                   time_logs: list[TimeLogEntry], *, controllers: int,
                   researchers: int, participants: int) -> CampaignStats:
    """Rates are per request; time stats are total logged minutes / requests."""
    total = len(assessments)
    if total == 0:
        raise errors.EmptyCampaign(f"campaign {campaign.id} has no assessed requests",
                                   subject_refs=[campaign.id])
    responded = sum(1 for a in assessments if a.responded)
    compliant = sum(1 for a in assessments if a.verdict == Verdict.COMPLIANT)
    researcher_minutes = sum(t.minutes for t in time_logs if t.role == "researcher")
    participant_minutes = sum(t.minutes for t in time_logs if t.role == "participant")
    return CampaignStats(
        controllers=controllers,
        researchers=researchers,
        participants=participants,
        duration_days=campaign.duration_days,
        response_rate=responded / total,
        compliance_rate=compliant / total,
        minutes_per_request_researcher=researcher_minutes / total,
        minutes_per_request_participant=participant_minutes / total,
    )


# -- comparison report -----------------------------------------------------------

REPORT_COLUMNS = (
    "study", "controllers", "researchers", "participants", "access_duration",
    "time_per_request_researcher", "time_per_request_participant", "response",
)


@dataclass(frozen=True)
class ComparisonRow:
    """One study row; cells are preformatted strings, missing values are "-"."""

    study: str
    controllers: str
    researchers: str
    participants: str
    access_duration: str
    time_per_request_researcher: str
    time_per_request_participant: str
    response: str

    def cells(self) -> tuple[str, ...]:
        return tuple(getattr(self, col) for col in REPORT_COLUMNS)


def format_minutes(minutes: float) -> str:
    if minutes <= 0:
        return "-"
    if minutes < 60:
        n = int(round(minutes))
        return f"{n} minute" if n == 1 else f"{n} minutes"
    hours = minutes / 60.0
    if hours == int(hours):
        n = int(hours)
        return f"{n} hour" if n == 1 else f"{n} hours"
    return f"{hours:g} hours"


def format_duration_days(days: int) -> str:
    if days <= 0:
        return "-"
    months = max(1, round(days / 30.44))
    return f"{months} month" if months == 1 else f"{months} months"


def format_rate(rate: float) -> str:
    return f"{round(rate * 100):d}%"


def row_from_stats(study: str, stats: CampaignStats) -> ComparisonRow:
    return ComparisonRow(
        study=study,
        controllers=str(stats.controllers),
        researchers=str(stats.researchers),
        participants=str(stats.participants),
        access_duration=format_duration_days(stats.duration_days),
        time_per_request_researcher=format_minutes(stats.minutes_per_request_researcher),
        time_per_request_participant=format_minutes(stats.minutes_per_request_participant),
        response=format_rate(stats.response_rate),
    )


def comparison_report_csv(rows: list[ComparisonRow]) -> str:
    if not rows:
        raise ValueError("comparison report needs at least one row")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow(row.cells())
    return buf.getvalue()


def comparison_report_json(rows: list[ComparisonRow]) -> str:
    if not rows:
        raise ValueError("comparison report needs at least one row")
    return json.dumps(
        [dict(zip(REPORT_COLUMNS, row.cells())) for row in rows],
        indent=2, sort_keys=True,
    )
