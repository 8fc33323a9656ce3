"""Access-request lifecycle: state machine, legal deadlines, due actions.

The transition table is the single source of truth; it is exported as JSON
so tests and the dashboard consume the same relation the code executes.
Deadline arithmetic always runs through the configured policy; there is no
hard-coded legal window anywhere else in the codebase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from enum import Enum

from . import errors
from .model import Actor, IdAllocator
from .registry import Registry
from .vault import AuditLog


class RequestState(str, Enum):
    DRAFT = "Draft"
    SENT = "Sent"
    REMINDED = "Reminded"
    EXTENDED = "Extended"
    RESPONDED = "Responded"
    ASSESSED = "Assessed"
    ESCALATED = "Escalated"
    WITHDRAWN = "Withdrawn"
    CLOSED = "Closed"


class RequestEvent(str, Enum):
    SEND = "send"
    CONTROLLER_ACK = "controller_ack"
    EXTENSION_CLAIMED = "extension_claimed"
    RESPONSE_RECEIVED = "response_received"
    REMINDER_SENT = "reminder_sent"
    PARTICIPANT_WITHDRAW = "participant_withdraw"
    ESCALATE = "escalate"
    ASSESS = "assess"
    CLOSE = "close"


def _build_transitions() -> dict[tuple[RequestState, RequestEvent], RequestState]:
    S, E = RequestState, RequestEvent
    table: dict[tuple[RequestState, RequestEvent], RequestState] = {
        (S.DRAFT, E.SEND): S.SENT,
        (S.SENT, E.CONTROLLER_ACK): S.SENT,
        (S.SENT, E.REMINDER_SENT): S.REMINDED,
        (S.SENT, E.EXTENSION_CLAIMED): S.EXTENDED,
        (S.REMINDED, E.EXTENSION_CLAIMED): S.EXTENDED,
        (S.SENT, E.RESPONSE_RECEIVED): S.RESPONDED,
        (S.REMINDED, E.RESPONSE_RECEIVED): S.RESPONDED,
        (S.EXTENDED, E.RESPONSE_RECEIVED): S.RESPONDED,
        (S.RESPONDED, E.ASSESS): S.ASSESSED,
        (S.SENT, E.ESCALATE): S.ESCALATED,
        (S.REMINDED, E.ESCALATE): S.ESCALATED,
        (S.EXTENDED, E.ESCALATE): S.ESCALATED,
        (S.ASSESSED, E.CLOSE): S.CLOSED,
        (S.ESCALATED, E.CLOSE): S.CLOSED,
        (S.WITHDRAWN, E.CLOSE): S.CLOSED,
    }
    for state in S:
        if state != S.CLOSED:
            table[(state, E.PARTICIPANT_WITHDRAW)] = S.WITHDRAWN
    return table


TRANSITIONS = _build_transitions()

TERMINAL_FOR_WITHDRAW = (RequestState.WITHDRAWN, RequestState.CLOSED)


def transition_table_json() -> str:
    """Machine-readable transition table (state -> event -> next state)."""
    table: dict[str, dict[str, str]] = {}
    for (state, event), target in TRANSITIONS.items():
        table.setdefault(state.value, {})[event.value] = target.value
    return json.dumps(
        {
            "states": [s.value for s in RequestState],
            "events": [e.value for e in RequestEvent],
            "transitions": {s: dict(sorted(ev.items())) for s, ev in sorted(table.items())},
        },
        indent=2,
        sort_keys=True,
    )


@dataclass
class DeadlinePolicy:
    response_window_days: int = 30
    extension_window_days: int = 60
    reminder_lead_days: int = 7

    def __post_init__(self):
        for name in ("response_window_days", "extension_window_days", "reminder_lead_days"):
            if getattr(self, name) <= 0:
                raise errors.InvalidConfig(f"{name} must be strictly positive")

    def to_dict(self) -> dict:
        return {
            "response_window_days": self.response_window_days,
            "extension_window_days": self.extension_window_days,
            "reminder_lead_days": self.reminder_lead_days,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DeadlinePolicy":
        return cls(**data)


@dataclass
class RequestEventRecord:
    at: datetime
    event: RequestEvent
    from_state: RequestState
    to_state: RequestState


@dataclass
class AccessRequest:
    id: str
    participant_id: str
    controller_id: str
    state: RequestState = RequestState.DRAFT
    sent_at: datetime | None = None
    deadline: date | None = None
    extension_until: date | None = None
    thread_id: str | None = None
    events: list[RequestEventRecord] = field(default_factory=list)

    @property
    def effective_deadline(self) -> date | None:
        return self.extension_until if self.extension_until is not None else self.deadline

    @property
    def pair(self) -> tuple[str, str]:
        return (self.participant_id, self.controller_id)


def apply_transition(request: AccessRequest, event: RequestEvent, at: datetime,
                     policy: DeadlinePolicy) -> AccessRequest:
    """Mutate request per the table; raises IllegalTransition otherwise."""
    key = (request.state, event)
    if key not in TRANSITIONS:
        raise errors.IllegalTransition(request.state.value, event.value,
                                       subject_refs=[request.id])
    from_state = request.state
    to_state = TRANSITIONS[key]
    if event == RequestEvent.SEND:
        request.sent_at = at
        request.deadline = at.date() + timedelta(days=policy.response_window_days)
    elif event == RequestEvent.EXTENSION_CLAIMED:
        request.extension_until = request.deadline + timedelta(
            days=policy.extension_window_days)
    request.state = to_state
    request.events.append(RequestEventRecord(at, event, from_state, to_state))
    return request


def replay(event_log: list[RequestEventRecord]) -> RequestState:
    """Fold the recorded events over the table from Draft (determinism check)."""
    state = RequestState.DRAFT
    for record in event_log:
        state = TRANSITIONS[(state, record.event)]
    return state


@dataclass(frozen=True)
class DueAction:
    request_id: str
    suggestion: str  # "reminder" | "escalate"
    overdue_days: int
    effective_deadline: date


class RequestBook:
    """Holds all access requests; apply_event is the only mutation path."""

    def __init__(self, registry: Registry, audit: AuditLog, policy: DeadlinePolicy,
                 thread_factory=None):
        self._registry = registry
        self._audit = audit
        self.policy = policy
        self._thread_factory = thread_factory  # (request) -> thread id
        self._ids = IdAllocator()
        self.requests: dict[str, AccessRequest] = {}
        registry.add_revocation_listener(self._on_revoked)

    def open_request(self, participant_id: str, controller_id: str,
                     now: datetime) -> AccessRequest:
        grant = self._registry.active_grant(participant_id, controller_id)
        if grant is None or not grant.scopes.communicate:
            raise errors.ConsentMissing(
                f"no active communication consent for ({participant_id}, {controller_id})",
                subject_refs=[participant_id, controller_id],
            )
        target_list = self._registry.target_list
        if target_list is None or not target_list.is_confirmed(participant_id, controller_id):
            raise errors.NotOnTargetList(
                f"pair ({participant_id}, {controller_id}) lacks a confirmed final say",
                subject_refs=[participant_id, controller_id],
            )
        request = AccessRequest(
            id=self._ids.next("r"),
            participant_id=participant_id,
            controller_id=controller_id,
        )
        if self._thread_factory is not None:
            request.thread_id = self._thread_factory(request)
        self.requests[request.id] = request
        self._audit.append(Actor.RESEARCHER.value, "request.opened",
                           [request.id, participant_id, controller_id], now)
        return request

    def get(self, request_id: str) -> AccessRequest:
        try:
            return self.requests[request_id]
        except KeyError:
            raise errors.NotFound(f"no request {request_id!r}",
                                  subject_refs=[request_id]) from None

    def apply_event(self, request_id: str, event: RequestEvent,
                    at: datetime) -> AccessRequest:
        request = self.get(request_id)
        apply_transition(request, event, at, self.policy)
        self._audit.append(Actor.SYSTEM.value, "request.transition",
                           [request.id, event.value, request.state.value], at)
        return request

    def due_actions(self, now: datetime) -> list[DueAction]:
        """Overdue report, most-overdue first. Pure read; suggests, never acts."""
        today = now.date()
        lead = timedelta(days=self.policy.reminder_lead_days)
        out: list[DueAction] = []
        for request in self.requests.values():
            deadline = request.effective_deadline
            if deadline is None:
                continue
            if today <= deadline + lead:
                continue
            if request.state == RequestState.SENT:
                suggestion = "reminder"
            elif request.state in (RequestState.REMINDED, RequestState.EXTENDED):
                suggestion = "escalate"
            else:
                continue
            out.append(DueAction(
                request_id=request.id,
                suggestion=suggestion,
                overdue_days=(today - deadline).days,
                effective_deadline=deadline,
            ))
        out.sort(key=lambda a: (-a.overdue_days, a.request_id))
        return out

    def for_pair(self, participant_id: str, controller_id: str) -> list[AccessRequest]:
        return [r for r in self.requests.values()
                if r.pair == (participant_id, controller_id)]

    def by_thread(self, thread_id: str) -> AccessRequest | None:
        for r in self.requests.values():
            if r.thread_id == thread_id:
                return r
        return None

    def _on_revoked(self, participant_id: str, controller_id: str, at: datetime) -> None:
        # Withdraw every request for the pair that is still in play.
        for request in self.for_pair(participant_id, controller_id):
            if request.state not in TERMINAL_FOR_WITHDRAW:
                self.apply_event(request.id, RequestEvent.PARTICIPANT_WITHDRAW, at)

    # -- persistence -------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "ids": self._ids.to_dict(),
            "requests": [
                {
                    "id": r.id,
                    "participant_id": r.participant_id,
                    "controller_id": r.controller_id,
                    "state": r.state.value,
                    "sent_at": r.sent_at.isoformat() if r.sent_at else None,
                    "deadline": r.deadline.isoformat() if r.deadline else None,
                    "extension_until": (
                        r.extension_until.isoformat() if r.extension_until else None
                    ),
                    "thread_id": r.thread_id,
                    "events": [
                        {
                            "at": e.at.isoformat(),
                            "event": e.event.value,
                            "from_state": e.from_state.value,
                            "to_state": e.to_state.value,
                        }
                        for e in r.events
                    ],
                }
                for r in self.requests.values()
            ],
        }

    def load_dict(self, data: dict) -> None:
        self._ids = IdAllocator(data["ids"])
        for rd in data["requests"]:
            request = AccessRequest(
                id=rd["id"],
                participant_id=rd["participant_id"],
                controller_id=rd["controller_id"],
                state=RequestState(rd["state"]),
                sent_at=datetime.fromisoformat(rd["sent_at"]) if rd["sent_at"] else None,
                deadline=date.fromisoformat(rd["deadline"]) if rd["deadline"] else None,
                extension_until=(
                    date.fromisoformat(rd["extension_until"])
                    if rd["extension_until"] else None
                ),
                thread_id=rd["thread_id"],
                events=[
                    RequestEventRecord(
                        at=datetime.fromisoformat(e["at"]),
                        event=RequestEvent(e["event"]),
                        from_state=RequestState(e["from_state"]),
                        to_state=RequestState(e["to_state"]),
                    )
                    for e in rd["events"]
                ],
            )
            self.requests[request.id] = request
