"""Deterministic simulated controllers for full-campaign integration runs.

Each simulated controller follows a small script chosen from the behavior
kinds observed in real campaigns: prompt full responders, late partial
responders, silent organizations, demands for extra identification,
challenges to the delegation's validity, extension claims, and direct
pleas to the participant to withdraw. Latencies are drawn from per-kind
ranges using a per-controller seeded RNG, so a scenario file plus a seed
reproduces the identical trace, byte for byte.

The harness drives the real modules end to end (registration, consent,
target selection, letter rendering, routing, ingestion, lifecycle events,
assessment, statistics) over the in-memory transport, and asserts the
routing invariants at every step.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from email.utils import format_datetime
from enum import Enum
from pathlib import Path

from . import errors
from .analytics import COMPLETENESS_DIMENSIONS, CampaignStats, Completeness
from .letters import LetterKind
from .lifecycle import DeadlinePolicy, RequestEvent, RequestState
from .mailroom import AuthorRole, InMemoryTransport, QuarantineItem
from .model import Actor
from .registry import Channel, ConsentScopes, ContactKind, LocaleClass, ProofKind, SizeClass
from .workspace import Workspace


class ProfileKind(str, Enum):
    PROMPT_FULL = "prompt_full"
    LATE_PARTIAL = "late_partial"
    SILENT = "silent"
    EXTRA_ID_DEMAND = "extra_id_demand"
    LEGALITY_CHALLENGE = "legality_challenge"
    EXTENSION_THEN_FULL = "extension_then_full"
    DIRECT_PLEA = "direct_plea"


# (first action window, follow-up window) in days; semantics differ per kind.
DEFAULT_LATENCIES: dict[ProfileKind, tuple[tuple[int, int], tuple[int, int]]] = {
    ProfileKind.PROMPT_FULL: ((5, 25), (0, 0)),
    ProfileKind.LATE_PARTIAL: ((35, 70), (0, 0)),
    ProfileKind.SILENT: ((0, 0), (0, 0)),
    ProfileKind.EXTRA_ID_DEMAND: ((3, 8), (5, 15)),
    ProfileKind.LEGALITY_CHALLENGE: ((3, 5), (5, 20)),
    ProfileKind.EXTENSION_THEN_FULL: ((10, 20), (10, 50)),
    ProfileKind.DIRECT_PLEA: ((5, 10), (15, 28)),
}

DEFAULT_COMPLETENESS: dict[ProfileKind, Completeness] = {
    ProfileKind.PROMPT_FULL: Completeness.full(),
    ProfileKind.LATE_PARTIAL: Completeness(True, True, True, False, False),
    ProfileKind.SILENT: Completeness.none(),
    ProfileKind.EXTRA_ID_DEMAND: Completeness.full(),
    ProfileKind.LEGALITY_CHALLENGE: Completeness.full(),
    ProfileKind.EXTENSION_THEN_FULL: Completeness.full(),
    ProfileKind.DIRECT_PLEA: Completeness(True, False, True, False, False),
}

RESPONDING_KINDS = tuple(k for k in ProfileKind if k != ProfileKind.SILENT)

# Subject markers the simulated operator keys triage on.
SUBJ_ACK = "Acknowledgment of your request"
SUBJ_RESPONSE = "Re: Access request"
SUBJ_EXTENSION = "Extension claim"
SUBJ_ID_DEMAND = "Additional identification required"
SUBJ_DISPUTE = "Delegation validity disputed"
SUBJ_PLEA = "Please withdraw your request"
DIMENSIONS_MARKER = "DIMENSIONS:"


@dataclass(frozen=True)
class ControllerProfile:
    kind: ProfileKind
    latency_days: tuple[int, int]
    followup_days: tuple[int, int]
    completeness_mask: Completeness
    rng_seed_offset: int = 0

    @classmethod
    def of(cls, kind: ProfileKind, *, latency_days: tuple[int, int] | None = None,
           followup_days: tuple[int, int] | None = None,
           completeness: Completeness | None = None,
           rng_seed_offset: int = 0) -> "ControllerProfile":
        lat, follow = DEFAULT_LATENCIES[kind]
        return cls(
            kind=kind,
            latency_days=latency_days or lat,
            followup_days=followup_days or follow,
            completeness_mask=(completeness if completeness is not None
                               else DEFAULT_COMPLETENESS[kind]),
            rng_seed_offset=rng_seed_offset,
        )


@dataclass
class SimConfig:
    name: str
    seed: int
    horizon_days: int
    participants: int
    policy: DeadlinePolicy
    profiles: list[ControllerProfile]
    start: date = date(2018, 6, 5)
    per_participant_cap: int = 12
    per_controller_cap: int = 5
    researcher_minutes_total: float = 0.0
    participant_minutes_total: float = 0.0

    def __post_init__(self):
        if self.horizon_days <= self.policy.response_window_days:
            raise errors.InvalidConfig(
                "horizon_days must exceed the response window"
            )
        if self.participants <= 0 or not self.profiles:
            raise errors.InvalidConfig("need at least one participant and one profile")


def load_scenario(source: dict | str | Path) -> SimConfig:
    """Scenario JSON -> SimConfig; controller groups expand via their count."""
    if not isinstance(source, dict):
        source = json.loads(Path(source).read_text(encoding="utf-8"))
    profiles: list[ControllerProfile] = []
    for group in source.get("controller_groups", []):
        kind = ProfileKind(group["kind"])
        completeness = None
        if "completeness" in group:
            completeness = Completeness(**group["completeness"])
        for _ in range(group.get("count", 1)):
            profiles.append(ControllerProfile.of(
                kind,
                latency_days=(tuple(group["latency_days"])
                              if "latency_days" in group else None),
                followup_days=(tuple(group["followup_days"])
                               if "followup_days" in group else None),
                completeness=completeness,
                rng_seed_offset=len(profiles),
            ))
    policy = DeadlinePolicy.from_dict(source.get("policy", {})) if source.get("policy") \
        else DeadlinePolicy()
    caps = source.get("caps", {})
    minutes = source.get("minutes_logged", {})
    return SimConfig(
        name=source.get("name", "scenario"),
        seed=source["seed"],
        horizon_days=source["horizon_days"],
        participants=source["participants"],
        policy=policy,
        profiles=profiles,
        start=date.fromisoformat(source.get("start", "2018-06-05")),
        per_participant_cap=caps.get("per_participant", 12),
        per_controller_cap=caps.get("per_controller", 5),
        researcher_minutes_total=minutes.get("researcher", 0.0),
        participant_minutes_total=minutes.get("participant", 0.0),
    )


SURNAME_POOL = (
    "Jansen", "Bakker", "Visser", "Smit", "Meijer", "Mulder", "Bos",
    "Vos", "Peters", "Hendriks", "Dekker", "Brouwer", "Dijkstra", "Smits",
)


@dataclass
class _SimController:
    """Scripted behavior for one controller's side of one thread."""

    controller_id: str
    contact_address: str
    profile: ControllerProfile
    rng: random.Random
    participant_mailbox: str = ""
    request_message_id: str | None = None  # RFC id of the letter we reply to
    scheduled: list[tuple[int, str]] = field(default_factory=list)
    emitted_response: bool = False
    counter: int = 0

    def on_request_letter(self, day: int, rfc_message_id: str | None,
                          participant_mailbox: str, deadline_day: int) -> None:
        self.request_message_id = rfc_message_id
        self.participant_mailbox = participant_mailbox
        kind = self.profile.kind
        lo, hi = self.profile.latency_days
        if kind == ProfileKind.SILENT:
            return
        first = day + self.rng.randint(lo, hi)
        if kind == ProfileKind.PROMPT_FULL:
            if first - day > 3:
                self.scheduled.append((day + 2, "ack"))
            self.scheduled.append((first, "respond"))
        elif kind == ProfileKind.LATE_PARTIAL:
            self.scheduled.append((first, "respond"))
        elif kind == ProfileKind.EXTRA_ID_DEMAND:
            self.scheduled.append((first, "demand_id"))
        elif kind == ProfileKind.LEGALITY_CHALLENGE:
            self.scheduled.append((first, "dispute"))
        elif kind == ProfileKind.EXTENSION_THEN_FULL:
            lo2, hi2 = self.profile.followup_days
            self.scheduled.append((first, "claim_extension"))
            self.scheduled.append((deadline_day + self.rng.randint(lo2, hi2), "respond"))
        elif kind == ProfileKind.DIRECT_PLEA:
            lo2, hi2 = self.profile.followup_days
            self.scheduled.append((first, "plea"))
            self.scheduled.append((day + self.rng.randint(lo2, hi2), "respond"))

    def on_researcher_reply(self, day: int, kind: str) -> None:
        """kind is "id_supplied" or "rebuttal"; both unblock the full response."""
        expected = ("id_supplied" if self.profile.kind == ProfileKind.EXTRA_ID_DEMAND
                    else "rebuttal")
        if kind != expected or self.emitted_response:
            return
        lo2, hi2 = self.profile.followup_days
        self.scheduled.append((day + self.rng.randint(lo2, hi2), "respond"))

    def actions_for(self, day: int) -> list[str]:
        due = sorted(action for d, action in self.scheduled if d == day)
        return due

    def build_email(self, action: str, at: datetime) -> str:
        self.counter += 1
        domain = self.contact_address.rsplit("@", 1)[-1]
        subjects = {
            "ack": SUBJ_ACK,
            "respond": SUBJ_RESPONSE,
            "claim_extension": SUBJ_EXTENSION,
            "demand_id": SUBJ_ID_DEMAND,
            "dispute": SUBJ_DISPUTE,
            "plea": SUBJ_PLEA,
        }
        bodies = {
            "ack": "We confirm receipt of your request.",
            "claim_extension": "Due to the volume of requests we claim an "
                               "extension of the response period.",
            "demand_id": "Before we can process this request we require "
                         "additional identification, such as an email address "
                         "or telephone number we have on file.",
            "dispute": "We do not acknowledge the validity of a request "
                       "submitted on someone else's behalf.",
            "plea": "Answering this request is a lot of work for us. "
                    "Would you consider withdrawing it?",
        }
        if action == "respond":
            self.emitted_response = True
            dims = ",".join(d for d in COMPLETENESS_DIMENSIONS
                            if getattr(self.profile.completeness_mask, d))
            body = ("Please find the requested information below.\n"
                    f"{DIMENSIONS_MARKER} {dims}")
        else:
            body = bodies[action]
        headers = [
            f"From: {self.contact_address}",
            f"To: {self.participant_mailbox}",
            f"Date: {format_datetime(at)}",
            f"Subject: {subjects[action]}",
            f"Message-ID: <sim-{self.controller_id}-{self.counter}@{domain}>",
        ]
        if self.request_message_id:
            headers.append(f"In-Reply-To: {self.request_message_id}")
        return "\n".join(headers) + "\n\n" + body


@dataclass
class SimResult:
    stats: CampaignStats
    trace: list[str]
    workspace: Workspace

    def trace_text(self) -> str:
        return "\n".join(self.trace) + "\n"


def _locale_for(index: int, total: int) -> LocaleClass:
    # Mirror the pilot's 67/23/10 locale split deterministically.
    point = (index + 1) / total
    if point <= 0.67:
        return LocaleClass.LOCAL
    if point <= 0.90:
        return LocaleClass.EU_MULTINATIONAL
    return LocaleClass.NON_EU_MULTINATIONAL


def _size_for(index: int, total: int) -> SizeClass:
    # 55% large / 25% small / rest medium.
    point = (index + 1) / total
    if point <= 0.55:
        return SizeClass.LARGE
    if point <= 0.80:
        return SizeClass.SMALL
    return SizeClass.MEDIUM


class CampaignSimulator:
    """Single-threaded event loop; the sim clock is the only time source."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.master_rng = random.Random(config.seed)
        self.transport = InMemoryTransport()
        self.ws = Workspace(
            project_domain="accessproject.example",
            postal_address="Access Project\nPO Box 1\n2600 AA Delft",
            policy=config.policy,
            per_participant_cap=config.per_participant_cap,
            per_controller_cap=config.per_controller_cap,
            transport=self.transport,
            campaign_name=config.name,
        )
        self.trace: list[str] = []
        self.sim_controllers: dict[str, _SimController] = {}
        self.request_by_controller: dict[str, str] = {}
        self.response_dims: dict[str, Completeness] = {}  # request -> operator read
        self.researcher_queue: list[tuple[int, str, str]] = []  # (day, action, request)
        self.participant_queue: list[tuple[int, str, str]] = []  # (day, action, message)
        self._started = False
        self._next_day = 1

    # -- clock ----------------------------------------------------------------

    def at(self, day: int, hour: int = 12) -> datetime:
        base = datetime(self.config.start.year, self.config.start.month,
                        self.config.start.day, tzinfo=timezone.utc)
        return base + timedelta(days=day, hours=hour)

    def emit(self, day: int, event: str, **fields) -> None:
        record = {"day": day, "event": event}
        record.update(fields)
        self.trace.append(json.dumps(record, sort_keys=True, separators=(",", ":")))

    # -- setup ----------------------------------------------------------------

    def _inception(self) -> None:
        cfg = self.config
        ws = self.ws
        at = self.at(0, 8)
        ws.start_campaign(at)
        ws.set_researcher_proof("researcher identity proof (secured copy)", at)
        self.emit(0, "campaign.start", name=cfg.name, seed=cfg.seed,
                  horizon_days=cfg.horizon_days)

        participants = []
        for i in range(cfg.participants):
            surname = SURNAME_POOL[i % len(SURNAME_POOL)]
            participant = ws.registry.register_participant(
                f"Participant {i + 1} {surname}", surname, Channel.EMAIL, at)
            ws.registry.activate_participant(participant.id, at)
            proof = ws.registry.add_identity_proof(
                participant.id, ProofKind.ID_CARD_COPY, True, at,
                ws.blobs.put_text("proof", f"secured id copy {participant.id}",
                                  label=f"proof/{participant.id}"),
            )
            participants.append(participant)
            self.emit(0, "participant.registered", participant=participant.id,
                      mailbox=ws.mailroom.mailbox_address(participant.id),
                      proof=proof.id)

        total = len(cfg.profiles)
        for i, profile in enumerate(cfg.profiles):
            contact = f"privacy@org{i + 1:03d}.example"
            controller = ws.registry.register_controller(
                f"Organization {i + 1:03d}", ContactKind.EMAIL, contact, at,
                size_class=_size_for(i, total),
                locale_class=_locale_for(i, total),
                sector=profile.kind.value,
            )
            self.sim_controllers[controller.id] = _SimController(
                controller_id=controller.id,
                contact_address=contact,
                profile=profile,
                rng=random.Random(cfg.seed * 1_000_003 + profile.rng_seed_offset),
            )
            self.emit(0, "controller.registered", controller=controller.id,
                      kind=profile.kind.value)

        # Round-robin assignment: controller i belongs to participant i mod n.
        pairs: list[tuple[str, str]] = []
        controller_ids = list(ws.registry.controller_order)
        for i, cid in enumerate(controller_ids):
            pid = participants[i % len(participants)].id
            interest = self.master_rng.randint(3, 10)
            ws.registry.grant_consent(
                pid, cid, ConsentScopes(True, True, True), interest, at)
            pairs.append((pid, cid))

        target_list = ws.registry.select_targets(
            ws.campaign, pairs, at,
            per_participant_cap=cfg.per_participant_cap,
            per_controller_cap=cfg.per_controller_cap,
        )
        for participant in participants:
            cids = [e.controller_id for e in target_list.entries
                    if e.participant_id == participant.id]
            if not cids:
                continue  # nothing to delegate for this participant
            ws.sign_consent_form(participant.id, cids, at)
            ws.registry.confirm_final_say(participant.id, at)
        self.emit(0, "targets.confirmed", entries=len(target_list.entries))

        send_at = self.at(0, 10)
        deadline_day = cfg.policy.response_window_days
        for entry in target_list.entries:
            request = ws.requests.open_request(entry.participant_id,
                                               entry.controller_id, send_at)
            message = ws.send_request_letter(request.id, send_at)
            self.request_by_controller[entry.controller_id] = request.id
            sim = self.sim_controllers[entry.controller_id]
            sim.on_request_letter(
                0, message.envelope.message_id,
                ws.mailroom.mailbox_address(entry.participant_id), deadline_day)
            self.emit(0, "request.sent", request=request.id,
                      participant=entry.participant_id,
                      controller=entry.controller_id,
                      deadline=request.deadline.isoformat())

    # -- per-day processing -----------------------------------------------------

    def _researcher_actions(self, day: int) -> None:
        due = [(d, action, rid) for d, action, rid in self.researcher_queue if d == day]
        self.researcher_queue = [item for item in self.researcher_queue
                                 if item[0] != day]
        for _, action, request_id in due:
            request = self.ws.requests.get(request_id)
            if action == "supply_id":
                participant = self.ws.registry.participants[request.participant_id]
                self.ws.mailroom.send_outbound(
                    request.thread_id, AuthorRole.RESEARCHER,
                    subject=f"Re: {SUBJ_ID_DEMAND}",
                    body=(f"As requested, we confirm the contact details of "
                          f"{participant.legal_name} held on file."),
                    at=self.at(day, 9),
                )
                self.sim_controllers[request.controller_id].on_researcher_reply(
                    day, "id_supplied")
                self.emit(day, "researcher.id_supplied", request=request_id)
            elif action == "rebuttal":
                self.ws.send_followup(request_id, LetterKind.DELEGATION_REBUTTAL,
                                      self.at(day, 9))
                self.sim_controllers[request.controller_id].on_researcher_reply(
                    day, "rebuttal")
                self.emit(day, "researcher.rebuttal_sent", request=request_id)

    def _participant_actions(self, day: int) -> None:
        due = [(d, action, mid) for d, action, mid in self.participant_queue if d == day]
        self.participant_queue = [item for item in self.participant_queue
                                  if item[0] != day]
        for _, action, message_id in due:
            if action == "flag_plea":
                self.ws.mailroom.flag_message(message_id, self.at(day, 9),
                                              direct_plea=True,
                                              actor=Actor.PARTICIPANT)
                self.emit(day, "participant.flagged_plea", message=message_id)

    def _controller_steps(self, day: int) -> None:
        for cid in self.ws.registry.controller_order:
            sim = self.sim_controllers[cid]
            if cid not in self.request_by_controller:
                continue
            for action in sim.actions_for(day):
                raw = sim.build_email(action, self.at(day, 11))
                self.transport.queue_inbound(raw)

    def _ingest_and_triage(self, day: int) -> None:
        ws = self.ws
        for raw in self.transport.poll():
            result = ws.mailroom.ingest_email(raw, received_at=self.at(day, 11))
            if isinstance(result, QuarantineItem):
                self.emit(day, "message.quarantined", item=result.id)
                continue
            message = result
            request = ws.requests.by_thread(message.thread_id)
            subject = message.envelope.subject
            self._assert_routing_invariants(message)
            if subject == SUBJ_ACK:
                if request.state == RequestState.SENT:
                    ws.requests.apply_event(request.id, RequestEvent.CONTROLLER_ACK,
                                            self.at(day, 11))
                self.emit(day, "controller.ack", request=request.id)
            elif subject == SUBJ_EXTENSION:
                if request.state in (RequestState.SENT, RequestState.REMINDED):
                    ws.requests.apply_event(request.id, RequestEvent.EXTENSION_CLAIMED,
                                            self.at(day, 11))
                self.emit(day, "controller.extension_claimed", request=request.id,
                          extension_until=(request.extension_until.isoformat()
                                           if request.extension_until else None))
            elif subject == SUBJ_ID_DEMAND:
                self.researcher_queue.append((day + 1, "supply_id", request.id))
                self.emit(day, "controller.extra_id_demand", request=request.id)
            elif subject == SUBJ_DISPUTE:
                self.researcher_queue.append((day + 1, "rebuttal", request.id))
                self.emit(day, "controller.legality_challenge", request=request.id)
            elif subject == SUBJ_PLEA:
                self.participant_queue.append((day + 1, "flag_plea", message.id))
                self.emit(day, "controller.direct_plea", request=request.id,
                          message=message.id)
            elif subject == SUBJ_RESPONSE:
                body = ws.blobs.get_text(message.body_ref)
                dims = self._parse_dimensions(body)
                ws.mailroom.flag_message(message.id, self.at(day, 11),
                                         substantive=True)
                self.response_dims[request.id] = dims
                if request.state in (RequestState.SENT, RequestState.REMINDED,
                                     RequestState.EXTENDED):
                    ws.requests.apply_event(request.id, RequestEvent.RESPONSE_RECEIVED,
                                            self.at(day, 11))
                self.emit(day, "controller.responded", request=request.id,
                          dimensions=[d for d in COMPLETENESS_DIMENSIONS
                                      if getattr(dims, d)])

    @staticmethod
    def _parse_dimensions(body: str) -> Completeness:
        for line in body.splitlines():
            if line.startswith(DIMENSIONS_MARKER):
                names = [n.strip() for n in line[len(DIMENSIONS_MARKER):].split(",")
                         if n.strip()]
                return Completeness(**{d: d in names for d in COMPLETENESS_DIMENSIONS})
        return Completeness.none()

    def _assert_routing_invariants(self, message) -> None:
        thread = self.ws.mailroom.get_thread(message.thread_id)
        visible = self.ws.mailroom.participant_visible_ids(thread)
        missing = {m.id for m in thread.messages} - visible
        if missing:
            raise AssertionError(f"central log incomplete for {thread.id}: {missing}")

    def _send_reminders(self, day: int) -> None:
        for action in self.ws.requests.due_actions(self.at(day, 14)):
            if action.suggestion != "reminder":
                continue
            self.ws.send_followup(action.request_id, LetterKind.REMINDER,
                                  self.at(day, 14))
            self.emit(day, "reminder.sent", request=action.request_id,
                      overdue_days=action.overdue_days)

    # -- wrap-up ------------------------------------------------------------------

    def _wrap_up(self) -> CampaignStats:
        ws = self.ws
        day = self.config.horizon_days
        at = self.at(day, 10)
        ws.wrap_up_campaign(at)
        for request_id in sorted(ws.requests.requests, key=lambda r: int(r[1:])):
            request = ws.requests.get(request_id)
            completeness = self.response_dims.get(request_id, Completeness.none())
            assessment = ws.assess(request_id, completeness, at)
            if request.state == RequestState.RESPONDED:
                ws.requests.apply_event(request_id, RequestEvent.ASSESS, at)
            elif request.state in (RequestState.SENT, RequestState.REMINDED,
                                   RequestState.EXTENDED):
                ws.requests.apply_event(request_id, RequestEvent.ESCALATE, at)
            ws.requests.apply_event(request_id, RequestEvent.CLOSE, at)
            self.emit(day, "request.assessed", request=request_id,
                      verdict=assessment.verdict.value,
                      responded=assessment.responded,
                      within_deadline=assessment.within_deadline)

        total = len(ws.requests.requests)
        if self.config.researcher_minutes_total:
            per = self.config.researcher_minutes_total / total
            for request_id in sorted(ws.requests.requests, key=lambda r: int(r[1:])):
                ws.add_time_log(request_id, "researcher", per, "logged effort", at)
        if self.config.participant_minutes_total:
            per = self.config.participant_minutes_total / total
            for request_id in sorted(ws.requests.requests, key=lambda r: int(r[1:])):
                ws.add_time_log(request_id, "participant", per, "logged effort", at)

        stats = ws.stats()
        ws.close_campaign(self.at(day, 16))
        self.emit(day, "campaign.stats", **{
            k: (round(v, 6) if isinstance(v, float) else v)
            for k, v in stats.to_dict().items()
        })
        return stats

    # -- entry point ----------------------------------------------------------------

    def run_until(self, day_inclusive: int) -> None:
        """Advance the loop through the given day; partial runs leave the
        campaign open (used for mid-campaign inspection and fixtures)."""
        if not self._started:
            self._inception()
            self._started = True
        last = min(day_inclusive, self.config.horizon_days)
        for day in range(self._next_day, last + 1):
            self._researcher_actions(day)
            self._participant_actions(day)
            self._controller_steps(day)
            self._ingest_and_triage(day)
            self._send_reminders(day)
        self._next_day = max(self._next_day, last + 1)

    def finish(self) -> SimResult:
        self.run_until(self.config.horizon_days)
        stats = self._wrap_up()
        return SimResult(stats=stats, trace=self.trace, workspace=self.ws)

    def run(self) -> SimResult:
        return self.finish()


def run_campaign(config: SimConfig) -> SimResult:
    return CampaignSimulator(config).run()


def run_scenario(source: dict | str | Path, seed: int | None = None) -> SimResult:
    config = load_scenario(source)
    if seed is not None:
        config.seed = seed
    return run_campaign(config)
