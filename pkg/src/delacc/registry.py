"""Participants, controllers, identity proofs, and per-organization consent.

Consent is the load-bearing record here: one grant per (participant,
controller) pair, scoped separately to communication, research use, and
automatic response sharing, with an append-only history of every change.
Target selection caps how many organizations each participant is signed up
for and how many requests any single organization receives, and nothing
enters the request lifecycle until the participant has confirmed their own
slice of the list.

The registry is a serialized write-model: every mutation bumps a version
counter and appends one audit event; readers take immutable snapshots
identified by that version.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from urllib.parse import urlparse

from . import errors
from .model import Actor, Campaign, IdAllocator
from .vault import AuditLog


class Channel(str, Enum):
    EMAIL = "email"
    POST = "post"


class ParticipantStatus(str, Enum):
    RECRUITED = "recruited"
    ACTIVE = "active"
    EXITED = "exited"


_STATUS_ORDER = {
    ParticipantStatus.RECRUITED: 0,
    ParticipantStatus.ACTIVE: 1,
    ParticipantStatus.EXITED: 2,
}


class ContactKind(str, Enum):
    EMAIL = "email"
    WEBFORM = "webform"
    POST = "post"


class SizeClass(str, Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


class LocaleClass(str, Enum):
    LOCAL = "local"
    EU_MULTINATIONAL = "eu_multinational"
    NON_EU_MULTINATIONAL = "non_eu_multinational"


class ProofKind(str, Enum):
    ID_CARD_COPY = "id_card_copy"
    OTHER = "other"


@dataclass
class Participant:
    id: str
    legal_name: str
    surname: str
    preferred_channel: Channel
    status: ParticipantStatus = ParticipantStatus.RECRUITED


@dataclass
class IdentityProof:
    id: str
    participant_id: str
    kind: ProofKind
    secured: bool
    captured_at: datetime
    storage_ref: str


@dataclass
class Controller:
    id: str
    name: str
    contact_kind: ContactKind
    contact_address: str
    privacy_policy_url: str | None = None
    size_class: SizeClass = SizeClass.MEDIUM
    locale_class: LocaleClass = LocaleClass.LOCAL
    sector: str = ""


@dataclass(frozen=True)
class ConsentScopes:
    communicate: bool
    research_use: bool
    share_responses: bool


class GrantStatus(str, Enum):
    ACTIVE = "active"
    REVOKED = "revoked"


@dataclass
class ConsentGrant:
    participant_id: str
    controller_id: str
    scopes: ConsentScopes
    interest_level: int
    status: GrantStatus
    granted_at: datetime
    revoked_at: datetime | None = None
    history: list[tuple[str, str]] = field(default_factory=list)  # (iso ts, change)

    @property
    def pair(self) -> tuple[str, str]:
        return (self.participant_id, self.controller_id)


@dataclass
class TargetEntry:
    participant_id: str
    controller_id: str
    interest_level: int
    confirmed: bool = False


@dataclass
class TargetList:
    campaign_id: str
    per_participant_cap: int
    per_controller_cap: int | dict[str, int]
    entries: list[TargetEntry] = field(default_factory=list)

    def entry_for(self, participant_id: str, controller_id: str) -> TargetEntry | None:
        for e in self.entries:
            if e.participant_id == participant_id and e.controller_id == controller_id:
                return e
        return None

    def is_confirmed(self, participant_id: str, controller_id: str) -> bool:
        entry = self.entry_for(participant_id, controller_id)
        return entry is not None and entry.confirmed


@dataclass(frozen=True)
class SnapshotGrant:
    status: GrantStatus
    communicate: bool
    research_use: bool
    share_responses: bool


@dataclass(frozen=True)
class ConsentSnapshot:
    """Immutable consent view at a given registry version."""

    version: int
    grants: dict[tuple[str, str], SnapshotGrant]

    def grant_for(self, participant_id: str, controller_id: str) -> SnapshotGrant | None:
        return self.grants.get((participant_id, controller_id))

    def allows_communication(self, participant_id: str, controller_id: str) -> bool:
        g = self.grant_for(participant_id, controller_id)
        return g is not None and g.status == GrantStatus.ACTIVE and g.communicate

    def shares_responses(self, participant_id: str, controller_id: str) -> bool:
        g = self.grant_for(participant_id, controller_id)
        return (
            g is not None
            and g.status == GrantStatus.ACTIVE
            and g.communicate
            and g.share_responses
        )


_EMAIL_RE = re.compile(r"^[^@\s]+@[^@\s]+\.[^@\s.]+$")
_DOMAIN_RE = re.compile(
    r"^(?=.{1,253}$)[a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?"
    r"(\.[a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?)+$"
)


def validate_contact(kind: ContactKind, address: str) -> None:
    if kind == ContactKind.EMAIL:
        if not _EMAIL_RE.match(address):
            raise errors.InvalidContact(f"not a mail address: {address!r}")
    elif kind == ContactKind.WEBFORM:
        parsed = urlparse(address)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise errors.InvalidContact(f"not a URL: {address!r}")
    else:  # postal block: at least street + city lines
        lines = [ln for ln in address.splitlines() if ln.strip()]
        if len(lines) < 2:
            raise errors.InvalidContact("postal block needs at least two lines")


def is_valid_domain(name: str) -> bool:
    return bool(_DOMAIN_RE.match(name))


class Registry:
    """Single-writer store for the inception-phase records."""

    def __init__(self, audit: AuditLog):
        self._audit = audit
        self._ids = IdAllocator()
        self.version = 0
        self.participants: dict[str, Participant] = {}
        self.controllers: dict[str, Controller] = {}
        self.proofs: dict[str, IdentityProof] = {}
        self.grants: dict[tuple[str, str], ConsentGrant] = {}
        self.target_list: TargetList | None = None
        self._controller_order: list[str] = []
        self._participant_order: list[str] = []
        self._revocation_listeners: list = []

    # -- wiring ---------------------------------------------------------------

    @property
    def participant_order(self) -> tuple[str, ...]:
        return tuple(self._participant_order)

    @property
    def controller_order(self) -> tuple[str, ...]:
        return tuple(self._controller_order)

    def add_revocation_listener(self, listener) -> None:
        """listener(participant_id, controller_id, at) fires on every revoke."""
        self._revocation_listeners.append(listener)

    def _mutated(self, actor: Actor, action: str, refs: list[str], at: datetime) -> None:
        self.version += 1
        self._audit.append(actor.value, action, refs, at)

    # -- participants -----------------------------------------------------------

    def register_participant(self, legal_name: str, surname: str,
                             preferred_channel: Channel, at: datetime,
                             force: bool = False) -> Participant:
        if not surname.strip():
            raise errors.EmptySurname("surname must be non-empty")
        if not force:
            for p in self.participants.values():
                if p.legal_name == legal_name and p.surname == surname:
                    raise errors.Duplicate(
                        f"participant {legal_name!r} already registered",
                        subject_refs=[p.id],
                    )
        participant = Participant(
            id=self._ids.next("p"),
            legal_name=legal_name,
            surname=surname,
            preferred_channel=preferred_channel,
        )
        self.participants[participant.id] = participant
        self._participant_order.append(participant.id)
        self._mutated(Actor.RESEARCHER, "participant.registered", [participant.id], at)
        return participant

    def set_participant_status(self, participant_id: str,
                               status: ParticipantStatus, at: datetime) -> Participant:
        participant = self._participant(participant_id)
        if _STATUS_ORDER[status] <= _STATUS_ORDER[participant.status]:
            raise errors.StatusOrder(
                f"cannot move {participant.status.value} -> {status.value}",
                subject_refs=[participant_id],
            )
        participant.status = status
        self._mutated(Actor.RESEARCHER, "participant.status", [participant_id, status.value], at)
        return participant

    def activate_participant(self, participant_id: str, at: datetime) -> Participant:
        return self.set_participant_status(participant_id, ParticipantStatus.ACTIVE, at)

    def _participant(self, participant_id: str) -> Participant:
        try:
            return self.participants[participant_id]
        except KeyError:
            raise errors.UnknownParticipant(
                f"no participant {participant_id!r}", subject_refs=[participant_id]
            ) from None

    def _controller(self, controller_id: str) -> Controller:
        try:
            return self.controllers[controller_id]
        except KeyError:
            raise errors.UnknownController(
                f"no controller {controller_id!r}", subject_refs=[controller_id]
            ) from None

    # -- identity proofs ---------------------------------------------------------

    def add_identity_proof(self, participant_id: str, kind: ProofKind, secured: bool,
                           captured_at: datetime, storage_ref: str) -> IdentityProof:
        self._participant(participant_id)
        proof = IdentityProof(
            id=self._ids.next("prf"),
            participant_id=participant_id,
            kind=kind,
            secured=secured,
            captured_at=captured_at,
            storage_ref=storage_ref,
        )
        self.proofs[proof.id] = proof
        self._mutated(Actor.RESEARCHER, "proof.added", [proof.id, participant_id], captured_at)
        return proof

    def secured_proof_for(self, participant_id: str) -> IdentityProof | None:
        for proof in self.proofs.values():
            if proof.participant_id == participant_id and proof.secured:
                return proof
        return None

    # -- controllers --------------------------------------------------------------

    def register_controller(self, name: str, contact_kind: ContactKind,
                            contact_address: str, at: datetime, *,
                            privacy_policy_url: str | None = None,
                            size_class: SizeClass = SizeClass.MEDIUM,
                            locale_class: LocaleClass = LocaleClass.LOCAL,
                            sector: str = "") -> Controller:
        validate_contact(contact_kind, contact_address)
        controller = Controller(
            id=self._ids.next("c"),
            name=name,
            contact_kind=contact_kind,
            contact_address=contact_address,
            privacy_policy_url=privacy_policy_url,
            size_class=size_class,
            locale_class=locale_class,
            sector=sector,
        )
        self.controllers[controller.id] = controller
        self._controller_order.append(controller.id)
        self._mutated(Actor.RESEARCHER, "controller.registered", [controller.id], at)
        return controller

    # -- consent -------------------------------------------------------------------

    def grant_consent(self, participant_id: str, controller_id: str,
                      scopes: ConsentScopes, interest_level: int,
                      at: datetime) -> ConsentGrant:
        participant = self._participant(participant_id)
        self._controller(controller_id)
        if participant.status != ParticipantStatus.ACTIVE:
            raise errors.ParticipantNotActive(
                f"participant {participant_id} is {participant.status.value}",
                subject_refs=[participant_id],
            )
        if scopes.share_responses and not scopes.communicate:
            raise errors.InconsistentScopes(
                "share_responses requires allow_communication",
                subject_refs=[participant_id, controller_id],
            )
        if not 0 <= interest_level <= 10:
            raise errors.InvalidInterestLevel(f"interest_level {interest_level} not in 0..10")

        pair = (participant_id, controller_id)
        existing = self.grants.get(pair)
        if existing is None:
            grant = ConsentGrant(
                participant_id=participant_id,
                controller_id=controller_id,
                scopes=scopes,
                interest_level=interest_level,
                status=GrantStatus.ACTIVE,
                granted_at=at,
                history=[(at.isoformat(), "granted")],
            )
            self.grants[pair] = grant
        else:
            # One grant object per pair, ever; re-grants supersede in place.
            existing.scopes = scopes
            existing.interest_level = interest_level
            existing.status = GrantStatus.ACTIVE
            existing.granted_at = at
            existing.revoked_at = None
            existing.history.append((at.isoformat(), "granted"))
            grant = existing
        self._mutated(Actor.PARTICIPANT, "consent.granted", [participant_id, controller_id], at)
        return grant

    def revoke_consent(self, participant_id: str, controller_id: str,
                       at: datetime) -> ConsentGrant:
        pair = (participant_id, controller_id)
        grant = self.grants.get(pair)
        if grant is None or grant.status != GrantStatus.ACTIVE:
            raise errors.NoActiveGrant(
                f"no active grant for ({participant_id}, {controller_id})",
                subject_refs=[participant_id, controller_id],
            )
        if at < grant.granted_at:
            raise errors.TimestampOrder("revoked_at must be >= granted_at")
        grant.status = GrantStatus.REVOKED
        grant.revoked_at = at
        grant.history.append((at.isoformat(), "revoked"))
        self._mutated(Actor.PARTICIPANT, "consent.revoked", [participant_id, controller_id], at)
        for listener in self._revocation_listeners:
            listener(participant_id, controller_id, at)
        return grant

    def active_grant(self, participant_id: str, controller_id: str) -> ConsentGrant | None:
        grant = self.grants.get((participant_id, controller_id))
        if grant is not None and grant.status == GrantStatus.ACTIVE:
            return grant
        return None

    def snapshot(self) -> ConsentSnapshot:
        return ConsentSnapshot(
            version=self.version,
            grants={
                pair: SnapshotGrant(
                    status=g.status,
                    communicate=g.scopes.communicate,
                    research_use=g.scopes.research_use,
                    share_responses=g.scopes.share_responses,
                )
                for pair, g in self.grants.items()
            },
        )

    # -- target selection -------------------------------------------------------

    def select_targets(self, campaign: Campaign,
                       candidate_pairs: list[tuple[str, str]],
                       at: datetime,
                       per_participant_cap: int = 10,
                       per_controller_cap: int | dict[str, int] = 5) -> TargetList:
        """Greedy cap-respecting pick over interest-ranked candidates.

        Participants are walked in registration order; within a participant,
        candidates are taken by descending interest, ties broken by controller
        registration order. A candidate without an active communication grant
        fails the whole selection rather than silently dropping out.

        per_controller_cap may be a single number or a {size_class: cap}
        mapping (key "default" fills the gaps) so smaller organizations can
        be given a lower request load.
        """
        candidate_pairs = list(dict.fromkeys(tuple(p) for p in candidate_pairs))
        for pid, cid in candidate_pairs:
            grant = self.active_grant(pid, cid)
            if grant is None or not grant.scopes.communicate:
                raise errors.ConsentMissing(
                    f"no active communication consent for ({pid}, {cid})",
                    subject_refs=[pid, cid],
                )

        if isinstance(per_controller_cap, dict):
            default = per_controller_cap.get("default", 5)
            controller_cap = {
                cid: per_controller_cap.get(c.size_class.value, default)
                for cid, c in self.controllers.items()
            }
        else:
            controller_cap = {cid: per_controller_cap for cid in self.controllers}

        controller_rank = {cid: i for i, cid in enumerate(self._controller_order)}
        participant_rank = {pid: i for i, pid in enumerate(self._participant_order)}
        by_participant: dict[str, list[tuple[str, str]]] = {}
        for pid, cid in candidate_pairs:
            by_participant.setdefault(pid, []).append((pid, cid))

        entries: list[TargetEntry] = []
        controller_load: dict[str, int] = {}
        for pid in sorted(by_participant, key=lambda p: participant_rank[p]):
            ranked = sorted(
                by_participant[pid],
                key=lambda pair: (
                    -self.grants[pair].interest_level,
                    controller_rank[pair[1]],
                ),
            )
            taken = 0
            for pair in ranked:
                if taken >= per_participant_cap:
                    break
                cid = pair[1]
                if controller_load.get(cid, 0) >= controller_cap[cid]:
                    continue
                entries.append(TargetEntry(
                    participant_id=pid,
                    controller_id=cid,
                    interest_level=self.grants[pair].interest_level,
                ))
                controller_load[cid] = controller_load.get(cid, 0) + 1
                taken += 1

        self.target_list = TargetList(
            campaign_id=campaign.id,
            per_participant_cap=per_participant_cap,
            per_controller_cap=(per_controller_cap if isinstance(per_controller_cap, int)
                                else dict(per_controller_cap)),
            entries=entries,
        )
        self._mutated(Actor.RESEARCHER, "targets.selected",
                      [campaign.id, f"n={len(entries)}"], at)
        return self.target_list

    def confirm_final_say(self, participant_id: str, at: datetime) -> int:
        """Participant signs off their slice of the target list."""
        if self.target_list is None:
            raise errors.NotOnTargetList("no target list selected yet")
        self._participant(participant_id)
        count = 0
        for entry in self.target_list.entries:
            if entry.participant_id == participant_id:
                entry.confirmed = True
                count += 1
        self._mutated(Actor.PARTICIPANT, "targets.confirmed", [participant_id], at)
        return count

    # -- import/export -----------------------------------------------------------

    PARTICIPANT_COLUMNS = ["legal_name", "surname", "preferred_channel"]
    CONTROLLER_COLUMNS = [
        "name", "contact_kind", "contact_address", "privacy_policy_url",
        "size_class", "locale_class", "sector",
    ]

    def import_participants_csv(self, text: str, at: datetime) -> list[Participant]:
        reader = csv.DictReader(io.StringIO(text))
        out = []
        for row in reader:
            out.append(self.register_participant(
                row["legal_name"], row["surname"],
                Channel(row["preferred_channel"]), at,
            ))
        return out

    def export_participants_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", *self.PARTICIPANT_COLUMNS, "status"])
        for pid in self._participant_order:
            p = self.participants[pid]
            writer.writerow([p.id, p.legal_name, p.surname,
                             p.preferred_channel.value, p.status.value])
        return buf.getvalue()

    def import_controllers_csv(self, text: str, at: datetime) -> list[Controller]:
        reader = csv.DictReader(io.StringIO(text))
        out = []
        for row in reader:
            out.append(self.register_controller(
                row["name"],
                ContactKind(row["contact_kind"]),
                row["contact_address"].replace("\\n", "\n"),
                at,
                privacy_policy_url=row.get("privacy_policy_url") or None,
                size_class=SizeClass(row.get("size_class") or "medium"),
                locale_class=LocaleClass(row.get("locale_class") or "local"),
                sector=row.get("sector") or "",
            ))
        return out

    def export_controllers_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", *self.CONTROLLER_COLUMNS])
        for cid in self._controller_order:
            c = self.controllers[cid]
            writer.writerow([
                c.id, c.name, c.contact_kind.value,
                c.contact_address.replace("\n", "\\n"),
                c.privacy_policy_url or "", c.size_class.value,
                c.locale_class.value, c.sector,
            ])
        return buf.getvalue()

    def import_participants_json(self, text: str, at: datetime) -> list[Participant]:
        return [
            self.register_participant(row["legal_name"], row["surname"],
                                      Channel(row["preferred_channel"]), at)
            for row in json.loads(text)
        ]

    def export_participants_json(self) -> str:
        return json.dumps([
            {
                "id": p.id,
                "legal_name": p.legal_name,
                "surname": p.surname,
                "preferred_channel": p.preferred_channel.value,
                "status": p.status.value,
            }
            for pid in self._participant_order
            for p in [self.participants[pid]]
        ], indent=2, sort_keys=True)

    def import_controllers_json(self, text: str, at: datetime) -> list[Controller]:
        return [
            self.register_controller(
                row["name"],
                ContactKind(row["contact_kind"]),
                row["contact_address"],
                at,
                privacy_policy_url=row.get("privacy_policy_url"),
                size_class=SizeClass(row.get("size_class", "medium")),
                locale_class=LocaleClass(row.get("locale_class", "local")),
                sector=row.get("sector", ""),
            )
            for row in json.loads(text)
        ]

    def export_controllers_json(self) -> str:
        return json.dumps([
            {
                "id": c.id,
                "name": c.name,
                "contact_kind": c.contact_kind.value,
                "contact_address": c.contact_address,
                "privacy_policy_url": c.privacy_policy_url,
                "size_class": c.size_class.value,
                "locale_class": c.locale_class.value,
                "sector": c.sector,
            }
            for cid in self._controller_order
            for c in [self.controllers[cid]]
        ], indent=2, sort_keys=True)

    # -- persistence ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "ids": self._ids.to_dict(),
            "participant_order": list(self._participant_order),
            "controller_order": list(self._controller_order),
            "participants": [
                {
                    "id": p.id, "legal_name": p.legal_name, "surname": p.surname,
                    "preferred_channel": p.preferred_channel.value,
                    "status": p.status.value,
                }
                for p in self.participants.values()
            ],
            "controllers": [
                {
                    "id": c.id, "name": c.name,
                    "contact_kind": c.contact_kind.value,
                    "contact_address": c.contact_address,
                    "privacy_policy_url": c.privacy_policy_url,
                    "size_class": c.size_class.value,
                    "locale_class": c.locale_class.value,
                    "sector": c.sector,
                }
                for c in self.controllers.values()
            ],
            "proofs": [
                {
                    "id": pr.id, "participant_id": pr.participant_id,
                    "kind": pr.kind.value, "secured": pr.secured,
                    "captured_at": pr.captured_at.isoformat(),
                    "storage_ref": pr.storage_ref,
                }
                for pr in self.proofs.values()
            ],
            "grants": [
                {
                    "participant_id": g.participant_id,
                    "controller_id": g.controller_id,
                    "communicate": g.scopes.communicate,
                    "research_use": g.scopes.research_use,
                    "share_responses": g.scopes.share_responses,
                    "interest_level": g.interest_level,
                    "status": g.status.value,
                    "granted_at": g.granted_at.isoformat(),
                    "revoked_at": g.revoked_at.isoformat() if g.revoked_at else None,
                    "history": [list(h) for h in g.history],
                }
                for g in self.grants.values()
            ],
            "target_list": None if self.target_list is None else {
                "campaign_id": self.target_list.campaign_id,
                "per_participant_cap": self.target_list.per_participant_cap,
                "per_controller_cap": self.target_list.per_controller_cap,
                "entries": [
                    {
                        "participant_id": e.participant_id,
                        "controller_id": e.controller_id,
                        "interest_level": e.interest_level,
                        "confirmed": e.confirmed,
                    }
                    for e in self.target_list.entries
                ],
            },
        }

    @classmethod
    def from_dict(cls, data: dict, audit: AuditLog) -> "Registry":
        reg = cls(audit)
        reg.version = data["version"]
        reg._ids = IdAllocator(data["ids"])
        reg._participant_order = list(data["participant_order"])
        reg._controller_order = list(data["controller_order"])
        for p in data["participants"]:
            reg.participants[p["id"]] = Participant(
                id=p["id"], legal_name=p["legal_name"], surname=p["surname"],
                preferred_channel=Channel(p["preferred_channel"]),
                status=ParticipantStatus(p["status"]),
            )
        for c in data["controllers"]:
            reg.controllers[c["id"]] = Controller(
                id=c["id"], name=c["name"],
                contact_kind=ContactKind(c["contact_kind"]),
                contact_address=c["contact_address"],
                privacy_policy_url=c["privacy_policy_url"],
                size_class=SizeClass(c["size_class"]),
                locale_class=LocaleClass(c["locale_class"]),
                sector=c["sector"],
            )
        for pr in data["proofs"]:
            reg.proofs[pr["id"]] = IdentityProof(
                id=pr["id"], participant_id=pr["participant_id"],
                kind=ProofKind(pr["kind"]), secured=pr["secured"],
                captured_at=datetime.fromisoformat(pr["captured_at"]),
                storage_ref=pr["storage_ref"],
            )
        for g in data["grants"]:
            grant = ConsentGrant(
                participant_id=g["participant_id"],
                controller_id=g["controller_id"],
                scopes=ConsentScopes(
                    communicate=g["communicate"],
                    research_use=g["research_use"],
                    share_responses=g["share_responses"],
                ),
                interest_level=g["interest_level"],
                status=GrantStatus(g["status"]),
                granted_at=datetime.fromisoformat(g["granted_at"]),
                revoked_at=datetime.fromisoformat(g["revoked_at"]) if g["revoked_at"] else None,
                history=[tuple(h) for h in g["history"]],
            )
            reg.grants[grant.pair] = grant
        tl = data.get("target_list")
        if tl:
            reg.target_list = TargetList(
                campaign_id=tl["campaign_id"],
                per_participant_cap=tl["per_participant_cap"],
                per_controller_cap=tl["per_controller_cap"],
                entries=[
                    TargetEntry(
                        participant_id=e["participant_id"],
                        controller_id=e["controller_id"],
                        interest_level=e["interest_level"],
                        confirmed=e["confirmed"],
                    )
                    for e in tl["entries"]
                ],
            )
        return reg
