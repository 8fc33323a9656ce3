"""HTTP/JSON surface over a workspace.

Every mutation requires an actor token and is serialized through one lock;
domain modules append the audit events. Errors come back as structured
``{code, message, subject_refs}`` bodies. List endpoints accept an optional
``?version=`` pin: when the write-model has moved past that version the
request fails with 409 SnapshotExpired so clients can reconcile.

Role rules: ``admin`` and ``researcher`` operate the campaign; a
``participant`` token only reaches its own records: threads, consent,
letter authorizations, flags, forwards.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from fastapi import Depends, FastAPI, Header, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .. import analytics, errors, letters, simharness
from ..lifecycle import RequestEvent, transition_table_json
from ..mailroom import (
    AuthorRole,
    LetterAuthorization,
    MessageChannel,
    PhysicalScanMeta,
    QuarantineItem,
    Thread,
)
from ..model import Actor
from ..registry import (
    Channel,
    ConsentScopes,
    ContactKind,
    LocaleClass,
    ParticipantStatus,
    ProofKind,
    SizeClass,
)
from ..vault import write_bundle
from ..workspace import Workspace

STATUS_BY_CODE = {
    "AuthRequired": 401,
    "Forbidden": 403,
    "NotFound": 404,
    "UnknownParticipant": 404,
    "UnknownController": 404,
    "UnknownThread": 404,
    "UnknownMessage": 404,
    "UnknownBlob": 404,
    "Duplicate": 409,
    "StatusOrder": 409,
    "NoActiveGrant": 409,
    "ConsentBlocked": 409,
    "IllegalTransition": 409,
    "AuthorizationMismatch": 409,
    "CampaignOpen": 409,
    "SnapshotExpired": 409,
}
DEFAULT_ERROR_STATUS = 422


@dataclass(frozen=True)
class ActorIdentity:
    role: str  # "admin" | "researcher" | "participant"
    participant_id: str | None = None

    @property
    def is_operator(self) -> bool:
        return self.role in ("admin", "researcher")


def _parse_at(value: str | None) -> datetime:
    if value:
        return datetime.fromisoformat(value.replace("Z", "+00:00"))
    return datetime.now(timezone.utc)


class ParticipantIn(BaseModel):
    legal_name: str
    surname: str
    preferred_channel: str = "email"
    force: bool = False
    at: str | None = None


class StatusIn(BaseModel):
    status: str
    at: str | None = None


class ProofIn(BaseModel):
    kind: str = "id_card_copy"
    secured: bool = True
    content: str
    at: str | None = None


class ControllerIn(BaseModel):
    name: str
    contact_kind: str
    contact_address: str
    privacy_policy_url: str | None = None
    size_class: str = "medium"
    locale_class: str = "local"
    sector: str = ""
    at: str | None = None


class ConsentIn(BaseModel):
    participant_id: str
    controller_id: str
    communicate: bool
    research_use: bool
    share_responses: bool
    interest_level: int = 5
    at: str | None = None


class RevokeIn(BaseModel):
    participant_id: str
    controller_id: str
    at: str | None = None


class ConsentFormIn(BaseModel):
    participant_id: str
    controller_ids: list[str]
    at: str | None = None


class TargetsSelectIn(BaseModel):
    pairs: list[tuple[str, str]] | None = None
    per_participant_cap: int | None = None
    per_controller_cap: int | None = None
    at: str | None = None


class ConfirmIn(BaseModel):
    participant_id: str
    at: str | None = None


class RequestIn(BaseModel):
    participant_id: str
    controller_id: str
    at: str | None = None


class EventIn(BaseModel):
    event: str
    at: str | None = None


class FollowupIn(BaseModel):
    kind: str
    at: str | None = None


class ComposeIn(BaseModel):
    subject: str
    body: str
    at: str | None = None


class InboundEmailIn(BaseModel):
    raw: str
    received_at: str | None = None


class AuthorizationIn(BaseModel):
    letter_id: str
    ack_ref: str
    at: str | None = None


class PhysicalIn(BaseModel):
    sender_controller_id: str
    addressee_participant_id: str
    letter_id: str
    scan_text: str
    received_at: str | None = None
    authorization: AuthorizationIn | None = None


class FlagIn(BaseModel):
    substantive: bool | None = None
    direct_plea: bool | None = None
    at: str | None = None


class OfflineIn(BaseModel):
    channel: str
    summary: str
    at: str | None = None


class TriageIn(BaseModel):
    thread_id: str | None = None
    drop: bool = False
    at: str | None = None


class CompletenessIn(BaseModel):
    data_copy: bool = False
    source: bool = False
    purposes: bool = False
    recipients: bool = False
    retention: bool = False


class AssessIn(BaseModel):
    request_id: str
    completeness: CompletenessIn
    now: str | None = None


class TimeLogIn(BaseModel):
    request_id: str
    role: str
    minutes: float
    note: str = ""
    at: str | None = None


class ComparisonRowIn(BaseModel):
    study: str
    controllers: str = "-"
    researchers: str = "-"
    participants: str = "-"
    access_duration: str = "-"
    time_per_request_researcher: str = "-"
    time_per_request_participant: str = "-"
    response: str = "-"


class ComparisonIn(BaseModel):
    rows: list[ComparisonRowIn] = Field(default_factory=list)
    include_campaign: bool = False
    format: str = "csv"


class ExportIn(BaseModel):
    key: str
    identifiers: list[str] | None = None
    at: str | None = None


class PurgeIn(BaseModel):
    policy: dict[str, str]
    at: str | None = None


class SimRunIn(BaseModel):
    scenario: dict
    seed: int | None = None
    include_trace: bool = False


class CampaignIn(BaseModel):
    at: str | None = None


def _participant_dict(ws: Workspace, p) -> dict:
    return {
        "id": p.id,
        "legal_name": p.legal_name,
        "surname": p.surname,
        "preferred_channel": p.preferred_channel.value,
        "status": p.status.value,
        "mailbox": (ws.mailroom.mailbox_address(p.id)
                    if p.surname.strip() else None),
    }


def _controller_dict(c) -> dict:
    return {
        "id": c.id,
        "name": c.name,
        "contact_kind": c.contact_kind.value,
        "contact_address": c.contact_address,
        "privacy_policy_url": c.privacy_policy_url,
        "size_class": c.size_class.value,
        "locale_class": c.locale_class.value,
        "sector": c.sector,
    }


def _grant_dict(g) -> dict:
    return {
        "participant_id": g.participant_id,
        "controller_id": g.controller_id,
        "communicate": g.scopes.communicate,
        "research_use": g.scopes.research_use,
        "share_responses": g.scopes.share_responses,
        "interest_level": g.interest_level,
        "status": g.status.value,
        "granted_at": g.granted_at.isoformat(),
        "revoked_at": g.revoked_at.isoformat() if g.revoked_at else None,
        "history_length": len(g.history),
    }


def _request_dict(r) -> dict:
    return {
        "id": r.id,
        "participant_id": r.participant_id,
        "controller_id": r.controller_id,
        "state": r.state.value,
        "sent_at": r.sent_at.isoformat() if r.sent_at else None,
        "deadline": r.deadline.isoformat() if r.deadline else None,
        "extension_until": r.extension_until.isoformat() if r.extension_until else None,
        "effective_deadline": (r.effective_deadline.isoformat()
                               if r.effective_deadline else None),
        "thread_id": r.thread_id,
        "events": len(r.events),
    }


def _thread_dict(t: Thread) -> dict:
    return {
        "id": t.id,
        "request_id": t.request_id,
        "participant_id": t.participant_id,
        "controller_id": t.controller_id,
        "message_count": len(t.messages),
    }


def create_app(workspace: Workspace, tokens: dict[str, str] | None = None,
               storage_path: Path | None = None) -> FastAPI:
    """tokens maps bearer token -> "admin" | "researcher" | "participant:<id>"."""
    app = FastAPI(title="delacc", version="0.1.0")
    ws = workspace
    lock = threading.RLock()
    token_map = dict(tokens or {})

    def resolve_actor(x_actor_token: str | None = Header(default=None)) -> ActorIdentity:
        if not x_actor_token:
            raise errors.AuthRequired("X-Actor-Token header required")
        role_spec = token_map.get(x_actor_token)
        if role_spec is None:
            # Default deterministic tokens: researcher-token, admin-token,
            # participant-<id>-token.
            if x_actor_token == "researcher-token":
                role_spec = "researcher"
            elif x_actor_token == "admin-token":
                role_spec = "admin"
            elif (x_actor_token.startswith("participant-")
                  and x_actor_token.endswith("-token")):
                role_spec = ("participant:"
                             + x_actor_token[len("participant-"):-len("-token")])
            else:
                raise errors.AuthRequired("unknown token")
        if role_spec.startswith("participant:"):
            pid = role_spec.split(":", 1)[1]
            if pid not in ws.registry.participants:
                raise errors.AuthRequired(f"token for unknown participant {pid!r}")
            return ActorIdentity(role="participant", participant_id=pid)
        return ActorIdentity(role=role_spec)

    def require_operator(actor: ActorIdentity) -> None:
        if not actor.is_operator:
            raise errors.Forbidden("operator role required")

    def require_self_or_operator(actor: ActorIdentity, participant_id: str) -> None:
        if actor.is_operator:
            return
        if actor.participant_id != participant_id:
            raise errors.Forbidden("not your record", subject_refs=[participant_id])

    def check_pin(version: int | None) -> None:
        if version is not None and version != ws.registry.version:
            raise errors.SnapshotExpired(
                f"snapshot {version} expired; write-model is at "
                f"{ws.registry.version}")

    @app.exception_handler(errors.DelaccError)
    async def _domain_error(_request: Request, exc: errors.DelaccError):
        status = STATUS_BY_CODE.get(exc.code, DEFAULT_ERROR_STATUS)
        return JSONResponse(status_code=status, content=exc.to_dict())

    # -- meta ---------------------------------------------------------------

    @app.get("/health")
    def health():
        return {"ok": True, "version": ws.registry.version}

    @app.get("/transitions")
    def transitions():
        return PlainTextResponse(transition_table_json(),
                                 media_type="application/json")

    @app.get("/config")
    def get_config(actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        return {
            "project_domain": ws.project_domain,
            "postal_address": ws.postal_address,
            "policy": ws.policy.to_dict(),
            "caps": {"per_participant": ws.per_participant_cap,
                     "per_controller": ws.per_controller_cap},
            "campaign": {
                "id": ws.campaign.id,
                "name": ws.campaign.name,
                "status": ws.campaign.status.value,
            },
        }

    # -- participants ----------------------------------------------------------

    @app.post("/participants")
    def create_participant(body: ParticipantIn,
                           actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            p = ws.registry.register_participant(
                body.legal_name, body.surname, Channel(body.preferred_channel),
                _parse_at(body.at), force=body.force)
        return {"version": ws.registry.version, "participant": _participant_dict(ws, p)}

    @app.post("/participants/{pid}/status")
    def set_status(pid: str, body: StatusIn,
                   actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            p = ws.registry.set_participant_status(
                pid, ParticipantStatus(body.status), _parse_at(body.at))
        return {"version": ws.registry.version, "participant": _participant_dict(ws, p)}

    @app.post("/participants/{pid}/proofs")
    def add_proof(pid: str, body: ProofIn,
                  actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            at = _parse_at(body.at)
            ref = ws.blobs.put_text("proof", body.content, label=f"proof/{pid}")
            proof = ws.registry.add_identity_proof(
                pid, ProofKind(body.kind), body.secured, at, ref)
        return {"version": ws.registry.version,
                "proof": {"id": proof.id, "participant_id": pid,
                          "kind": proof.kind.value, "secured": proof.secured,
                          "storage_ref": proof.storage_ref}}

    @app.get("/participants")
    def list_participants(version: int | None = Query(default=None),
                          actor: ActorIdentity = Depends(resolve_actor)):
        check_pin(version)
        items = [_participant_dict(ws, p) for p in list(ws.registry.participants.values())]
        if not actor.is_operator:
            items = [i for i in items if i["id"] == actor.participant_id]
        return {"version": ws.registry.version, "items": items}

    # -- controllers --------------------------------------------------------------

    @app.post("/controllers")
    def create_controller(body: ControllerIn,
                          actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            c = ws.registry.register_controller(
                body.name, ContactKind(body.contact_kind), body.contact_address,
                _parse_at(body.at),
                privacy_policy_url=body.privacy_policy_url,
                size_class=SizeClass(body.size_class),
                locale_class=LocaleClass(body.locale_class),
                sector=body.sector)
        return {"version": ws.registry.version, "controller": _controller_dict(c)}

    @app.get("/controllers")
    def list_controllers(version: int | None = Query(default=None),
                         actor: ActorIdentity = Depends(resolve_actor)):
        check_pin(version)
        return {"version": ws.registry.version,
                "items": [_controller_dict(c)
                          for c in list(ws.registry.controllers.values())]}

    # -- consent -------------------------------------------------------------------

    @app.post("/consents")
    def grant_consent(body: ConsentIn,
                      actor: ActorIdentity = Depends(resolve_actor)):
        require_self_or_operator(actor, body.participant_id)
        with lock:
            g = ws.registry.grant_consent(
                body.participant_id, body.controller_id,
                ConsentScopes(body.communicate, body.research_use,
                              body.share_responses),
                body.interest_level, _parse_at(body.at))
        return {"version": ws.registry.version, "grant": _grant_dict(g)}

    @app.post("/consents/revoke")
    def revoke_consent(body: RevokeIn,
                       actor: ActorIdentity = Depends(resolve_actor)):
        require_self_or_operator(actor, body.participant_id)
        with lock:
            g = ws.registry.revoke_consent(body.participant_id, body.controller_id,
                                           _parse_at(body.at))
        return {"version": ws.registry.version, "grant": _grant_dict(g)}

    @app.get("/consents")
    def list_consents(version: int | None = Query(default=None),
                      actor: ActorIdentity = Depends(resolve_actor)):
        check_pin(version)
        grants = list(ws.registry.grants.values())
        if not actor.is_operator:
            grants = [g for g in grants if g.participant_id == actor.participant_id]
        return {"version": ws.registry.version,
                "items": [_grant_dict(g) for g in grants]}

    @app.post("/consent-forms")
    def sign_consent_form(body: ConsentFormIn,
                          actor: ActorIdentity = Depends(resolve_actor)):
        require_self_or_operator(actor, body.participant_id)
        with lock:
            ref = ws.sign_consent_form(body.participant_id, body.controller_ids,
                                       _parse_at(body.at))
        return {"version": ws.registry.version, "form_ref": ref}

    # -- targets -------------------------------------------------------------------

    @app.post("/targets/select")
    def select_targets(body: TargetsSelectIn,
                       actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            pairs = body.pairs
            if pairs is None:
                pairs = [g.pair for g in ws.registry.grants.values()
                         if g.status.value == "active" and g.scopes.communicate]
            tl = ws.registry.select_targets(
                ws.campaign, [tuple(p) for p in pairs], _parse_at(body.at),
                per_participant_cap=body.per_participant_cap or ws.per_participant_cap,
                per_controller_cap=body.per_controller_cap or ws.per_controller_cap)
        return {"version": ws.registry.version, "entries": len(tl.entries)}

    @app.post("/targets/confirm")
    def confirm_targets(body: ConfirmIn,
                        actor: ActorIdentity = Depends(resolve_actor)):
        require_self_or_operator(actor, body.participant_id)
        with lock:
            n = ws.registry.confirm_final_say(body.participant_id, _parse_at(body.at))
        return {"version": ws.registry.version, "confirmed": n}

    @app.get("/targets")
    def list_targets(actor: ActorIdentity = Depends(resolve_actor)):
        tl = ws.registry.target_list
        entries = [] if tl is None else [
            {"participant_id": e.participant_id, "controller_id": e.controller_id,
             "interest_level": e.interest_level, "confirmed": e.confirmed}
            for e in tl.entries
        ]
        if not actor.is_operator:
            entries = [e for e in entries
                       if e["participant_id"] == actor.participant_id]
        return {"version": ws.registry.version, "items": entries}

    # -- requests -------------------------------------------------------------------

    @app.post("/requests")
    def open_request(body: RequestIn,
                     actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            r = ws.requests.open_request(body.participant_id, body.controller_id,
                                         _parse_at(body.at))
        return {"version": ws.registry.version, "request": _request_dict(r)}

    @app.post("/requests/{rid}/events")
    def apply_event(rid: str, body: EventIn,
                    actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            r = ws.requests.apply_event(rid, RequestEvent(body.event),
                                        _parse_at(body.at))
        return {"version": ws.registry.version, "request": _request_dict(r)}

    @app.post("/requests/{rid}/send")
    def send_request(rid: str, body: CampaignIn,
                     actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            message = ws.send_request_letter(rid, _parse_at(body.at))
        return {"version": ws.registry.version,
                "request": _request_dict(ws.requests.get(rid)),
                "message": message.to_dict()}

    @app.post("/requests/{rid}/followup")
    def send_followup(rid: str, body: FollowupIn,
                      actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            message = ws.send_followup(rid, letters.LetterKind(body.kind),
                                       _parse_at(body.at))
        return {"version": ws.registry.version, "message": message.to_dict()}

    @app.get("/requests")
    def list_requests(version: int | None = Query(default=None),
                      actor: ActorIdentity = Depends(resolve_actor)):
        check_pin(version)
        items = []
        for r in list(ws.requests.requests.values()):
            if not actor.is_operator and r.participant_id != actor.participant_id:
                continue
            d = _request_dict(r)
            assessment = ws.assessments.get(r.id)
            d["verdict"] = assessment.verdict.value if assessment else None
            items.append(d)
        return {"version": ws.registry.version, "items": items}

    @app.get("/requests/due")
    def due_requests(now: str | None = Query(default=None),
                     actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        actions = ws.requests.due_actions(_parse_at(now))
        return {"version": ws.registry.version, "items": [
            {"request_id": a.request_id, "suggestion": a.suggestion,
             "overdue_days": a.overdue_days,
             "effective_deadline": a.effective_deadline.isoformat()}
            for a in actions
        ]}

    @app.get("/requests/{rid}")
    def get_request(rid: str, actor: ActorIdentity = Depends(resolve_actor)):
        r = ws.requests.get(rid)
        if not actor.is_operator and r.participant_id != actor.participant_id:
            raise errors.Forbidden("not your request", subject_refs=[rid])
        d = _request_dict(r)
        assessment = ws.assessments.get(rid)
        d["verdict"] = assessment.verdict.value if assessment else None
        return {"version": ws.registry.version, "request": d}

    # -- threads & messages -----------------------------------------------------------

    def _thread_for(actor: ActorIdentity, tid: str) -> Thread:
        thread = ws.mailroom.get_thread(tid)
        if not actor.is_operator and thread.participant_id != actor.participant_id:
            raise errors.Forbidden("not your thread", subject_refs=[tid])
        return thread

    @app.get("/threads")
    def list_threads(version: int | None = Query(default=None),
                     actor: ActorIdentity = Depends(resolve_actor)):
        check_pin(version)
        items = [
            _thread_dict(t) for t in list(ws.mailroom.threads.values())
            if actor.is_operator or t.participant_id == actor.participant_id
        ]
        return {"version": ws.registry.version, "items": items}

    @app.get("/threads/{tid}")
    def get_thread(tid: str, actor: ActorIdentity = Depends(resolve_actor)):
        thread = _thread_for(actor, tid)
        return {"version": ws.registry.version, "thread": _thread_dict(thread),
                "messages": [m.to_dict() for m in thread.messages]}

    @app.get("/messages/{mid}/body")
    def message_body(mid: str, actor: ActorIdentity = Depends(resolve_actor)):
        message = ws.mailroom.get_message(mid)
        thread = ws.mailroom.get_thread(message.thread_id)
        if actor.is_operator:
            if not ws.researcher_can_read(message):
                raise errors.Forbidden(
                    "body not shared with the researcher", subject_refs=[mid])
        elif thread.participant_id != actor.participant_id:
            raise errors.Forbidden("not your thread", subject_refs=[mid])
        if message.body_ref is None:
            raise errors.NotFound("message has no readable body (unopened letter?)",
                                  subject_refs=[mid])
        return {"message_id": mid, "body": ws.blobs.get_text(message.body_ref)}

    @app.get("/messages/{mid}/scan")
    def message_scan(mid: str, actor: ActorIdentity = Depends(resolve_actor)):
        message = ws.mailroom.get_message(mid)
        thread = ws.mailroom.get_thread(message.thread_id)
        if message.scan_ref is None:
            raise errors.NotFound("no scan", subject_refs=[mid])
        # Scans of physical mail belong to the addressee; researchers see the
        # content only once the letter is opened (via the body).
        if actor.role != "admin" and (
                actor.participant_id != thread.participant_id):
            raise errors.Forbidden("scan belongs to the addressee",
                                   subject_refs=[mid])
        return {"message_id": mid, "scan": ws.blobs.get_text(message.scan_ref)}

    @app.post("/threads/{tid}/messages")
    def compose(tid: str, body: ComposeIn,
                actor: ActorIdentity = Depends(resolve_actor)):
        thread = _thread_for(actor, tid)
        author = (AuthorRole.PARTICIPANT if actor.role == "participant"
                  else AuthorRole.RESEARCHER)
        with lock:
            message, decision = ws.mailroom.send_outbound(
                thread.id, author, body.subject, body.body, _parse_at(body.at))
        return {"version": ws.registry.version, "message": message.to_dict(),
                "routing": {
                    "deliver_to": sorted(decision.deliver_to),
                    "blind_copies": sorted(decision.blind_copies),
                    "rationale": decision.rationale.value,
                    "consent_version": decision.consent_version,
                }}

    @app.post("/inbound/email")
    def inbound_email(body: InboundEmailIn,
                      actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            result = ws.mailroom.ingest_email(
                body.raw,
                received_at=_parse_at(body.received_at) if body.received_at else None)
        if isinstance(result, QuarantineItem):
            return {"version": ws.registry.version, "quarantined": True,
                    "item_id": result.id}
        return {"version": ws.registry.version, "quarantined": False,
                "message": result.to_dict()}

    @app.post("/inbound/physical")
    def inbound_physical(body: PhysicalIn,
                         actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        at = _parse_at(body.received_at)
        scan = PhysicalScanMeta(
            sender_controller_id=body.sender_controller_id,
            addressee_participant_id=body.addressee_participant_id,
            received_at=at,
            letter_id=body.letter_id,
            scan_text=body.scan_text,
        )
        authorization = None
        if body.authorization:
            authorization = LetterAuthorization(
                letter_id=body.authorization.letter_id,
                acked_at=_parse_at(body.authorization.at),
                ack_ref=body.authorization.ack_ref,
            )
        with lock:
            result = ws.mailroom.ingest_physical(scan, authorization)
        if isinstance(result, QuarantineItem):
            return {"version": ws.registry.version, "quarantined": True,
                    "item_id": result.id}
        return {"version": ws.registry.version, "quarantined": False,
                "message": result.to_dict()}

    @app.post("/messages/{mid}/authorize-letter")
    def authorize_letter(mid: str, body: AuthorizationIn,
                         actor: ActorIdentity = Depends(resolve_actor)):
        message = ws.mailroom.get_message(mid)
        thread = ws.mailroom.get_thread(message.thread_id)
        require_self_or_operator(actor, thread.participant_id)
        with lock:
            message = ws.mailroom.authorize_letter(mid, LetterAuthorization(
                letter_id=body.letter_id,
                acked_at=_parse_at(body.at),
                ack_ref=body.ack_ref,
            ))
        return {"version": ws.registry.version, "message": message.to_dict()}

    @app.post("/messages/{mid}/flags")
    def flag_message(mid: str, body: FlagIn,
                     actor: ActorIdentity = Depends(resolve_actor)):
        message = ws.mailroom.get_message(mid)
        thread = ws.mailroom.get_thread(message.thread_id)
        if actor.role == "participant":
            if thread.participant_id != actor.participant_id:
                raise errors.Forbidden("not your thread", subject_refs=[mid])
            if body.substantive is not None:
                raise errors.Forbidden("substantive flag is operator triage")
        with lock:
            message = ws.mailroom.flag_message(
                mid, _parse_at(body.at),
                substantive=body.substantive, direct_plea=body.direct_plea,
                actor=(Actor.PARTICIPANT if actor.role == "participant"
                       else Actor.RESEARCHER))
        return {"version": ws.registry.version, "message": message.to_dict()}

    @app.post("/messages/{mid}/forward")
    def forward_message(mid: str, body: CampaignIn,
                        actor: ActorIdentity = Depends(resolve_actor)):
        if actor.role != "participant":
            raise errors.Forbidden("only participants forward their own mail")
        with lock:
            message = ws.forward_to_researcher(mid, actor.participant_id,
                                               _parse_at(body.at))
        return {"version": ws.registry.version, "message": message.to_dict()}

    @app.post("/threads/{tid}/offline")
    def record_offline(tid: str, body: OfflineIn,
                       actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            message = ws.mailroom.record_offline_contact(
                tid, MessageChannel(body.channel), body.summary, _parse_at(body.at))
        return {"version": ws.registry.version, "message": message.to_dict()}

    # -- quarantine ---------------------------------------------------------------

    @app.get("/quarantine")
    def list_quarantine(actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        return {"version": ws.registry.version, "items": [
            {"id": q.id, "received_at": q.received_at.isoformat(),
             "reason": q.reason, "kind": "scan" if q.scan else "email"}
            for q in ws.mailroom.quarantine
        ]}

    @app.post("/quarantine/{qid}/triage")
    def triage(qid: str, body: TriageIn,
               actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            at = _parse_at(body.at)
            if body.drop:
                ws.mailroom.triage_drop(qid, at)
                return {"version": ws.registry.version, "dropped": True}
            if not body.thread_id:
                raise errors.InvalidConfig("triage needs thread_id or drop=true")
            message = ws.mailroom.triage_assign(qid, body.thread_id, at)
        return {"version": ws.registry.version, "message": message.to_dict()}

    # -- assessment & stats -----------------------------------------------------------

    @app.post("/assessments")
    def assess(body: AssessIn, actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            assessment = ws.assess(
                body.request_id,
                analytics.Completeness(**body.completeness.model_dump()),
                _parse_at(body.now))
        return {"version": ws.registry.version, "assessment": assessment.to_dict()}

    @app.get("/assessments")
    def list_assessments(actor: ActorIdentity = Depends(resolve_actor)):
        items = []
        for a in list(ws.assessments.values()):
            if not actor.is_operator:
                request = ws.requests.get(a.request_id)
                if request.participant_id != actor.participant_id:
                    continue
            items.append(a.to_dict())
        return {"version": ws.registry.version, "items": items}

    @app.post("/time-logs")
    def add_time_log(body: TimeLogIn,
                     actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            entry = ws.add_time_log(body.request_id, body.role, body.minutes,
                                    body.note, _parse_at(body.at))
        return {"version": ws.registry.version,
                "entry": {"request_id": entry.request_id, "role": entry.role,
                          "minutes": entry.minutes, "note": entry.note}}

    @app.get("/stats")
    def get_stats(actor: ActorIdentity = Depends(resolve_actor)):
        stats = ws.stats()
        return {"version": ws.registry.version, "stats": stats.to_dict()}

    @app.post("/reports/comparison")
    def comparison(body: ComparisonIn,
                   actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        rows = [analytics.ComparisonRow(**r.model_dump()) for r in body.rows]
        if body.include_campaign:
            rows.append(analytics.row_from_stats(ws.campaign.name, ws.stats()))
        if body.format == "json":
            return PlainTextResponse(analytics.comparison_report_json(rows),
                                     media_type="application/json")
        return PlainTextResponse(analytics.comparison_report_csv(rows),
                                 media_type="text/csv")

    # -- audit --------------------------------------------------------------------

    @app.get("/audit")
    def list_audit(since_seq: int = Query(default=0),
                   actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        return {"items": [e.to_dict() for e in ws.audit.events
                          if e.seq > since_seq]}

    @app.get("/audit/verify")
    def verify_audit(actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        return ws.audit.verify().to_dict()

    # -- campaign & wrap-up --------------------------------------------------------

    @app.post("/campaign/start")
    def campaign_start(body: CampaignIn,
                       actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            ws.start_campaign(_parse_at(body.at))
        return {"status": ws.campaign.status.value}

    @app.post("/campaign/wrap-up")
    def campaign_wrap_up(body: CampaignIn,
                         actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            ws.wrap_up_campaign(_parse_at(body.at))
        return {"status": ws.campaign.status.value}

    @app.post("/campaign/close")
    def campaign_close(body: CampaignIn,
                       actor: ActorIdentity = Depends(resolve_actor)):
        require_operator(actor)
        with lock:
            ws.close_campaign(_parse_at(body.at))
        return {"status": ws.campaign.status.value}

    @app.post("/exports")
    def export_campaign(body: ExportIn,
                        actor: ActorIdentity = Depends(resolve_actor)):
        if actor.role != "admin":
            raise errors.Forbidden("exports are admin-only")
        with lock:
            bundle = ws.export_campaign(body.key, _parse_at(body.at),
                                        identifiers=body.identifiers)
            if storage_path is not None:
                write_bundle(
                    bundle,
                    Path(storage_path) / "exports" / ws.campaign.id,
                    Path(storage_path) / "keys" / f"{ws.campaign.id}.map.enc")
        return {"manifest": bundle.manifest}

    @app.post("/purge")
    def purge(body: PurgeIn, actor: ActorIdentity = Depends(resolve_actor)):
        if actor.role != "admin":
            raise errors.Forbidden("purge is admin-only")
        with lock:
            report = ws.purge(body.policy, _parse_at(body.at))
        return report.to_dict()

    @app.post("/admin/save")
    def save_state(actor: ActorIdentity = Depends(resolve_actor)):
        if actor.role != "admin":
            raise errors.Forbidden("saving is admin-only")
        if storage_path is None:
            raise errors.InvalidConfig("no storage path configured")
        with lock:
            ws.save(Path(storage_path))
        return {"saved": True, "storage_path": str(storage_path)}

    # -- simulation -----------------------------------------------------------------

    @app.post("/sim/run")
    def sim_run(body: SimRunIn, actor: ActorIdentity = Depends(resolve_actor)):
        if actor.role != "admin":
            raise errors.Forbidden("simulation runs are admin-only")
        result = simharness.run_scenario(body.scenario, seed=body.seed)
        trace_text = result.trace_text()
        out = {
            "stats": result.stats.to_dict(),
            "trace_events": len(result.trace),
            "trace_sha256": hashlib.sha256(trace_text.encode()).hexdigest(),
        }
        if body.include_trace:
            out["trace"] = result.trace
        return out

    return app
