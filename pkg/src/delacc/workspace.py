"""One campaign's worth of wired-together modules.

This is the binding layer the CLI, the HTTP API, and the simulation harness
all drive: a single audit log, blob store, registry, mailroom, and request
book, plus campaign-level bookkeeping (signed consent forms, assessments,
time logs, exports). All mutations are serialized through here and each
primitive mutation appends exactly one audit event via its owning module.
"""

from __future__ import annotations

import json
from datetime import date, datetime
from pathlib import Path

from . import analytics, errors, letters, vault
from .lifecycle import DeadlinePolicy, RequestBook, RequestEvent
from .mailroom import AuthorRole, Mailroom, Message
from .model import Actor, Campaign, CampaignStatus
from .registry import Registry
from .vault import AuditLog, BlobStore

DEFAULT_CITATIONS = (
    "Exercising a legal right through an authorized representative is "
    "recognized in national civil law; a written authorization signed by "
    "the data subject provides sufficient proof.",
)


class Workspace:
    def __init__(self, project_domain: str, postal_address: str,
                 policy: DeadlinePolicy | None = None, *,
                 per_participant_cap: int = 10, per_controller_cap: int = 5,
                 transport=None, campaign_name: str = "campaign",
                 researchers_count: int = 1,
                 legal_citations: tuple[str, ...] = DEFAULT_CITATIONS):
        self.project_domain = project_domain
        self.postal_address = postal_address
        self.policy = policy or DeadlinePolicy()
        self.per_participant_cap = per_participant_cap
        self.per_controller_cap = per_controller_cap
        self.researchers_count = researchers_count
        self.legal_citations = tuple(legal_citations)

        self.audit = AuditLog()
        self.blobs = BlobStore()
        self.registry = Registry(self.audit)
        self.mailroom = Mailroom(self.registry, self.blobs, self.audit,
                                 project_domain, transport)
        self.requests = RequestBook(
            self.registry, self.audit, self.policy,
            thread_factory=lambda r: self.mailroom.create_thread(
                r.id, r.participant_id, r.controller_id).id,
        )
        self.templates = letters.TemplateLibrary.builtin()
        self.campaign = Campaign(id="camp1", name=campaign_name)
        self.assessments: dict[str, analytics.ComplianceAssessment] = {}
        self.time_logs: list[analytics.TimeLogEntry] = []
        # pid -> signed forms, each {ref, controllers, signed_at}
        self.consent_forms: dict[str, list[dict]] = {}
        self.researcher_proof_ref: str | None = None
        self.last_export: vault.ExportBundle | None = None

    # -- campaign ----------------------------------------------------------------

    def start_campaign(self, at: datetime) -> None:
        self.campaign.started_at = at
        self.audit.append(Actor.RESEARCHER.value, "campaign.started",
                          [self.campaign.id], at)

    def wrap_up_campaign(self, at: datetime) -> None:
        self.campaign.enter_wrap_up(at)
        self.audit.append(Actor.RESEARCHER.value, "campaign.wrap_up",
                          [self.campaign.id], at)

    def close_campaign(self, at: datetime) -> None:
        self.campaign.close()
        self.audit.append(Actor.RESEARCHER.value, "campaign.closed",
                          [self.campaign.id], at)

    # -- inception helpers ---------------------------------------------------------

    def set_researcher_proof(self, content: str, at: datetime) -> str:
        self.researcher_proof_ref = self.blobs.put_text("proof", content,
                                                        label="researcher-id")
        self.audit.append(Actor.RESEARCHER.value, "proof.researcher",
                          [self.researcher_proof_ref], at)
        return self.researcher_proof_ref

    def sign_consent_form(self, participant_id: str, controller_ids: list[str],
                          at: datetime) -> str:
        """Render the per-organization consent form and file the signed copy.

        Forms accumulate: a later form for additional organizations never
        voids the coverage of an earlier one.
        """
        participant = self.registry.participants[participant_id]
        controllers = [self.registry.controllers[cid] for cid in controller_ids]
        scopes = {}
        for cid in controller_ids:
            grant = self.registry.active_grant(participant_id, cid)
            if grant is None:
                raise errors.NoActiveGrant(
                    f"({participant_id}, {cid}) has no active grant to put on the form",
                    subject_refs=[participant_id, cid],
                )
            scopes[cid] = grant.scopes
        doc = letters.render_consent_form(participant, controllers, scopes, at.date())
        ref = self.blobs.put_text("document", doc.text,
                                  label=f"consent-form/{participant_id}")
        self.consent_forms.setdefault(participant_id, []).append({
            "ref": ref,
            "controllers": list(controller_ids),
            "signed_at": at.isoformat(),
        })
        self.audit.append(Actor.PARTICIPANT.value, "consent_form.signed",
                          [participant_id, ref], at)
        return ref

    def consent_form_ref(self, participant_id: str, controller_id: str) -> str | None:
        for record in reversed(self.consent_forms.get(participant_id, [])):
            if controller_id in record["controllers"]:
                return record["ref"]
        return None

    # -- letters -------------------------------------------------------------------

    def render_request_letter(self, request_id: str,
                              letter_date: date) -> letters.LetterDocument:
        request = self.requests.get(request_id)
        participant = self.registry.participants[request.participant_id]
        controller = self.registry.controllers[request.controller_id]
        return letters.render_request_letter(
            request,
            self.templates.get(letters.LetterKind.ACCESS_REQUEST),
            participant=participant,
            controller=controller,
            postal_address=self.postal_address,
            letter_date=letter_date,
            participant_proof=self.registry.secured_proof_for(request.participant_id),
            researcher_proof_ref=self.researcher_proof_ref,
            consent_form_ref=self.consent_form_ref(request.participant_id,
                                                   request.controller_id),
        )

    def send_request_letter(self, request_id: str, at: datetime) -> Message:
        """Render, route, and mark sent. Appends one audit event per mutation."""
        request = self.requests.get(request_id)
        doc = self.render_request_letter(request_id, at.date())
        participant = self.registry.participants[request.participant_id]
        message, _ = self.mailroom.send_outbound(
            request.thread_id, AuthorRole.RESEARCHER,
            subject=f"Access request on behalf of {participant.legal_name}",
            body=doc.text, at=at,
            attachments=list(doc.attachments.values()),
        )
        self.requests.apply_event(request_id, RequestEvent.SEND, at)
        return message

    def send_followup(self, request_id: str, kind: letters.LetterKind,
                      at: datetime) -> Message:
        request = self.requests.get(request_id)
        participant = self.registry.participants[request.participant_id]
        controller = self.registry.controllers[request.controller_id]
        doc = letters.render_followup(
            request, kind, self.templates.get(kind),
            participant=participant, controller=controller,
            letter_date=at.date(), postal_address=self.postal_address,
            citations=list(self.legal_citations),
        )
        subject = ("Reminder: access request on behalf of "
                   if kind == letters.LetterKind.REMINDER
                   else "Validity of the delegated access request for ")
        message, _ = self.mailroom.send_outbound(
            request.thread_id, AuthorRole.RESEARCHER,
            subject=subject + participant.legal_name,
            body=doc.text, at=at,
        )
        if kind == letters.LetterKind.REMINDER:
            self.requests.apply_event(request_id, RequestEvent.REMINDER_SENT, at)
        return message

    # -- assessment ------------------------------------------------------------------

    def assess(self, request_id: str, completeness: analytics.Completeness,
               now: datetime) -> analytics.ComplianceAssessment:
        request = self.requests.get(request_id)
        thread = self.mailroom.get_thread(request.thread_id)
        assessment = analytics.assess_response(request, thread, self.policy,
                                               completeness, now)
        self.assessments[request_id] = assessment
        self.audit.append(Actor.RESEARCHER.value, "assessment.recorded",
                          [request_id, assessment.verdict.value], now)
        return assessment

    def add_time_log(self, request_id: str, role: str, minutes: float,
                     note: str, at: datetime) -> analytics.TimeLogEntry:
        entry = analytics.TimeLogEntry(request_id=request_id, role=role,
                                       minutes=minutes, note=note)
        self.time_logs.append(entry)
        self.audit.append(Actor.RESEARCHER.value, "timelog.added",
                          [request_id, role, f"{minutes:g}m"], at)
        return entry

    def stats(self) -> analytics.CampaignStats:
        requests = list(self.requests.requests.values())
        if not requests:
            raise errors.EmptyCampaign(
                f"campaign {self.campaign.id} has no requests",
                subject_refs=[self.campaign.id],
            )
        missing = [r.id for r in requests if r.id not in self.assessments]
        if missing and self.campaign.status == CampaignStatus.OPEN:
            raise errors.TooEarly(
                f"{len(missing)} requests not yet assessed and the campaign "
                f"is not force-closed",
                subject_refs=missing[:10],
            )
        rows = []
        for request in requests:
            if request.id in self.assessments:
                rows.append(self.assessments[request.id])
            else:
                # Force-closed without assessment counts as silence.
                rows.append(analytics.ComplianceAssessment(
                    request_id=request.id, responded=False, within_deadline=False,
                    completeness=analytics.Completeness.none(),
                    verdict=analytics.Verdict.NO_RESPONSE,
                ))
        return analytics.campaign_stats(
            self.campaign, rows, self.time_logs,
            controllers=len({r.controller_id for r in requests}),
            researchers=self.researchers_count,
            participants=len({r.participant_id for r in requests}),
        )

    # -- wrap-up ------------------------------------------------------------------

    def default_identifier_set(self) -> list[str]:
        identifiers: list[str] = []
        for pid in self.registry.participant_order:
            participant = self.registry.participants[pid]
            identifiers.append(participant.legal_name)
            identifiers.append(participant.surname)
            identifiers.append(self.mailroom.mailbox_address(pid))
        for proof in self.registry.proofs.values():
            identifiers.append(proof.id)
            identifiers.append(proof.storage_ref)
        return identifiers

    def export_documents(self) -> dict[str, str]:
        """The redactable corpus: message files plus stats and assessments."""
        docs: dict[str, str] = {}
        for thread in self.mailroom.threads.values():
            parts = []
            for m in thread.messages:
                body = (self.blobs.get_text(m.body_ref)
                        if m.body_ref else "[unopened]")
                parts.append(
                    f"message: {m.id}\n"
                    f"direction: {m.direction.value}\n"
                    f"channel: {m.channel.value}\n"
                    f"author: {m.author.value}\n"
                    f"from: {m.envelope.from_addr}\n"
                    f"to: {', '.join(m.envelope.to_addrs)}\n"
                    f"date: {m.envelope.timestamp.isoformat()}\n"
                    f"subject: {m.envelope.subject}\n\n"
                    f"{body}\n"
                )
            docs[f"messages/{thread.id}.txt"] = "\n---\n".join(parts)
        docs["assessments.csv"] = self._assessments_csv()
        try:
            row = analytics.row_from_stats(self.campaign.name, self.stats())
            docs["stats.csv"] = analytics.comparison_report_csv([row])
        except errors.DelaccError:
            pass
        return docs

    def _assessments_csv(self) -> str:
        lines = ["request_id,responded,within_deadline,"
                 + ",".join(analytics.COMPLETENESS_DIMENSIONS) + ",verdict"]
        for rid in sorted(self.assessments, key=lambda r: int(r[1:])):
            a = self.assessments[rid]
            dims = ",".join(str(getattr(a.completeness, d)).lower()
                            for d in analytics.COMPLETENESS_DIMENSIONS)
            lines.append(f"{rid},{str(a.responded).lower()},"
                         f"{str(a.within_deadline).lower()},{dims},{a.verdict.value}")
        return "\n".join(lines) + "\n"

    def export_campaign(self, key: str, at: datetime,
                        identifiers: list[str] | None = None) -> vault.ExportBundle:
        bundle = vault.pseudonymize_export(
            self.campaign,
            identifiers if identifiers is not None else self.default_identifier_set(),
            key,
            self.export_documents(),
        )
        self.campaign.export_completed = True
        self.last_export = bundle
        self.audit.append(Actor.RESEARCHER.value, "export.created",
                          [self.campaign.id, f"files={len(bundle.files)}"], at)
        return bundle

    def purge(self, retention_policy: dict[str, str], at: datetime) -> vault.PurgeReport:
        report = vault.purge_blobs(self.campaign, self.blobs, retention_policy)
        self.audit.append(Actor.RESEARCHER.value, "blobs.purged",
                          [self.campaign.id, json.dumps(report.purged, sort_keys=True)],
                          at)
        return report

    # -- researcher visibility ------------------------------------------------------

    def researcher_can_read(self, message: Message) -> bool:
        """Inbound bodies reach the researcher only via share-BCC or a forward."""
        if message.author in (AuthorRole.RESEARCHER,):
            return True
        delivered = self.mailroom.mailboxes.get(self.mailroom.researcher_inbox, [])
        return message.id in delivered

    def forward_to_researcher(self, message_id: str, participant_id: str,
                              at: datetime) -> Message:
        message = self.mailroom.get_message(message_id)
        thread = self.mailroom.get_thread(message.thread_id)
        if thread.participant_id != participant_id:
            raise errors.Forbidden("can only forward messages on your own threads",
                                   subject_refs=[message_id, participant_id])
        self.mailroom.mailboxes.setdefault(
            self.mailroom.researcher_inbox, []).append(message_id)
        self.audit.append(Actor.PARTICIPANT.value, "message.forwarded",
                          [message_id, participant_id], at)
        return message

    # -- persistence -----------------------------------------------------------------

    def to_state(self) -> dict:
        return {
            "config": {
                "project_domain": self.project_domain,
                "postal_address": self.postal_address,
                "policy": self.policy.to_dict(),
                "per_participant_cap": self.per_participant_cap,
                "per_controller_cap": self.per_controller_cap,
                "researchers_count": self.researchers_count,
                "legal_citations": list(self.legal_citations),
                "campaign_name": self.campaign.name,
            },
            "campaign": {
                "id": self.campaign.id,
                "name": self.campaign.name,
                "status": self.campaign.status.value,
                "started_at": (self.campaign.started_at.isoformat()
                               if self.campaign.started_at else None),
                "stopped_at": (self.campaign.stopped_at.isoformat()
                               if self.campaign.stopped_at else None),
                "export_completed": self.campaign.export_completed,
            },
            "registry": self.registry.to_dict(),
            "requests": self.requests.to_dict(),
            "mailroom": self.mailroom.to_dict(),
            "blobs": self.blobs.to_dict(),
            "assessments": [a.to_dict() for a in self.assessments.values()],
            "time_logs": [
                {"request_id": t.request_id, "role": t.role,
                 "minutes": t.minutes, "note": t.note}
                for t in self.time_logs
            ],
            "consent_forms": self.consent_forms,
            "researcher_proof_ref": self.researcher_proof_ref,
        }

    @classmethod
    def from_state(cls, state: dict, audit: AuditLog, transport=None) -> "Workspace":
        cfg = state["config"]
        ws = cls.__new__(cls)
        ws.project_domain = cfg["project_domain"]
        ws.postal_address = cfg["postal_address"]
        ws.policy = DeadlinePolicy.from_dict(cfg["policy"])
        ws.per_participant_cap = cfg["per_participant_cap"]
        ws.per_controller_cap = cfg["per_controller_cap"]
        ws.researchers_count = cfg["researchers_count"]
        ws.legal_citations = tuple(cfg["legal_citations"])
        ws.audit = audit
        ws.blobs = BlobStore.from_dict(state["blobs"])
        ws.registry = Registry.from_dict(state["registry"], audit)
        ws.mailroom = Mailroom(ws.registry, ws.blobs, audit,
                               cfg["project_domain"], transport)
        ws.mailroom.load_dict(state["mailroom"])
        ws.requests = RequestBook(
            ws.registry, audit, ws.policy,
            thread_factory=lambda r: ws.mailroom.create_thread(
                r.id, r.participant_id, r.controller_id).id,
        )
        ws.requests.load_dict(state["requests"])
        ws.templates = letters.TemplateLibrary.builtin()
        camp = state["campaign"]
        ws.campaign = Campaign(
            id=camp["id"], name=camp["name"],
            status=CampaignStatus(camp["status"]),
            started_at=(datetime.fromisoformat(camp["started_at"])
                        if camp["started_at"] else None),
            stopped_at=(datetime.fromisoformat(camp["stopped_at"])
                        if camp["stopped_at"] else None),
            export_completed=camp["export_completed"],
        )
        ws.assessments = {}
        for ad in state["assessments"]:
            assessment = analytics.ComplianceAssessment(
                request_id=ad["request_id"],
                responded=ad["responded"],
                within_deadline=ad["within_deadline"],
                completeness=analytics.Completeness(**ad["completeness"]),
                verdict=analytics.Verdict(ad["verdict"]),
            )
            ws.assessments[assessment.request_id] = assessment
        ws.time_logs = [analytics.TimeLogEntry(**t) for t in state["time_logs"]]
        ws.consent_forms = state["consent_forms"]
        ws.researcher_proof_ref = state["researcher_proof_ref"]
        ws.last_export = None
        return ws

    def save(self, storage_path: Path) -> None:
        storage_path = Path(storage_path)
        storage_path.mkdir(parents=True, exist_ok=True)
        (storage_path / "state.json").write_text(
            json.dumps(self.to_state(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        (storage_path / "audit.jsonl").write_text(
            "\n".join(self.audit.to_lines()) + ("\n" if len(self.audit) else ""),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, storage_path: Path, transport=None) -> "Workspace":
        storage_path = Path(storage_path)
        audit = AuditLog.from_lines(
            (storage_path / "audit.jsonl").read_text(encoding="utf-8").splitlines()
        )
        state = json.loads((storage_path / "state.json").read_text(encoding="utf-8"))
        return cls.from_state(state, audit, transport)
