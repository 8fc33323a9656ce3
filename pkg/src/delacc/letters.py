"""Standardized document generation: request letters, follow-ups, consent forms.

Every access-request letter must carry the five information asks (data copy,
source, purposes, recipients, retention) and the three attachments (signed
consent/delegation form plus both identity proofs); templates that cannot
produce all five asks are rejected at load time, not at send time. Rendering
is pure and deterministic: identical inputs yield byte-identical documents.

Identity proofs never appear inline; documents carry attachment references
only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from importlib import resources
from pathlib import Path

from . import errors
from .lifecycle import AccessRequest, RequestState
from .registry import ConsentScopes, Controller, IdentityProof, Participant

FIVE_ASKS = ("data_copy", "source", "purposes", "recipients", "retention")

ASK_TEXT: dict[str, dict[str, str]] = {
    "en": {
        "data_copy": "a complete copy of all personal data you process about me",
        "source": "the source from which you obtained this data",
        "purposes": "the purposes for which this data is processed",
        "recipients": "the recipients or categories of recipients with whom this data is shared",
        "retention": "the period for which this data will be retained",
    },
}

DEFAULT_LOCALE = "en"

REQUEST_ATTACHMENTS = (
    "consent_delegation_form",
    "participant_identity_proof",
    "researcher_identity_proof",
)

CONSENT_FOOTER_PREFIX = "X-CONSENT-DATA: "


class LetterKind(str, Enum):
    ACCESS_REQUEST = "access_request"
    REMINDER = "reminder"
    DELEGATION_REBUTTAL = "delegation_rebuttal"
    CONSENT_FORM = "consent_form"


@dataclass(frozen=True)
class LetterTemplate:
    kind: LetterKind
    locale: str
    body: str
    required_attachments: tuple[str, ...] = ()


@dataclass
class LetterDocument:
    kind: LetterKind
    text: str
    attachments: dict[str, str] = field(default_factory=dict)

    def manifest_json(self) -> str:
        return json.dumps({"kind": self.kind.value, "attachments": self.attachments},
                          sort_keys=True, separators=(",", ":"))

    def markup(self) -> str:
        """Print-ready HTML wrapper around the plain text (feed to any
        HTML-to-PDF converter); attachments stay references, never content."""
        body = (self.text
                .replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))
        refs = "".join(f"<li>{name}: {ref}</li>"
                       for name, ref in sorted(self.attachments.items()))
        attachment_block = f"<ul class=\"attachments\">{refs}</ul>" if refs else ""
        return (f"<article class=\"letter letter-{self.kind.value}\">"
                f"<pre>{body}</pre>{attachment_block}</article>")


class _KeepUnknown(dict):
    def __missing__(self, key):  # leave unknown placeholders intact
        return "{" + key + "}"


def _expand(body: str, values: dict[str, str]) -> str:
    return body.format_map(_KeepUnknown(values))


def asks_block(locale: str) -> str:
    table = ASK_TEXT.get(locale, ASK_TEXT[DEFAULT_LOCALE])
    return "\n".join(f"  {i}. {table[key]};" for i, key in enumerate(FIVE_ASKS, 1))


def validate_template(template: LetterTemplate) -> None:
    """Access-request templates must expand to contain all five asks."""
    if template.kind != LetterKind.ACCESS_REQUEST:
        return
    probe = _expand(template.body, {
        "participant": "x", "controller": "x", "date": "x",
        "asks": asks_block(template.locale), "signature": "x",
    })
    table = ASK_TEXT.get(template.locale, ASK_TEXT[DEFAULT_LOCALE])
    missing = [key for key in FIVE_ASKS if table[key] not in probe]
    if missing:
        raise errors.TemplateError(
            f"template {template.kind.value}/{template.locale} lacks asks: "
            f"{', '.join(missing)}"
        )


class TemplateLibrary:
    """Template files on disk, one ``<locale>/<kind>.txt`` per document kind.

    Lookup falls back locale -> default locale. The built-in set ships with
    the package; an operator directory can override any file.
    """

    def __init__(self):
        self._templates: dict[tuple[LetterKind, str], LetterTemplate] = {}

    @classmethod
    def builtin(cls) -> "TemplateLibrary":
        lib = cls()
        root = resources.files("delacc") / "templates"
        for locale_dir in sorted(root.iterdir(), key=lambda p: p.name):
            if not locale_dir.is_dir():
                continue
            for kind in LetterKind:
                candidate = locale_dir / f"{kind.value}.txt"
                if candidate.is_file():
                    lib.add(LetterTemplate(
                        kind=kind,
                        locale=locale_dir.name,
                        body=candidate.read_text(encoding="utf-8"),
                        required_attachments=(
                            REQUEST_ATTACHMENTS if kind == LetterKind.ACCESS_REQUEST else ()
                        ),
                    ))
        return lib

    def load_dir(self, path: Path) -> None:
        for locale_dir in sorted(Path(path).iterdir(), key=lambda p: p.name):
            if not locale_dir.is_dir():
                continue
            for file in sorted(locale_dir.glob("*.txt")):
                kind = LetterKind(file.stem)
                self.add(LetterTemplate(
                    kind=kind,
                    locale=locale_dir.name,
                    body=file.read_text(encoding="utf-8"),
                    required_attachments=(
                        REQUEST_ATTACHMENTS if kind == LetterKind.ACCESS_REQUEST else ()
                    ),
                ))

    def add(self, template: LetterTemplate) -> None:
        validate_template(template)
        self._templates[(template.kind, template.locale)] = template

    def get(self, kind: LetterKind, locale: str = DEFAULT_LOCALE) -> LetterTemplate:
        for key in ((kind, locale), (kind, DEFAULT_LOCALE)):
            if key in self._templates:
                return self._templates[key]
        raise errors.TemplateError(f"no template for {kind.value!r}")


def render_request_letter(request: AccessRequest, template: LetterTemplate, *,
                          participant: Participant, controller: Controller,
                          postal_address: str, letter_date: date,
                          participant_proof: IdentityProof | None,
                          researcher_proof_ref: str | None,
                          consent_form_ref: str | None,
                          signature_name: str = "The research team") -> LetterDocument:
    if template.kind != LetterKind.ACCESS_REQUEST:
        raise errors.TemplateError(f"wrong template kind {template.kind.value!r}")
    if request.state != RequestState.DRAFT:
        raise errors.NotInState(
            f"request {request.id} is {request.state.value}, not Draft",
            subject_refs=[request.id],
        )
    if participant_proof is None or not participant_proof.secured:
        raise errors.ProofMissing(
            f"participant {participant.id} has no secured identity proof",
            subject_refs=[participant.id],
        )
    if not researcher_proof_ref:
        raise errors.ProofMissing("researcher identity proof is not on file")
    if not consent_form_ref:
        raise errors.ConsentFormMissing(
            f"no signed consent/delegation form covers ({participant.id}, {controller.id})",
            subject_refs=[participant.id, controller.id],
        )
    signature = f"{signature_name}\non behalf of {participant.legal_name}\n\n{postal_address}"
    text = _expand(template.body, {
        "participant": participant.legal_name,
        "controller": controller.name,
        "date": letter_date.isoformat(),
        "asks": asks_block(template.locale),
        "signature": signature,
    })
    return LetterDocument(
        kind=LetterKind.ACCESS_REQUEST,
        text=text,
        attachments={
            "consent_delegation_form": consent_form_ref,
            "participant_identity_proof": participant_proof.storage_ref,
            "researcher_identity_proof": researcher_proof_ref,
        },
    )


def render_consent_form(participant: Participant,
                        controllers: list[Controller],
                        scopes_by_controller: dict[str, ConsentScopes],
                        form_date: date) -> LetterDocument:
    """Per-organization consent sheet: one signature line per controller."""
    if not controllers:
        raise errors.NothingToConsent("controller list is empty",
                                      subject_refs=[participant.id])
    lines = [
        "RESEARCH CONSENT AND DELEGATION FORM",
        "",
        f"Date: {form_date.isoformat()}",
        f"Participant: {participant.legal_name}",
        "",
        "I delegate the exercise of my right of access, per organization and",
        "per the scopes marked below, to the research team. I may change or",
        "withdraw this consent for any organization at any time.",
        "",
    ]
    for controller in controllers:
        scopes = scopes_by_controller[controller.id]
        marks = (
            f"[{'x' if scopes.communicate else ' '}] communicate  "
            f"[{'x' if scopes.research_use else ' '}] research use  "
            f"[{'x' if scopes.share_responses else ' '}] share responses"
        )
        lines.append(f"  {controller.name}")
        lines.append(f"    {marks}")
        lines.append("    signature: ______________________")
        lines.append("")
    footer = CONSENT_FOOTER_PREFIX + json.dumps(
        {
            "participant": participant.id,
            "controllers": [
                {
                    "id": c.id,
                    "communicate": scopes_by_controller[c.id].communicate,
                    "research_use": scopes_by_controller[c.id].research_use,
                    "share_responses": scopes_by_controller[c.id].share_responses,
                }
                for c in controllers
            ],
        },
        sort_keys=True, separators=(",", ":"),
    )
    lines.append(footer)
    return LetterDocument(kind=LetterKind.CONSENT_FORM, text="\n".join(lines) + "\n")


def parse_consent_footer(text: str) -> tuple[str, dict[str, ConsentScopes]]:
    for line in text.splitlines():
        if line.startswith(CONSENT_FOOTER_PREFIX):
            data = json.loads(line[len(CONSENT_FOOTER_PREFIX):])
            return data["participant"], {
                c["id"]: ConsentScopes(
                    communicate=c["communicate"],
                    research_use=c["research_use"],
                    share_responses=c["share_responses"],
                )
                for c in data["controllers"]
            }
    raise errors.TemplateError("no machine-readable consent footer found")


FOLLOWUP_STATES = (RequestState.SENT, RequestState.REMINDED,
                   RequestState.EXTENDED, RequestState.ESCALATED)


def render_followup(request: AccessRequest, kind: LetterKind, template: LetterTemplate, *,
                    participant: Participant, controller: Controller,
                    letter_date: date, postal_address: str,
                    citations: list[str] | None = None,
                    signature_name: str = "The research team") -> LetterDocument:
    if kind not in (LetterKind.REMINDER, LetterKind.DELEGATION_REBUTTAL):
        raise errors.TemplateError(f"{kind.value!r} is not a follow-up kind")
    if template.kind != kind:
        raise errors.TemplateError(f"wrong template kind {template.kind.value!r}")
    if request.state == RequestState.DRAFT:
        raise errors.NotYetSent(f"request {request.id} has not been sent",
                                subject_refs=[request.id])
    if request.state not in FOLLOWUP_STATES:
        raise errors.FollowupClosed(
            f"request {request.id} is {request.state.value}",
            subject_refs=[request.id],
        )
    citation_block = "\n\n".join(citations or [])
    signature = f"{signature_name}\non behalf of {participant.legal_name}\n\n{postal_address}"
    text = _expand(template.body, {
        "participant": participant.legal_name,
        "controller": controller.name,
        "date": letter_date.isoformat(),
        "sent_date": request.sent_at.date().isoformat(),
        "deadline": request.effective_deadline.isoformat(),
        "citations": citation_block,
        "signature": signature,
    })
    return LetterDocument(kind=kind, text=text)
