"""Project mailboxes, blind-copy routing, ingestion, and the central log.

Routing is a pure function of (message, consent snapshot): outbound mail on a
participant's behalf always blind-copies the participant; inbound mail always
reaches the participant and blind-copies the researcher only when that pair's
grant shares responses. A revoked grant blocks outbound delivery outright.

Everything that cannot be matched to a known thread lands in a quarantine
queue for manual triage instead of being guessed at. Physical letters are
logged unopened (no body ref) until the addressee authorizes that specific
letter; the digital scan still reaches the participant's own mailbox either
way, so the central log stays complete.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from datetime import datetime
from email.utils import format_datetime, getaddresses, parsedate_to_datetime
from enum import Enum
from pathlib import Path

from . import errors
from .model import Actor, IdAllocator
from .registry import ConsentSnapshot, ContactKind, Registry
from .vault import AuditLog, BlobStore

# Latin letters NFKD cannot decompose.
_FOLD_TABLE = str.maketrans({
    "Ł": "L", "ł": "l", "Ø": "O", "ø": "o", "Đ": "D", "đ": "d",
    "Ħ": "H", "ħ": "h", "ı": "i", "ß": "ss", "Æ": "AE", "æ": "ae",
    "Œ": "OE", "œ": "oe", "Þ": "TH", "þ": "th", "Ð": "D", "ð": "d",
})


def normalize_surname(surname: str) -> str:
    """Lowercased ASCII mailbox local part: diacritics folded, punctuation dropped."""
    folded = unicodedata.normalize("NFKD", surname.translate(_FOLD_TABLE))
    stripped = "".join(ch for ch in folded if not unicodedata.combining(ch))
    local = re.sub(r"[^a-z0-9]", "", stripped.lower())
    if not local:
        raise errors.UnusableSurname(f"surname {surname!r} normalizes to nothing")
    return local


class Direction(str, Enum):
    OUTBOUND = "outbound"
    INBOUND = "inbound"


class MessageChannel(str, Enum):
    EMAIL = "email"
    POST = "post"
    PHONE = "phone"
    WEBFORM = "webform"
    IN_PERSON = "in_person"


class AuthorRole(str, Enum):
    RESEARCHER = "researcher"
    PARTICIPANT = "participant"
    CONTROLLER = "controller"


class OpenStatus(str, Enum):
    UNOPENED = "unopened"
    OPENED = "opened"


class RoutingRationale(str, Enum):
    OUTBOUND_ALWAYS_BCC_PARTICIPANT = "outbound_always_bcc_participant"
    INBOUND_SHARE_ON = "inbound_share_on"
    INBOUND_SHARE_OFF = "inbound_share_off"
    BLOCKED_CONSENT_REVOKED = "blocked_consent_revoked"


@dataclass(frozen=True)
class RoutingDecision:
    deliver_to: frozenset[str]
    blind_copies: frozenset[str]
    rationale: RoutingRationale
    consent_version: int

    def __post_init__(self):
        if self.deliver_to & self.blind_copies:
            raise ValueError("deliver_to and blind_copies must be disjoint")


@dataclass
class Envelope:
    from_addr: str
    to_addrs: list[str]
    timestamp: datetime
    subject: str
    message_id: str | None = None  # RFC-style <id@domain>, when known
    in_reply_to: str | None = None


@dataclass
class Message:
    id: str
    thread_id: str
    direction: Direction
    channel: MessageChannel
    author: AuthorRole
    envelope: Envelope
    body_ref: str | None = None
    attachments: list[str] = field(default_factory=list)
    open_status: OpenStatus | None = None  # post only
    open_authorization: tuple[str, str] | None = None  # (iso ts, ack ref)
    scan_ref: str | None = None  # post only; addressee-visible scan
    letter_id: str | None = None  # post only
    substantive: bool = False  # operator triage flag
    direct_plea: bool = False  # participant flagged for researcher attention

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "thread_id": self.thread_id,
            "direction": self.direction.value,
            "channel": self.channel.value,
            "author": self.author.value,
            "envelope": {
                "from": self.envelope.from_addr,
                "to": list(self.envelope.to_addrs),
                "timestamp": self.envelope.timestamp.isoformat(),
                "subject": self.envelope.subject,
                "message_id": self.envelope.message_id,
                "in_reply_to": self.envelope.in_reply_to,
            },
            "body_ref": self.body_ref,
            "attachments": list(self.attachments),
            "open_status": self.open_status.value if self.open_status else None,
            "open_authorization": (
                list(self.open_authorization) if self.open_authorization else None
            ),
            "scan_ref": self.scan_ref,
            "letter_id": self.letter_id,
            "substantive": self.substantive,
            "direct_plea": self.direct_plea,
        }


@dataclass
class Thread:
    id: str
    request_id: str
    participant_id: str
    controller_id: str
    messages: list[Message] = field(default_factory=list)

    @property
    def pair(self) -> tuple[str, str]:
        return (self.participant_id, self.controller_id)


@dataclass
class QuarantineItem:
    id: str
    received_at: datetime
    reason: str
    raw: str | None = None
    scan: "PhysicalScanMeta | None" = None


@dataclass
class PhysicalScanMeta:
    sender_controller_id: str
    addressee_participant_id: str
    received_at: datetime
    letter_id: str
    scan_text: str


@dataclass
class LetterAuthorization:
    letter_id: str
    acked_at: datetime
    ack_ref: str


@dataclass
class ParsedEmail:
    from_addr: str
    to_addrs: list[str]
    date: datetime
    subject: str
    message_id: str | None
    in_reply_to: str | None
    references: list[str]
    body: str


_HEADER_RE = re.compile(r"^([\x21-\x39\x3b-\x7e]+):[ \t]?(.*)$")
_REQUIRED_HEADERS = ("from", "to", "date", "subject")


def parse_email_text(raw: str) -> ParsedEmail:
    """Strict header-block parser. Failures carry the offending line number."""
    lines = raw.splitlines()
    headers: dict[str, str] = {}
    header_lines: dict[str, int] = {}
    last_key: str | None = None
    body_start = len(lines)
    for i, line in enumerate(lines):
        if line == "":
            body_start = i + 1
            break
        if line[0] in " \t":
            if last_key is None:
                raise errors.ParseError("continuation before any header", line=i + 1)
            headers[last_key] += " " + line.strip()
            continue
        match = _HEADER_RE.match(line)
        if match is None:
            raise errors.ParseError(f"not a header line: {line[:40]!r}", line=i + 1)
        key = match.group(1).lower()
        if key not in headers:  # first occurrence wins
            headers[key] = match.group(2)
            header_lines[key] = i + 1
        last_key = key

    if not headers:
        raise errors.ParseError("no header block", line=1)
    for name in _REQUIRED_HEADERS:
        if name not in headers:
            raise errors.ParseError(f"missing required header {name!r}",
                                    line=min(body_start, len(lines)))
    try:
        date = parsedate_to_datetime(headers["date"])
    except (ValueError, TypeError):
        raise errors.ParseError(f"unparseable date {headers['date']!r}",
                                line=header_lines["date"]) from None

    to_addrs = [addr for _, addr in getaddresses([headers["to"]]) if addr]
    if not to_addrs:
        raise errors.ParseError("no recipient address", line=header_lines["to"])
    from_pairs = getaddresses([headers["from"]])
    if not from_pairs or not from_pairs[0][1]:
        raise errors.ParseError("no sender address", line=header_lines["from"])

    references = headers.get("references", "").split()
    return ParsedEmail(
        from_addr=from_pairs[0][1],
        to_addrs=to_addrs,
        date=date,
        subject=headers["subject"],
        message_id=headers.get("message-id", "").strip() or None,
        in_reply_to=headers.get("in-reply-to", "").strip() or None,
        references=references,
        body="\n".join(lines[body_start:]),
    )


# -- transports ---------------------------------------------------------------

class InMemoryTransport:
    """Test/simulation transport: sent mail collects, inbound mail is queued."""

    name = "in_memory"

    def __init__(self):
        self.sent: list[str] = []
        self._inbound: list[str] = []

    def send(self, raw: str) -> None:
        self.sent.append(raw)

    def queue_inbound(self, raw: str) -> None:
        self._inbound.append(raw)

    def poll(self) -> list[str]:
        drained, self._inbound = self._inbound, []
        return drained


class FileSpoolTransport:
    """Spool directories for integrating a real mail system by hand.

    Outbound messages are written to ``outbound/`` as numbered .eml files;
    ``poll`` consumes ``inbound/*.eml`` in name order and moves them to
    ``inbound/processed/``. Letter scans are dropped into ``scans/`` as an
    image/text file plus a same-stem ``.json`` metadata sidecar, consumed by
    ``poll_scans``.
    """

    name = "file_spool"

    def __init__(self, root: Path):
        self.root = Path(root)
        self.outbound_dir = self.root / "outbound"
        self.inbound_dir = self.root / "inbound"
        self.processed_dir = self.inbound_dir / "processed"
        self.scans_dir = self.root / "scans"
        self.scans_processed_dir = self.scans_dir / "processed"
        for d in (self.outbound_dir, self.inbound_dir, self.processed_dir,
                  self.scans_dir, self.scans_processed_dir):
            d.mkdir(parents=True, exist_ok=True)
        self._counter = len(list(self.outbound_dir.glob("*.eml")))

    def send(self, raw: str) -> None:
        self._counter += 1
        (self.outbound_dir / f"msg-{self._counter:06d}.eml").write_text(
            raw, encoding="utf-8")

    def poll(self) -> list[str]:
        out = []
        for path in sorted(self.inbound_dir.glob("*.eml")):
            out.append(path.read_text(encoding="utf-8"))
            path.rename(self.processed_dir / path.name)
        return out

    def poll_scans(self) -> list["PhysicalScanMeta"]:
        out = []
        for sidecar in sorted(self.scans_dir.glob("*.json")):
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
            scan_file = self.scans_dir / meta["scan_file"]
            out.append(PhysicalScanMeta(
                sender_controller_id=meta["sender_controller_id"],
                addressee_participant_id=meta["addressee_participant_id"],
                received_at=datetime.fromisoformat(meta["received_at"]),
                letter_id=meta["letter_id"],
                scan_text=scan_file.read_text(encoding="utf-8"),
            ))
            sidecar.rename(self.scans_processed_dir / sidecar.name)
            if scan_file.exists():
                scan_file.rename(self.scans_processed_dir / scan_file.name)
        return out


# -- the mailroom ----------------------------------------------------------------

RESEARCHER_LOCAL = "researcher"
QUARANTINE_LOCAL = "quarantine"


class Mailroom:
    """Thread store, mailbox directory, and routing engine for one project."""

    def __init__(self, registry: Registry, blobs: BlobStore, audit: AuditLog,
                 project_domain: str, transport=None):
        self._registry = registry
        self._blobs = blobs
        self._audit = audit
        self.project_domain = project_domain
        self.transport = transport if transport is not None else InMemoryTransport()
        self._ids = IdAllocator()
        self.threads: dict[str, Thread] = {}
        self.quarantine: list[QuarantineItem] = []
        self.mailboxes: dict[str, list[str]] = {}  # internal address -> message ids
        self._address_by_participant: dict[str, str] = {}
        self._assigned: set[str] = set()
        self._message_index: dict[str, tuple[str, str]] = {}  # msg id -> (thread, msg)
        self._outbound_header_ids: dict[str, str] = {}  # rfc message-id -> thread id

    # -- addressing -----------------------------------------------------------

    @property
    def researcher_inbox(self) -> str:
        return f"{RESEARCHER_LOCAL}@{self.project_domain}"

    @property
    def quarantine_inbox(self) -> str:
        return f"{QUARANTINE_LOCAL}@{self.project_domain}"

    def mailbox_address(self, participant_id: str) -> str:
        """<surname@projectdomain>, assigned in participant registration order."""
        if participant_id in self._address_by_participant:
            return self._address_by_participant[participant_id]
        # Assign in registration order so collisions resolve the same way
        # regardless of who asks first.
        for pid in self._registry.participant_order:
            if pid in self._address_by_participant:
                continue
            local = normalize_surname(self._registry.participants[pid].surname)
            candidate = f"{local}@{self.project_domain}"
            suffix = 2
            while candidate in self._assigned:
                candidate = f"{local}{suffix}@{self.project_domain}"
                suffix += 1
            self._address_by_participant[pid] = candidate
            self._assigned.add(candidate)
            if pid == participant_id:
                break
        try:
            return self._address_by_participant[participant_id]
        except KeyError:
            raise errors.UnknownParticipant(
                f"no participant {participant_id!r}", subject_refs=[participant_id]
            ) from None

    def participant_for_address(self, address: str) -> str | None:
        for pid, addr in self._address_by_participant.items():
            if addr == address:
                return pid
        return None

    # -- threads ----------------------------------------------------------------

    def create_thread(self, request_id: str, participant_id: str,
                      controller_id: str) -> Thread:
        thread = Thread(
            id=self._ids.next("t"),
            request_id=request_id,
            participant_id=participant_id,
            controller_id=controller_id,
        )
        self.threads[thread.id] = thread
        return thread

    def get_thread(self, thread_id: str) -> Thread:
        try:
            return self.threads[thread_id]
        except KeyError:
            raise errors.UnknownThread(f"no thread {thread_id!r}",
                                       subject_refs=[thread_id]) from None

    def get_message(self, message_id: str) -> Message:
        try:
            thread_id, _ = self._message_index[message_id]
        except KeyError:
            raise errors.UnknownMessage(f"no message {message_id!r}",
                                        subject_refs=[message_id]) from None
        for m in self.threads[thread_id].messages:
            if m.id == message_id:
                return m
        raise errors.UnknownMessage(f"no message {message_id!r}")

    def _append(self, thread: Thread, message: Message) -> None:
        thread.messages.append(message)
        self._message_index[message.id] = (thread.id, message.id)
        if message.envelope.message_id:
            self._outbound_header_ids.setdefault(message.envelope.message_id, thread.id)

    def _deliver(self, message_id: str, addresses: frozenset[str]) -> None:
        for addr in addresses:
            if addr.endswith("@" + self.project_domain):
                self.mailboxes.setdefault(addr, []).append(message_id)

    # -- routing (pure given a snapshot) ------------------------------------------

    def route_outbound(self, thread: Thread, author: AuthorRole,
                       snapshot: ConsentSnapshot) -> RoutingDecision:
        """Delivery set for mail sent to the controller on the thread's behalf."""
        pid, cid = thread.pair
        if not snapshot.allows_communication(pid, cid):
            raise errors.ConsentBlocked(
                f"consent for ({pid}, {cid}) is revoked or never allowed communication",
                subject_refs=[pid, cid, thread.id],
            )
        controller = self._registry.controllers[cid]
        if author == AuthorRole.PARTICIPANT:
            # Participant took the thread over; researcher copy keeps the log whole.
            bcc = frozenset({self.researcher_inbox})
        else:
            bcc = frozenset({self.mailbox_address(pid)})
        return RoutingDecision(
            deliver_to=frozenset({controller.contact_address}),
            blind_copies=bcc,
            rationale=RoutingRationale.OUTBOUND_ALWAYS_BCC_PARTICIPANT,
            consent_version=snapshot.version,
        )

    def route_inbound(self, thread: Thread,
                      snapshot: ConsentSnapshot) -> RoutingDecision:
        """Delivery set for controller mail: participant always, researcher on share."""
        pid, cid = thread.pair
        if snapshot.shares_responses(pid, cid):
            return RoutingDecision(
                deliver_to=frozenset({self.mailbox_address(pid)}),
                blind_copies=frozenset({self.researcher_inbox}),
                rationale=RoutingRationale.INBOUND_SHARE_ON,
                consent_version=snapshot.version,
            )
        return RoutingDecision(
            deliver_to=frozenset({self.mailbox_address(pid)}),
            blind_copies=frozenset(),
            rationale=RoutingRationale.INBOUND_SHARE_OFF,
            consent_version=snapshot.version,
        )

    # -- outbound ----------------------------------------------------------------

    _OUTBOUND_CHANNEL = {
        ContactKind.EMAIL: MessageChannel.EMAIL,
        ContactKind.POST: MessageChannel.POST,
        ContactKind.WEBFORM: MessageChannel.WEBFORM,
    }

    def send_outbound(self, thread_id: str, author: AuthorRole, subject: str,
                      body: str, at: datetime,
                      attachments: list[str] | None = None) -> tuple[Message, RoutingDecision]:
        thread = self.get_thread(thread_id)
        snapshot = self._registry.snapshot()
        try:
            decision = self.route_outbound(thread, author, snapshot)
        except errors.ConsentBlocked:
            self._audit.append(
                Actor.SYSTEM.value, "routing.blocked",
                [thread.id, RoutingRationale.BLOCKED_CONSENT_REVOKED.value,
                 f"v{snapshot.version}"],
                at,
            )
            raise
        message_id = self._ids.next("m")
        from_addr = (
            self.mailbox_address(thread.participant_id)
            if author == AuthorRole.PARTICIPANT
            else self.researcher_inbox
        )
        # The channel follows the controller's contact method; the raw copy
        # still goes through the transport (print/submit instructions for
        # non-mail channels), and the participant BCC doubles as the digital
        # scan of an outgoing letter.
        contact_kind = self._registry.controllers[thread.controller_id].contact_kind
        message = Message(
            id=message_id,
            thread_id=thread.id,
            direction=Direction.OUTBOUND,
            channel=self._OUTBOUND_CHANNEL[contact_kind],
            author=author,
            envelope=Envelope(
                from_addr=from_addr,
                to_addrs=sorted(decision.deliver_to),
                timestamp=at,
                subject=subject,
                message_id=f"<{message_id}@{self.project_domain}>",
            ),
            body_ref=self._blobs.put_text("body", body, label=f"{thread.id}/{message_id}"),
            attachments=list(attachments or []),
        )
        self._append(thread, message)
        self._deliver(message.id, decision.deliver_to | decision.blind_copies)
        self.transport.send(self.render_raw(message, decision))
        self._audit.append(Actor.SYSTEM.value, "message.sent",
                           [message.id, thread.id, decision.rationale.value], at)
        return message, decision

    def render_raw(self, message: Message, decision: RoutingDecision) -> str:
        env = message.envelope
        def header_safe(value: str) -> str:
            return ", ".join(part.strip() for part in value.splitlines() if part.strip())
        lines = [
            f"From: {env.from_addr}",
            f"To: {', '.join(header_safe(a) for a in env.to_addrs)}",
        ]
        if decision.blind_copies:
            lines.append(f"Bcc: {', '.join(sorted(decision.blind_copies))}")
        lines.append(f"Date: {format_datetime(env.timestamp)}")
        lines.append(f"Subject: {env.subject}")
        if env.message_id:
            lines.append(f"Message-ID: {env.message_id}")
        if env.in_reply_to:
            lines.append(f"In-Reply-To: {env.in_reply_to}")
        if message.attachments:
            lines.append(f"X-Attachments: {', '.join(message.attachments)}")
        body = self._blobs.get_text(message.body_ref) if message.body_ref else ""
        return "\n".join(lines) + "\n\n" + body


    # -- inbound -----------------------------------------------------------------

    def _controller_domain(self, controller_id: str) -> str | None:
        controller = self._registry.controllers.get(controller_id)
        if controller and controller.contact_kind == ContactKind.EMAIL:
            return controller.contact_address.rsplit("@", 1)[-1].lower()
        return None

    def match_thread(self, parsed: ParsedEmail) -> Thread | None:
        """Threading-header match first, then participant mailbox + sender domain."""
        for ref in ([parsed.in_reply_to] if parsed.in_reply_to else []) + parsed.references:
            thread_id = self._outbound_header_ids.get(ref)
            if thread_id:
                return self.threads[thread_id]
        sender_domain = parsed.from_addr.rsplit("@", 1)[-1].lower()
        candidates = []
        for thread in self.threads.values():
            mailbox = self._address_by_participant.get(thread.participant_id)
            if mailbox is None or mailbox not in parsed.to_addrs:
                continue
            if self._controller_domain(thread.controller_id) == sender_domain:
                candidates.append(thread)
        if candidates:
            # Newest thread wins if a pair somehow has several.
            return max(candidates, key=lambda t: int(t.id[1:]))
        return None

    def ingest_email(self, raw: str, received_at: datetime | None = None) -> Message | QuarantineItem:
        parsed = parse_email_text(raw)
        at = received_at or parsed.date
        thread = self.match_thread(parsed)
        if thread is None:
            return self._quarantine_raw(raw, at, "no matching thread")
        return self.deliver_inbound(thread, parsed, at)

    def deliver_inbound(self, thread: Thread, parsed: ParsedEmail,
                        at: datetime) -> Message:
        snapshot = self._registry.snapshot()
        decision = self.route_inbound(thread, snapshot)
        message = Message(
            id=self._ids.next("m"),
            thread_id=thread.id,
            direction=Direction.INBOUND,
            channel=MessageChannel.EMAIL,
            author=AuthorRole.CONTROLLER,
            envelope=Envelope(
                from_addr=parsed.from_addr,
                to_addrs=list(parsed.to_addrs),
                timestamp=parsed.date,
                subject=parsed.subject,
                message_id=parsed.message_id,
                in_reply_to=parsed.in_reply_to,
            ),
            body_ref=self._blobs.put_text("body", parsed.body,
                                          label=f"{thread.id}/inbound"),
        )
        self._append(thread, message)
        self._deliver(message.id, decision.deliver_to | decision.blind_copies)
        self._audit.append(Actor.SYSTEM.value, "message.received",
                           [message.id, thread.id, decision.rationale.value], at)
        return message

    def _quarantine_raw(self, raw: str, at: datetime, reason: str) -> QuarantineItem:
        item = QuarantineItem(id=self._ids.next("q"), received_at=at,
                              reason=reason, raw=raw)
        self.quarantine.append(item)
        self.mailboxes.setdefault(self.quarantine_inbox, []).append(item.id)
        self._audit.append(Actor.SYSTEM.value, "message.quarantined",
                           [item.id, reason], at)
        return item

    def triage_assign(self, item_id: str, thread_id: str, at: datetime) -> Message:
        item = self._take_quarantined(item_id, at)
        thread = self.get_thread(thread_id)
        if item.raw is not None:
            return self.deliver_inbound(thread, parse_email_text(item.raw), at)
        if item.scan is not None:
            return self._deliver_letter(thread, item.scan, None)
        raise errors.UnknownMessage(f"quarantine item {item_id} has no payload")

    def triage_drop(self, item_id: str, at: datetime) -> None:
        self._take_quarantined(item_id, at)

    def _take_quarantined(self, item_id: str, at: datetime) -> QuarantineItem:
        for i, item in enumerate(self.quarantine):
            if item.id == item_id:
                self.quarantine.pop(i)
                self._audit.append(Actor.RESEARCHER.value, "quarantine.triaged",
                                   [item_id], at)
                return item
        raise errors.NotFound(f"no quarantine item {item_id!r}", subject_refs=[item_id])

    # -- physical mail -------------------------------------------------------------

    def ingest_physical(self, scan: PhysicalScanMeta,
                        authorization: LetterAuthorization | None = None) -> Message | QuarantineItem:
        if authorization is not None and authorization.letter_id != scan.letter_id:
            raise errors.AuthorizationMismatch(
                f"ack covers letter {authorization.letter_id!r}, "
                f"scan is {scan.letter_id!r}",
                subject_refs=[scan.letter_id, authorization.letter_id],
            )
        pid = scan.addressee_participant_id
        threads = [t for t in self.threads.values()
                   if t.pair == (pid, scan.sender_controller_id)]
        if not threads:
            item = QuarantineItem(id=self._ids.next("q"), received_at=scan.received_at,
                                  reason="no thread for letter", scan=scan)
            self.quarantine.append(item)
            self._audit.append(Actor.SYSTEM.value, "message.quarantined",
                               [item.id, "no thread for letter"], scan.received_at)
            return item
        thread = max(threads, key=lambda t: int(t.id[1:]))
        return self._deliver_letter(thread, scan, authorization)

    def _deliver_letter(self, thread: Thread, scan: PhysicalScanMeta,
                        authorization: LetterAuthorization | None) -> Message:
        pid = thread.participant_id
        scan_ref = self._blobs.put_text("scan", scan.scan_text,
                                        label=f"letter/{scan.letter_id}")
        opened = authorization is not None
        message = Message(
            id=self._ids.next("m"),
            thread_id=thread.id,
            direction=Direction.INBOUND,
            channel=MessageChannel.POST,
            author=AuthorRole.CONTROLLER,
            envelope=Envelope(
                from_addr=scan.sender_controller_id,
                to_addrs=[self.mailbox_address(pid)],
                timestamp=scan.received_at,
                subject=f"Letter {scan.letter_id}",
            ),
            # Unopened letters keep their content out of every API surface.
            body_ref=(self._blobs.put_text("body", scan.scan_text,
                                           label=f"letter/{scan.letter_id}/opened")
                      if opened else None),
            open_status=OpenStatus.OPENED if opened else OpenStatus.UNOPENED,
            open_authorization=(
                (authorization.acked_at.isoformat(), authorization.ack_ref)
                if opened else None
            ),
            scan_ref=scan_ref,
            letter_id=scan.letter_id,
        )
        self._append(thread, message)
        # The scan notification goes to the participant mailbox either way;
        # the researcher only gets the content once opening was authorized.
        self._deliver(message.id, frozenset({self.mailbox_address(pid)}))
        if opened:
            self._deliver(message.id, frozenset({self.researcher_inbox}))
        self._audit.append(
            Actor.SYSTEM.value, "letter.received",
            [message.id, thread.id, message.open_status.value], scan.received_at)
        return message

    def authorize_letter(self, message_id: str,
                         authorization: LetterAuthorization) -> Message:
        """Open a previously-unopened letter after the addressee's per-letter ack."""
        message = self.get_message(message_id)
        if message.channel != MessageChannel.POST:
            raise errors.AuthorizationMismatch("not a physical letter",
                                               subject_refs=[message_id])
        if authorization.letter_id != message.letter_id:
            raise errors.AuthorizationMismatch(
                f"ack covers letter {authorization.letter_id!r}, "
                f"message is {message.letter_id!r}",
                subject_refs=[message_id, authorization.letter_id],
            )
        if message.open_status == OpenStatus.OPENED:
            return message
        scan_text = self._blobs.get_text(message.scan_ref)
        message.body_ref = self._blobs.put_text(
            "body", scan_text, label=f"letter/{message.letter_id}/opened")
        message.open_status = OpenStatus.OPENED
        message.open_authorization = (authorization.acked_at.isoformat(),
                                      authorization.ack_ref)
        self._deliver(message.id, frozenset({self.researcher_inbox}))
        self._audit.append(Actor.PARTICIPANT.value, "letter.opened",
                           [message.id, message.thread_id], authorization.acked_at)
        return message

    # -- offline channels ------------------------------------------------------------

    def record_offline_contact(self, thread_id: str, channel: MessageChannel,
                               summary: str, at: datetime,
                               direction: Direction = Direction.INBOUND) -> Message:
        if channel not in (MessageChannel.PHONE, MessageChannel.WEBFORM,
                           MessageChannel.IN_PERSON):
            raise ValueError(f"{channel} is not an offline channel")
        thread = self.get_thread(thread_id)
        message = Message(
            id=self._ids.next("m"),
            thread_id=thread.id,
            direction=direction,
            channel=channel,
            author=AuthorRole.RESEARCHER,
            envelope=Envelope(
                from_addr=self.researcher_inbox,
                to_addrs=[self.mailbox_address(thread.participant_id)],
                timestamp=at,
                subject=f"{channel.value} contact summary",
            ),
            body_ref=self._blobs.put_text("body", summary,
                                          label=f"{thread.id}/offline"),
        )
        self._append(thread, message)
        self._deliver(message.id,
                      frozenset({self.mailbox_address(thread.participant_id)}))
        self._audit.append(Actor.RESEARCHER.value, "offline.recorded",
                           [message.id, thread.id, channel.value], at)
        return message

    # -- central-log bookkeeping ---------------------------------------------------

    def participant_visible_ids(self, thread: Thread) -> set[str]:
        mailbox = self._address_by_participant.get(thread.participant_id)
        delivered = set(self.mailboxes.get(mailbox, [])) if mailbox else set()
        authored = {m.id for m in thread.messages
                    if m.author == AuthorRole.PARTICIPANT}
        return {m.id for m in thread.messages if m.id in delivered} | authored

    def flag_message(self, message_id: str, at: datetime, *,
                     substantive: bool | None = None,
                     direct_plea: bool | None = None,
                     actor: Actor = Actor.RESEARCHER) -> Message:
        message = self.get_message(message_id)
        if substantive is not None:
            message.substantive = substantive
        if direct_plea is not None:
            message.direct_plea = direct_plea
        self._audit.append(actor.value, "message.flagged",
                           [message_id,
                            f"substantive={message.substantive}",
                            f"direct_plea={message.direct_plea}"], at)
        return message

    # -- persistence -----------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "ids": self._ids.to_dict(),
            "project_domain": self.project_domain,
            "threads": [
                {
                    "id": t.id,
                    "request_id": t.request_id,
                    "participant_id": t.participant_id,
                    "controller_id": t.controller_id,
                    "messages": [m.to_dict() for m in t.messages],
                }
                for t in self.threads.values()
            ],
            "quarantine": [
                {
                    "id": q.id,
                    "received_at": q.received_at.isoformat(),
                    "reason": q.reason,
                    "raw": q.raw,
                    "scan": None if q.scan is None else {
                        "sender_controller_id": q.scan.sender_controller_id,
                        "addressee_participant_id": q.scan.addressee_participant_id,
                        "received_at": q.scan.received_at.isoformat(),
                        "letter_id": q.scan.letter_id,
                        "scan_text": q.scan.scan_text,
                    },
                }
                for q in self.quarantine
            ],
            "mailboxes": {k: list(v) for k, v in self.mailboxes.items()},
            "address_by_participant": dict(self._address_by_participant),
        }

    def load_dict(self, data: dict) -> None:
        self._ids = IdAllocator(data["ids"])
        self.project_domain = data["project_domain"]
        self._address_by_participant = dict(data["address_by_participant"])
        self._assigned = set(self._address_by_participant.values())
        self.mailboxes = {k: list(v) for k, v in data["mailboxes"].items()}
        for td in data["threads"]:
            thread = Thread(
                id=td["id"],
                request_id=td["request_id"],
                participant_id=td["participant_id"],
                controller_id=td["controller_id"],
            )
            for md in td["messages"]:
                env = md["envelope"]
                message = Message(
                    id=md["id"],
                    thread_id=md["thread_id"],
                    direction=Direction(md["direction"]),
                    channel=MessageChannel(md["channel"]),
                    author=AuthorRole(md["author"]),
                    envelope=Envelope(
                        from_addr=env["from"],
                        to_addrs=list(env["to"]),
                        timestamp=datetime.fromisoformat(env["timestamp"]),
                        subject=env["subject"],
                        message_id=env["message_id"],
                        in_reply_to=env["in_reply_to"],
                    ),
                    body_ref=md["body_ref"],
                    attachments=list(md["attachments"]),
                    open_status=OpenStatus(md["open_status"]) if md["open_status"] else None,
                    open_authorization=(
                        tuple(md["open_authorization"])
                        if md["open_authorization"] else None
                    ),
                    scan_ref=md["scan_ref"],
                    letter_id=md["letter_id"],
                    substantive=md["substantive"],
                    direct_plea=md["direct_plea"],
                )
                thread.messages.append(message)
                self._message_index[message.id] = (thread.id, message.id)
                # Same indexing rule as the live path: any known RFC id
                # resolves replies to its thread.
                if message.envelope.message_id:
                    self._outbound_header_ids.setdefault(
                        message.envelope.message_id, thread.id)
            self.threads[thread.id] = thread
        for qd in data["quarantine"]:
            scan = None
            if qd["scan"]:
                s = qd["scan"]
                scan = PhysicalScanMeta(
                    sender_controller_id=s["sender_controller_id"],
                    addressee_participant_id=s["addressee_participant_id"],
                    received_at=datetime.fromisoformat(s["received_at"]),
                    letter_id=s["letter_id"],
                    scan_text=s["scan_text"],
                )
            self.quarantine.append(QuarantineItem(
                id=qd["id"],
                received_at=datetime.fromisoformat(qd["received_at"]),
                reason=qd["reason"],
                raw=qd["raw"],
                scan=scan,
            ))
