"""Append-only audit chain, blob storage, and wrap-up redaction.

The audit log is the single serialization point of the whole system: every
mutation in every module appends exactly one event here. Events are chained
with SHA-256 over a canonical JSON encoding, so any after-the-fact edit of a
persisted event is detectable, and the first broken sequence number is
reported.

Blobs (message bodies, identity proofs, letter scans) are stored by opaque
ref and never inlined into domain records. Wrap-up redaction replaces every
declared identifier with a sequential token; the identifier->token map is
encrypted under an operator-held key and kept outside the export bundle.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from cryptography.fernet import Fernet, InvalidToken

from .errors import CampaignOpen, NothingToRedact, UnknownBlob
from .model import Campaign, CampaignStatus

GENESIS_HASH = "0" * 64

# Fixed per campaign and recorded in the export manifest.
HASH_ALGORITHM = "sha256"
TOKEN_PREFIX = "SUBJ"


def _event_digest(seq: int, at: str, actor: str, action: str,
                  subject_refs: list[str], prev_hash: str) -> str:
    payload = json.dumps(
        {
            "seq": seq,
            "at": at,
            "actor": actor,
            "action": action,
            "subject_refs": subject_refs,
            "prev_hash": prev_hash,
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    at: str  # ISO timestamp
    actor: str
    action: str
    subject_refs: tuple[str, ...]
    prev_hash: str
    hash: str

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "at": self.at,
            "actor": self.actor,
            "action": self.action,
            "subject_refs": list(self.subject_refs),
            "prev_hash": self.prev_hash,
            "hash": self.hash,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class VerifyReport:
    valid: bool
    length: int
    first_broken_seq: int | None = None
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "length": self.length,
            "first_broken_seq": self.first_broken_seq,
            "reason": self.reason,
        }


class AuditLog:
    """Hash-chained append-only log. The only write operation is append."""

    def __init__(self):
        self._events: list[AuditEvent] = []

    def __len__(self) -> int:
        return len(self._events)

    @property
    def events(self) -> tuple[AuditEvent, ...]:
        return tuple(self._events)

    @property
    def head_hash(self) -> str:
        return self._events[-1].hash if self._events else GENESIS_HASH

    def append(self, actor: str, action: str, subject_refs: list[str],
               at: datetime) -> AuditEvent:
        seq = len(self._events) + 1
        at_iso = at.isoformat()
        prev = self.head_hash
        digest = _event_digest(seq, at_iso, actor, action, list(subject_refs), prev)
        event = AuditEvent(
            seq=seq,
            at=at_iso,
            actor=actor,
            action=action,
            subject_refs=tuple(subject_refs),
            prev_hash=prev,
            hash=digest,
        )
        self._events.append(event)
        return event

    def verify(self) -> VerifyReport:
        return verify_events([e.to_dict() for e in self._events])

    def to_lines(self) -> list[str]:
        return [e.to_line() for e in self._events]

    @classmethod
    def from_lines(cls, lines: list[str]) -> "AuditLog":
        log = cls()
        for line in lines:
            if not line.strip():
                continue
            d = json.loads(line)
            log._events.append(AuditEvent(
                seq=d["seq"],
                at=d["at"],
                actor=d["actor"],
                action=d["action"],
                subject_refs=tuple(d["subject_refs"]),
                prev_hash=d["prev_hash"],
                hash=d["hash"],
            ))
        return log

    def count_for_action(self, action: str) -> int:
        return sum(1 for e in self._events if e.action == action)


def verify_events(events: list[dict]) -> VerifyReport:
    """Walk the chain from genesis; report the first sequence that fails."""
    prev = GENESIS_HASH
    for i, d in enumerate(events):
        expected_seq = i + 1
        try:
            seq = d["seq"]
            if seq != expected_seq:
                return VerifyReport(False, len(events), expected_seq, "sequence gap")
            if d["prev_hash"] != prev:
                return VerifyReport(False, len(events), expected_seq, "chain break")
            digest = _event_digest(seq, d["at"], d["actor"], d["action"],
                                   list(d["subject_refs"]), d["prev_hash"])
            if digest != d["hash"]:
                return VerifyReport(False, len(events), expected_seq, "hash mismatch")
            prev = d["hash"]
        except (KeyError, TypeError):
            return VerifyReport(False, len(events), expected_seq, "malformed event")
    return VerifyReport(True, len(events))


def verify_lines(lines: list[str]) -> VerifyReport:
    """Verify a persisted JSONL chain; an unparseable line breaks at its seq."""
    events: list[dict] = []
    for i, line in enumerate(lines):
        try:
            events.append(json.loads(line))
        except (json.JSONDecodeError, UnicodeDecodeError):
            head = verify_events(events)
            if not head.valid:
                return VerifyReport(False, len(lines), head.first_broken_seq, head.reason)
            return VerifyReport(False, len(lines), i + 1, "unparseable event")
    return verify_events(events)


# -- blob storage --------------------------------------------------------------

BLOB_KINDS = ("body", "proof", "scan", "attachment", "document")


@dataclass
class BlobRecord:
    ref: str
    kind: str
    content: bytes
    label: str = ""


class BlobStore:
    """In-memory blob store keyed by opaque refs; optional directory mirror."""

    def __init__(self):
        self._blobs: dict[str, BlobRecord] = {}
        self._counter = 0

    def put(self, kind: str, content: bytes, label: str = "") -> str:
        if kind not in BLOB_KINDS:
            raise ValueError(f"unknown blob kind {kind!r}")
        self._counter += 1
        ref = f"blob{self._counter}"
        self._blobs[ref] = BlobRecord(ref=ref, kind=kind, content=content, label=label)
        return ref

    def put_text(self, kind: str, text: str, label: str = "") -> str:
        return self.put(kind, text.encode("utf-8"), label)

    def get(self, ref: str) -> bytes:
        try:
            return self._blobs[ref].content
        except KeyError:
            raise UnknownBlob(f"no blob {ref!r}", subject_refs=[ref]) from None

    def get_text(self, ref: str) -> str:
        return self.get(ref).decode("utf-8")

    def exists(self, ref: str) -> bool:
        return ref in self._blobs

    def delete(self, ref: str) -> None:
        self._blobs.pop(ref, None)

    def refs_by_kind(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {k: [] for k in BLOB_KINDS}
        for rec in self._blobs.values():
            out[rec.kind].append(rec.ref)
        return out

    def items(self) -> list[BlobRecord]:
        return list(self._blobs.values())

    def to_dict(self) -> dict:
        return {
            "counter": self._counter,
            "blobs": [
                {
                    "ref": b.ref,
                    "kind": b.kind,
                    "label": b.label,
                    "content_b64": base64.b64encode(b.content).decode("ascii"),
                }
                for b in self._blobs.values()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BlobStore":
        store = cls()
        store._counter = data.get("counter", 0)
        for b in data.get("blobs", []):
            store._blobs[b["ref"]] = BlobRecord(
                ref=b["ref"],
                kind=b["kind"],
                label=b.get("label", ""),
                content=base64.b64decode(b["content_b64"]),
            )
        return store


# -- pseudonymization ----------------------------------------------------------

def _derive_fernet(key: str) -> Fernet:
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return Fernet(base64.urlsafe_b64encode(digest))


@dataclass
class PseudonymMap:
    campaign_id: str
    entries: dict[str, str]  # identifier -> token
    key_ref: str = "operator-held"

    def invert(self) -> dict[str, str]:
        return {token: ident for ident, token in self.entries.items()}


class Pseudonymizer:
    """Exact-string (plus case-insensitive) replacement over a declared set.

    Longer identifiers are replaced first so "Jan Jansen" is consumed before
    "Jansen" can bite a piece out of it. Tokens are sequential, so the map is
    injective by construction.
    """

    def __init__(self, campaign_id: str, identifiers: list[str]):
        cleaned = sorted({i for i in identifiers if i.strip()}, key=lambda s: (s.lower(), s))
        if not cleaned:
            raise NothingToRedact("identifier set is empty")
        self.map = PseudonymMap(
            campaign_id=campaign_id,
            entries={ident: f"{TOKEN_PREFIX}-{n:04d}" for n, ident in enumerate(cleaned, 1)},
        )
        by_length = sorted(cleaned, key=len, reverse=True)
        self._pattern = re.compile(
            "|".join(re.escape(ident) for ident in by_length), re.IGNORECASE
        )
        self._lower_lookup = {ident.lower(): tok for ident, tok in self.map.entries.items()}

    def redact(self, text: str) -> str:
        return self._pattern.sub(lambda m: self._lower_lookup[m.group(0).lower()], text)

    def scan(self, text: str) -> list[str]:
        """Identifiers still present (case-insensitive). Empty list = clean."""
        lowered = text.lower()
        return [i for i in self.map.entries if i.lower() in lowered]

    def encrypted_map(self, key: str) -> bytes:
        payload = json.dumps(self.map.entries, sort_keys=True).encode("utf-8")
        return _derive_fernet(key).encrypt(payload)


def reidentify(token: str, encrypted_map: bytes, key: str) -> str:
    try:
        entries = json.loads(_derive_fernet(key).decrypt(encrypted_map))
    except InvalidToken:
        raise UnknownBlob("map cannot be decrypted with this key") from None
    for ident, tok in entries.items():
        if tok == token:
            return ident
    raise KeyError(token)


@dataclass
class ExportBundle:
    manifest: dict
    files: dict[str, str]  # relative path -> redacted content
    encrypted_map: bytes
    pseudonym_map: PseudonymMap


def pseudonymize_export(campaign: Campaign, identifiers: list[str], key: str,
                        documents: dict[str, str]) -> ExportBundle:
    """Redact every document, verify zero leaks, and seal the map under key.

    ``documents`` maps relative export paths to text content (message files,
    envelope/metadata dumps, stats CSVs). Raises if any identifier survives.
    """
    if campaign.status == CampaignStatus.OPEN:
        raise CampaignOpen(
            f"campaign {campaign.id} must be in wrap-up before export",
            subject_refs=[campaign.id],
        )
    pseudonymizer = Pseudonymizer(campaign.id, identifiers)
    redacted: dict[str, str] = {}
    for path, content in sorted(documents.items()):
        clean = pseudonymizer.redact(content)
        leftovers = pseudonymizer.scan(clean)
        if leftovers:
            raise AssertionError(f"redaction leak in {path}: {leftovers}")
        redacted[path] = clean
    manifest = {
        "campaign_id": campaign.id,
        "hash_algorithm": HASH_ALGORITHM,
        "token_format": f"{TOKEN_PREFIX}-NNNN",
        "identifier_count": len(pseudonymizer.map.entries),
        "files": sorted(redacted),
    }
    return ExportBundle(
        manifest=manifest,
        files=redacted,
        encrypted_map=pseudonymizer.encrypted_map(key),
        pseudonym_map=pseudonymizer.map,
    )


def write_bundle(bundle: ExportBundle, bundle_dir: Path, map_path: Path) -> None:
    """Write the bundle to disk; the encrypted map goes outside the bundle."""
    bundle_dir.mkdir(parents=True, exist_ok=True)
    (bundle_dir / "manifest.json").write_text(
        json.dumps(bundle.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    for rel, content in bundle.files.items():
        target = bundle_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content, encoding="utf-8")
    map_path.parent.mkdir(parents=True, exist_ok=True)
    map_path.write_bytes(bundle.encrypted_map)


# -- retention ----------------------------------------------------------------

@dataclass
class PurgeReport:
    purged: dict[str, int] = field(default_factory=dict)
    retained: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"purged": dict(self.purged), "retained": dict(self.retained)}


def purge_blobs(campaign: Campaign, store: BlobStore,
                retention_policy: dict[str, str]) -> PurgeReport:
    """Delete raw blobs per policy ({kind: "purge"|"keep"}); audit is untouched.

    Requires a Closed campaign with a completed export; defaults to keeping
    any kind the policy does not mention.
    """
    if campaign.status != CampaignStatus.CLOSED or not campaign.export_completed:
        raise CampaignOpen(
            f"campaign {campaign.id} is not closed with a completed export",
            subject_refs=[campaign.id],
        )
    report = PurgeReport()
    for rec in store.items():
        decision = retention_policy.get(rec.kind, "keep")
        if decision == "purge":
            store.delete(rec.ref)
            report.purged[rec.kind] = report.purged.get(rec.kind, 0) + 1
        else:
            report.retained[rec.kind] = report.retained.get(rec.kind, 0) + 1
    return report
