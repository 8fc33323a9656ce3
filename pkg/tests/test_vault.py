from __future__ import annotations

import random

import pytest

from delacc import errors
from delacc.model import Campaign, CampaignStatus
from delacc.vault import (
    GENESIS_HASH,
    AuditLog,
    BlobStore,
    Pseudonymizer,
    pseudonymize_export,
    purge_blobs,
    reidentify,
    verify_lines,
)

from conftest import at


def make_chain(n: int) -> AuditLog:
    log = AuditLog()
    for i in range(n):
        log.append("system", f"action.{i % 7}", [f"ref{i}", f"x{i % 3}"], at(0, 9))
    return log


def test_first_event_chains_from_genesis():
    log = make_chain(1)
    event = log.events[0]
    assert event.seq == 1
    assert event.prev_hash == GENESIS_HASH


def test_append_then_verify_valid():
    log = make_chain(10)
    report = log.verify()
    assert report.valid
    assert report.length == 10
    assert report.first_broken_seq is None


def test_tampered_action_detected_at_its_seq():
    log = make_chain(5)
    events = [e.to_dict() for e in log.events]
    events[2]["action"] = "tampered"
    from delacc.vault import verify_events
    report = verify_events(events)
    assert not report.valid
    assert report.first_broken_seq == 3


def test_seq_gap_detected():
    log = make_chain(4)
    events = [e.to_dict() for e in log.events]
    events[1]["seq"] = 5
    from delacc.vault import verify_events
    report = verify_events(events)
    assert not report.valid
    assert report.first_broken_seq == 2


def test_lines_round_trip():
    log = make_chain(6)
    restored = AuditLog.from_lines(log.to_lines())
    assert restored.verify().valid
    assert restored.head_hash == log.head_hash


def test_unparseable_line_breaks_at_that_seq():
    log = make_chain(4)
    lines = log.to_lines()
    lines[2] = lines[2][:-1]  # truncate the closing brace
    report = verify_lines(lines)
    assert not report.valid
    assert report.first_broken_seq == 3


def test_single_byte_mutations_all_detected():
    """Flip one byte per event at seeded positions; detection must be total."""
    log = make_chain(40)
    lines = log.to_lines()
    rng = random.Random(99)
    for idx in range(len(lines)):
        for _ in range(3):
            mutated = list(lines)
            line = mutated[idx]
            pos = rng.randrange(len(line))
            old = line[pos]
            new = chr((ord(old) + 1 - 32) % 94 + 32)
            mutated[idx] = line[:pos] + new + line[pos + 1:]
            report = verify_lines(mutated)
            assert not report.valid, f"mutation at event {idx + 1} pos {pos} missed"
            assert report.first_broken_seq == idx + 1


# -- blobs ---------------------------------------------------------------------


def test_blob_store_round_trip():
    store = BlobStore()
    ref = store.put_text("body", "hello")
    assert store.get_text(ref) == "hello"
    assert store.refs_by_kind()["body"] == [ref]


def test_blob_unknown_ref():
    store = BlobStore()
    with pytest.raises(errors.UnknownBlob):
        store.get("blob99")


def test_blob_persistence_round_trip():
    store = BlobStore()
    store.put("proof", b"\x00\x01binary")
    store.put_text("scan", "scan text")
    restored = BlobStore.from_dict(store.to_dict())
    assert restored.get("blob1") == b"\x00\x01binary"
    assert restored.get_text("blob2") == "scan text"
    assert restored.put_text("body", "next") == "blob3"


# -- pseudonymization ------------------------------------------------------------


def wrap_campaign() -> Campaign:
    campaign = Campaign(id="camp1", name="t", status=CampaignStatus.WRAP_UP)
    campaign.started_at = at(0)
    campaign.stopped_at = at(92)
    return campaign


def test_substitution_replaces_both_identifiers_distinctly():
    p = Pseudonymizer("camp1", ["Jan Jansen", "jansen@proj.example"])
    out = p.redact("mail from Jan Jansen <jansen@proj.example> arrived")
    assert "Jan Jansen" not in out
    assert "jansen@proj.example" not in out
    tokens = set(p.map.entries.values())
    assert len(tokens) == 2
    for token in tokens:
        assert token in out


def test_longest_identifier_wins_overlap():
    # "Jansen" is a substring of "Jan Jansen"; the full name must be consumed
    # as one unit, not left half-redacted.
    p = Pseudonymizer("camp1", ["Jansen", "Jan Jansen"])
    out = p.redact("Jan Jansen wrote to Jansen")
    assert out == (f"{p.map.entries['Jan Jansen']} wrote to "
                   f"{p.map.entries['Jansen']}")


def test_case_insensitive_scan_and_redact():
    p = Pseudonymizer("camp1", ["Jansen"])
    assert p.scan("mail for JANSEN here") == ["Jansen"]
    assert p.scan(p.redact("mail for JANSEN here")) == []


def test_export_contains_zero_identifiers():
    docs = {
        "a.txt": "Jan Jansen mailed jansen@proj.example about prf1",
        "b.txt": "nothing sensitive",
    }
    bundle = pseudonymize_export(
        wrap_campaign(), ["Jan Jansen", "jansen@proj.example", "prf1"],
        "secret-key", docs)
    p = Pseudonymizer("camp1", ["Jan Jansen", "jansen@proj.example", "prf1"])
    for content in bundle.files.values():
        assert p.scan(content) == []
    assert bundle.manifest["identifier_count"] == 3


def test_reidentify_round_trip():
    identifiers = ["Jan Jansen", "jansen@proj.example", "prf1"]
    bundle = pseudonymize_export(wrap_campaign(), identifiers, "secret-key",
                                 {"a.txt": "Jan Jansen"})
    for ident in identifiers:
        token = bundle.pseudonym_map.entries[ident]
        assert reidentify(token, bundle.encrypted_map, "secret-key") == ident


def test_wrong_key_rejected():
    bundle = pseudonymize_export(wrap_campaign(), ["Jan"], "right-key",
                                 {"a.txt": "Jan"})
    with pytest.raises(errors.UnknownBlob):
        reidentify("SUBJ-0001", bundle.encrypted_map, "wrong-key")


def test_empty_identifier_set_refused():
    with pytest.raises(errors.NothingToRedact):
        pseudonymize_export(wrap_campaign(), [], "k", {"a.txt": "x"})


def test_export_requires_wrap_up():
    campaign = Campaign(id="camp1", name="t")  # still open
    with pytest.raises(errors.CampaignOpen):
        pseudonymize_export(campaign, ["Jan"], "k", {"a.txt": "x"})


def test_map_is_injective():
    idents = [f"name{i}" for i in range(50)]
    p = Pseudonymizer("camp1", idents)
    assert len(set(p.map.entries.values())) == 50


# -- purge -----------------------------------------------------------------------


def closed_campaign() -> Campaign:
    campaign = wrap_campaign()
    campaign.close()
    campaign.export_completed = True
    return campaign


def test_purge_removes_proofs_keeps_rest():
    store = BlobStore()
    store.put_text("proof", "id copy")
    store.put_text("body", "message body")
    report = purge_blobs(closed_campaign(), store, {"proof": "purge"})
    assert report.purged == {"proof": 1}
    assert report.retained == {"body": 1}
    assert store.refs_by_kind()["proof"] == []


def test_purge_requires_closed_campaign():
    store = BlobStore()
    store.put_text("proof", "x")
    with pytest.raises(errors.CampaignOpen):
        purge_blobs(wrap_campaign(), store, {"proof": "purge"})


def test_purge_never_touches_audit():
    log = make_chain(5)
    store = BlobStore()
    store.put_text("proof", "x")
    purge_blobs(closed_campaign(), store, {"proof": "purge"})
    assert log.verify().valid


def test_audit_log_has_no_mutation_api():
    log = make_chain(3)
    assert not any(name in dir(log) for name in ("update", "delete", "remove", "pop"))
    events = log.events
    assert isinstance(events, tuple)  # read surface is immutable
