from __future__ import annotations

import itertools

import pytest

from delacc import errors
from delacc.mailroom import (
    AuthorRole,
    Direction,
    FileSpoolTransport,
    LetterAuthorization,
    MessageChannel,
    OpenStatus,
    PhysicalScanMeta,
    QuarantineItem,
    RoutingRationale,
    normalize_surname,
    parse_email_text,
)
from delacc.registry import (
    Channel,
    ConsentScopes,
    ConsentSnapshot,
    ContactKind,
    GrantStatus,
    SnapshotGrant,
)

from conftest import at, confirm_target, seed_pair


# -- addressing -----------------------------------------------------------------


def test_mailbox_address_shape(workspace):
    participant, _ = seed_pair(workspace)
    assert workspace.mailroom.mailbox_address(participant.id) == \
        "jansen@accessproject.example"


@pytest.mark.parametrize("surname,expected", [
    ("Dekker", "dekker"),
    ("Łukasz-Van Dijk", "lukaszvandijk"),
    ("Müller", "muller"),
    ("de Vries", "devries"),
    ("O'Neill", "oneill"),
])
def test_surname_normalization(surname, expected):
    assert normalize_surname(surname) == expected


def test_unusable_surname():
    with pytest.raises(errors.UnusableSurname):
        normalize_surname("!!!")


def test_collision_appends_smallest_free_integer(workspace):
    ws = workspace
    p1 = ws.registry.register_participant("Ann Dekker", "Dekker", Channel.EMAIL, at(0))
    p2 = ws.registry.register_participant("Bo Dekker", "Dekker", Channel.EMAIL, at(0))
    p3 = ws.registry.register_participant("Cas Dekker", "Dekker", Channel.EMAIL, at(0))
    # Ask out of order: assignment still follows registration order.
    assert ws.mailroom.mailbox_address(p3.id) == "dekker3@accessproject.example"
    assert ws.mailroom.mailbox_address(p1.id) == "dekker@accessproject.example"
    assert ws.mailroom.mailbox_address(p2.id) == "dekker2@accessproject.example"


# -- routing truth table ------------------------------------------------------------


def snapshot_for(pid, cid, communicate, research, share, active) -> ConsentSnapshot:
    return ConsentSnapshot(version=1, grants={
        (pid, cid): SnapshotGrant(
            status=GrantStatus.ACTIVE if active else GrantStatus.REVOKED,
            communicate=communicate,
            research_use=research,
            share_responses=share,
        )
    })


def test_routing_truth_table_exhaustive(ready_pair):
    """All 8 scope combinations x {active, revoked} x {outbound, inbound}
    against a literal hand-written oracle."""
    ws, participant, controller = ready_pair
    request = ws.requests.open_request(participant.id, controller.id, at(1))
    thread = ws.mailroom.get_thread(request.thread_id)
    mailbox = ws.mailroom.mailbox_address(participant.id)
    researcher = ws.mailroom.researcher_inbox
    contact = controller.contact_address

    # Hand-written expectations, one row per combination: (communicate,
    # research_use, share_responses, active) -> outcome.
    outbound_oracle = {
        (False, False, False, False): "blocked",
        (False, False, True, False): "blocked",
        (False, True, False, False): "blocked",
        (False, True, True, False): "blocked",
        (True, False, False, False): "blocked",
        (True, False, True, False): "blocked",
        (True, True, False, False): "blocked",
        (True, True, True, False): "blocked",
        (False, False, False, True): "blocked",
        (False, False, True, True): "blocked",
        (False, True, False, True): "blocked",
        (False, True, True, True): "blocked",
        (True, False, False, True): "deliver",
        (True, False, True, True): "deliver",
        (True, True, False, True): "deliver",
        (True, True, True, True): "deliver",
    }
    inbound_oracle = {
        # Researcher copy appears only for active grants that both allow
        # communication and share responses; participant delivery always.
        (False, False, False, False): "participant_only",
        (False, False, True, False): "participant_only",
        (False, True, False, False): "participant_only",
        (False, True, True, False): "participant_only",
        (True, False, False, False): "participant_only",
        (True, False, True, False): "participant_only",
        (True, True, False, False): "participant_only",
        (True, True, True, False): "participant_only",
        (False, False, False, True): "participant_only",
        (False, False, True, True): "participant_only",
        (False, True, False, True): "participant_only",
        (False, True, True, True): "participant_only",
        (True, False, False, True): "participant_only",
        (True, False, True, True): "share",
        (True, True, False, True): "participant_only",
        (True, True, True, True): "share",
    }

    checked = 0
    for communicate, research, share, active in itertools.product(
            [False, True], repeat=4):
        snap = snapshot_for(participant.id, controller.id,
                            communicate, research, share, active)
        key = (communicate, research, share, active)

        if outbound_oracle[key] == "blocked":
            with pytest.raises(errors.ConsentBlocked):
                ws.mailroom.route_outbound(thread, AuthorRole.RESEARCHER, snap)
        else:
            decision = ws.mailroom.route_outbound(thread, AuthorRole.RESEARCHER, snap)
            assert decision.deliver_to == frozenset({contact})
            assert decision.blind_copies == frozenset({mailbox})
            assert decision.rationale == \
                RoutingRationale.OUTBOUND_ALWAYS_BCC_PARTICIPANT

        decision = ws.mailroom.route_inbound(thread, snap)
        assert decision.deliver_to == frozenset({mailbox})
        if inbound_oracle[key] == "share":
            assert decision.blind_copies == frozenset({researcher})
            assert decision.rationale == RoutingRationale.INBOUND_SHARE_ON
        else:
            assert decision.blind_copies == frozenset()
            assert decision.rationale == RoutingRationale.INBOUND_SHARE_OFF
        checked += 2
    assert checked == 32  # exhaustive


def test_outbound_channel_follows_controller_contact(workspace):
    ws = workspace
    ws.set_researcher_proof("researcher id", at(0))
    participant, controller = seed_pair(
        ws, controller_name="Paper Org", contact="privacy@paper.example")
    postal = ws.registry.register_controller(
        "Postal Org", ContactKind.POST, "Postal Org\nPostbus 9\nDelft", at(0))
    ws.registry.grant_consent(participant.id, postal.id,
                              ConsentScopes(True, True, True), 7, at(0))
    ws.registry.select_targets(
        ws.campaign, [(participant.id, controller.id),
                      (participant.id, postal.id)], at(0))
    ws.sign_consent_form(participant.id, [controller.id, postal.id], at(0))
    ws.registry.confirm_final_say(participant.id, at(0))
    request = ws.requests.open_request(participant.id, postal.id, at(1))
    message, decision = ws.mailroom.send_outbound(
        request.thread_id, AuthorRole.RESEARCHER, "Access request", "text", at(1))
    assert message.channel == MessageChannel.POST
    # The participant BCC carries the digital copy of the outgoing letter.
    mailbox = ws.mailroom.mailbox_address(participant.id)
    assert message.id in ws.mailroom.mailboxes[mailbox]
    assert decision.deliver_to == frozenset({postal.contact_address})


def test_participant_authored_outbound_bccs_researcher(ready_pair):
    ws, participant, controller = ready_pair
    request = ws.requests.open_request(participant.id, controller.id, at(1))
    message, decision = ws.mailroom.send_outbound(
        request.thread_id, AuthorRole.PARTICIPANT, "Taking over", "I will reply",
        at(2))
    assert decision.deliver_to == frozenset({controller.contact_address})
    assert decision.blind_copies == frozenset({ws.mailroom.researcher_inbox})
    assert message.author == AuthorRole.PARTICIPANT


def test_blocked_send_is_audited_and_not_delivered(ready_pair):
    ws, participant, controller = ready_pair
    request = ws.requests.open_request(participant.id, controller.id, at(1))
    ws.registry.revoke_consent(participant.id, controller.id, at(2))
    before = len(ws.mailroom.get_thread(request.thread_id).messages)
    with pytest.raises(errors.ConsentBlocked):
        ws.mailroom.send_outbound(request.thread_id, AuthorRole.RESEARCHER,
                                  "Request", "body", at(3))
    thread = ws.mailroom.get_thread(request.thread_id)
    assert len(thread.messages) == before  # nothing appended
    blocked = [e for e in ws.audit.events if e.action == "routing.blocked"]
    assert blocked and RoutingRationale.BLOCKED_CONSENT_REVOKED.value in \
        blocked[-1].subject_refs


def test_routing_decision_sets_are_disjoint():
    with pytest.raises(ValueError):
        from delacc.mailroom import RoutingDecision
        RoutingDecision(deliver_to=frozenset({"a@x"}),
                        blind_copies=frozenset({"a@x"}),
                        rationale=RoutingRationale.INBOUND_SHARE_ON,
                        consent_version=1)


# -- email parsing ------------------------------------------------------------------


GOOD_RAW = """From: dpo@acme.example
To: jansen@accessproject.example
Date: Tue, 05 Jun 2018 12:00:00 +0000
Subject: Re: Access request
Message-ID: <abc@acme.example>
In-Reply-To: <m1@accessproject.example>

Here is your data.
"""


def test_parse_email_happy_path():
    parsed = parse_email_text(GOOD_RAW)
    assert parsed.from_addr == "dpo@acme.example"
    assert parsed.to_addrs == ["jansen@accessproject.example"]
    assert parsed.subject == "Re: Access request"
    assert parsed.in_reply_to == "<m1@accessproject.example>"
    assert parsed.body == "Here is your data."


def test_parse_header_continuation():
    raw = ("From: dpo@acme.example\nTo: jansen@accessproject.example\n"
           "Date: Tue, 05 Jun 2018 12:00:00 +0000\n"
           "Subject: a very\n  long subject\n\nbody")
    assert parse_email_text(raw).subject == "a very long subject"


def test_headerless_blob_is_parse_error():
    with pytest.raises(errors.ParseError) as exc:
        parse_email_text("just some text without any colon structure\nmore text")
    assert exc.value.line == 1


def test_missing_required_header_reports_line():
    raw = "From: a@b.example\nSubject: x\n\nbody"
    with pytest.raises(errors.ParseError) as exc:
        parse_email_text(raw)
    assert "to" in str(exc.value)


def test_bad_date_reports_its_line():
    raw = ("From: a@b.example\nTo: c@d.example\nDate: not a date\n"
           "Subject: x\n\nbody")
    with pytest.raises(errors.ParseError) as exc:
        parse_email_text(raw)
    assert exc.value.line == 3


# -- ingestion and threading ----------------------------------------------------------


def outbound_then_reply(ws, participant, controller, *, reply_headers=True):
    request = ws.requests.open_request(participant.id, controller.id, at(1))
    message, _ = ws.mailroom.send_outbound(
        request.thread_id, AuthorRole.RESEARCHER, "Access request", "please",
        at(1))
    headers = [
        "From: dpo@acme.example",
        f"To: {ws.mailroom.mailbox_address(participant.id)}",
        "Date: Fri, 15 Jun 2018 10:00:00 +0000",
        "Subject: Re: Access request",
        "Message-ID: <reply-1@acme.example>",
    ]
    if reply_headers:
        headers.append(f"In-Reply-To: {message.envelope.message_id}")
    raw = "\n".join(headers) + "\n\nHere you go."
    return request, raw


def test_reply_matched_by_in_reply_to(ready_pair):
    ws, participant, controller = ready_pair
    request, raw = outbound_then_reply(ws, participant, controller)
    result = ws.mailroom.ingest_email(raw)
    assert not isinstance(result, QuarantineItem)
    assert result.thread_id == request.thread_id
    assert result.direction == Direction.INBOUND


def test_reply_matched_by_mailbox_and_domain(ready_pair):
    ws, participant, controller = ready_pair
    request, raw = outbound_then_reply(ws, participant, controller,
                                       reply_headers=False)
    result = ws.mailroom.ingest_email(raw)
    assert result.thread_id == request.thread_id


def test_unknown_sender_quarantined(ready_pair):
    ws, participant, controller = ready_pair
    outbound_then_reply(ws, participant, controller)
    raw = ("From: stranger@elsewhere.example\n"
           f"To: {ws.mailroom.mailbox_address(participant.id)}\n"
           "Date: Fri, 15 Jun 2018 10:00:00 +0000\n"
           "Subject: hello\n\nwho am i")
    result = ws.mailroom.ingest_email(raw)
    assert isinstance(result, QuarantineItem)
    assert ws.mailroom.quarantine == [result]


def test_quarantine_triage_assign(ready_pair):
    ws, participant, controller = ready_pair
    request, _ = outbound_then_reply(ws, participant, controller)
    raw = ("From: other@acme2.example\n"
           f"To: {ws.mailroom.mailbox_address(participant.id)}\n"
           "Date: Fri, 15 Jun 2018 10:00:00 +0000\n"
           "Subject: response via odd address\n\ncontent")
    item = ws.mailroom.ingest_email(raw)
    assert isinstance(item, QuarantineItem)
    message = ws.mailroom.triage_assign(item.id, request.thread_id, at(11))
    assert message.thread_id == request.thread_id
    assert ws.mailroom.quarantine == []


def test_share_off_inbound_skips_researcher(workspace):
    ws = workspace
    ws.set_researcher_proof("researcher id", at(0))
    participant, controller = seed_pair(ws, share_responses=False)
    confirm_target(ws, participant, controller)
    request, raw = outbound_then_reply(ws, participant, controller)
    message = ws.mailroom.ingest_email(raw)
    researcher_box = ws.mailroom.mailboxes.get(ws.mailroom.researcher_inbox, [])
    assert message.id not in researcher_box
    assert not ws.researcher_can_read(message)
    # Explicit forward is the only remaining path to the researcher.
    ws.forward_to_researcher(message.id, participant.id, at(16))
    assert ws.researcher_can_read(message)


# -- physical mail ---------------------------------------------------------------------


def physical_scan(controller, participant, letter_id="L1"):
    return PhysicalScanMeta(
        sender_controller_id=controller.id,
        addressee_participant_id=participant.id,
        received_at=at(20),
        letter_id=letter_id,
        scan_text="paper response content",
    )


def test_authorized_letter_opened_with_body(ready_pair):
    ws, participant, controller = ready_pair
    ws.requests.open_request(participant.id, controller.id, at(1))
    message = ws.mailroom.ingest_physical(
        physical_scan(controller, participant),
        LetterAuthorization(letter_id="L1", acked_at=at(20), ack_ref="ack-1"))
    assert message.open_status == OpenStatus.OPENED
    assert message.body_ref is not None
    assert ws.blobs.get_text(message.body_ref) == "paper response content"


def test_unauthorized_letter_stays_sealed_but_notifies(ready_pair):
    ws, participant, controller = ready_pair
    ws.requests.open_request(participant.id, controller.id, at(1))
    message = ws.mailroom.ingest_physical(physical_scan(controller, participant))
    assert message.open_status == OpenStatus.UNOPENED
    assert message.body_ref is None
    mailbox = ws.mailroom.mailbox_address(participant.id)
    assert message.id in ws.mailroom.mailboxes[mailbox]  # scan notification
    assert message.id not in ws.mailroom.mailboxes.get(
        ws.mailroom.researcher_inbox, [])


def test_wrong_letter_ack_rejected(ready_pair):
    ws, participant, controller = ready_pair
    ws.requests.open_request(participant.id, controller.id, at(1))
    with pytest.raises(errors.AuthorizationMismatch):
        ws.mailroom.ingest_physical(
            physical_scan(controller, participant, letter_id="L1"),
            LetterAuthorization(letter_id="L2", acked_at=at(20), ack_ref="ack-2"))


def test_quarantined_letter_can_be_triaged_to_thread(ready_pair):
    ws, participant, controller = ready_pair
    request = ws.requests.open_request(participant.id, controller.id, at(1))
    unknown = PhysicalScanMeta(
        sender_controller_id="c999",  # sender not resolvable to a thread
        addressee_participant_id=participant.id,
        received_at=at(20),
        letter_id="L9",
        scan_text="letter from an odd return address",
    )
    item = ws.mailroom.ingest_physical(unknown)
    assert isinstance(item, QuarantineItem)
    message = ws.mailroom.triage_assign(item.id, request.thread_id, at(21))
    assert message.channel == MessageChannel.POST
    assert message.open_status == OpenStatus.UNOPENED  # ack still required
    assert message.thread_id == request.thread_id


def test_late_authorization_opens_letter(ready_pair):
    ws, participant, controller = ready_pair
    ws.requests.open_request(participant.id, controller.id, at(1))
    message = ws.mailroom.ingest_physical(physical_scan(controller, participant))
    opened = ws.mailroom.authorize_letter(
        message.id, LetterAuthorization(letter_id="L1", acked_at=at(25),
                                        ack_ref="ack-3"))
    assert opened.open_status == OpenStatus.OPENED
    assert opened.body_ref is not None


# -- offline contact --------------------------------------------------------------------


def test_phone_summary_notifies_participant(ready_pair):
    ws, participant, controller = ready_pair
    request = ws.requests.open_request(participant.id, controller.id, at(1))
    message = ws.mailroom.record_offline_contact(
        request.thread_id, MessageChannel.PHONE, "they asked for patience", at(5))
    assert message.channel == MessageChannel.PHONE
    mailbox = ws.mailroom.mailbox_address(participant.id)
    assert message.id in ws.mailroom.mailboxes[mailbox]


def test_offline_unknown_thread(ready_pair):
    ws, *_ = ready_pair
    with pytest.raises(errors.UnknownThread):
        ws.mailroom.record_offline_contact("t99", MessageChannel.WEBFORM, "x", at(5))


# -- central-log completeness -------------------------------------------------------------


def test_central_log_completeness_all_channels(ready_pair):
    """Every message in a thread is participant-visible regardless of channel
    or consent configuration."""
    ws, participant, controller = ready_pair
    request = ws.requests.open_request(participant.id, controller.id, at(1))
    thread = ws.mailroom.get_thread(request.thread_id)

    ws.mailroom.send_outbound(thread.id, AuthorRole.RESEARCHER, "Request",
                              "please", at(1))
    ws.mailroom.send_outbound(thread.id, AuthorRole.PARTICIPANT, "Note",
                              "my own words", at(2))
    _, raw = outbound_then_reply(ws, participant, controller)
    ws.mailroom.ingest_email(raw)
    ws.mailroom.ingest_physical(physical_scan(controller, participant))
    ws.mailroom.record_offline_contact(thread.id, MessageChannel.PHONE, "call",
                                       at(21))

    for t in ws.mailroom.threads.values():
        all_ids = {m.id for m in t.messages}
        assert ws.mailroom.participant_visible_ids(t) == all_ids


def test_unopened_body_not_exposed_anywhere(ready_pair):
    ws, participant, controller = ready_pair
    ws.requests.open_request(participant.id, controller.id, at(1))
    message = ws.mailroom.ingest_physical(physical_scan(controller, participant))
    assert message.body_ref is None
    assert message.to_dict()["body_ref"] is None
    assert not ws.researcher_can_read(message)


# -- transports -----------------------------------------------------------------------


def test_file_spool_transport_round_trip(tmp_path):
    transport = FileSpoolTransport(tmp_path)
    transport.send("From: a@b\n\nhello")
    files = list((tmp_path / "outbound").glob("*.eml"))
    assert len(files) == 1
    (tmp_path / "inbound" / "in-1.eml").write_text(GOOD_RAW, encoding="utf-8")
    polled = transport.poll()
    assert polled == [GOOD_RAW]
    assert transport.poll() == []  # consumed


def test_file_spool_scan_sidecars(tmp_path):
    import json
    transport = FileSpoolTransport(tmp_path)
    (tmp_path / "scans" / "letter-L7.txt").write_text("paper content",
                                                      encoding="utf-8")
    (tmp_path / "scans" / "letter-L7.json").write_text(json.dumps({
        "sender_controller_id": "c1",
        "addressee_participant_id": "p1",
        "received_at": at(20).isoformat(),
        "letter_id": "L7",
        "scan_file": "letter-L7.txt",
    }), encoding="utf-8")
    scans = transport.poll_scans()
    assert len(scans) == 1
    assert scans[0].letter_id == "L7"
    assert scans[0].scan_text == "paper content"
    assert transport.poll_scans() == []  # moved to processed/


def test_mailroom_persistence_round_trip(ready_pair):
    ws, participant, controller = ready_pair
    request, raw = outbound_then_reply(ws, participant, controller)
    inbound = ws.mailroom.ingest_email(raw)
    from delacc.mailroom import Mailroom
    restored = Mailroom(ws.registry, ws.blobs, ws.audit, ws.project_domain)
    restored.load_dict(ws.mailroom.to_dict())
    assert set(restored.threads) == set(ws.mailroom.threads)
    original = ws.mailroom.get_thread(request.thread_id)
    copy = restored.get_thread(request.thread_id)
    assert [m.to_dict() for m in copy.messages] == \
        [m.to_dict() for m in original.messages]
    # Threading still resolves replies to controller message ids after a
    # restart, exactly as the live index did.
    followup = ("From: dpo@acme.example\n"
                f"To: {ws.mailroom.mailbox_address(participant.id)}\n"
                "Date: Sat, 16 Jun 2018 10:00:00 +0000\n"
                "Subject: Re: Access request\n"
                f"In-Reply-To: {inbound.envelope.message_id}\n\nmore data")
    result = restored.ingest_email(followup)
    assert not isinstance(result, QuarantineItem)
    assert result.thread_id == request.thread_id
