from __future__ import annotations

import json

import pytest

from delacc import errors
from delacc.analytics import Verdict
from delacc.lifecycle import DeadlinePolicy, RequestState
from delacc.simharness import (
    ControllerProfile,
    ProfileKind,
    SimConfig,
    load_scenario,
    run_campaign,
    run_scenario,
)


def scenario(groups, *, seed=11, participants=3, horizon=92, caps=None):
    return {
        "name": "test",
        "seed": seed,
        "horizon_days": horizon,
        "participants": participants,
        "policy": {"response_window_days": 30, "extension_window_days": 60,
                   "reminder_lead_days": 7},
        "caps": caps or {"per_participant": 10, "per_controller": 5},
        "controller_groups": groups,
    }


def single_kind_run(kind, **extra):
    group = {"kind": kind, "count": 1}
    group.update(extra)
    return run_scenario(scenario([group], participants=1))


def verdicts_of(result):
    return {rid: a.verdict for rid, a in result.workspace.assessments.items()}


def test_prompt_full_is_compliant():
    result = single_kind_run("prompt_full")
    assert list(verdicts_of(result).values()) == [Verdict.COMPLIANT]
    assert result.stats.response_rate == 1.0


def test_silent_never_responds():
    result = single_kind_run("silent")
    assert list(verdicts_of(result).values()) == [Verdict.NO_RESPONSE]
    request = next(iter(result.workspace.requests.requests.values()))
    thread = result.workspace.mailroom.get_thread(request.thread_id)
    assert all(not m.substantive for m in thread.messages)
    assert result.stats.response_rate == 0.0


def test_late_partial_is_partial():
    result = single_kind_run("late_partial")
    assert list(verdicts_of(result).values()) == [Verdict.PARTIAL]


def test_extra_id_demand_resolved_after_supply():
    result = single_kind_run("extra_id_demand")
    assert list(verdicts_of(result).values()) == [Verdict.COMPLIANT]
    ws = result.workspace
    request = next(iter(ws.requests.requests.values()))
    thread = ws.mailroom.get_thread(request.thread_id)
    subjects = [m.envelope.subject for m in thread.messages]
    assert "Additional identification required" in subjects
    assert any(s.startswith("Re: Additional identification") for s in subjects)


def test_legality_challenge_needs_rebuttal_first():
    result = single_kind_run("legality_challenge")
    assert list(verdicts_of(result).values()) == [Verdict.COMPLIANT]
    ws = result.workspace
    request = next(iter(ws.requests.requests.values()))
    thread = ws.mailroom.get_thread(request.thread_id)
    order = [m.envelope.subject for m in thread.messages]
    dispute_at = order.index("Delegation validity disputed")
    rebuttal_at = next(i for i, s in enumerate(order)
                       if s.startswith("Validity of the delegated"))
    response_at = order.index("Re: Access request")
    assert dispute_at < rebuttal_at < response_at
    # Within the 30-day window under the default policy.
    assessment = next(iter(ws.assessments.values()))
    assert assessment.within_deadline


def test_extension_then_full_is_compliant_within_extension():
    result = single_kind_run("extension_then_full")
    ws = result.workspace
    request = next(iter(ws.requests.requests.values()))
    assert request.extension_until is not None
    assessment = next(iter(ws.assessments.values()))
    assert assessment.within_deadline
    assert assessment.verdict == Verdict.COMPLIANT
    # Responded after the original deadline but inside the extension.
    thread = ws.mailroom.get_thread(request.thread_id)
    first = min(m.envelope.timestamp for m in thread.messages if m.substantive)
    assert first.date() > request.deadline
    assert first.date() <= request.extension_until


def test_direct_plea_notifies_participant_and_researcher():
    result = single_kind_run("direct_plea")
    ws = result.workspace
    request = next(iter(ws.requests.requests.values()))
    thread = ws.mailroom.get_thread(request.thread_id)
    pleas = [m for m in thread.messages
             if m.envelope.subject == "Please withdraw your request"]
    assert len(pleas) == 1
    assert pleas[0].direct_plea  # participant flagged it for attention
    events = [json.loads(line)["event"] for line in result.trace]
    assert "controller.direct_plea" in events
    assert "participant.flagged_plea" in events


def test_reminders_fire_for_overdue_requests():
    result = single_kind_run("silent")
    events = [json.loads(line)["event"] for line in result.trace]
    assert "reminder.sent" in events
    request = next(iter(result.workspace.requests.requests.values()))
    states = [e.to_state for e in request.events]
    assert RequestState.REMINDED in states
    assert RequestState.ESCALATED in states  # wrap-up escalation
    assert request.state == RequestState.CLOSED


def test_same_seed_bit_identical():
    sc = scenario([{"kind": "prompt_full", "count": 3},
                   {"kind": "silent", "count": 2},
                   {"kind": "direct_plea", "count": 1}])
    a = run_scenario(sc)
    b = run_scenario(sc)
    assert a.trace == b.trace
    assert a.stats.to_dict() == b.stats.to_dict()


def test_different_seed_differs():
    sc1 = scenario([{"kind": "prompt_full", "count": 4}])
    sc2 = scenario([{"kind": "prompt_full", "count": 4}], seed=12)
    a = run_scenario(sc1)
    b = run_scenario(sc2)
    assert a.trace != b.trace


def test_seed_override():
    sc = scenario([{"kind": "prompt_full", "count": 2}])
    a = run_scenario(sc, seed=99)
    b = run_scenario(sc, seed=99)
    c = run_scenario(sc)
    assert a.trace == b.trace
    assert a.trace != c.trace


def test_counts_by_construction_match_stats():
    groups = [
        {"kind": "prompt_full", "count": 5},
        {"kind": "late_partial", "count": 3},
        {"kind": "silent", "count": 4},
    ]
    result = run_scenario(scenario(groups, participants=2))
    total = 12
    assert result.stats.response_rate == pytest.approx(8 / total)
    assert result.stats.compliance_rate == pytest.approx(5 / total)
    # Cross-check against the analytics assessments themselves.
    verdicts = list(verdicts_of(result).values())
    assert sum(v == Verdict.COMPLIANT for v in verdicts) == 5
    assert sum(v == Verdict.NO_RESPONSE for v in verdicts) == 4


def test_horizon_must_exceed_response_window():
    with pytest.raises(errors.InvalidConfig):
        SimConfig(name="x", seed=1, horizon_days=20, participants=1,
                  policy=DeadlinePolicy(),
                  profiles=[ControllerProfile.of(ProfileKind.SILENT)])


def test_trace_is_newline_delimited_json():
    result = single_kind_run("prompt_full")
    for line in result.trace:
        record = json.loads(line)
        assert "day" in record and "event" in record


def test_audit_chain_valid_after_full_run():
    result = run_scenario(scenario([{"kind": "prompt_full", "count": 2},
                                    {"kind": "legality_challenge", "count": 1}]))
    report = result.workspace.audit.verify()
    assert report.valid


def test_restart_reproduces_identical_stats(tmp_path):
    result = run_scenario(scenario([{"kind": "prompt_full", "count": 3},
                                    {"kind": "late_partial", "count": 2},
                                    {"kind": "silent", "count": 1}]))
    result.workspace.save(tmp_path)
    from delacc.workspace import Workspace
    restored = Workspace.load(tmp_path)
    assert restored.stats().to_dict() == result.stats.to_dict()
    assert restored.to_state() == result.workspace.to_state()


def test_scenario_file_loading(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(scenario([{"kind": "silent", "count": 2}])),
                    encoding="utf-8")
    config = load_scenario(path)
    assert len(config.profiles) == 2
    assert all(p.kind == ProfileKind.SILENT for p in config.profiles)
    result = run_campaign(config)
    assert result.stats.response_rate == 0.0


def test_custom_completeness_mask_respected():
    result = single_kind_run(
        "prompt_full",
        completeness={"data_copy": True, "source": True, "purposes": True,
                      "recipients": True, "retention": False})
    assessment = next(iter(result.workspace.assessments.values()))
    assert assessment.verdict == Verdict.PARTIAL  # retention missing
    assert not assessment.completeness.retention
