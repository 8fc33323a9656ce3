from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from delacc.service.cli import main
from delacc.workspace import Workspace

from conftest import at, confirm_target, seed_pair

PILOT_SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "pilot.json"

PRIOR_ROWS = [
    {"study": "Norris et al.", "controllers": "183", "researchers": "19",
     "participants": "-", "access_duration": "±6 months",
     "time_per_request_researcher": "Many hours",
     "time_per_request_participant": "-", "response": "80%"},
    {"study": "Ausloos & Dewitte", "controllers": "60", "researchers": "2",
     "participants": "3", "access_duration": "4 months",
     "time_per_request_researcher": "1 hour",
     "time_per_request_participant": "1.5 hours", "response": "74%"},
    {"study": "Mahieu et al.", "controllers": "106", "researchers": "3",
     "participants": "7", "access_duration": "4 months",
     "time_per_request_researcher": "1 hour",
     "time_per_request_participant": "1 hour", "response": "83%"},
]


@pytest.fixture
def runner():
    return CliRunner()


def init_project(runner, tmp_path) -> Path:
    config_path = tmp_path / "delacc.json"
    result = runner.invoke(main, [
        "--config", str(config_path), "init",
        "--domain", "accessproject.example",
        "--postal-address", "Access Project\\nPO Box 1\\n2600 AA Delft",
        "--storage", str(tmp_path / "store"),
    ])
    assert result.exit_code == 0, result.output
    return config_path


def test_init_writes_config(runner, tmp_path):
    config_path = init_project(runner, tmp_path)
    data = json.loads(config_path.read_text())
    assert data["project_domain"] == "accessproject.example"
    assert data["deadline_policy"]["response_window_days"] == 30


def test_unknown_subcommand_exits_2(runner):
    result = runner.invoke(main, ["frobnicate"])
    assert result.exit_code == 2
    assert "Usage" in result.output or "usage" in result.output


def test_import_csv(runner, tmp_path):
    config_path = init_project(runner, tmp_path)
    csv_file = tmp_path / "participants.csv"
    csv_file.write_text("legal_name,surname,preferred_channel\n"
                        "Jan Jansen,Jansen,email\n", encoding="utf-8")
    result = runner.invoke(main, ["--config", str(config_path), "import",
                                  "participants", str(csv_file),
                                  "--now", at(0).isoformat()])
    assert result.exit_code == 0, result.output
    assert "imported 1 participants" in result.output
    ws = Workspace.load(tmp_path / "store")
    assert len(ws.registry.participants) == 1


def seeded_store(tmp_path, *, revoke=False) -> Path:
    """Build a store with one confirmed pair and a draft request on disk."""
    ws = Workspace(project_domain="accessproject.example",
                   postal_address="Access Project\nPO Box 1\n2600 AA Delft")
    ws.set_researcher_proof("researcher id", at(0))
    participant, controller = seed_pair(ws)
    confirm_target(ws, participant, controller)
    ws.requests.open_request(participant.id, controller.id, at(1))
    if revoke:
        ws.registry.revoke_consent(participant.id, controller.id, at(2))
    store = tmp_path / "store"
    ws.save(store)
    return store


def write_config(tmp_path, store: Path) -> Path:
    config_path = tmp_path / "delacc.json"
    config_path.write_text(json.dumps({
        "project_domain": "accessproject.example",
        "postal_address": "Access Project\nPO Box 1\n2600 AA Delft",
        "storage_path": str(store),
    }), encoding="utf-8")
    return config_path


def test_send_all_drafts(runner, tmp_path):
    store = seeded_store(tmp_path)
    config_path = write_config(tmp_path, store)
    result = runner.invoke(main, ["--config", str(config_path), "send",
                                  "--now", at(1).isoformat()])
    assert result.exit_code == 0, result.output
    ws = Workspace.load(store)
    request = next(iter(ws.requests.requests.values()))
    assert request.state.value == "Sent"


def test_send_batch_aborts_on_revoked_pair(runner, tmp_path):
    store = seeded_store(tmp_path, revoke=True)
    config_path = write_config(tmp_path, store)
    result = runner.invoke(main, ["--config", str(config_path), "send",
                                  "--request", "r1",
                                  "--now", at(3).isoformat()])
    assert result.exit_code == 1
    error = json.loads(result.output.strip().splitlines()[-1])
    assert error["code"] == "ConsentBlocked"
    assert error["subject_refs"] == ["p1:c1"]
    ws = Workspace.load(store)
    # Withdrawn by the revoke listener, and nothing was sent.
    request = next(iter(ws.requests.requests.values()))
    assert ws.mailroom.get_thread(request.thread_id).messages == []


def test_remind_requires_confirmation_or_yes(runner, tmp_path):
    store = seeded_store(tmp_path)
    config_path = write_config(tmp_path, store)
    runner.invoke(main, ["--config", str(config_path), "send",
                         "--now", at(1).isoformat()])
    result = runner.invoke(main, ["--config", str(config_path), "remind",
                                  "--now", at(45).isoformat(), "--yes"])
    assert result.exit_code == 0, result.output
    assert "reminded r1" in result.output
    ws = Workspace.load(store)
    assert next(iter(ws.requests.requests.values())).state.value == "Reminded"


def test_assess_records_verdict(runner, tmp_path):
    store = seeded_store(tmp_path)
    config_path = write_config(tmp_path, store)
    runner.invoke(main, ["--config", str(config_path), "send",
                         "--now", at(1).isoformat()])
    # Past the deadline with no substantive response: silence is assessable.
    result = runner.invoke(main, ["--config", str(config_path), "assess", "r1",
                                  "--now", at(45).isoformat()])
    assert result.exit_code == 0, result.output
    assessment = json.loads(result.output)
    assert assessment["verdict"] == "no_response"
    ws = Workspace.load(store)
    assert ws.assessments["r1"].verdict.value == "no_response"


def test_stats_rows_only_reproduces_prior_cells(runner, tmp_path):
    rows_file = tmp_path / "rows.json"
    rows_file.write_text(json.dumps(PRIOR_ROWS), encoding="utf-8")
    result = runner.invoke(main, ["stats", "--format", "csv",
                                  "--rows", str(rows_file), "--rows-only"])
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    cells = [line.split(",") for line in lines[1:4]]
    assert [c[1] for c in cells] == ["183", "60", "106"]
    assert [c[2] for c in cells] == ["19", "2", "3"]
    assert [c[3] for c in cells] == ["-", "3", "7"]
    assert [c[-1] for c in cells] == ["80%", "74%", "83%"]


def test_simulate_deterministic_stdout(runner, tmp_path):
    args = ["simulate", str(PILOT_SCENARIO), "--seed", "7"]
    first = runner.invoke(main, args)
    second = runner.invoke(main, args)
    assert first.exit_code == 0, first.output
    assert first.output == second.output
    payload = json.loads(first.output)
    assert payload["response_rate_pct"] == 81.0
    assert payload["compliance_rate_pct"] == 50.9


def test_simulate_writes_trace(runner, tmp_path):
    trace_file = tmp_path / "trace.jsonl"
    result = runner.invoke(main, ["simulate", str(PILOT_SCENARIO),
                                  "--trace", str(trace_file)])
    assert result.exit_code == 0
    lines = trace_file.read_text(encoding="utf-8").strip().splitlines()
    assert json.loads(lines[0])["event"] == "campaign.start"
    assert json.loads(lines[-1])["event"] == "campaign.stats"


def test_triage_list_and_assign(runner, tmp_path):
    store = seeded_store(tmp_path)
    config_path = write_config(tmp_path, store)
    ws = Workspace.load(store)
    raw = ("From: somebody@odd.example\n"
           "To: nobody@accessproject.example\n"
           "Date: Fri, 15 Jun 2018 10:00:00 +0000\n"
           "Subject: stray mail\n\nwho dis")
    item = ws.mailroom.ingest_email(raw)
    thread_id = next(iter(ws.mailroom.threads))
    ws.save(store)

    listing = runner.invoke(main, ["--config", str(config_path), "triage",
                                   "--list"])
    assert listing.exit_code == 0
    assert item.id in listing.output

    assigned = runner.invoke(main, ["--config", str(config_path), "triage",
                                    "--assign", item.id, thread_id,
                                    "--now", at(16).isoformat()])
    assert assigned.exit_code == 0, assigned.output
    reloaded = Workspace.load(store)
    assert reloaded.mailroom.quarantine == []
    assert any(m.envelope.subject == "stray mail"
               for m in reloaded.mailroom.get_thread(thread_id).messages)


def test_audit_verify_cli(runner, tmp_path):
    store = seeded_store(tmp_path)
    config_path = write_config(tmp_path, store)
    result = runner.invoke(main, ["--config", str(config_path), "audit", "verify"])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["valid"] is True


def test_audit_verify_detects_tamper(runner, tmp_path):
    store = seeded_store(tmp_path)
    config_path = write_config(tmp_path, store)
    audit_file = store / "audit.jsonl"
    lines = audit_file.read_text(encoding="utf-8").splitlines()
    lines[1] = lines[1].replace("participant", "tampered-xx", 1)
    audit_file.write_text("\n".join(lines) + "\n", encoding="utf-8")
    result = runner.invoke(main, ["--config", str(config_path), "audit", "verify"])
    assert result.exit_code == 1
    report = json.loads(result.output)
    assert report["valid"] is False
    assert report["first_broken_seq"] == 2


def test_transitions_command(runner):
    result = runner.invoke(main, ["transitions"])
    assert result.exit_code == 0
    doc = json.loads(result.output)
    assert doc["transitions"]["Draft"]["send"] == "Sent"


def test_export_command(runner, tmp_path):
    store = seeded_store(tmp_path)
    config_path = write_config(tmp_path, store)
    runner.invoke(main, ["--config", str(config_path), "send",
                         "--now", at(1).isoformat()])
    # Move the campaign to wrap-up directly in the store.
    ws = Workspace.load(store)
    ws.wrap_up_campaign(at(60))
    ws.save(store)
    result = runner.invoke(main, ["--config", str(config_path), "export",
                                  "--key", "hunter2", "--now", at(61).isoformat()])
    assert result.exit_code == 0, result.output
    manifest = json.loads(result.output)
    bundle_dir = store / "exports" / "camp1"
    assert (bundle_dir / "manifest.json").exists()
    assert (store / "keys" / "camp1.map.enc").exists()
    for rel in manifest["files"]:
        content = (bundle_dir / rel).read_text(encoding="utf-8")
        assert "Jansen" not in content and "jansen" not in content
