"""Operator command line.

Commands load the workspace from the configured storage path, apply the
operation, and save back. All failures print a machine-readable JSON error
to stderr and exit nonzero; unknown subcommands print usage and exit 2.
"""

from __future__ import annotations

import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from .. import analytics, errors, letters, simharness, vault
from ..lifecycle import DeadlinePolicy, RequestState, transition_table_json
from ..workspace import Workspace
from .config import ProjectConfig


def _fail(err: errors.DelaccError) -> None:
    click.echo(json.dumps(err.to_dict(), sort_keys=True), err=True)
    sys.exit(1)


def _now(value: str | None) -> datetime:
    if value:
        return datetime.fromisoformat(value)
    return datetime.now(timezone.utc)


class _Ctx:
    def __init__(self, config_path: Path):
        self.config_path = config_path
        self._config: ProjectConfig | None = None
        self._workspace: Workspace | None = None

    @property
    def config(self) -> ProjectConfig:
        if self._config is None:
            self._config = ProjectConfig.load(self.config_path)
        return self._config

    @property
    def workspace(self) -> Workspace:
        if self._workspace is None:
            self._workspace = self.config.load_or_create_workspace()
        return self._workspace

    def save(self) -> None:
        if self._workspace is not None:
            self._workspace.save(self.config.storage_path)


@click.group()
@click.option("--config", "config_path", default="delacc.json",
              type=click.Path(path_type=Path), help="Project config file.")
@click.pass_context
def main(ctx: click.Context, config_path: Path):
    """Delegated access request campaign manager."""
    ctx.obj = _Ctx(config_path)


@main.command()
@click.option("--domain", required=True, help="Project mail domain.")
@click.option("--postal-address", required=True,
              help="Central postal address (use \\n for line breaks).")
@click.option("--storage", required=True, type=click.Path(path_type=Path))
@click.option("--response-window", default=30, show_default=True)
@click.option("--extension-window", default=60, show_default=True)
@click.option("--reminder-lead", default=7, show_default=True)
@click.option("--per-participant-cap", default=10, show_default=True)
@click.option("--per-controller-cap", default=5, show_default=True)
@click.option("--transport", default="in_memory", show_default=True,
              type=click.Choice(["in_memory", "file_spool"]))
@click.pass_obj
def init(ctx: _Ctx, domain, postal_address, storage, response_window,
         extension_window, reminder_lead, per_participant_cap,
         per_controller_cap, transport):
    """Write a fresh project config."""
    try:
        config = ProjectConfig(
            project_domain=domain,
            postal_address=postal_address.replace("\\n", "\n"),
            storage_path=Path(storage),
            deadline_policy=DeadlinePolicy(
                response_window_days=response_window,
                extension_window_days=extension_window,
                reminder_lead_days=reminder_lead,
            ),
            per_participant_cap=per_participant_cap,
            per_controller_cap=per_controller_cap,
            transport=transport,
        )
    except errors.DelaccError as err:
        _fail(err)
    config.save(ctx.config_path)
    click.echo(f"wrote {ctx.config_path}")


@main.command("import")
@click.argument("kind", type=click.Choice(["participants", "controllers"]))
@click.argument("data_file", type=click.Path(exists=True, path_type=Path))
@click.option("--now", default=None, help="ISO timestamp for the import events.")
@click.pass_obj
def import_records(ctx: _Ctx, kind, data_file, now):
    """Import participants or controllers from CSV or JSON (by extension)."""
    path = Path(data_file)
    text = path.read_text(encoding="utf-8")
    at = _now(now)
    registry = ctx.workspace.registry
    importers = {
        ("participants", False): registry.import_participants_csv,
        ("participants", True): registry.import_participants_json,
        ("controllers", False): registry.import_controllers_csv,
        ("controllers", True): registry.import_controllers_json,
    }
    try:
        rows = importers[(kind, path.suffix == ".json")](text, at)
    except errors.DelaccError as err:
        _fail(err)
    ctx.save()
    click.echo(f"imported {len(rows)} {kind}")


@main.command()
@click.option("--request", "request_ids", multiple=True,
              help="Request ids to send; default sends every draft.")
@click.option("--now", default=None)
@click.pass_obj
def send(ctx: _Ctx, request_ids, now):
    """Render and send draft request letters (batch aborts on any blocked pair)."""
    ws = ctx.workspace
    at = _now(now)
    drafts = ([ws.requests.get(rid) for rid in request_ids] if request_ids else
              [r for r in ws.requests.requests.values()
               if r.state == RequestState.DRAFT])
    if not drafts:
        click.echo("nothing to send")
        return
    snapshot = ws.registry.snapshot()
    blocked = [r for r in drafts
               if not snapshot.allows_communication(r.participant_id,
                                                    r.controller_id)]
    if blocked:
        click.echo(json.dumps({
            "code": "ConsentBlocked",
            "message": "batch aborted; pairs without active communication consent",
            "subject_refs": [f"{r.participant_id}:{r.controller_id}"
                             for r in blocked],
        }, sort_keys=True), err=True)
        sys.exit(1)
    try:
        for request in drafts:
            ws.send_request_letter(request.id, at)
            click.echo(f"sent {request.id}")
    except errors.DelaccError as err:
        _fail(err)
    ctx.save()


@main.command()
@click.option("--list", "list_only", is_flag=True, default=False)
@click.option("--assign", nargs=2, default=None,
              metavar="ITEM THREAD", help="Attach a quarantined item to a thread.")
@click.option("--drop", "drop_id", default=None, metavar="ITEM")
@click.option("--now", default=None)
@click.pass_obj
def triage(ctx: _Ctx, list_only, assign, drop_id, now):
    """Review the quarantine queue."""
    ws = ctx.workspace
    if assign:
        try:
            message = ws.mailroom.triage_assign(assign[0], assign[1], _now(now))
        except errors.DelaccError as err:
            _fail(err)
        ctx.save()
        click.echo(f"attached as {message.id}")
        return
    if drop_id:
        try:
            ws.mailroom.triage_drop(drop_id, _now(now))
        except errors.DelaccError as err:
            _fail(err)
        ctx.save()
        click.echo(f"dropped {drop_id}")
        return
    for item in ws.mailroom.quarantine:
        click.echo(json.dumps({
            "id": item.id, "received_at": item.received_at.isoformat(),
            "reason": item.reason,
        }, sort_keys=True))
    if not ws.mailroom.quarantine:
        click.echo("quarantine empty")


@main.command()
@click.option("--now", default=None)
@click.option("--yes", is_flag=True, default=False,
              help="Send without interactive confirmation.")
@click.pass_obj
def remind(ctx: _Ctx, now, yes):
    """Apply due reminders (escalations still need a human decision)."""
    ws = ctx.workspace
    at = _now(now)
    actions = ws.requests.due_actions(at)
    reminders = [a for a in actions if a.suggestion == "reminder"]
    escalations = [a for a in actions if a.suggestion == "escalate"]
    for action in escalations:
        click.echo(f"{action.request_id}: suggest escalate "
                   f"({action.overdue_days} days overdue)")
    if not reminders:
        click.echo("no reminders due")
        return
    for action in reminders:
        prompt = (f"send reminder for {action.request_id} "
                  f"({action.overdue_days} days overdue)?")
        if not yes and not click.confirm(prompt):
            continue
        try:
            ws.send_followup(action.request_id, letters.LetterKind.REMINDER, at)
        except errors.DelaccError as err:
            _fail(err)
        click.echo(f"reminded {action.request_id}")
    ctx.save()


@main.command()
@click.argument("request_id")
@click.option("--data-copy/--no-data-copy", default=False)
@click.option("--source/--no-source", default=False)
@click.option("--purposes/--no-purposes", default=False)
@click.option("--recipients/--no-recipients", default=False)
@click.option("--retention/--no-retention", default=False)
@click.option("--now", default=None)
@click.pass_obj
def assess(ctx: _Ctx, request_id, data_copy, source, purposes, recipients,
           retention, now):
    """Record the five completeness dimensions for a request."""
    try:
        assessment = ctx.workspace.assess(
            request_id,
            analytics.Completeness(data_copy, source, purposes, recipients,
                                   retention),
            _now(now))
    except errors.DelaccError as err:
        _fail(err)
    ctx.save()
    click.echo(json.dumps(assessment.to_dict(), sort_keys=True))


@main.command()
@click.option("--format", "fmt", default="table", show_default=True,
              type=click.Choice(["csv", "json", "table"]))
@click.option("--rows", "rows_file", default=None,
              type=click.Path(exists=True, path_type=Path),
              help="JSON file with prior-study comparison rows.")
@click.option("--rows-only", is_flag=True, default=False,
              help="Skip the campaign row.")
@click.pass_obj
def stats(ctx: _Ctx, fmt, rows_file, rows_only):
    """Campaign statistics as a comparison table."""
    rows: list[analytics.ComparisonRow] = []
    if rows_file:
        for rd in json.loads(Path(rows_file).read_text(encoding="utf-8")):
            rows.append(analytics.ComparisonRow(**{
                col: str(rd.get(col, "-")) for col in analytics.REPORT_COLUMNS
            }))
    if not rows_only:
        try:
            campaign_stats = ctx.workspace.stats()
            rows.append(analytics.row_from_stats(ctx.workspace.campaign.name,
                                                 campaign_stats))
        except errors.DelaccError as err:
            if not rows:
                _fail(err)
    if not rows:
        click.echo(json.dumps({"code": "EmptyCampaign",
                               "message": "no rows to report",
                               "subject_refs": []}, sort_keys=True), err=True)
        sys.exit(1)
    if fmt == "json":
        click.echo(analytics.comparison_report_json(rows))
    elif fmt == "csv":
        click.echo(analytics.comparison_report_csv(rows), nl=False)
    else:
        widths = [len(col) for col in analytics.REPORT_COLUMNS]
        for row in rows:
            widths = [max(w, len(cell)) for w, cell in zip(widths, row.cells())]
        click.echo("  ".join(col.ljust(w) for col, w
                             in zip(analytics.REPORT_COLUMNS, widths)))
        for row in rows:
            click.echo("  ".join(cell.ljust(w)
                                 for cell, w in zip(row.cells(), widths)))


@main.command()
@click.option("--key", required=True, help="Operator-held pseudonymization key.")
@click.option("--identifiers", "identifiers_file", default=None,
              type=click.Path(exists=True, path_type=Path),
              help="JSON list of identifiers; default derives from the registry.")
@click.option("--out", "out_dir", default=None, type=click.Path(path_type=Path))
@click.option("--now", default=None)
@click.pass_obj
def export(ctx: _Ctx, key, identifiers_file, out_dir, now):
    """Write the pseudonymized export bundle (map sealed separately)."""
    ws = ctx.workspace
    identifiers = None
    if identifiers_file:
        identifiers = json.loads(Path(identifiers_file).read_text(encoding="utf-8"))
    try:
        bundle = ws.export_campaign(key, _now(now), identifiers=identifiers)
    except errors.DelaccError as err:
        _fail(err)
    base = Path(out_dir) if out_dir else ctx.config.storage_path
    vault.write_bundle(bundle, base / "exports" / ws.campaign.id,
                       base / "keys" / f"{ws.campaign.id}.map.enc")
    ctx.save()
    click.echo(json.dumps(bundle.manifest, indent=2, sort_keys=True))


@main.command()
@click.argument("scenario", type=click.Path(exists=True, path_type=Path))
@click.option("--seed", default=None, type=int, help="Override the scenario seed.")
@click.option("--trace", "trace_file", default=None,
              type=click.Path(path_type=Path),
              help="Write the newline-delimited JSON event trace here.")
def simulate(scenario, seed, trace_file):
    """Run a simulated campaign from a scenario file (standalone, no storage)."""
    try:
        result = simharness.run_scenario(scenario, seed=seed)
    except errors.DelaccError as err:
        _fail(err)
    trace_text = result.trace_text()
    if trace_file:
        Path(trace_file).write_text(trace_text, encoding="utf-8")
    stats_dict = result.stats.to_dict()
    click.echo(json.dumps({
        "scenario": str(scenario),
        "stats": stats_dict,
        "response_rate_pct": round(stats_dict["response_rate"] * 100, 1),
        "compliance_rate_pct": round(stats_dict["compliance_rate"] * 100, 1),
        "trace_events": len(result.trace),
        "trace_sha256": hashlib.sha256(trace_text.encode()).hexdigest(),
    }, indent=2, sort_keys=True))


@main.group()
def audit():
    """Audit chain operations."""


@audit.command("verify")
@click.pass_obj
def audit_verify(ctx: _Ctx):
    """Verify the persisted audit chain."""
    audit_file = ctx.config.storage_path / "audit.jsonl"
    if audit_file.exists():
        lines = audit_file.read_text(encoding="utf-8").splitlines()
        report = vault.verify_lines([ln for ln in lines if ln.strip()])
    else:
        report = ctx.workspace.audit.verify()
    click.echo(json.dumps(report.to_dict(), sort_keys=True))
    if not report.valid:
        sys.exit(1)


@main.command()
def transitions():
    """Print the machine-readable lifecycle transition table."""
    click.echo(transition_table_json())


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.pass_obj
def serve(ctx: _Ctx, host, port):
    """Run the HTTP API over the configured workspace."""
    import uvicorn

    from .api import create_app

    app = create_app(ctx.workspace, tokens=ctx.config.tokens,
                     storage_path=ctx.config.storage_path)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
