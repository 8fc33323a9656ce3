from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from delacc.lifecycle import DeadlinePolicy
from delacc.registry import Channel, ConsentScopes, ContactKind, ProofKind
from delacc.workspace import Workspace


def at(day: int = 0, hour: int = 9) -> datetime:
    """Campaign-relative timestamp: day 0 = 2018-06-05 UTC."""
    return datetime(2018, 6, 5, hour, tzinfo=timezone.utc) + timedelta(days=day)


@pytest.fixture
def workspace() -> Workspace:
    return Workspace(
        project_domain="accessproject.example",
        postal_address="Access Project\nPO Box 1\n2600 AA Delft",
        policy=DeadlinePolicy(),
    )


def seed_pair(ws: Workspace, *, share_responses: bool = True,
              surname: str = "Jansen", controller_name: str = "Acme BV",
              contact: str = "privacy@acme.example"):
    """One active (participant, controller) pair plus proof and signed form."""
    when = at(0)
    participant = ws.registry.register_participant(
        f"Jan {surname}", surname, Channel.EMAIL, when)
    ws.registry.activate_participant(participant.id, when)
    ws.registry.add_identity_proof(
        participant.id, ProofKind.ID_CARD_COPY, True, when,
        ws.blobs.put_text("proof", f"secured id copy {participant.id}"))
    controller = ws.registry.register_controller(
        controller_name, ContactKind.EMAIL, contact, when)
    ws.registry.grant_consent(
        participant.id, controller.id,
        ConsentScopes(True, True, share_responses), 8, when)
    return participant, controller


def confirm_target(ws: Workspace, participant, controller):
    when = at(0, 10)
    ws.registry.select_targets(
        ws.campaign, [(participant.id, controller.id)], when,
        per_participant_cap=ws.per_participant_cap,
        per_controller_cap=ws.per_controller_cap)
    ws.sign_consent_form(participant.id, [controller.id], when)
    ws.registry.confirm_final_say(participant.id, when)


@pytest.fixture
def ready_pair(workspace):
    """Workspace with one confirmed pair, researcher proof set."""
    ws = workspace
    ws.set_researcher_proof("researcher id copy", at(0))
    participant, controller = seed_pair(ws)
    confirm_target(ws, participant, controller)
    return ws, participant, controller
