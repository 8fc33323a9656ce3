#!/usr/bin/env python3
"""Record HTTP exchanges from the pilot scenario for the dashboard tests.

Runs the pilot simulation to a mid-campaign day (overdue list non-empty,
some requests assessed) and to completion, then replays the endpoints the
dashboard consumes against the real API, recording (method, path, token,
status, response) tuples into frontend/tests/fixtures/pilot_api.json.

The recording is deterministic: the simulation is seeded and every request
carries an explicit timestamp.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from fastapi.testclient import TestClient

from delacc.analytics import Completeness
from delacc.lifecycle import RequestState
from delacc.service.api import create_app
from delacc.simharness import CampaignSimulator, ProfileKind, load_scenario

ROOT = Path(__file__).resolve().parent.parent
SCENARIO = ROOT / "scenarios" / "pilot.json"
OUT = ROOT / "frontend" / "tests" / "fixtures" / "pilot_api.json"

MID_DAY = 45

RESEARCHER = "researcher-token"
ADMIN = "admin-token"


def token_for(pid: str) -> str:
    return f"participant-{pid}-token"


class Recorder:
    def __init__(self, client: TestClient):
        self.client = client
        self.exchanges: list[dict] = []

    def get(self, section: str, path: str, token: str | None):
        headers = {"X-Actor-Token": token} if token else {}
        response = self.client.get(path, headers=headers)
        self._record(section, "GET", path, token, None, response)
        return response

    def post(self, section: str, path: str, token: str | None, body: dict):
        headers = {"X-Actor-Token": token} if token else {}
        response = self.client.post(path, headers=headers, json=body)
        self._record(section, "POST", path, token, body, response)
        return response

    def _record(self, section, method, path, token, body, response):
        self.exchanges.append({
            "section": section,
            "method": method,
            "path": path,
            "token": token,
            "request_body": body,
            "status": response.status_code,
            "response": response.json(),
        })


def day_iso(sim: CampaignSimulator, day: int, hour: int = 12) -> str:
    # Z form survives unescaped inside query strings ("+00:00" would not).
    return sim.at(day, hour).strftime("%Y-%m-%dT%H:%M:%SZ")


def main() -> int:
    sim = CampaignSimulator(load_scenario(SCENARIO))
    sim.run_until(MID_DAY)
    ws = sim.ws

    app = create_app(ws)
    recorder = Recorder(TestClient(app))

    # Mid-campaign: assess everything already responded so verdict chips
    # exist, then record the researcher and participant views. The last
    # responded request stays unassessed: its chip must read "pending" until
    # the recorded assessment entry below flips it.
    now_mid = day_iso(sim, MID_DAY + 1)
    responded = [rid for rid in sorted(ws.requests.requests,
                                       key=lambda r: int(r[1:]))
                 if ws.requests.get(rid).state == RequestState.RESPONDED]
    held_back = responded[-1]
    for rid in responded[:-1]:
        dims = sim.response_dims.get(rid, Completeness.none())
        recorder.client.post("/assessments",
                             headers={"X-Actor-Token": RESEARCHER},
                             json={"request_id": rid,
                                   "completeness": dims.to_dict(),
                                   "now": now_mid})

    recorder.get("mid", "/health", None)
    recorder.get("mid", "/transitions", None)
    recorder.get("mid", "/requests", RESEARCHER)
    recorder.get("mid", f"/requests/due?now={now_mid}", RESEARCHER)
    recorder.get("mid", "/assessments", RESEARCHER)
    recorder.get("mid", "/stats", RESEARCHER)  # 422 TooEarly mid-campaign
    recorder.get("mid", "/quarantine", RESEARCHER)

    p1 = ws.registry.participant_order[0]
    recorder.get("mid", "/consents", token_for(p1))
    recorder.get("mid", "/threads", token_for(p1))
    recorder.get("mid", "/targets", token_for(p1))
    own_thread = next(t.id for t in ws.mailroom.threads.values()
                      if t.participant_id == p1)
    recorder.get("mid", f"/threads/{own_thread}", token_for(p1))

    # Assessment entry: recording the held-back request's assessment lets the
    # dashboard tests watch the verdict chip flip from pending.
    recorder.post("assessment", "/assessments", RESEARCHER, {
        "request_id": held_back,
        "completeness": sim.response_dims.get(held_back,
                                              Completeness.none()).to_dict(),
        "now": now_mid,
    })

    # Live steering, recorded mid-campaign so the request is still open.
    # A silent controller keeps the withdrawal from disturbing the final
    # pilot statistics (its request ends up no_response either way).
    steer_request = next(
        ws.requests.get(rid)
        for cid, rid in sorted(sim.request_by_controller.items(),
                               key=lambda kv: int(kv[1][1:]))
        if sim.sim_controllers[cid].profile.kind == ProfileKind.SILENT)
    steer_pid = steer_request.participant_id
    steer_cid = steer_request.controller_id
    versioned = recorder.get("steering", "/requests", RESEARCHER)
    stale_version = versioned.json()["version"]
    recorder.get("steering", "/consents", token_for(steer_pid))
    recorder.post("steering", "/consents/revoke", token_for(steer_pid),
                  {"participant_id": steer_pid, "controller_id": steer_cid,
                   "at": now_mid})
    recorder.get("steering", f"/requests?version={stale_version}", RESEARCHER)
    recorder.get("steering", "/requests", RESEARCHER)
    recorder.post("steering", f"/threads/{steer_request.thread_id}/messages",
                  RESEARCHER,
                  {"subject": "Follow-up", "body": "Checking in.",
                   "at": now_mid})

    # Finish the campaign; record the final views on a fresh recorder.
    result = sim.finish()
    final = Recorder(TestClient(app))
    final.exchanges = recorder.exchanges
    now_final = day_iso(sim, sim.config.horizon_days + 1)

    final.get("final", "/stats", RESEARCHER)
    final.get("final", "/requests", RESEARCHER)
    final.get("final", f"/requests/due?now={now_final}", RESEARCHER)
    final.get("final", "/assessments", RESEARCHER)
    final.get("final", "/quarantine", RESEARCHER)

    # Role isolation: every recorded attempt at a foreign thread must 403.
    participants = list(ws.registry.participant_order)[:3]
    threads_by_pid = {}
    for thread in ws.mailroom.threads.values():
        threads_by_pid.setdefault(thread.participant_id, thread.id)
    for viewer in participants:
        for owner in participants:
            if viewer == owner:
                continue
            final.get("negative", f"/threads/{threads_by_pid[owner]}",
                      token_for(viewer))

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({
        "meta": {
            "scenario": "pilot.json",
            "seed": sim.config.seed,
            "mid_day": MID_DAY,
            "mid_now": now_mid,
            "final_now": now_final,
            "steering_thread": steer_request.thread_id,
            "steering_pair": [steer_pid, steer_cid],
            "held_back_request": held_back,
            "participants": participants,
        },
        "exchanges": final.exchanges,
    }, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {OUT} ({len(final.exchanges)} exchanges)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
