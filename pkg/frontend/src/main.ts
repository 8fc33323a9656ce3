/**
 * Browser entry point. Hash routes:
 *   #/researcher            researcher console (researcher token)
 *   #/participant/<id>      participant console (participant token)
 *
 * The token is kept in localStorage under "delacc-token". The page polls the
 * API every 15 seconds, the refresh cycle that picks up consent changes,
 * new mail, and state transitions.
 */

import { ApiClient, browserFetch } from "./api.js";
import { ParticipantConsole } from "./participant.js";
import { ResearcherConsole } from "./researcher.js";

const REFRESH_MS = 15_000;

function tokenFromStorage(): string | null {
  return window.localStorage.getItem("delacc-token");
}

function promptForToken(): string {
  const token = window.prompt("Actor token (e.g. researcher-token)") ?? "";
  window.localStorage.setItem("delacc-token", token);
  return token;
}

async function mountResearcher(root: HTMLElement): Promise<() => void> {
  const api = new ApiClient(browserFetch(), tokenFromStorage() ?? promptForToken());
  const console_ = new ResearcherConsole(api);
  const redraw = async () => {
    const now = new Date().toISOString();
    await console_.refresh(now);
    root.innerHTML = `<h1>Campaign board</h1>` + console_.render(now);
  };
  await redraw();
  const timer = window.setInterval(() => void redraw(), REFRESH_MS);
  return () => window.clearInterval(timer);
}

async function mountParticipant(root: HTMLElement, pid: string): Promise<() => void> {
  const api = new ApiClient(browserFetch(), tokenFromStorage() ?? promptForToken());
  const console_ = new ParticipantConsole(api, pid);
  const redraw = async () => {
    await console_.refresh();
    for (const thread of console_.threads) {
      await console_.openThread(thread.id);
    }
    const pending = console_.pendingActions()
      .map((a) => `<li>${a.kind}: ${a.detail}</li>`)
      .join("");
    const threads = console_.threads
      .map((t) => `<section><h2>${t.id} (${t.controller_id})</h2>` +
                  console_.renderThread(t.id) + `</section>`)
      .join("");
    root.innerHTML =
      `<h1>Your requests</h1><ul class="pending">${pending}</ul>` + threads;
  };
  await redraw();
  const timer = window.setInterval(() => void redraw(), REFRESH_MS);
  return () => window.clearInterval(timer);
}

let teardown: (() => void) | null = null;

async function route(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) {
    return;
  }
  if (teardown) {
    teardown();
    teardown = null;
  }
  const hash = window.location.hash || "#/researcher";
  const participantMatch = /^#\/participant\/(.+)$/.exec(hash);
  if (participantMatch && participantMatch[1]) {
    teardown = await mountParticipant(root, participantMatch[1]);
  } else {
    teardown = await mountResearcher(root);
  }
}

window.addEventListener("hashchange", () => void route());
window.addEventListener("DOMContentLoaded", () => void route());
