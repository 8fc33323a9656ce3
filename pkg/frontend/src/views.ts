/**
 * Pure view helpers. Everything here turns API payloads into display
 * structures or HTML strings without recomputing any business value.
 */

import type { Assessment, DueItem, MessageView, RequestItem, Stats } from "./api.js";

export const STATE_ORDER = [
  "Draft", "Sent", "Reminded", "Extended", "Responded",
  "Assessed", "Escalated", "Withdrawn", "Closed",
];

const CHANNEL_ICONS: Record<string, string> = {
  email: "✉",
  post: "📮",
  phone: "☎",
  webform: "🌐",
  in_person: "🤝",
};

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Chip text is the API verdict verbatim; absence renders as "pending". */
export function verdictChip(verdict: string | null): string {
  const label = verdict ?? "pending";
  return `<span class="chip chip-${label}">${escapeHtml(label)}</span>`;
}

export interface StatsPanelRow {
  key: keyof Stats;
  label: string;
  value: number;
}

/** Raw API values, one row per stat; formatting happens only at render. */
export function statsPanelRows(stats: Stats): StatsPanelRow[] {
  return [
    { key: "controllers", label: "Controllers", value: stats.controllers },
    { key: "researchers", label: "Researchers", value: stats.researchers },
    { key: "participants", label: "Participants", value: stats.participants },
    { key: "duration_days", label: "Duration (days)", value: stats.duration_days },
    { key: "response_rate", label: "Response rate", value: stats.response_rate },
    { key: "compliance_rate", label: "Compliance rate", value: stats.compliance_rate },
    {
      key: "minutes_per_request_researcher",
      label: "Researcher minutes per request",
      value: stats.minutes_per_request_researcher,
    },
    {
      key: "minutes_per_request_participant",
      label: "Participant minutes per request",
      value: stats.minutes_per_request_participant,
    },
  ];
}

export function renderStatsPanel(stats: Stats): string {
  const rows = statsPanelRows(stats)
    .map((row) => {
      const shown = row.key.endsWith("_rate")
        ? `${(row.value * 100).toFixed(1)}%`
        : `${row.value}`;
      return `<tr><th>${escapeHtml(row.label)}</th><td data-stat="${row.key}">${shown}</td></tr>`;
    })
    .join("");
  return `<table class="stats-panel">${rows}</table>`;
}

export function renderOverdueList(items: DueItem[]): string {
  if (items.length === 0) {
    return `<p class="empty">Nothing overdue.</p>`;
  }
  const rows = items
    .map(
      (item) =>
        `<li data-request="${item.request_id}">` +
        `<strong>${item.request_id}</strong> ${escapeHtml(item.suggestion)}: ` +
        `${item.overdue_days} days past ${item.effective_deadline}</li>`,
    )
    .join("");
  return `<ol class="overdue">${rows}</ol>`;
}

export function groupByState(requests: RequestItem[]): Map<string, RequestItem[]> {
  const board = new Map<string, RequestItem[]>();
  for (const state of STATE_ORDER) {
    board.set(state, []);
  }
  for (const request of requests) {
    const bucket = board.get(request.state);
    if (bucket) {
      bucket.push(request);
    } else {
      board.set(request.state, [request]);
    }
  }
  return board;
}

export function deadlineCountdown(request: RequestItem, nowIso: string): string {
  if (!request.effective_deadline) {
    return "no deadline";
  }
  const deadline = Date.parse(`${request.effective_deadline}T00:00:00Z`);
  const now = Date.parse(nowIso);
  const days = Math.floor((deadline - now) / 86_400_000);
  if (days < 0) {
    return `${-days}d overdue`;
  }
  return `${days}d left`;
}

export function renderBoard(requests: RequestItem[], nowIso: string): string {
  const sections: string[] = [];
  for (const [state, bucket] of groupByState(requests)) {
    if (bucket.length === 0) {
      continue;
    }
    const cards = bucket
      .map(
        (request) =>
          `<li data-request="${request.id}">${request.id} ` +
          `(${request.participant_id} → ${request.controller_id}) ` +
          `${escapeHtml(deadlineCountdown(request, nowIso))} ` +
          `${verdictChip(request.verdict)}</li>`,
      )
      .join("");
    sections.push(
      `<section class="board-column" data-state="${state}">` +
        `<h3>${state} (${bucket.length})</h3><ul>${cards}</ul></section>`,
    );
  }
  return sections.join("");
}

export function renderTimeline(messages: MessageView[]): string {
  const rows = messages
    .map((message) => {
      const icon = CHANNEL_ICONS[message.channel] ?? "•";
      const sealed = message.open_status === "unopened" ? " [sealed letter]" : "";
      const plea = message.direct_plea ? " ⚑" : "";
      return (
        `<li data-message="${message.id}" class="${message.direction}">` +
        `${icon} ${escapeHtml(message.envelope.timestamp)} ` +
        `${escapeHtml(message.author)}: ${escapeHtml(message.envelope.subject)}` +
        `${sealed}${plea}</li>`
      );
    })
    .join("");
  return `<ul class="timeline">${rows}</ul>`;
}

export function renderError(code: string, message: string): string {
  return (
    `<div class="error" data-code="${escapeHtml(code)}">` +
    `<strong>${escapeHtml(code)}</strong> ${escapeHtml(message)} ` +
    `<button data-action="retry">Retry</button></div>`
  );
}
