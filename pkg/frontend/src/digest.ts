/**
 * Client-side notification digests. Delivery stays the mailroom's job; this
 * only regroups the already-visible message feed for display cadence.
 */

import type { MessageView } from "./api.js";

export type DigestMode = "immediate" | "weekly";

export interface DigestGroup {
  label: string;
  messages: MessageView[];
}

function weekLabel(timestamp: string): string {
  const date = new Date(timestamp);
  const day = date.getUTCDay();
  const monday = new Date(date);
  monday.setUTCDate(date.getUTCDate() - ((day + 6) % 7));
  return `week of ${monday.toISOString().slice(0, 10)}`;
}

export function buildDigest(messages: MessageView[], mode: DigestMode): DigestGroup[] {
  const ordered = [...messages].sort((a, b) =>
    a.envelope.timestamp.localeCompare(b.envelope.timestamp));
  if (mode === "immediate") {
    return ordered.map((message) => ({
      label: message.envelope.timestamp,
      messages: [message],
    }));
  }
  const groups = new Map<string, MessageView[]>();
  for (const message of ordered) {
    const label = weekLabel(message.envelope.timestamp);
    const bucket = groups.get(label);
    if (bucket) {
      bucket.push(message);
    } else {
      groups.set(label, [message]);
    }
  }
  return [...groups.entries()].map(([label, grouped]) => ({
    label,
    messages: grouped,
  }));
}
