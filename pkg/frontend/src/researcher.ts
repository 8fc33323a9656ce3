/**
 * Researcher console: campaign board, overdue list, one-click follow-ups
 * (with confirmation), assessment entry, quarantine triage, live stats.
 *
 * Every number displayed is the API's number; stale snapshot versions are
 * reconciled by refetching when the server answers SnapshotExpired.
 */

import {
  ApiClient,
  ApiError,
  Assessment,
  DueItem,
  QuarantineItem,
  RequestItem,
  Stats,
} from "./api.js";
import {
  renderBoard,
  renderError,
  renderOverdueList,
  renderStatsPanel,
  statsPanelRows,
  StatsPanelRow,
  verdictChip,
} from "./views.js";

export class ResearcherConsole {
  private readonly api: ApiClient;

  version = 0;
  requests: RequestItem[] = [];
  due: DueItem[] = [];
  assessments = new Map<string, Assessment>();
  quarantine: QuarantineItem[] = [];
  stats: Stats | null = null;
  statsError: ApiError | null = null;
  lastError: ApiError | null = null;

  constructor(api: ApiClient) {
    this.api = api;
  }

  async refresh(nowIso: string): Promise<void> {
    const [requests, due, assessments, quarantine] = await Promise.all([
      this.api.listRequests(),
      this.api.dueActions(nowIso),
      this.api.listAssessments(),
      this.api.listQuarantine(),
    ]);
    this.requests = requests.items;
    this.due = due.items;
    this.quarantine = quarantine.items;
    this.assessments = new Map(
      assessments.items.map((item) => [item.request_id, item]));
    this.version = requests.version;
    try {
      const stats = await this.api.getStats();
      this.stats = stats.stats;
      this.statsError = null;
    } catch (error) {
      if (error instanceof ApiError) {
        // Mid-campaign the API refuses aggregate stats; show why instead.
        this.stats = null;
        this.statsError = error;
      } else {
        throw error;
      }
    }
  }

  /** Refetch the request list when a pinned version has expired. */
  async reconcile(): Promise<void> {
    try {
      const pinned = await this.api.listRequests(this.version);
      this.requests = pinned.items;
      this.version = pinned.version;
    } catch (error) {
      if (error instanceof ApiError && error.code === "SnapshotExpired") {
        const fresh = await this.api.listRequests();
        this.requests = fresh.items;
        this.version = fresh.version;
        return;
      }
      throw error;
    }
  }

  overdueRows(): DueItem[] {
    return this.due;
  }

  statsRows(): StatsPanelRow[] {
    return this.stats ? statsPanelRows(this.stats) : [];
  }

  verdictChipFor(requestId: string): string {
    return verdictChip(this.assessments.get(requestId)?.verdict ?? null);
  }

  async sendMessage(threadId: string, subject: string, body: string,
                    at?: string): Promise<boolean> {
    try {
      const sent = await this.api.compose(threadId, subject, body, at);
      this.version = sent.version;
      this.lastError = null;
      return true;
    } catch (error) {
      if (error instanceof ApiError) {
        this.lastError = error;
        return false;
      }
      throw error;
    }
  }

  /** Render and dispatch the standardized request letter for a draft. */
  async sendRequestLetter(requestId: string, at?: string): Promise<boolean> {
    try {
      const sent = await this.api.sendRequestLetter(requestId, at);
      this.version = sent.version;
      this.lastError = null;
      return true;
    } catch (error) {
      if (error instanceof ApiError) {
        this.lastError = error;
        return false;
      }
      throw error;
    }
  }

  /** One-click follow-up; `confirm` keeps the operator in the loop. */
  async sendFollowup(requestId: string, kind: string,
                     confirm: () => boolean, at?: string): Promise<boolean> {
    if (!confirm()) {
      return false;
    }
    try {
      const sent = await this.api.sendFollowup(requestId, kind, at);
      this.version = sent.version;
      this.lastError = null;
      return true;
    } catch (error) {
      if (error instanceof ApiError) {
        this.lastError = error;
        return false;
      }
      throw error;
    }
  }

  async recordAssessment(requestId: string,
                         completeness: Record<string, boolean>,
                         now?: string): Promise<Assessment> {
    const recorded = await this.api.recordAssessment(requestId, completeness, now);
    this.assessments.set(requestId, recorded.assessment);
    this.version = recorded.version;
    return recorded.assessment;
  }

  render(nowIso: string): string {
    const errorBox = this.lastError
      ? renderError(this.lastError.code, this.lastError.body.message)
      : "";
    const statsBox = this.stats
      ? renderStatsPanel(this.stats)
      : this.statsError
        ? renderError(this.statsError.code, this.statsError.body.message)
        : "<p>loading…</p>";
    return [
      errorBox,
      `<section id="stats">${statsBox}</section>`,
      `<section id="overdue">${renderOverdueList(this.due)}</section>`,
      `<section id="board">${renderBoard(this.requests, nowIso)}</section>`,
    ].join("\n");
  }
}
