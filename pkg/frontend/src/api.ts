/**
 * Typed client for the campaign service HTTP API.
 *
 * The dashboard performs no business logic: everything rendered comes back
 * from these calls verbatim. Errors arrive as structured
 * `{code, message, subject_refs}` bodies and are surfaced as ApiError.
 */

export interface Stats {
  controllers: number;
  researchers: number;
  participants: number;
  duration_days: number;
  response_rate: number;
  compliance_rate: number;
  minutes_per_request_researcher: number;
  minutes_per_request_participant: number;
}

export interface RequestItem {
  id: string;
  participant_id: string;
  controller_id: string;
  state: string;
  sent_at: string | null;
  deadline: string | null;
  extension_until: string | null;
  effective_deadline: string | null;
  thread_id: string | null;
  events: number;
  verdict: string | null;
}

export interface DueItem {
  request_id: string;
  suggestion: string;
  overdue_days: number;
  effective_deadline: string;
}

export interface Assessment {
  request_id: string;
  responded: boolean;
  within_deadline: boolean;
  completeness: Record<string, boolean>;
  verdict: string;
}

export interface Grant {
  participant_id: string;
  controller_id: string;
  communicate: boolean;
  research_use: boolean;
  share_responses: boolean;
  interest_level: number;
  status: string;
  granted_at: string;
  revoked_at: string | null;
  history_length: number;
}

export interface TargetEntry {
  participant_id: string;
  controller_id: string;
  interest_level: number;
  confirmed: boolean;
}

export interface ThreadSummary {
  id: string;
  request_id: string;
  participant_id: string;
  controller_id: string;
  message_count: number;
}

export interface Envelope {
  from: string;
  to: string[];
  timestamp: string;
  subject: string;
  message_id: string | null;
  in_reply_to: string | null;
}

export interface MessageView {
  id: string;
  thread_id: string;
  direction: string;
  channel: string;
  author: string;
  envelope: Envelope;
  body_ref: string | null;
  attachments: string[];
  open_status: string | null;
  open_authorization: string[] | null;
  scan_ref: string | null;
  letter_id: string | null;
  substantive: boolean;
  direct_plea: boolean;
}

export interface ThreadDetail {
  version: number;
  thread: ThreadSummary;
  messages: MessageView[];
}

export interface QuarantineItem {
  id: string;
  received_at: string;
  reason: string;
  kind: string;
}

export interface TransitionTable {
  states: string[];
  events: string[];
  transitions: Record<string, Record<string, string>>;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  subject_refs: string[];
}

export interface Listed<T> {
  version: number;
  items: T[];
}

export class ApiError extends Error {
  readonly status: number;
  readonly body: ApiErrorBody;

  constructor(status: number, body: ApiErrorBody) {
    super(`${body.code}: ${body.message}`);
    this.status = status;
    this.body = body;
  }

  get code(): string {
    return this.body.code;
  }
}

export interface HttpResponse {
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  path: string,
  init: { method: string; headers: Record<string, string>; body?: string },
) => Promise<HttpResponse>;

export class ApiClient {
  private readonly fetchImpl: FetchLike;
  private readonly token: string | null;
  private readonly base: string;

  constructor(fetchImpl: FetchLike, token: string | null, base = "") {
    this.fetchImpl = fetchImpl;
    this.token = token;
    this.base = base;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) {
      headers["X-Actor-Token"] = this.token;
    }
    const response = await this.fetchImpl(this.base + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json();
    if (response.status < 200 || response.status >= 300) {
      throw new ApiError(response.status, payload as ApiErrorBody);
    }
    return payload as T;
  }

  getStats(): Promise<{ version: number; stats: Stats }> {
    return this.request("GET", "/stats");
  }

  listRequests(version?: number): Promise<Listed<RequestItem>> {
    const suffix = version === undefined ? "" : `?version=${version}`;
    return this.request("GET", `/requests${suffix}`);
  }

  dueActions(nowIso: string): Promise<Listed<DueItem>> {
    return this.request("GET", `/requests/due?now=${nowIso}`);
  }

  listAssessments(): Promise<Listed<Assessment>> {
    return this.request("GET", "/assessments");
  }

  listConsents(): Promise<Listed<Grant>> {
    return this.request("GET", "/consents");
  }

  listThreads(): Promise<Listed<ThreadSummary>> {
    return this.request("GET", "/threads");
  }

  getThread(threadId: string): Promise<ThreadDetail> {
    return this.request("GET", `/threads/${threadId}`);
  }

  listTargets(): Promise<Listed<TargetEntry>> {
    return this.request("GET", "/targets");
  }

  listQuarantine(): Promise<Listed<QuarantineItem>> {
    return this.request("GET", "/quarantine");
  }

  transitions(): Promise<TransitionTable> {
    return this.request("GET", "/transitions");
  }

  grantConsent(grant: {
    participant_id: string;
    controller_id: string;
    communicate: boolean;
    research_use: boolean;
    share_responses: boolean;
    interest_level: number;
    at?: string;
  }): Promise<{ version: number; grant: Grant }> {
    return this.request("POST", "/consents", grant);
  }

  revokeConsent(participantId: string, controllerId: string,
                at?: string): Promise<{ version: number; grant: Grant }> {
    return this.request("POST", "/consents/revoke", {
      participant_id: participantId,
      controller_id: controllerId,
      at,
    });
  }

  compose(threadId: string, subject: string, body: string,
          at?: string): Promise<{ version: number; message: MessageView }> {
    return this.request("POST", `/threads/${threadId}/messages`,
                        { subject, body, at });
  }

  sendFollowup(requestId: string, kind: string,
               at?: string): Promise<{ version: number; message: MessageView }> {
    return this.request("POST", `/requests/${requestId}/followup`, { kind, at });
  }

  sendRequestLetter(requestId: string,
                    at?: string): Promise<{ version: number; message: MessageView }> {
    return this.request("POST", `/requests/${requestId}/send`, { at });
  }

  authorizeLetter(messageId: string, letterId: string, ackRef: string,
                  at?: string): Promise<{ version: number; message: MessageView }> {
    return this.request("POST", `/messages/${messageId}/authorize-letter`,
                        { letter_id: letterId, ack_ref: ackRef, at });
  }

  flagDirectPlea(messageId: string,
                 at?: string): Promise<{ version: number; message: MessageView }> {
    return this.request("POST", `/messages/${messageId}/flags`,
                        { direct_plea: true, at });
  }

  forwardToResearcher(messageId: string,
                      at?: string): Promise<{ version: number; message: MessageView }> {
    return this.request("POST", `/messages/${messageId}/forward`, { at });
  }

  confirmFinalSay(participantId: string,
                  at?: string): Promise<{ version: number; confirmed: number }> {
    return this.request("POST", "/targets/confirm",
                        { participant_id: participantId, at });
  }

  recordAssessment(requestId: string, completeness: Record<string, boolean>,
                   now?: string): Promise<{ version: number; assessment: Assessment }> {
    return this.request("POST", "/assessments",
                        { request_id: requestId, completeness, now });
  }

  triage(itemId: string, threadId: string | null,
         at?: string): Promise<unknown> {
    return this.request("POST", `/quarantine/${itemId}/triage`,
                        threadId ? { thread_id: threadId, at } : { drop: true, at });
  }
}

/** Browser adapter: window.fetch narrowed to the shape the client needs. */
export function browserFetch(): FetchLike {
  return async (path, init) => {
    const response = await fetch(path, init);
    return { status: response.status, json: () => response.json() };
  };
}
