/**
 * Participant console: own threads, consent scope toggles, letter-open
 * authorizations, final-say confirmation, direct replies, plea flagging.
 *
 * Mutations are optimistic: state updates locally first, the server call
 * follows, and a failure reverts the local change and surfaces the error
 * inline. The server's returned version is the reconciliation point.
 */

import {
  ApiClient,
  ApiError,
  Grant,
  MessageView,
  TargetEntry,
  ThreadSummary,
} from "./api.js";
import { buildDigest, DigestGroup, DigestMode } from "./digest.js";
import { renderError, renderTimeline } from "./views.js";

export interface PendingAction {
  kind: "authorize_letter" | "confirm_final_say" | "plea_review";
  subject: string;
  detail: string;
}

export class ParticipantConsole {
  readonly participantId: string;
  private readonly api: ApiClient;

  version = 0;
  consents: Grant[] = [];
  threads: ThreadSummary[] = [];
  targets: TargetEntry[] = [];
  messagesByThread = new Map<string, MessageView[]>();
  digestMode: DigestMode = "immediate";
  lastError: ApiError | null = null;

  constructor(api: ApiClient, participantId: string) {
    this.api = api;
    this.participantId = participantId;
  }

  async refresh(): Promise<void> {
    const [consents, threads, targets] = await Promise.all([
      this.api.listConsents(),
      this.api.listThreads(),
      this.api.listTargets(),
    ]);
    this.consents = consents.items;
    this.threads = threads.items;
    this.targets = targets.items;
    this.version = Math.max(consents.version, threads.version, targets.version);
  }

  async openThread(threadId: string): Promise<MessageView[]> {
    const detail = await this.api.getThread(threadId);
    this.messagesByThread.set(threadId, detail.messages);
    return detail.messages;
  }

  grantFor(controllerId: string): Grant | undefined {
    return this.consents.find(
      (grant) =>
        grant.controller_id === controllerId &&
        grant.participant_id === this.participantId,
    );
  }

  /** Optimistic share_responses toggle; reverts on server rejection. */
  async toggleShareResponses(controllerId: string, on: boolean,
                             at?: string): Promise<void> {
    const grant = this.grantFor(controllerId);
    if (!grant) {
      throw new Error(`no grant for ${controllerId}`);
    }
    const previous = grant.share_responses;
    grant.share_responses = on;
    try {
      const updated = await this.api.grantConsent({
        participant_id: this.participantId,
        controller_id: controllerId,
        communicate: grant.communicate,
        research_use: grant.research_use,
        share_responses: on,
        interest_level: grant.interest_level,
        at,
      });
      this.version = updated.version;
      this.lastError = null;
    } catch (error) {
      grant.share_responses = previous;
      this.rememberError(error);
      throw error;
    }
  }

  /** Optimistic per-controller revocation; reverts on server rejection. */
  async revokeConsent(controllerId: string, at?: string): Promise<void> {
    const grant = this.grantFor(controllerId);
    if (!grant) {
      throw new Error(`no grant for ${controllerId}`);
    }
    const previous = grant.status;
    grant.status = "revoked";
    try {
      const updated = await this.api.revokeConsent(this.participantId,
                                                   controllerId, at);
      this.version = updated.version;
      this.lastError = null;
    } catch (error) {
      grant.status = previous;
      this.rememberError(error);
      throw error;
    }
  }

  async authorizeLetter(messageId: string, letterId: string, ackRef: string,
                        at?: string): Promise<MessageView> {
    try {
      const updated = await this.api.authorizeLetter(messageId, letterId,
                                                     ackRef, at);
      this.version = updated.version;
      const messages = this.messagesByThread.get(updated.message.thread_id);
      if (messages) {
        const index = messages.findIndex((m) => m.id === messageId);
        if (index >= 0) {
          messages[index] = updated.message;
        }
      }
      this.lastError = null;
      return updated.message;
    } catch (error) {
      this.rememberError(error);
      throw error;
    }
  }

  async confirmFinalSay(at?: string): Promise<number> {
    const result = await this.api.confirmFinalSay(this.participantId, at);
    for (const entry of this.targets) {
      entry.confirmed = true;
    }
    this.version = result.version;
    return result.confirmed;
  }

  /** Take a thread over with a direct reply. */
  async composeReply(threadId: string, subject: string, body: string,
                     at?: string): Promise<MessageView> {
    try {
      const sent = await this.api.compose(threadId, subject, body, at);
      this.version = sent.version;
      this.lastError = null;
      return sent.message;
    } catch (error) {
      this.rememberError(error);
      throw error;
    }
  }

  async flagPlea(messageId: string, at?: string): Promise<void> {
    const updated = await this.api.flagDirectPlea(messageId, at);
    this.version = updated.version;
  }

  pendingActions(): PendingAction[] {
    const pending: PendingAction[] = [];
    for (const entry of this.targets) {
      if (!entry.confirmed) {
        pending.push({
          kind: "confirm_final_say",
          subject: entry.controller_id,
          detail: "final say required before any request is sent",
        });
      }
    }
    for (const [threadId, messages] of this.messagesByThread) {
      for (const message of messages) {
        if (message.open_status === "unopened") {
          pending.push({
            kind: "authorize_letter",
            subject: message.id,
            detail: `letter ${message.letter_id ?? "?"} in ${threadId} awaits your authorization`,
          });
        }
        if (message.direct_plea) {
          pending.push({
            kind: "plea_review",
            subject: message.id,
            detail: "an organization contacted you directly about withdrawing",
          });
        }
      }
    }
    return pending;
  }

  digest(threadId: string): DigestGroup[] {
    return buildDigest(this.messagesByThread.get(threadId) ?? [], this.digestMode);
  }

  renderThread(threadId: string): string {
    const messages = this.messagesByThread.get(threadId) ?? [];
    const errorBox = this.lastError
      ? renderError(this.lastError.code, this.lastError.body.message)
      : "";
    return errorBox + renderTimeline(messages);
  }

  private rememberError(error: unknown): void {
    if (error instanceof ApiError) {
      this.lastError = error;
    }
  }
}
