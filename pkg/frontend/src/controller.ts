/* Session lifecycle: create or restore, play trials, finalize.
 *
 * One request in flight at a time. A choice that fails on the network is
 * retried with the same trial index, so a response lost after the server
 * recorded it comes back as a duplicate replay and reconciles cleanly.
 */

import { ApiClient, ApiError } from "./api.js";
import { applyResult, choiceToAction, viewFromServer } from "./state.js";
import type { Choice, ClientView } from "./state.js";

export interface SessionStorage {
  load(): { sessionId: string; horizon: number } | null;
  save(entry: { sessionId: string; horizon: number }): void;
  clear(): void;
}

/** localStorage-backed persistence of the session pointer (and nothing
 *  else; the server owns all trial state). */
export function browserStorage(key = "acdesign.session"): SessionStorage {
  return {
    load() {
      const raw = localStorage.getItem(key);
      if (!raw) return null;
      try {
        const doc = JSON.parse(raw);
        if (typeof doc.sessionId === "string" && typeof doc.horizon === "number") {
          return doc;
        }
      } catch { /* fall through */ }
      return null;
    },
    save(entry) {
      localStorage.setItem(key, JSON.stringify(entry));
    },
    clear() {
      localStorage.removeItem(key);
    },
  };
}

export class StudyFullError extends Error {
  constructor() {
    super("study full");
    this.name = "StudyFullError";
  }
}

export class SessionController {
  view: ClientView | null = null;
  private inFlight = false;

  constructor(private api: ApiClient, private storage: SessionStorage,
              private retries = 2, private retryDelayMs = 400) {}

  /** Resume the stored session if it is still active or complete, otherwise
   *  start a fresh one. Throws StudyFullError when no slot is open. */
  async start(participant: Record<string, unknown>): Promise<ClientView> {
    const stored = this.storage.load();
    if (stored) {
      try {
        const server = await this.api.getSession(stored.sessionId);
        if (server.status === "active" || server.done) {
          this.view = viewFromServer(server, stored.horizon);
          return this.view;
        }
      } catch (err) {
        if (!(err instanceof ApiError && err.status === 404)) throw err;
      }
      this.storage.clear(); // expired or unknown, start over
    }
    let created;
    try {
      created = await this.api.createSession(participant);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        throw new StudyFullError();
      }
      throw err;
    }
    this.storage.save({ sessionId: created.session_id, horizon: created.horizon });
    const server = await this.api.getSession(created.session_id);
    this.view = viewFromServer(server, created.horizon);
    return this.view;
  }

  get busy(): boolean {
    return this.inFlight;
  }

  /** Play one trial. Rejects while a request is in flight; the UI disables
   *  input on `busy`, this guard covers races anyway. */
  async choose(choice: Choice): Promise<ClientView> {
    const view = this.view;
    if (!view) throw new Error("no session");
    if (view.done) throw new Error("session complete");
    if (this.inFlight) throw new Error("request in flight");
    this.inFlight = true;
    try {
      const { result } = await this.submitWithRetry(
        view.sessionId, choiceToAction(choice), view.trialIndex);
      const next = applyResult(view, result);
      if (next) {
        this.view = next;
      } else {
        await this.resync(); // replay of an older trial: trust the server
      }
      return this.view!;
    } finally {
      this.inFlight = false;
    }
  }

  private async submitWithRetry(sessionId: string, action: 0 | 1, trial: number) {
    let lastErr: unknown;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      if (attempt > 0) await delay(this.retryDelayMs * attempt);
      try {
        return await this.api.submitChoice(sessionId, action, trial);
      } catch (err) {
        if (err instanceof ApiError) throw err; // server spoke; not retryable
        lastErr = err; // network failure: same trial index again
      }
    }
    throw lastErr;
  }

  private async resync(): Promise<void> {
    const view = this.view!;
    const server = await this.api.getSession(view.sessionId);
    this.view = viewFromServer(server, view.horizon);
  }

  /** Persist the finished session server-side. Idempotent. */
  async finish(): Promise<void> {
    const view = this.view;
    if (!view || !view.done) throw new Error("session not complete");
    await this.api.finalize(view.sessionId);
  }

  /** Forget the stored pointer (end screen acknowledged). */
  reset(): void {
    this.storage.clear();
    this.view = null;
  }
}

function delay(ms: number) {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
