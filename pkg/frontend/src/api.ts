/* Typed client for the session service HTTP API.
 *
 * The server is the source of truth for everything; this layer only shapes
 * requests and classifies responses. A duplicate choice submission comes
 * back as a 409 whose body is the originally recorded result, so the
 * caller can reconcile instead of erroring.
 */

export interface TrialResult {
  trial_index: number;
  action: number;
  outcome: number;
  correct: number;
  done: boolean;
  score: number;
}

export interface TrialRow {
  trial_index: number;
  action: number;
  outcome: number;
  correct: number;
}

export interface ServerView {
  session_id: string;
  trial_index: number;
  history: TrialRow[];
  score: number;
  done: boolean;
  status: "active" | "finalized" | "expired";
}

export interface Instructions {
  text: string;
  points_per_correct: number;
}

export class ApiError extends Error {
  constructor(public status: number, public body: unknown) {
    super(`request failed with status ${status}`);
    this.name = "ApiError";
  }
}

function isTrialResult(body: unknown): body is TrialResult {
  return typeof body === "object" && body !== null
    && "trial_index" in body && "outcome" in body && "score" in body;
}

export class ApiClient {
  constructor(private baseUrl = "",
              private fetchFn: typeof fetch = fetch.bind(globalThis)) {}

  private async request(method: string, path: string, body?: unknown) {
    const resp = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined
        : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    let parsed: unknown = null;
    try {
      parsed = await resp.json();
    } catch {
      parsed = null;
    }
    return { status: resp.status, body: parsed };
  }

  async instructions(): Promise<Instructions> {
    const r = await this.request("GET", "/instructions");
    if (r.status !== 200) throw new ApiError(r.status, r.body);
    return r.body as Instructions;
  }

  async createSession(participant: Record<string, unknown>) {
    const r = await this.request("POST", "/sessions", { participant });
    if (r.status !== 200) throw new ApiError(r.status, r.body);
    return r.body as { session_id: string; horizon: number };
  }

  async getSession(sessionId: string): Promise<ServerView> {
    const r = await this.request("GET", `/sessions/${sessionId}`);
    if (r.status !== 200) throw new ApiError(r.status, r.body);
    return r.body as ServerView;
  }

  /** Submit one choice. `replayed` marks a duplicate the server had already
   *  recorded; the result is then the original, not a new trial. */
  async submitChoice(sessionId: string, action: 0 | 1, trial: number) {
    const r = await this.request("POST", `/sessions/${sessionId}/choice`,
                                 { action, trial });
    if (r.status === 200 && isTrialResult(r.body)) {
      return { result: r.body, replayed: false };
    }
    if (r.status === 409 && isTrialResult(r.body)) {
      return { result: r.body, replayed: true };
    }
    throw new ApiError(r.status, r.body);
  }

  async finalize(sessionId: string) {
    const r = await this.request("POST", `/sessions/${sessionId}/finalize`);
    if (r.status !== 200) throw new ApiError(r.status, r.body);
    return r.body as { already: boolean };
  }
}
