/* Client-side session view and the pure transitions on it.
 *
 * The view mirrors server state and nothing else: no task parameters, no
 * outcome preview, nothing the server does not expose. heads maps to 1,
 * tails to 0.
 */

import type { ServerView, TrialResult, TrialRow } from "./api.js";

export type Choice = "heads" | "tails";

export function choiceToAction(choice: Choice): 0 | 1 {
  return choice === "heads" ? 1 : 0;
}

export function actionToChoice(action: number): Choice {
  return action === 1 ? "heads" : "tails";
}

export interface ClientView {
  sessionId: string;
  horizon: number;
  trialIndex: number; // 1-based index of the next trial to play
  history: TrialRow[];
  score: number;
  done: boolean;
  status: string;
}

export function viewFromServer(server: ServerView, horizon: number): ClientView {
  return {
    sessionId: server.session_id,
    horizon,
    trialIndex: server.trial_index,
    history: server.history.slice(),
    score: server.score,
    done: server.done,
    status: server.status,
  };
}

/** Fold one recorded result into the view. Returns null when the result
 *  does not extend the local history, meaning the caller must resync. */
export function applyResult(view: ClientView, r: TrialResult): ClientView | null {
  if (r.trial_index !== view.trialIndex) return null;
  return {
    ...view,
    trialIndex: r.trial_index + 1,
    history: [...view.history, {
      trial_index: r.trial_index,
      action: r.action,
      outcome: r.outcome,
      correct: r.correct,
    }],
    score: r.score,
    done: r.done,
  };
}

/** Short code shown on the end screen; derived from public fields only. */
export function completionCode(view: ClientView): string {
  return `${view.sessionId.slice(0, 8)}-${view.score}`.toUpperCase();
}
