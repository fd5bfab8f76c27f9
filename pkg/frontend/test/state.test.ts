import { describe, expect, it } from "vitest";

import type { ServerView } from "../src/api.js";
import {
  actionToChoice, applyResult, choiceToAction, completionCode, viewFromServer,
} from "../src/state.js";

const serverView: ServerView = {
  session_id: "abc123def456",
  trial_index: 3,
  history: [
    { trial_index: 1, action: 1, outcome: 1, correct: 1 },
    { trial_index: 2, action: 0, outcome: 1, correct: 0 },
  ],
  score: 1,
  done: false,
  status: "active",
};

describe("choice mapping", () => {
  it("maps heads to 1 and tails to 0, both ways", () => {
    expect(choiceToAction("heads")).toBe(1);
    expect(choiceToAction("tails")).toBe(0);
    expect(actionToChoice(1)).toBe("heads");
    expect(actionToChoice(0)).toBe("tails");
  });
});

describe("viewFromServer", () => {
  it("mirrors the server payload", () => {
    const view = viewFromServer(serverView, 50);
    expect(view.sessionId).toBe("abc123def456");
    expect(view.trialIndex).toBe(3);
    expect(view.history).toHaveLength(2);
    expect(view.score).toBe(1);
    expect(view.done).toBe(false);
    expect(view.horizon).toBe(50);
  });

  it("copies history rather than aliasing it", () => {
    const view = viewFromServer(serverView, 50);
    view.history.push({ trial_index: 99, action: 0, outcome: 0, correct: 1 });
    expect(serverView.history).toHaveLength(2);
  });
});

describe("applyResult", () => {
  it("appends the next trial and advances the cursor", () => {
    const view = viewFromServer(serverView, 50);
    const next = applyResult(view, {
      trial_index: 3, action: 1, outcome: 0, correct: 0, done: false, score: 1,
    });
    expect(next).not.toBeNull();
    expect(next!.trialIndex).toBe(4);
    expect(next!.history).toHaveLength(3);
    expect(next!.score).toBe(1);
    expect(view.history).toHaveLength(2); // input untouched
  });

  it("returns null on a stale result so the caller resyncs", () => {
    const view = viewFromServer(serverView, 50);
    const stale = applyResult(view, {
      trial_index: 2, action: 0, outcome: 1, correct: 0, done: false, score: 1,
    });
    expect(stale).toBeNull();
  });

  it("marks completion at the horizon", () => {
    const view = viewFromServer({ ...serverView, trial_index: 50 }, 50);
    const next = applyResult(view, {
      trial_index: 50, action: 1, outcome: 1, correct: 1, done: true, score: 30,
    });
    expect(next!.done).toBe(true);
    expect(next!.score).toBe(30);
  });
});

describe("completionCode", () => {
  it("is stable and built from public fields only", () => {
    const view = viewFromServer(serverView, 50);
    expect(completionCode(view)).toBe("ABC123DE-1");
    expect(completionCode(view)).toBe(completionCode(view));
  });
});
