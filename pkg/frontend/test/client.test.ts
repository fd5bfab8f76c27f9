/* Scripted sessions against the in-memory server: the full 50-trial loop,
 * a mid-session reload, duplicate submissions, and lost-packet retries.
 */

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionController, StudyFullError } from "../src/controller.js";
import { MockServer, memoryStorage } from "./mock_server.js";

function rig(server: MockServer) {
  const api = new ApiClient("", server.fetch);
  const storage = memoryStorage();
  return {
    api,
    storage,
    controller: new SessionController(api, storage, 2, 1),
  };
}

describe("full session", () => {
  it("plays 50 trials with exactly one upstream request per choice", async () => {
    const server = new MockServer(50);
    const { controller } = rig(server);
    let view = await controller.start({ consent: true });
    expect(view.trialIndex).toBe(1);

    while (!view.done) {
      view = await controller.choose(view.trialIndex % 2 === 0 ? "heads" : "tails");
    }
    expect(view.history).toHaveLength(50);
    expect(view.trialIndex).toBe(51);
    expect(server.choiceCount).toBe(50);

    const recorded = server.sessions.get(view.sessionId)!;
    expect(view.score).toBe(recorded.trials.reduce((a, t) => a + t.correct, 0));

    await controller.finish();
    expect(recorded.status).toBe("finalized");
    await controller.finish(); // idempotent
    expect(recorded.status).toBe("finalized");
  });

  it("scores exactly the matching choices", async () => {
    const server = new MockServer(10);
    const { controller } = rig(server);
    let view = await controller.start({});
    const outcomes = server.sessions.get(view.sessionId)!.outcomes;
    // match on even trials, miss on odd ones
    for (let t = 1; t <= 10; t++) {
      const match = t % 2 === 0;
      const target = outcomes[t - 1]!;
      const action = match ? target : 1 - target;
      view = await controller.choose(action === 1 ? "heads" : "tails");
    }
    expect(view.score).toBe(5);
    expect(view.done).toBe(true);
  });
});

describe("reload mid-session", () => {
  it("restores the view from the server and finishes the run", async () => {
    const server = new MockServer(50);
    const { controller, storage, api } = rig(server);
    let view = await controller.start({});
    for (let t = 0; t < 20; t++) view = await controller.choose("heads");
    expect(view.trialIndex).toBe(21);

    // new controller, same storage: what a page reload constructs
    const reloaded = new SessionController(api, storage, 2, 1);
    let restored = await reloaded.start({});
    expect(restored.sessionId).toBe(view.sessionId);
    expect(restored.trialIndex).toBe(21);
    expect(restored.history).toHaveLength(20);
    expect(restored.score).toBe(view.score);

    while (!restored.done) restored = await reloaded.choose("tails");
    expect(server.sessions.get(view.sessionId)!.trials).toHaveLength(50);
  });

  it("starts over when the stored session has expired", async () => {
    const server = new MockServer(5, 2);
    const { controller, storage, api } = rig(server);
    const view = await controller.start({});
    server.sessions.get(view.sessionId)!.status = "expired";

    const reloaded = new SessionController(api, storage, 2, 1);
    const fresh = await reloaded.start({});
    expect(fresh.sessionId).not.toBe(view.sessionId);
    expect(fresh.trialIndex).toBe(1);
  });
});

describe("duplicate submission", () => {
  it("replays the original result and records the choice once", async () => {
    const server = new MockServer(10);
    const { controller, api } = rig(server);
    let view = await controller.start({});
    view = await controller.choose("heads");
    const first = server.sessions.get(view.sessionId)!.trials[0]!;

    const dup = await api.submitChoice(view.sessionId, 0, 1); // double-click, other button
    expect(dup.replayed).toBe(true);
    expect(dup.result).toEqual(first);
    expect(server.sessions.get(view.sessionId)!.trials).toHaveLength(1);
  });
});

describe("network failure", () => {
  it("retries a dropped request with the same trial index", async () => {
    const server = new MockServer(10);
    const { controller } = rig(server);
    let view = await controller.start({});
    server.failNext(1, "before");
    view = await controller.choose("heads");
    expect(view.trialIndex).toBe(2);
    expect(server.sessions.get(view.sessionId)!.trials).toHaveLength(1);
  });

  it("reconciles a dropped response through the duplicate replay", async () => {
    const server = new MockServer(10);
    const { controller } = rig(server);
    let view = await controller.start({});
    server.failNext(1, "after"); // server records trial 1, response lost
    view = await controller.choose("heads");
    const trials = server.sessions.get(view.sessionId)!.trials;
    expect(trials).toHaveLength(1);
    expect(view.trialIndex).toBe(2);
    expect(trials[0]).toMatchObject(view.history[0]!);
    expect(view.score).toBe(trials[0]!.correct);
  });

  it("gives up after exhausting retries and leaves the view unchanged", async () => {
    const server = new MockServer(10);
    const { controller } = rig(server);
    const view = await controller.start({});
    server.failNext(10, "before");
    await expect(controller.choose("heads")).rejects.toThrow("network failure");
    expect(controller.view!.trialIndex).toBe(view.trialIndex);
    expect(controller.busy).toBe(false); // recovered; a later choice works
  });
});

describe("capacity and concurrency", () => {
  it("maps create 409 to StudyFullError", async () => {
    const server = new MockServer(5, 0);
    const { controller } = rig(server);
    await expect(controller.start({})).rejects.toThrow(StudyFullError);
  });

  it("rejects a second choice while one is in flight", async () => {
    const server = new MockServer(10);
    const { controller } = rig(server);
    await controller.start({});
    const first = controller.choose("heads");
    await expect(controller.choose("tails")).rejects.toThrow("in flight");
    await first;
    expect(server.sessions.values().next().value!.trials).toHaveLength(1);
  });
});
