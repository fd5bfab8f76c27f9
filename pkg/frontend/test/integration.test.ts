/* End-to-end round trip against the real service: a scripted session plays
 * all 50 trials through the production client code, survives one simulated
 * reload and one duplicate submission, and the persisted record must be
 * schema-identical to synthetic output (verified by a companion script
 * through the shared reader/writer).
 */

import { spawn, spawnSync } from "node:child_process";
import type { ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

const HERE = dirname(fileURLToPath(import.meta.url));

import { ApiClient } from "../src/api.js";
import { SessionController } from "../src/controller.js";
import { memoryStorage } from "./mock_server.js";

const PORT = 8731 + (process.pid % 997);
const BASE = `http://127.0.0.1:${PORT}`;
const DATA_DIR = mkdtempSync(join(tmpdir(), "task-ui-int-"));

let server: ChildProcess;

async function waitForHealth(timeoutMs = 60000) {
  const deadline = Date.now() + timeoutMs;
  let lastErr: unknown = null;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/health`);
      if (resp.status === 200) return;
    } catch (err) {
      lastErr = err;
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error(`service never came up: ${lastErr}`);
}

beforeAll(async () => {
  server = spawn("python3", [
    join(HERE, "serve_fixture.py"),
    "--port", String(PORT),
    "--data-dir", DATA_DIR,
  ], { stdio: ["ignore", "pipe", "inherit"] });
  await waitForHealth();
});

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("live service round trip", () => {
  it("plays a full session with reload and duplicate, record verifies", async () => {
    const api = new ApiClient(BASE);
    const storage = memoryStorage();
    let controller = new SessionController(api, storage, 2, 50);

    let view = await controller.start({
      consent: true,
      consent_at: new Date().toISOString(),
      user_agent: "integration-test",
    });
    expect(view.horizon).toBe(50);
    expect(view.trialIndex).toBe(1);

    // first half, alternating guesses
    for (let t = 0; t < 25; t++) {
      view = await controller.choose(t % 2 === 0 ? "heads" : "tails");
    }
    expect(view.trialIndex).toBe(26);

    // duplicate submission of the trial just recorded
    const dup = await api.submitChoice(view.sessionId,
                                       view.history[24]!.action as 0 | 1, 25);
    expect(dup.replayed).toBe(true);
    expect(dup.result.trial_index).toBe(25);
    expect(dup.result.outcome).toBe(view.history[24]!.outcome);

    // reload: fresh controller over the same stored pointer
    controller = new SessionController(api, storage, 2, 50);
    view = await controller.start({ consent: true, resumed: true });
    expect(view.trialIndex).toBe(26);
    expect(view.history).toHaveLength(25);

    while (!view.done) view = await controller.choose("heads");
    expect(view.history).toHaveLength(50);

    const served = await api.getSession(view.sessionId);
    expect(served.done).toBe(true);
    expect(served.score).toBe(view.score);

    await controller.finish();
    await controller.finish(); // idempotent

    const verdict = spawnSync("python3", [
      join(HERE, "verify_record.py"),
      join(DATA_DIR, "live_ui.jsonl"),
    ], { encoding: "utf-8" });
    expect(verdict.stdout + verdict.stderr).toContain("OK");
    expect(verdict.status).toBe(0);
  });

  it("hides environment parameters from every endpoint", async () => {
    const api = new ApiClient(BASE);
    const forbidden = ["p1", "p2", "r1", "r2", "mu", "states", "task", "outcomes"];
    const created = await api.createSession({ consent: true });
    const bodies: unknown[] = [
      created,
      await api.getSession(created.session_id),
      (await api.submitChoice(created.session_id, 1, 1)).result,
      await api.instructions(),
    ];
    const seen = new Set<string>();
    const walk = (doc: unknown) => {
      if (Array.isArray(doc)) { doc.forEach(walk); return; }
      if (doc && typeof doc === "object") {
        for (const [k, v] of Object.entries(doc)) { seen.add(k); walk(v); }
      }
    };
    bodies.forEach(walk);
    for (const key of forbidden) expect(seen.has(key)).toBe(false);
  });
});
