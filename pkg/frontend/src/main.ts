/* DOM wiring for the coin game: instructions and consent, the trial loop,
 * and the end screen. All game state lives in SessionController; this file
 * only renders it and forwards input.
 */

import { ApiClient } from "./api.js";
import { SessionController, StudyFullError, browserStorage } from "./controller.js";
import { completionCode } from "./state.js";
import type { Choice } from "./state.js";

function baseUrl(): string {
  const fromQuery = new URLSearchParams(location.search).get("api");
  if (fromQuery) return fromQuery;
  const injected = (globalThis as Record<string, unknown>)["ACDESIGN_BASE_URL"];
  return typeof injected === "string" ? injected : "";
}

const $ = (id: string) => document.getElementById(id)!;

function show(screen: string) {
  for (const el of document.querySelectorAll(".screen")) {
    el.classList.toggle("active", el.id === `screen-${screen}`);
  }
}

const api = new ApiClient(baseUrl());
const controller = new SessionController(api, browserStorage());

const headsBtn = $("btn-heads") as HTMLButtonElement;
const tailsBtn = $("btn-tails") as HTMLButtonElement;

let trialShownAt = 0; // performance.now() when input became available
const responseTimes: number[] = [];

function setInputsEnabled(on: boolean) {
  headsBtn.disabled = !on;
  tailsBtn.disabled = !on;
  if (on) trialShownAt = performance.now();
}

function renderTrials() {
  const view = controller.view!;
  $("trial-counter").textContent = `Trial ${Math.min(view.trialIndex, view.horizon)} of ${view.horizon}`;
  $("score").textContent = `Score: ${view.score}`;
  const last = view.history[view.history.length - 1];
  if (last) {
    $("coin").textContent = last.outcome === 1 ? "🪙 Heads" : "🪙 Tails";
    const fb = $("feedback");
    fb.textContent = last.correct === 1 ? "Correct!" : "Wrong";
    fb.className = last.correct === 1 ? "good" : "bad";
  } else {
    $("coin").textContent = "🪙";
    $("feedback").textContent = "";
  }
}

function renderEnd() {
  const view = controller.view!;
  $("final-score").textContent = `${view.score} / ${view.horizon}`;
  const mean = responseTimes.length
    ? `${Math.round(responseTimes.reduce((a, b) => a + b) / responseTimes.length)} ms`
    : "n/a";
  $("mean-rt").textContent = mean;
  $("code").textContent = completionCode(view);
  show("end");
}

async function play(choice: Choice) {
  if (controller.busy || !controller.view || controller.view.done) return;
  responseTimes.push(performance.now() - trialShownAt);
  setInputsEnabled(false);
  $("trial-error").textContent = "";
  try {
    const view = await controller.choose(choice);
    renderTrials();
    if (view.done) {
      await controller.finish();
      controller.reset();
      renderEnd();
    } else {
      setInputsEnabled(true);
    }
  } catch (err) {
    $("trial-error").textContent = "Connection trouble. Please try again.";
    setInputsEnabled(true);
  }
}

async function begin(participant: Record<string, unknown>) {
  try {
    const view = await controller.start(participant);
    if (view.done) {
      await controller.finish();
      controller.reset();
      renderEnd();
      return;
    }
    show("trials");
    renderTrials();
    setInputsEnabled(true);
  } catch (err) {
    if (err instanceof StudyFullError) {
      show("full");
      return;
    }
    $("start-error").textContent = "Could not start a session. Please retry.";
    show("instructions");
  }
}

async function boot() {
  headsBtn.addEventListener("click", () => void play("heads"));
  tailsBtn.addEventListener("click", () => void play("tails"));
  document.addEventListener("keydown", (ev) => {
    if (ev.repeat) return;
    const key = ev.key.toLowerCase();
    if (key === "h" || ev.key === "ArrowLeft") void play("heads");
    if (key === "t" || ev.key === "ArrowRight") void play("tails");
  });

  const consent = $("consent") as HTMLInputElement;
  const start = $("start") as HTMLButtonElement;
  consent.addEventListener("change", () => { start.disabled = !consent.checked; });
  start.addEventListener("click", () => {
    void begin({
      consent: true,
      consent_at: new Date().toISOString(),
      user_agent: navigator.userAgent,
    });
  });

  // A stored session resumes without re-consent; consent was given when it
  // was created.
  const stored = browserStorage().load();
  if (stored) {
    void begin({ consent: true, consent_at: new Date().toISOString(), resumed: true });
    return;
  }

  try {
    const doc = await api.instructions();
    $("instructions-text").textContent = doc.text;
  } catch {
    $("instructions-text").textContent =
      "Predict whether the next coin flip comes up heads or tails. " +
      "Each correct prediction earns a point.";
  }
  show("instructions");
}

void boot();
