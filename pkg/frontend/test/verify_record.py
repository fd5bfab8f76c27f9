"""Check a live-session dataset against the canonical record schema.

Three checks, strictest first:
  1. the file parses through the shared reader (types validate themselves),
  2. rewriting the parsed dataset through the shared writer reproduces the
     file byte for byte,
  3. the fixed skeleton (header, session, task, trial keys) matches a
     freshly simulated synthetic session; response_time_ms is the one
     optional trial key, and agent.meta is free-form by design.

Exits nonzero with a message on the first violation.
"""

import json
import sys
import tempfile
from pathlib import Path

from acdesign.records import read_dataset, write_dataset
from acdesign.synthetic_agents import default_population, simulate_sessions


def fail(msg):
    print(f"FAIL: {msg}")
    sys.exit(1)


def skeleton(doc):
    """Key structure of a session document, trial rt treated as optional."""
    trials = doc["trials"]
    trial_keys = {k for tr in trials for k in tr} - {"response_time_ms"}
    return {
        "session": tuple(sorted(doc)),
        "agent": tuple(sorted(k for k in doc["agent"] if k != "meta")),
        "task": tuple(sorted(doc["task"])),
        "trials": tuple(sorted(trial_keys)),
    }


def main():
    live_path = Path(sys.argv[1])
    raw = live_path.read_bytes()

    dataset = read_dataset(live_path)  # check 1
    if len(dataset) != 1:
        fail(f"expected exactly one persisted session, found {len(dataset)}")

    with tempfile.TemporaryDirectory() as tmp:
        rewritten = Path(tmp) / "rewrite.jsonl"
        write_dataset(dataset, rewritten)  # check 2
        if rewritten.read_bytes() != raw:
            fail("live file differs from the canonical serialization")

    session = dataset.sessions[0]
    if session.horizon != 50:
        fail(f"horizon {session.horizon} != 50")
    if session.corpus_tag != "live_ui" or session.iteration_index != 1:
        fail("corpus tag or iteration index not carried through")
    if session.agent.get("source") != "human":
        fail("agent source is not human")
    participant = session.agent.get("meta", {}).get("participant", {})
    if participant.get("consent") is not True:
        fail("consent missing from participant meta")
    if session.agent.get("meta", {}).get("truncated") is not False:
        fail("completed session marked truncated")
    rts = [tr.response_time_ms for tr in session.trials]
    if any(rt is None or rt < 0 for rt in rts):
        fail("response times missing from live trials")

    probe = simulate_sessions(default_population(), session.task, 1,
                              session.horizon, seed=123,
                              corpus_tag="schema_probe")  # check 3
    live_doc = json.loads(raw.splitlines()[1])
    synth_doc = probe.sessions[0].to_dict()
    if skeleton(live_doc) != skeleton(synth_doc):
        fail(f"schema skeleton mismatch:\n  live  {skeleton(live_doc)}\n"
             f"  synth {skeleton(synth_doc)}")

    header = json.loads(raw.splitlines()[0])
    if sorted(header) != ["meta", "n_sessions", "provenance"]:
        fail(f"header keys {sorted(header)}")

    print("OK: live record is schema-identical to synthetic output")


if __name__ == "__main__":
    main()
