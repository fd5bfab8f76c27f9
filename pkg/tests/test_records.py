"""Record types: validation, fingerprints, and JSONL round trips."""

import numpy as np
import pytest

from acdesign.env_hmm import TaskParams
from acdesign.records import (
    AcIterationRecord,
    Dataset,
    SessionRecord,
    Trial,
    dataset_fingerprint,
    make_session,
    read_dataset,
    session_fingerprint,
    write_dataset,
)

TASK = TaskParams(0.1, 0.2, 0.9, 0.3)
AGENT = {"source": "synthetic", "kind": "test", "params_hash": "x", "meta": {}}


def toy_session(sid="s1", n=5, seed=3, tag="D1", it=0):
    rng = np.random.default_rng(seed)
    actions = rng.integers(0, 2, n)
    outcomes = rng.integers(0, 2, n)
    return make_session(sid, AGENT, TASK, actions, outcomes,
                        seed=seed, corpus_tag=tag, iteration_index=it)


class TestTrial:
    def test_rejects_nonbinary(self):
        with pytest.raises(ValueError):
            Trial(t=1, action=2, outcome=0, correct=0)
        with pytest.raises(ValueError):
            Trial(t=1, action=0, outcome=-1, correct=0)

    def test_rejects_wrong_correct_flag(self):
        with pytest.raises(ValueError):
            Trial(t=1, action=1, outcome=1, correct=0)

    def test_round_trip_keeps_optional_rt(self):
        tr = Trial(t=2, action=0, outcome=0, correct=1,
                   response_time_ms=431.5)
        assert Trial.from_dict(tr.to_dict()) == tr
        bare = Trial(t=1, action=1, outcome=0, correct=0)
        assert "response_time_ms" not in bare.to_dict()
        assert Trial.from_dict(bare.to_dict()) == bare


class TestSessionRecord:
    def test_requires_contiguous_indexing(self):
        trials = (Trial(t=1, action=0, outcome=0, correct=1),
                  Trial(t=3, action=0, outcome=0, correct=1))
        with pytest.raises(ValueError):
            SessionRecord("s", AGENT, TASK, trials, 0, "D1", 0)

    def test_requires_at_least_one_trial(self):
        with pytest.raises(ValueError):
            SessionRecord("s", AGENT, TASK, (), 0, "D1", 0)

    def test_make_session_computes_correct_flags(self):
        s = make_session("s", AGENT, TASK, [1, 0, 1], [1, 1, 0],
                         seed=0, corpus_tag="D1", iteration_index=0)
        assert [tr.correct for tr in s.trials] == [1, 0, 0]
        assert s.accuracy == pytest.approx(1 / 3)

    def test_make_session_rejects_misaligned_arrays(self):
        with pytest.raises(ValueError):
            make_session("s", AGENT, TASK, [1, 0], [1], seed=0,
                         corpus_tag="D1", iteration_index=0)

    def test_round_trip(self):
        s = toy_session()
        assert SessionRecord.from_dict(s.to_dict()) == s

    def test_array_views(self):
        s = toy_session(n=8, seed=5)
        assert s.horizon == 8
        assert np.array_equal(s.actions,
                              [tr.action for tr in s.trials])
        assert np.array_equal(s.outcomes,
                              [tr.outcome for tr in s.trials])


class TestDataset:
    def test_rejects_mixed_horizons(self):
        with pytest.raises(ValueError):
            Dataset(sessions=(toy_session(n=5), toy_session("s2", n=6)),
                    provenance="D1")

    def test_merged_with_concatenates_in_order(self):
        a = Dataset((toy_session("a1"), toy_session("a2")), "A")
        b = Dataset((toy_session("b1"),), "B")
        m = a.merged_with(b, provenance="AB")
        assert [s.session_id for s in m.sessions] == ["a1", "a2", "b1"]
        assert m.provenance == "AB"

    def test_fingerprint_is_order_sensitive(self):
        s1, s2 = toy_session("a"), toy_session("b", seed=4)
        d1 = Dataset((s1, s2), "D")
        d2 = Dataset((s2, s1), "D")
        assert dataset_fingerprint(d1) != dataset_fingerprint(d2)

    def test_fingerprint_covers_provenance(self):
        s = toy_session()
        assert (dataset_fingerprint(Dataset((s,), "X"))
                != dataset_fingerprint(Dataset((s,), "Y")))

    def test_session_fingerprint_stable(self):
        s = toy_session()
        assert session_fingerprint(s) == session_fingerprint(toy_session())


class TestPersistence:
    def test_jsonl_round_trip(self, tmp_path):
        ds = Dataset(tuple(toy_session(f"s{i}", seed=i) for i in range(4)),
                     "D1", meta={"note": "toy"})
        path = tmp_path / "d1.jsonl"
        write_dataset(ds, path)
        back = read_dataset(path)
        assert dataset_fingerprint(back) == dataset_fingerprint(ds)
        assert back.meta == {"note": "toy"}

    def test_truncated_file_detected(self, tmp_path):
        ds = Dataset(tuple(toy_session(f"s{i}", seed=i) for i in range(4)),
                     "D1")
        path = tmp_path / "d1.jsonl"
        write_dataset(ds, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ValueError):
            read_dataset(path)


class TestAcIterationRecord:
    def test_round_trip(self):
        rec = AcIterationRecord(
            iteration=2, selected_task=TASK,
            predicted_regret={"regret": 0.3, "se": 0.01},
            observed_regret=0.25,
            postdicted_regret={"regret": 0.1, "se": 0.01},
            min_sym_distance=0.7,
            model_checkpoint_ref="models/ac_prefix_3.json",
            dataset_ref="datasets/AC2.jsonl")
        assert AcIterationRecord.from_dict(rec.to_dict()) == rec

    def test_rejects_negative_distance(self):
        with pytest.raises(ValueError):
            AcIterationRecord(
                iteration=1, selected_task=TASK,
                predicted_regret={}, observed_regret=0.0,
                postdicted_regret={}, min_sym_distance=-0.1,
                model_checkpoint_ref="m", dataset_ref="d")
