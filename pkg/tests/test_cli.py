"""Command line wiring: each subcommand drives the library end to end."""

import csv
import json
import os

import pytest

from acdesign.ac_loop import LoopConfig
from acdesign.cli import build_parser, main
from acdesign.gru_policy import FitConfig, load_checkpoint
from acdesign.records import read_dataset
from acdesign.regret_search import SearchConfig

TINY_FIT = FitConfig(max_epochs=60, patience=10, batch_size=8)
TINY_SEARCH = SearchConfig(n_scan_points=10, n_rollouts_scan=10,
                           n_refine_candidates=2, n_rollouts_refine=12,
                           refine_iterations=2, n_rollouts_final=30,
                           min_step=0.05, filter_particles=30)


def tiny_config_file(tmp_path):
    config = LoopConfig(horizon=10, seed_sessions=5, sessions_per_env=4,
                        n_ac_iterations=1, n_random_envs=3,
                        n_random_corpora=2, subset_size=2,
                        observed_rollouts=100, root_seed=3,
                        fit=TINY_FIT, search=TINY_SEARCH)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config.to_dict()))
    return str(path)


def run(argv, capsys):
    assert main(argv) == 0
    lines = [json.loads(line)
             for line in capsys.readouterr().out.strip().split("\n") if line]
    return lines


def test_every_subcommand_accepts_common_flags():
    parser = build_parser()
    for command in ("seed-phase", "ac-step", "ac-run", "random-corpora",
                    "report", "regret-search", "analyze"):
        args = parser.parse_args(
            [command, "--config", "c.json", "--seed", "7", "--out", "d"])
        assert args.config == "c.json"
        assert args.seed == 7 and args.out == "d"
    args = parser.parse_args(["fit", "--config", "c.json", "--seed", "1",
                              "--out", "d", "--data", "x.jsonl"])
    assert args.data == ["x.jsonl"]
    args = parser.parse_args(["simulate", "--seed", "1", "--out", "d",
                              "--task", ".1", ".2", ".8", ".3"])
    assert args.task == [0.1, 0.2, 0.8, 0.3]
    args = parser.parse_args(["serve", "--out", "d", "--port", "9001",
                              "--plan", "p.json", "--data-dir", "dd"])
    assert args.port == 9001 and args.plan == "p.json"
    assert args.data_dir == "dd"


def test_missing_state_is_an_error(tmp_path):
    with pytest.raises(SystemExit):
        main(["ac-step", "--out", str(tmp_path / "nowhere")])


@pytest.mark.slow
def test_loop_lifecycle_through_cli(tmp_path, capsys):
    config = tiny_config_file(tmp_path)
    out = str(tmp_path / "run")

    seeded = run(["seed-phase", "--config", config, "--out", out], capsys)
    assert seeded[0]["tag"] == "D1" and seeded[0]["n_sessions"] == 5
    assert os.path.exists(os.path.join(out, "state.json"))

    stepped = run(["ac-step", "--out", out], capsys)
    assert stepped[0]["iteration"] == 1
    assert {"task", "regret"} <= set(stepped[0]["predicted_regret"])

    report = run(["report", "--out", out], capsys)[0]
    assert len(report["rows"]) == 1
    assert report["converged"] is False
    assert os.path.exists(os.path.join(out, "reports", "convergence.json"))

    corpora = run(["random-corpora", "--out", out], capsys)[0]
    assert corpora["n_corpora"] == 2

    analyzed = run(["analyze", "--out", out,
                    "--probe-sequences", "40", "--cluster-length", "6",
                    "--map-background", "50"], capsys)[0]
    tables = analyzed["tables"]
    assert {"regret_trajectory", "deficits", "worst_case_deficits",
            "distillation", "clusters", "env_map"} <= set(tables)
    with open(os.path.join(out, "analysis", "deficits.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["deficit"]) >= 0.0 for r in rows)
    datasets = {r["dataset"] for r in rows}
    for dataset in datasets:
        floor = min(float(r["deficit"]) for r in rows
                    if r["dataset"] == dataset)
        assert floor == 0.0
    with open(os.path.join(out, "analysis", "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["root_seed"] == 3
    assert set(manifest["tables"]) == set(tables)


@pytest.mark.slow
def test_simulate_fit_search_chain(tmp_path, capsys):
    config = tiny_config_file(tmp_path)
    out = str(tmp_path / "artifacts")

    sim = run(["simulate", "--config", config, "--out", out,
               "--task", "0.1", "0.2", "0.8", "0.3",
               "--n-sessions", "8", "--tag", "pilot"], capsys)[0]
    dataset = read_dataset(sim["path"])
    assert len(dataset) == 8
    assert dataset.horizon == 10

    fitted = run(["fit", "--config", config, "--out", out,
                  "--data", sim["path"]], capsys)[0]
    weights, meta = load_checkpoint(fitted["checkpoint"])
    assert weights.hidden_dim == 7
    assert meta["n_sessions"] == 8

    searched = run(["regret-search", "--config", config, "--out", out,
                    "--checkpoint", fitted["checkpoint"]], capsys)[0]
    task = searched["task"]
    assert all(0.0 <= task[k] <= 1.0 for k in ("p1", "p2", "r1", "r2"))
    assert searched["estimate"]["regret"] == pytest.approx(
        searched["estimate"]["j_il"][0] - searched["estimate"]["j_pi"][0])
    assert os.path.exists(searched["report"])
