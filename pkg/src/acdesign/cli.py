"""Command line front end: run the loop, fit models, serve participants.

Every subcommand takes --config (a JSON file matching LoopConfig),
--seed (overrides the config's root seed), and --out (the run
directory holding state, datasets, models, and reports).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os

from . import seeds
from .ac_loop import (LoopConfig, SyntheticSource, build_random_corpora,
                      convergence_report, init_loop, load_loop,
                      run_ac_iteration, run_loop, run_seed_phase)
from .analysis import (cluster_sequences, deficit_table, distill_over_grid,
                       env_map, probe_corpus)
from .env_hmm import TaskParams
from .gru_policy import fit, init_weights, load_checkpoint, save_checkpoint
from .records import read_dataset, write_dataset
from .regret_search import maximize_regret
from .synthetic_agents import default_population

__all__ = ["main", "build_parser"]


def _load_config(args) -> LoopConfig:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            config = LoopConfig.from_dict(json.load(fh))
    else:
        config = LoopConfig()
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, root_seed=args.seed)
    return config


def _state_for(args, create=True):
    out = args.out
    if os.path.exists(os.path.join(out, "state.json")):
        return load_loop(out)
    if not create:
        raise SystemExit(f"no run state under {out}")
    return init_loop(_load_config(args), out)


def _source_for(state) -> SyntheticSource:
    return SyntheticSource(default_population(), state.config.horizon)


def _emit(doc):
    print(json.dumps(doc, sort_keys=True))


# -- subcommand bodies -------------------------------------------------------


def cmd_seed_phase(args):
    state = _state_for(args)
    dataset = run_seed_phase(state, _source_for(state))
    _emit({"tag": "D1", "n_sessions": len(dataset),
           "mean_accuracy": dataset.mean_accuracy})


def cmd_ac_step(args):
    state = _state_for(args, create=False)
    record = run_ac_iteration(state, _source_for(state))
    _emit(record.to_dict())


def cmd_ac_run(args):
    state = _state_for(args)
    records = run_loop(state, _source_for(state),
                       n_iterations=args.iterations)
    for record in records:
        _emit(record.to_dict())


def cmd_random_corpora(args):
    state = _state_for(args, create=False)
    corpora = build_random_corpora(state, _source_for(state))
    _emit({"n_corpora": len(corpora),
           "subsets": [c["subset"] for c in corpora]})


def cmd_report(args):
    state = _state_for(args, create=False)
    report = convergence_report(
        state.records,
        gap_threshold=state.config.convergence_gap,
        distance_threshold=state.config.convergence_distance)
    path = os.path.join(args.out, "reports", "convergence.json")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
    _emit(report)


def cmd_fit(args):
    config = _load_config(args)
    sessions = []
    for path in args.data:
        sessions.extend(read_dataset(path).sessions)
    fit_seed = config.fit.seed if args.seed is None else args.seed
    init = init_weights(fit_seed, hidden_dim=config.hidden_dim)
    weights = fit(init, sessions,
                  dataclasses.replace(config.fit, seed=fit_seed))
    os.makedirs(args.out, exist_ok=True)
    path = args.checkpoint or os.path.join(args.out, "model.json")
    save_checkpoint(weights, path,
                    meta={"n_sessions": len(sessions), "seed": fit_seed})
    _emit({"checkpoint": path, "n_sessions": len(sessions)})


def _resolve_weights(args):
    if args.checkpoint:
        weights, _meta = load_checkpoint(args.checkpoint)
        return weights
    state = _state_for(args, create=False)
    return state.current_weights()


def cmd_regret_search(args):
    config = _load_config(args)
    weights = _resolve_weights(args)
    search = config.search
    if args.seed is not None:
        search = dataclasses.replace(search, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "search.json")
    task, estimate = maximize_regret(weights, search,
                                     horizon=config.horizon,
                                     report_path=report_path)
    _emit({"task": task.to_dict(), "estimate": estimate.to_dict(),
           "report": report_path})


def cmd_simulate(args):
    config = _load_config(args)
    task = TaskParams(*args.task)
    source = SyntheticSource(default_population(), config.horizon)
    dataset = source.collect(task, args.n_sessions,
                             seeds.derive(config.root_seed, 400),
                             corpus_tag=args.tag, iteration_index=-1)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{args.tag}.jsonl")
    write_dataset(dataset, path)
    _emit({"path": path, "n_sessions": len(dataset),
           "mean_accuracy": dataset.mean_accuracy})


def cmd_serve(args):
    import uvicorn

    from .session_service import ServiceConfig, load_plan, make_app

    slots = []
    horizon = _load_config(args).horizon
    if args.plan:
        plan = load_plan(args.plan)
        horizon, slots = plan.horizon, plan.slots
    data_dir = args.data_dir or os.path.join(args.out, "live")
    config = ServiceConfig(data_dir=data_dir, horizon=horizon,
                           root_seed=args.seed or 0)
    uvicorn.run(make_app(config, slots), host=args.host, port=args.port)


def _write_csv(path, rows, fieldnames):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def cmd_analyze(args):
    state = _state_for(args, create=False)
    out_dir = os.path.join(args.out, "analysis")
    os.makedirs(out_dir, exist_ok=True)
    which = args.which or ["regret", "deficits", "clusters", "distill",
                           "env-map"]
    manifest = {"root_seed": state.config.root_seed, "tables": {}}

    def table(name, rows, fieldnames):
        path = os.path.join(out_dir, f"{name}.csv")
        _write_csv(path, rows, fieldnames)
        manifest["tables"][name] = path

    if "regret" in which and state.records:
        report = convergence_report(
            state.records,
            gap_threshold=state.config.convergence_gap,
            distance_threshold=state.config.convergence_distance)
        table("regret_trajectory", report["rows"],
              ["iteration", "predicted", "observed", "postdicted", "gap",
               "min_sym_distance"])
        manifest["converged"] = report["converged"]

    if "deficits" in which and state.models:
        models = {m["ref"]: state.model_weights(m["ref"])
                  for m in state.models}
        datasets = {d["tag"]: state.dataset(d["tag"])
                    for d in state.datasets}
        result = deficit_table(models, datasets)
        table("deficits", list(result.rows),
              ["model", "dataset", "nll", "deficit"])
        table("worst_case_deficits",
              [{"model": mid, "worst_deficit": v}
               for mid, v in result.worst_case.items()],
              ["model", "worst_deficit"])

    catalog = [TaskParams.from_dict(d["task"]) for d in state.datasets
               if d.get("task")]
    if ("distill" in which or "clusters" in which) and state.models:
        weights = state.current_weights()
        if "distill" in which and catalog:
            probe = probe_corpus(catalog, args.probe_sequences,
                                 state.config.horizon, args.probe_seed)
            rows = []
            for n in (1, 2, 3):
                config, _coef, r2 = distill_over_grid(
                    weights, n, probe, args.distill_seed)
                rows.append({"n": n, "recency": config.recency,
                             "held_out_r2": r2})
            table("distillation", rows, ["n", "recency", "held_out_r2"])
        if "clusters" in which:
            report = cluster_sequences(weights, length=args.cluster_length)
            rows = [{"cluster": i, "size": report["sizes"][i],
                     "ones": report["ones"][i], "alts": report["alts"][i]}
                    for i in range(len(report["sizes"]))]
            table("clusters", rows, ["cluster", "size", "ones", "alts"])

    if "env-map" in which and catalog:
        model = state.current_weights() if state.models else None
        rows = []
        for row in env_map(catalog, model=model,
                           n_background=args.map_background,
                           seed=state.config.root_seed):
            flat = {"kind": row["kind"], "mixing_time": row["mixing_time"],
                    "ambiguity": row["ambiguity"],
                    "regret": row.get("regret", "")}
            flat.update(row["task"] if isinstance(row["task"], dict) else {})
            flat.pop("mu", None)
            rows.append(flat)
        table("env_map", rows,
              ["kind", "p1", "p2", "r1", "r2", "mixing_time", "ambiguity",
               "regret"])

    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    _emit({"manifest": manifest_path, "tables": sorted(manifest["tables"])})


# -- parser ------------------------------------------------------------------


def _common(sub):
    sub.add_argument("--config", help="JSON experiment config")
    sub.add_argument("--seed", type=int, help="override the root seed")
    sub.add_argument("--out", default="runs/loop",
                     help="run directory (state, datasets, models)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acdesign",
        description="adversarial experiment design for sequence prediction")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("seed-phase",
                              help="collect the shared seed dataset")
    _common(sub)
    sub.set_defaults(func=cmd_seed_phase)

    sub = commands.add_parser("ac-step", help="one adversarial iteration")
    _common(sub)
    sub.set_defaults(func=cmd_ac_step)

    sub = commands.add_parser("ac-run", help="seed phase plus iterations")
    _common(sub)
    sub.add_argument("-n", "--iterations", type=int, default=None,
                     help="additional iterations (default: config budget)")
    sub.set_defaults(func=cmd_ac_run)

    sub = commands.add_parser("random-corpora",
                              help="uniform-environment baseline corpora")
    _common(sub)
    sub.set_defaults(func=cmd_random_corpora)

    sub = commands.add_parser("report", help="regret table and convergence")
    _common(sub)
    sub.set_defaults(func=cmd_report)

    sub = commands.add_parser("fit", help="fit a policy to dataset files")
    _common(sub)
    sub.add_argument("--data", nargs="+", required=True,
                     help="dataset files, concatenated in order")
    sub.add_argument("--checkpoint", help="output checkpoint path")
    sub.set_defaults(func=cmd_fit)

    sub = commands.add_parser("regret-search",
                              help="search the task cube for maximal regret")
    _common(sub)
    sub.add_argument("--checkpoint",
                     help="policy checkpoint (default: run's current model)")
    sub.set_defaults(func=cmd_regret_search)

    sub = commands.add_parser("simulate",
                              help="sample synthetic sessions on one task")
    _common(sub)
    sub.add_argument("--task", nargs=4, type=float, required=True,
                     metavar=("P1", "P2", "R1", "R2"))
    sub.add_argument("--n-sessions", type=int, default=30)
    sub.add_argument("--tag", default="sim")
    sub.set_defaults(func=cmd_simulate)

    sub = commands.add_parser("serve", help="run the live session service")
    _common(sub)
    sub.add_argument("--port", type=int, default=8000)
    sub.add_argument("--host", default="127.0.0.1")
    sub.add_argument("--plan", help="pending-environment plan file")
    sub.add_argument("--data-dir", help="where finalized sessions land")
    sub.set_defaults(func=cmd_serve)

    sub = commands.add_parser("analyze", help="emit plot-ready tables")
    _common(sub)
    sub.add_argument("--which", nargs="+",
                     choices=["regret", "deficits", "clusters", "distill",
                              "env-map"],
                     help="analyses to run (default: all)")
    sub.add_argument("--probe-sequences", type=int, default=500)
    sub.add_argument("--probe-seed", type=int, default=77)
    sub.add_argument("--distill-seed", type=int, default=5)
    sub.add_argument("--cluster-length", type=int, default=15)
    sub.add_argument("--map-background", type=int, default=2000)
    sub.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
