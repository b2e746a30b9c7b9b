"""Command-line front end: solve / baseline / train / infer / special / sweep.

All commands read an optional JSON config (``--config``), seed their own
randomness from ``--seed``, and emit versioned CSV (to ``--out`` or stdout).
See docs/config.md for the config schemas. Typical session:

    edgecache baseline --seed 7 --policies no_caching,greedy_caching --out rows.csv
    edgecache sweep --config sweep.json --seed 0 --parallelism 4 --out sweep.csv
    edgecache train --config train.json --seed 1 --out runs/exp1/
    edgecache infer --checkpoint runs/exp1/policy_stochastic.json --seed 9 --out infer.csv
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from edgecache.energy import expected_energy
from edgecache.harness import (
    POLICIES,
    SweepSpec,
    derive_seed,
    policy_row,
    run_sweep,
    run_training_experiment,
    sweep_rows_to_csv,
    write_sweep_csv,
)
from edgecache.learn.trainer import TrainConfig, TrainedPolicy, infer
from edgecache.scenario import ScenarioConfig, sample_scenario
from edgecache.solver import solve_allocation

SOLVE_SCHEMA = "edgecache-solve-v1"

__all__ = ["main"]


def _load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _scenario_config(args) -> ScenarioConfig:
    """Scenario block of --config (or the whole file, or defaults)."""
    if args.config is None:
        return ScenarioConfig()
    blob = _load_json(args.config)
    if "scenario" in blob:
        blob = blob["scenario"]
    return ScenarioConfig.from_dict(blob)


def _parse_policies(text: str) -> tuple:
    names = tuple(p.strip() for p in text.split(",") if p.strip())
    unknown = [p for p in names if p not in POLICIES]
    if unknown:
        raise SystemExit(f"unknown policies {unknown}; choose from {sorted(POLICIES)}")
    return names


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    print(f"wrote {out}")


def _replication_rows(args, policies, scenario_config, tag: str) -> str:
    """Shared body of `baseline` / `special` / `infer`: rows over replications."""
    rows = []
    for rep in range(args.reps):
        seed = derive_seed(args.seed, f"{tag}/{rep}")
        scenario = sample_scenario(scenario_config, seed)
        for name, fn in policies.items():
            rows.append(policy_row("replication", rep, name, seed, scenario, fn))
    return sweep_rows_to_csv(rows, timing=args.timing)


def _cmd_solve(args) -> int:
    config = _scenario_config(args)
    scenario = sample_scenario(config, args.seed)
    if args.cached is None:
        cached = np.zeros(scenario.num_services, dtype=bool)
    else:
        bits = [b.strip() for b in args.cached.split(",")]
        if len(bits) != scenario.num_services:
            raise SystemExit(f"--cached needs {scenario.num_services} comma-separated 0/1 flags")
        cached = np.array([b == "1" for b in bits])
    res = solve_allocation(scenario, cached, method=args.method)
    if res.status == "infeasible":
        row = [res.status, "", "", "", "", "", ""]
    else:
        e = expected_energy(scenario, cached, res.allocation)
        row = [
            res.status,
            repr(e.objective / 1e3),
            repr(e.server_compute / 1e3),
            repr(e.server_download / 1e3),
            repr(float(np.sum(e.offload_per_location)) / 1e3),
            repr(res.gap),
            str(res.diagnostics.get("newton_steps", "")),
        ]
    header = "status,objective_kj,compute_kj,download_kj,offload_kj,gap,newton_steps"
    _emit(f"# {SOLVE_SCHEMA}\n{header}\n" + ",".join(row) + "\n", args.out)
    return 0 if res.status == "optimal" else 1


def _cmd_baseline(args) -> int:
    names = _parse_policies(args.policies)
    policies = {n: POLICIES[n] for n in names}
    _emit(_replication_rows(args, policies, _scenario_config(args), "baseline"), args.out)
    return 0


def _cmd_special(args) -> int:
    config = _scenario_config(args)
    if not config.one_hot_preferences:
        raise SystemExit("special needs a config with one_hot_preferences=true")
    _emit(_replication_rows(args, {"special": POLICIES["special"]}, config, "special"), args.out)
    return 0


def _cmd_infer(args) -> int:
    policy = TrainedPolicy.load(args.checkpoint)
    rng = np.random.default_rng(derive_seed(args.seed, "infer/rng"))
    name = f"dl_{policy.quantizer_kind}"
    fn = lambda scenario: infer(policy, scenario, rng=rng)  # noqa: E731
    _emit(_replication_rows(args, {name: fn}, _scenario_config(args), "infer"), args.out)
    return 0


def _cmd_train(args) -> int:
    blob = _load_json(args.config) if args.config else {}
    stray = set(blob) - {"train", "scenario"}
    if stray:
        # a typo here would otherwise silently train on the defaults
        raise SystemExit(f"unknown train config blocks {sorted(stray)}; expected 'train' and/or 'scenario'")
    train_config = TrainConfig.from_dict(blob.get("train", {}))
    scenario_config = ScenarioConfig.from_dict(blob.get("scenario", {}))
    exp = run_training_experiment(
        train_config,
        scenario_config,
        args.seed,
        out_dir=args.out,
        compare_scenarios=args.compare_scenarios,
    )
    for kind, rows in exp.loss_rows.items():
        last_it, train_loss, test_loss = rows[-1]
        print(f"{kind}: iteration {last_it} train_loss={train_loss:.5f} test_loss={test_loss:.5f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    blob = _load_json(args.config) if args.config else {}
    blob.setdefault("parameter", "cache_capacity")
    blob.setdefault("grid", [32.0, 64.0, 128.0, 192.0, 256.0])
    spec = SweepSpec.from_dict(blob)
    if args.seed is not None:
        spec.master_seed = args.seed
    if args.policies is not None:
        spec.policies = _parse_policies(args.policies)
    rows = run_sweep(spec, parallelism=args.parallelism)
    if args.out is None:
        sys.stdout.write(sweep_rows_to_csv(rows, timing=args.timing))
    else:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(rows, args.out, timing=args.timing)
        print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _add_common(p, seed_default=0):
    p.add_argument("--config", help="JSON config file (see docs/config.md)")
    p.add_argument("--seed", type=int, default=seed_default, help="master seed")
    p.add_argument("--out", help="output path (stdout when omitted)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="edgecache",
        description="Service caching + resource allocation experiments for a multi-location edge server.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the continuous allocation for a fixed caching vector")
    _add_common(p)
    p.add_argument("--cached", help="comma-separated 0/1 per service (default: all zeros)")
    p.add_argument("--method", default="auto", choices=["auto", "barrier", "ellipsoid"])
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("baseline", help="run reference caching policies on sampled scenarios")
    _add_common(p)
    p.add_argument("--policies", default="no_caching,popular_caching,greedy_caching,all_caching,optimal_caching")
    p.add_argument("--reps", type=int, default=1, help="number of sampled scenarios")
    p.add_argument("--timing", action="store_true", help="include wall-time column (non-reproducible bytes)")
    p.set_defaults(fn=_cmd_baseline)

    p = sub.add_parser("train", help="train both quantizer variants and benchmark them")
    p.add_argument("--config", help="JSON config file (see docs/config.md)")
    p.add_argument("--seed", type=int, default=1, help="master seed")
    p.add_argument("--out", required=True, help="output directory for loss CSVs, checkpoints, comparison")
    p.add_argument("--compare-scenarios", type=int, default=20)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="run a trained policy checkpoint on sampled scenarios")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="policy JSON written by `train`")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("special", help="closed-form pipeline for one-service-per-location scenarios")
    _add_common(p)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(fn=_cmd_special)

    p = sub.add_parser("sweep", help="grid-sweep one system parameter over scenario ensembles")
    _add_common(p, seed_default=None)
    p.add_argument("--policies", help="comma-separated policy names (default: spec/config)")
    p.add_argument("--parallelism", type=int, default=1, help="worker processes")
    p.add_argument("--timing", action="store_true")
    p.set_defaults(fn=_cmd_sweep)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
