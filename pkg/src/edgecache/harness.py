"""Seeded experiment driver: policy ensembles, parameter sweeps, training runs.

Everything here is deterministic under a single master seed. Sub-streams are
derived by hashing a human-readable path ("sweep/deadline/2/rep/7") together
with the master seed, so any grid point / replication can be reproduced in
isolation and adding workers never changes the numbers.

CSV artifacts are versioned: the first line is a ``# <schema>`` comment
(``edgecache-sweep-v1``, ``edgecache-loss-v1``, ``edgecache-compare-v1``)
followed by a normal header row. Energies are exported in kJ. Sweep rows for
infeasible scenarios are retained with the numeric fields blank and the
``error`` column populated; aggregation averages over the successful rows
only. Per-row wall time is measured and kept on the in-memory rows but left
out of the CSV by default so that identical seeds produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from edgecache.baselines import (
    InfeasibleScenarioError,
    PolicyResult,
    all_caching,
    greedy_caching,
    no_caching,
    optimal_caching,
    popular_caching,
)
from edgecache.learn.trainer import TrainConfig, TrainedPolicy, infer, train
from edgecache.scenario import Scenario, ScenarioConfig, sample_scenario
from edgecache.special import BracketFailureError, SpecialScenario, UnboundedSignalError, solve_special

__all__ = [
    "SWEEP_SCHEMA",
    "LOSS_SCHEMA",
    "COMPARE_SCHEMA",
    "SWEEP_PARAMETERS",
    "POLICIES",
    "SweepSpec",
    "ResultRow",
    "derive_seed",
    "run_policy",
    "policy_row",
    "run_sweep",
    "aggregate_sweep",
    "sweep_rows_to_csv",
    "write_sweep_csv",
    "read_csv",
    "write_loss_csv",
    "write_compare_csv",
    "sample_feasible",
    "evaluate_policies",
    "compare_means",
    "run_training_experiment",
    "TrainingExperiment",
]

SWEEP_SCHEMA = "edgecache-sweep-v1"
LOSS_SCHEMA = "edgecache-loss-v1"
COMPARE_SCHEMA = "edgecache-compare-v1"

SWEEP_COLUMNS = (
    "param",
    "value",
    "policy",
    "seed",
    "energy_kj",
    "compute_kj",
    "download_kj",
    "offload_kj",
    "solver_calls",
    "error",
)
LOSS_COLUMNS = ("iteration", "train_loss", "test_loss")
COMPARE_COLUMNS = ("policy", "scenario", "seed", "energy_kj")

# swept name -> ScenarioConfig field it overrides
SWEEP_PARAMETERS = {
    "cache_capacity": "cache_capacity_mbits",
    "deadline": "deadline_s",
    "service_count": "num_services",
    "weight_server": "energy_weight_server",
}

_J_PER_KJ = 1e3

# Domain failures that become a populated ``error`` column (row retained).
_ROW_ERRORS = (InfeasibleScenarioError, UnboundedSignalError, BracketFailureError)


def _special_policy(scenario: Scenario, gap_rtol: float = 1e-7) -> PolicyResult:
    return solve_special(SpecialScenario.from_scenario(scenario), gap_rtol=gap_rtol)


POLICIES = {
    "no_caching": no_caching,
    "all_caching": all_caching,
    "popular_caching": popular_caching,
    "greedy_caching": greedy_caching,
    "optimal_caching": optimal_caching,
    "special": _special_policy,
}

DEFAULT_POLICIES = ("no_caching", "popular_caching", "greedy_caching", "all_caching", "optimal_caching")


def derive_seed(master_seed: int, path: str) -> int:
    """Stable 64-bit sub-seed for a named stream under one master seed.

    SHA-256 over ``f"{master_seed}:{path}"``; the first 8 digest bytes
    (big-endian) are the seed. Distinct paths give independent streams and
    the derivation is reproducible across platforms and Python versions.
    """
    digest = hashlib.sha256(f"{master_seed}:{path}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class SweepSpec:
    """One-parameter grid sweep: which knob, which values, how many draws."""

    parameter: str  # key of SWEEP_PARAMETERS
    grid: list
    replications: int = 20
    policies: tuple = DEFAULT_POLICIES
    master_seed: int = 0
    base_config: ScenarioConfig = field(default_factory=ScenarioConfig)
    gap_rtol: float = 1e-7

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"unknown sweep parameter {self.parameter!r}, know {sorted(SWEEP_PARAMETERS)}")
        if len(self.grid) == 0:
            raise ValueError("sweep grid must be non-empty")
        if self.replications < 1:
            raise ValueError("need at least one replication per grid point")
        unknown = [p for p in self.policies if p not in POLICIES]
        if unknown:
            raise ValueError(f"unknown policies {unknown}, know {sorted(POLICIES)}")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        d = dict(d)
        if "scenario" in d:
            d["base_config"] = ScenarioConfig.from_dict(d.pop("scenario"))
        if "policies" in d:
            d["policies"] = tuple(d["policies"])
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sweep spec keys: {sorted(unknown)}")
        return cls(**d)

    def config_at(self, value) -> ScenarioConfig:
        fname = SWEEP_PARAMETERS[self.parameter]
        if self.parameter == "service_count":
            value = int(value)
        return replace(self.base_config, **{fname: value})


@dataclass
class ResultRow:
    """One (grid point, replication, policy) outcome; energies in kJ."""

    param: str
    value: float
    policy: str
    seed: int
    energy_kj: float | None
    compute_kj: float | None
    download_kj: float | None
    offload_kj: float | None
    solver_calls: int | None
    wall_time_s: float
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.error == ""


def run_policy(name: str, scenario: Scenario, gap_rtol: float = 1e-7) -> PolicyResult:
    return POLICIES[name](scenario, gap_rtol=gap_rtol)


def policy_row(param: str, value: float, policy: str, seed: int, scenario: Scenario, fn) -> ResultRow:
    """Run one policy on one scenario and package the outcome as a ResultRow.

    Domain failures (infeasible scenario, unbounded/bracket failures in the
    closed-form path) land in the error column; everything else propagates.
    """
    t0 = time.perf_counter()
    try:
        res = fn(scenario)
    except _ROW_ERRORS as exc:
        return ResultRow(
            param, float(value), policy, seed,
            None, None, None, None, None,
            time.perf_counter() - t0, f"{type(exc).__name__}: {exc}",
        )
    e = res.energy
    return ResultRow(
        param,
        float(value),
        policy,
        seed,
        e.objective / _J_PER_KJ,
        e.server_compute / _J_PER_KJ,
        e.server_download / _J_PER_KJ,
        float(np.sum(e.offload_per_location)) / _J_PER_KJ,
        int(res.solve_stats.get("solver_calls", 1)),
        time.perf_counter() - t0,
    )


def _sweep_task(spec: SweepSpec, value_index: int, rep: int, policy: str) -> ResultRow:
    value = spec.grid[value_index]
    seed = derive_seed(spec.master_seed, f"sweep/{spec.parameter}/rep/{rep}")
    scenario = sample_scenario(spec.config_at(value), seed)
    fn = POLICIES[policy]
    return policy_row(spec.parameter, value, policy, seed, scenario, lambda s: fn(s, gap_rtol=spec.gap_rtol))


def _sweep_task_args(args) -> ResultRow:
    return _sweep_task(*args)


def run_sweep(spec: SweepSpec, parallelism: int = 1) -> list:
    """All (grid point, replication, policy) rows, in deterministic order.

    The scenario seed depends on the replication only: every policy at a
    grid point sees the same draw, and replication r reuses one draw across
    the whole grid (a paired design — curves differ by the swept parameter,
    not by sampling noise; parameters that change the scenario shape, like
    the catalog size, still produce different draws from the same seed).
    Rows come back ordered by (grid index, replication, policy position)
    regardless of worker count.
    """
    tasks = [
        (spec, vi, rep, policy)
        for vi in range(len(spec.grid))
        for rep in range(spec.replications)
        for policy in spec.policies
    ]
    if parallelism <= 1:
        return [_sweep_task_args(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_sweep_task_args, tasks, chunksize=max(1, len(tasks) // (4 * parallelism))))


def aggregate_sweep(rows) -> list:
    """Mean +/- standard error of weighted energy per (value, policy).

    Only successful rows enter the statistics; failures are counted. Order
    follows first appearance, i.e. grid order then policy order.
    """
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.param, row.value, row.policy), []).append(row)
    out = []
    for (param, value, policy), grp in groups.items():
        vals = np.array([r.energy_kj for r in grp if r.ok], dtype=float)
        n = vals.size
        mean = float(vals.mean()) if n else float("nan")
        stderr = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        out.append(
            {
                "param": param,
                "value": value,
                "policy": policy,
                "mean_energy_kj": mean,
                "stderr_energy_kj": stderr,
                "rows_ok": n,
                "rows_failed": len(grp) - n,
            }
        )
    return out


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)  # shortest round-trip form: stable bytes, exact reload
    return str(x)


def _write_csv(path_or_buf, schema: str, header, data_rows):
    def _dump(fh):
        fh.write(f"# {schema}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in data_rows:
            writer.writerow([_fmt(x) for x in row])

    if hasattr(path_or_buf, "write"):
        _dump(path_or_buf)
        return
    with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
        _dump(fh)


def sweep_rows_to_csv(rows, timing: bool = False) -> str:
    """Render sweep rows as CSV text (schema line + header + data).

    ``timing=False`` (the default) omits the wall-time column: the artifact
    is then byte-identical across runs with the same master seed.
    """
    header = SWEEP_COLUMNS[:-1] + ("wall_time_s", "error") if timing else SWEEP_COLUMNS
    buf = io.StringIO()

    def fields(r: ResultRow):
        base = (r.param, r.value, r.policy, r.seed, r.energy_kj, r.compute_kj,
                r.download_kj, r.offload_kj, r.solver_calls)
        return base + (r.wall_time_s, r.error) if timing else base + (r.error,)

    _write_csv(buf, SWEEP_SCHEMA, header, (fields(r) for r in rows))
    return buf.getvalue()


def write_sweep_csv(rows, path, timing: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(sweep_rows_to_csv(rows, timing=timing))


def write_loss_csv(loss_rows, path) -> None:
    """Loss trace rows (iteration, train_loss, test_loss) -> versioned CSV."""
    _write_csv(path, LOSS_SCHEMA, LOSS_COLUMNS, loss_rows)


def write_compare_csv(rows, path) -> None:
    """Per-scenario policy comparison rows (dicts) -> versioned CSV."""
    _write_csv(path, COMPARE_SCHEMA, COMPARE_COLUMNS, ([r[c] for c in COMPARE_COLUMNS] for r in rows))


def read_csv(path):
    """Read any versioned CSV back: returns (schema, header, list of dict rows).

    Values stay strings; blank fields mean "not available". The schema line
    is required — files without one are rejected.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing schema comment line, got {first!r}")
        schema = first[2:]
        reader = csv.reader(fh)
        header = next(reader)
        rows = [dict(zip(header, rec)) for rec in reader]
    return schema, header, rows


def sample_feasible(config: ScenarioConfig, seed: int, attempts: int = 64):
    """Sample a scenario on which no_caching solves; None if all draws fail.

    Caching only ever removes load, so conditioning on the no-caching policy
    being feasible guarantees every policy (and any quantized candidate) has
    a finite energy on the returned scenario.  At the tightest reference
    deadline roughly a fifth of raw draws qualify, so the attempt budget is
    sized to make exhaustion vanishingly unlikely.
    """
    for k in range(attempts):
        scenario = sample_scenario(config, seed + k)
        try:
            no_caching(scenario)
        except InfeasibleScenarioError:
            continue
        return scenario
    return None


def evaluate_policies(
    scenario_config: ScenarioConfig,
    policies: dict,
    num_scenarios: int,
    master_seed: int,
    gap_rtol: float = 1e-7,
) -> list:
    """Run every policy on a shared ensemble of feasible scenarios.

    ``policies`` maps name -> callable(scenario) -> PolicyResult. Returns
    compare rows: one dict (policy, scenario, seed, energy_kj) per pair,
    grouped by scenario so per-scenario ratios can be formed downstream.
    """
    rows = []
    for i in range(num_scenarios):
        seed = derive_seed(master_seed, f"compare/{i}")
        scenario = sample_feasible(scenario_config, seed)
        if scenario is None:
            raise InfeasibleScenarioError(f"no feasible scenario found at compare/{i}")
        for name, fn in policies.items():
            res = fn(scenario)
            rows.append(
                {"policy": name, "scenario": i, "seed": seed, "energy_kj": res.objective / _J_PER_KJ}
            )
    return rows


def compare_means(rows) -> dict:
    """Mean energy (kJ) per policy over compare rows."""
    acc: dict = {}
    for r in rows:
        acc.setdefault(r["policy"], []).append(r["energy_kj"])
    return {name: float(np.mean(vals)) for name, vals in acc.items()}


@dataclass
class TrainingExperiment:
    """Both quantizer variants trained on identical scenario streams."""

    policies: dict  # kind -> TrainedPolicy
    loss_rows: dict  # kind -> list of (iteration, train_loss, test_loss)
    compare_rows: list  # per-scenario energies: trained variants + references


def run_training_experiment(
    config: TrainConfig,
    scenario_config: ScenarioConfig,
    master_seed: int,
    out_dir=None,
    compare_scenarios: int = 20,
    reference_policies: tuple = DEFAULT_POLICIES,
) -> TrainingExperiment:
    """Train stochastic and order-preserving variants, then benchmark both.

    The scenario / labeling / init streams depend only on the master seed, so
    the two variants consume identical training data and differ only in how
    scores become candidate caching vectors. When ``out_dir`` is given, each
    variant's loss trace (`loss_<kind>.csv`), checkpoint (`policy_<kind>.json`)
    and the joint comparison (`comparison.csv`) are written there.
    """
    kinds = ("stochastic", "order-preserving")
    policies: dict = {}
    loss_rows: dict = {}
    for kind in kinds:
        trained, rows = train(replace(config, quantizer_kind=kind), scenario_config, master_seed)
        policies[kind] = trained
        loss_rows[kind] = rows

    eval_fns = {name: _policy_fn(name, None, master_seed) for name in reference_policies}
    for kind in kinds:
        eval_fns[f"dl_{kind}"] = _policy_fn(f"dl_{kind}", policies[kind], master_seed)
    compare_rows = evaluate_policies(
        scenario_config, eval_fns, compare_scenarios, master_seed, gap_rtol=config.gap_rtol
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for kind in kinds:
            tag = kind.replace("-", "_")
            write_loss_csv(loss_rows[kind], out / f"loss_{tag}.csv")
            policies[kind].save(out / f"policy_{tag}.json")
        write_compare_csv(compare_rows, out / "comparison.csv")
    return TrainingExperiment(policies=policies, loss_rows=loss_rows, compare_rows=compare_rows)


def _policy_fn(name: str, trained: TrainedPolicy | None, master_seed: int):
    """Bind a compare-table entry: baseline by registry name or a trained net.

    Trained policies draw their candidate-sampling RNG from a stream derived
    off the policy name, so the comparison is reproducible and independent of
    evaluation order.
    """
    if trained is None:
        fn = POLICIES[name]
        return lambda scenario: fn(scenario)
    rng = np.random.default_rng(derive_seed(master_seed, f"eval/{name}"))
    return lambda scenario: infer(trained, scenario, rng=rng)
