"""Reference cache-placement policies.

Each policy picks a binary caching decision, solves the bandwidth/compute
allocation for it, and reports the solved energy breakdown.  The all-caching
policy deliberately ignores the cache-capacity limit: it is the unreachable
lower bound the other policies are compared against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from edgecache.energy import EnergyBreakdown, expected_energy
from edgecache.scenario import Scenario
from edgecache.solver import solve_allocation, solve_allocation_batch

ENUMERATION_LIMIT = 14


class InfeasibleScenarioError(RuntimeError):
    """No allocation meets the deadlines for the required caching decision."""


class EnumerationLimitError(ValueError):
    """Exhaustive search requested beyond the configured service-count limit."""


@dataclass
class PolicyResult:
    decision: np.ndarray  # (L,) bool
    energy: EnergyBreakdown
    solve_stats: dict

    @property
    def objective(self) -> float:
        return self.energy.objective


def _solved(scenario: Scenario, decision: np.ndarray, gap_rtol: float) -> EnergyBreakdown:
    res = solve_allocation(scenario, decision, method="barrier", gap_rtol=gap_rtol)
    if res.status != "optimal":
        raise InfeasibleScenarioError(
            f"no optimal allocation for decision {decision.astype(int).tolist()} (status {res.status})"
        )
    return expected_energy(scenario, decision, res.allocation)


def no_caching(scenario: Scenario, gap_rtol: float = 1e-7) -> PolicyResult:
    t0 = time.perf_counter()
    decision = np.zeros(scenario.num_services, dtype=bool)
    energy = _solved(scenario, decision, gap_rtol)
    return PolicyResult(decision, energy, {"solver_calls": 1, "runtime_s": time.perf_counter() - t0})


def all_caching(scenario: Scenario, gap_rtol: float = 1e-7) -> PolicyResult:
    """Cache everything, capacity waived (reference lower bound)."""
    t0 = time.perf_counter()
    decision = np.ones(scenario.num_services, dtype=bool)
    energy = _solved(scenario, decision, gap_rtol)
    stats = {"solver_calls": 1, "runtime_s": time.perf_counter() - t0, "capacity_exempt": True}
    return PolicyResult(decision, energy, stats)


def popular_caching(scenario: Scenario, gap_rtol: float = 1e-7) -> PolicyResult:
    """Cache by descending request popularity until capacity would overflow.

    Filling stops at the first service that does not fit (no skipping), so the
    cached set is a prefix of the popularity order.  Equal popularity resolves
    to the lower service index.
    """
    t0 = time.perf_counter()
    pop = scenario.popularity()
    order = np.lexsort((np.arange(scenario.num_services), -pop))
    decision = np.zeros(scenario.num_services, dtype=bool)
    used = 0.0
    for l in order:
        if used + scenario.output_bits[l] > scenario.cache_capacity_bits:
            break
        decision[l] = True
        used += scenario.output_bits[l]
    energy = _solved(scenario, decision, gap_rtol)
    return PolicyResult(decision, energy, {"solver_calls": 1, "runtime_s": time.perf_counter() - t0})


def greedy_caching(scenario: Scenario, gap_rtol: float = 1e-7) -> PolicyResult:
    """Iteratively cache the service with the largest solved energy share.

    Each round re-solves the allocation for the current decision, attributes
    the weighted energy to services, and caches the most expensive uncached
    one; the loop ends when the chosen service no longer fits.
    """
    t0 = time.perf_counter()
    decision = np.zeros(scenario.num_services, dtype=bool)
    calls = 0
    used = 0.0
    while True:
        energy = _solved(scenario, decision, gap_rtol)
        calls += 1
        if decision.all():
            break
        per_service = energy.per_service_weighted()
        per_service[decision] = -np.inf
        pick = int(np.argmax(per_service))
        if used + scenario.output_bits[pick] > scenario.cache_capacity_bits:
            break
        decision[pick] = True
        used += scenario.output_bits[pick]
    return PolicyResult(decision, energy, {"solver_calls": calls, "runtime_s": time.perf_counter() - t0})


def _subset_order(L: int):
    """All of {0,1}^L ordered by (cached count, lexicographic mask value)."""
    masks = np.arange(2**L, dtype=np.int64)
    counts = np.array([int(m).bit_count() for m in masks])
    return masks[np.lexsort((masks, counts))]


def optimal_caching(
    scenario: Scenario,
    gap_rtol: float = 1e-7,
    limit: int = ENUMERATION_LIMIT,
    batch_size: int = 256,
) -> PolicyResult:
    """Exhaustive search over capacity-feasible decisions.

    Enumeration order (fewer cached services first, then lexicographic) plus
    strict improvement realizes the tie rule deterministically.
    """
    t0 = time.perf_counter()
    L = scenario.num_services
    if L > limit:
        raise EnumerationLimitError(f"exhaustive search over {L} services exceeds limit {limit}")
    bits = (1 << np.arange(L, dtype=np.int64))
    order = _subset_order(L)
    feasible = []
    for m in order:
        mask = (m & bits) != 0
        if scenario.output_bits[mask].sum() <= scenario.cache_capacity_bits:
            feasible.append(mask)
    best = None
    best_obj = np.inf
    calls = 0
    for start in range(0, len(feasible), batch_size):
        chunk = feasible[start : start + batch_size]
        results = solve_allocation_batch([scenario] * len(chunk), np.array(chunk), gap_rtol=gap_rtol)
        calls += len(chunk)
        for mask, res in zip(chunk, results):
            if res.status == "optimal" and res.objective < best_obj:
                best_obj = res.objective
                best = (mask, res.allocation)
    if best is None:
        raise InfeasibleScenarioError("no capacity-feasible decision admits a feasible allocation")
    decision, alloc = best
    energy = expected_energy(scenario, decision, alloc)
    stats = {
        "solver_calls": calls,
        "candidates": len(feasible),
        "runtime_s": time.perf_counter() - t0,
    }
    return PolicyResult(decision, energy, stats)
