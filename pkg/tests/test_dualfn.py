"""Dual function: weak duality, concavity, supergradients, strong duality."""

import numpy as np
import pytest

from edgecache.scenario import ScenarioConfig, sample_scenario
from edgecache.solver import solve_allocation
from edgecache.solver.barrier import barrier_solve, recover_duals
from edgecache.solver.dualfn import DualSpace, dual_function
from edgecache.solver.reduction import build_batch


def make_instance(seed=0, L=3, K=2, T=4.0, cached=None):
    cfg = ScenarioConfig(num_services=L, num_locations=K, deadline_s=T)
    scen = sample_scenario(cfg, seed=seed)
    if cached is None:
        cached = np.zeros(L, dtype=bool)
        cached[0] = True
    red = build_batch(scen, np.asarray(cached, dtype=bool)[None, :])
    return scen, np.asarray(cached, dtype=bool), red


def random_duals(space, rng, scale=1.0):
    z = rng.gamma(1.2, scale, size=space.dim)
    return z


def test_dimension_matches_live_structure():
    _, _, red = make_instance(L=3, K=2)
    space = DualSpace.from_batch(red)
    # 3 active deadlines, 2 uncached floors, 2x2 uplink, 3x2 downlink, 2 budgets
    assert space.dim == 3 + 2 + 4 + 6 + 2
    z = np.arange(space.dim, dtype=float)
    assert space.pack(*space.unpack(z)) == pytest.approx(z)


def test_weak_duality_against_solver_optimum():
    scen, cached, red = make_instance(seed=1)
    res = solve_allocation(scen, cached, method="barrier")
    assert res.status == "optimal"
    primal = res.diagnostics["reduced_objective"]
    space = DualSpace.from_batch(red)
    rng = np.random.default_rng(7)
    for scale in (1e-3, 1e-1, 1.0, 10.0):
        for _ in range(20):
            q, _, _ = dual_function(red, random_duals(space, rng, scale), space)
            assert q <= primal + 1e-9 * max(1.0, abs(primal))


def test_concavity_on_segments():
    _, _, red = make_instance(seed=2)
    space = DualSpace.from_batch(red)
    rng = np.random.default_rng(11)
    for _ in range(25):
        z1 = random_duals(space, rng, 0.5)
        z2 = random_duals(space, rng, 2.0)
        q1, _, _ = dual_function(red, z1, space)
        q2, _, _ = dual_function(red, z2, space)
        qm, _, _ = dual_function(red, 0.5 * (z1 + z2), space)
        assert qm >= 0.5 * (q1 + q2) - 1e-9 * max(1.0, abs(qm))


def test_supergradient_inequality():
    _, _, red = make_instance(seed=3)
    space = DualSpace.from_batch(red)
    rng = np.random.default_rng(13)
    for _ in range(25):
        z1 = random_duals(space, rng, 1.0)
        z2 = random_duals(space, rng, 1.0)
        q1, g1, _ = dual_function(red, z1, space)
        q2, _, _ = dual_function(red, z2, space)
        bound = q1 + float(g1 @ (z2 - z1))
        assert q2 <= bound + 1e-7 * max(1.0, abs(bound))


def test_strong_duality_at_recovered_duals():
    scen, cached, red = make_instance(seed=5)
    res = barrier_solve(red, gap_rtol=1e-9)
    assert bool(res.feasible[0]) and not bool(res.infeasible[0])
    duals = recover_duals(red, res)
    space = DualSpace.from_batch(red)
    z = space.pack(
        duals["mu"][0],
        duals["eta"][0],
        duals["omega"][0],
        duals["gamma"][0],
        float(duals["sigma"][0]),
        float(duals["epsilon"][0]),
    )
    q, _, _ = dual_function(red, z, space)
    primal = float(res.objective[0])
    assert q <= primal + 1e-9 * abs(primal)
    assert (primal - q) / abs(primal) <= 1e-5


def test_zero_duals_value_is_box_minimum():
    _, _, red = make_instance(seed=6)
    space = DualSpace.from_batch(red)
    q, g, mins = dual_function(red, np.zeros(space.dim), space)
    # with all multipliers at zero, only the weighted time terms remain and
    # every transmit time sits at its fastest-possible box edge
    assert np.isfinite(q)
    iu = np.flatnonzero(space.uncached)
    lo = red.input_bits[0][iu, None] / (red.bw_off * np.log2(1.0 + red.snr_off[0][0]))
    assert mins["t_off"][iu] == pytest.approx(lo)
    # shares collapse to zero (no rate pressure, no budget price)
    assert np.all(mins["x"] == 0.0) and np.all(mins["y"] == 0.0)


def test_tiny_drift_hits_time_cap():
    _, _, red = make_instance(seed=8)
    space = DualSpace.from_batch(red)
    z = np.zeros(space.dim)
    na = int(space.active.sum())
    z[:na] = 1e-12  # deadline prices barely positive, floor prices zero
    q, _, mins = dual_function(red, z, space)
    assert np.isfinite(q)
    iu = np.flatnonzero(space.uncached)
    assert mins["t_c"][iu] == pytest.approx(10.0 * red.deadline[0][iu])
