"""Allocation solver vs. an independent dense grid-search oracle.

The oracle parameterizes allocations by bandwidth shares on the simplex
(budget equalities hold at any optimum because transmit energy is strictly
decreasing in each share), computes times rate-actively with its own
arithmetic, and scans a refined dense grid.  Nothing below reuses the
solver's reduction internals.
"""

import numpy as np
import pytest

from edgecache.energy import expected_energy
from edgecache.scenario import ScenarioConfig, sample_scenario
from edgecache.solver import kkt_residuals, solve_allocation, solve_allocation_batch


def small_config(L, K, T, seed_pref=12345):
    return ScenarioConfig(
        num_services=L,
        num_locations=K,
        deadline_s=T,
        preference_seed=seed_pref,
    )


# ---------------------------------------------------------------------------
# oracle: grid search over simplex shares with closed-form times
# ---------------------------------------------------------------------------


def oracle_objective(scenario, cached, x, y):
    """Objective at share grids ``x``/``y`` of shape (G, L); +inf if infeasible."""
    L, K = scenario.num_services, scenario.num_locations
    cached = np.asarray(cached, dtype=bool)
    pop = scenario.popularity()
    active = pop > 0
    un = active & ~cached
    beta0 = scenario.weight_server
    betas = scenario.weight_locations

    def rate(share, bw, snr):
        return share * bw * np.log2(1.0 + snr / np.maximum(share, 1e-300))

    s_off = scenario.uplink_snr()  # (K,)
    s_dl = scenario.downlink_snr()  # (L, K)
    # services with zero share never transmit; mask them before dividing
    x_safe = np.where(un[None, :], np.maximum(x, 1e-12), 1.0)
    y_safe = np.where(active[None, :], np.maximum(y, 1e-12), 1.0)
    t_off = np.where(
        un[None, :, None],
        scenario.input_bits[None, :, None]
        / rate(x_safe[:, :, None], scenario.bw_offload_hz, s_off[None, None, :]),
        0.0,
    )  # (G, L, K)
    t_dl = np.where(
        active[None, :, None],
        scenario.output_bits[None, :, None]
        / rate(y_safe[:, :, None], scenario.bw_download_hz, s_dl[None, :, :]),
        0.0,
    )

    koff = scenario.worst_offload_location()
    kdl = scenario.worst_download_location()
    ar = np.arange(L)
    chain = np.where(un[None, :], t_off[:, ar, koff], 0.0) + t_dl[:, ar, kdl]  # (G, L)
    t_c = scenario.deadline_s[None, :] - chain
    t_floor = scenario.cycles_per_bit * scenario.input_bits / scenario.max_freq_hz

    e_c = beta0 * scenario.kappa * (scenario.cycles_per_bit * scenario.input_bits) ** 3 * pop
    # t_c below the compute floor is flagged infeasible below; clamp only to
    # keep the masked branch finite
    obj = np.where(un[None, :], e_c[None, :] / np.maximum(t_c, 1e-3) ** 2, 0.0).sum(axis=1)
    w_off = betas[None, :] * scenario.tx_power_offload_w[None, :] * scenario.offload_probs()
    w_dl = beta0 * scenario.tx_power_download_w[:, None] * scenario.download_probs()
    obj = obj + np.einsum("lk,glk->g", np.where(un[:, None], w_off, 0.0), t_off)
    obj = obj + np.einsum("lk,glk->g", np.where(active[:, None], w_dl, 0.0), t_dl)

    bad = np.any(un[None, :] & (t_c < t_floor[None, :] * (1 - 1e-12)), axis=1)
    bad |= np.any((cached & active)[None, :] & (t_dl[:, ar, kdl] > scenario.deadline_s[None, :]), axis=1)
    return np.where(bad, np.inf, obj)


def _simplex_grids(n_free, lo, hi, pts):
    """Cartesian grid over free coordinates; last coordinate is the remainder."""
    axes = [np.linspace(lo[i], hi[i], pts) for i in range(n_free)]
    mesh = np.meshgrid(*axes, indexing="ij") if n_free else []
    free = np.stack([m.ravel() for m in mesh], axis=1) if n_free else np.zeros((1, 0))
    last = 1.0 - free.sum(axis=1)
    keep = last > 1e-4
    return np.concatenate([free[keep], last[keep, None]], axis=1)


def grid_best(scenario, cached, pts=15, passes=3):
    """Refined dense grid minimum of the oracle objective."""
    cached = np.asarray(cached, dtype=bool)
    active = scenario.popularity() > 0
    un = active & ~cached
    iu = np.flatnonzero(un)
    ia = np.flatnonzero(active)
    nx, ny = max(len(iu) - 1, 0), len(ia) - 1

    lo_x, hi_x = np.full(nx, 1e-3), np.full(nx, 1.0 - 1e-3)
    lo_y, hi_y = np.full(ny, 1e-3), np.full(ny, 1.0 - 1e-3)
    best = np.inf
    for _ in range(passes):
        gx = _simplex_grids(nx, lo_x, hi_x, pts) if len(iu) else np.zeros((1, 0))
        gy = _simplex_grids(ny, lo_y, hi_y, pts)
        X = np.zeros((gx.shape[0] * gy.shape[0], scenario.num_services))
        Y = np.zeros_like(X)
        rep_x = np.repeat(gx, gy.shape[0], axis=0)
        rep_y = np.tile(gy, (gx.shape[0], 1))
        if len(iu):
            X[:, iu] = rep_x
        Y[:, ia] = rep_y
        vals = oracle_objective(scenario, cached, X, Y)
        j = int(np.argmin(vals))
        best = float(vals[j])
        # shrink the box around the incumbent for the next pass
        fx, fy = rep_x[j, :nx], rep_y[j, :ny]
        span_x = (hi_x - lo_x) * (2.5 / pts)
        span_y = (hi_y - lo_y) * (2.5 / pts)
        lo_x, hi_x = np.maximum(fx - span_x, 1e-4), np.minimum(fx + span_x, 1.0)
        lo_y, hi_y = np.maximum(fy - span_y, 1e-4), np.minimum(fy + span_y, 1.0)
    return best


def random_small_instance(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 4))
    K = int(rng.integers(1, 3))
    T = float(rng.uniform(3.2, 5.0))
    cfg = small_config(L, K, T, seed_pref=int(rng.integers(1, 10_000)))
    scen = sample_scenario(cfg, seed=int(rng.integers(0, 2**31)))
    cached = rng.random(L) < 0.35
    return scen, cached


def test_matches_grid_oracle():
    checked = 0
    seed = 0
    while checked < 12:
        seed += 1
        scen, cached = random_small_instance(seed)
        res = solve_allocation(scen, cached, method="barrier")
        if res.status != "optimal":
            continue
        ref = grid_best(scen, cached)
        assert res.objective <= ref * (1 + 1e-6), f"seed {seed}: solver above grid incumbent"
        assert abs(res.objective - ref) <= 1e-3 * ref, f"seed {seed}: {res.objective} vs grid {ref}"
        checked += 1


# ---------------------------------------------------------------------------
# optimality certificates on reference-scale instances
# ---------------------------------------------------------------------------


def solved_reference(seed=3, cached=None):
    """First optimal reference-scale solve at or after ``seed`` (fading can
    make individual draws infeasible)."""
    cfg = ScenarioConfig()
    if cached is None:
        cached = np.zeros(10, dtype=bool)
        cached[[0, 2, 3, 5, 7, 8]] = True
    for s in range(seed, seed + 30):
        scen = sample_scenario(cfg, seed=s)
        res = solve_allocation(scen, cached, method="barrier")
        if res.status == "optimal":
            return scen, cached, res
    raise AssertionError("no feasible reference draw found")


def test_kkt_residuals_small_at_optimum():
    scen, cached, res = solved_reference()
    rep = kkt_residuals(scen, cached, res.allocation, res.duals)
    assert rep["max"] <= 1e-4, rep


def test_kkt_residuals_flag_perturbation():
    scen, cached, res = solved_reference()
    alloc = res.allocation
    worse = type(alloc)(
        uplink_share=alloc.uplink_share,
        downlink_share=alloc.downlink_share,
        compute_time=alloc.compute_time * 1.5,
        offload_time=alloc.offload_time,
        download_time=alloc.download_time,
    )
    rep = kkt_residuals(scen, cached, worse, res.duals)
    assert rep["max"] > 1e-2


def test_rate_constraints_active():
    scen, cached, res = solved_reference(seed=11)
    alloc = res.allocation
    from edgecache.energy import link_rate

    un = ~cached & (scenario_pop := scen.popularity() > 0)
    r_off = link_rate(alloc.uplink_share[:, None], scen.bw_offload_hz, scen.uplink_snr()[None, :])
    served = alloc.offload_time[un] * r_off[un]
    assert np.max(np.abs(served - scen.input_bits[un, None]) / scen.input_bits[un, None]) <= 1e-4

    r_dl = link_rate(alloc.downlink_share[:, None], scen.bw_download_hz, scen.downlink_snr())
    act = scenario_pop
    served_dl = alloc.download_time[act] * r_dl[act]
    assert np.max(np.abs(served_dl - scen.output_bits[act, None]) / scen.output_bits[act, None]) <= 1e-4


def test_band_budgets_active():
    scen, cached, res = solved_reference(seed=5)
    assert abs(res.allocation.uplink_share.sum() - 1.0) <= 1e-5
    assert abs(res.allocation.downlink_share.sum() - 1.0) <= 1e-5


def test_gap_invariant_and_dual_bound():
    scen, cached, res = solved_reference(seed=7)
    assert res.gap <= 1e-3
    red_obj = res.diagnostics["reduced_objective"]
    assert res.dual_objective <= red_obj + 1e-9
    assert abs(red_obj - res.dual_objective) / max(abs(red_obj), 1e-12) <= 1e-3


def test_objective_equals_energy_module():
    scen, cached, res = solved_reference(seed=13)
    breakdown = expected_energy(scen, cached, res.allocation)
    assert res.objective == pytest.approx(breakdown.objective, rel=1e-12)


# ---------------------------------------------------------------------------
# structure, degenerate cases, determinism
# ---------------------------------------------------------------------------


def test_all_cached_structure():
    cfg = ScenarioConfig()
    scen = sample_scenario(cfg, seed=2)
    cached = np.ones(10, dtype=bool)
    res = solve_allocation(scen, cached, method="barrier")
    assert res.status == "optimal"
    assert np.all(res.allocation.offload_time == 0.0)
    assert np.all(res.allocation.compute_time == 0.0)
    br = expected_energy(scen, cached, res.allocation)
    assert br.server_compute == 0.0
    assert np.all(br.offload_per_location == 0.0)
    assert res.objective == pytest.approx(scen.weight_server * br.server_download, rel=1e-12)


def test_deadline_below_compute_floor_is_infeasible():
    cfg = small_config(2, 2, T=0.5)
    scen = sample_scenario(cfg, seed=1)
    res = solve_allocation(scen, np.zeros(2, dtype=bool), method="barrier")
    assert res.status == "infeasible"
    assert res.objective == float("inf")


def test_deterministic_resolve():
    scen, cached, first = solved_reference(seed=17)
    again = solve_allocation(scen, cached, method="barrier")
    assert first.objective == again.objective
    assert first.gap == again.gap


def test_batch_matches_single():
    cfg = ScenarioConfig()
    scens = [sample_scenario(cfg, seed=s) for s in (21, 22, 23)]
    masks = [np.zeros(10, dtype=bool) for _ in range(3)]
    masks[1][:5] = True
    masks[2][:] = True
    batch = solve_allocation_batch(scens, masks)
    for scen, mask, joint in zip(scens, masks, batch):
        single = solve_allocation(scen, mask, method="barrier")
        assert single.status == joint.status
        if joint.status == "optimal":
            assert joint.objective == pytest.approx(single.objective, rel=1e-6)


def test_service_permutation_invariance():
    from dataclasses import replace

    cfg = small_config(3, 2, T=4.0)
    scen = sample_scenario(cfg, seed=9)
    perm = np.array([2, 0, 1])
    permuted = replace(
        scen,
        cycles_per_bit=scen.cycles_per_bit[perm],
        input_bits=scen.input_bits[perm],
        output_bits=scen.output_bits[perm],
        deadline_s=scen.deadline_s[perm],
        pmf=scen.pmf[perm],
        tx_power_download_w=scen.tx_power_download_w[perm],
    )
    cached = np.array([True, False, False])
    a = solve_allocation(scen, cached, method="barrier")
    b = solve_allocation(permuted, cached[perm], method="barrier")
    assert a.status == b.status == "optimal"
    assert a.objective == pytest.approx(b.objective, rel=1e-7)


def test_caching_never_hurts():
    cfg = ScenarioConfig()
    base = np.zeros(10, dtype=bool)
    for seed in range(31, 80):
        scen = sample_scenario(cfg, seed=seed)
        res0 = solve_allocation(scen, base, method="barrier")
        if res0.status == "optimal":
            break
    else:
        raise AssertionError("no feasible uncached draw found")
    flip = base.copy()
    flip[int(np.argmax(scen.popularity()))] = True
    res1 = solve_allocation(scen, flip, method="barrier")
    assert res1.status == "optimal"
    assert res1.objective <= res0.objective * (1 + 1e-9)
