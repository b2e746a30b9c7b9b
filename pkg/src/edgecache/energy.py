"""Expected per-round energy of the edge system under a caching decision.

Round timeline for an uncached service l requested by at least one location:
the requester with the best uplink gain uploads the input (Q_l bits), the
server computes (C_l * Q_l cycles at frequency C_l*Q_l / t_compute), and the
result (R_l bits) is multicast at a rate decodable by the weakest requesting
downlink. Cached services skip upload and compute but still need the
multicast. All of this must finish within the service deadline.

Energy bookkeeping (expectations over one round of requests):

* server compute:   kappa * (C_l Q_l)^3 / t_compute_l^2, paid when l is
  requested and not cached;
* location uplink:  p_k^off * t_offload[l, k], paid by location k when it is
  the selected uploader of l (and l is uncached);
* server downlink:  p_l^dl * t_download[l, k], paid when location k keys the
  multicast rate of l (cached or not).

The reported objective is the weighted sum
``weight_server * (compute + downlink) + sum_k weight_k * uplink_k``.

Bandwidth shares: a service holds a share alpha of a band and transmits at
``alpha * B * log2(1 + snr / alpha)`` — FDMA with power spread over the
allocated subband; rate is increasing and concave in alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from edgecache.scenario import Scenario

__all__ = [
    "link_rate",
    "link_rate_derivative",
    "link_rate_second_derivative",
    "ResourceAllocation",
    "EnergyBreakdown",
    "expected_energy",
    "FeasibilityReport",
    "check_feasible",
]

_LN2 = np.log(2.0)


def link_rate(share, bandwidth_hz, snr):
    """Rate in bit/s of a link holding ``share`` of a band: a*B*log2(1+snr/a).

    Vectorized; share -> 0 gives rate -> 0 (the a*log(1/a) limit).
    """
    share = np.asarray(share, dtype=float)
    snr = np.asarray(snr, dtype=float)
    safe = np.where(share > 0.0, share, 1.0)
    out = safe * bandwidth_hz * np.log2(1.0 + snr / safe)
    return np.where(share > 0.0, out, 0.0)


def link_rate_derivative(share, bandwidth_hz, snr):
    """d rate / d share = (B/ln2) * [ln(1 + snr/a) - snr/(a + snr)].

    Positive and decreasing in the share (the rate is concave); diverges as
    share -> 0 for positive snr.
    """
    share = np.asarray(share, dtype=float)
    snr = np.asarray(snr, dtype=float)
    safe = np.where(share > 0.0, share, 1.0)
    val = (bandwidth_hz / _LN2) * (np.log1p(snr / safe) - snr / (safe + snr))
    inf = np.where(snr > 0.0, np.inf, 0.0)
    return np.where(share > 0.0, val, inf)


def link_rate_second_derivative(share, bandwidth_hz, snr):
    """d^2 rate / d share^2 = -(B/ln2) * snr^2 / (a * (a + snr)^2) <= 0."""
    share = np.asarray(share, dtype=float)
    snr = np.asarray(snr, dtype=float)
    safe = np.where(share > 0.0, share, 1.0)
    val = -(bandwidth_hz / _LN2) * snr**2 / (safe * (safe + snr) ** 2)
    return np.where(share > 0.0, val, -np.inf)


@dataclass
class ResourceAllocation:
    """Per-service bandwidth shares and per-service(/location) times, SI."""

    uplink_share: np.ndarray  # (L,) share of the offload band
    downlink_share: np.ndarray  # (L,) share of the download band
    compute_time: np.ndarray  # (L,) seconds
    offload_time: np.ndarray  # (L, K) upload seconds if location k uploads l
    download_time: np.ndarray  # (L, K) multicast seconds keyed to location k

    def __post_init__(self):
        L, K = self.offload_time.shape
        assert self.uplink_share.shape == (L,)
        assert self.downlink_share.shape == (L,)
        assert self.compute_time.shape == (L,)
        assert self.download_time.shape == (L, K)


@dataclass
class EnergyBreakdown:
    """Expected energies in Joules, with per-service attribution rows."""

    server_compute: float
    server_download: float
    offload_per_location: np.ndarray  # (K,)
    objective: float  # weighted total
    per_service_compute: np.ndarray  # (L,)
    per_service_download: np.ndarray  # (L,)
    per_service_offload: np.ndarray  # (L, K)
    weight_server: float
    weight_locations: np.ndarray  # (K,)

    def per_service_weighted(self) -> np.ndarray:
        """Weighted objective contribution of each service (sums to objective)."""
        return self.weight_server * (self.per_service_compute + self.per_service_download) + (
            self.per_service_offload * self.weight_locations[None, :]
        ).sum(axis=1)


def expected_energy(scenario: Scenario, cached: np.ndarray, alloc: ResourceAllocation) -> EnergyBreakdown:
    """Expected one-round energy of an allocation under caching vector ``cached``."""
    cached = np.asarray(cached, dtype=bool)
    L, K = scenario.pmf.shape
    assert cached.shape == (L,)
    pop = scenario.popularity()
    active = pop > 0.0
    uncached = active & ~cached

    # server compute: kappa * (C Q)^3 / t_c^2, expected over "requested at all"
    cycles = scenario.cycles_per_bit * scenario.input_bits  # (L,) total cycles
    e_c = np.zeros(L)
    with np.errstate(divide="ignore"):
        e_c[uncached] = (scenario.kappa * cycles**3 * pop)[uncached] / alloc.compute_time[uncached] ** 2

    # uplink: selected uploader k spends p_k * t_off[l,k]
    p_off = scenario.offload_probs()  # (L, K)
    e_off = np.where(
        uncached[:, None], scenario.tx_power_offload_w[None, :] * p_off * alloc.offload_time, 0.0
    )

    # downlink: multicast of l keyed to k costs the server p_l * t_dl[l,k]
    p_dl = scenario.download_probs()  # (L, K)
    e_dl = np.where(active, scenario.tx_power_download_w * (p_dl * alloc.download_time).sum(axis=1), 0.0)

    per_loc = e_off.sum(axis=0)
    objective = scenario.weight_server * (e_c.sum() + e_dl.sum()) + float(scenario.weight_locations @ per_loc)
    return EnergyBreakdown(
        server_compute=float(e_c.sum()),
        server_download=float(e_dl.sum()),
        offload_per_location=per_loc,
        objective=float(objective),
        per_service_compute=e_c,
        per_service_download=e_dl,
        per_service_offload=e_off,
        weight_server=scenario.weight_server,
        weight_locations=scenario.weight_locations,
    )


@dataclass
class FeasibilityReport:
    ok: bool
    max_violation: float  # largest relative violation over all families
    violations: dict  # family -> max relative violation (<= 0 means satisfied)

    def __str__(self):
        worst = max(self.violations, key=self.violations.get) if self.violations else "-"
        return f"FeasibilityReport(ok={self.ok}, max_violation={self.max_violation:.3e}, worst={worst})"


def check_feasible(
    scenario: Scenario, cached: np.ndarray, alloc: ResourceAllocation, rtol: float = 1e-6
) -> FeasibilityReport:
    """Relative constraint violations of (cached, alloc).

    Families: cache capacity, band budgets, nonnegativity, per-(service,
    location) delivery-rate constraints, per-service deadline at the worst
    supported (uploader, multicast-key) pair, and the compute-speed cap.
    Violations are normalized by the constraint's own scale; <= rtol passes.
    """
    cached = np.asarray(cached, dtype=bool)
    L, K = scenario.pmf.shape
    pop = scenario.popularity()
    active = pop > 0.0
    uncached = active & ~cached
    x, y = alloc.uplink_share, alloc.downlink_share

    v: dict[str, float] = {}
    cap = scenario.cache_capacity_bits
    v["cache_capacity"] = (float(scenario.output_bits @ cached) - cap) / max(cap, 1.0)
    v["uplink_budget"] = float(x[uncached].sum()) - 1.0
    v["downlink_budget"] = float(y[active].sum()) - 1.0
    v["nonneg"] = -float(
        min(
            x.min(initial=0.0),
            y.min(initial=0.0),
            alloc.compute_time.min(initial=0.0),
            alloc.offload_time.min(initial=0.0),
            alloc.download_time.min(initial=0.0),
        )
    )

    # delivery-rate constraints: enough bits must fit in the allotted time
    r_off = link_rate(x[:, None], scenario.bw_offload_hz, scenario.uplink_snr()[None, :])  # (L, K)
    r_dl = link_rate(y[:, None], scenario.bw_download_hz, scenario.downlink_snr())  # (L, K)
    off_gap = (scenario.input_bits[:, None] - alloc.offload_time * r_off) / scenario.input_bits[:, None]
    dl_gap = (scenario.output_bits[:, None] - alloc.download_time * r_dl) / scenario.output_bits[:, None]
    v["uplink_rate"] = float(off_gap[uncached].max()) if uncached.any() else 0.0
    v["downlink_rate"] = float(dl_gap[active].max()) if active.any() else 0.0

    # worst-case completion time vs deadline
    koff = scenario.worst_offload_location()
    kdl = scenario.worst_download_location()
    rows = np.flatnonzero(active)
    if rows.size:
        t_up = np.where(uncached[rows], alloc.offload_time[rows, koff[rows]] + alloc.compute_time[rows], 0.0)
        total = t_up + alloc.download_time[rows, kdl[rows]]
        v["deadline"] = float(((total - scenario.deadline_s[rows]) / scenario.deadline_s[rows]).max())
    else:
        v["deadline"] = 0.0

    # server frequency cap: t_c >= cycles / f_max
    t_min = scenario.cycles_per_bit * scenario.input_bits / scenario.max_freq_hz
    if uncached.any():
        v["compute_speed"] = float(((t_min - alloc.compute_time) / t_min)[uncached].max())
    else:
        v["compute_speed"] = 0.0

    worst = max(v.values())
    return FeasibilityReport(ok=bool(worst <= rtol), max_violation=float(worst), violations=v)
