"""Reduced form of the allocation problem, batched over instances.

For a fixed caching vector the expected-energy minimization has a convex
reduced form in the per-service bandwidth shares only:

* every delivery-rate constraint is active at an optimum (times equal
  bits / rate), so per-(service, location) times are functions of shares;
* compute time is deadline-active: t_c = D(x, y) = T - worst upload time
  - worst multicast time, clipped below by the compute-speed floor
  cycles / f_max. "Worst" is taken over location pairs that can actually
  occur (positive selection probability), at the smallest SNR.

With those substitutions the weighted expected energy becomes

    G(x, y) = sum_u a_l / D_l(x_l, y_l)^2            (compute)
            + sum_u sum_k w_off[l,k] * Q_l / r(x_l; s_k)   (uplink)
            + sum_a sum_k w_dl[l,k] * R_l / r(y_l; s_lk)   (downlink)

subject to sum x <= 1, sum y <= 1, D_l >= t_min_l for uncached services and
R_l / r(y_l) <= T_l for cached ones. G is jointly convex: 1/r(.) is convex
decreasing, D is concave, and a/D^2 is convex decreasing in D.

Batching: all arrays carry a leading batch axis B. Instances must share
(L, K) and the two band widths; everything else (scenario data, caching
vector) may differ per instance. Services without variables (cached or
never-requested) keep dummy slots, masked out of every sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from edgecache.energy import ResourceAllocation, link_rate
from edgecache.scenario import Scenario

__all__ = ["ReducedBatch", "build_batch", "primal_times"]

_LN2 = np.log(2.0)


@dataclass
class ReducedBatch:
    """Per-instance data of the reduced problem (leading axis = batch)."""

    input_bits: np.ndarray  # (B, L)
    output_bits: np.ndarray  # (B, L)
    deadline: np.ndarray  # (B, L)
    t_floor: np.ndarray  # (B, L) compute-speed floor cycles / f_max
    a: np.ndarray  # (B, L) weighted compute coefficient: E_c = a / t_c^2
    w_off: np.ndarray  # (B, L, K) weighted uplink time coefficients
    w_dl: np.ndarray  # (B, L, K) weighted downlink time coefficients
    snr_off: np.ndarray  # (B, 1, K) uplink SNR per location
    snr_dl: np.ndarray  # (B, L, K) downlink SNR per (service, location)
    snr_off_star: np.ndarray  # (B, L) SNR of the worst supported uploader
    snr_dl_star: np.ndarray  # (B, L) SNR of the worst supported multicast key
    koff: np.ndarray  # (B, L) int index of the worst uploader (-1 inert)
    kdl: np.ndarray  # (B, L) int index of the worst multicast key
    ux: np.ndarray  # (B, L) bool: x-variable lives (active and uncached)
    ay: np.ndarray  # (B, L) bool: y-variable lives (active)
    cy: np.ndarray  # (B, L) bool: cached and active (downlink deadline only)
    bw_off: float
    bw_dl: float

    @property
    def batch(self) -> int:
        return self.a.shape[0]

    @property
    def L(self) -> int:
        return self.a.shape[1]

    def n_constraints(self) -> np.ndarray:
        """(B,) number of inequality constraints seen by the barrier."""
        return 2 + self.ux.sum(axis=1) + self.cy.sum(axis=1)

    # ---- time-vs-share calculus; tau(s) = bits / r(s; snr) ----

    def _tau(self, bits, share, bw, snr, order=0):
        """tau and derivatives in the share, elementwise (share > 0)."""
        s = np.maximum(share, 1e-300)
        ratio = snr / s
        r = s * bw * np.log2(1.0 + ratio)
        r = np.maximum(r, 1e-300)
        tau = bits / r
        if order == 0:
            return (tau,)
        r1 = (bw / _LN2) * (np.log1p(ratio) - snr / (s + snr))  # dr/ds > 0
        r2 = -(bw / _LN2) * snr**2 / (s * (s + snr) ** 2)  # d2r/ds2 < 0
        t1 = -bits * r1 / r**2
        if order == 1:
            return tau, t1
        t2 = bits * (2.0 * r1**2 - r * r2) / r**3
        return tau, t1, t2

    def uplink_times(self, X, order=0):
        """(B, L, K) upload times Q / r(x_l; s_k) and share-derivatives."""
        return self._tau(self.input_bits[:, :, None], X[:, :, None], self.bw_off, self.snr_off, order)

    def downlink_times(self, Y, order=0):
        """(B, L, K) multicast times R / r(y_l; s_lk) and share-derivatives."""
        return self._tau(self.output_bits[:, :, None], Y[:, :, None], self.bw_dl, self.snr_dl, order)

    def worst_uplink(self, X, order=0):
        """(B, L) upload time at the worst supported uploader's SNR."""
        return self._tau(self.input_bits, X, self.bw_off, self.snr_off_star, order)

    def worst_downlink(self, Y, order=0):
        return self._tau(self.output_bits, Y, self.bw_dl, self.snr_dl_star, order)

    def compute_slack(self, X, Y):
        """(B, L) D = T - worst upload - worst multicast, on ux rows."""
        phi = self.worst_uplink(X)[0]
        psi = self.worst_downlink(Y)[0]
        return self.deadline - phi - psi

    def objective(self, X, Y) -> np.ndarray:
        """(B,) reduced weighted expected energy G(x, y)."""
        ux = self.ux
        D = np.where(ux, self.compute_slack(X, Y), 1.0)
        g = (np.where(ux, self.a / D**2, 0.0)).sum(axis=1)
        g += (self.w_off * np.where(ux[:, :, None], self.uplink_times(X)[0], 0.0)).sum(axis=(1, 2))
        g += (self.w_dl * np.where(self.ay[:, :, None], self.downlink_times(Y)[0], 0.0)).sum(axis=(1, 2))
        return g


def build_batch(scenarios, cached: np.ndarray) -> ReducedBatch:
    """Stack instances into a ReducedBatch.

    ``scenarios``: one Scenario (shared by every row of ``cached``) or a
    list with one per row. ``cached``: (B, L) or (L,) bool.
    """
    cached = np.atleast_2d(np.asarray(cached, dtype=bool))
    B, L = cached.shape
    if isinstance(scenarios, Scenario):
        scenarios = [scenarios] * B
    assert len(scenarios) == B, "need one scenario per caching row"

    K = scenarios[0].num_locations
    bw_off, bw_dl = scenarios[0].bw_offload_hz, scenarios[0].bw_download_hz
    fields = {
        name: np.empty(shape)
        for name, shape in [
            ("input_bits", (B, L)),
            ("output_bits", (B, L)),
            ("deadline", (B, L)),
            ("t_floor", (B, L)),
            ("a", (B, L)),
            ("w_off", (B, L, K)),
            ("w_dl", (B, L, K)),
            ("snr_off", (B, 1, K)),
            ("snr_dl", (B, L, K)),
            ("snr_off_star", (B, L)),
            ("snr_dl_star", (B, L)),
        ]
    }
    koff = np.empty((B, L), dtype=int)
    kdl = np.empty((B, L), dtype=int)
    active = np.empty((B, L), dtype=bool)

    for b, s in enumerate(scenarios):
        assert s.pmf.shape == (L, K) and s.bw_offload_hz == bw_off and s.bw_download_hz == bw_dl
        pop = s.popularity()
        active[b] = pop > 0.0
        cycles = s.cycles_per_bit * s.input_bits
        fields["input_bits"][b] = s.input_bits
        fields["output_bits"][b] = s.output_bits
        fields["deadline"][b] = s.deadline_s
        fields["t_floor"][b] = cycles / s.max_freq_hz
        fields["a"][b] = s.weight_server * s.kappa * cycles**3 * pop
        fields["w_off"][b] = s.weight_locations[None, :] * s.tx_power_offload_w[None, :] * s.offload_probs()
        fields["w_dl"][b] = s.weight_server * s.tx_power_download_w[:, None] * s.download_probs()
        fields["snr_off"][b, 0] = s.uplink_snr()
        fields["snr_dl"][b] = s.downlink_snr()
        ko = s.worst_offload_location()
        kd = s.worst_download_location()
        koff[b], kdl[b] = ko, kd
        safe_ko, safe_kd = np.maximum(ko, 0), np.maximum(kd, 0)
        fields["snr_off_star"][b] = s.uplink_snr()[safe_ko]
        fields["snr_dl_star"][b] = s.downlink_snr()[np.arange(L), safe_kd]

    ux = active & ~cached
    return ReducedBatch(
        ux=ux, ay=active, cy=active & cached, koff=koff, kdl=kdl, bw_off=bw_off, bw_dl=bw_dl, **fields
    )


def primal_times(red: ReducedBatch, X: np.ndarray, Y: np.ndarray):
    """Expand shares to full allocations (rate-active times, deadline-active
    compute). Returns (t_c (B,L), t_off (B,L,K), t_dl (B,L,K)); dummy rows 0.

    Compute time is clipped to the speed floor, so an infeasible share pair
    shows up as a deadline violation, never as an over-clocked server.
    """
    ux3 = red.ux[:, :, None]
    t_off = np.where(ux3, red.uplink_times(np.where(red.ux, X, 1.0))[0], 0.0)
    t_dl = np.where(red.ay[:, :, None], red.downlink_times(np.where(red.ay, Y, 1.0))[0], 0.0)
    D = red.compute_slack(np.where(red.ux, X, 1.0), np.where(red.ay, Y, 1.0))
    t_c = np.where(red.ux, np.maximum(D, red.t_floor), 0.0)
    return t_c, t_off, t_dl


def allocations_from_shares(red: ReducedBatch, X, Y):
    """Per-instance ResourceAllocation list from batched shares."""
    t_c, t_off, t_dl = primal_times(red, X, Y)
    out = []
    for b in range(red.batch):
        out.append(
            ResourceAllocation(
                uplink_share=np.where(red.ux[b], X[b], 0.0),
                downlink_share=np.where(red.ay[b], Y[b], 0.0),
                compute_time=t_c[b],
                offload_time=t_off[b],
                download_time=t_dl[b],
            )
        )
    return out
