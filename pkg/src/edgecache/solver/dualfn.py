"""Explicit dual function of the reduced allocation problem.

The Lagrangian dualizes every constraint except the box bounds kept on the
primal variables:

    times   t in [bits / rate(full band), 10 * deadline]
    compute t_c in [cycle floor, 10 * deadline]
    shares  x, y in [0, 1]

Every feasible allocation lies inside those boxes (a transmission can never
beat the full-band rate, and no useful time exceeds the deadline), so
restricting the inner minimization to them preserves weak duality while
keeping the dual value finite and its supergradients bounded on the whole
nonnegative orthant -- exactly what a cutting-plane maximizer needs.

Inner minimizers are closed-form per variable:

  * transmit times minimize ``w_eff * t + lambda * bits / t`` at
    ``sqrt(lambda * bits / w_eff)`` clipped to the box,
  * the compute time minimizes ``a / t^2 + (mu - eta) * t`` at
    ``(2a / (mu - eta))^(1/3)`` clipped (upper edge when ``mu <= eta``),
  * each bandwidth share minimizes ``price * s - sum_k lambda_k * rate(s)``,
    solved by bisection on the monotone derivative, with the closed-form
    boundary case at the full share.

The supergradient entry for each multiplier is its constraint slack at the
inner minimizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from edgecache.energy import link_rate, link_rate_derivative
from edgecache.solver.reduction import ReducedBatch

_TIME_CAP_FACTOR = 10.0
_BISECT_STEPS = 60


@dataclass
class DualSpace:
    """Flat packing of the live multipliers of one instance.

    Layout: [deadline (active), floor (uncached), uplink-rate (uncached x K),
    downlink-rate (active x K), uplink budget, downlink budget].
    """

    uncached: np.ndarray  # (L,) bool, live compute/offload rows
    active: np.ndarray  # (L,) bool, live download rows
    num_locations: int

    @classmethod
    def from_batch(cls, red: ReducedBatch) -> "DualSpace":
        if red.batch != 1:
            raise ValueError("dual space is defined per instance")
        return cls(uncached=red.ux[0], active=red.ay[0], num_locations=red.snr_off.shape[2])

    @property
    def dim(self) -> int:
        nu = int(self.uncached.sum())
        na = int(self.active.sum())
        return na + nu + nu * self.num_locations + na * self.num_locations + 2

    def _splits(self):
        nu = int(self.uncached.sum())
        na = int(self.active.sum())
        K = self.num_locations
        edges = np.cumsum([na, nu, nu * K, na * K, 1])
        return nu, na, K, edges

    def unpack(self, z: np.ndarray):
        """Flat vector -> full-shape (L,), (L,), (L,K), (L,K), sigma, eps."""
        nu, na, K, e = self._splits()
        L = self.uncached.shape[0]
        mu = np.zeros(L)
        eta = np.zeros(L)
        omega = np.zeros((L, K))
        gamma = np.zeros((L, K))
        mu[self.active] = z[: e[0]]
        eta[self.uncached] = z[e[0] : e[1]]
        omega[self.uncached] = z[e[1] : e[2]].reshape(nu, K)
        gamma[self.active] = z[e[2] : e[3]].reshape(na, K)
        return mu, eta, omega, gamma, float(z[e[3]]), float(z[e[4]])

    def pack(self, mu, eta, omega, gamma, sigma, epsilon) -> np.ndarray:
        parts = [
            np.asarray(mu)[self.active],
            np.asarray(eta)[self.uncached],
            np.asarray(omega)[self.uncached].ravel(),
            np.asarray(gamma)[self.active].ravel(),
            [sigma],
            [epsilon],
        ]
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])


def _best_share(price: float, lam: np.ndarray, bw: float, snr: np.ndarray) -> float:
    """Minimize ``price * s - sum_k lam_k * rate(s, snr_k)`` over s in [0, 1]."""
    if not np.any(lam > 0):
        return 0.0  # objective reduces to price * s
    def slope(s):
        return price - float((lam * link_rate_derivative(s, bw, snr)).sum())

    if slope(1.0) <= 0.0:
        return 1.0
    lo, hi = 1e-12, 1.0
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        if slope(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dual_function(red: ReducedBatch, z: np.ndarray, space: DualSpace | None = None):
    """Evaluate the dual at ``z``.

    Returns ``(value, supergradient, minimizers)`` where minimizers is a dict
    of the inner primal point (full-shape arrays, zero on dead rows).
    """
    if red.batch != 1:
        raise ValueError("dual_function evaluates one instance at a time")
    space = space or DualSpace.from_batch(red)
    mu, eta, omega, gamma, sigma, epsilon = space.unpack(np.asarray(z, dtype=float))

    L, K = space.uncached.shape[0], space.num_locations
    un = space.uncached
    act = space.active
    iu = np.flatnonzero(un)
    ia = np.flatnonzero(act)
    Q = red.input_bits[0]
    R = red.output_bits[0]
    T = red.deadline[0]
    a = red.a[0]
    snr_off = np.broadcast_to(red.snr_off[0], (L, K))  # (L, K), same per row
    snr_dl = red.snr_dl[0]
    koff = red.koff[0]
    kdl = red.kdl[0]
    ar = np.arange(L)

    hot_off = np.zeros((L, K), dtype=bool)
    hot_off[iu, koff[iu]] = True
    hot_dl = np.zeros((L, K), dtype=bool)
    hot_dl[ia, kdl[ia]] = True

    value = 0.0
    t_off = np.zeros((L, K))
    t_dl = np.zeros((L, K))
    t_c = np.zeros(L)
    x = np.zeros(L)
    y = np.zeros(L)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if iu.size:
            # compute time: a/t^2 + (mu - eta) t over the box
            lo_c = red.t_floor[0][iu]
            hi_c = _TIME_CAP_FACTOR * T[iu]
            drift = mu[iu] - eta[iu]
            interior = np.where(drift > 0, np.cbrt(2.0 * a[iu] / np.maximum(drift, 1e-300)), np.inf)
            tc = np.clip(interior, lo_c, hi_c)
            t_c[iu] = tc
            value += float((a[iu] / tc**2 + drift * tc).sum())

            # offload times
            w_eff = red.w_off[0] + mu[:, None] * hot_off
            lo_t = Q[:, None] / link_rate(1.0, red.bw_off, snr_off)
            hi_t = _TIME_CAP_FACTOR * T[:, None]
            stat = np.sqrt(omega * Q[:, None] / np.where(w_eff > 0, w_eff, np.nan))
            stat = np.where(np.isnan(stat), np.where(omega > 0, np.inf, 0.0), stat)
            toff = np.clip(stat, lo_t, hi_t)[iu]
            t_off[iu] = toff
            value += float((w_eff[iu] * toff + omega[iu] * Q[iu, None] / toff).sum())

            # uplink shares
            for l in iu:
                x[l] = _best_share(sigma, omega[l], red.bw_off, snr_off[l])
            r_x = np.where(x[iu, None] > 0, link_rate(np.maximum(x[iu, None], 1e-300), red.bw_off, snr_off[iu]), 0.0)
            value += float((sigma * x[iu]).sum() - (omega[iu] * r_x).sum())

        if ia.size:
            w_eff_dl = red.w_dl[0] + mu[:, None] * hot_dl
            lo_t = R[:, None] / link_rate(1.0, red.bw_dl, snr_dl)
            hi_t = _TIME_CAP_FACTOR * T[:, None]
            stat = np.sqrt(gamma * R[:, None] / np.where(w_eff_dl > 0, w_eff_dl, np.nan))
            stat = np.where(np.isnan(stat), np.where(gamma > 0, np.inf, 0.0), stat)
            tdl = np.clip(stat, lo_t, hi_t)[ia]
            t_dl[ia] = tdl
            value += float((w_eff_dl[ia] * tdl + gamma[ia] * R[ia, None] / tdl).sum())

            for l in ia:
                y[l] = _best_share(epsilon, gamma[l], red.bw_dl, snr_dl[l])
            r_y = np.where(y[ia, None] > 0, link_rate(np.maximum(y[ia, None], 1e-300), red.bw_dl, snr_dl[ia]), 0.0)
            value += float((epsilon * y[ia]).sum() - (gamma[ia] * r_y).sum())

        # constants of the dualized constraints
        value += float(-(mu[ia] * T[ia]).sum())
        if iu.size:
            value += float((eta[iu] * red.t_floor[0][iu]).sum())
        value -= sigma + epsilon

        # supergradient = constraint slacks at the minimizers
        chain = np.zeros(L)
        chain[ia] = t_dl[ia, kdl[ia]]
        chain[iu] += t_off[iu, koff[iu]] + t_c[iu]
        g_mu = (chain - T)[ia]
        g_eta = (red.t_floor[0] - t_c)[iu]
        rx_full = np.zeros((L, K))
        if iu.size:
            rx_full[iu] = r_x
        g_omega = (Q[:, None] / np.where(t_off > 0, t_off, 1.0) - rx_full)[iu].ravel()
        ry_full = np.zeros((L, K))
        if ia.size:
            ry_full[ia] = r_y
        g_gamma = (R[:, None] / np.where(t_dl > 0, t_dl, 1.0) - ry_full)[ia].ravel()
        g_sigma = x[iu].sum() - 1.0
        g_eps = y[ia].sum() - 1.0

    grad = np.concatenate([g_mu, g_eta, g_omega, g_gamma, [g_sigma], [g_eps]])
    minimizers = {"t_c": t_c, "t_off": t_off, "t_dl": t_dl, "x": x, "y": y}
    return float(value), grad, minimizers
