"""Closed forms and a fast pipeline for the one-service-per-location regime.

When every location demands its own unique service the request statistics
collapse (each service is requested with probability one at exactly one
location) and the allocation optimality conditions admit closed forms built
on the principal Lambert-W branch.  That unlocks a cheap pipeline: solve the
rate/bandwidth dual equations once with caching disabled, freeze the implied
times, pick the caching decision by an exact knapsack over the frozen
per-service savings, and finally re-solve the allocation exactly for the
chosen decision with the general convex solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from edgecache.baselines import InfeasibleScenarioError, PolicyResult
from edgecache.energy import expected_energy, link_rate
from edgecache.scenario import Scenario
from edgecache.solver import solve_allocation

_LN2 = math.log(2.0)
_BRANCH_POINT = -1.0 / math.e


class UnboundedSignalError(RuntimeError):
    """Dual drift <= 0 leaves a compute time with no finite minimizer."""


class BracketFailureError(RuntimeError):
    """A monotone root bracket could not be established in the dual system."""


# ------------------------------------------------------------ Lambert W


def lambert_w0(x):
    """Principal branch: w with w * exp(w) = x, w >= -1, for x >= -1/e.

    Halley iteration from a branch-point series / log seed; residual
    |w e^w - x| <= 1e-12 * max(1, |x|).  Inputs below the branch point by
    more than 1e-12 raise; tiny excursions clamp to the branch point.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < _BRANCH_POINT - 1e-12):
        raise ValueError(f"lambert_w0 domain is [-1/e, inf), got min {arr.min()}")
    a = np.maximum(arr, _BRANCH_POINT)

    # seeds: series in sqrt(2(1 + e x)) near the branch point, log(1+x) above
    p = np.sqrt(np.maximum(2.0 * (1.0 + math.e * a), 0.0))
    near = -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0)))
    w = np.where(a < -0.25, near, np.log1p(np.maximum(a, -0.25)))

    for _ in range(60):
        ew = np.exp(w)
        f = w * ew - a
        if np.all(np.abs(f) <= 1e-13 * np.maximum(1.0, np.abs(a))):
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0)
            step = f / denom
        w = w - np.where(np.isfinite(step), step, 0.0)  # w = -1 is already exact
        w = np.maximum(w, -1.0)
    return float(w) if np.isscalar(x) or arr.ndim == 0 else w


def _share_from_price(lam, price, bw, snr):
    """Bandwidth fraction where lam * rate'(share) = price, capped at one.

    The stationarity condition in the per-entry SNR ratio z = snr/share is
    ln(1+z) - z/(1+z) = price*ln2/(lam*bw) - ... ; substituting
    phi = -price/(lam*bw) - 1/ln2 gives z = exp(W0(-e^{phi ln2}) - phi ln2) - 1.
    lam = 0 means the rate constraint is slack: no bandwidth is needed.
    """
    lam = np.asarray(lam, dtype=float)
    price = np.asarray(price, dtype=float)
    live = lam > 0.0
    lam_safe = np.where(live, lam, 1.0)
    phi = -price / (lam_safe * bw) - 1.0 / _LN2
    with np.errstate(over="ignore"):  # z -> inf is the correct huge-price limit
        z = np.exp(lambert_w0(-np.exp(phi * _LN2)) - phi * _LN2) - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(z > 0.0, snr / np.where(z > 0.0, z, 1.0), np.inf)
    return np.where(live, np.minimum(share, 1.0), 0.0)


# ------------------------------------------------------------- scenario


@dataclass
class SpecialScenario:
    """One location per service; entry k describes location k and its service."""

    cycles_per_bit: np.ndarray  # (K,)
    input_bits: np.ndarray  # (K,)
    output_bits: np.ndarray  # (K,)
    deadline_s: np.ndarray  # (K,)
    uplink_gain: np.ndarray  # (K,) normalized |h|^2 / noise-power
    downlink_gain: np.ndarray  # (K,)
    tx_power_offload_w: np.ndarray  # (K,)
    tx_power_download_w: np.ndarray  # (K,)
    weight_server: float
    weight_locations: np.ndarray  # (K,)
    bw_offload_hz: float
    bw_download_hz: float
    max_freq_hz: float
    kappa: float
    cache_capacity_bits: float
    service_of_location: np.ndarray  # (K,) service index demanded at location k

    @property
    def num_locations(self) -> int:
        return self.uplink_gain.shape[0]

    def uplink_snr(self) -> np.ndarray:
        return self.tx_power_offload_w * self.uplink_gain

    def downlink_snr(self) -> np.ndarray:
        return self.tx_power_download_w * self.downlink_gain

    def compute_floor(self) -> np.ndarray:
        return self.cycles_per_bit * self.input_bits / self.max_freq_hz

    @classmethod
    def from_scenario(cls, s: Scenario) -> "SpecialScenario":
        L, K = s.pmf.shape
        if L != K:
            raise ValueError(f"one-service-per-location needs L == K, got {L}x{K}")
        svc = np.argmax(s.pmf, axis=0)
        onehot = np.zeros_like(s.pmf)
        onehot[svc, np.arange(K)] = 1.0
        if not np.array_equal(np.sort(svc), np.arange(L)) or not np.allclose(s.pmf, onehot):
            raise ValueError("preference matrix is not a one-service-per-location pattern")
        return cls(
            cycles_per_bit=s.cycles_per_bit[svc],
            input_bits=s.input_bits[svc],
            output_bits=s.output_bits[svc],
            deadline_s=s.deadline_s[svc],
            uplink_gain=s.uplink_gain.copy(),
            downlink_gain=s.downlink_gain.copy(),
            tx_power_offload_w=s.tx_power_offload_w.copy(),
            tx_power_download_w=s.tx_power_download_w[svc],
            weight_server=s.weight_server,
            weight_locations=s.weight_locations.copy(),
            bw_offload_hz=s.bw_offload_hz,
            bw_download_hz=s.bw_download_hz,
            max_freq_hz=s.max_freq_hz,
            kappa=s.kappa,
            cache_capacity_bits=s.cache_capacity_bits,
            service_of_location=svc,
        )

    def to_scenario(self) -> Scenario:
        K = self.num_locations
        svc = self.service_of_location
        inv = np.empty(K, dtype=int)
        inv[svc] = np.arange(K)  # location demanding service l
        pmf = np.zeros((K, K))
        pmf[svc, np.arange(K)] = 1.0
        return Scenario(
            cycles_per_bit=self.cycles_per_bit[inv],
            input_bits=self.input_bits[inv],
            output_bits=self.output_bits[inv],
            deadline_s=self.deadline_s[inv],
            pmf=pmf,
            uplink_gain=self.uplink_gain.copy(),
            downlink_gain=self.downlink_gain.copy(),
            dl_order=np.lexsort((np.arange(K), -self.downlink_gain)),
            location_ids=np.arange(K),
            tx_power_offload_w=self.tx_power_offload_w.copy(),
            tx_power_download_w=self.tx_power_download_w[inv],
            weight_server=self.weight_server,
            weight_locations=self.weight_locations.copy(),
            bw_offload_hz=self.bw_offload_hz,
            bw_download_hz=self.bw_download_hz,
            max_freq_hz=self.max_freq_hz,
            kappa=self.kappa,
            cache_capacity_bits=self.cache_capacity_bits,
        )

    def lift_decision(self, cached_at_location: np.ndarray) -> np.ndarray:
        """Per-location caching flags -> general per-service decision vector."""
        out = np.zeros(self.num_locations, dtype=bool)
        out[self.service_of_location] = np.asarray(cached_at_location, dtype=bool)
        return out


# ------------------------------------------------------------ KKT forms


@dataclass
class SpecialDuals:
    mu: np.ndarray  # (K,) deadline
    eta: np.ndarray  # (K,) compute-speed floor
    omega: np.ndarray  # (K,) uplink delivery rate
    gamma: np.ndarray  # (K,) downlink delivery rate
    sigma: float  # uplink band budget
    epsilon: float  # downlink band budget


@dataclass
class SpecialAllocation:
    compute_time: np.ndarray  # (K,)
    offload_time: np.ndarray  # (K,)
    download_time: np.ndarray  # (K,)
    uplink_share: np.ndarray  # (K,)
    downlink_share: np.ndarray  # (K,)

    def objective(self, s: SpecialScenario, cached: np.ndarray) -> float:
        un = ~np.asarray(cached, dtype=bool)
        cq = s.cycles_per_bit * s.input_bits
        compute = np.where(un, s.kappa * cq**3 / np.where(un, self.compute_time, 1.0) ** 2, 0.0)
        offload = np.where(un, s.weight_locations * s.tx_power_offload_w * self.offload_time, 0.0)
        download = s.weight_server * s.tx_power_download_w * self.download_time
        return float((s.weight_server * compute + offload + download).sum())


def kkt_special(duals: SpecialDuals, s: SpecialScenario, cached) -> SpecialAllocation:
    """Stationary allocation at the given multipliers (closed forms)."""
    cached = np.asarray(cached, dtype=bool)
    un = ~cached
    cq = s.cycles_per_bit * s.input_bits

    t_dl = np.sqrt(duals.gamma * s.output_bits / (s.weight_server * s.tx_power_download_w + duals.mu))

    w_off = s.weight_locations * s.tx_power_offload_w + duals.mu
    t_off = np.where(un, np.sqrt(duals.omega * s.input_bits * un / w_off), 0.0)

    drift = duals.mu - duals.eta
    if np.any(un & (drift <= 0.0)):
        raise UnboundedSignalError("mu - eta <= 0 for an uncached service: compute time diverges")
    a = s.weight_server * s.kappa * cq**3
    t_c = np.where(un, np.cbrt(2.0 * a / np.where(un, drift, 1.0)), 0.0)

    x = np.where(un, _share_from_price(duals.omega * un, duals.sigma, s.bw_offload_hz, s.uplink_snr()), 0.0)
    y = _share_from_price(duals.gamma, duals.epsilon, s.bw_download_hz, s.downlink_snr())
    return SpecialAllocation(t_c, t_off, t_dl, x, y)


# ------------------------------------------------------- dual equations


def _rate_residual(lam, price, bits, weight, bw, snr):
    """Normalized delivery-rate slack at the stationary point for one entry.

    Zero when rate * time exactly delivers the payload; non-decreasing in
    lam (more rate pressure -> more bandwidth and a longer, cheaper time)
    and non-increasing in price.
    """
    t = math.sqrt(lam * bits / weight)
    share = float(_share_from_price(lam, price, bw, snr))
    return link_rate(share, bw, snr) * t / bits - 1.0


def _bisect_rate_dual(price, bits, weight, bw, snr, lo=1e-12, hi=1e6):
    """Inner solve: the lam with zero rate residual at a fixed band price."""
    for _ in range(4):
        if _rate_residual(lo, price, bits, weight, bw, snr) <= 0.0 <= _rate_residual(
            hi, price, bits, weight, bw, snr
        ):
            break
        lo, hi = lo / 10.0, hi * 10.0
    else:
        raise BracketFailureError("no sign change for the rate dual in the expanded bracket")
    for _ in range(200):
        mid = math.sqrt(lo * hi)  # log-scale bisection over many decades
        if _rate_residual(mid, price, bits, weight, bw, snr) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return 0.5 * (lo + hi)


def _solve_band_system(bits, weight, bw, snr, rtol=1e-8):
    """Outer solve: the band price clearing the total-bandwidth budget.

    Total demanded share falls as the price rises; at a vanishing price every
    entry grabs the full band.  Bisect the price until the budget residual
    sum(shares) - 1 is within rtol, resolving the per-entry duals inside.
    """
    K = bits.shape[0]

    def shares_at(price):
        lam = np.array([_bisect_rate_dual(price, bits[k], weight[k], bw, snr[k]) for k in range(K)])
        return lam, _share_from_price(lam, price, bw, snr)

    lo, hi = 1e-12, 1e6
    lam_lo, sh = shares_at(lo)
    if sh.sum() - 1.0 <= rtol:  # budget slack at a vanishing price
        return lam_lo, lo
    for _ in range(4):
        lam_hi, sh = shares_at(hi)
        if sh.sum() - 1.0 < 0.0:
            break
        hi *= 10.0
    else:
        raise BracketFailureError("total bandwidth demand never falls below the budget")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        lam, sh = shares_at(mid)
        g = sh.sum() - 1.0
        if abs(g) <= rtol:
            return lam, mid
        if g > 0.0:
            lo = mid
        else:
            hi = mid
    raise BracketFailureError("band-price bisection did not reach the residual tolerance")


def solve_dual_system(s: SpecialScenario, rtol: float = 1e-8) -> SpecialDuals:
    """Rate/band multipliers with slack deadlines and caching disabled.

    Two independent nested bisections (uplink, downlink); deadline and
    compute-floor multipliers are zero in this regime.
    """
    K = s.num_locations
    omega, sigma = _solve_band_system(
        s.input_bits, s.weight_locations * s.tx_power_offload_w, s.bw_offload_hz, s.uplink_snr(), rtol
    )
    gamma, eps = _solve_band_system(
        s.output_bits, s.weight_server * s.tx_power_download_w, s.bw_download_hz, s.downlink_snr(), rtol
    )
    return SpecialDuals(
        mu=np.zeros(K), eta=np.zeros(K), omega=omega, gamma=gamma, sigma=sigma, epsilon=eps
    )


# ------------------------------------------------------------- knapsack


def ilp_cache_placement(s: SpecialScenario, offload_time: np.ndarray) -> np.ndarray:
    """Exact caching knapsack at frozen times: maximize skipped energy.

    Caching service k saves its full-speed compute energy plus the frozen
    offload transmit energy.  Branch-and-bound in savings-density order with
    the fractional relaxation as the bound; exact on float sizes, so the
    result always matches exhaustive enumeration.
    """
    cq = s.cycles_per_bit * s.input_bits
    compute = s.weight_server * s.kappa * cq * s.max_freq_hz**2
    savings = compute + s.weight_locations * s.tx_power_offload_w * offload_time

    K = s.num_locations
    cap = float(s.cache_capacity_bits)
    if s.output_bits.sum() <= cap:
        return np.ones(K, dtype=bool)

    order = np.lexsort((np.arange(K), -savings / s.output_bits))
    vals = savings[order]
    wts = s.output_bits[order]

    def fractional_bound(i: int, room: float) -> float:
        total = 0.0
        for j in range(i, K):
            if wts[j] <= room:
                room -= wts[j]
                total += vals[j]
            else:
                return total + vals[j] * room / wts[j]
        return total

    best_value = 0.0
    best_mask = 0

    def dive(i: int, room: float, value: float, mask: int) -> None:
        nonlocal best_value, best_mask
        if value > best_value:
            best_value, best_mask = value, mask
        if i == K or value + fractional_bound(i, room) <= best_value:
            return
        if wts[i] <= room:
            dive(i + 1, room - wts[i], value + vals[i], mask | (1 << i))
        dive(i + 1, room, value, mask)

    dive(0, cap, 0.0, 0)
    decision = np.zeros(K, dtype=bool)
    for j in range(K):
        if best_mask & (1 << j):
            decision[order[j]] = True
    return decision


# ------------------------------------------------------------- pipeline


def solve_special(s: SpecialScenario, gap_rtol: float = 1e-7) -> PolicyResult:
    """Dual system -> frozen times -> knapsack -> exact allocation re-solve."""
    duals = solve_dual_system(s)
    t_off = np.sqrt(duals.omega * s.input_bits / (s.weight_locations * s.tx_power_offload_w))
    at_location = ilp_cache_placement(s, t_off)

    scen = s.to_scenario()
    decision = s.lift_decision(at_location)
    res = solve_allocation(scen, decision, method="barrier", gap_rtol=gap_rtol)
    if res.status != "optimal":
        raise InfeasibleScenarioError(
            f"allocation re-solve for the knapsack decision ended with status {res.status}"
        )
    energy = expected_energy(scen, decision, res.allocation)
    stats = {
        "solver_calls": 1,
        "band_price_uplink": duals.sigma,
        "band_price_downlink": duals.epsilon,
        "cached_locations": int(at_location.sum()),
    }
    return PolicyResult(decision, energy, stats)
