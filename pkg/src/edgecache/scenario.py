"""System model: locations, services, request preferences and radio channels.

One base station with an attached edge server serves K user locations. A
catalog of L services is known in advance; each service l is described by
(cycles-per-bit C_l, input size Q_l bits, result size R_l bits, deadline T_l
seconds). In every round each location requests exactly one service, drawn
from a per-location preference pmf (column l of ``pmf`` is the distribution
over services at location k). The server may cache the *result* of a service
(R_l bits) subject to a cache capacity, which removes the need to upload the
input and compute, but results still have to be delivered downlink.

Conventions used everywhere in this package:

* SI units internally: bits, Hz, seconds, Watts, Joules. Config files use
  human units (Mbit, MHz, GHz, dBm) and are converted exactly once, here.
* Locations are re-indexed at construction so uplink gains are
  non-increasing (u_1 >= ... >= u_K). ``location_ids`` maps each internal
  index back to the original sampling index. ``dl_order`` is the permutation
  of internal indices by non-increasing downlink gain.
* Channel gains are normalized by the noise power of their band
  (|h|^2 / (N0 * B)), so power * gain is a dimensionless SNR at full band.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

__all__ = [
    "ScenarioConfig",
    "Scenario",
    "zipf_pmf",
    "preference_matrix",
    "prob_no_request",
    "offload_select_probs",
    "download_select_probs",
    "support_worst_offload",
    "support_worst_download",
    "sample_scenario",
    "sample_requests",
]

_MBIT = 1e6  # bits
_MHZ = 1e6  # Hz
_GHZ = 1e9  # Hz


def _db_to_linear(db):
    return 10.0 ** (db / 10.0)


@dataclass
class ScenarioConfig:
    """Distribution parameters for sampling scenarios.

    Defaults reproduce the reference small-cell setup: 5 locations on a
    30 m circle around the base station, 10 services, Zipf(0.9) preferences
    with location-specific rank permutations, Rayleigh fading on both bands.
    See docs/config.md for the full key list.
    """

    num_services: int = 10
    num_locations: int = 5
    # radio geometry / pathloss
    distance_km: float | list = 0.03
    ref_gain_db: float = -128.1
    ref_distance_km: float = 1.0
    pathloss_exponent: float = 2.6
    noise_psd_dbm_per_hz: float = -169.0
    bandwidth_offload_mhz: float = 10.0
    bandwidth_download_mhz: float = 10.0
    tx_power_offload_w: float | list = 0.25
    tx_power_download_w: float | list = 1.0
    # server
    max_server_freq_ghz: float = 10.0
    switching_capacitance: float = 1e-27
    cache_capacity_mbits: float = 128.0
    # services
    compute_cycles_per_bit: float | list = 1000.0
    input_size_mbits: tuple = (7.0, 7.5)
    output_size_mbits: tuple = (21.0, 22.0)
    deadline_s: float | list = 2.8
    # objective weights: server weight + per-location weights (sum to 1)
    energy_weight_server: float = 0.5
    energy_weight_locations: list | None = None
    # preferences
    zipf_skew: float | list = 0.9
    preference_seed: int | None = 12345
    one_hot_preferences: bool = False

    def __post_init__(self):
        if self.num_services < 1 or self.num_locations < 1:
            raise ValueError("need at least one service and one location")
        if self.one_hot_preferences and self.num_services != self.num_locations:
            raise ValueError("one_hot_preferences requires num_services == num_locations")
        lo, hi = self.input_size_mbits
        if not (0 < lo <= hi):
            raise ValueError("input_size_mbits must be an increasing positive range")
        lo, hi = self.output_size_mbits
        if not (0 < lo <= hi):
            raise ValueError("output_size_mbits must be an increasing positive range")
        w = self.weight_locations()
        total = self.energy_weight_server + float(np.sum(w))
        if not np.isclose(total, 1.0, atol=1e-9):
            raise ValueError(f"energy weights must sum to 1, got {total}")
        if self.energy_weight_server < 0 or np.any(w < 0):
            raise ValueError("energy weights must be nonnegative")

    def weight_locations(self) -> np.ndarray:
        if self.energy_weight_locations is None:
            share = (1.0 - self.energy_weight_server) / self.num_locations
            return np.full(self.num_locations, share)
        w = np.asarray(self.energy_weight_locations, dtype=float)
        if w.shape != (self.num_locations,):
            raise ValueError("energy_weight_locations must have one entry per location")
        return w

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("input_size_mbits", "output_size_mbits"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size_mbits"] = list(d["input_size_mbits"])
        d["output_size_mbits"] = list(d["output_size_mbits"])
        return d


def _per_location(value, K, name) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(K, float(arr))
    if arr.shape != (K,):
        raise ValueError(f"{name} must be scalar or length {K}")
    return arr


def _per_service(value, L, name) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(L, float(arr))
    if arr.shape != (L,):
        raise ValueError(f"{name} must be scalar or length {L}")
    return arr


def zipf_pmf(num_items: int, skew: float) -> np.ndarray:
    """Zipf popularity over ranks 1..num_items: p_r = r^-skew / sum_j j^-skew."""
    ranks = np.arange(1, num_items + 1, dtype=float)
    weights = ranks ** (-skew)
    return weights / weights.sum()


def preference_matrix(num_services, num_locations, skew, rng) -> np.ndarray:
    """(L, K) pmf: column k is Zipf(skew_k) pushed through a random rank
    permutation, so each location has its own popularity ordering."""
    skew = _per_location(skew, num_locations, "zipf_skew")
    pmf = np.empty((num_services, num_locations))
    for k in range(num_locations):
        base = zipf_pmf(num_services, skew[k])
        perm = rng.permutation(num_services)  # perm[r] = service holding rank r at k
        col = np.empty(num_services)
        col[perm] = base
        pmf[:, k] = col
    return pmf


def prob_no_request(pmf: np.ndarray) -> np.ndarray:
    """Per service: probability that no location requests it this round."""
    return np.prod(1.0 - pmf, axis=1)


def offload_select_probs(pmf: np.ndarray) -> np.ndarray:
    """(L, K) probability that location k is the one uploading service l.

    Requests are independent across locations and the upload is done by the
    requesting location with the best uplink gain (columns are already in
    non-increasing gain order), so location k uploads iff it requests l and
    none of the better-gain locations do.
    """
    shifted = np.cumprod(1.0 - pmf, axis=1)
    prior = np.concatenate([np.ones((pmf.shape[0], 1)), shifted[:, :-1]], axis=1)
    return prior * pmf


def download_select_probs(pmf: np.ndarray, dl_order: np.ndarray) -> np.ndarray:
    """(L, K) probability that the result broadcast for service l is keyed to
    location k's downlink rate (k is the weakest downlink gain among the
    requesters). Returned in location index order, not dl_order position."""
    cols = pmf[:, dl_order]  # position order: best downlink gain first
    rev = cols[:, ::-1]
    shifted = np.cumprod(1.0 - rev, axis=1)
    prior = np.concatenate([np.ones((pmf.shape[0], 1)), shifted[:, :-1]], axis=1)
    pos_probs = (prior * rev)[:, ::-1]  # back to position order
    out = np.empty_like(pos_probs)
    out[:, dl_order] = pos_probs
    return out


def support_worst_offload(pmf: np.ndarray, snr=None) -> np.ndarray:
    """Per service: the location that can actually end up uploading it and
    yields the slowest upload.

    "Can end up uploading" means positive selection probability (a location
    behind a sure requester never uploads). Worst = smallest uplink SNR when
    ``snr`` is given (ties -> larger index), else the largest location index
    (equivalent under equal transmit powers). -1 for never-requested services.
    """
    L, K = pmf.shape
    has = offload_select_probs(pmf) > 0.0
    if snr is None:
        key = np.broadcast_to(np.arange(K, 0, -1, dtype=float), (L, K))
    else:
        key = np.broadcast_to(np.asarray(snr, dtype=float), (L, K))
    masked = np.where(has, key, np.inf)[:, ::-1]  # reversed: prefer larger k on ties
    idx = K - 1 - np.argmin(masked, axis=1)
    return np.where(has.any(axis=1), idx, -1).astype(int)


def support_worst_download(pmf: np.ndarray, dl_order: np.ndarray) -> np.ndarray:
    """Per service: location index with the weakest downlink gain among
    locations that can be the weakest requester. -1 if never requested."""
    L, K = pmf.shape
    cols = download_select_probs(pmf, dl_order)[:, dl_order] > 0.0  # position order
    pos = np.where(cols.any(axis=1), K - 1 - np.argmax(cols[:, ::-1], axis=1), -1)
    out = np.where(pos >= 0, dl_order[np.clip(pos, 0, K - 1)], -1)
    return out.astype(int)


@dataclass
class Scenario:
    """A fully sampled problem instance, in SI units and internal ordering."""

    # services
    cycles_per_bit: np.ndarray  # (L,)
    input_bits: np.ndarray  # (L,)
    output_bits: np.ndarray  # (L,)
    deadline_s: np.ndarray  # (L,)
    # preferences, in re-indexed location order
    pmf: np.ndarray  # (L, K), columns sum to 1
    # channels (normalized gains), re-indexed so uplink_gain is non-increasing
    uplink_gain: np.ndarray  # (K,)
    downlink_gain: np.ndarray  # (K,)
    dl_order: np.ndarray  # (K,) permutation, best downlink gain first
    location_ids: np.ndarray  # (K,) original location index per internal index
    # powers and weights
    tx_power_offload_w: np.ndarray  # (K,)
    tx_power_download_w: np.ndarray  # (L,)
    weight_server: float
    weight_locations: np.ndarray  # (K,)
    # constants
    bw_offload_hz: float
    bw_download_hz: float
    max_freq_hz: float
    kappa: float
    cache_capacity_bits: float
    seed: int | None = None

    def __post_init__(self):
        L, K = self.pmf.shape
        assert self.cycles_per_bit.shape == (L,)
        assert self.uplink_gain.shape == (K,)
        colsum = self.pmf.sum(axis=0)
        if not np.allclose(colsum, 1.0, atol=1e-9):
            raise ValueError("pmf columns must each sum to 1 (one request per location)")
        if np.any(self.pmf < 0):
            raise ValueError("pmf entries must be nonnegative")
        if np.any(np.diff(self.uplink_gain) > 1e-12):
            raise ValueError("uplink gains must be non-increasing after re-indexing")
        dl = self.downlink_gain[self.dl_order]
        if np.any(np.diff(dl) > 1e-12):
            raise ValueError("dl_order must sort downlink gains non-increasing")

    @property
    def num_services(self) -> int:
        return self.pmf.shape[0]

    @property
    def num_locations(self) -> int:
        return self.pmf.shape[1]

    # --- request statistics (derived, cached) ---

    def popularity(self) -> np.ndarray:
        """1 - Pr(no location requests service l)."""
        return 1.0 - prob_no_request(self.pmf)

    def offload_probs(self) -> np.ndarray:
        return offload_select_probs(self.pmf)

    def download_probs(self) -> np.ndarray:
        return download_select_probs(self.pmf, self.dl_order)

    def worst_offload_location(self) -> np.ndarray:
        return support_worst_offload(self.pmf, self.uplink_snr())

    def worst_download_location(self) -> np.ndarray:
        return support_worst_download(self.pmf, self.dl_order)

    def uplink_snr(self) -> np.ndarray:
        """(K,) power * normalized gain per location (dimensionless)."""
        return self.tx_power_offload_w * self.uplink_gain

    def downlink_snr(self) -> np.ndarray:
        """(L, K) power * normalized gain per service/location."""
        return self.tx_power_download_w[:, None] * self.downlink_gain[None, :]


def sample_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Draw channels, task sizes and (optionally fixed) preferences.

    Deterministic: the same (config, seed) always yields the same Scenario.
    Preferences come from config.preference_seed when set, so a fixed config
    defines a fixed preference profile across all sampled scenarios; pass
    preference_seed=None to resample preferences per scenario.
    """
    rng = np.random.default_rng(seed)
    L, K = config.num_services, config.num_locations

    q_lo, q_hi = config.input_size_mbits
    r_lo, r_hi = config.output_size_mbits
    input_bits = rng.uniform(q_lo, q_hi, size=L) * _MBIT
    output_bits = rng.uniform(r_lo, r_hi, size=L) * _MBIT

    # mean normalized gain: A0 * (d0/d)^gamma / (N0 * B), Rayleigh |h|^2 ~ Exp(1)
    dist = _per_location(config.distance_km, K, "distance_km")
    if np.any(dist <= 0):
        raise ValueError("distance_km must be positive")
    pathgain = _db_to_linear(config.ref_gain_db) * (config.ref_distance_km / dist) ** config.pathloss_exponent
    n0 = _db_to_linear(config.noise_psd_dbm_per_hz) * 1e-3  # dBm/Hz -> W/Hz
    bw_off = config.bandwidth_offload_mhz * _MHZ
    bw_dl = config.bandwidth_download_mhz * _MHZ
    mean_up = pathgain / (n0 * bw_off)
    mean_dl = pathgain / (n0 * bw_dl)
    u_raw = rng.exponential(1.0, size=K) * mean_up
    v_raw = rng.exponential(1.0, size=K) * mean_dl

    if config.one_hot_preferences:
        pmf_raw = np.eye(L)
    else:
        pref_seed = config.preference_seed
        pref_rng = rng if pref_seed is None else np.random.default_rng(pref_seed)
        pmf_raw = preference_matrix(L, K, config.zipf_skew, pref_rng)

    # re-index locations by non-increasing uplink gain, ties by original index
    order = np.lexsort((np.arange(K), -u_raw))
    u = u_raw[order]
    v = v_raw[order]
    pmf = pmf_raw[:, order]
    dl_order = np.lexsort((np.arange(K), -v))

    return Scenario(
        cycles_per_bit=_per_service(config.compute_cycles_per_bit, L, "compute_cycles_per_bit"),
        input_bits=input_bits,
        output_bits=output_bits,
        deadline_s=_per_service(config.deadline_s, L, "deadline_s"),
        pmf=pmf,
        uplink_gain=u,
        downlink_gain=v,
        dl_order=dl_order,
        location_ids=order.astype(int),
        tx_power_offload_w=_per_location(config.tx_power_offload_w, K, "tx_power_offload_w")[order],
        tx_power_download_w=_per_service(config.tx_power_download_w, L, "tx_power_download_w"),
        weight_server=config.energy_weight_server,
        weight_locations=config.weight_locations()[order],
        bw_offload_hz=bw_off,
        bw_download_hz=bw_dl,
        max_freq_hz=config.max_server_freq_ghz * _GHZ,
        kappa=config.switching_capacitance,
        cache_capacity_bits=config.cache_capacity_mbits * _MBIT,
        seed=seed,
    )


def sample_requests(pmf: np.ndarray, rng) -> np.ndarray:
    """One round of requests: service index chosen by each location, (K,)."""
    L, K = pmf.shape
    cum = np.cumsum(pmf, axis=0)
    draws = rng.random(K)
    return np.argmax(draws[None, :] < cum, axis=0)
