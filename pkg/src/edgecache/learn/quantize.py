"""Binary caching candidates from relaxed scores.

Two candidate generators share the repair rule:

* stochastic — Bernoulli draws around per-draw noise-perturbed scores; one
  draw uses the unperturbed scores and is always kept (truncated to fit if
  needed), so the exploitation candidate is never lost to the random
  selection.
* order-preserving — deterministic top-k threshold candidates; any two
  candidates rank services the same way the scores do.

Every candidate returned by either generator satisfies the cache capacity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class QuantizerConfig:
    num_samples: int = 100  # raw draws per call (M)
    num_candidates: int = 10  # evaluated candidates (J)
    noise_std: float = 1.0
    max_resample_rounds: int = 10

    def __post_init__(self):
        if not 1 <= self.num_candidates <= self.num_samples:
            raise ValueError("need 1 <= num_candidates <= num_samples")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


def repair(decision, scores, sizes, capacity) -> np.ndarray:
    """Flip zeros to ones by descending score; stop at the first overflow."""
    out = np.asarray(decision, dtype=bool).copy()
    scores = np.asarray(scores, dtype=float)
    used = float(sizes @ out)
    for l in np.lexsort((np.arange(scores.shape[0]), -scores)):
        if out[l]:
            continue
        if used + sizes[l] > capacity:
            break
        out[l] = True
        used += sizes[l]
    return out


def _truncate(decision, scores, sizes, capacity) -> np.ndarray:
    """Unflip the lowest-score ones until the capacity constraint holds."""
    out = np.asarray(decision, dtype=bool).copy()
    used = float(sizes @ out)
    for l in np.lexsort((np.arange(scores.shape[0]), scores)):
        if used <= capacity:
            break
        if out[l]:
            out[l] = False
            used -= sizes[l]
    return out


def _draw_pool(logits, config: QuantizerConfig, rng) -> np.ndarray:
    """(M, L) raw Bernoulli draws; row 0 uses the noise-free scores.

    Each noisy row perturbs the logits with its own Gaussian vector before
    the Bernoulli draw.  Per-row noise keeps the pool diverse even when
    training has saturated the logits (a single shared perturbation would
    collapse all rows onto one decision there).
    """
    logits = np.asarray(logits, dtype=float)
    L = logits.shape[0]
    noise = rng.normal(0.0, config.noise_std, size=(config.num_samples - 1, L))
    probs = _sigmoid(logits[None, :] + noise)
    noise_free = rng.random(L) < _sigmoid(logits)
    draws = rng.random((config.num_samples - 1, L)) < probs
    return np.vstack([noise_free[None, :], draws])


def stochastic_quantize(logits, sizes, capacity, config: QuantizerConfig, rng) -> np.ndarray:
    """(J, L) feasible candidates from Bernoulli draws around noisy scores.

    Per round: every noisy draw perturbs the logits with its own Gaussian
    vector, the noise-free draw is truncated to feasibility and pinned as
    the first pool entry, the noisy draws are filtered to feasible.
    Selection keeps the noise-free candidate and picks the rest uniformly;
    rounds repeat while the pool is short, then all-zeros pads.  Every
    selected candidate is repaired (greedy 0->1 flips by score) before
    being returned.
    """
    logits = np.asarray(logits, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    scores = _sigmoid(logits)
    L = logits.shape[0]
    J = config.num_candidates

    pool: list[np.ndarray] = []
    for _ in range(config.max_resample_rounds):
        rows = _draw_pool(logits, config, rng)
        if not pool:
            pool.append(_truncate(rows[0], scores, sizes, capacity))
        for d in rows[1:]:
            if sizes @ d <= capacity:
                pool.append(d)
        if len(pool) >= J:
            break

    keep = [pool[0]]
    rest = pool[1:]
    take = min(J - 1, len(rest))
    if take > 0:
        for i in rng.choice(len(rest), size=take, replace=False):
            keep.append(rest[i])
    while len(keep) < J:
        keep.append(np.zeros(L, dtype=bool))

    return np.array([repair(c, scores, sizes, capacity) for c in keep])


def order_preserving_quantize(scores, sizes, capacity, num_candidates: int) -> np.ndarray:
    """(J, L) threshold candidates: the k-th caches the k highest scores.

    A prefix that overflows the capacity is truncated to the longest feasible
    prefix (flip-repair would collapse every candidate to one maximal set).
    Candidates therefore stay nested, preserving the score order entrywise.
    """
    scores = np.asarray(scores, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    L = scores.shape[0]
    order = np.lexsort((np.arange(L), -scores))
    fits = np.cumsum(sizes[order]) <= capacity
    longest = int(np.argmin(fits)) if not fits.all() else L  # first overflow index

    out = np.zeros((num_candidates, L), dtype=bool)
    for k in range(num_candidates):
        out[k, order[: min(k, L, longest)]] = True
    return out
