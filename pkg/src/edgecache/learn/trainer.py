"""Offline cache-placement learning: score, quantize, label, replay, descend.

Each iteration draws a scenario, scores it with the MLP, quantizes the scores
into feasible candidate decisions, labels the scenario with the candidate the
convex solver ranks cheapest, and stores the (features, label) pair in a FIFO
replay buffer.  Every ``train_interval`` iterations a mini-batch drives one
momentum-SGD step.  All randomness hangs off one master seed through named
SeedSequence streams, so runs are reproducible bit for bit.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from edgecache.baselines import InfeasibleScenarioError, PolicyResult, optimal_caching
from edgecache.energy import EnergyBreakdown, expected_energy
from edgecache.learn.mlp import MlpParams, forward, init_mlp, loss_and_grads, mse_loss, sgd_momentum_step
from edgecache.learn.quantize import QuantizerConfig, order_preserving_quantize, stochastic_quantize
from edgecache.scenario import Scenario, ScenarioConfig, sample_scenario
from edgecache.solver import solve_allocation_batch

_STREAM_SCALER = 0
_STREAM_TRAIN = 1
_STREAM_TEST = 2
_STREAM_INIT = 3
_STREAM_QUANTIZE = 4
_STREAM_BATCH = 5


def _stream_seed(master_seed: int, stream: int, index: int = 0) -> int:
    return int(np.random.SeedSequence((master_seed, stream, index)).generate_state(1, np.uint64)[0])


def scenario_features(s: Scenario) -> np.ndarray:
    """(2K + 2L,) raw inputs: uplink gains, downlink gains, input/output sizes."""
    return np.concatenate([s.uplink_gain, s.downlink_gain, s.input_bits, s.output_bits])


@dataclass
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, config: ScenarioConfig, master_seed: int, samples: int = 512) -> "FeatureScaler":
        rows = np.array(
            [
                scenario_features(sample_scenario(config, _stream_seed(master_seed, _STREAM_SCALER, i)))
                for i in range(samples)
            ]
        )
        return cls(rows.mean(axis=0), np.maximum(rows.std(axis=0), 1e-12))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std


class ReplayBuffer:
    """FIFO store of (features, label) pairs with bounded capacity."""

    def __init__(self, capacity: int):
        self._items: deque = deque(maxlen=capacity)

    def push(self, features: np.ndarray, label: np.ndarray) -> None:
        self._items.append((features, label))

    def sample(self, batch_size: int, rng) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        X = np.array([self._items[i][0] for i in idx])
        Y = np.array([self._items[i][1] for i in idx])
        return X, Y

    def __len__(self) -> int:
        return len(self._items)


@dataclass
class TrainConfig:
    iterations: int = 3000
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    train_interval: int = 10
    buffer_capacity: int = 1024
    hidden_dims: tuple = (160, 120, 80)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    quantizer_kind: str = "stochastic"  # or "order-preserving"
    test_size: int = 256
    scaler_samples: int = 512
    gap_rtol: float = 1e-7

    def __post_init__(self):
        if self.quantizer_kind not in ("stochastic", "order-preserving"):
            raise ValueError(f"unknown quantizer kind {self.quantizer_kind!r}")
        if min(self.iterations, self.learning_rate, self.batch_size, self.train_interval) <= 0:
            raise ValueError("iterations, learning_rate, batch_size, train_interval must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "hidden_dims" in d:
            d["hidden_dims"] = tuple(d["hidden_dims"])
        if "quantizer" in d and isinstance(d["quantizer"], dict):
            d["quantizer"] = QuantizerConfig(**d["quantizer"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(d["hidden_dims"])
        return d


@dataclass
class TrainedPolicy:
    params: MlpParams
    scaler: FeatureScaler
    quantizer: QuantizerConfig
    quantizer_kind: str = "stochastic"

    def scores(self, s: Scenario) -> np.ndarray:
        _, scores = forward(self.params, self.scaler.apply(scenario_features(s)))
        return scores

    def save(self, path) -> None:
        blob = {
            "format": "edgecache-policy-v1",
            "dims": list(self.params.dims),
            "weights": [w.tolist() for w in self.params.weights],  # row-major per layer
            "biases": [b.tolist() for b in self.params.biases],
            "feature_mean": self.scaler.mean.tolist(),
            "feature_std": self.scaler.std.tolist(),
            "quantizer": {
                "num_samples": self.quantizer.num_samples,
                "num_candidates": self.quantizer.num_candidates,
                "noise_std": self.quantizer.noise_std,
            },
            "quantizer_kind": self.quantizer_kind,
        }
        Path(path).write_text(json.dumps(blob))

    @classmethod
    def load(cls, path) -> "TrainedPolicy":
        blob = json.loads(Path(path).read_text())
        if blob.get("format") != "edgecache-policy-v1":
            raise ValueError(f"unsupported checkpoint format {blob.get('format')!r}")
        params = MlpParams(
            [np.asarray(w, dtype=float) for w in blob["weights"]],
            [np.asarray(b, dtype=float) for b in blob["biases"]],
        )
        scaler = FeatureScaler(
            np.asarray(blob["feature_mean"], dtype=float), np.asarray(blob["feature_std"], dtype=float)
        )
        return cls(params, scaler, QuantizerConfig(**blob["quantizer"]), blob["quantizer_kind"])


def label_step(
    scenario: Scenario, candidates: np.ndarray, gap_rtol: float = 1e-7
) -> tuple[np.ndarray, EnergyBreakdown] | None:
    """Cheapest solvable candidate (ties -> lowest candidate index), or None.

    Falls back to the no-caching decision when every candidate is unsolvable;
    returns None when even that is infeasible (the scenario carries no label).
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=bool))
    uniq, inverse = np.unique(candidates, axis=0, return_inverse=True)
    results = solve_allocation_batch(scenario, uniq, gap_rtol=gap_rtol)
    objective = np.array([r.objective if r.status == "optimal" else np.inf for r in results])
    per_candidate = objective[inverse]

    if not np.isfinite(per_candidate).any():
        zeros = np.zeros(scenario.num_services, dtype=bool)
        results = solve_allocation_batch(scenario, zeros[None, :], gap_rtol=gap_rtol)
        if results[0].status != "optimal":
            return None
        return zeros, expected_energy(scenario, zeros, results[0].allocation)

    pick = int(np.argmin(per_candidate))
    res = results[inverse[pick]]
    decision = candidates[pick]
    return decision, expected_energy(scenario, decision, res.allocation)


def _candidates_for(policy_kind: str, logits, scores, scenario, quantizer, rng) -> np.ndarray:
    if policy_kind == "order-preserving":
        return order_preserving_quantize(
            scores, scenario.output_bits, scenario.cache_capacity_bits, quantizer.num_candidates
        )
    return stochastic_quantize(logits, scenario.output_bits, scenario.cache_capacity_bits, quantizer, rng)


def _build_test_set(config: TrainConfig, scenario_config: ScenarioConfig, master_seed: int, scaler):
    """Held-out scenarios labeled once by exhaustive search; infeasible draws skipped."""
    X, Y, kept = [], [], 0
    for i in range(config.test_size * 8):
        if kept == config.test_size:
            break
        scen = sample_scenario(scenario_config, _stream_seed(master_seed, _STREAM_TEST, i))
        try:
            best = optimal_caching(scen, gap_rtol=config.gap_rtol)
        except InfeasibleScenarioError:
            continue
        X.append(scaler.apply(scenario_features(scen)))
        Y.append(best.decision.astype(float))
        kept += 1
    if not X:
        raise InfeasibleScenarioError("no feasible held-out scenario found for the test set")
    return np.array(X), np.array(Y)


def train(config: TrainConfig, scenario_config: ScenarioConfig, master_seed: int):
    """Run the offline loop; returns (TrainedPolicy, loss rows).

    Loss rows are (iteration, train_loss, test_loss): batch MSE right before
    each update and held-out MSE right after it.
    """
    scaler = FeatureScaler.fit(scenario_config, master_seed, config.scaler_samples)
    feat_dim = 2 * scenario_config.num_locations + 2 * scenario_config.num_services
    dims = (feat_dim, *config.hidden_dims, scenario_config.num_services)
    params = init_mlp(dims, np.random.default_rng(_stream_seed(master_seed, _STREAM_INIT)))
    velocity = params.zeros_like()

    X_test, Y_test = _build_test_set(config, scenario_config, master_seed, scaler)
    rng_quant = np.random.default_rng(_stream_seed(master_seed, _STREAM_QUANTIZE))
    rng_batch = np.random.default_rng(_stream_seed(master_seed, _STREAM_BATCH))

    buffer = ReplayBuffer(config.buffer_capacity)
    rows: list[tuple[int, float, float]] = []
    for t in range(1, config.iterations + 1):
        scen = sample_scenario(scenario_config, _stream_seed(master_seed, _STREAM_TRAIN, t))
        x = scaler.apply(scenario_features(scen))
        logits, scores = forward(params, x)
        candidates = _candidates_for(config.quantizer_kind, logits, scores, scen, config.quantizer, rng_quant)
        labeled = label_step(scen, candidates, config.gap_rtol)
        if labeled is not None:
            buffer.push(x, labeled[0].astype(float))

        if t % config.train_interval == 0 and len(buffer) >= config.batch_size:
            X, Y = buffer.sample(config.batch_size, rng_batch)
            train_loss, grad = loss_and_grads(params, X, Y)
            sgd_momentum_step(params, grad, velocity, config.learning_rate, config.momentum)
            rows.append((t, train_loss, mse_loss(params, X_test, Y_test)))

    policy = TrainedPolicy(params, scaler, config.quantizer, config.quantizer_kind)
    return policy, rows


def infer(policy: TrainedPolicy, scenario: Scenario, rng=None, gap_rtol: float = 1e-7) -> PolicyResult:
    """Score, quantize, and return the best labeled decision for one scenario."""
    if rng is None:
        rng = np.random.default_rng(0)
    logits, scores = forward(policy.params, policy.scaler.apply(scenario_features(scenario)))
    candidates = _candidates_for(policy.quantizer_kind, logits, scores, scenario, policy.quantizer, rng)
    labeled = label_step(scenario, candidates, gap_rtol)
    if labeled is None:
        raise InfeasibleScenarioError("no candidate decision admits a feasible allocation")
    decision, energy = labeled
    stats = {"solver_calls": len(np.unique(candidates, axis=0)), "candidates": len(candidates)}
    return PolicyResult(decision, energy, stats)
