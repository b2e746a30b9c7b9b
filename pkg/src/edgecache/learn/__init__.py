from edgecache.learn.mlp import MlpParams, forward, init_mlp, loss_and_grads, mse_loss, sgd_momentum_step
from edgecache.learn.quantize import (
    QuantizerConfig,
    order_preserving_quantize,
    repair,
    stochastic_quantize,
)
from edgecache.learn.trainer import (
    FeatureScaler,
    ReplayBuffer,
    TrainConfig,
    TrainedPolicy,
    infer,
    label_step,
    scenario_features,
    train,
)

__all__ = [
    "MlpParams",
    "forward",
    "init_mlp",
    "loss_and_grads",
    "mse_loss",
    "sgd_momentum_step",
    "QuantizerConfig",
    "order_preserving_quantize",
    "repair",
    "stochastic_quantize",
    "FeatureScaler",
    "ReplayBuffer",
    "TrainConfig",
    "TrainedPolicy",
    "infer",
    "label_step",
    "scenario_features",
    "train",
]
