"""
First-Order Optimizers over Named Parameter Tensors

Both optimizers are pure: ``update`` returns new parameter and state dicts
and never mutates its inputs, so a failed step leaves the last good state
untouched.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple, Union

import numpy as np

from .config import AdamConfig, TrainConfig
from .exceptions import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

Tensors = Dict[str, np.ndarray]


@dataclass
class OptimizerState:
    """
    Step counter plus named per-parameter buffers.

    Buffer names are ``"<slot>/<param>"``, e.g. ``"m/dict_2"`` for the first
    Adam moment of D₂. SGD keeps no buffers.
    """

    step: int = 0
    buffers: Tensors = field(default_factory=dict)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.step, {k: v.copy() for k, v in self.buffers.items()})


def _check_grads(params: Tensors, grads: Tensors) -> None:
    for name, value in params.items():
        if name not in grads:
            raise ShapeError("optimizer update", expected=f"gradient for '{name}'", actual=None)
        if grads[name].shape != value.shape:
            raise ShapeError(f"optimizer update ({name})", expected=value.shape,
                             actual=grads[name].shape)


class SGD:
    """Plain gradient descent: θ ← θ − lr·g"""

    name = "sgd"

    def __init__(self, lr: float):
        self.lr = lr

    def init_state(self, params: Tensors) -> OptimizerState:
        return OptimizerState()

    def update(
        self,
        params: Tensors,
        grads: Tensors,
        state: OptimizerState
    ) -> Tuple[Tensors, OptimizerState]:
        _check_grads(params, grads)
        new_params = {name: value - self.lr * grads[name] for name, value in params.items()}
        return new_params, OptimizerState(state.step + 1, {})


class Adam:
    """
    Adam with bias-corrected moments.

    Example:
        >>> opt = Adam(lr=1e-3)
        >>> state = opt.init_state(params)
        >>> params, state = opt.update(params, grads, state)
    """

    name = "adam"

    def __init__(self, lr: float, config: AdamConfig = AdamConfig()):
        self.lr = lr
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.eps

    def init_state(self, params: Tensors) -> OptimizerState:
        buffers: Tensors = {}
        for name, value in params.items():
            buffers[f"m/{name}"] = np.zeros_like(value, dtype=np.float64)
            buffers[f"v/{name}"] = np.zeros_like(value, dtype=np.float64)
        return OptimizerState(0, buffers)

    def update(
        self,
        params: Tensors,
        grads: Tensors,
        state: OptimizerState
    ) -> Tuple[Tensors, OptimizerState]:
        _check_grads(params, grads)
        t = state.step + 1
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t

        new_params: Tensors = {}
        buffers: Tensors = {}
        for name, value in params.items():
            g = grads[name]
            m = self.beta1 * state.buffers[f"m/{name}"] + (1.0 - self.beta1) * g
            v = self.beta2 * state.buffers[f"v/{name}"] + (1.0 - self.beta2) * (g * g)
            new_params[name] = value - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            buffers[f"m/{name}"] = m
            buffers[f"v/{name}"] = v
        return new_params, OptimizerState(t, buffers)


Optimizer = Union[SGD, Adam]


def make_optimizer(config: TrainConfig) -> Optimizer:
    """Build the optimizer named by ``config.optimizer``"""
    if config.optimizer == "adam":
        return Adam(config.learning_rate, config.adam)
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    raise ConfigurationError(f"Invalid optimizer: '{config.optimizer}'", config_field="optimizer")
