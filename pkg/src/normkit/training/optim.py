"""SGD with momentum and Adam over a named parameter dict."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from ..tensor import Tensor


@dataclass
class OptimizerState:
    step: int = 0
    slots: dict = field(default_factory=dict)


def optimizer_step(params: dict, grads: dict, config, state: OptimizerState | None = None):
    """Apply one update; returns ``(new_params, state)``. ``state`` is advanced in place.

    ``config`` needs ``optimizer``, ``lr`` and ``momentum`` / ``beta1``, ``beta2``, ``adam_eps``.
    """
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise ContractError(f"gradient keys do not match parameters: {missing}")
    state = state if state is not None else OptimizerState()
    state.step += 1
    lr = config.lr
    new = {}
    if config.optimizer == "sgd":
        for name, p in params.items():
            g = _raw(grads[name])
            if config.momentum:
                buf = state.slots.get(name)
                buf = g.copy() if buf is None else config.momentum * buf + g
                state.slots[name] = buf
                g = buf
            new[name] = Tensor(p.data - lr * g)
    elif config.optimizer == "adam":
        b1, b2, eps = config.beta1, config.beta2, config.adam_eps
        t = state.step
        for name, p in params.items():
            g = _raw(grads[name])
            m, v = state.slots.get(name, (np.zeros_like(g), np.zeros_like(g)))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            state.slots[name] = (m, v)
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            new[name] = Tensor(p.data - lr * m_hat / (np.sqrt(v_hat) + eps))
    else:
        raise ContractError(f"unknown optimizer {config.optimizer!r}")
    return new, state


def _raw(g) -> np.ndarray:
    return np.asarray(g.data if isinstance(g, Tensor) else g, dtype=np.float64)
