"""Objective terms: cross-entropy and the L1 penalty on normalizer activations."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ContractError
from ..normalizers import NormState
from ..tensor import Tensor, abs_, add, as_tensor, log_softmax, mul, reduce_sum

L1_TARGETS = ("v", "y", "z")


def _target(state: NormState, target: str) -> Tensor:
    if target == "v":
        return state.v
    if target == "y":
        return state.y
    if target == "z":
        return state.z if state.z is not None else state.v
    raise ContractError(f"l1 target must be one of {L1_TARGETS}, got {target!r}")


def l1_activation_penalty(states: Sequence[NormState], lam: float, target: str = "v") -> Tensor:
    """``lam * sum|a| / count`` over the chosen activation of every state (centered ``v`` by default)."""
    if lam < 0:
        raise ContractError(f"lambda must be >= 0, got {lam}")
    acts = [_target(s, target) for s in states]
    count = sum(a.size for a in acts)
    if count == 0:
        return Tensor(0.0)
    total = None
    for a in acts:
        term = reduce_sum(abs_(a))
        total = term if total is None else add(total, term)
    return mul(total, lam / count)


def mean_abs(states: Sequence[NormState], target: str = "v") -> float:
    acts = [_target(s, target).data for s in states]
    count = sum(a.size for a in acts)
    return float(sum(np.abs(a).sum() for a in acts) / count) if count else 0.0


def cross_entropy_loss(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(``logits``)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets).reshape(-1)
    if logits.ndim != 2 or targets.shape[0] != logits.shape[0]:
        raise ContractError(f"logits {logits.shape} and {targets.shape[0]} targets do not line up")
    k = logits.shape[1]
    if not np.issubdtype(targets.dtype, np.integer) or targets.min() < 0 or targets.max() >= k:
        raise ContractError(f"targets must be integer class ids in [0, {k})")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(targets.shape[0]), targets] = 1.0
    picked = reduce_sum(mul(log_softmax(logits), Tensor(onehot)))
    return mul(picked, -1.0 / targets.shape[0])


def total_objective(loss, penalty) -> Tensor:
    loss, penalty = as_tensor(loss), as_tensor(penalty)
    if loss.size != 1 or penalty.size != 1:
        raise ContractError("objective terms must be scalars")
    return add(loss, penalty)
