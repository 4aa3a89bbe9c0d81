"""Train/eval loops producing one MetricsRecord per batch (train) or per pass (eval)."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DomainError, NonFiniteError, NumericalAbort, ZeroDenominatorError
from ..models import ModelConfig, ParamSet, forward, init_params
from ..tensor import Tape, Tensor, backward
from .data import Dataset
from .losses import L1_TARGETS, cross_entropy_loss, l1_activation_penalty, mean_abs, total_objective
from .optim import OptimizerState, optimizer_step

METRIC_FIELDS = ("step", "epoch", "split", "loss", "l1_penalty", "accuracy", "mean_abs_v", "wall_ms")
_NUMERIC_FAILURES = (NonFiniteError, ZeroDenominatorError, DomainError)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 0.01
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 50
    epochs: int = 5
    seed: int = 0
    lambda_l1: float = 0.0
    sigma: float = 1.0
    dataset: str = "blobs"
    l1_target: str = "v"
    record_wall_time: bool = False

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}", "optimizer")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}", "lr")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "batch_size")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", "epochs")
        if not self.lambda_l1 >= 0:
            raise ConfigError(f"lambda_l1 must be >= 0, got {self.lambda_l1}", "lambda_l1")
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}", "sigma")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)", "momentum")
        if self.l1_target not in L1_TARGETS:
            raise ConfigError(f"l1_target must be one of {L1_TARGETS}", "l1_target")


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    epoch: int
    split: str
    loss: float
    l1_penalty: float
    accuracy: float
    mean_abs_v: float
    wall_ms: float

    def as_row(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_row(cls, row: dict) -> "MetricsRecord":
        return cls(
            step=int(row["step"]),
            epoch=int(row["epoch"]),
            split=row["split"],
            loss=float(row["loss"]),
            l1_penalty=float(row["l1_penalty"]),
            accuracy=float(row["accuracy"]),
            mean_abs_v=float(row["mean_abs_v"]),
            wall_ms=float(row["wall_ms"]),
        )


def accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of rows whose argmax equals the target; ties go to the lowest class index."""
    return float(np.mean(np.argmax(logits, axis=1) == targets))


def _model_input(model: ModelConfig, xb: np.ndarray):
    if model.kind == "charlstm":
        return xb
    if model.kind == "mlp":
        xb = xb.reshape(len(xb), -1)
    return Tensor(xb)


def _flat_targets(model: ModelConfig, yb: np.ndarray) -> np.ndarray:
    # char-LSTM logits are time-major
    return yb.T.reshape(-1) if model.kind == "charlstm" else yb


def _abort(exc: Exception, step: int, epoch: int, records: list) -> NumericalAbort:
    diag = {"step": step, "epoch": epoch, "layer": getattr(exc, "layer", "loss"),
            "error": f"{type(exc).__name__}: {exc}"}
    err = NumericalAbort(f"numerical failure at step {step}: {exc}", diag)
    err.records = records
    return err


def batch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([int(seed) & 0xFFFF_FFFF, epoch]).permutation(n)


def train_epoch(
    model: ModelConfig,
    params: ParamSet,
    data: Dataset,
    config: TrainConfig,
    *,
    epoch: int = 1,
    step: int = 0,
    opt_state: OptimizerState | None = None,
) -> tuple[ParamSet, list[MetricsRecord]]:
    """One shuffled pass over the train split.

    ``opt_state`` is advanced in place so Adam/momentum carry across epochs.
    Raises :class:`NumericalAbort` (with ``records`` so far) on a non-finite loss.
    """
    opt_state = opt_state if opt_state is not None else OptimizerState()
    x, y = data.split("train")
    order = batch_order(len(x), config.seed, epoch)
    records: list[MetricsRecord] = []
    for start in range(0, len(order), config.batch_size):
        idx = order[start : start + config.batch_size]
        step += 1
        t0 = time.perf_counter()
        targets = _flat_targets(model, y[idx])
        try:
            tape = Tape()
            leaves = {k: tape.leaf(v) for k, v in params.items()}
            logits, states = forward(leaves, _model_input(model, x[idx]), model)
            loss = cross_entropy_loss(logits, targets)
            penalty = l1_activation_penalty(states, config.lambda_l1, config.l1_target)
            objective = total_objective(loss, penalty)
            grads = backward(tape, objective)
        except _NUMERIC_FAILURES as exc:
            raise _abort(exc, step, epoch, records) from exc
        params, opt_state = optimizer_step(params, {k: grads[v.node] for k, v in leaves.items()}, config, opt_state)
        wall = (time.perf_counter() - t0) * 1000.0 if config.record_wall_time else 0.0
        records.append(MetricsRecord(step, epoch, "train", loss.item(), penalty.item(),
                                     accuracy(logits.data, targets), mean_abs(states, config.l1_target), wall))
    return params, records


def evaluate(
    model: ModelConfig,
    params: ParamSet,
    data: Dataset,
    split: str = "valid",
    config: TrainConfig | None = None,
    *,
    step: int = 0,
    epoch: int = 0,
) -> MetricsRecord:
    """Loss/accuracy over a split in batch-size chunks (normalizers see each chunk's statistics)."""
    config = config or TrainConfig()
    t0 = time.perf_counter()
    x, y = data.split(split)
    if len(x) == 0:
        raise ConfigError(f"split {split!r} is empty", "data")
    loss_sum = pen_sum = hits = abs_sum = 0.0
    rows = elems = 0
    for start in range(0, len(x), config.batch_size):
        xb, yb = x[start : start + config.batch_size], y[start : start + config.batch_size]
        targets = _flat_targets(model, yb)
        logits, states = forward(params, _model_input(model, xb), model)
        n = len(targets)
        loss_sum += cross_entropy_loss(logits, targets).item() * n
        pen_sum += l1_activation_penalty(states, config.lambda_l1, config.l1_target).item() * n
        hits += accuracy(logits.data, targets) * n
        count = sum(s.v.size for s in states)
        abs_sum += mean_abs(states, config.l1_target) * count
        rows += n
        elems += count
    wall = (time.perf_counter() - t0) * 1000.0 if config.record_wall_time else 0.0
    return MetricsRecord(step, epoch, split, loss_sum / rows, pen_sum / rows, hits / rows,
                         abs_sum / elems if elems else 0.0, wall)


def fit(model: ModelConfig, data: Dataset, config: TrainConfig, params: ParamSet | None = None):
    """Train for ``config.epochs`` epochs with a validation pass after each.

    Returns ``(params, records)``; on abort the :class:`NumericalAbort` carries every record so far.
    """
    params = params if params is not None else init_params(model, config.seed)
    opt_state = OptimizerState()
    records: list[MetricsRecord] = []
    step = 0
    has_valid = len(data.handle.valid_idx) > 0
    for epoch in range(1, config.epochs + 1):
        try:
            params, batch_records = train_epoch(model, params, data, config, epoch=epoch, step=step, opt_state=opt_state)
        except NumericalAbort as exc:
            exc.records = records + exc.records
            raise
        records.extend(batch_records)
        step = batch_records[-1].step
        if has_valid:
            try:
                records.append(evaluate(model, params, data, "valid", config, step=step, epoch=epoch))
            except _NUMERIC_FAILURES as exc:
                raise _abort(exc, step, epoch, records) from exc
    return params, records
