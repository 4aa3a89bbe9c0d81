"""Desk-scale architectures with a normalizer after every pre-activation.

Parameters live in a plain ``dict[str, Tensor]`` whose insertion order is the
canonical iteration order. Forward functions are pure: they take the parameter
dict and return logits plus the :class:`NormState` of every normalizer applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NormkitError, ShapeMismatchError
from .normalizers import NormalizerSpec, NormState, normalize_forward
from .tensor import (
    Tensor,
    add,
    avg_pool2d,
    concat,
    conv2d,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    tanh,
)

ParamSet = dict  # name -> Tensor, insertion-ordered
KINDS = ("mlp", "convnet", "charlstm")
GATES = ("i", "f", "o", "g")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture settings.

    ``input_shape`` is ``(D,)`` for the MLP, ``(C, H, W)`` for the ConvNet and
    ``(vocab,)`` for the char-LSTM. ``hidden`` lists layer widths (MLP), conv
    channel counts (ConvNet) or holds the single LSTM state size.
    """

    kind: str
    input_shape: tuple
    hidden: tuple
    num_classes: int
    norm: NormalizerSpec | None = None
    activation: str = "relu"
    kernel: int = 3
    pool: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.kind not in KINDS:
            raise ContractError(f"unknown model kind {self.kind!r}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ContractError("at least one hidden layer with positive width is required")
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")
        if self.activation not in ("relu", "tanh"):
            raise ContractError(f"activation must be relu or tanh, got {self.activation!r}")
        if self.kind == "convnet" and (len(self.input_shape) != 3 or self.kernel % 2 == 0):
            raise ContractError("convnet needs input_shape (C, H, W) and an odd kernel")
        if self.kind in ("mlp", "charlstm") and len(self.input_shape) != 1:
            raise ContractError(f"{self.kind} needs a 1-d input_shape")
        if self.kind == "charlstm" and len(self.hidden) != 1:
            raise ContractError("charlstm supports exactly one recurrent layer")

    @property
    def norm_ndim(self) -> int:
        return 4 if self.kind == "convnet" else 2


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    limit = np.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape))


def init_params(config: ModelConfig, seed: int) -> ParamSet:
    """Fan-in scaled uniform weights, zero biases, unit gains; deterministic in ``seed``."""
    rng = np.random.default_rng(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
    affine = config.norm is not None and config.norm.affine
    params: ParamSet = {}

    def norm_params(prefix: str, width: int):
        if affine:
            params[f"{prefix}.gain"] = Tensor(np.ones(width))
            params[f"{prefix}.bias"] = Tensor(np.zeros(width))

    if config.kind == "mlp":
        width = config.input_shape[0]
        for i, h in enumerate(config.hidden):
            params[f"l{i}.w"] = _uniform(rng, width, (width, h))
            params[f"l{i}.b"] = Tensor(np.zeros((1, h)))
            norm_params(f"l{i}.norm", h)
            width = h
    elif config.kind == "convnet":
        c, hh, ww = config.input_shape
        k = config.kernel
        for i, f in enumerate(config.hidden):
            params[f"conv{i}.w"] = _uniform(rng, c * k * k, (f, c, k, k))
            params[f"conv{i}.b"] = Tensor(np.zeros((1, f, 1, 1)))
            norm_params(f"conv{i}.norm", f)
            c = f
            if config.pool:
                hh, ww = max(hh // 2, 1), max(ww // 2, 1)
        width = c * hh * ww
    else:
        vocab, hidden = config.input_shape[0], config.hidden[0]
        params["lstm.wx"] = _uniform(rng, vocab, (vocab, 4 * hidden))
        params["lstm.wh"] = _uniform(rng, hidden, (hidden, 4 * hidden))
        params["lstm.b"] = Tensor(np.zeros((1, 4 * hidden)))
        for gate in GATES:
            norm_params(f"lstm.norm.{gate}", hidden)
        width = hidden
    params["head.w"] = _uniform(rng, width, (width, config.num_classes))
    params["head.b"] = Tensor(np.zeros((1, config.num_classes)))
    return params


def _activate(x: Tensor, name: str) -> Tensor:
    return relu(x) if name == "relu" else tanh(x)


def _normalize(params: ParamSet, config: ModelConfig, prefix: str, z: Tensor, states: list) -> Tensor:
    if config.norm is None:
        return z
    spec = config.norm.for_ndim(z.ndim)
    if spec.affine:
        spec = spec.with_affine(params[f"{prefix}.gain"], params[f"{prefix}.bias"])
    try:
        out, state = normalize_forward(z, spec)
    except NormkitError as exc:
        exc.layer = prefix
        raise
    states.append(state)
    return out


def _head(params: ParamSet, h: Tensor) -> Tensor:
    return add(matmul(h, params["head.w"]), params["head.b"])


def mlp_forward(params: ParamSet, x, config: ModelConfig) -> tuple[Tensor, list[NormState]]:
    if x.ndim != 2 or x.shape[1] != config.input_shape[0]:
        raise ShapeMismatchError(f"mlp expects N x {config.input_shape[0]} input, got {x.shape}")
    states: list[NormState] = []
    h = x
    for i in range(len(config.hidden)):
        z = add(matmul(h, params[f"l{i}.w"]), params[f"l{i}.b"])
        h = _activate(_normalize(params, config, f"l{i}.norm", z, states), config.activation)
    return _head(params, h), states


def convnet_forward(params: ParamSet, x, config: ModelConfig) -> tuple[Tensor, list[NormState]]:
    if x.ndim != 4 or tuple(x.shape[1:]) != config.input_shape:
        raise ShapeMismatchError(f"convnet expects N x {config.input_shape} input, got {x.shape}")
    states: list[NormState] = []
    h = x
    for i in range(len(config.hidden)):
        z = add(conv2d(h, params[f"conv{i}.w"], pad=config.kernel // 2), params[f"conv{i}.b"])
        h = _activate(_normalize(params, config, f"conv{i}.norm", z, states), config.activation)
        if config.pool and h.shape[2] >= 2 and h.shape[3] >= 2:
            h = avg_pool2d(h, 2)
    flat = reshape(h, (h.shape[0], -1))
    return _head(params, flat), states


def lstm_cell_forward(params: ParamSet, x_t, h_prev, c_prev, config: ModelConfig):
    """One LSTM step with each gate block normalized on its own (per timestep).

    Returns ``(h, c, states)``; gate order in the fused weight is i, f, o, g.
    """
    hidden = config.hidden[0]
    if h_prev.shape != (x_t.shape[0], hidden) or c_prev.shape != h_prev.shape:
        raise ShapeMismatchError(f"state shapes {h_prev.shape}/{c_prev.shape} do not match N x {hidden}")
    z = add(add(matmul(x_t, params["lstm.wx"]), matmul(h_prev, params["lstm.wh"])), params["lstm.b"])
    states: list[NormState] = []
    blocks = {}
    for k, gate in enumerate(GATES):
        zg = slice_axis(z, 1, k * hidden, (k + 1) * hidden)
        blocks[gate] = _normalize(params, config, f"lstm.norm.{gate}", zg, states)
    i, f, o = sigmoid(blocks["i"]), sigmoid(blocks["f"]), sigmoid(blocks["o"])
    g = tanh(blocks["g"])
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c, states


def one_hot(tokens: np.ndarray, depth: int) -> np.ndarray:
    out = np.zeros(tokens.shape + (depth,))
    np.put_along_axis(out, tokens[..., None], 1.0, axis=-1)
    return out


def charlstm_forward(params: ParamSet, tokens, config: ModelConfig) -> tuple[Tensor, list[NormState]]:
    """Run the cell over ``N x T`` token ids from a zero state.

    Logits come back time-major, flattened to ``(T*N) x vocab``.
    """
    tokens = np.asarray(tokens.data if isinstance(tokens, Tensor) else tokens, dtype=np.int64)
    if tokens.ndim != 2:
        raise ShapeMismatchError(f"charlstm expects N x T token ids, got shape {tokens.shape}")
    n, steps = tokens.shape
    vocab, hidden = config.input_shape[0], config.hidden[0]
    if tokens.min() < 0 or tokens.max() >= vocab:
        raise ShapeMismatchError("token id outside the vocabulary")
    onehots = one_hot(tokens, vocab)
    h = c = Tensor(np.zeros((n, hidden)))
    states: list[NormState] = []
    logits = []
    for t in range(steps):
        h, c, st = lstm_cell_forward(params, Tensor(onehots[:, t]), h, c, config)
        states.extend(st)
        logits.append(_head(params, h))
    return concat(logits, axis=0), states


FORWARD = {"mlp": mlp_forward, "convnet": convnet_forward, "charlstm": charlstm_forward}


def forward(params: ParamSet, x, config: ModelConfig) -> tuple[Tensor, list[NormState]]:
    return FORWARD[config.kind](params, x, config)
