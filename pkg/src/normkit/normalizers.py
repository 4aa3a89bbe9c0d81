"""Two-step normalizer: subtract a region-A mean, then divide by a smoothed region-B RMS.

    v_j = z_j - mean_{A_j} z
    y_j = v_j / sqrt(sigma^2 + mean_{B_j} v^2)
    out = gain * y + bias      (when affine)

Batch, layer and divisive normalization are presets that differ only in the
regions A and B.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractError,
    InvalidRegionError,
    ShapeMismatchError,
    StateMismatchError,
    ZeroDenominatorError,
)
from .regions import NormRegion, apply_average
from .tensor import Tensor, add, as_tensor, div, mul, region_mean, reshape, sqrt, square, sub

PRESETS = ("BN", "LN", "DN", "DN-no-center", "identity-like")
DEFAULT_DN_WINDOW = ("all", 5, 5)

# Declared once and echoed into every experiment artifact.
SIGMA_PLACEMENT = "denom = sqrt(sigma^2 + mean_B(v^2))"


@dataclass(frozen=True)
class NormalizerSpec:
    region_b: NormRegion
    region_a: NormRegion | None = None
    sigma: float = 1.0
    affine: bool = False
    gain: Tensor | None = None
    bias: Tensor | None = None
    lambda_l1: float = 0.0
    allow_zero_sigma: bool = False

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ContractError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.sigma == 0 and not self.allow_zero_sigma:
            raise ContractError("sigma = 0 can divide by zero; set allow_zero_sigma to acknowledge")
        if not np.isfinite(self.lambda_l1) or self.lambda_l1 < 0:
            raise ContractError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")
        if self.affine != (self.gain is not None) or self.affine != (self.bias is not None):
            raise ContractError("gain and bias must be given exactly when affine is true")
        if self.affine:
            if self.gain.ndim != 1 or self.gain.shape != self.bias.shape:
                raise ShapeMismatchError(f"gain {self.gain.shape} / bias {self.bias.shape} must be matching 1-d tensors")

    @property
    def channels(self) -> int | None:
        return self.gain.shape[0] if self.affine else None

    def for_ndim(self, ndim: int) -> "NormalizerSpec":
        a = self.region_a.for_ndim(ndim) if self.region_a is not None else None
        return dataclasses.replace(self, region_a=a, region_b=self.region_b.for_ndim(ndim))

    def with_affine(self, gain: Tensor, bias: Tensor) -> "NormalizerSpec":
        return dataclasses.replace(self, affine=True, gain=gain, bias=bias)

    def to_dict(self) -> dict:
        return {
            "region_a": self.region_a.to_dict() if self.region_a is not None else None,
            "region_b": self.region_b.to_dict(),
            "sigma": self.sigma,
            "affine": self.affine,
            "lambda_l1": self.lambda_l1,
            "sigma_placement": SIGMA_PLACEMENT,
        }


@dataclass(frozen=True)
class NormState:
    """Per-call values retained for the L1 penalty and the closed-form backward.

    ``v`` and ``denom`` carry tape nodes when the forward pass was recorded.
    """

    v: Tensor
    denom: Tensor
    y: Tensor
    z: Tensor | None = None
    spec: NormalizerSpec | None = field(default=None, compare=False)


def _channel_view(t: Tensor, ndim: int) -> Tensor:
    shape = [1] * ndim
    shape[1] = t.shape[0]
    return reshape(t, tuple(shape))


def center(z, region_a: NormRegion | None) -> Tensor:
    z = as_tensor(z)
    if region_a is None:
        return z
    return sub(z, region_mean(z, region_a))


def divisive(v, region_b: NormRegion, sigma: float) -> tuple[Tensor, NormState]:
    v = as_tensor(v)
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    second = region_mean(square(v), region_b)
    denom = sqrt(add(second, sigma * sigma)) if sigma > 0 else sqrt(second)
    if sigma == 0 and np.any(denom.data == 0.0):
        bad = tuple(int(i) for i in np.argwhere(denom.data == 0.0)[0])
        raise ZeroDenominatorError(f"sigma = 0 and the region of position {bad} is all zero")
    y = div(v, denom)
    return y, NormState(v=v, denom=denom, y=y)


def _check_spec(z: Tensor, spec: NormalizerSpec) -> None:
    for region in (spec.region_a, spec.region_b):
        if region is not None:
            region.validate(z.ndim)
    if spec.affine and spec.gain.shape[0] != z.shape[1]:
        raise ShapeMismatchError(f"affine parameters have {spec.gain.shape[0]} channels, input has {z.shape[1]}")


def normalize_forward(z, spec: NormalizerSpec) -> tuple[Tensor, NormState]:
    z = as_tensor(z)
    _check_spec(z, spec)
    v = center(z, spec.region_a)
    y, state = divisive(v, spec.region_b, spec.sigma)
    out = y
    if spec.affine:
        out = add(mul(y, _channel_view(spec.gain, z.ndim)), _channel_view(spec.bias, z.ndim))
    return out, dataclasses.replace(state, z=z, spec=spec)


def normalize_backward(state: NormState, spec: NormalizerSpec, upstream) -> tuple[Tensor, Tensor | None, Tensor | None]:
    """Closed-form gradients of the normalizer output w.r.t. input, gain and bias.

    Divisive Jacobian: dy_j/dv_k = [k == j] / d_j - v_j v_k / (|B_j| d_j^3) for k in B_j,
    composed with the centering Jacobian [k == j] - 1/|A_j| for k in A_j.
    Gain/bias gradients are ``None`` for non-affine specs.
    """
    if state.spec is not spec and state.spec != spec:
        raise StateMismatchError("state was produced by a different normalizer spec")
    upstream = as_tensor(upstream)
    v, d = state.v.data, state.denom.data
    if upstream.shape != v.shape:
        raise StateMismatchError(f"upstream shape {upstream.shape} does not match state shape {v.shape}")
    g = upstream.data
    y = v / d
    dgain = dbias = None
    if spec.affine:
        axes = tuple(i for i in range(v.ndim) if i != 1)
        dgain = Tensor((g * y).sum(axis=axes))
        dbias = Tensor(g.sum(axis=axes))
        view = [1] * v.ndim
        view[1] = v.shape[1]
        g = g * spec.gain.data.reshape(view)
    dv = g / d - v * apply_average(g * v / d**3, spec.region_b, transpose=True)
    dz = dv if spec.region_a is None else dv - apply_average(dv, spec.region_a, transpose=True)
    return Tensor(dz), dgain, dbias


def _dn_region(channels_sel, h, w, ndim: int) -> NormRegion:
    space = (h, w) if ndim == 4 else "none"
    return NormRegion(over_batch=False, over_channels=channels_sel, over_space=space)


def spec_preset(
    kind: str,
    channels: int,
    dn_window=DEFAULT_DN_WINDOW,
    sigma: float = 1.0,
    lambda_l1: float = 0.0,
    affine: bool = False,
    *,
    ndim: int = 4,
    allow_zero_sigma: bool = False,
) -> NormalizerSpec:
    """Build one of the named normalizers for ``ndim``-d inputs with ``channels`` channels/features.

    ``dn_window`` is ``(c, h, w)``; ``c`` may be ``"all"``. Spatial extents are
    ignored for 2-d inputs.
    """
    if channels < 1:
        raise ContractError(f"channels must be >= 1, got {channels}")
    if ndim not in (2, 4):
        raise InvalidRegionError(f"presets exist for 2-d and 4-d inputs, got ndim={ndim}")
    canonical = {k.lower(): k for k in PRESETS}
    if kind.lower() not in canonical:
        raise ContractError(f"unknown preset {kind!r}; expected one of {PRESETS}")
    kind = canonical[kind.lower()]

    c_ext, h_ext, w_ext = dn_window
    c_sel = "all" if c_ext in ("all", None) else c_ext
    # constructing the region validates oddness
    dn = _dn_region(c_sel, h_ext, w_ext, 4)
    dn = dn.for_ndim(ndim)

    if kind == "BN":
        a = b = NormRegion(over_batch=True, over_channels="none", over_space="all").for_ndim(ndim)
    elif kind == "LN":
        a = b = NormRegion(over_batch=False, over_channels="all", over_space="all").for_ndim(ndim)
    elif kind == "DN":
        a = b = dn
    elif kind == "DN-no-center":
        a, b = None, dn
    else:
        a, b = None, NormRegion(over_batch=False, over_channels=1, over_space=(1, 1)).for_ndim(ndim)

    gain = Tensor(np.ones(channels)) if affine else None
    bias = Tensor(np.zeros(channels)) if affine else None
    return NormalizerSpec(region_b=b, region_a=a, sigma=float(sigma), affine=affine, gain=gain, bias=bias,
                          lambda_l1=float(lambda_l1), allow_zero_sigma=allow_zero_sigma)
