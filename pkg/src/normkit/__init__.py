"""Unified batch/layer/divisive normalization with a small autodiff core."""

__version__ = "0.1.0"

from .normalizers import (  # noqa: E402
    NormalizerSpec,
    NormState,
    center,
    divisive,
    normalize_backward,
    normalize_forward,
    spec_preset,
)
from .regions import NormRegion, resolve_region  # noqa: E402
from .tensor import Tape, Tensor, backward, grad_check  # noqa: E402

__all__ = [
    "NormRegion", "NormalizerSpec", "NormState", "Tape", "Tensor", "backward", "center",
    "divisive", "grad_check", "normalize_backward", "normalize_forward", "resolve_region", "spec_preset",
]
