"""Accumulation regions: which neighbours of position j enter a normalizer's averages.

A region is a product of independent per-axis selections (batch, channel, and the
two spatial axes), so averaging over it factorizes into one small averaging matrix
per axis. Windows are centred on j and clipped at tensor edges; each row of an
averaging matrix divides by the number of in-bounds members, never by the nominal
window size.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .errors import InvalidRegionError

ChannelSel = Union[str, int]
SpaceSel = Union[str, tuple]

BATCH_AXIS = 0
CHANNEL_AXIS = 1


def _check_extent(extent, what: str) -> None:
    if isinstance(extent, bool) or not isinstance(extent, (int, np.integer)):
        raise InvalidRegionError(f"{what} window extent must be an int, got {extent!r}")
    if extent < 1 or extent % 2 == 0:
        raise InvalidRegionError(f"{what} window extent must be odd and >= 1, got {extent}")


@dataclass(frozen=True)
class NormRegion:
    """Declarative accumulation set.

    ``over_channels`` is ``"none"``, ``"all"`` or an odd window extent;
    ``over_space`` is ``"none"``, ``"all"`` or an ``(h, w)`` pair of odd extents.
    On 2-d ``N x D`` inputs the channel selection governs the feature axis and
    ``over_space`` must be ``"none"``.
    """

    over_batch: bool = False
    over_channels: ChannelSel = "none"
    over_space: SpaceSel = "none"

    def __post_init__(self):
        if self.over_channels not in ("none", "all"):
            _check_extent(self.over_channels, "channel")
        if isinstance(self.over_space, list):
            object.__setattr__(self, "over_space", tuple(self.over_space))
        if self.over_space not in ("none", "all"):
            if not (isinstance(self.over_space, tuple) and len(self.over_space) == 2):
                raise InvalidRegionError(f"over_space must be 'none', 'all' or (h, w); got {self.over_space!r}")
            for e in self.over_space:
                _check_extent(e, "spatial")
        if not self.over_batch and self.over_channels == "none" and self.over_space == "none":
            raise InvalidRegionError("region includes no axis")

    def validate(self, ndim: int) -> None:
        if ndim == 2:
            if self.over_space != "none":
                raise InvalidRegionError("2-d inputs have no spatial axes; over_space must be 'none'")
        elif ndim != 4:
            raise InvalidRegionError(f"regions apply to 2-d (N x D) or 4-d (N x C x H x W) tensors, got rank {ndim}")

    def for_ndim(self, ndim: int) -> "NormRegion":
        """The same region with spatial selection dropped when ``ndim == 2``."""
        if ndim == 2 and self.over_space != "none":
            return NormRegion(self.over_batch, self.over_channels, "none")
        return self

    def axis_selections(self, ndim: int) -> list[tuple[int, object]]:
        """``(axis, selection)`` pairs in fixed axis order; selection is ``"all"`` or an odd extent."""
        self.validate(ndim)
        sels: list[tuple[int, object]] = []
        if self.over_batch:
            sels.append((BATCH_AXIS, "all"))
        if self.over_channels != "none":
            sels.append((CHANNEL_AXIS, self.over_channels))
        if ndim == 4 and self.over_space != "none":
            hs, ws = ("all", "all") if self.over_space == "all" else self.over_space
            sels.append((2, hs))
            sels.append((3, ws))
        return sels

    def to_dict(self) -> dict:
        space = self.over_space if isinstance(self.over_space, str) else list(self.over_space)
        return {"over_batch": self.over_batch, "over_channels": self.over_channels, "over_space": space}

    @classmethod
    def from_dict(cls, d: dict) -> "NormRegion":
        return cls(
            over_batch=bool(d.get("over_batch", False)),
            over_channels=d.get("over_channels", "none"),
            over_space=d.get("over_space", "none"),
        )


def _window(n: int, sel, j: int) -> range:
    if sel == "all":
        return range(n)
    r = sel // 2
    return range(max(0, j - r), min(n, j + r + 1))


@lru_cache(maxsize=512)
def averaging_matrix(n: int, sel) -> np.ndarray:
    """Row-stochastic ``n x n`` matrix; row j averages the clipped window around j."""
    m = np.zeros((n, n))
    for j in range(n):
        members = _window(n, sel, j)
        m[j, members.start:members.stop] = 1.0 / len(members)
    m.setflags(write=False)
    return m


def resolve_region(region: NormRegion, shape, j) -> set[tuple[int, ...]]:
    """Enumerate the accumulation set of position ``j`` explicitly."""
    shape = tuple(shape)
    j = tuple(j)
    region.validate(len(shape))
    if len(j) != len(shape) or any(not 0 <= a < n for a, n in zip(j, shape)):
        raise InvalidRegionError(f"index {j} out of bounds for shape {shape}")
    per_axis: list[range] = [range(a, a + 1) for a in j]
    for axis, sel in region.axis_selections(len(shape)):
        per_axis[axis] = _window(shape[axis], sel, j[axis])
    return set(itertools.product(*per_axis))


def apply_average(x: np.ndarray, region: NormRegion, transpose: bool = False) -> np.ndarray:
    """Region mean of ``x`` broadcast back to every position (or its adjoint when ``transpose``)."""
    out = x
    for axis, sel in region.axis_selections(x.ndim):
        m = averaging_matrix(x.shape[axis], sel)
        if transpose:
            m = m.T
        out = np.moveaxis(np.tensordot(m, out, axes=([1], [axis])), 0, axis)
    return np.ascontiguousarray(out)


def region_sizes(region: NormRegion, shape) -> np.ndarray:
    """``|R_j|`` for every position of a tensor with ``shape``."""
    shape = tuple(shape)
    sizes = np.ones(shape)
    for axis, sel in region.axis_selections(len(shape)):
        counts = np.array([len(_window(shape[axis], sel, j)) for j in range(shape[axis])], dtype=float)
        view = [1] * len(shape)
        view[axis] = shape[axis]
        sizes = sizes * counts.reshape(view)
    return sizes
