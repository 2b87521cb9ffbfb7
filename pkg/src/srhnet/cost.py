"""Concatenation cost maps, one disparity level at a time."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

from . import memory, ops
from .tensor import Tensor


@dataclass(frozen=True)
class DisparityRange:
    d_max: int
    downsample: int = 4
    levels: int | None = None  # override; defaults to ceil(d_max / downsample)

    def __post_init__(self):
        if self.d_max < 1 or self.downsample < 1:
            raise ValueError(f"invalid disparity range d_max={self.d_max}, s={self.downsample}")
        if self.levels is not None and self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")

    @property
    def L(self) -> int:
        return self.levels if self.levels is not None else math.ceil(self.d_max / self.downsample)


@dataclass
class CostMap:
    level: int
    values: Tensor  # [N, 2*Cf, h, w], left block first


def warp_features(f_right: Tensor, i: int) -> Tensor:
    """Shift the right features ``i`` columns to the right, zero-filling the gap."""
    if i < 0:
        raise ValueError(f"warp level must be non-negative, got {i}")
    return ops.shift_columns(f_right, i)


def build_cost_map(f_left: Tensor, f_right_warped: Tensor, i: int) -> CostMap:
    if f_left.shape != f_right_warped.shape:
        raise ValueError(f"feature shapes differ: {f_left.shape} vs {f_right_warped.shape}")
    values = ops.concat_axis([f_left, f_right_warped], axis=1)
    memory.tag(values, "cost_map")
    return CostMap(i, values)


def cost_sequence(f_left: Tensor, f_right: Tensor, rng: DisparityRange) -> Iterator[CostMap]:
    """Yield C(0), ..., C(L-1) lazily; only the map being consumed is alive."""
    if f_left.shape != f_right.shape:
        raise ValueError(f"feature shapes differ: {f_left.shape} vs {f_right.shape}")
    for i in range(rng.L):
        yield build_cost_map(f_left, warp_features(f_right, i), i)
