"""Disparity regression (soft argmin) and the two-stage smooth-L1 loss.

Level ``i`` of the aggregated cost sequence corresponds to a shift of
``i * s`` full-resolution pixels, so full-resolution disparity ``d`` reads
the sequence at fractional level ``min(d / s, L - 1)``.  The batch path
builds the whole ``[N, D, H, W]`` volume; :class:`StreamingSoftArgmin`
reduces the same expectation one slice at a time with three accumulators.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import memory, ops
from .tensor import Tensor, record


@dataclass(frozen=True)
class LossWeights:
    w1: float = 0.4
    w2: float = 1.2

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValueError(f"loss weights must be non-negative with positive sum, got ({self.w1}, {self.w2})")


@dataclass
class GroundTruth:
    disparity: np.ndarray  # [N, 1, H, W], pixels
    valid_mask: np.ndarray  # same shape, bool

    @classmethod
    def from_disparity(cls, disparity: np.ndarray, d_max: int) -> "GroundTruth":
        """Valid pixels: finite and strictly inside (0, d_max)."""
        d = np.asarray(disparity)
        with np.errstate(invalid="ignore"):
            mask = np.isfinite(d) & (d > 0) & (d < d_max)
        return cls(np.where(mask, d, 0.0), mask)

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())


# ---------------------------------------------------------------- upsampling

def level_weights(n_levels: int, d_max: int, downsample: int) -> np.ndarray:
    """[D, L] matrix mapping level samples to full-resolution disparity samples."""
    if downsample == 1 and n_levels == d_max:
        return np.eye(d_max)
    src = np.minimum(np.arange(d_max) / downsample, n_levels - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_levels - 1)
    t = src - i0
    m = np.zeros((d_max, n_levels))
    np.add.at(m, (np.arange(d_max), i0), 1 - t)
    np.add.at(m, (np.arange(d_max), i1), t)
    return m


def _infer_downsample(h: int, w: int, height: int, width: int) -> int:
    if height % h or width % w or height // h != width // w:
        raise ValueError(f"slice {h}x{w} is not an integer downsampling of {height}x{width}")
    return height // h


def upsample_slice(slice_: Tensor, height: int, width: int) -> Tensor:
    """Bilinear spatial upsampling of one cost slice (pixel-center aligned)."""
    return ops.bilinear_resize2d(slice_, height, width, align_corners=False)


def upsample_cost(slices, height: int, width: int, d_max: int) -> Tensor:
    """Trilinear upsampling of L cost slices [N,1,h,w] to a [N,D,H,W] volume."""
    slices = list(slices)
    if not slices:
        raise ValueError("upsample_cost needs at least one slice")
    h, w = slices[0].shape[-2:]
    s = _infer_downsample(h, w, height, width)
    vol = ops.concat_axis(slices, axis=1)
    vol = upsample_slice(vol, height, width)
    return ops.axis_linear(vol, level_weights(len(slices), d_max, s), axis=1)


# ---------------------------------------------------------------- soft argmin

def soft_argmin_batch(volume: Tensor) -> Tensor:
    """Per-pixel expectation of the level index under softmax(-cost).

    Accumulates in float64 and rounds once to the volume's dtype, so the
    result agrees with the streaming reduction to the last bit in practice.
    """
    d = volume.shape[1]
    idx = np.arange(d, dtype=np.float64)
    # one float64 workspace, exponentiated and normalised in place
    p = memory.track_array(np.negative(volume.data, dtype=np.float64))
    p -= p.max(axis=1, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=1, keepdims=True)
    mean = np.expand_dims(np.tensordot(p, idx, axes=([1], [0])), 1)
    out = Tensor(mean.astype(volume.dtype))

    def vjp(g):
        # d mean / d cost_j = -p_j (j - mean)
        shape = (1, d) + (1,) * (volume.ndim - 2)
        return ((-g * p * (idx.reshape(shape) - mean)).astype(volume.dtype),)

    return record(out, (volume,), vjp)


class StreamingSoftArgmin:
    """One-pass soft argmin over slices arriving in ascending level order.

    Keeps a running max ``m`` of the negated cost, the normalizer ``Z`` and
    the index-weighted sum ``S``; both sums are rescaled whenever ``m``
    grows.  With ``levels != d_max`` the previous slice is held to
    interpolate the disparity samples lying between two levels.
    """

    def __init__(self, d_max: int, levels: int | None = None, downsample: int = 1):
        self.d_max = d_max
        self.levels = d_max if levels is None else levels
        self.downsample = downsample
        self._resample = not (self.levels == d_max and downsample == 1)
        self._next_level = 0
        self._next_out = 0
        self._prev: np.ndarray | None = None
        self._dtype = None
        self.m: Tensor | None = None  # accumulators are float64 whatever the slice dtype
        self.z: Tensor | None = None
        self.s: Tensor | None = None

    def _accumulate(self, j: int, cost: np.ndarray) -> None:
        a = -cost.astype(np.float64)
        if self.m is None:
            self.m = Tensor(a.copy())
            self.z = Tensor(np.ones_like(a))
            self.s = Tensor(np.full_like(a, j))
            return
        m, z, s = self.m.data, self.z.data, self.s.data
        m_new = np.maximum(m, a)
        rescale = np.exp(m - m_new)
        e = np.exp(a - m_new)
        z *= rescale
        z += e
        s *= rescale
        s += j * e
        m[...] = m_new

    def push(self, level: int, slice_: Tensor) -> None:
        if level != self._next_level:
            raise ValueError(f"expected level {self._next_level}, got {level}")
        if level >= self.levels:
            raise ValueError(f"level {level} beyond the declared {self.levels} levels")
        self._next_level += 1
        self._dtype = slice_.dtype
        cur = slice_.data.astype(np.float64)
        if not self._resample:
            self._accumulate(level, cur)
            self._next_out += 1
            return
        prev = self._prev
        while self._next_out < self.d_max:
            j = self._next_out
            src = min(j / self.downsample, self.levels - 1)
            k0 = int(np.floor(src))
            t = src - k0
            if t == 0 and k0 == level:
                val = cur
            elif t > 0 and k0 + 1 == level:
                val = (1 - t) * prev + t * cur
            else:
                break
            self._accumulate(j, val)
            self._next_out += 1
        self._prev = cur

    def result(self) -> Tensor:
        if self.m is None:
            raise ValueError("no slices were pushed")
        if self._next_out < self.d_max:
            raise ValueError(f"stream ended after {self._next_out} of {self.d_max} disparity samples")
        return Tensor((self.s.data / self.z.data).astype(self._dtype))


def soft_argmin_streaming(stream, d_max: int | None = None, levels: int | None = None,
                          downsample: int = 1) -> Tensor:
    """Reduce an iterable of ``(level, slice)`` pairs; see :class:`StreamingSoftArgmin`."""
    reducer = None
    for level, slice_ in stream:
        if reducer is None:
            reducer = StreamingSoftArgmin(d_max if d_max is not None else levels, levels, downsample)
        reducer.push(level, slice_)
    if reducer is None:
        raise ValueError("empty slice stream")
    return reducer.result()


# ---------------------------------------------------------------- loss

def smooth_l1(pred: Tensor, gt: GroundTruth) -> Tensor:
    """Mean over valid pixels of l(|pred - gt|), l(x) = x^2/2 (x < 1) or x - 1/2."""
    if pred.shape != gt.disparity.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.disparity.shape} differ")
    n = gt.n_valid
    if n == 0:
        raise ValueError("ground truth has no valid pixels")
    diff = pred.data - gt.disparity.astype(pred.dtype)
    x = np.abs(diff)
    per_pixel = np.where(x < 1, 0.5 * x * x, x - 0.5)
    value = (per_pixel * gt.valid_mask).sum() / n
    out = Tensor(np.asarray(value, dtype=pred.dtype))
    grad_map = (np.clip(diff, -1, 1) * gt.valid_mask / n).astype(pred.dtype)
    return record(out, (pred,), lambda g: (g * grad_map,))


def total_loss(d_m: Tensor, d_f: Tensor, gt: GroundTruth, weights: LossWeights = LossWeights()) -> Tensor:
    return ops.add(ops.scale(smooth_l1(d_m, gt), weights.w1), ops.scale(smooth_l1(d_f, gt), weights.w2))
