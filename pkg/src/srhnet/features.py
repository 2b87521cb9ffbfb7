"""Siamese feature extraction: strided residual trunk plus spatial pyramid pooling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv2d, Module
from .tensor import Tensor


@dataclass
class ImagePair:
    left: Tensor
    right: Tensor

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ValueError(f"left {self.left.shape} and right {self.right.shape} differ")
        if self.left.ndim != 4 or self.left.shape[1] != 3:
            raise ValueError(f"expected [N,3,H,W] images, got {self.left.shape}")


def normalize_image(raw: Tensor, means=(0.5, 0.5, 0.5), stds=(0.5, 0.5, 0.5)) -> Tensor:
    means = np.asarray(means, dtype=np.float64)
    stds = np.asarray(stds, dtype=np.float64)
    if np.any(stds <= 0):
        raise ValueError(f"standard deviations must be positive, got {stds.tolist()}")
    shift = means.reshape(1, -1, 1, 1).astype(raw.dtype)
    inv = (1.0 / stds).reshape(1, -1, 1, 1).astype(raw.dtype)
    return ops.mul(ops.sub(raw, Tensor(shift)), Tensor(inv))


class ResBlock(Module):
    def __init__(self, ch: int, rng, instance_norm: bool = False):
        self.conv1 = Conv2d(ch, ch, 3, rng=rng)
        self.conv2 = Conv2d(ch, ch, 3, rng=rng)
        self.instance_norm = instance_norm

    def _norm(self, x):
        return ops.instance_norm(x) if self.instance_norm else x

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.relu(self._norm(self.conv1(x)))
        y = self._norm(self.conv2(y))
        return ops.relu(ops.add(x, y))


class SPP(Module):
    """Pyramid pooling: adaptive average pools to ``bins`` x ``bins`` grids."""

    def __init__(self, cin: int, cout: int, bins=(1, 2, 4, 8), rng=None):
        self.bins = tuple(bins)
        branch_ch = max(1, cin // 4)
        self.branches = [Conv2d(cin, branch_ch, 1, rng=rng) for _ in self.bins]
        self.fuse = Conv2d(cin + branch_ch * len(self.bins), cout, 3, rng=rng)


def spp_fuse(spp: SPP, base: Tensor) -> Tensor:
    h, w = base.shape[-2:]
    coarsest = max(spp.bins)
    if h < coarsest or w < coarsest:
        raise ValueError(f"spp_fuse: {h}x{w} map is smaller than the {coarsest}x{coarsest} pooling grid")
    parts = [base]
    for k, conv in zip(spp.bins, spp.branches):
        pooled = ops.relu(conv(ops.adaptive_avg_pool2d(base, k, k)))
        parts.append(ops.bilinear_resize2d(pooled, h, w, align_corners=True))
    return spp.fuse(ops.concat_axis(parts, axis=1))


class FeatureExtractor(Module):
    """Stride-2 conv + two residual blocks per stage; one stage per factor of 2 in ``downsample``."""

    def __init__(self, channels: int = 32, downsample: int = 4, spp_bins=(1, 2, 4, 8),
                 instance_norm: bool = False, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        n_stages = int(np.log2(downsample))
        if downsample < 2 or 2**n_stages != downsample:
            raise ValueError(f"downsample must be a power of two >= 2, got {downsample}")
        self.channels = channels
        self.downsample = downsample
        widths = [max(4, channels // 2)] * (n_stages - 1) + [channels]
        self.stages = []
        cin = 3
        for width in widths:
            self.stages.append([Conv2d(cin, width, 3, stride=2, rng=rng),
                                ResBlock(width, rng, instance_norm),
                                ResBlock(width, rng, instance_norm)])
            cin = width
        self.spp = SPP(channels, channels, spp_bins, rng=rng)

    def trunk(self, x: Tensor) -> Tensor:
        for down, res1, res2 in self.stages:
            x = res2(res1(ops.relu(down(x))))
        return x

    def __call__(self, image: Tensor) -> Tensor:
        h, w = image.shape[-2:]
        s = self.downsample
        if h % s or w % s:
            raise ValueError(f"image {h}x{w} not divisible by {s}; pad to "
                             f"{-(-h // s) * s}x{-(-w // s) * s}")
        return spp_fuse(self.spp, self.trunk(image))


def extract_features(pair: ImagePair, extractor: FeatureExtractor) -> tuple[Tensor, Tensor]:
    """Run the shared-weight extractor on both views."""
    return extractor(pair.left), extractor(pair.right)
