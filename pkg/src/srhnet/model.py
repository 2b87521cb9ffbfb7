"""The end-to-end network: features -> cost sequence -> recurrent aggregation -> soft argmin."""
from __future__ import annotations

import numpy as np

from . import head
from .aggregation import make_aggregator
from .config import RunConfig
from .cost import DisparityRange, cost_sequence
from .features import FeatureExtractor, normalize_image
from .nn import Module
from .tensor import Tensor, get_dtype, no_grad


class SRHNet(Module):
    def __init__(self, config: RunConfig, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(config.seed)
        self.config = config
        self.extractor = FeatureExtractor(config.feature_channels, config.downsample,
                                          config.spp_bins_tuple, config.instance_norm, rng=rng)
        self.aggregator = make_aggregator(config.aggregator, 2 * config.feature_channels,
                                          config.agg_hidden, config.hg_widths_tuple, rng=rng)

    @property
    def disparity_range(self) -> DisparityRange:
        c = self.config
        return DisparityRange(c.d_max, c.downsample, c.levels or None)

    def features(self, left: Tensor, right: Tensor) -> tuple[Tensor, Tensor]:
        c = self.config
        left = normalize_image(_as_input(left), c.means_tuple, c.stds_tuple)
        right = normalize_image(_as_input(right), c.means_tuple, c.stds_tuple)
        return self.extractor(left), self.extractor(right)

    def aggregated_slices(self, f_left: Tensor, f_right: Tensor):
        """Yield one :class:`AggregatedSlice` per disparity level."""
        n, _, h, w = f_left.shape
        states = self.aggregator.reset_states(n, h, w, f_left.dtype)
        for cmap in cost_sequence(f_left, f_right, self.disparity_range):
            out, states = self.aggregator.step(cmap, states)
            yield out

    def forward(self, left, right) -> tuple[Tensor, Tensor]:
        """Batch path: returns (intermediate, final) disparity maps [N,1,H,W]."""
        height, width = left.shape[-2:]
        f_left, f_right = self.features(left, right)
        slices = list(self.aggregated_slices(f_left, f_right))
        d_max = self.config.d_max
        d_f = head.soft_argmin_batch(head.upsample_cost([s.final for s in slices], height, width, d_max))
        if all(s.intermediate is s.final for s in slices):
            return d_f, d_f
        d_m = head.soft_argmin_batch(head.upsample_cost([s.intermediate for s in slices], height, width, d_max))
        return d_m, d_f

    def predict(self, left, right, streaming: bool = True) -> Tensor:
        """Inference on the final output only; no graph is recorded."""
        height, width = left.shape[-2:]
        s = self.config.downsample
        k = self.config.input_multiple
        if height % k or width % k:
            raise ValueError(f"input {height}x{width} is not divisible by {k}; pad to "
                             f"{-(-height // k) * k}x{-(-width // k) * k}")
        with no_grad():
            f_left, f_right = self.features(left, right)
            if not streaming:
                return self.forward_batch_final(f_left, f_right, height, width)
            reducer = head.StreamingSoftArgmin(self.config.d_max, self.disparity_range.L, s)
            for sl in self.aggregated_slices(f_left, f_right):
                reducer.push(sl.level, head.upsample_slice(sl.final, height, width))
                del sl
            return reducer.result()

    def forward_batch_final(self, f_left, f_right, height, width) -> Tensor:
        finals = [sl.final for sl in self.aggregated_slices(f_left, f_right)]
        volume = head.upsample_cost(finals, height, width, self.config.d_max)
        del finals
        return head.soft_argmin_batch(volume)


def _as_input(x) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.dtype == get_dtype() else Tensor(x.data, dtype=get_dtype())
    return Tensor(np.asarray(x, dtype=get_dtype()))
