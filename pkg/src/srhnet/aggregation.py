"""Recurrent cost aggregation.

Two aggregators share one interface (``reset_states`` / ``step``):

* :class:`SRHAggregator` -- two pre-processing ConvGRUs, then two stacked
  recurrent hourglasses whose encoders carry GRU memory at 1/2 and 1/4 scale.
* :class:`StackedGRUAggregator` -- three ConvGRUs at a single scale, the
  baseline the hourglass design is compared against.

Both consume one cost map per disparity level and keep all memory in an
explicit list of hidden states, so nothing grows with the number of levels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops, tensor
from .cost import CostMap
from .nn import Conv2d, ConvTranspose2d, Module
from .tensor import Tensor

GRUStateSet = list  # list[Tensor], one hidden state per recurrent cell


@dataclass
class AggregatedSlice:
    intermediate: Tensor  # "output1", used only for intermediate supervision
    final: Tensor  # "output2"
    level: int


class ConvGRUCell(Module):
    def __init__(self, cin: int, hidden: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cin = cin
        self.hidden = hidden
        # update (z) and reset (r) gates computed by one conv, z first
        self.gates = Conv2d(cin + hidden, 2 * hidden, 3, rng=rng)
        self.cand = Conv2d(cin + hidden, hidden, 3, rng=rng)


def gru_step(cell: ConvGRUCell, x: Tensor, h: Tensor, return_gates: bool = False):
    """One convolutional GRU update; returns the new hidden state.

    z = sigmoid(conv([x; h]))_z, r = sigmoid(conv([x; h]))_r,
    h~ = tanh(conv([x; r*h])), h' = (1 - z) * h + z * h~.
    """
    if x.shape[1] != cell.cin or h.shape[1] != cell.hidden:
        raise ValueError(f"gru_step: channels ({x.shape[1]}, {h.shape[1]}) != cell ({cell.cin}, {cell.hidden})")
    if x.shape[0] != h.shape[0] or x.shape[2:] != h.shape[2:]:
        raise ValueError(f"gru_step: input {x.shape} and state {h.shape} disagree")
    zr = ops.sigmoid(cell.gates(ops.concat_axis([x, h], axis=1)))
    z = ops.slice_axis(zr, 1, 0, cell.hidden)
    r = ops.slice_axis(zr, 1, cell.hidden, 2 * cell.hidden)
    if tensor.DEBUG and not (np.all(zr.data > 0) and np.all(zr.data < 1)):
        raise FloatingPointError("GRU gate left the open unit interval")
    h_cand = ops.tanh(cell.cand(ops.concat_axis([x, ops.mul(r, h)], axis=1)))
    h_new = ops.add(h, ops.mul(z, ops.sub(h_cand, h)))
    if return_gates:
        return h_new, z, r, h_cand
    return h_new


class Hourglass(Module):
    def __init__(self, channels: int = 32, widths=(48, 64), rng=None):
        rng = rng or np.random.default_rng(0)
        c1, c2 = widths
        self.channels = channels
        self.widths = (c1, c2)
        self.down1 = Conv2d(channels, c1, 3, stride=2, rng=rng)
        self.gru1 = ConvGRUCell(c1, c1, rng=rng)
        self.down2 = Conv2d(c1, c2, 3, stride=2, rng=rng)
        self.gru2 = ConvGRUCell(c2, c2, rng=rng)
        self.up1 = ConvTranspose2d(c2, c1, rng=rng)
        self.up2 = ConvTranspose2d(c1, channels, rng=rng)


def hourglass_step(hg: Hourglass, x: Tensor, states, skip: Tensor | None = None):
    """Encode with recurrent memory at 1/2 and 1/4 scale, decode back to ``x``'s size.

    ``skip`` (optional, 1/2 scale) is added to the first encoder output; the
    stacked aggregator passes the previous hourglass's 1/2-scale decoder map
    here.  Returns ``(y, [s_half, s_quarter], u_half)``.
    """
    h, w = x.shape[-2:]
    if h % 4 or w % 4:
        raise ValueError(f"hourglass input {h}x{w} must be divisible by 4")
    a = ops.relu(hg.down1(x))
    if skip is not None:
        a = ops.add(a, skip)
    s_half = gru_step(hg.gru1, a, states[0])
    b = ops.relu(hg.down2(s_half))
    s_quarter = gru_step(hg.gru2, b, states[1])
    u_half = ops.relu(ops.add(hg.up1(s_quarter), s_half))
    y = ops.add(hg.up2(u_half), x)
    return y, [s_half, s_quarter], u_half


class _Head(Module):
    """Two plain 3x3 convs reducing features to a 1-channel cost slice."""

    def __init__(self, channels: int, rng):
        self.conv1 = Conv2d(channels, channels, 3, rng=rng)
        self.conv2 = Conv2d(channels, 1, 3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(ops.relu(self.conv1(x)))


def _zeros(n, c, h, w, dtype) -> Tensor:
    return Tensor(np.zeros((n, c, h, w), dtype=dtype))


class SRHAggregator(Module):
    kind = "srh"

    def __init__(self, cin: int = 64, hidden: int = 32, hg_widths=(48, 64), rng=None):
        rng = rng or np.random.default_rng(0)
        self.cin = cin
        self.hidden = hidden
        self.pre1 = ConvGRUCell(cin, hidden, rng=rng)
        self.pre2 = ConvGRUCell(hidden, hidden, rng=rng)
        self.hg1 = Hourglass(hidden, hg_widths, rng=rng)
        self.hg2 = Hourglass(hidden, hg_widths, rng=rng)
        self.head1 = _Head(hidden, rng)
        self.head2 = _Head(hidden, rng)

    def state_shapes(self, n: int, h: int, w: int):
        if h % 4 or w % 4:
            raise ValueError(f"cost map {h}x{w} must be divisible by 4")
        c1, c2 = self.hg1.widths
        full = [(n, self.hidden, h, w)] * 2
        per_hg = [(n, c1, h // 2, w // 2), (n, c2, h // 4, w // 4)]
        return full + per_hg + per_hg

    def reset_states(self, n: int, h: int, w: int, dtype=None) -> GRUStateSet:
        dtype = dtype or tensor.get_dtype()
        return [_zeros(*shape, dtype) for shape in self.state_shapes(n, h, w)]

    def step(self, c: CostMap, states: GRUStateSet):
        return srh_step(self, c, states)


def _check_geometry(agg, c: CostMap, states) -> None:
    x = c.values
    if x.shape[1] != agg.cin:
        raise ValueError(f"cost map has {x.shape[1]} channels, aggregator expects {agg.cin}")
    expected = agg.state_shapes(*x.shape[:1], *x.shape[2:])
    got = [s.shape for s in states]
    if got != [tuple(e) for e in expected]:
        raise ValueError(f"state geometry {got} does not match cost map {x.shape}")


def srh_step(agg: SRHAggregator, c: CostMap, states: GRUStateSet):
    _check_geometry(agg, c, states)
    p1 = gru_step(agg.pre1, c.values, states[0])
    p2 = gru_step(agg.pre2, p1, states[1])
    y1, hg1_states, u_half = hourglass_step(agg.hg1, p2, states[2:4])
    y2, hg2_states, _ = hourglass_step(agg.hg2, y1, states[4:6], skip=u_half)
    out = AggregatedSlice(agg.head1(y1), agg.head2(y2), c.level)
    return out, [p1, p2] + hg1_states + hg2_states


class StackedGRUAggregator(Module):
    kind = "stacked_gru"

    def __init__(self, cin: int = 64, hidden: int = 32, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cin = cin
        self.hidden = hidden
        self.cells = [ConvGRUCell(cin, hidden, rng=rng),
                      ConvGRUCell(hidden, hidden, rng=rng),
                      ConvGRUCell(hidden, hidden, rng=rng)]
        self.head = _Head(hidden, rng)

    def state_shapes(self, n: int, h: int, w: int):
        return [(n, self.hidden, h, w)] * 3

    def reset_states(self, n: int, h: int, w: int, dtype=None) -> GRUStateSet:
        dtype = dtype or tensor.get_dtype()
        return [_zeros(*shape, dtype) for shape in self.state_shapes(n, h, w)]

    def step(self, c: CostMap, states: GRUStateSet):
        return stacked_gru_step(self, c, states)


def stacked_gru_step(agg: StackedGRUAggregator, c: CostMap, states: GRUStateSet):
    _check_geometry(agg, c, states)
    x = c.values
    new_states = []
    for cell, h in zip(agg.cells, states):
        x = gru_step(cell, x, h)
        new_states.append(x)
    out = agg.head(x)
    return AggregatedSlice(out, out, c.level), new_states


def reset_states(agg, geometry) -> GRUStateSet:
    """Zero states for a cost-map geometry ``(n, h, w)``."""
    return agg.reset_states(*geometry)


def make_aggregator(kind: str, cin: int, hidden: int = 32, hg_widths=(48, 64), rng=None):
    if kind == "srh":
        return SRHAggregator(cin, hidden, hg_widths, rng=rng)
    if kind == "stacked_gru":
        return StackedGRUAggregator(cin, hidden, rng=rng)
    raise ValueError(f"unknown aggregator {kind!r}; expected 'srh' or 'stacked_gru'")
