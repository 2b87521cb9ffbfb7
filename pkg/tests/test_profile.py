import gc

import numpy as np
import pytest

from srhnet import memory
from srhnet.config import RunConfig
from srhnet.model import SRHNet
from srhnet.profiling import Sweep, measure_frame, profile, variation
from srhnet.tensor import Tensor

SMALL = RunConfig(feature_channels=8, agg_hidden=8, hg_widths="8,8", spp_bins="1,2")


@pytest.fixture(scope="module")
def model():
    return SRHNet(SMALL)


@pytest.mark.parametrize("axis,points", [("d_max", ()), ("d_max", (64, 64)), ("height", (64, 32)), ("depth", (1,))])
def test_bad_sweeps_rejected(axis, points):
    with pytest.raises(ValueError):
        Sweep(axis, points)


def test_variation():
    assert variation([2, 3, 4]) == 1.0
    assert variation([5]) == 0.0


def test_streaming_peak_flat_in_d_max_batch_grows(model):
    sweep = Sweep("d_max", (16, 32, 48))
    streaming = profile(model, sweep, 32, 64, streaming=True)
    batched = profile(model, sweep, 32, 64, streaming=False)
    assert [p.d_max for p in streaming.points] == [16, 32, 48]
    assert variation(streaming.peaks()) < 0.3
    assert batched.peaks()[-1] / batched.peaks()[0] >= 2.5
    assert model.config == SMALL  # restored after the sweep


def test_cost_map_peak_doubles_with_height(model):
    report = profile(model, Sweep("height", (32, 64)), 32, 64)
    a, b = (p.cost_map_peak_bytes for p in report.points)
    assert a > 0 and 1.8 <= b / a <= 2.2
    assert "cost_map_peak_bytes" in report.table().splitlines()[0]
    assert len(report.table().splitlines()) == 3


def test_tracker_does_not_undercount_live_tensors():
    """Every Tensor created under tracking and still alive is covered by live_bytes."""
    m = SRHNet(SMALL.replace(d_max=16))
    gc.collect()
    before = {id(o) for o in gc.get_objects() if isinstance(o, Tensor)}
    rng = np.random.default_rng(0)
    left, right = rng.random((1, 3, 32, 64)), rng.random((1, 3, 32, 64))
    with memory.track_memory() as tracker:
        d_m, d_f = m.forward(left, right)  # keeps the whole graph alive
        gc.collect()
        new = [o for o in gc.get_objects() if isinstance(o, Tensor) and id(o) not in before]
        buffers = {}
        for t in new:
            base = t.data if t.data.base is None else t.data.base
            buffers[id(base)] = base.nbytes
        assert 0 < sum(buffers.values()) <= tracker.live_bytes <= tracker.peak_bytes
    del d_m, d_f


def test_checkpoint_path_accepted(tmp_path):
    from srhnet.checkpoint import save_checkpoint

    cfg = SMALL.replace(d_max=16)
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, SRHNet(cfg).state_dict())
    cfg.save(str(path) + ".cfg")
    report = profile(path, Sweep("width", (32, 64)), 32, 64)
    assert [p.width for p in report.points] == [32, 64]


def test_measure_frame_times_and_counts(model):
    point = measure_frame(model, 32, 32)
    assert point.peak_bytes > point.cost_map_peak_bytes > 0 and point.seconds > 0
