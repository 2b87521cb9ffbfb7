import struct

import numpy as np
import pytest

from srhnet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from srhnet.config import RunConfig
from srhnet.model import SRHNet


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a.weight": rng.standard_normal((3, 2, 3, 3)).astype(np.float32),
              "b": np.float32(rng.standard_normal(5)), "scalar": np.array(2.5, dtype=np.float32)}
    save_checkpoint(tmp_path / "c.bin", arrays)
    back = load_checkpoint(tmp_path / "c.bin")
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == np.shape(arrays[k]) and back[k].tobytes() == np.asarray(arrays[k]).tobytes()


def test_byte_layout(tmp_path):
    save_checkpoint(tmp_path / "c.bin", {"w": np.array([1.0, -2.0], dtype=np.float32)})
    expected = (b"SRHC" + struct.pack("<II", 1, 1) + struct.pack("<I", 1) + b"w"
                + struct.pack("<I", 1) + struct.pack("<Q", 2) + struct.pack("<2f", 1.0, -2.0))
    assert (tmp_path / "c.bin").read_bytes() == expected


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version"),
    (lambda b: b[:-1], "truncated"),
    (lambda b: b + b"\0", "trailing"),
])
def test_corruption_detected(tmp_path, mutate, match):
    save_checkpoint(tmp_path / "c.bin", {"w": np.zeros((2, 2), dtype=np.float32)})
    path = tmp_path / "c.bin"
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CheckpointError, match=match):
        load_checkpoint(path)


def test_model_state_round_trip(tmp_path):
    cfg = RunConfig(d_max=8, feature_channels=4, agg_hidden=4, hg_widths="4,4", spp_bins="1,2")
    model = SRHNet(cfg)
    save_checkpoint(tmp_path / "m.bin", model.state_dict())
    other = SRHNet(cfg.replace(seed=5))
    other.load_state_dict(load_checkpoint(tmp_path / "m.bin"))
    for name, p in model.named_parameters().items():
        assert other.named_parameters()[name].data.tobytes() == p.data.tobytes()
    with pytest.raises(KeyError):
        other.load_state_dict({})
