import pytest

from srhnet.config import RunConfig, load_config, parse_config_text


def test_defaults():
    c = RunConfig()
    assert (c.d_max, c.downsample, c.feature_channels, c.n_levels) == (192, 4, 32, 48)
    assert (c.w1, c.w2) == (0.4, 1.2)
    assert (c.beta1, c.beta2) == (0.9, 0.999)
    assert c.lr_at(0) == c.lr_at(10_000) == 1e-3
    assert (c.crop_h, c.crop_w) == (240, 576)
    assert c.spp_bins_tuple == (1, 2, 4, 8) and c.hg_widths_tuple == (48, 64)


def test_levels_override():
    assert RunConfig(levels=64).n_levels == 64


def test_precedence_cli_over_file_over_default(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nd_max = 64\nw1=0.0\naggregator=stacked_gru\ninstance_norm=true\n")
    c = load_config(path, {"d_max": 96, "w2": None})
    assert c.d_max == 96  # CLI
    assert c.w1 == 0.0 and c.aggregator == "stacked_gru" and c.instance_norm  # file
    assert c.w2 == 1.2  # default


def test_text_round_trip(tmp_path):
    c = RunConfig(d_max=17, w1=0.25, lr_schedule="0:1e-3,100:5e-4", instance_norm=True)
    c.save(tmp_path / "x.cfg")
    assert load_config(tmp_path / "x.cfg") == c


def test_lr_schedule():
    c = RunConfig(lr_schedule="0:1e-3, 100:5e-4, 50:2e-3")
    assert [c.lr_at(s) for s in (0, 49, 50, 99, 100, 500)] == [1e-3, 1e-3, 2e-3, 2e-3, 5e-4, 5e-4]
    with pytest.raises(ValueError):
        RunConfig(lr_schedule="10:1e-3")


@pytest.mark.parametrize("text,exc", [
    ("nonsense_key=1", KeyError),
    ("d_max", ValueError),
    ("instance_norm=maybe", ValueError),
    ("d_max=abc", ValueError),
])
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse_config_text(text)


@pytest.mark.parametrize("kwargs", [{"aggregator": "3dcnn"}, {"precision": "f16"}, {"d_max": 0}])
def test_validation(kwargs):
    with pytest.raises(ValueError):
        RunConfig(**kwargs)


def test_dash_keys_accepted():
    assert parse_config_text("d-max=32") == {"d_max": 32}
