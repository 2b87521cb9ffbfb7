"""Run configuration: dataclass defaults, flat ``key=value`` files, CLI overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in str(text).replace(" ", "").split(",") if t)


@dataclass
class RunConfig:
    # geometry
    d_max: int = 192
    downsample: int = 4
    levels: int = 0  # 0: ceil(d_max / downsample)
    feature_channels: int = 32
    spp_bins: str = "1,2,4,8"
    instance_norm: bool = False
    # aggregation
    aggregator: str = "srh"
    agg_hidden: int = 32
    hg_widths: str = "48,64"
    # loss / optimizer
    w1: float = 0.4
    w2: float = 1.2
    lr_schedule: str = "0:1e-3"  # step:lr pairs, piecewise constant
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # data
    crop_h: int = 240
    crop_w: int = 576
    batch_size: int = 3
    means: str = "0.5,0.5,0.5"
    stds: str = "0.5,0.5,0.5"
    # schedule
    epochs: int = 10
    steps: int = 0  # >0 overrides epochs
    log_every: int = 10
    seed: int = 0
    precision: str = "f32"

    def __post_init__(self):
        if self.aggregator not in ("srh", "stacked_gru"):
            raise ValueError(f"aggregator must be 'srh' or 'stacked_gru', got {self.aggregator!r}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be 'f32' or 'f64', got {self.precision!r}")
        if self.d_max < 1 or self.downsample < 1 or self.feature_channels < 1:
            raise ValueError("d_max, downsample and feature_channels must be positive")
        self.lr_at(0)  # validates the schedule

    @property
    def n_levels(self) -> int:
        return self.levels or -(-self.d_max // self.downsample)

    @property
    def input_multiple(self) -> int:
        """Image sides must be multiples of this (the hourglass halves features twice)."""
        return self.downsample * (4 if self.aggregator == "srh" else 1)

    @property
    def spp_bins_tuple(self) -> tuple[int, ...]:
        return _ints(self.spp_bins)

    @property
    def hg_widths_tuple(self) -> tuple[int, int]:
        widths = _ints(self.hg_widths)
        if len(widths) != 2:
            raise ValueError(f"hg_widths needs two entries, got {self.hg_widths!r}")
        return widths

    @property
    def means_tuple(self) -> tuple[float, ...]:
        return _floats(self.means)

    @property
    def stds_tuple(self) -> tuple[float, ...]:
        return _floats(self.stds)

    def lr_at(self, step: int) -> float:
        points = []
        for item in self.lr_schedule.split(","):
            start, _, lr = item.strip().partition(":")
            if not lr:
                start, lr = "0", start
            points.append((int(start), float(lr)))
        points.sort()
        if not points or points[0][0] != 0:
            raise ValueError(f"lr_schedule must start at step 0: {self.lr_schedule!r}")
        current = points[0][1]
        for start, lr in points:
            if step >= start:
                current = lr
        return current

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise KeyError(f"unknown config key {name!r}")
    kind = types[name]
    if kind in ("bool", bool):
        low = str(raw).strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"{name}: not a boolean: {raw!r}")
        return low in ("1", "true", "yes")
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return str(raw).strip()


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key = key.strip().replace("-", "_")
        values[key] = _coerce(key, val.strip())
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then non-``None`` ``overrides``."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = _coerce(key, val) if isinstance(val, str) else val
    return RunConfig(**values)
