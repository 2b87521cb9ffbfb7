"""Peak-activation and wall-time profiling of inference across a resolution or d_max sweep."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import memory
from .model import SRHNet
from .tensor import precision

AXES = ("height", "width", "d_max")


@dataclass(frozen=True)
class Sweep:
    axis: str  # "height" | "width" | "d_max"
    points: tuple[int, ...]

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"sweep axis must be one of {AXES}, got {self.axis!r}")
        if not self.points:
            raise ValueError("empty sweep")
        if any(b <= a for a, b in zip(self.points, self.points[1:])):
            raise ValueError(f"sweep points must be strictly increasing, got {list(self.points)}")
        object.__setattr__(self, "points", tuple(int(p) for p in self.points))


@dataclass
class SweepPoint:
    value: int
    height: int
    width: int
    d_max: int
    peak_bytes: int  # all tensors and kernel scratch created during the frame
    cost_map_peak_bytes: int
    seconds: float


@dataclass
class ProfileReport:
    axis: str
    streaming: bool
    points: list[SweepPoint] = field(default_factory=list)

    def peaks(self) -> list[int]:
        return [p.peak_bytes for p in self.points]

    def table(self) -> str:
        # the swept axis is one of the geometry columns already
        rows = ["height\twidth\td_max\tpeak_bytes\tcost_map_peak_bytes\tseconds"]
        for p in self.points:
            rows.append(f"{p.height}\t{p.width}\t{p.d_max}\t{p.peak_bytes}\t"
                        f"{p.cost_map_peak_bytes}\t{p.seconds:.4f}")
        return "\n".join(rows)


def measure_frame(model: SRHNet, height: int, width: int, streaming: bool = True, seed: int = 0) -> SweepPoint:
    """Run one random frame through ``model.predict`` under a fresh tracker.

    Inputs and weights exist before tracking starts, so the peak counts
    activations and scratch only.
    """
    rng = np.random.default_rng(seed)
    with precision(model.config.precision):
        left = rng.random((1, 3, height, width))
        right = rng.random((1, 3, height, width))
        start = time.perf_counter()
        with memory.track_memory() as tracker:
            out = model.predict(left, right, streaming=streaming)
            del out
        seconds = time.perf_counter() - start
    return SweepPoint(0, height, width, model.config.d_max, tracker.peak_bytes,
                      tracker.peak_by_tag.get("cost_map", 0), seconds)


def profile(model: SRHNet, sweep: Sweep, height: int = 128, width: int = 256,
            streaming: bool = True, seed: int = 0) -> ProfileReport:
    """Measure every sweep point; the non-swept dimensions stay at ``height``/``width``/config d_max.

    ``model`` may also be a checkpoint path (loaded with its sidecar config).
    """
    if not isinstance(model, SRHNet):
        from .train import load_model

        model = load_model(model)
    report = ProfileReport(sweep.axis, streaming)
    base_config = model.config
    try:
        for value in sweep.points:
            h, w = height, width
            if sweep.axis == "height":
                h = value
            elif sweep.axis == "width":
                w = value
            else:
                # weights do not depend on d_max; the level count follows it
                model.config = base_config.replace(d_max=value, levels=0)
            point = measure_frame(model, h, w, streaming, seed)
            point.value = value
            report.points.append(point)
    finally:
        model.config = base_config
    return report


def variation(values: Sequence[float]) -> float:
    """(max - min) / min."""
    lo = min(values)
    return (max(values) - lo) / lo
