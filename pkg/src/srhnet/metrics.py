"""Disparity error metrics over All / Noc regions."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

THRESHOLDS = (1, 2, 3, 4, 5)


@dataclass
class MetricsReport:
    epe: float
    err_rate: dict[int, float] = field(default_factory=dict)  # fraction with |error| > n px
    d1: float = 0.0  # |error| > 3 px AND > 5% of ground truth
    region: str = "all"
    n_pixels: int = 0

    def to_lines(self) -> str:
        out = [f"region={self.region}", f"n_pixels={self.n_pixels}", f"epe={self.epe:.6f}"]
        out += [f"err_{n}px={self.err_rate[n]:.6f}" for n in THRESHOLDS]
        out.append(f"d1={self.d1:.6f}")
        return "\n".join(out)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @staticmethod
    def table(reports) -> str:
        """Tab-separated table, one row per report."""
        header = ["region", "n_pixels", "epe"] + [f"err_{n}px" for n in THRESHOLDS] + ["d1"]
        rows = ["\t".join(header)]
        for r in reports:
            rows.append("\t".join([r.region, str(r.n_pixels), f"{r.epe:.6f}"]
                                  + [f"{r.err_rate[n]:.6f}" for n in THRESHOLDS] + [f"{r.d1:.6f}"]))
        return "\n".join(rows)


def region_mask(valid: np.ndarray, occluded: np.ndarray | None, region: str) -> np.ndarray:
    if region == "all":
        return np.asarray(valid, dtype=bool)
    if region == "noc":
        if occluded is None:
            raise ValueError("Noc metrics need an occlusion mask")
        return np.asarray(valid, dtype=bool) & ~np.asarray(occluded, dtype=bool)
    raise ValueError(f"unknown region {region!r}; expected 'all' or 'noc'")


def evaluate(pred: np.ndarray, gt_disparity: np.ndarray, valid: np.ndarray,
             region: str = "all", occluded: np.ndarray | None = None) -> MetricsReport:
    """Pixel-pooled metrics; arrays may carry any matching shape (e.g. a stacked dataset)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt_disparity, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = region_mask(valid, occluded, region)
    n = int(mask.sum())
    if n == 0:
        raise ValueError(f"region {region!r} contains no valid pixels")
    err = np.abs(pred[mask] - gt[mask])
    rates = {t: int(np.count_nonzero(err > t)) / n for t in THRESHOLDS}
    d1 = int(np.count_nonzero((err > 3) & (err > 0.05 * gt[mask]))) / n
    return MetricsReport(epe=math.fsum(err.tolist()) / n, err_rate=rates, d1=d1, region=region, n_pixels=n)


def evaluate_samples(preds, samples, region: str = "all") -> MetricsReport:
    """Pool pixels over several samples."""
    pred = np.concatenate([np.ravel(p) for p in preds])
    gt = np.concatenate([s.disparity.ravel() for s in samples])
    valid = np.concatenate([s.valid.ravel() for s in samples])
    occ = None
    if region == "noc":
        if any(s.occluded is None for s in samples):
            raise ValueError("Noc metrics need occlusion masks for every sample")
        occ = np.concatenate([s.occluded.ravel() for s in samples])
    return evaluate(pred, gt, valid, region, occ)
