"""File formats: PFM, KITTI 16-bit disparity PNG, visualisation PNG, sample directories."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .head import GroundTruth
from .synth import StereoSample


class PFMError(ValueError):
    pass


def save_pfm(path, image: np.ndarray, little_endian: bool = True) -> None:
    """Write a single-channel PFM (rows bottom-up, scale sign encodes endianness)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"save_pfm expects a 2-D map, got shape {image.shape}")
    h, w = image.shape
    dtype = "<f4" if little_endian else ">f4"
    scale = -1.0 if little_endian else 1.0
    header = f"Pf\n{w} {h}\n{scale}\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(image[::-1], dtype=dtype).tobytes())


_HEADER = re.compile(rb"\A(P[fF])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")


def load_pfm(path) -> np.ndarray:
    """Read a PFM file; grayscale gives [H, W], colour ("PF") gives [H, W, 3]."""
    buf = Path(path).read_bytes()
    m = _HEADER.match(buf)
    if m is None:
        raise PFMError(f"{path}: malformed PFM header {buf[:32]!r}")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError:
        raise PFMError(f"{path}: bad scale {m.group(4)!r}") from None
    if scale == 0:
        raise PFMError(f"{path}: scale must be non-zero")
    payload = buf[m.end():]
    need = 4 * w * h * channels
    if len(payload) < need:
        raise PFMError(f"{path}: truncated payload, {len(payload)} of {need} bytes")
    data = np.frombuffer(payload[:need], dtype="<f4" if scale < 0 else ">f4")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


def save_kitti_disparity_png(path, disparity: np.ndarray, valid: np.ndarray | None = None) -> None:
    """Store ``round(d * 256)`` as 16-bit grayscale; 0 marks invalid pixels."""
    d = np.asarray(disparity, dtype=np.float64)
    if valid is None:
        valid = np.isfinite(d) & (d > 0)
    stored = np.zeros(d.shape, dtype=np.uint16)
    stored[valid] = np.clip(np.round(d[valid] * 256.0), 1, 65535).astype(np.uint16)
    Image.fromarray(stored).save(path)


def load_kitti_disparity_png(path) -> GroundTruth:
    raw = np.array(Image.open(path))
    if raw.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel 16-bit PNG")
    raw = raw.astype(np.float64)
    valid = raw > 0
    return GroundTruth(np.where(valid, raw / 256.0, 0.0), valid)


# piecewise-linear blue -> cyan -> yellow -> red ramp
_CMAP = np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 1.0], [0.0, 1.0, 1.0],
                  [1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]])


def render_disparity_png(disparity: np.ndarray, d_max: float, path, mode: str = "color") -> None:
    v = np.clip(np.asarray(disparity, dtype=np.float64) / d_max, 0.0, 1.0)
    if mode == "gray":
        Image.fromarray(np.round(v * 255).astype(np.uint8), mode="L").save(path)
        return
    if mode != "color":
        raise ValueError(f"unknown render mode {mode!r}")
    xs = np.linspace(0, 1, len(_CMAP))
    rgb = np.stack([np.interp(v, xs, _CMAP[:, c]) for c in range(3)], axis=-1)
    Image.fromarray(np.round(rgb * 255).astype(np.uint8), mode="RGB").save(path)


def read_gray_disparity_png(path, d_max: float) -> np.ndarray:
    """Inverse of the ``gray`` render mode (quantized to d_max / 255)."""
    return np.array(Image.open(path), dtype=np.float64) / 255.0 * d_max


def load_image(path) -> np.ndarray:
    """RGB image as float32 [3, H, W] in [0, 1]."""
    arr = np.array(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def save_sample(directory, name: str, sample: StereoSample) -> None:
    """``<name>_left.png``, ``_right.png``, ``_disp.pfm`` (invalid stored as 0), ``_occ.png``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_image(d / f"{name}_left.png", sample.left)
    save_image(d / f"{name}_right.png", sample.right)
    save_pfm(d / f"{name}_disp.pfm", np.where(sample.valid, sample.disparity, 0.0))
    if sample.occluded is not None:
        Image.fromarray(sample.occluded.astype(np.uint8) * 255, mode="L").save(d / f"{name}_occ.png")


def load_sample(directory, name: str) -> StereoSample:
    d = Path(directory)
    left = load_image(d / f"{name}_left.png")
    right = load_image(d / f"{name}_right.png")
    if (d / f"{name}_disp.pfm").exists():
        disp = load_pfm(d / f"{name}_disp.pfm")
        valid = np.isfinite(disp) & (disp > 0)
        disp = np.where(valid, disp, 0.0).astype(np.float32)
    else:
        gt = load_kitti_disparity_png(d / f"{name}_disp.png")
        disp, valid = gt.disparity.astype(np.float32), gt.valid_mask
    occ_path = d / f"{name}_occ.png"
    occluded = np.array(Image.open(occ_path)) > 127 if occ_path.exists() else None
    return StereoSample(left, right, disp, valid, occluded, provenance=str(d / name))


def load_dataset(directory) -> list[StereoSample]:
    names = sorted(p.name[: -len("_left.png")] for p in Path(directory).glob("*_left.png"))
    if not names:
        raise FileNotFoundError(f"no *_left.png samples in {directory}")
    return [load_sample(directory, n) for n in names]
