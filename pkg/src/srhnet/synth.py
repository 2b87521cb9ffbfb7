"""Random-dot stereograms with layered fronto-parallel objects.

Every layer carries its own dot texture indexed by *left-image* column, so the
right view is obtained exactly by sampling each layer at ``u_r + d`` and
z-buffering by disparity.  Occlusions therefore come out analytically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Layer:
    shape: str  # "rect" | "ellipse"
    cy: float
    cx: float
    hy: float  # half extents
    hx: float
    disparity: int

    def covers(self, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.shape == "rect":
            return (np.abs(v - self.cy) <= self.hy) & (np.abs(u - self.cx) <= self.hx)
        if self.shape == "ellipse":
            return ((v - self.cy) / self.hy) ** 2 + ((u - self.cx) / self.hx) ** 2 <= 1.0
        raise ValueError(f"unknown layer shape {self.shape!r}")


@dataclass
class SynthSpec:
    height: int = 96
    width: int = 96
    d_max: int = 16
    background_disparity: int | None = None  # None: random in background_range
    background_range: tuple[int, int] | None = None  # inclusive; None: [1, max(1, d_max // 4)]
    layers: list[Layer] | None = None  # None: random objects
    n_objects: int = 3
    dot_density: float = 0.5
    textureless_patches: int = 0
    patch_size: tuple[int, int] = (12, 24)  # min/max side in pixels


@dataclass
class StereoSample:
    left: np.ndarray  # [3, H, W] in [0, 1]
    right: np.ndarray
    disparity: np.ndarray  # [H, W] pixels, left view
    valid: np.ndarray  # [H, W] bool
    occluded: np.ndarray | None = None  # [H, W] bool, True where not visible in the right view
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        h, w = self.disparity.shape
        if self.left.shape != (3, h, w) or self.right.shape != (3, h, w):
            raise ValueError(f"image shapes {self.left.shape}/{self.right.shape} do not match disparity {h}x{w}")
        if self.valid.shape != (h, w):
            raise ValueError("valid mask shape mismatch")
        if not np.all(np.isfinite(self.disparity[self.valid])):
            raise ValueError("non-finite disparity on valid pixels")

    @property
    def noc(self) -> np.ndarray:
        """Valid and non-occluded pixels (falls back to ``valid`` without an occlusion map)."""
        return self.valid if self.occluded is None else self.valid & ~self.occluded


def _texture(rng, h, w, density) -> np.ndarray:
    # 8-bit quantized levels so PNG round trips are exact
    base = rng.integers(0, 256, size=3) / 255.0
    dots = rng.integers(0, 256, size=(h, w, 3)) / 255.0
    on = rng.random((h, w)) < density
    return np.where(on[..., None], dots, base).astype(np.float32)


def _random_layers(rng, spec: SynthSpec, bg: int) -> list[Layer]:
    layers = []
    hi = spec.d_max - 1
    for _ in range(spec.n_objects):
        d = int(rng.integers(min(bg + 1, hi), hi + 1))
        hy = rng.uniform(0.12, 0.3) * spec.height
        hx = rng.uniform(0.12, 0.3) * spec.width
        layers.append(Layer(shape=str(rng.choice(["rect", "ellipse"])),
                            cy=rng.uniform(0, spec.height), cx=rng.uniform(0, spec.width + d),
                            hy=hy, hx=hx, disparity=d))
    return layers


def synth_rds(seed: int, spec: SynthSpec = SynthSpec()) -> StereoSample:
    rng = np.random.default_rng(seed)
    h, w, d_max = spec.height, spec.width, spec.d_max
    bg = spec.background_disparity
    if bg is None:
        lo, hi = spec.background_range or (1, max(1, d_max // 4))
        if not 0 <= lo <= hi < d_max:
            raise ValueError(f"background range [{lo}, {hi}] outside [0, {d_max})")
        bg = int(rng.integers(lo, hi + 1))
    layers = list(spec.layers) if spec.layers is not None else _random_layers(rng, spec, bg)
    for d in [bg] + [layer.disparity for layer in layers]:
        if not 0 <= d < d_max:
            raise ValueError(f"layer disparity {d} outside [0, {d_max})")
    # drawing order: farthest first; stable for ties
    order = sorted(range(len(layers)), key=lambda k: layers[k].disparity)
    layers = [layers[k] for k in order]
    tex_w = w + d_max
    textures = [_texture(rng, h, tex_w, spec.dot_density) for _ in range(len(layers) + 1)]
    for _ in range(spec.textureless_patches):
        k = int(rng.integers(0, len(textures)))
        ph, pw = (int(rng.integers(spec.patch_size[0], spec.patch_size[1] + 1)) for _ in range(2))
        y0 = int(rng.integers(0, max(1, h - ph)))
        x0 = int(rng.integers(0, max(1, tex_w - pw)))
        textures[k][y0 : y0 + ph, x0 : x0 + pw] = rng.integers(0, 256, size=3) / 255.0

    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    rows = np.arange(h)[:, None]
    disps = [bg] + [layer.disparity for layer in layers]

    def render(col_offset_sign):
        # left view: sample layer at u; right view: sample at u_r + d
        ids = np.zeros((h, w), dtype=int)
        for k, layer in enumerate(layers, start=1):
            uu = u + (layer.disparity if col_offset_sign else 0)
            ids[layer.covers(v, uu)] = k
        img = np.empty((h, w, 3), dtype=np.float32)
        for k in range(len(disps)):
            sel = ids == k
            cols = (u + (disps[k] if col_offset_sign else 0)).astype(int)
            img[sel] = textures[k][rows.repeat(w, 1)[sel], cols[sel]]
        return ids, img

    ids_left, img_left = render(False)
    ids_right, img_right = render(True)
    disp = np.asarray(disps, dtype=np.float32)[ids_left]
    ur = (u - disp).astype(int)
    in_frame = ur >= 0
    occluded = np.ones((h, w), dtype=bool)
    occluded[in_frame] = ids_right[rows.repeat(w, 1)[in_frame], ur[in_frame]] != ids_left[in_frame]
    valid = (disp > 0) & (disp < d_max)
    return StereoSample(left=img_left.transpose(2, 0, 1).copy(), right=img_right.transpose(2, 0, 1).copy(),
                        disparity=disp, valid=valid, occluded=occluded,
                        provenance=f"synth:seed={seed}", meta={"background_disparity": bg})


def synth_dataset(n: int, seed: int, spec: SynthSpec = SynthSpec()) -> list[StereoSample]:
    return [synth_rds(seed + i, spec) for i in range(n)]
