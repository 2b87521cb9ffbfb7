"""Parameter containers and the two convolution layers every block is built from."""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, get_dtype


class Module:
    """Attribute-walking parameter registry.

    Parameters are leaf tensors with ``requires_grad``; names are dotted
    attribute paths, list entries use their index.
    """

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            _collect(val, f"{prefix}{key}", out)
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters().items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        unexpected = set(arrays) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for k, p in params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"{k}: shape {arrays[k].shape} != {p.shape}")
            p.data[...] = arrays[k]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def _collect(val, name: str, out: dict) -> None:
    if isinstance(val, Tensor):
        if val.requires_grad:
            out[name] = val
    elif isinstance(val, Module):
        out.update(val.named_parameters(prefix=name + "."))
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            _collect(item, f"{name}.{i}", out)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(get_dtype()), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, pad: int | None = None,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = _uniform(rng, (cout, cin, k, k), cin * k * k)
        self.bias = Tensor(np.zeros(cout, dtype=get_dtype()), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    """Stride-2 upsampling by default: kernel 4, pad 1 doubles the spatial size."""

    def __init__(self, cin: int, cout: int, k: int = 4, stride: int = 2, pad: int = 1,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.pad = pad
        # each output pixel receives (k / stride)^2 taps per input channel
        self.weight = _uniform(rng, (cin, cout, k, k), max(1, cin * (k // stride) ** 2))
        self.bias = Tensor(np.zeros(cout, dtype=get_dtype()), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad)
