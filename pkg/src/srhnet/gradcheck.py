"""Central finite-difference checks for reverse-mode gradients (use at f64)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tape, Tensor, backward


def _scalar(fn, inputs, cotangent) -> float:
    out = fn(*inputs)
    return float(np.vdot(out.data, cotangent)) if cotangent is not None else out.item()


def directional_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], rng: np.random.Generator,
                      eps: float = 1e-5, n_directions: int = 2, wrt: Sequence[int] | None = None) -> float:
    """Max relative error between <grad, v> and the central difference along random unit ``v``.

    ``v`` is normalised jointly over the perturbed inputs so ``eps`` is the
    step length however many parameters move.  Non-scalar outputs are contracted with a fixed random cotangent first.
    ``wrt`` restricts the perturbed inputs (default: all requiring grad).
    """
    inputs = list(inputs)
    wrt = [i for i, t in enumerate(inputs) if t.requires_grad] if wrt is None else list(wrt)
    probe = fn(*inputs)
    cot = None if probe.size == 1 else rng.standard_normal(probe.shape)
    for t in inputs:
        t.grad = None
    with Tape():
        out = fn(*inputs)
        if cot is not None:
            out = ops.sum(ops.mul(out, Tensor(cot.astype(out.dtype))))
        backward(out)
    grads = {i: (inputs[i].grad if inputs[i].grad is not None else np.zeros_like(inputs[i].data)) for i in wrt}
    worst = 0.0
    for _ in range(n_directions):
        dirs = {i: rng.standard_normal(inputs[i].shape) for i in wrt}
        norm = np.sqrt(sum(float(np.vdot(d, d)) for d in dirs.values()))
        dirs = {i: d / norm for i, d in dirs.items()}
        analytic = sum(float(np.vdot(grads[i], dirs[i])) for i in wrt)
        saved = {i: inputs[i].data.copy() for i in wrt}
        for i in wrt:
            inputs[i].data[...] = saved[i] + eps * dirs[i]
        f_plus = _scalar(fn, inputs, cot)
        for i in wrt:
            inputs[i].data[...] = saved[i] - eps * dirs[i]
        f_minus = _scalar(fn, inputs, cot)
        for i in wrt:
            inputs[i].data[...] = saved[i]
        numeric = (f_plus - f_minus) / (2 * eps)
        scale = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst


def elementwise_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], rng: np.random.Generator,
                      eps: float = 1e-5, max_elements: int = 64) -> float:
    """Max relative error over individually perturbed elements (sampled if large)."""
    inputs = list(inputs)
    probe = fn(*inputs)
    cot = None if probe.size == 1 else rng.standard_normal(probe.shape)
    for t in inputs:
        t.grad = None
    with Tape():
        out = fn(*inputs)
        if cot is not None:
            out = ops.sum(ops.mul(out, Tensor(cot.astype(out.dtype))))
        backward(out)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_elements:
            idx = rng.choice(flat.size, size=max_elements, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = _scalar(fn, inputs, cot)
            flat[k] = orig - eps
            f_minus = _scalar(fn, inputs, cot)
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            analytic = g.reshape(-1)[k]
            scale = max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, abs(analytic - numeric) / scale)
    return worst
