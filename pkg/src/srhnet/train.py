"""Training and inference drivers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import head
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .model import SRHNet
from .optim import AdamState, adam_step
from .synth import StereoSample
from .tensor import Tape, Tensor, backward, precision

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    checkpoint: Path | None
    losses: list[float] = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False
    model: SRHNet | None = None


def _crop(sample: StereoSample, top: int, left: int, ch: int, cw: int):
    sl = (slice(top, top + ch), slice(left, left + cw))
    return (sample.left[:, sl[0], sl[1]], sample.right[:, sl[0], sl[1]],
            sample.disparity[sl], sample.valid[sl])


def make_batch(samples: Sequence[StereoSample], config: RunConfig, rng: np.random.Generator):
    """Random crops (uniform top-left) stacked into [N,3,h,w] images and ground truth."""
    h, w = samples[0].disparity.shape
    ch, cw = min(config.crop_h, h), min(config.crop_w, w)
    k = config.input_multiple
    ch, cw = ch - ch % k, cw - cw % k
    if ch == 0 or cw == 0:
        raise ValueError(f"samples of {h}x{w} are smaller than one {k}x{k} network input")
    lefts, rights, disps, valids = [], [], [], []
    for sample in samples:
        sh, sw = sample.disparity.shape
        top = int(rng.integers(0, sh - ch + 1))
        left = int(rng.integers(0, sw - cw + 1))
        lft, rgt, disp, valid = _crop(sample, top, left, ch, cw)
        lefts.append(lft)
        rights.append(rgt)
        disps.append(disp)
        valids.append(valid)
    gt_disp = np.stack(disps)[:, None]
    mask = np.stack(valids)[:, None] & (gt_disp > 0) & (gt_disp < config.d_max)
    return np.stack(lefts), np.stack(rights), head.GroundTruth(np.where(mask, gt_disp, 0.0), mask)


def train_step(model: SRHNet, state: AdamState, left, right, gt: head.GroundTruth,
               weights: head.LossWeights) -> float:
    model.zero_grad()
    with Tape() as tape:
        d_m, d_f = model.forward(left, right)
        loss = head.total_loss(d_m, d_f, gt, weights)
    value = loss.item()
    if not math.isfinite(value):
        finite = d_f.data[np.isfinite(d_f.data)]
        span = f"[{finite.min():.3g}, {finite.max():.3g}]" if finite.size else "none"
        raise TrainingDiverged(f"non-finite loss {value} at step {state.step + 1}; "
                               f"finite prediction range {span}, "
                               f"{d_f.size - finite.size} of {d_f.size} predictions non-finite")
    backward(loss)
    params = model.named_parameters()
    grads = {k: p.grad for k, p in params.items()}
    bad = [k for k, g in grads.items() if g is not None and not np.all(np.isfinite(g))]
    if bad:
        raise TrainingDiverged(f"non-finite gradients at step {state.step + 1} in {bad[:5]}")
    adam_step(params, grads, state)
    tape.clear()
    return value


def train(config: RunConfig, dataset: Sequence[StereoSample], out: str | Path | None = None,
          callback: Callable[[int, SRHNet, float], bool] | None = None,
          model: SRHNet | None = None) -> TrainResult:
    """Forward / BPTT / Adam over ``dataset``.

    ``callback(step, model, loss)`` runs after every step; returning True
    stops training.  Writes ``<out>`` (checkpoint) and ``<out>.cfg`` when
    ``out`` is given.
    """
    if not dataset:
        raise ValueError("empty training set")
    with precision(config.precision):
        rng = np.random.default_rng(config.seed)
        model = model or SRHNet(config, rng=np.random.default_rng(config.seed))
        state = AdamState(lr=config.lr_at(0), beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        weights = head.LossWeights(config.w1, config.w2)
        bs = min(config.batch_size, len(dataset))
        steps_per_epoch = math.ceil(len(dataset) / bs)
        total = config.steps if config.steps > 0 else config.epochs * steps_per_epoch
        result = TrainResult(None)
        order: list[int] = []
        for step in range(total):
            if len(order) < bs:
                order.extend(rng.permutation(len(dataset)).tolist())
            batch = [dataset[i] for i in order[:bs]]
            del order[:bs]
            left, right, gt = make_batch(batch, config, rng)
            state.lr = config.lr_at(step)
            loss = train_step(model, state, left, right, gt, weights)
            result.losses.append(loss)
            result.steps = step + 1
            if config.log_every and (step % config.log_every == 0 or step == total - 1):
                log.info("step=%d loss=%.6f lr=%g", step + 1, loss, state.lr)
            if callback is not None and callback(step + 1, model, loss):
                result.stopped_early = step + 1 < total
                break
        if out is not None:
            out = Path(out)
            save_model(model, out)
            result.checkpoint = out
        result.model = model
    return result


def save_model(model: SRHNet, path: str | Path) -> None:
    path = Path(path)
    save_checkpoint(path, model.state_dict())
    model.config.save(config_path_for(path))


def config_path_for(checkpoint: str | Path) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.name + ".cfg")


def load_model(checkpoint: str | Path, config: RunConfig | None = None) -> SRHNet:
    if config is None:
        config = load_config(config_path_for(checkpoint))
    with precision(config.precision):
        model = SRHNet(config)
        model.load_state_dict(load_checkpoint(checkpoint))
    return model


def infer(checkpoint, left: np.ndarray, right: np.ndarray, streaming: bool = True,
          config: RunConfig | None = None) -> Tensor:
    """Disparity [N,1,H,W] for image batches [N,3,H,W] (or single [3,H,W]) in [0, 1]."""
    model = checkpoint if isinstance(checkpoint, SRHNet) else load_model(checkpoint, config)
    left = np.asarray(left)
    right = np.asarray(right)
    if left.ndim == 3:
        left, right = left[None], right[None]
    with precision(model.config.precision):
        return model.predict(left, right, streaming=streaming)


def predict_samples(model: SRHNet, samples: Sequence[StereoSample], streaming: bool = True) -> list[np.ndarray]:
    return [infer(model, s.left, s.right, streaming).data[0, 0] for s in samples]
