"""Overfit a handful of random-dot pairs and report EPE on those same pairs.

    python scripts/overfit.py --pairs 4 --size 96 --max-steps 2000
"""
import argparse
import time

import numpy as np

from srhnet.config import RunConfig
from srhnet.metrics import evaluate
from srhnet.synth import SynthSpec, synth_dataset
from srhnet.train import predict_samples, train


def pooled_epe(model, samples) -> float:
    preds = predict_samples(model, samples)
    return evaluate(np.concatenate([p.ravel() for p in preds]),
                    np.concatenate([s.disparity.ravel() for s in samples]),
                    np.concatenate([s.valid.ravel() for s in samples])).epe


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--d-max", type=int, default=16)
    p.add_argument("--max-steps", type=int, default=2000)
    p.add_argument("--eval-every", type=int, default=25)
    p.add_argument("--target", type=float, default=0.5, help="stop once EPE drops below this")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    samples = synth_dataset(args.pairs, 0, SynthSpec(args.size, args.size, args.d_max))
    config = RunConfig(d_max=args.d_max, crop_h=args.size, crop_w=args.size, batch_size=args.pairs,
                       steps=args.max_steps, seed=args.seed, log_every=0)
    start = time.perf_counter()

    def report(step, model, loss):
        if step % args.eval_every:
            return False
        epe = pooled_epe(model, samples)
        print(f"step={step} loss={loss:.4f} epe={epe:.4f} seconds={time.perf_counter() - start:.0f}", flush=True)
        return epe < args.target

    result = train(config, samples, callback=report)
    print(f"stopped_early={result.stopped_early} steps={result.steps}")


if __name__ == "__main__":
    main()
