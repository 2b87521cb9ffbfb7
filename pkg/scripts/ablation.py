"""Train SRH and the stacked-GRU baseline under one budget; report held-out metrics.

Both runs share the seed, the step count, the training pairs, the crop
schedule and the feature-extractor configuration; only the aggregator
differs.  The held-out pairs contain textureless patches.

    python scripts/ablation.py --eval-every 100
"""
import argparse
import time
from dataclasses import dataclass

import numpy as np

from srhnet.config import RunConfig
from srhnet.metrics import MetricsReport, evaluate_samples
from srhnet.synth import SynthSpec, synth_dataset
from srhnet.train import predict_samples, train


@dataclass(frozen=True)
class AblationSetup:
    size: int = 32
    d_max: int = 16
    downsample: int = 2  # at 4 the cost levels are 4 px apart and neither model leaves the constant-prediction plateau
    train_pairs: int = 2000
    test_pairs: int = 20
    n_objects: int = 2
    background_range: tuple[int, int] = (1, 12)
    textureless_patches: int = 2
    steps: int = 1000
    batch_size: int = 8
    feature_channels: int = 16
    agg_hidden: int = 16
    hg_widths: str = "24,32"
    spp_bins: str = "1,2,4"
    seed: int = 0

    def spec(self) -> SynthSpec:
        return SynthSpec(self.size, self.size, self.d_max, background_range=self.background_range,
                         n_objects=self.n_objects, textureless_patches=self.textureless_patches,
                         patch_size=(self.size // 6, self.size // 3))

    def config(self, aggregator: str) -> RunConfig:
        return RunConfig(d_max=self.d_max, downsample=self.downsample, crop_h=self.size, crop_w=self.size,
                         batch_size=self.batch_size, steps=self.steps, aggregator=aggregator,
                         feature_channels=self.feature_channels, agg_hidden=self.agg_hidden,
                         hg_widths=self.hg_widths, spp_bins=self.spp_bins, seed=self.seed, log_every=0)

    def datasets(self):
        # disjoint seed ranges keep the held-out pairs unseen
        return synth_dataset(self.train_pairs, 5000, self.spec()), synth_dataset(self.test_pairs, 90000, self.spec())


def _log(line: str) -> None:
    print(line, flush=True)


def run(setup: AblationSetup, aggregators=("srh", "stacked_gru"), eval_every: int = 0,
        log=_log) -> dict[str, MetricsReport]:
    trainset, test = setup.datasets()
    reports = {}
    for agg in aggregators:
        start = time.perf_counter()

        def progress(step, model, loss):
            if eval_every and step % eval_every == 0 and step < setup.steps:
                rep = evaluate_samples(predict_samples(model, test), test)
                log(f"{agg} step={step} loss={loss:.4f} test_epe={rep.epe:.4f} "
                    f"seconds={time.perf_counter() - start:.0f}")
            return False

        model = train(setup.config(agg), trainset, callback=progress).model
        reports[agg] = evaluate_samples(predict_samples(model, test), test)
        log(f"{agg} step={setup.steps} test_epe={reports[agg].epe:.4f} "
            f"test_1px={reports[agg].err_rate[1]:.4f} seconds={time.perf_counter() - start:.0f}")
    return reports


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    defaults = AblationSetup()
    p.add_argument("--steps", type=int, default=defaults.steps)
    p.add_argument("--size", type=int, default=defaults.size)
    p.add_argument("--train-pairs", type=int, default=defaults.train_pairs)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--eval-every", type=int, default=0)
    args = p.parse_args()
    setup = AblationSetup(steps=args.steps, size=args.size, train_pairs=args.train_pairs, seed=args.seed)
    reports = run(setup, eval_every=args.eval_every)
    for agg, rep in reports.items():
        print(f"[{agg}]")
        print(rep.to_lines())
    srh, gru = reports["srh"].epe, reports["stacked_gru"].epe
    print(f"srh_epe={srh:.4f} stacked_gru_epe={gru:.4f} srh_not_worse={str(srh <= gru).lower()}")


if __name__ == "__main__":
    main()
