"""Peak activation bytes of streaming and batch inference across a d_max or resolution sweep.

    python scripts/memory_sweep.py --axis d_max --points 64,128,192
    python scripts/memory_sweep.py --axis height --points 64,128,256
"""
import argparse

from srhnet.config import RunConfig
from srhnet.model import SRHNet
from srhnet.profiling import AXES, Sweep, profile, variation


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--axis", choices=AXES, default="d_max")
    p.add_argument("--points", default="64,128,192")
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--checkpoint", help="trained model; default is an untrained default-config model")
    args = p.parse_args()

    model = args.checkpoint or SRHNet(RunConfig())
    sweep = Sweep(args.axis, tuple(int(v) for v in args.points.split(",")))
    for streaming in (True, False):
        report = profile(model, sweep, args.height, args.width, streaming=streaming)
        peaks = report.peaks()
        print(f"# {'streaming' if streaming else 'batch'}: variation {variation(peaks):.1%}, "
              f"last/first {peaks[-1] / peaks[0]:.2f}x")
        print(report.table())


if __name__ == "__main__":
    main()
