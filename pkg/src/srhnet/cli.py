"""Command-line interface: ``srhnet {train,infer,eval,profile,synth}``.

Every :class:`RunConfig` key is also a flag of the same name (``d_max`` ->
``--d-max``); values given on the command line beat ``--config`` files,
which beat the defaults.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import io, metrics, profiling, synth
from .config import RunConfig, load_config, parse_config_text
from .model import SRHNet
from .train import config_path_for, infer, load_model, predict_samples, train

_CHOICES = {"aggregator": ("srh", "stacked_gru"), "precision": ("f32", "f64")}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="flat key=value file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        g.add_argument(flag, dest=f"cfg_{f.name}", default=None, choices=_CHOICES.get(f.name),
                       metavar=None if f.name in _CHOICES else "VALUE")


def _config(args, base: RunConfig | None = None) -> RunConfig:
    """CLI flags > ``--config`` file > ``base`` (a checkpoint's sidecar) > defaults."""
    values = dict(vars(base)) if base is not None else {}
    if args.config is not None:
        values.update(parse_config_text(args.config.read_text()))
    for f in fields(RunConfig):
        raw = getattr(args, f"cfg_{f.name}")
        if raw is not None:
            values[f.name] = raw
    return load_config(None, values)


def _synth_spec(args, d_max: int) -> synth.SynthSpec:
    return synth.SynthSpec(args.height, args.width, d_max, textureless_patches=args.textureless)


def _dataset(args, config: RunConfig):
    if args.data is not None:
        return io.load_dataset(args.data)
    return synth.synth_dataset(args.synth, args.data_seed, _synth_spec(args, config.d_max))


def _add_data_flags(p: argparse.ArgumentParser, default_n: int) -> None:
    p.add_argument("--data", type=Path, help="directory of <name>_left.png/_right.png/_disp.pfm samples")
    p.add_argument("--synth", type=int, default=default_n, help="number of synthetic pairs when --data is absent")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--textureless", type=int, default=0, help="textureless patches per synthetic pair")


def cmd_train(args) -> int:
    config = _config(args)
    out = args.out or Path("srhnet.ckpt")
    result = train(config, _dataset(args, config), out=out)
    print(f"checkpoint={result.checkpoint}")
    print(f"steps={result.steps}")
    print(f"final_loss={result.losses[-1]:.6f}")
    return 0


def _model(args):
    sidecar = load_config(config_path_for(args.checkpoint))
    return load_model(args.checkpoint, _config(args, sidecar))


def cmd_infer(args) -> int:
    model = _model(args)
    left, right = io.load_image(args.left), io.load_image(args.right)
    disparity = infer(model, left, right, streaming=args.streaming).data[0, 0]
    out = args.out or Path("disparity.pfm")
    if out.suffix == ".png":
        io.save_kitti_disparity_png(out, disparity)
    else:
        io.save_pfm(out, disparity)
    if args.render:
        io.render_disparity_png(disparity, model.config.d_max, args.render)
    print(f"disparity={out}")
    print(f"min={disparity.min():.4f}")
    print(f"max={disparity.max():.4f}")
    return 0


def cmd_eval(args) -> int:
    model = _model(args)
    samples = _dataset(args, model.config)
    preds = predict_samples(model, samples, streaming=args.streaming)
    regions = ["all", "noc"] if args.region == "both" else [args.region]
    if "noc" in regions and any(s.occluded is None for s in samples):
        regions.remove("noc")  # never approximated
    reports = [metrics.evaluate_samples(preds, samples, r) for r in regions]
    for rep in reports:
        print(rep.to_lines())
    table = metrics.MetricsReport.table(reports)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return 0


def cmd_profile(args) -> int:
    model = _model(args) if args.checkpoint else SRHNet(_config(args))
    points = tuple(int(p) for p in args.points.split(","))
    report = profiling.profile(model, profiling.Sweep(args.axis, points), args.height, args.width,
                               streaming=args.streaming)
    print(f"axis={report.axis}")
    print(f"streaming={str(report.streaming).lower()}")
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.table() + "\n")
    return 0


def cmd_synth(args) -> int:
    config = _config(args)
    out = args.out or Path("synth")
    spec = _synth_spec(args, config.d_max)
    for i in range(args.n):
        sample = synth.synth_rds(config.seed + i, spec)
        io.save_sample(out, f"{i:05d}", sample)
    print(f"written={args.n}")
    print(f"directory={out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srhnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model, write checkpoint + sidecar config")
    _add_data_flags(p, default_n=4)
    p.add_argument("--out", type=Path, help="checkpoint path (default srhnet.ckpt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="disparity for one stereo pair")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--left", type=Path, required=True)
    p.add_argument("--right", type=Path, required=True)
    p.add_argument("--out", type=Path, help=".pfm (default) or .png (16-bit, d*256)")
    p.add_argument("--render", type=Path, help="also write a colour visualisation")
    p.add_argument("--streaming", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="metrics over a dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_data_flags(p, default_n=20)
    p.add_argument("--region", choices=("all", "noc", "both"), default="both")
    p.add_argument("--streaming", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", type=Path, help="also write the metrics table here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="peak activation bytes and time across a sweep")
    p.add_argument("--checkpoint", type=Path, help="default: untrained model from the configuration")
    p.add_argument("--axis", choices=profiling.AXES, default="d_max")
    p.add_argument("--points", default="64,128,192")
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--streaming", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", type=Path, help="also write the table here")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("synth", help="write random-dot stereo pairs to a directory")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--textureless", type=int, default=0)
    p.add_argument("--out", type=Path, help="output directory (default ./synth)")
    p.set_defaults(func=cmd_synth)

    for name, p in sub.choices.items():
        _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
