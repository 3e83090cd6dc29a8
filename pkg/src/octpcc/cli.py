"""Command-line workflow: synth, train, encode, decode, eval, analyze.

Exit codes: 0 success, 2 usage error, 3 data error (bad input/file),
4 model mismatch, 5 corrupt bitstream.  Every subcommand writes a
`<output>.config` echo file so a run can be reproduced from its flags.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import metrics, pipeline
from .context import ContextConfig
from .errors import (ConfigError, CorruptStream, InvalidInput, ModelMismatch,
                     OctpccError, ParseError)
from .geometry import (QuantizedPointCloud, SYNTH_KINDS, dequantize, quantize,
                       read_ply, synth, write_ply)
from .coder import Bitstream
from .model import (ContextModel, ModelConfig, TrainSchedule, train,
                    write_trace)
from .octree import build

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4
EXIT_CORRUPT = 5


def _write_echo(out_path, args: argparse.Namespace) -> None:
    skip = {"func"}
    with open(f"{out_path}.config", "w") as f:
        for key in sorted(vars(args)):
            if key not in skip:
                f.write(f"{key} = {getattr(args, key)}\n")


def _onoff(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, default=64, help="context slots N")
    p.add_argument("--ancestors", type=int, default=2, help="ancestors K per slot")
    p.add_argument("--strict-level", type=_onoff, default=False,
                   help="restrict the window to same-level predecessors")
    p.add_argument("--d-embed", type=int, default=16)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--hidden-main", type=int, default=128)
    p.add_argument("--hidden-branch", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--residual", type=_onoff, default=True,
                   help="context feature residual on|off")
    p.add_argument("--branch", type=_onoff, default=True,
                   help="occupancy branch + fusion on|off")
    p.add_argument("--seed", type=int, default=0)


def _model_config(args) -> ModelConfig:
    ctx = ContextConfig(n_window=args.window, k_ancestors=args.ancestors,
                        strict_level=args.strict_level)
    return ModelConfig(ctx=ctx, d_embed=args.d_embed, d_model=args.d_model,
                       d_hidden_main=args.hidden_main,
                       d_hidden_branch=args.hidden_branch, heads=args.heads,
                       enable_residual=args.residual,
                       enable_branch=args.branch, seed=args.seed)


def cmd_synth(args) -> int:
    pc = synth(args.kind, args.n, args.seed, jitter=args.jitter)
    write_ply(args.out, pc, binary=args.format == "binary")
    _write_echo(args.out, args)
    print(f"wrote {args.out} ({len(pc)} points)")
    return EXIT_OK


def cmd_train(args) -> int:
    corpus = []
    for path in args.corpus:
        pc = read_ply(path)
        corpus.append(build(quantize(pc, args.depth)))
    model = ContextModel.create(_model_config(args))
    schedule = TrainSchedule(branch_epochs=args.branch_epochs,
                             main_epochs=args.main_epochs, lr=args.lr,
                             lr_decay=args.lr_decay,
                             batch_size=args.batch_size)
    trace = train(model, corpus, schedule)
    model.save(args.out)
    _write_echo(args.out, args)
    trace_path = args.trace or f"{args.out}.trace.csv"
    write_trace(trace_path, trace)
    stage2 = [r.ce_loss for r in trace if r.stage == 2]
    print(f"wrote {args.out} (variant: {model.cfg.variant})")
    if stage2:
        print(f"final cross-entropy: {stage2[-1]:.4f} bits/node")
    return EXIT_OK


def cmd_encode(args) -> int:
    pc = read_ply(args.input)
    model = ContextModel.load(args.checkpoint)
    levels = args.levels if args.levels is not None else args.depth
    bs, report = pipeline.encode(pc, args.depth, levels, model)
    bs.write(args.out)
    _write_echo(args.out, args)
    report_path = args.report or f"{args.out}.report"
    with open(report_path, "w") as f:
        f.write(report.to_text(timing=False))
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_decode(args) -> int:
    bs = Bitstream.read(args.bitstream)
    model = ContextModel.load(args.checkpoint)
    qpc = pipeline.decode(bs, model)
    write_ply(args.out, dequantize(qpc), binary=args.format == "binary")
    _write_echo(args.out, args)
    print(f"wrote {args.out} ({len(qpc)} points)")
    return EXIT_OK


def cmd_eval(args) -> int:
    original = read_ply(args.original)
    decoded = read_ply(args.decoded)
    qa = quantize(original, args.depth)
    if args.bitstream:
        from .coder import HEADER_BYTES
        header = Bitstream.read(args.bitstream).header
        origin, scale = header.origin, header.scale
        total_bits = (HEADER_BYTES + header._payload_len) * 8
        points = header.raw_point_count
    else:
        origin, scale = qa.origin, qa.scale
        total_bits = None
        points = len(original)
    voxels = np.floor((decoded.points - origin) / scale + 0.5).astype(np.int64)
    np.clip(voxels, 0, (1 << args.depth) - 1, out=voxels)
    qd = QuantizedPointCloud(depth=args.depth, voxels=voxels, origin=origin,
                             scale=scale)
    cd = metrics.chamfer(qa, qd)
    psnr = metrics.d1_psnr(qa, qd)
    if total_bits is not None:
        print(f"bpip = {metrics.bpip(total_bits, points):.6f}")
    print(f"chamfer = {cd:.9g}")
    print(f"d1_psnr = {psnr:.4f}")
    print(f"lossless = {qa.same_voxels(qd)}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    corpus = []
    for path in args.corpus:
        pc = read_ply(path)
        corpus.append(build(quantize(pc, args.depth)))
    for ckpt in args.checkpoint:
        model = ContextModel.load(ckpt)
        bank = metrics.collect_features(model, corpus)
        stats = metrics.interclass_stats(bank)
        print(f"checkpoint = {ckpt}")
        print(f"variant = {model.cfg.variant}")
        print(stats.to_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="octpcc",
                                 description="octree point cloud geometry codec")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic point cloud")
    p.add_argument("--kind", choices=SYNTH_KINDS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("ascii", "binary"), default="ascii")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a context model")
    p.add_argument("--corpus", nargs="+", required=True, help="PLY file(s)")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", default=None, help="loss trace CSV path")
    _add_model_flags(p)
    p.add_argument("--branch-epochs", type=int, default=1)
    p.add_argument("--main-epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay", type=float, default=0.95)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="compress a point cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--levels", type=int, default=None,
                   help="coded levels (default: full depth)")
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decompress a bitstream")
    p.add_argument("--bitstream", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("ascii", "binary"), default="ascii")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="rate/distortion of a decoded cloud")
    p.add_argument("--original", required=True)
    p.add_argument("--decoded", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--bitstream", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="inter-class context statistics")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.set_defaults(func=cmd_analyze)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ModelMismatch, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except CorruptStream as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (InvalidInput, ParseError, FileNotFoundError, OctpccError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
