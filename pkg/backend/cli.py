"""
Command-line surface: python -m backend.cli <command> [options]

    synth   generate a toy-face corpus directory
    train   train one cascade stage from a corpus
    detect  run the cascade on one PPM image
    eval    PR/AP and landmark NME report over a corpus split
    bench   timed forwards of the three networks
    ablate  OHEM / joint-landmark ablations of O-Net training

Failures print one line `error: <ErrorClass>: <message>` on stderr and exit
with 1 (runtime) or 2 (usage).
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import NoReturn, Optional, Sequence

from backend.domain.config import STAGE_KINDS, Settings, flat_config, load_config, override_cascade
from backend.domain.errors import MtcnnError
from backend.domain.nn.networks import build_network
from backend.domain.services.ablation import ABLATIONS, run_ablation, write_ablation
from backend.domain.services.cascade import detect
from backend.domain.services.evaluation import bench_forward, detection_records, eval_report
from backend.domain.services.pipeline import DEFAULT_EPOCHS, synthesize_corpus, train_from_corpus
from backend.infrastructure.corpus_store import SPLITS, load_corpus
from backend.infrastructure.image_io import load_image, render_detections, save_image
from backend.infrastructure.reports import save_json
from backend.infrastructure.weights_store import (
    cascade_weight_paths,
    load_cascade_nets,
    load_weights,
    weights_checksum,
    weights_path,
)

logger = logging.getLogger("backend.cli")

EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with one-line, machine-parsable usage errors."""

    def error(self, message: str) -> NoReturn:
        print(f"error: UsageError: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _settings(args: argparse.Namespace) -> Settings:
    return load_config(Path(args.config) if args.config else None)


def cmd_synth(args: argparse.Namespace) -> int:
    splits = synthesize_corpus(Path(args.out), args.n, args.seed, args.size)
    print(json.dumps({"out": args.out, "splits": {k: len(v) for k, v in splits.items()}}))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    run = train_from_corpus(
        args.stage,
        Path(args.corpus),
        Path(args.out),
        _settings(args),
        seed=args.seed,
        epochs=args.epochs,
        ohem=not args.no_ohem,
        landmark=not args.no_landmark,
        prefix_dir=Path(args.prefix_dir) if args.prefix_dir else None,
        progress=args.progress,
    )
    summary = {
        "weights": str(run.weights_path),
        "curves": str(run.curves_path),
        "samples": run.samples,
        "final_train_det": run.result.final("train", "det"),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    settings = _settings(args)
    if args.min_face is not None:
        settings = override_cascade(settings, min_face=args.min_face)
    nets = load_cascade_nets(Path(args.weights_dir))
    image = load_image(Path(args.image))
    detections = detect(image, nets, settings.cascade, max_workers=args.workers)
    payload = {
        "image": Path(args.image).name,
        "width": int(image.shape[2]),
        "height": int(image.shape[1]),
        "config": flat_config(settings),
        "detections": detection_records(detections),
    }
    save_json(Path(args.out_json), payload)
    if args.out_image:
        save_image(Path(args.out_image), render_detections(image, detections))
    logger.info("%d detections written to %s", len(detections), args.out_json)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _settings(args)
    weights_dir = Path(args.weights_dir)
    nets = load_cascade_nets(weights_dir)
    corpus = load_corpus(Path(args.corpus), args.split)
    timing = None
    if args.bench:
        timing = [bench_forward(net, args.bench) for net in (nets.pnet, nets.rnet, nets.onet)]
    report = eval_report(
        corpus,
        nets,
        settings,
        seed=args.seed,
        weights_checksum=weights_checksum(cascade_weight_paths(weights_dir)),
        timing=timing,
        max_workers=args.workers,
    )
    save_json(Path(args.report), report)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    results = []
    for kind in STAGE_KINDS:
        if args.weights_dir:
            net = load_weights(weights_path(Path(args.weights_dir), kind))
        else:
            net = build_network(kind, seed=args.seed)
        results.append(bench_forward(net, args.n))
    payload = {r.kind: r.as_dict() for r in results}
    if args.out:
        save_json(Path(args.out), payload)
    print(json.dumps({r.kind: r.seconds for r in results}))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    settings = _settings(args)
    train = load_corpus(Path(args.corpus), "train")
    val = load_corpus(Path(args.corpus), "val")
    if not val:
        raise UsageError(f"corpus {args.corpus} has an empty validation split")
    result = run_ablation(args.which, train, val, settings, epochs=args.epochs, seed=args.seed, progress=args.progress)
    summary = write_ablation(Path(args.out), result, settings)
    print(json.dumps({"summary": str(summary), "finals": result.finals, "holds": result.holds}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtcnn", description="Toy-scale multi-task cascaded face detector.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth", help="generate a toy-face corpus")
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--size", type=int, default=96, help="square image side in pixels")
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    train = sub.add_parser("train", help="train one cascade stage")
    train.add_argument("--stage", choices=STAGE_KINDS, required=True)
    train.add_argument("--corpus", required=True)
    train.add_argument("--out", required=True, help="weights file to write")
    train.add_argument("--no-ohem", action="store_true")
    train.add_argument("--no-landmark", action="store_true")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    train.add_argument("--prefix-dir", help="directory with trained pnet.bin/rnet.bin (default: dir of --out)")
    train.add_argument("--config")
    train.add_argument("--progress", action="store_true")
    train.set_defaults(func=cmd_train)

    det = sub.add_parser("detect", help="detect faces in one PPM image")
    det.add_argument("--weights-dir", required=True)
    det.add_argument("--image", required=True)
    det.add_argument("--min-face", type=float)
    det.add_argument("--config")
    det.add_argument("--out-json", required=True)
    det.add_argument("--out-image")
    det.add_argument("--workers", type=int, default=1)
    det.set_defaults(func=cmd_detect)

    ev = sub.add_parser("eval", help="evaluate the cascade on a corpus split")
    ev.add_argument("--weights-dir", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--report", required=True)
    ev.add_argument("--split", choices=SPLITS, default="test")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--config")
    ev.add_argument("--bench", type=int, default=0, help="also time N forwards per network")
    ev.add_argument("--workers", type=int, default=1)
    ev.set_defaults(func=cmd_eval)

    bench = sub.add_parser("bench", help="time N single-patch forwards per network")
    bench.add_argument("--weights-dir")
    bench.add_argument("--n", type=int, default=300)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out")
    bench.set_defaults(func=cmd_bench)

    ablate = sub.add_parser("ablate", help="OHEM or joint-landmark ablation")
    ablate.add_argument("--which", choices=ABLATIONS, required=True)
    ablate.add_argument("--corpus", required=True)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--epochs", type=int, default=20)
    ablate.add_argument("--seed", type=int, default=0)
    ablate.add_argument("--config")
    ablate.add_argument("--progress", action="store_true")
    ablate.set_defaults(func=cmd_ablate)
    return parser


PATH_ARGS = ("corpus", "image", "weights_dir", "config", "prefix_dir")


def _one_line(exc: BaseException) -> str:
    return "; ".join(part.strip() for part in str(exc).splitlines() if part.strip())


def _check_args(args: argparse.Namespace) -> None:
    for name in PATH_ARGS:
        value = getattr(args, name, None)
        if value and not Path(value).exists():
            raise UsageError(f"--{name.replace('_', '-')} {value} does not exist")
    for name in ("n", "epochs", "workers"):
        value = getattr(args, name, None)
        if value is not None and value < 1:
            raise UsageError(f"--{name} must be at least 1, got {value}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        _check_args(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: UsageError: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except (MtcnnError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
