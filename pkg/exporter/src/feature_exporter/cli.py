"""Command line entry point.

    ssexport job JOB.json --out DIR [--backbone NAME] [--weights W] ...
    ssexport pairs IMG:MASK [IMG:MASK ...] --out DIR ...

Exit codes: 0 success, 1 usage or job description error, 2 undecodable or
mismatched input files, 3 backbone construction failure.
"""

import argparse
import json
import sys

import torch

from .backbone import available_backbones
from .errors import BackboneError, DecodeError, ExportError, JobError, ShapeError
from .export import export, job_from_file, self_episode_job

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_BACKBONE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(sub):
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--backbone", default=None, choices=available_backbones())
    sub.add_argument("--weights", default=None,
                     help="'none' (seeded random init), 'auto' (published "
                          "pretrained weights), or a local state-dict path")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--image-size", type=int, default=None,
                     help="optionally square-resize inputs before extraction")
    sub.add_argument("--threads", type=int, default=1,
                     help="torch thread count (1 keeps runs reproducible)")


def build_parser() -> _Parser:
    parser = _Parser(prog="ssexport", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    job = subs.add_parser("job", help="run an episode job description file")
    job.add_argument("job_file")
    _common(job)

    pairs = subs.add_parser(
        "pairs", help="one self-matching episode per image/mask pair")
    pairs.add_argument("pairs", nargs="+", metavar="IMAGE:MASK")
    _common(pairs)
    return parser


def _split_pairs(items):
    out = []
    for item in items:
        if ":" not in item:
            raise JobError(f"pair {item!r} must look like IMAGE:MASK")
        img, _, mask = item.partition(":")
        if not img or not mask:
            raise JobError(f"pair {item!r} must name both an image and a mask")
        out.append((img, mask))
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads > 0:
        torch.set_num_threads(args.threads)
    overrides = {"backbone": args.backbone, "weights": args.weights,
                 "seed": args.seed, "image_size": args.image_size}
    try:
        if args.command == "job":
            job = job_from_file(args.job_file, args.out, **overrides)
        else:
            job = self_episode_job(_split_pairs(args.pairs), args.out,
                                   **overrides)
        manifest = export(job)
    except JobError as exc:
        print(f"ssexport: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DecodeError, ShapeError, OSError) as exc:
        print(f"ssexport: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BackboneError, ExportError) as exc:
        print(f"ssexport: error: {exc}", file=sys.stderr)
        return EXIT_BACKBONE
    print(json.dumps({"manifest": manifest, "episodes": len(job.episodes)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
