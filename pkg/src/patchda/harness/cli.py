"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training abort.
"""

import argparse
import json
import logging
import sys

from patchda.data import DatasetManifest, generate
from patchda.errors import DataError, InvalidConfigError, InvalidInputError, LabelAccessError, TrainingAbort
from patchda.harness.checkpoint import load_checkpoint
from patchda.harness.config import ExperimentConfig, load_config
from patchda.harness.train import evaluate, train_adapt, train_local
from patchda.harness.visualize import visualize_patches

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ABORT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(path):
    return load_config(path) if path else ExperimentConfig()


def cmd_gen_data(args):
    cfg = _config(args.config)
    manifest = generate(cfg.data, args.out)
    print(f"wrote {len(manifest.records)} clips to {args.out}")


def cmd_train_local(args):
    cfg = _config(args.config)
    train_local(DatasetManifest.load(args.data), cfg, out=args.out)
    print(f"phase-1 checkpoint written to {args.out}")


def cmd_train_adapt(args):
    cfg = _config(args.config)
    init = load_checkpoint(args.init)
    train_adapt(DatasetManifest.load(args.data), init, cfg, out=args.out)
    print(f"phase-2 checkpoint written to {args.out}")


def cmd_eval(args):
    report = evaluate(load_checkpoint(args.ckpt), DatasetManifest.load(args.data), args.split)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_visualize(args):
    ids = [c for c in args.clips.split(",") if c]
    if not ids:
        raise InvalidInputError("--clips needs at least one clip id")
    records = visualize_patches(load_checkpoint(args.ckpt), DatasetManifest.load(args.data), ids, args.out)
    print(json.dumps([{k: r[k] for k in ("clip_id", "frame", "x0", "y0", "size")} for r in records]))


def build_parser():
    p = _Parser(prog="patchda", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="generate the synthetic two-domain dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-local", help="phase 1: train the extractor on source clips")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_local)

    s = sub.add_parser("train-adapt", help="phase 2: adversarial adaptation with a frozen extractor")
    s.add_argument("--data", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_adapt)

    s = sub.add_parser("eval", help="top-1/top-5 verb, noun and action accuracy")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", default="target/val")
    s.add_argument("--json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("visualize-patches", help="write selected-patch overlays as PPM files")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--clips", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_visualize)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (InvalidConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAbort as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (DataError, LabelAccessError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
