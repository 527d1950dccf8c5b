"""Command-line entry point: gen-data, train, warp, eval, gradcheck.

Exit codes: 0 success, 1 usage, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import affine, gradcheck, imageio, pck
from .checkpoint import load_model
from .data import generate_dataset, read_dataset, write_dataset
from .errors import (
    FormatViolation,
    InsufficientTexture,
    MissingKeypoints,
    NonFiniteError,
    SingularTransform,
)
from .inference import Matcher
from .losses import BalanceParams
from .train import TrainConfig, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"expected an integer, got {text}")
    return int(value)


def _float_list(text: str) -> list[float]:
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text}") from None
    if not values or min(values) <= 0:
        raise argparse.ArgumentTypeError("tau values must be positive")
    return values


def cmd_gen_data(args) -> int:
    ds = generate_dataset(args.seed, args.count, args.size, n_keypoints=args.keypoints)
    write_dataset(args.out, ds)
    print(f"wrote {args.count} pairs to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig(
        lr=args.lr,
        batch=args.batch,
        epochs=args.epochs,
        iterations=args.iterations,
        seed=args.seed,
        balance=BalanceParams(args.alpha, args.beta, args.gamma),
        detach_aug=args.detach_aug,
        checkpoint_path=args.out,
        checkpoint_interval=args.checkpoint_interval,
    )
    dataset = read_dataset(args.data)
    resume = load_model(args.resume) if args.resume else None
    if args.log:
        with open(args.log, "a" if resume else "w", encoding="utf-8") as fh:
            ckpt = train(dataset, cfg, fh, resume, args.max_steps)
    else:
        ckpt = train(dataset, cfg, None, resume, args.max_steps)
    print(f"trained to step {ckpt.step}; checkpoint {args.out}")
    return 0


def cmd_warp(args) -> int:
    ckpt = load_model(args.model)
    matcher = Matcher(ckpt.weights, ckpt.config, mean=args.mean, ensemble=not args.no_ensemble)
    warped, st, ts, used = matcher.warp(imageio.read_ppm(args.source), imageio.read_ppm(args.target))
    imageio.write_ppm(args.out, warped)
    print(f"theta_ST {affine.format_affine(st)}")
    print(f"theta_TS {affine.format_affine(ts)}")
    print(f"theta_en {affine.format_affine(used)}")
    return 0


def cmd_eval(args, predict=None) -> int:
    """``predict`` overrides the model (pair -> theta), e.g. to inject ground truth."""
    dataset = read_dataset(args.data)
    if predict is None:
        ckpt = load_model(args.model)
        predict = Matcher(ckpt.weights, ckpt.config, mean=args.mean, ensemble=not args.no_ensemble)
    report = pck.pck_dataset(predict, dataset, args.tau)
    print(report.to_json() if args.json else report.to_table())
    return 0


def cmd_gradcheck(args) -> int:
    ok, text = gradcheck.main_check(tuple(args.seed))
    print(text)
    return 0 if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aerialmatch", description="Two-stream bidirectional affine matching")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--seed", type=_int, default=0)
    g.add_argument("--count", type=_int, required=True)
    g.add_argument("--size", type=_int, default=64)
    g.add_argument("--keypoints", type=_int, default=20)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--epochs", type=_int, default=1)
    t.add_argument("--iterations", type=_int, default=None, help="overrides --epochs")
    t.add_argument("--max-steps", type=_int, default=None, help="stop early (resumable)")
    t.add_argument("--batch", type=_int, default=10)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--seed", type=_int, default=0)
    t.add_argument("--alpha", type=float, default=0.5)
    t.add_argument("--beta", type=float, default=0.3)
    t.add_argument("--gamma", type=float, default=0.2)
    t.add_argument("--detach-aug", action="store_true", help="stop gradients through the augmented branch in the identity term")
    t.add_argument("--checkpoint-interval", type=_int, default=0)
    t.add_argument("--resume", default=None)
    t.add_argument("--log", default=None, help="JSON-lines loss log")
    t.set_defaults(func=cmd_train)

    w = sub.add_parser("warp", help="warp a source image onto a target")
    w.add_argument("--model", required=True)
    w.add_argument("--source", required=True)
    w.add_argument("--target", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--mean", choices=affine.MEAN_KINDS, default="arithmetic")
    w.add_argument("--no-ensemble", action="store_true")
    w.set_defaults(func=cmd_warp)

    e = sub.add_parser("eval", help="PCK evaluation")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--tau", type=_float_list, default=list(pck.DEFAULT_TAUS))
    e.add_argument("--mean", choices=affine.MEAN_KINDS, default="arithmetic")
    e.add_argument("--no-ensemble", action="store_true")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    c.add_argument("--seed", type=_int, nargs="+", default=[0, 1, 2])
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FormatViolation, MissingKeypoints, InsufficientTexture, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, SingularTransform) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
