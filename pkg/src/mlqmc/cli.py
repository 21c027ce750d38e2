"""Command-line entry point ``mlqmc``.

Exit codes: 0 success, 2 usage error, 3 resource error.
"""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .exceptions import ResourceError, UsageError
from .harness import ExperimentConfig, integrate_once, predicted_exponent, run_experiment
from .lattice import cbc1, format_vector, generate_points, load_vector
from .scramble import Scrambler
from .space import ProductWeights, decay_estimate, parse_weights

EXIT_OK, EXIT_USAGE, EXIT_RESOURCE = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _weights(text: str):
    path = Path(text)
    if path.is_file():
        return parse_weights(path.read_text())
    return parse_weights(text)


def cmd_cbc(args) -> int:
    w = _weights(args.weights)
    gv = cbc1(args.b, args.M, None, args.s, w, mode=args.mode)
    text = format_vector(gv)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_points(args) -> int:
    gv = load_vector(args.vec)
    pts = generate_points(gv)
    if args.scramble is not None:
        sc = Scrambler(args.scramble, args.rep, 0, gv.b, args.depth)
        X = sc.scramble_set(pts, gv.M)
    else:
        X = pts / float(gv.n)
    np.savetxt(sys.stdout, X, fmt="%.17g")
    return EXIT_OK


def cmd_integrate(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    cfg.allow_small = True
    value, cost, levels = integrate_once(cfg)
    print(f"estimate {value!r}")
    print(f"cost {cost!r}")
    print(f"levels {levels}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    cfg.out = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    report = run_experiment(cfg)
    print(f"slope {report.slope:.4f} +- {report.halfwidth:.4f}; "
          f"predicted {report.predicted_rmse} ({report.regime})")
    return EXIT_OK


def cmd_rates(args) -> int:
    if args.weights in ("product", "fiw"):
        cls = args.weights
        if args.decay is None:
            raise UsageError("--decay is required with a bare weight class")
        decay = Fraction(args.decay)
    else:
        w = _weights(args.weights)
        cls = "product" if isinstance(w, ProductWeights) else "fiw"
        decay = Fraction(args.decay) if args.decay is not None else Fraction(str(round(decay_estimate(w), 6)))
    models = ["variable", "fixed"] if args.model == "both" else [args.model]
    for model in models:
        e = predicted_exponent(cls, decay, Fraction(args.alpha), Fraction(args.s), model)
        sharp = "sharp" if e.sharp else "not sharp"
        print(f"{model}: upper {e.upper} lower {e.lower} [{e.regime}; {sharp}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlqmc", description="Multilevel scrambled polynomial lattice integration.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("cbc", help="construct a generating vector")
    c.add_argument("--b", type=int, default=2)
    c.add_argument("--M", type=int, required=True)
    c.add_argument("--s", type=int, required=True)
    c.add_argument("--weights", required=True, help="weight file or product:c,q")
    c.add_argument("--mode", choices=["auto", "exact", "float"], default="auto")
    c.add_argument("--out")
    c.set_defaults(func=cmd_cbc)

    q = sub.add_parser("points", help="print the points of a generating vector")
    q.add_argument("--vec", required=True)
    q.add_argument("--scramble", type=int, help="master seed")
    q.add_argument("--rep", type=int, default=0)
    q.add_argument("--depth", type=int, default=32)
    q.set_defaults(func=cmd_points)

    i = sub.add_parser("integrate", help="one estimate and its cost")
    i.add_argument("--config", required=True)
    i.set_defaults(func=cmd_integrate)

    e = sub.add_parser("experiment", help="convergence experiment to CSV")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--workers", type=int)
    e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("rates", help="predicted e^2 exponents")
    r.add_argument("--weights", required=True, help="product, fiw, a weight file or product:c,q")
    r.add_argument("--decay")
    r.add_argument("--alpha", default="3")
    r.add_argument("--s", default="1")
    r.add_argument("--model", choices=["variable", "fixed", "both"], default="both")
    r.set_defaults(func=cmd_rates)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"mlqmc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceError as exc:
        print(f"mlqmc: resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except BrokenPipeError:
        # the reader closed early (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (OSError, ValueError) as exc:
        print(f"mlqmc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
