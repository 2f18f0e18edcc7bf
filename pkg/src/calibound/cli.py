"""Command-line interface: certify, perturb, synth, bench, ece.

Data goes to standard output, logs to standard error. Exit codes: 0 on
success, 2 on argument errors, 3 on input data that fails validation.

``certify`` prints one JSON object with these stable fields:

    method        "tv" | "nw" | "lipschitz"
    n_train       training points behind the surrogate(s) (0 for lipschitz)
    n_valid       validation points entering the concentration terms
    delta         total failure probability
    bound         certified CE upper bound, clamped to [0, 1]
    raw_bound     unclamped sum of ``terms``
    terms         additive components, keyed by name
    diagnostics   method-specific details (bandwidths, constants, per-fold data)
    seed          fold-assignment seed
    flags         notes such as "crossfit_pooled", "nn_fallback", "left_extrapolation"
    manifest      {command, parameters, input_digests (sha256), seed, version}

``bench`` emits the rate table (``true_ce``, ``slopes``, ``rows``, ``meta``)
plus the same ``manifest``. JSON Schemas live in ``docs/``.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field

from . import __version__
from .bucketing import DEFAULT_ECE_BINS, ece
from .core import DataValidationError, ScoredDataset, dump_dataset, load_dataset
from .crossfit import METHODS, CrossfitConfig, certify_crossfit
from .perturbation import PerturbSpec, perturb_scores
from .synth import FAMILIES, make_eta, rate_sweep, sample_synthetic

log = logging.getLogger("calibound")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


@dataclass
class RunManifest:
    """Provenance block attached to every JSON output.

    Wall-clock duration is logged to standard error instead of stored here so
    that reruns produce byte-identical output.
    """

    command: str
    parameters: dict
    input_digests: dict = field(default_factory=dict)
    seed: int | None = None
    version: str = __version__


def _read_input(path: str) -> tuple[bytes, str]:
    if path == "-":
        raw = sys.stdin.buffer.read()
    else:
        with open(path, "rb") as fh:
            raw = fh.read()
    return raw, hashlib.sha256(raw).hexdigest()


def _load(args) -> tuple[ScoredDataset, dict]:
    raw, digest = _read_input(args.input)
    data = load_dataset(io.BytesIO(raw))
    return data, {args.input: digest}


def _params(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def _emit_json(obj) -> None:
    # json writes floats with repr, the shortest string that round-trips exactly
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _nonnegative(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def _count(text: str) -> int:
    v = float(text)
    if v != int(v) or v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return int(v)


def _count_list(text: str) -> list[int]:
    return [_count(t) for t in text.split(",") if t.strip()]


def cmd_certify(args) -> int:
    data, digests = _load(args)
    if args.method == "tv":
        params = {"V": args.V}
    elif args.method == "nw":
        params = {"h": args.h, "bandwidth": args.bandwidth}
    else:
        if args.L is None and args.h is None:
            raise ValueError("--method lipschitz needs --L or --h")
        params = {"L": args.L, "h": args.h, "shift_count": args.shifts}
    cfg = CrossfitConfig(args.method, delta=args.delta, K=args.folds, seed=args.seed,
                         subsample=not args.no_subsample, params=params)
    report = certify_crossfit(data, cfg)
    out = report.to_dict()
    out["manifest"] = asdict(RunManifest("certify", _params(args), digests, args.seed))
    _emit_json(out)
    return EXIT_OK


def cmd_perturb(args) -> int:
    data, _ = _load(args)
    s = perturb_scores(data.scores, PerturbSpec(args.h, args.seed))
    _write_dataset(ScoredDataset(s, data.labels), args.out)
    return EXIT_OK


def _write_dataset(data: ScoredDataset, out: str | None) -> None:
    if out is None:
        dump_dataset(data, sys.stdout)
    else:
        with open(out, "w", newline="") as fh:
            dump_dataset(data, fh)


def _family_params(args) -> dict:
    p = {}
    if args.family == "offset" and args.c is not None:
        p["c"] = args.c
    if args.family in ("smooth-wiggle", "high-frequency"):
        if args.amplitude is not None:
            p["amplitude"] = args.amplitude
        if args.frequency is not None:
            p["frequency"] = args.frequency
    return p


def _spec(args):
    return make_eta(args.family, perturb_h=args.perturb_h, score_law=args.law,
                    **_family_params(args))


def cmd_synth(args) -> int:
    data = sample_synthetic(_spec(args), args.law, args.n, seed=args.seed)
    _write_dataset(data, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    table = rate_sweep(_spec(args), methods, args.n, args.repeats, delta=args.delta,
                       seed=args.seed, score_law=args.law, folds=args.folds,
                       n_jobs=args.threads)
    out = table.to_dict()
    out["manifest"] = asdict(RunManifest("bench", _params(args), {}, args.seed))
    if args.out:
        with open(args.out + ".csv", "w", newline="") as fh:
            fh.write(table.to_csv())
        with open(args.out + ".json", "w") as fh:
            fh.write(json.dumps(out, indent=2) + "\n")
        log.info("wrote %s.csv and %s.json", args.out, args.out)
    else:
        _emit_json(out)
    return EXIT_OK


def cmd_ece(args) -> int:
    data, _ = _load(args)
    sys.stdout.write(repr(ece(data.scores, data.labels, args.bins)) + "\n")
    return EXIT_OK


def _add_family_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=sorted(FAMILIES), default="identity")
    p.add_argument("--law", choices=["uniform", "mixture"], default="uniform",
                   help="score distribution")
    p.add_argument("--c", type=float, help="offset family shift")
    p.add_argument("--amplitude", type=float, help="oscillation amplitude")
    p.add_argument("--frequency", type=float, help="oscillation frequency")
    p.add_argument("--perturb-h", type=_positive, default=None,
                   help="apply sech score perturbation at this bandwidth")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calibound", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_count, default=1, help="maximum parallel workers")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", parents=[common], help="certified CE upper bound")
    p.add_argument("--input", required=True, help="score,label CSV ('-' for stdin)")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--delta", type=_probability, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--V", type=_positive, default=1.0,
                   help="total-variation budget for tv (1 suits monotone eta)")
    p.add_argument("--h", type=_positive, default=None,
                   help="perturbation bandwidth (nw: default 2^-6; lipschitz: L = 1/(2h))")
    p.add_argument("--L", type=_nonnegative, default=None, help="Lipschitz constant")
    p.add_argument("--bandwidth", type=_positive, default=None, help="override NW bandwidth")
    p.add_argument("--shifts", type=_count, default=4, help="bucket shifts for lipschitz")
    p.add_argument("--folds", type=_count, default=5)
    p.add_argument("--no-subsample", action="store_true")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("perturb", parents=[common], help="sech-perturb scores")
    p.add_argument("--input", required=True)
    p.add_argument("--h", type=_positive, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    _add_family_args(p)
    p.add_argument("--n", type=_count, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", parents=[common], help="rate sweep over sample sizes")
    _add_family_args(p)
    p.add_argument("--methods", default="nw,tv,lipschitz,ece")
    p.add_argument("--n", type=_count_list, default=[10**4, 3 * 10**4, 10**5, 3 * 10**5, 10**6])
    p.add_argument("--repeats", type=_count, default=64)
    p.add_argument("--delta", type=_probability, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=_count, default=5)
    p.add_argument("--out", help="prefix for <out>.csv and <out>.json")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ece", parents=[common], help="binned ECE heuristic (uncertified)")
    p.add_argument("--input", required=True)
    p.add_argument("--bins", type=_count, default=DEFAULT_ECE_BINS)
    p.set_defaults(func=cmd_ece)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        status = args.func(args)
    except DataValidationError as exc:
        print(f"calibound: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"calibound: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log.info("%s finished in %.3f s", args.command, time.perf_counter() - start)
    return status


if __name__ == "__main__":
    sys.exit(main())
