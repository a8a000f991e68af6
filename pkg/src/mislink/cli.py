"""Command line interface.

Exit status is 0 on success, 2 for invalid input and 3 when the numerical
machinery fails (singular systems, rank deficiency, flagged rates).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io as mio
from .errors import NumericalError, ValidationError
from .estimators import EstimatorSpec, fit, s2sls
from .lim import example_table, lim_transform_group
from .montecarlo import McConfig, emit_table, run_mc
from .rates import RatesEstimate, estimate_rates
from .simulate import SimConfig, simulate_dataset

log = logging.getLogger("mislink")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _emit(kind, payload, out):
    if out is None:
        doc = mio.wrap_report(kind, payload)
        sys.stdout.write(mio.dumps(doc))
    else:
        mio.save_report(out, kind, payload)
        log.info("wrote %s", out)


def _load_rates(args, ds):
    if args.rates:
        return RatesEstimate.from_dict(mio.strip_envelope(mio.load_report(args.rates, "rates")))
    log.info("no --rates given; estimating them from the data")
    return estimate_rates(ds)


def cmd_simulate(args):
    if args.config:
        cfg = SimConfig.from_dict(mio.strip_envelope(mio.load_report(args.config, "sim_config")))
    else:
        cfg = SimConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out is None:
        raise ValidationError("simulate needs --out DIR")
    ds = simulate_dataset(cfg, replication=args.replication, threads=args.threads)
    mio.save_dataset(ds, args.out)
    mio.save_report(Path(args.out) / "sim_config.json", "sim_config", cfg.to_dict())
    log.info("wrote %d groups to %s", ds.S, args.out)


def cmd_rates(args):
    ds = mio.load_dataset_dir(args.data, with_truth=False)
    est = estimate_rates(ds, mode=args.mode, measure=args.measure - 1)
    if est.flags:
        log.warning("rate estimate flags: %s", ", ".join(est.flags))
    _emit("rates", est.to_dict(), args.out)


def cmd_fit(args):
    ds = mio.load_dataset_dir(args.data, with_truth=args.variant == "oracle")
    rates = _load_rates(args, ds) if args.variant in ("adjusted", "s2sls") else None
    spec = EstimatorSpec(
        args.variant, args.measure, args.instruments, args.fe, rates,
        not args.no_correction,
    )
    _emit("fit", fit(ds, spec).to_dict(), args.out)


def cmd_s2sls(args):
    ds = mio.load_dataset_dir(args.data, with_truth=False)
    rates = _load_rates(args, ds)
    res = s2sls(ds, rates, args.fe, not args.no_correction)
    _emit("fit", res.to_dict(), args.out)


def cmd_mc(args):
    cfg = McConfig()
    if args.config:
        cfg = McConfig.from_dict(mio.strip_envelope(mio.load_report(args.config, "mc_config")))
    if args.seed is not None:
        cfg = McConfig(cfg.sim.replace(seed=args.seed), cfg.Q, cfg.variants, cfg.rates_mode)
    if args.Q is not None:
        cfg = McConfig(cfg.sim, args.Q, cfg.variants, cfg.rates_mode)
    report = run_mc(cfg, threads=args.threads)
    log.info(
        "%d/%d replications succeeded in %.1fs", report.n_success, report.Q,
        report.runtime_seconds,
    )
    if args.out is None:
        sys.stdout.write(emit_table(report, "markdown", "rates"))
        sys.stdout.write("\n")
        sys.stdout.write(emit_table(report, "markdown", "estimates"))
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mio.save_report(out / "mc_report.json", "mc", report.to_dict())
    for table in ("rates", "estimates"):
        (out / f"{table}.md").write_text(emit_table(report, "markdown", table), encoding="utf-8")
        (out / f"{table}.csv").write_text(emit_table(report, "csv", table), encoding="utf-8")
    log.info("wrote report to %s", out)


def cmd_lim(args):
    if args.data is None:
        tab = example_table(args.p0, args.p1)
        if args.out is None:
            print(f"p0={args.p0:g} p1={args.p1:g}")
            print("support  " + "  ".join("".join(map(str, r)) for r in tab["support"]))
            for key in ("W12", "W13"):
                print(f"{key}  " + "  ".join(f"{v: .6f}" for v in tab[key]))
            print("P =")
            for row in tab["P"]:
                print("  " + "  ".join(f"{v:.6f}" for v in row))
            return
        _emit("lim", {"p0": args.p0, "p1": args.p1, **tab}, args.out)
        return
    if args.out is None:
        raise ValidationError("lim --data needs --out FILE")
    ds = mio.load_dataset_dir(args.data, with_truth=False)
    rates = _load_rates(args, ds)
    mats = {}
    for g in ds.groups:
        for t, H in enumerate(g.measures):
            p0, p1 = rates.rates(t + 1)
            mats[(g.group_id, t + 1)] = lim_transform_group(H, p0, p1)
    mio.save_weight_matrices(args.out, ds, mats)
    log.info("wrote transformed weights to %s", args.out)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the random seed (simulation commands)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(
        prog="mislink",
        description="Peer effect estimation with misclassified network links.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="draw a synthetic dataset")
    s.add_argument("--config", help="sim_config JSON (defaults to the small-rate design)")
    s.add_argument("--replication", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("rates", parents=[common], help="estimate misclassification rates")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--mode", choices=("single", "two"), default=None)
    s.add_argument("--measure", type=int, choices=(1, 2), default=1,
                   help="measure used in single mode (which assumes a symmetric true network)")
    s.set_defaults(func=cmd_rates)

    s = sub.add_parser("fit", parents=[common], help="fit one 2SLS variant")
    s.add_argument("--data", required=True)
    s.add_argument("--rates", help="rates JSON; estimated from the data when omitted")
    s.add_argument("--variant", choices=("ols", "naive", "adjusted", "oracle", "s2sls"),
                   default="adjusted")
    s.add_argument("--fe", choices=("within", "none"), default="none")
    s.add_argument("--measure", type=int, choices=(1, 2), default=1)
    s.add_argument("--instruments", choices=("same", "cross", "transpose", "truth"))
    s.add_argument("--no-correction", action="store_true",
                   help="skip the first-stage term in the clustered covariance")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("s2sls", parents=[common], help="stacked 2SLS over both measures")
    s.add_argument("--data", required=True)
    s.add_argument("--rates")
    s.add_argument("--fe", choices=("within", "none"), default="none")
    s.add_argument("--no-correction", action="store_true")
    s.set_defaults(func=cmd_s2sls)

    s = sub.add_parser("mc", parents=[common], help="run a Monte Carlo study")
    s.add_argument("--config", help="mc_config JSON (defaults to the small-rate study)")
    s.add_argument("--Q", type=int, default=None, help="override the replication count")
    s.set_defaults(func=cmd_mc)

    s = sub.add_parser("lim", parents=[common], help="linear-in-means transform")
    s.add_argument("--data", help="dataset directory; without it print the n=3 table")
    s.add_argument("--rates")
    s.add_argument("--p0", type=float, default=0.1)
    s.add_argument("--p1", type=float, default=0.2)
    s.set_defaults(func=cmd_lim)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
