"""Monte Carlo study of naive, adjusted and oracle peer-effect estimators.

Simulates groups whose links are reported twice with independent
misclassification, estimates the rates, fits each estimator and prints the
summary tables. With the defaults (S=100 groups of 50, Q=100 replications)
the naive estimate of lambda is biased towards zero while the adjusted one
recovers the true value of 0.05.

Run ``python3 demos/small_rate_study.py --Q 20`` for a quicker look, or pass
``--large`` for the larger misclassification rates.
"""
import argparse
import os

from mislink.montecarlo import McConfig, emit_table, run_mc
from mislink.simulate import MeasureChannelSpec, SimConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--Q", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--large", action="store_true", help="use rates (0.2, 0.4) and (0.16, 0.32)")
    args = ap.parse_args()

    sim = SimConfig(seed=args.seed)
    if args.large:
        sim = sim.replace(channels=(MeasureChannelSpec(0.2, 0.4), MeasureChannelSpec(0.16, 0.32)))
    report = run_mc(McConfig(sim, Q=args.Q), threads=os.cpu_count() or 1)

    print(f"{report.n_success}/{report.Q} replications used "
          f"({report.runtime_seconds:.1f}s)\n")
    print("Estimated misclassification rates, mean (sd):")
    print(emit_table(report, "markdown", "rates"))
    print("Peer-effect estimates, mean (sd):")
    print(emit_table(report, "markdown", "estimates"))
    for f in report.failures:
        print(f"dropped replication {f['replication']}: {f['reason']}")


if __name__ == "__main__":
    main()
