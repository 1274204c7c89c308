#!/usr/bin/env python3
"""Run the empirical bound-verification suites and print their reports.

Exits non-zero if any operator violates its analytic error bound."""

import argparse

from nestq.analysis import OP_KINDS, empirical_verify


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ops", default=",".join(OP_KINDS))
    args = ap.parse_args()

    failures = 0
    for op in args.ops.split(","):
        report = empirical_verify(op, samples=args.samples, seed=args.seed)
        status = "ok" if report.passed else f"{len(report.violations)} VIOLATIONS"
        print(f"{op:>6}: {report.cases} cases, max |err| {report.max_observed:.6g}, "
              f"max bound {report.max_bound:.6g}, "
              f"mean signed {report.mean_signed_error:+.3e} -> {status}")
        failures += len(report.violations)
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
