"""Run every randomized verification suite and print one line per check."""
from __future__ import annotations

import argparse
import json
import time

from vdcal import theory


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    suites = [
        lambda: theory.verify_decomposition_random(500, args.seed),
        lambda: theory.verify_thm2_random(1000, args.seed),
        lambda: theory.verify_thm1_random(40, args.seed),
        theory.verify_delta_regimes,
    ]
    bad = 0
    for run in suites:
        t0 = time.perf_counter()
        rep = run()
        bad += rep.violations
        print(json.dumps({**rep.to_json(), "seconds": round(time.perf_counter() - t0, 2)}, sort_keys=True))
    return 0 if bad == 0 else 4


if __name__ == "__main__":
    raise SystemExit(main())
