"""Truncation rules against the oracle-size cutoff on the US-states task.

The model is order- and shape-calibrated by construction, so cutting at the
true number of valid continuations reaches (1, 1). Top-k, top-p and min-p are
swept over their default grids.
"""
from __future__ import annotations

import argparse
import csv
from pathlib import Path

from vdcal.cli import DEFAULT_PARAMS, DEFAULT_TEMPERATURES
from vdcal.cutoff import oracle_size
from vdcal.enumeration import exact_sequence_distribution, shape_calibrated_model, temperature_frontier
from vdcal.metrics import diversity, validity
from vdcal.valid_set import us_states

FAMILIES = ("top_k", "top_p", "min_p")
VOCAB = 28
FULL_VALIDITY = 1 - 1e-9


def run(vocab: int = VOCAB) -> dict:
    vs = us_states()
    model = shape_calibrated_model(vs, vocab)
    sd = exact_sequence_distribution(model, oracle_size(temperature=1.0), vs, max_depth=vs.d)
    out = {"oracle_size": (validity(sd, vs), diversity(sd, vs)), "clouds": {}}
    for fam in FAMILIES:
        res = temperature_frontier(model, vs, fam, DEFAULT_TEMPERATURES, DEFAULT_PARAMS[fam], max_depth=vs.d)
        out["clouds"][fam] = res.cloud
    return out


def best_at_full_validity(cloud) -> float | None:
    ys = [p.y for p in cloud if p.x >= FULL_VALIDITY]
    return max(ys) if ys else None


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/oracle_cutoff")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run()
    with open(out / "points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rule", "param", "temperature", "validity", "diversity"])
        val, div = res["oracle_size"]
        w.writerow(["oracle_size", "", 1.0, repr(val), repr(div)])
        for fam, cloud in res["clouds"].items():
            for p in cloud:
                w.writerow([fam, p.param, p.temperature, repr(p.x), repr(p.y)])
    print(f"oracle_size: validity={res['oracle_size'][0]!r} diversity={res['oracle_size'][1]!r}")
    for fam, cloud in res["clouds"].items():
        print(f"{fam}: best diversity at full validity = {best_at_full_validity(cloud)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
