"""Acceptance criteria, one test each. Every test records a PASS/FAIL line shown in the terminal summary."""
import filecmp
import importlib.util
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from conftest import ACCEPTANCE_LINES
from vdcal import theory
from vdcal.cli import main

ROOT = Path(__file__).resolve().parents[1]
UNIT_FILES = ["test_ranked_dist.py", "test_valid_set.py", "test_cutoff.py", "test_metrics.py",
              "test_enumeration.py", "test_theory.py", "test_model_client.py", "test_cli.py"]


def load_script(name):
    spec = importlib.util.spec_from_file_location(name, ROOT / "scripts" / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    assert ok, detail


def test_decomposition_exactness():
    t0 = time.perf_counter()
    rep = theory.verify_decomposition_random(500, seed=0, max_vocab=12, max_depth=4)
    dt = time.perf_counter() - t0
    ok = rep.instances >= 500 and rep.violations == 0 and rep.max_slack <= 1e-12 and dt < 60
    report("decomposition", ok, f"{rep.instances} instances, max error {rep.max_slack:.2e}, {dt:.1f}s")


def test_thm2_bound():
    t0 = time.perf_counter()
    rep = theory.verify_thm2_random(1000, seed=0)
    dt = time.perf_counter() - t0
    chain = rep.details["max_chain_rule_error"]
    ok = rep.instances >= 1000 and rep.violations == 0 and rep.max_slack >= -1e-9 and chain <= 1e-9 and dt < 120
    report("thm2", ok, f"{rep.instances} triggered, min slack {rep.max_slack:.2e}, chain error {chain:.2e}, {dt:.1f}s")


def test_two_regimes():
    L = 1e-3
    ratio = theory.entropy_loss(L, 2) / L**2
    large = theory.entropy_loss(50.0, 2)
    ok = 0.99 / 32 <= ratio <= 1.01 / 32 and abs(large - math.log(2)) < 1e-6
    report("two_regimes", ok, f"Delta_2(L)/L^2 = {ratio:.6f} (1/32 = {1 / 32:.6f}), |Delta_2(50) - ln2| = "
                              f"{abs(large - math.log(2)):.2e}")


def test_thm1_bound():
    t0 = time.perf_counter()
    rep = theory.verify_thm1_random(40, seed=0)
    dt = time.perf_counter() - t0
    ok = rep.violations == 0 and rep.details["checks"] > 0 and dt < 60
    report("thm1", ok, f"{rep.instances} instances, {rep.details['checks']} checks, min slack {rep.max_slack}, "
                       f"{dt:.1f}s")


def test_length_dominance():
    lf = load_script("length_frontier")
    t0 = time.perf_counter()
    curves = lf.frontier_curves()
    dt = time.perf_counter() - t0
    gaps = {lam: float(np.max(curves[(lam, 2)] - curves[(lam, 4)])) for lam in lf.LAMBDAS}
    ok = lf.dominated(curves) and all(g > 0 for g in gaps.values()) and dt < 60
    report("length_frontier", ok, f"d=4 <= d=2 on validity grid >= 0.5; max gaps {gaps}, {dt:.1f}s")


def test_oracle_size_ideal_point():
    oc = load_script("oracle_cutoff")
    t0 = time.perf_counter()
    res = oc.run()
    dt = time.perf_counter() - t0
    val, div = res["oracle_size"]
    best = {fam: oc.best_at_full_validity(cloud) for fam, cloud in res["clouds"].items()}
    oracle_ok = abs(val - 1) <= 1e-12 and abs(div - 1) <= 1e-12
    rules_ok = all(b is None or b < 1 for b in best.values())
    report("oracle_cutoff", oracle_ok and rules_ok and dt < 60,
           f"oracle_size ({val!r}, {div!r}); best diversity at validity 1: {best}, {dt:.1f}s")


def test_unit_suite():
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *[str(ROOT / "tests" / f) for f in UNIT_FILES]],
                          capture_output=True, text=True, cwd=ROOT)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    report("unit_suite", proc.returncode == 0, tail)


def _same_dirs(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


def test_determinism(tmp_path):
    logits = tmp_path / "logits.json"
    k = np.arange(300.0)
    logits.write_text(json.dumps(np.where(k <= 30, 8 - 0.2 * k, 9 - 2 * np.log(k + 1)).tolist()))
    commands = {
        "frontier": ["frontier", "--task", "digits_sum_constrained:d=3,base=6,target=7",
                     "--model", "geometric:lambda=0.8,vocab_size=9,ranking=interleaved", "--dump-sequences"],
        "sweep-tree": ["sweep-tree", "--task", "digits_unconstrained:d=3,base=4",
                       "--model", "geometric:lambda=0.8,vocab_size=8,ranking=interleaved", "--depth", "2",
                       "--rank-limit", "8"],
        "verify": ["verify", "thm2", "--instances", "50", "--seed", "7"],
        "fit-logits": ["fit-logits", str(logits)],
    }
    results = {}
    for name, argv in commands.items():
        codes = [main(argv + ["--out", str(tmp_path / f"{name}_{i}")]) for i in range(2)]
        results[name] = codes == [0, 0] and _same_dirs(tmp_path / f"{name}_0", tmp_path / f"{name}_1")
    codes = [main(["report", str(tmp_path / "frontier_0"), "--out", str(tmp_path / f"report_{i}")]) for i in range(2)]
    results["report"] = codes == [0, 0] and _same_dirs(tmp_path / "report_0", tmp_path / "report_1")
    report("determinism", all(results.values()), f"byte-identical per command: {results}")
