"""Command-line entry point: frontier, sweep-tree, verify, fit-logits, report."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np
import scipy

from . import __version__, theory
from .enumeration import (PRECISION_GRID, BudgetError, EnumerationError, GeometricModel, GreedyCompleter,
                          OracleLabeler, SampledCompleter, UniformModel, depth_frontier_summary,
                          interleaved_ranking, pareto_frontier, shape_calibrated_model, step_interpolate,
                          temperature_frontier, tree_sweep)
from .model_client import (ClientError, EndpointConfig, JudgeClient, JudgeLabeler, LoadError, Vocabulary,
                           load_distributions, remote_model)
from .ranked_dist import GeometricRankedModel, fit_piecewise
from .valid_set import ValidSet, ValidSetError, from_spec
from .valid_set import load as load_valid_set

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("vdcal")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VIOLATION, EXIT_REMOTE = 0, 2, 3, 4, 5

DEFAULT_TEMPERATURES = (0.01, 0.3, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.5, 3.0)
DEFAULT_PARAMS = {
    "top_k": (10, 20, 50, 80, 100, 500),
    "top_p": (0.1, 0.5, 0.7, 0.9, 0.95),
    "min_p": (0.01, 0.1, 0.5, 0.9),
}
DEFAULT_RULES = ("top_k", "top_p", "min_p", "none", "oracle_size")
POINT_HEADER = ("x", "y", "rule", "param", "temperature", "depth")
SUITES = ("decomposition", "thm1", "thm2", "delta_regimes")


class ConfigError(ValueError):
    pass


class Violation(RuntimeError):
    pass


@dataclass
class RunConfig:
    task: dict | str | None = None
    model: dict = field(default_factory=lambda: {"kind": "geometric", "lambda": 1.0})
    rules: list = field(default_factory=lambda: list(DEFAULT_RULES))
    params: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_PARAMS.items()})
    temperatures: list = field(default_factory=lambda: list(DEFAULT_TEMPERATURES))
    mode: str = "renormalized"
    seed: int = 0
    out: str = "out"
    dump_sequences: bool = False
    workers: int = 1
    max_depth: int = 6
    # tree sweep
    depth: int = 1
    rank_limit: int = 1000
    stride: int = 1
    completer: str = "greedy"
    samples: int = 10
    length: int | None = None
    labeler: str = "oracle"
    question: str = ""
    judge_threshold: int = 9
    # verify
    instances: int | None = None

    def validate(self) -> None:
        if not self.rules:
            raise ConfigError("rule grid is empty")
        if not self.temperatures or any(not t > 0 for t in self.temperatures):
            raise ConfigError("temperature grid must be non-empty and positive")
        for r in self.rules:
            if r in DEFAULT_PARAMS or r == "fixed":
                if not self.params.get(r):
                    raise ConfigError(f"parameter grid for {r} is empty")
        if self.mode not in ("renormalized", "uniform"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def to_json(self) -> dict:
        out = asdict(self)
        out.pop("out")
        out.pop("workers")
        return out

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# config parsing


def _scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _kv_spec(text: str, key: str) -> dict:
    """``name:k=v,k=v`` -> ``{key: name, k: v, ...}``."""
    name, _, rest = text.partition(":")
    out: dict = {key: name}
    for item in filter(None, rest.split(",")):
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"bad option {item!r} in {text!r}")
        out[k.strip()] = _scalar(v.strip())
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _params(text: str, rules: Sequence[str]) -> dict:
    if ":" not in text:
        if len(rules) != 1:
            raise ConfigError("--params without 'rule:' prefixes needs exactly one --rule")
        return {rules[0]: _floats(text)}
    out = {}
    for part in filter(None, text.split(";")):
        rule, _, vals = part.partition(":")
        out[rule.strip()] = _floats(vals)
    return out


def read_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        if p.suffix == ".toml":
            return tomllib.loads(p.read_text())
        return json.loads(p.read_text())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def build_config(args: argparse.Namespace) -> RunConfig:
    raw = read_config_file(args.config) if getattr(args, "config", None) else {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table/object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**raw)
    if getattr(args, "task", None):
        cfg.task = args.task if Path(args.task).exists() else _kv_spec(args.task, "generator")
    if getattr(args, "model", None):
        cfg.model = _kv_spec(args.model, "kind")
    if getattr(args, "rule", None) is not None:
        cfg.rules = [r.strip() for r in args.rule.split(",") if r.strip()]
    if getattr(args, "temps", None) is not None:
        cfg.temperatures = _floats(args.temps)
    if getattr(args, "params", None) is not None:
        cfg.params = {**cfg.params, **_params(args.params, cfg.rules)}
    for name in ("depth", "rank_limit", "stride", "mode", "seed", "out", "instances"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "dump_sequences", False):
        cfg.dump_sequences = True
    cfg.validate()
    return cfg


def resolve_task(cfg: RunConfig) -> ValidSet:
    if cfg.task is None:
        raise ConfigError("no task given (--task or 'task' in the config)")
    try:
        if isinstance(cfg.task, str):
            if not Path(cfg.task).exists():
                raise ConfigError(f"task file {cfg.task} does not exist")
            return load_valid_set(cfg.task)
        spec = dict(cfg.task)
        if "generator" in spec and "params" not in spec:
            spec = {"generator": spec.pop("generator"), "params": spec}
        return from_spec(spec)
    except (ValidSetError, TypeError) as exc:
        raise ConfigError(f"bad task: {exc}") from exc


def _vocab_size(vs: ValidSet | None, spec: dict) -> int:
    if "vocab_size" in spec:
        return int(spec["vocab_size"])
    if vs is None:
        raise ConfigError("model needs 'vocab_size' when there is no task")
    return max(max(s) for s in vs.sequences()) + 1


def _vocabulary(vs: ValidSet | None) -> Vocabulary:
    if vs is None:
        return Vocabulary()
    if vs.token_map:
        return Vocabulary(dict(vs.token_map))
    toks = sorted({t for s in vs.sequences() for t in s})
    return Vocabulary({t: str(t) for t in toks})


def resolve_model(cfg: RunConfig, vs: ValidSet | None, depth: int | None = None):
    spec = dict(cfg.model)
    kind = spec.get("kind", "geometric")
    if kind == "geometric":
        d = depth or (vs.d if vs is not None else None)
        if "lambdas" in spec:
            lams = tuple(float(x) for x in spec["lambdas"])
        elif d is not None:
            lams = (float(spec.get("lambda", 1.0)),) * d
        else:
            raise ConfigError("geometric model needs 'lambdas' or a task")
        try:
            params = GeometricRankedModel(lams, float(spec.get("temperature", 1.0)), _vocab_size(vs, spec))
        except ValueError as exc:
            raise ConfigError(f"bad geometric model: {exc}") from exc
        ranking = None
        if spec.get("ranking", "identity") == "interleaved":
            if vs is None:
                raise ConfigError("interleaved ranking needs a task")
            gap, n = int(spec.get("gap", 1)), params.vocab_size

            def ranking(prefix, _vs=vs):
                good = sorted(_vs.valid_tokens(prefix))
                return interleaved_ranking(good, [t for t in range(n) if t not in good], gap)
        elif spec.get("ranking", "identity") != "identity":
            raise ConfigError(f"unknown ranking {spec['ranking']!r}")
        return GeometricModel(params, ranking)
    if kind == "shape_calibrated":
        if vs is None:
            raise ConfigError("shape_calibrated model needs a task")
        return shape_calibrated_model(vs, _vocab_size(vs, spec), float(spec.get("invalid_decay", 0.5)))
    if kind == "uniform":
        return UniformModel(_vocab_size(vs, spec))
    if kind == "file":
        if "path" not in spec:
            raise ConfigError("file model needs 'path'")
        return load_distributions(spec["path"], _vocabulary(vs))
    if kind == "remote":
        overrides = {k: spec[k] for k in ("url", "timeout", "max_in_flight", "top", "max_retries") if k in spec}
        try:
            conf = EndpointConfig.from_env("MODEL", **overrides)
        except ClientError as exc:
            raise ConfigError(str(exc)) from exc
        return remote_model(conf, vocab=_vocabulary(vs))
    raise ConfigError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_metadata(out: Path, cfg: RunConfig, command: str, outputs: Sequence[Path], extra: dict | None = None):
    meta = {
        "command": command,
        "config": cfg.to_json(),
        "config_sha256": cfg.digest,
        "seed": cfg.seed,
        "versions": {"vdcal": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": ".".join(map(str, sys.version_info[:2]))},
        "outputs": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(outputs)},
    }
    if extra:
        meta.update(extra)
    write_json(out / "metadata.json", meta)


def _row(p) -> tuple:
    return (p.x, p.y, p.rule, p.param, p.temperature, p.depth)


def _seq_text(seq, vs: ValidSet) -> str:
    if vs.token_map:
        return "".join(vs.token_map.get(t, f"<{t}>") for t in seq if t != vs.terminator)
    return " ".join(map(str, seq))


# ---------------------------------------------------------------------------
# commands


def cmd_frontier(cfg: RunConfig) -> int:
    vs = resolve_task(cfg)
    model = resolve_model(cfg, vs)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud, combined, seq_rows, summary = [], [], [], {}
    for family in cfg.rules:
        res = temperature_frontier(model, vs, family, cfg.temperatures, cfg.params.get(family), cfg.mode,
                                   workers=cfg.workers, keep_distributions=cfg.dump_sequences,
                                   max_depth=cfg.max_depth)
        cloud.extend(res.cloud)
        combined.extend(res.frontier.points)
        write_csv(out / f"frontier_{family}.csv", POINT_HEADER, map(_row, res.frontier.points))
        summary[family] = {
            "points": len(res.cloud),
            "frontier_points": len(res.frontier),
            "max_validity": max(p.x for p in res.cloud),
            "max_diversity": max((p.y for p in res.cloud if not math.isnan(p.y)), default=None),
            "diversity_at_validity": dict(zip(map(repr, PRECISION_GRID),
                                              step_interpolate(res.frontier, PRECISION_GRID).tolist())),
        }
        for (rule, param, temp), sd in res.distributions.items():
            for seq, prob in sd.sorted_items():
                seq_rows.append((rule, param, temp, _seq_text(seq, vs), prob, sd.invalid_mass))
    outputs = [out / f"frontier_{f}.csv" for f in cfg.rules]
    write_csv(out / "points.csv", POINT_HEADER, map(_row, cloud))
    write_csv(out / "frontier.csv", POINT_HEADER, map(_row, pareto_frontier(combined).points))
    write_json(out / "summary.json", {"valid_set_size": vs.size, "depth": vs.d, "rules": summary})
    outputs += [out / "points.csv", out / "frontier.csv", out / "summary.json"]
    if cfg.dump_sequences:
        write_csv(out / "sequences.csv", ("rule", "param", "temperature", "sequence", "prob", "invalid_mass"),
                  seq_rows)
        outputs.append(out / "sequences.csv")
    write_metadata(out, cfg, "frontier", outputs)
    print(f"wrote {len(cloud)} points to {out / 'points.csv'}")
    return EXIT_OK


def _labeler(cfg: RunConfig, vs: ValidSet | None, model):
    if cfg.labeler == "oracle":
        if vs is None:
            raise ConfigError("oracle labeler needs a task")
        return OracleLabeler(vs)
    if cfg.labeler == "judge":
        try:
            client = JudgeClient(EndpointConfig.from_env("JUDGE"), cfg.judge_threshold)
        except ClientError as exc:
            raise ConfigError(str(exc)) from exc
        vocab = getattr(model, "vocab", None)
        if vocab is not None:
            detok = lambda seq: "".join(vocab.decode(seq))  # noqa: E731
        elif vs is not None:
            detok = lambda seq: _seq_text(seq, vs)  # noqa: E731
        else:
            detok = lambda seq: " ".join(map(str, seq))  # noqa: E731
        return JudgeLabeler(client, cfg.question, detok)
    raise ConfigError(f"unknown labeler {cfg.labeler!r}")


def cmd_sweep_tree(cfg: RunConfig) -> int:
    vs = resolve_task(cfg) if cfg.task is not None else None
    length = cfg.length or (vs.d if vs is not None else cfg.depth)
    if length < cfg.depth:
        raise ConfigError("completion length is shorter than the tree depth")
    model = resolve_model(cfg, vs, depth=length)
    if cfg.completer == "greedy":
        completer = GreedyCompleter(model, length)
    elif cfg.completer == "sampled":
        completer = SampledCompleter(model, length, cfg.samples, cfg.seed)
    else:
        raise ConfigError(f"unknown completer {cfg.completer!r}")
    labeler = _labeler(cfg, vs, model)
    tree = tree_sweep(model, cfg.depth, cfg.rank_limit, cfg.stride, completer, labeler, workers=cfg.workers)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tree.save(out / "tree.json")
    rows = []
    for depth, s in depth_frontier_summary(tree).items():
        for g, hi, lo, mu in zip(s.grid, s.max, s.min, s.mean):
            rows.append((depth, g, hi, lo, mu, s.n_nodes))
    write_csv(out / "depth_frontier.csv", ("depth", "precision", "max", "min", "mean", "n_nodes"), rows)
    counts = {lab: sum(n.label == lab for n in tree.nodes[1:]) for lab in ("valid", "invalid", "unlabeled")}
    write_json(out / "summary.json", {"nodes": len(tree.nodes), "labels": counts, "warnings": tree.warnings})
    write_metadata(out, cfg, "sweep-tree", [out / "tree.json", out / "depth_frontier.csv", out / "summary.json"],
                   {"warnings": tree.warnings})
    if tree.warnings:
        logger.warning("%d leaf labels failed; those leaves are unlabeled", tree.warnings)
    print(f"tree with {len(tree.nodes)} nodes, {tree.warnings} warnings -> {out / 'tree.json'}")
    return EXIT_OK


def verify_decomposition_task(vs: ValidSet) -> theory.VerifyReport:
    """Decomposition check on a given valid set: every top-j policy plus the validity oracle."""
    vocab = max(max(s) for s in vs.sequences()) + 1
    policies = {f"top_{j}": (lambda p, j=j: range(j)) for j in range(1, vocab + 1)}
    policies["oracle_validity"] = vs.valid_tokens
    violations, worst, per = 0, 0.0, {}
    for name, pol in policies.items():
        rep = theory.verify_decomposition(pol, vs)
        worst = max(worst, rep.precision_error, rep.recall_error)
        violations += not rep.ok
        per[name] = {"precision": rep.precision, "recall": rep.recall,
                     "alpha": list(rep.alpha), "beta": list(rep.beta)}
    return theory.VerifyReport("decomposition", len(policies), violations, worst, theory.DECOMP_TOL,
                               {"policies": per})


def cmd_verify(cfg: RunConfig, suite: str) -> int:
    n = cfg.instances
    if suite == "decomposition" and cfg.task is not None:
        rep = verify_decomposition_task(resolve_task(cfg))
    elif suite == "decomposition":
        rep = theory.verify_decomposition_random(n or 500, cfg.seed)
    elif suite == "thm2":
        rep = theory.verify_thm2_random(n or 1000, cfg.seed)
    elif suite == "thm1":
        rep = theory.verify_thm1_random(n or 40, cfg.seed)
    elif suite == "delta_regimes":
        rep = theory.verify_delta_regimes()
    else:
        raise ConfigError(f"unknown suite {suite!r}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"verify_{suite}.json"
    write_json(path, rep.to_json())
    write_metadata(out, cfg, f"verify {suite}", [path])
    print(f"{suite}: {rep.instances} instances, {rep.violations} violations")
    if not rep.ok:
        raise Violation(f"{suite} reported {rep.violations} violations")
    return EXIT_OK


def read_logits(path: str) -> np.ndarray:
    p = Path(path)
    text = p.read_text()
    try:
        if p.suffix == ".json":
            obj = json.loads(text)
            vals = obj["logits"] if isinstance(obj, dict) else obj
        else:
            vals = [float(line) for line in text.splitlines() if line.strip()]
        arr = np.asarray(vals, dtype=np.float64)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse logits from {path}: {exc}") from exc
    if arr.ndim != 1:
        raise ConfigError("logits must be a flat list")
    return arr


def cmd_fit_logits(cfg: RunConfig, input_path: str) -> int:
    y = read_logits(input_path)
    try:
        fit = fit_piecewise(y)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "fit.json", asdict(fit))
    k = np.arange(len(y))
    pred = fit.predict(k)
    write_csv(out / "residuals.csv", ("rank", "logit", "predicted", "residual"),
              zip(k.tolist(), y.tolist(), pred.tolist(), (y - pred).tolist()))
    write_metadata(out, cfg, "fit-logits", [out / "fit.json", out / "residuals.csv"],
                   {"input_sha256": hashlib.sha256(Path(input_path).read_bytes()).hexdigest()})
    print(f"breakpoint {fit.breakpoint}, mse {fit.mse:.3g}, r2 {fit.r2:.6f}")
    return EXIT_OK


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(cfg: RunConfig, run_dirs: Sequence[str]) -> int:
    rows_curve, rows_seq, sources = [], [], []
    for rd in run_dirs:
        d = Path(rd)
        if not d.is_dir():
            raise FileNotFoundError(f"run directory {rd} does not exist")
        fronts = sorted(d.glob("frontier_*.csv"))
        seqs = d / "sequences.csv"
        if not fronts and not seqs.exists():
            raise FileNotFoundError(f"run directory {rd} holds no frontier or sequence outputs")
        sources.append(str(d))
        for f in fronts:
            rule = f.stem[len("frontier_"):]
            pts = [(float(r["x"]), float(r["y"])) for r in _read_rows(f)]
            for g, y in zip(PRECISION_GRID, step_interpolate(pts, PRECISION_GRID)):
                rows_curve.append((d.name, rule, g, float(y)))
        if seqs.exists():
            groups: dict[tuple, list] = {}
            for r in _read_rows(seqs):
                groups.setdefault((r["rule"], r["param"], r["temperature"]), []).append(r)
            for key in sorted(groups):
                items = sorted(groups[key], key=lambda r: (-float(r["prob"]), r["sequence"]))
                total = math.fsum(float(r["prob"]) for r in items)
                for rank, r in enumerate(items):
                    p = float(r["prob"])
                    rows_seq.append((d.name, *key, rank, r["sequence"], p,
                                     math.log(p) if p > 0 else -math.inf, 1.0 - total))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "frontier_curves.csv"]
    write_csv(out / "frontier_curves.csv", ("run", "rule", "validity", "diversity"), rows_curve)
    if rows_seq:
        write_csv(out / "sequences_sorted.csv",
                  ("run", "rule", "param", "temperature", "rank", "sequence", "prob", "log_prob", "invalid_mass"),
                  rows_seq)
        outputs.append(out / "sequences_sorted.csv")
    write_metadata(out, cfg, "report", outputs, {"runs": sources})
    print(f"report over {len(sources)} run(s) -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vdcal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fr = sub.add_parser("frontier", help="exact validity-diversity sweep and Pareto frontiers")
    tr = sub.add_parser("sweep-tree", help="ranked candidate tree with labels and depth frontiers")
    for p in (fr, tr):
        _common(p)
        p.add_argument("--task", help="valid-set JSON file or generator spec, e.g. digits_unconstrained:d=2")
        p.add_argument("--model", help="model spec, e.g. geometric:lambda=1.0,vocab_size=10")
        p.add_argument("--mode", choices=("renormalized", "uniform"))
    fr.add_argument("--rule", help="comma-separated rule families")
    fr.add_argument("--temps", help="comma-separated temperatures")
    fr.add_argument("--params", help="'v1,v2' for one rule or 'rule:v1,v2;rule:v1'")
    fr.add_argument("--dump-sequences", action="store_true", help="also write sequences.csv")
    tr.add_argument("--depth", type=int)
    tr.add_argument("--rank-limit", type=int)
    tr.add_argument("--stride", type=int)

    ve = sub.add_parser("verify", help="randomized checks of the exact identities and bounds")
    _common(ve)
    ve.add_argument("suite", choices=SUITES)
    ve.add_argument("--task", help="valid set for the decomposition suite (default: random instances)")
    ve.add_argument("--instances", type=int)

    fl = sub.add_parser("fit-logits", help="piecewise linear/log fit of a sorted logit vector")
    _common(fl)
    fl.add_argument("input", help=".json list or one value per line")

    rp = sub.add_parser("report", help="consolidate run directories into plot-ready CSVs")
    _common(rp)
    rp.add_argument("runs", nargs="+", help="run output directories")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "frontier":
            return cmd_frontier(cfg)
        if args.command == "sweep-tree":
            return cmd_sweep_tree(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.suite)
        if args.command == "fit-logits":
            return cmd_fit_logits(cfg, args.input)
        return cmd_report(cfg, args.runs)
    except Violation as exc:
        print(f"violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (ClientError, httpx.HTTPError) as exc:
        print(f"remote failure: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except (LoadError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, BudgetError, EnumerationError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
