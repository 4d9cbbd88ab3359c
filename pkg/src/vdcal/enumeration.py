"""Exact sequence-space engines: induced sequence distributions, tree sweeps, Pareto frontiers."""
from __future__ import annotations

import bisect
import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .cutoff import CutoffError, CutoffRule, induced_step_distribution, retain
from .metrics import PRPoint, SequenceDistribution, diversity, validity
from .ranked_dist import GeometricRankedModel, RankedDistribution, geometric
from .valid_set import ValidSet

MAX_DEPTH = 6
MAX_VALID = 10**6


class BudgetError(RuntimeError):
    pass


class EnumerationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# conditional models


class ConditionalModel(Protocol):
    """Maps a prefix to the ranked next-token distribution (with token identities)."""

    concurrent_safe: bool

    def __call__(self, prefix: tuple) -> RankedDistribution: ...


class GeometricModel:
    """Geometric ranked model with an optional per-prefix token ordering.

    ``ranking(prefix)`` returns the token ids in rank order; the default puts
    token ``i`` at rank ``i``.
    """

    concurrent_safe = True

    def __init__(self, params: GeometricRankedModel, ranking: Callable[[tuple], Sequence[int]] | None = None):
        self.params = params
        self.ranking = ranking
        self._base = [geometric(params, t) for t in range(params.depth)]

    def __call__(self, prefix: tuple) -> RankedDistribution:
        t = len(prefix)
        if t >= self.params.depth:
            raise EnumerationError(f"prefix length {t} beyond model depth {self.params.depth}")
        if self.ranking is None:
            return self._base[t]
        return RankedDistribution(self._base[t].probs, tuple(self.ranking(tuple(prefix))))


class UniformModel:
    concurrent_safe = True

    def __init__(self, vocab_size: int):
        self._dist = RankedDistribution(np.full(vocab_size, 1.0 / vocab_size))

    def __call__(self, prefix: tuple) -> RankedDistribution:
        return self._dist


class TableModel:
    """Explicit prefix -> distribution table; unknown prefixes are an error."""

    concurrent_safe = True

    def __init__(self, table: Mapping[tuple, RankedDistribution]):
        self.table = {tuple(k): v for k, v in table.items()}

    def __call__(self, prefix: tuple) -> RankedDistribution:
        try:
            return self.table[tuple(prefix)]
        except KeyError:
            raise KeyError(f"no distribution for prefix {list(prefix)}") from None


def interleaved_ranking(valid_tokens: Sequence[int], invalid_tokens: Sequence[int], gap: int = 1):
    """Rank order that alternates valid tokens with ``gap`` invalid tokens, leftovers at the end."""
    order, inv = [], list(invalid_tokens)
    for v in valid_tokens:
        order.append(v)
        order.extend(inv[:gap])
        inv = inv[gap:]
    return tuple(order + inv)


def shape_calibrated_model(vs: ValidSet, vocab_size: int, invalid_decay: float = 0.5) -> Callable:
    """Order- and shape-calibrated conditional model for ``vs``.

    Valid tokens get weight ``N(prefix + v)``; invalid tokens follow below the
    smallest valid weight with geometric decay. Prefixes outside ``vs`` get a
    uniform distribution.
    """
    uniform = RankedDistribution(np.full(vocab_size, 1.0 / vocab_size))
    cache: dict[tuple, RankedDistribution] = {}

    def model(prefix: tuple) -> RankedDistribution:
        prefix = tuple(prefix)
        if prefix in cache:
            return cache[prefix]
        counts = vs.child_counts(prefix)
        if not counts:
            return uniform
        valid = sorted(counts, key=lambda v: (-counts[v], v))
        invalid = [tok for tok in range(vocab_size) if tok not in counts]
        floor = min(counts.values())
        w = [float(counts[v]) for v in valid] + [floor * invalid_decay ** (j + 1) for j in range(len(invalid))]
        w = np.asarray(w)
        out = RankedDistribution(w / w.sum(), tuple(valid + invalid))
        cache[prefix] = out
        return out

    model.concurrent_safe = True  # type: ignore[attr-defined]
    return model


# ---------------------------------------------------------------------------
# exact sequence distributions


def _check_budget(vs: ValidSet, max_depth: int = MAX_DEPTH):
    if vs.d > max_depth or vs.size > MAX_VALID:
        raise BudgetError(f"enumeration budget exceeded: d={vs.d} (max {max_depth}), |V|={vs.size} (max {MAX_VALID})")


def exact_sequence_distribution(model: ConditionalModel, rule: CutoffRule, vs: ValidSet,
                                mode: str = "renormalized", max_depth: int = MAX_DEPTH) -> SequenceDistribution:
    """Exact probability of every valid sequence under ``rule`` applied to ``model``.

    Only valid prefixes are expanded. Mass on invalid next tokens is added to
    ``invalid_mass`` as it leaves the trie. ``max_depth`` raises the depth cap
    for padded finite enumerations, whose cost is bounded by the trie size.
    """
    _check_budget(vs, max_depth)
    probs: dict[tuple, float] = {}
    leaks: list[float] = []
    stack = [((), 0.0)]
    while stack:
        prefix, logp = stack.pop()
        if len(prefix) == vs.d:
            probs[prefix] = math.exp(logp)
            continue
        try:
            rs = retain(model(prefix), rule, vs, prefix)
        except CutoffError as exc:
            raise EnumerationError(f"at prefix {list(prefix)}: {exc}") from exc
        step = induced_step_distribution(rs, mode)
        good = vs.valid_tokens(prefix)
        bad = [float(p) for tok, p in zip(step.tokens, step.probs) if tok not in good]
        if bad:
            leaks.append(math.exp(logp) * math.fsum(bad))
        children = [(tok, float(p)) for tok, p in zip(step.tokens, step.probs) if tok in good]
        for tok, p in sorted(children, reverse=True):
            if p > 0:
                stack.append((prefix + (tok,), logp + math.log(p)))
    ordered = {seq: probs.get(seq, 0.0) for seq in vs.sequences()}
    return SequenceDistribution(ordered, math.fsum(leaks), vs.d)


# ---------------------------------------------------------------------------
# Pareto frontiers


@dataclass(frozen=True)
class FrontierPoint:
    x: float
    y: float
    rule: str = ""
    param: float | None = None
    temperature: float | None = None
    depth: int | None = None


@dataclass(frozen=True)
class Frontier:
    points: tuple[FrontierPoint, ...]

    def __len__(self) -> int:
        return len(self.points)

    def xy(self) -> list[tuple[float, float]]:
        return [(p.x, p.y) for p in self.points]


def _as_point(p) -> FrontierPoint:
    if isinstance(p, FrontierPoint):
        return p
    if isinstance(p, PRPoint):
        return FrontierPoint(p.precision, p.recall, **{k: v for k, v in p.provenance.items()
                                                        if k in ("rule", "param", "temperature", "depth")})
    x, y = p
    return FrontierPoint(float(x), float(y))


def pareto_frontier(points: Iterable, tol: float = 1e-12) -> Frontier:
    """Non-dominated subset (maximising both coordinates), sorted by x descending.

    x values within ``tol`` count as equal, so rounding noise around 1.0 does not
    keep dominated points. Exact duplicates keep their first occurrence.
    """
    pts = [_as_point(p) for p in points]
    pts = [p for p in pts if not (math.isnan(p.x) or math.isnan(p.y))]
    order = sorted(range(len(pts)), key=lambda i: (-pts[i].x, -pts[i].y, i))
    neg_x = [-pts[i].x for i in order]
    run_max = np.maximum.accumulate([pts[i].y for i in order]) if order else []
    kept: list[FrontierPoint] = []
    best_y = -math.inf
    for i in order:
        p = pts[i]
        # points with x >= p.x - tol form a prefix of the descending order
        j = bisect.bisect_right(neg_x, -p.x + tol)
        if p.y >= run_max[j - 1] and p.y > best_y:
            kept.append(p)
            best_y = p.y
    return Frontier(tuple(kept))


def step_interpolate(frontier: Frontier | Sequence, grid: Sequence[float]) -> np.ndarray:
    """Best y among points with x >= g, for each grid value g (0 when none)."""
    pts = frontier.xy() if isinstance(frontier, Frontier) else [(float(a), float(b)) for a, b in frontier]
    out = np.zeros(len(grid))
    for i, g in enumerate(grid):
        ys = [y for x, y in pts if x >= g - 1e-12]
        out[i] = max(ys) if ys else 0.0
    return out


# ---------------------------------------------------------------------------
# temperature / parameter sweeps


FAMILY_PARAMS = {"top_k": True, "top_p": True, "min_p": True, "fixed": True,
                 "none": False, "oracle_size": False, "oracle_validity": False}


@dataclass
class SweepResult:
    cloud: list[FrontierPoint]
    frontier: Frontier
    distributions: dict = field(default_factory=dict, repr=False)


def _sweep_point(model, vs, rule: CutoffRule, mode: str, keep: bool, max_depth: int = MAX_DEPTH):
    sd = exact_sequence_distribution(model, rule, vs, mode, max_depth)
    val = validity(sd, vs)
    div = diversity(sd, vs) if val > 0 else math.nan
    return FrontierPoint(val, div, rule.rule, rule.param, rule.temperature, vs.d), (sd if keep else None)


def temperature_frontier(model: ConditionalModel, vs: ValidSet, family: str, temperatures: Sequence[float],
                         params: Sequence[float] | None = None, mode: str = "renormalized", *,
                         workers: int = 1, keep_distributions: bool = False,
                         max_depth: int = MAX_DEPTH) -> SweepResult:
    """Exact (validity, diversity) for every (temperature, parameter) pair, plus its Pareto frontier."""
    if family not in FAMILY_PARAMS:
        raise ValueError(f"unknown rule family {family!r}")
    grid = list(params) if FAMILY_PARAMS[family] else [None]
    if not grid or len(temperatures) == 0:
        raise ValueError("sweep grids must be non-empty")
    rules = [CutoffRule(family, p, float(T)) for T in temperatures for p in grid]
    run = lambda r: _sweep_point(model, vs, r, mode, keep_distributions, max_depth)  # noqa: E731
    if workers > 1 and getattr(model, "concurrent_safe", False):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, rules))
    else:
        results = [run(r) for r in rules]
    cloud = [pt for pt, _ in results]
    dists = {(r.rule, r.param, r.temperature): sd for r, (_, sd) in zip(rules, results) if sd is not None}
    return SweepResult(cloud, pareto_frontier(cloud), dists)


# ---------------------------------------------------------------------------
# labelled tree sweep

VALID, INVALID, UNLABELED = "valid", "invalid", "unlabeled"


@dataclass
class TreeNode:
    index: int
    parent: int | None
    prefix: tuple
    rank: int | None
    token: Hashable | None
    prob: float | None
    label: str = UNLABELED
    children: list[int] = field(default_factory=list)
    completions: list = field(default_factory=list)
    judge_scores: list = field(default_factory=list)
    valid_leaves: int = 0

    @property
    def depth(self) -> int:
        return len(self.prefix)


@dataclass
class LabeledTree:
    nodes: list[TreeNode]
    depth: int
    rank_limit: int
    stride: int
    warnings: int = 0

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def children(self, node: TreeNode | int) -> list[TreeNode]:
        node = self.nodes[node] if isinstance(node, int) else node
        return [self.nodes[i] for i in node.children]

    def expanded(self) -> list[TreeNode]:
        return [n for n in self.nodes if n.children]

    def to_json(self) -> dict:
        nodes = []
        for n in self.nodes:
            nodes.append({
                "parent": n.parent, "rank": n.rank, "token": n.token, "prob": n.prob, "label": n.label,
                "completions": [list(c) if not isinstance(c, str) else c for c in n.completions],
                "judge_scores": n.judge_scores,
            })
        return {"depth": self.depth, "rank_limit": self.rank_limit, "stride": self.stride,
                "warnings": self.warnings, "nodes": nodes}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, obj: Mapping) -> "LabeledTree":
        nodes: list[TreeNode] = []
        for i, raw in enumerate(obj["nodes"]):
            parent = raw["parent"]
            prefix = () if parent is None else nodes[parent].prefix + (raw["token"],)
            node = TreeNode(i, parent, prefix, raw["rank"], raw["token"], raw["prob"], raw["label"],
                            completions=[tuple(c) if isinstance(c, list) else c for c in raw.get("completions", [])],
                            judge_scores=raw.get("judge_scores", []))
            if parent is not None:
                nodes[parent].children.append(i)
            nodes.append(node)
        tree = cls(nodes, obj["depth"], obj["rank_limit"], obj["stride"], obj.get("warnings", 0))
        _propagate(tree)
        return tree

    @classmethod
    def load(cls, path: str | Path) -> "LabeledTree":
        return cls.from_json(json.loads(Path(path).read_text()))


class GreedyCompleter:
    """Extend a prefix with the rank-0 token until ``length`` tokens."""

    def __init__(self, model: ConditionalModel, length: int):
        self.model, self.length = model, length

    def __call__(self, prefix: tuple) -> list[tuple]:
        seq = tuple(prefix)
        while len(seq) < self.length:
            seq += (self.model(seq).tokens[0],)
        return [seq]


class SampledCompleter:
    """``n`` ancestral samples per prefix; the RNG is seeded from the prefix for order independence."""

    def __init__(self, model: ConditionalModel, length: int, n: int = 10, seed: int = 0):
        self.model, self.length, self.n, self.seed = model, length, n, seed

    def __call__(self, prefix: tuple) -> list[tuple]:
        rng = random.Random(f"{self.seed}:{list(prefix)}")
        out = []
        for _ in range(self.n):
            seq = tuple(prefix)
            while len(seq) < self.length:
                d = self.model(seq)
                seq += (rng.choices(d.tokens, weights=d.probs.tolist())[0],)
            out.append(seq)
        return out


class OracleLabeler:
    def __init__(self, vs: ValidSet):
        self.vs = vs

    def __call__(self, seq: tuple):
        return tuple(seq) in self.vs


def _label_leaf(node: TreeNode, completions: list, labeler) -> int:
    """Label a leaf from its completions; returns the number of labeler failures."""
    node.completions = list(completions)
    labels, failures = [], 0
    for c in completions:
        try:
            res = labeler(c)
        except Exception:  # noqa: BLE001 - any labeler failure leaves the leaf unlabeled
            res = None
        scores = getattr(res, "scores", None)
        if scores is not None:
            node.judge_scores.append(scores)
        lab = getattr(res, "label", res)
        if lab is None:
            failures += 1
        labels.append(lab)
    if any(lab is True for lab in labels):
        node.label = VALID
    elif any(lab is None for lab in labels):
        node.label = UNLABELED
    else:
        node.label = INVALID
    return failures


def _propagate(tree: LabeledTree) -> None:
    for node in reversed(tree.nodes):
        if not node.children:
            node.valid_leaves = 1 if node.label == VALID else 0
            continue
        kids = tree.children(node)
        node.valid_leaves = sum(k.valid_leaves for k in kids)
        if any(k.label == VALID for k in kids):
            node.label = VALID
        elif any(k.label == UNLABELED for k in kids):
            node.label = UNLABELED
        else:
            node.label = INVALID


def tree_sweep(model: ConditionalModel, depth: int, rank_limit: int, stride: int = 1,
               completer: Callable[[tuple], list] | None = None, labeler: Callable | None = None,
               prefix: tuple = (), *, workers: int = 1) -> LabeledTree:
    """Expand candidates at ranks ``0, s, 2s, ... < R`` to ``depth`` steps, complete and label leaves.

    A non-leaf is valid iff some descendant leaf is valid. Leaves whose labeler
    failed stay unlabeled, and so do ancestors with no valid descendant.
    """
    if depth < 1 or rank_limit < 1 or stride < 1:
        raise ValueError("depth, rank_limit and stride must be positive")
    if labeler is None:
        raise ValueError("a labeler is required")
    completer = completer or (lambda p: [tuple(p)])
    nodes = [TreeNode(0, None, tuple(prefix), None, None, None)]
    level = [0]
    for _ in range(depth):
        nxt = []
        for idx in level:
            parent = nodes[idx]
            dist = model(parent.prefix)
            for rank in range(0, min(rank_limit, len(dist)), stride):
                tok = dist.tokens[rank]
                child = TreeNode(len(nodes), idx, parent.prefix + (tok,), rank, tok, float(dist.probs[rank]))
                nodes.append(child)
                parent.children.append(child.index)
                nxt.append(child.index)
        level = nxt
    tree = LabeledTree(nodes, depth, rank_limit, stride)
    leaves = [nodes[i] for i in level]

    def work(leaf: TreeNode):
        try:
            return completer(leaf.prefix)
        except Exception:  # noqa: BLE001
            return None

    if workers > 1 and getattr(model, "concurrent_safe", False):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            completions = list(pool.map(work, leaves))
    else:
        completions = [work(leaf) for leaf in leaves]
    for leaf, comps in zip(leaves, completions):
        if comps is None:
            leaf.label = UNLABELED
            tree.warnings += 1
            continue
        tree.warnings += _label_leaf(leaf, comps, labeler)
    _propagate(tree)
    return tree


def _labeled_children(tree: LabeledTree, node: TreeNode) -> list[TreeNode]:
    return sorted((k for k in tree.children(node) if k.label != UNLABELED), key=lambda k: k.rank)


def local_pr_curve(tree: LabeledTree, node: TreeNode | int) -> list[PRPoint]:
    """Precision and recall for every cutoff index over a node's labelled candidates.

    Recall weights each valid candidate by its number of valid descendant leaves
    (one for leaves), counted over the expanded sub-tree only.
    """
    node = tree.nodes[node] if isinstance(node, int) else node
    kids = _labeled_children(tree, node)
    if not kids:
        raise EnumerationError(f"node {node.index} has no labelled candidates")
    total = sum(k.valid_leaves for k in kids)
    out, n_valid, weight = [], 0, 0
    for j, k in enumerate(kids, start=1):
        if k.label == VALID:
            n_valid += 1
            weight += k.valid_leaves
        out.append(PRPoint(n_valid / j, weight / total if total else 0.0,
                           {"rule": "fixed", "param": k.rank, "depth": node.depth + 1}))
    return out


PRECISION_GRID = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass(frozen=True)
class DepthSummary:
    depth: int
    grid: tuple[float, ...]
    max: np.ndarray
    min: np.ndarray
    mean: np.ndarray
    n_nodes: int


def depth_frontier_summary(tree: LabeledTree, grid: Sequence[float] = PRECISION_GRID) -> dict[int, DepthSummary]:
    """Pointwise max/min/mean of per-node PR frontiers, grouped by decision depth.

    Nodes without a valid labelled candidate are skipped: local recall is
    undefined at a prefix with no valid continuation.
    """
    groups: dict[int, list[np.ndarray]] = {}
    for node in tree.expanded():
        if not any(k.label == VALID for k in _labeled_children(tree, node)):
            continue
        curve = step_interpolate(pareto_frontier(local_pr_curve(tree, node)), grid)
        groups.setdefault(node.depth + 1 - len(tree.root.prefix), []).append(curve)
    out = {}
    for depth in sorted(groups):
        stack = np.vstack(groups[depth])
        out[depth] = DepthSummary(depth, tuple(grid), stack.max(0), stack.min(0), stack.mean(0), len(groups[depth]))
    return out


def point_to_row(p: FrontierPoint) -> dict:
    return asdict(p)
