"""Closed-form entropy losses and bounds, and harnesses that check them against exact enumeration."""
from __future__ import annotations

import itertools
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .cutoff import no_filter
from .enumeration import GeometricModel, exact_sequence_distribution
from .ranked_dist import GeometricRankedModel
from .valid_set import BranchingProfile, ValidSet, from_sequences

DECOMP_TOL = 1e-12
BOUND_TOL = 1e-9


class PremiseError(ValueError):
    pass


@dataclass(frozen=True)
class HardStepParams:
    eta: float
    rho: float
    m: int
    delta: float

    def __post_init__(self):
        if not (self.eta > 0 and self.rho > 0 and self.m >= 0 and 0 <= self.delta < 1):
            raise ValueError("need eta > 0, rho > 0, m >= 0 and delta in [0, 1)")


@dataclass(frozen=True)
class TradeoffParams:
    epsilon: float
    profile: tuple[int, ...]
    vocab_size: int

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        prof = self.profile.v if isinstance(self.profile, BranchingProfile) else self.profile
        prof = tuple(int(v) for v in prof)
        if any(v < 1 for v in prof):
            raise ValueError("branching counts must be >= 1")
        if self.vocab_size < max(2, max(prof, default=1)):
            raise ValueError("vocab_size must cover every branching count")
        object.__setattr__(self, "profile", prof)

    @property
    def L(self) -> float:
        return math.log(1.0 / self.epsilon)

    @property
    def m(self) -> int:
        return sum(1 for v in self.profile if v >= 2)


# ---------------------------------------------------------------------------
# tilted entropy


def tilted_entropy(a, v):
    """Entropy (nats) of ``p(i) ∝ exp(-a i / v)`` on ``i = 0..v-1``.

    Closed form through the truncated-geometric partition function; vectorises
    over ``a`` and ``v``.
    """
    a = np.asarray(a, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(a < 0) or np.any(v < 1):
        raise ValueError("need a >= 0 and v >= 1")
    a, v = np.broadcast_arrays(a, v)
    theta = a / v
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # log Z = log(1 - e^{-a}) - log(1 - e^{-theta}); E[i] = 1/expm1(theta) - v/expm1(a)
        log_z = np.log(-np.expm1(-a)) - np.log(-np.expm1(-theta))
        mean = 1.0 / np.expm1(theta) - v / np.expm1(a)
        h = log_z + theta * mean
    # near a = 0 the closed form cancels catastrophically; the uniform variance series is exact to O(a^4)
    series = np.log(v) - theta**2 * (v**2 - 1) / 24.0
    h = np.where(a < 1e-5, series, h)
    h = np.where((a == 0) | (v == 1), np.log(v), h)
    h = np.clip(h, 0.0, np.log(v))
    return float(h) if h.ndim == 0 else h


def entropy_loss(a, v):
    """``ln v - H_v(a)``: entropy lost to rank tilt, relative to uniform over ``v`` tokens."""
    v_arr = np.asarray(v, dtype=np.float64)
    out = np.maximum(np.log(v_arr) - tilted_entropy(a, v), 0.0)
    return float(out) if np.ndim(out) == 0 else out


H_v = tilted_entropy
Delta_v = entropy_loss


def c_min(epsilon: float, vocab_size: int) -> float:
    """Smallest per-step entropy loss over branching counts ``2..vocab_size`` at ``L = ln(1/eps)``."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    vs = np.arange(2, vocab_size + 1)
    return float(np.min(entropy_loss(math.log(1 / epsilon), vs)))


def argmin_branching(epsilon: float, vocab_size: int) -> int:
    vs = np.arange(2, vocab_size + 1)
    return int(vs[np.argmin(entropy_loss(math.log(1 / epsilon), vs))])


# ---------------------------------------------------------------------------
# bounds


@dataclass(frozen=True)
class DiversityBound:
    per_position: float
    coarse: float


def thm2_bound(params: TradeoffParams) -> DiversityBound:
    """Upper bounds on diversity when validity is at least ``1 - eps``."""
    loss = math.fsum(entropy_loss(params.L, v) for v in params.profile)
    coarse = math.exp(-params.m * c_min(params.epsilon, params.vocab_size)) if params.m else 1.0
    return DiversityBound(math.exp(-loss), coarse)


def thm1_bound(params: HardStepParams) -> float:
    """Sequence-recall ceiling when ``m`` steps are (eta, rho)-hard and precision >= 1 - delta."""
    budget = -math.log1p(-params.delta) / params.eta
    return math.exp(-params.rho * max(params.m - budget, 0.0))


# ---------------------------------------------------------------------------
# geometric-model verification


@dataclass
class Thm2Report:
    validity: float
    diversity: float
    epsilon: float
    triggered: bool
    invalid_mass: float = 0.0
    bound: float | None = None
    coarse_bound: float | None = None
    finite_support_tol: float = 0.0
    slack: float | None = None
    entropy: float = 0.0
    chain_rule_entropy: float = 0.0
    chain_rule_error: float = 0.0

    @property
    def violated(self) -> bool:
        return (self.triggered and self.slack is not None and self.slack < -BOUND_TOL) \
            or self.chain_rule_error > BOUND_TOL

    def to_json(self) -> dict:
        return asdict(self)


def product_valid_set(profile: Sequence[int]) -> ValidSet:
    """All sequences whose token at position ``t`` lies in ``0..v_t-1``."""
    return from_sequences(itertools.product(*(range(v) for v in profile)))


def verify_thm2(model: GeometricRankedModel, profile: Sequence[int], epsilon: float,
                ranking: Callable[[tuple], Sequence[int]] | None = None) -> Thm2Report:
    """Check the diversity bound and the entropy chain rule on one geometric instance.

    The valid tokens at position ``t`` are ``0..v_t-1``; ``ranking`` may reorder
    tokens but must keep them in the top ``v_t`` ranks.
    """
    profile = tuple(int(v) for v in (profile.v if isinstance(profile, BranchingProfile) else profile))
    if len(profile) != model.depth:
        raise PremiseError("profile length must equal model depth")
    if max(profile) > model.vocab_size:
        raise PremiseError("more valid tokens than vocabulary entries")
    vs = product_valid_set(profile)
    engine = GeometricModel(model, ranking)
    if ranking is not None:
        for t in range(model.depth):
            for prefix in vs.prefixes(t):
                top = set(engine(prefix).tokens[:profile[t]])
                if top != vs.valid_tokens(prefix):
                    raise PremiseError(f"valid tokens are not top-ranked at prefix {list(prefix)}")
    sd = exact_sequence_distribution(engine, no_filter(), vs, "renormalized")
    val = metrics.validity(sd, vs)
    h = metrics.conditional_entropy(sd, vs)
    div = math.exp(h) / vs.size
    z = [model.lambdas[t] * profile[t] / model.temperature for t in range(model.depth)]
    h_chain = math.fsum(tilted_entropy(z[t], profile[t]) for t in range(model.depth))
    # premise on the directly accumulated invalid mass; 1 - val cancels badly near 1
    report = Thm2Report(val, div, epsilon, sd.invalid_mass <= epsilon, invalid_mass=sd.invalid_mass, entropy=h, chain_rule_entropy=h_chain,
                        chain_rule_error=abs(h - h_chain))
    if report.triggered:
        # finite normalisation: local validity >= 1-eps only gives q^v <= eps + q^|V|
        tol = max(model.ratio(t) ** model.vocab_size for t in range(model.depth))
        eff = epsilon + tol
        b = thm2_bound(TradeoffParams(eff, profile, model.vocab_size)) if eff < 1 else DiversityBound(1.0, 1.0)
        report.bound, report.coarse_bound, report.finite_support_tol = b.per_position, b.coarse, tol
        report.slack = b.per_position - div
    return report


@dataclass
class VerifyReport:
    check: str
    instances: int
    violations: int
    max_slack: float | None
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_json(self) -> dict:
        out = {"check": self.check, "instances": self.instances, "violations": self.violations,
               "max_slack": self.max_slack, "tolerance": self.tolerance}
        if self.details:
            out["details"] = self.details
        return out


def random_thm2_instance(rng: random.Random, max_depth: int = 4, max_branch: int = 4):
    d = rng.randint(1, max_depth)
    profile = tuple(rng.randint(1, max_branch) for _ in range(d))
    vocab = rng.randint(max(2, max(profile)), 12)
    lambdas = tuple(math.exp(rng.uniform(math.log(0.05), math.log(6.0))) for _ in range(d))
    T = math.exp(rng.uniform(math.log(0.2), math.log(5.0)))
    return GeometricRankedModel(lambdas, T, vocab), profile


def verify_thm2_random(instances: int = 1000, seed: int = 0) -> VerifyReport:
    """Seeded geometric instances, each checked at the tightest triggering epsilon and a looser one."""
    rng = random.Random(seed)
    triggered = violations = checks = 0
    min_slack = math.inf
    max_chain = 0.0
    while triggered < instances:
        model, profile = random_thm2_instance(rng)
        miss = verify_thm2(model, profile, 0.5).invalid_mass
        if not 0 < miss < 1:
            continue
        for eps in (miss * (1 + 1e-12), min(miss + rng.uniform(0, 0.5), 1 - 1e-6)):
            rep = verify_thm2(model, profile, eps)
            checks += 1
            max_chain = max(max_chain, rep.chain_rule_error)
            if rep.triggered:
                triggered += 1
                min_slack = min(min_slack, rep.slack)
            violations += rep.violated
    return VerifyReport("thm2", triggered, violations, min_slack, BOUND_TOL,
                        {"checks": checks, "max_chain_rule_error": max_chain, "seed": seed})


# ---------------------------------------------------------------------------
# decomposition verification


@dataclass
class DecompositionReport:
    precision: float
    recall: float
    precision_product: float
    recall_product: float
    alpha: tuple
    beta: tuple

    @property
    def precision_error(self) -> float:
        return abs(self.precision - self.precision_product)

    @property
    def recall_error(self) -> float:
        return abs(self.recall - self.recall_product)

    @property
    def ok(self) -> bool:
        return self.precision_error <= DECOMP_TOL and self.recall_error <= DECOMP_TOL


def verify_decomposition(policy, vs: ValidSet) -> DecompositionReport:
    f = metrics.decomposition_factors(policy, vs)
    return DecompositionReport(metrics.sequence_precision(policy, vs), metrics.sequence_recall(policy, vs),
                               f.precision_product, f.recall_product, f.alpha, f.beta)


def random_valid_set(rng: random.Random, vocab: int, d: int, max_size: int = 60) -> ValidSet:
    """Random fixed-length valid set built by independent branching choices."""
    seqs: set[tuple] = set()
    target = rng.randint(1, min(max_size, vocab ** d))
    while len(seqs) < target:
        if not seqs or rng.random() < 0.3:
            seqs.add(tuple(rng.randrange(vocab) for _ in range(d)))
        else:
            base = rng.choice(sorted(seqs))
            cut = rng.randrange(d)
            seqs.add(base[:cut] + tuple(rng.randrange(vocab) for _ in range(d - cut)))
    return from_sequences(sorted(seqs))


def random_cutoff_policy(rng: random.Random, vocab: int, d: int) -> Callable[[tuple], frozenset]:
    """Per-prefix random ranking with a random rank cutoff, memoised for consistency."""
    table: dict[tuple, frozenset] = {}

    def policy(prefix: tuple) -> frozenset:
        prefix = tuple(prefix)
        if prefix not in table:
            order = list(range(vocab))
            rng.shuffle(order)
            table[prefix] = frozenset(order[:rng.randint(1, vocab)])
        return table[prefix]

    return policy


def verify_decomposition_random(instances: int = 500, seed: int = 0, max_vocab: int = 12,
                                max_depth: int = 4) -> VerifyReport:
    rng = random.Random(seed)
    violations, worst = 0, 0.0
    for _ in range(instances):
        vocab = rng.randint(2, max_vocab)
        d = rng.randint(1, max_depth)
        vs = random_valid_set(rng, vocab, d)
        rep = verify_decomposition(random_cutoff_policy(rng, vocab, d), vs)
        worst = max(worst, rep.precision_error, rep.recall_error)
        violations += not rep.ok
    return VerifyReport("decomposition", instances, violations, worst, DECOMP_TOL, {"seed": seed})


# ---------------------------------------------------------------------------
# hard-step (compounding) verification


@dataclass(frozen=True)
class PolicyStats:
    cutoffs: tuple
    precision: float
    recall: float
    alpha: tuple
    beta: tuple

    def u(self, t: int) -> float:
        return -math.log(self.alpha[t]) if self.alpha[t] > 0 else math.inf

    def v(self, t: int) -> float:
        return -math.log(self.beta[t]) if self.beta[t] > 0 else math.inf


def enumerate_cutoff_policies(vs: ValidSet, rankings: dict[tuple, Sequence[int]]) -> list[PolicyStats]:
    """Every assignment of a rank cutoff to every valid non-terminal prefix.

    ``rankings[prefix]`` is the model's token order at that prefix.
    """
    prefixes = [p for t in range(vs.d) for p in vs.prefixes(t)]
    choices = [range(1, len(rankings[p]) + 1) for p in prefixes]
    out = []
    for cut in itertools.product(*choices):
        table = {p: frozenset(rankings[p][:j]) for p, j in zip(prefixes, cut)}
        f = metrics.decomposition_factors(table, vs)
        alpha = f.alpha + (0.0,) * (vs.d - len(f.alpha))
        beta = f.beta + (0.0,) * (vs.d - len(f.beta))
        out.append(PolicyStats(cut, metrics.sequence_precision(table, vs), metrics.sequence_recall(table, vs),
                               alpha, beta))
    return out


def step_hardness(policies: Sequence[PolicyStats], d: int, eta: float) -> list[float]:
    """Largest rho making each step (eta, rho)-hard over the given policy class."""
    out = []
    for t in range(d):
        vals = [p.v(t) for p in policies if p.u(t) <= eta]
        out.append(min(vals) if vals else math.inf)
    return out


@dataclass
class Thm1Check:
    eta: float
    rho: float
    m: int
    delta: float
    bound: float
    worst_recall: float

    @property
    def slack(self) -> float:
        return self.bound - self.worst_recall


def verify_thm1(vs: ValidSet, rankings: dict[tuple, Sequence[int]], etas: Sequence[float],
                deltas: Sequence[float]) -> tuple[list[Thm1Check], int]:
    """Check the recall ceiling over every cutoff policy, for every measured hardness level."""
    policies = enumerate_cutoff_policies(vs, rankings)
    checks, violations = [], 0
    for eta in etas:
        hard = step_hardness(policies, vs.d, eta)
        rhos = sorted({r for r in hard if 0 < r < math.inf})
        for rho in rhos:
            m = sum(1 for r in hard if r >= rho)
            for delta in deltas:
                bound = thm1_bound(HardStepParams(eta, rho, m, delta))
                admitted = [p.recall for p in policies if p.precision >= 1 - delta]
                if not admitted:
                    continue
                worst = max(admitted)
                checks.append(Thm1Check(eta, rho, m, delta, bound, worst))
                violations += worst > bound + DECOMP_TOL
    return checks, violations


def random_thm1_instance(rng: random.Random, max_leaves: int = 16):
    """Small valid set (<= ``max_leaves`` sequences) with a random model ranking per prefix."""
    while True:
        vocab = rng.randint(2, 4)
        d = rng.randint(1, 3)
        vs = random_valid_set(rng, vocab, d, max_size=max_leaves)
        n_prefixes = sum(1 for t in range(vs.d) for _ in vs.prefixes(t))
        if vocab ** n_prefixes <= 4096:
            break
    rankings = {}
    for t in range(vs.d):
        for p in vs.prefixes(t):
            order = list(range(vocab))
            rng.shuffle(order)
            rankings[p] = tuple(order)
    return vs, rankings


def verify_thm1_random(instances: int = 40, seed: int = 0,
                       etas: Sequence[float] = (0.05, 0.1, 0.25, 0.5, 1.0),
                       deltas: Sequence[float] = (0.0, 0.05, 0.1, 0.3, 0.5)) -> VerifyReport:
    rng = random.Random(seed)
    n_checks = violations = 0
    min_slack = math.inf
    for _ in range(instances):
        vs, rankings = random_thm1_instance(rng)
        checks, bad = verify_thm1(vs, rankings, etas, deltas)
        n_checks += len(checks)
        violations += bad
        for c in checks:
            min_slack = min(min_slack, c.slack)
    return VerifyReport("thm1", instances, violations, None if min_slack == math.inf else min_slack,
                        DECOMP_TOL, {"checks": n_checks, "seed": seed})


# ---------------------------------------------------------------------------
# asymptotic regimes


def verify_delta_regimes() -> VerifyReport:
    small = entropy_loss(1e-3, 2) / 1e-6
    large = entropy_loss(50.0, 2)
    ok_small = abs(small * 32 - 1) <= 0.01
    ok_large = abs(large - math.log(2)) < 1e-6
    min_at_2 = argmin_branching(math.exp(-1e-2), 256) == 2
    return VerifyReport("delta_regimes", 3, (not ok_small) + (not ok_large) + (not min_at_2),
                        None, 0.01,
                        {"ratio_small_L": small, "delta_2_at_50": large, "argmin_small_L": 2 if min_at_2 else None})
