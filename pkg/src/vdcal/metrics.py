"""Validity, diversity, precision/recall, decomposition factors, calibration checks, text diversity."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .cutoff import RetainedSet
from .ranked_dist import RankedDistribution
from .valid_set import ValidSet

MASS_TOL = 1e-9


class MetricError(ValueError):
    pass


class PolicyError(KeyError):
    """A policy has no retained set for a prefix the decoder can reach."""


@dataclass(frozen=True)
class SequenceDistribution:
    """Probabilities of full sequences plus the aggregated mass outside the valid set."""

    probs: Mapping[tuple, float]
    invalid_mass: float = 0.0
    d: int | None = None

    def __post_init__(self):
        probs = {tuple(k): float(v) for k, v in self.probs.items()}
        d = self.d
        for seq, p in probs.items():
            if d is None:
                d = len(seq)
            if len(seq) != d:
                raise MetricError("all sequences must share one length")
            if p < 0:
                raise MetricError("negative probability")
        total = math.fsum(probs.values()) + self.invalid_mass
        if abs(total - 1.0) > MASS_TOL:
            raise MetricError(f"sequence distribution has total mass {total!r}")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "d", d)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.probs.values()) + self.invalid_mass

    def sorted_items(self) -> list[tuple[tuple, float]]:
        """Sequences by non-increasing probability, ties in sequence order."""
        return sorted(self.probs.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass(frozen=True)
class PRPoint:
    precision: float
    recall: float
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.precision <= 1 and 0 <= self.recall <= 1):
            raise MetricError("precision and recall must lie in [0, 1]")


# ---------------------------------------------------------------------------
# validity and diversity


def _valid_probs(sd: SequenceDistribution, vs: ValidSet) -> np.ndarray:
    return np.array([p for seq, p in sd.probs.items() if seq in vs], dtype=np.float64)


def validity(sd: SequenceDistribution, vs: ValidSet) -> float:
    return float(math.fsum(_valid_probs(sd, vs)))


def conditional_entropy(sd: SequenceDistribution, vs: ValidSet) -> float:
    """Entropy (nats) of ``sd`` conditioned on landing in the valid set."""
    p = _valid_probs(sd, vs)
    total = math.fsum(p)
    if total <= 0:
        raise MetricError("diversity is undefined when validity is 0")
    p = p[p > 0] / total
    return max(0.0, -math.fsum(p * np.log(p)))


def diversity(sd: SequenceDistribution, vs: ValidSet) -> float:
    """Effective support of the validity-conditioned distribution over ``|V|``."""
    return math.exp(conditional_entropy(sd, vs)) / vs.size


# ---------------------------------------------------------------------------
# local precision / recall


def _tokens(s) -> frozenset:
    if isinstance(s, RetainedSet):
        return s.token_set
    return frozenset(s)


def local_precision(retained, valid: Iterable[Hashable]) -> float:
    s = _tokens(retained)
    if not s:
        raise MetricError("retained set is empty")
    return len(s & frozenset(valid)) / len(s)


def local_recall(retained, vs: ValidSet, prefix: Sequence[int] = ()) -> float:
    prefix = tuple(prefix)
    total = vs.continuation_count(prefix)
    if total == 0:
        raise MetricError(f"prefix {list(prefix)} has no valid continuation")
    s = _tokens(retained)
    kept = sum(n for tok, n in vs.child_counts(prefix).items() if tok in s)
    return kept / total


# ---------------------------------------------------------------------------
# policies and sequence-level precision / recall

Policy = Callable[[tuple], Iterable] | Mapping


def retained_at(policy: Policy, prefix: tuple) -> frozenset:
    """Retained token set of ``policy`` at ``prefix``."""
    try:
        out = policy[prefix] if isinstance(policy, Mapping) else policy(prefix)
    except KeyError as exc:
        raise PolicyError(f"policy undefined at reachable prefix {list(prefix)}") from exc
    if out is None:
        raise PolicyError(f"policy undefined at reachable prefix {list(prefix)}")
    s = _tokens(out)
    if not s:
        raise PolicyError(f"policy retains nothing at prefix {list(prefix)}")
    return s


def sequence_precision(policy: Policy, vs: ValidSet, mode: str = "uniform") -> float:
    """Probability of a valid sequence when sampling uniformly from each retained set.

    Enumerates every valid path and multiplies ``1/|S_t|`` along it in log space.
    """
    if mode != "uniform":
        raise MetricError("sequence precision is defined for uniform sampling only")
    logs = []
    stack = [((), 0.0)]
    while stack:
        prefix, logp = stack.pop()
        if len(prefix) == vs.d:
            logs.append(logp)
            continue
        s = retained_at(policy, prefix)
        step = -math.log(len(s))
        for tok in sorted(s & vs.valid_tokens(prefix)):
            stack.append((prefix + (tok,), logp + step))
    return math.fsum(math.exp(x) for x in logs)


def sequence_recall(policy: Policy, vs: ValidSet) -> float:
    """Fraction of valid sequences whose every token survives truncation."""
    reached = 0
    stack = [()]
    while stack:
        prefix = stack.pop()
        if len(prefix) == vs.d:
            reached += 1
            continue
        s = retained_at(policy, prefix)
        stack.extend(prefix + (tok,) for tok in s & vs.valid_tokens(prefix))
    return reached / vs.size


@dataclass(frozen=True)
class DecompositionFactors:
    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    # step (1-based) whose conditioning event had probability 0, if any
    alpha_truncated_at: int | None = None
    beta_truncated_at: int | None = None

    @property
    def precision_product(self) -> float:
        return math.prod(self.alpha)

    @property
    def recall_product(self) -> float:
        return math.prod(self.beta)


def decomposition_factors(policy: Policy, vs: ValidSet) -> DecompositionFactors:
    """Per-step factors whose products give sequence precision and recall.

    ``alpha[t]`` is the expected local precision at step ``t`` under uniform
    decoding, given every earlier token was valid. ``beta[t]`` is the expected
    local recall under the uniform distribution on ``V``, given every earlier
    token was retained.
    """
    # frontier entries: (prefix, Q_S probability, U_V probability)
    frontier = [((), 1.0, 1.0)]
    alpha, beta = [], []
    a_cut = b_cut = None
    for t in range(vs.d):
        q_total = math.fsum(q for _, q, _ in frontier)
        u_total = math.fsum(u for _, _, u in frontier)
        if q_total <= 0 and a_cut is None:
            a_cut = t + 1
        if u_total <= 0 and b_cut is None:
            b_cut = t + 1
        if a_cut is not None and b_cut is not None:
            break
        a_terms, b_terms, nxt = [], [], []
        for prefix, q, u in frontier:
            s = retained_at(policy, prefix)
            g = vs.valid_tokens(prefix)
            counts = vs.child_counts(prefix)
            n_here = vs.continuation_count(prefix)
            a_terms.append(q * len(s & g) / len(s))
            b_terms.append(u * sum(counts[v] for v in s & g) / n_here)
            for v in sorted(s & g):
                nxt.append((prefix + (v,), q / len(s), u * counts[v] / n_here))
        if a_cut is None:
            alpha.append(math.fsum(a_terms) / q_total)
        if b_cut is None:
            beta.append(math.fsum(b_terms) / u_total)
        frontier = nxt
    return DecompositionFactors(tuple(alpha), tuple(beta), a_cut, b_cut)


# ---------------------------------------------------------------------------
# calibration checks


@dataclass(frozen=True)
class OrderCalibration:
    calibrated: bool
    violations: int


def order_calibration_check(d: RankedDistribution, valid: Iterable[Hashable]) -> OrderCalibration:
    """Count (valid, invalid) token pairs where the invalid token is strictly more probable."""
    good = frozenset(valid)
    mask = np.array([tok in good for tok in d.tokens])
    pv = np.sort(d.probs[mask])
    pi = d.probs[~mask]
    # for each invalid prob, number of valid probs strictly below it
    violations = int(np.searchsorted(pv, pi, side="left").sum()) if pv.size and pi.size else 0
    return OrderCalibration(violations == 0, violations)


def shape_calibration_deviation(d: RankedDistribution, vs: ValidSet, prefix: Sequence[int] = ()) -> float:
    """Total variation between ``d`` restricted to ``G`` and ``N(prefix+v)/N(prefix)``."""
    prefix = tuple(prefix)
    counts = vs.child_counts(prefix)
    if not counts:
        raise MetricError(f"prefix {list(prefix)} has no valid continuation")
    model = np.array([d.prob_of(v) for v in counts], dtype=np.float64)
    if model.sum() <= 0:
        raise MetricError("distribution puts no mass on valid tokens")
    target = np.array(list(counts.values()), dtype=np.float64)
    return 0.5 * float(np.abs(model / model.sum() - target / target.sum()).sum())


# ---------------------------------------------------------------------------
# text diversity


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(hypothesis: Sequence, references: Sequence[Sequence], max_n: int = 4) -> float:
    """Sentence BLEU: uniform weights, clipped counts, brevity penalty, no smoothing."""
    hyp_len = len(hypothesis)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        hyp = _ngrams(hypothesis, n)
        max_ref: Counter = Counter()
        for ref in references:
            max_ref |= _ngrams(ref, n)
        clipped = sum(min(c, max_ref[g]) for g, c in hyp.items())
        if clipped == 0:
            return 0.0
        log_p += math.log(clipped / max(1, sum(hyp.values()))) / max_n
    ref_len = min((len(r) for r in references), key=lambda r: (abs(r - hyp_len), r))
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def self_bleu(generations: Sequence[Sequence], n: int = 4) -> float:
    """Mean BLEU of each generation against all the others."""
    if len(generations) < 2:
        raise MetricError("self-BLEU needs at least two generations")
    gens = [list(g) for g in generations]
    scores = [bleu(g, gens[:i] + gens[i + 1:], n) for i, g in enumerate(gens)]
    return math.fsum(scores) / len(scores)


def embedding_diversity(vectors) -> float:
    """Mean pairwise cosine distance; lies in [0, 2]."""
    e = np.asarray(vectors, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 2:
        raise MetricError("need at least two embedding vectors")
    norms = np.linalg.norm(e, axis=1)
    if np.any(norms == 0):
        raise MetricError("zero embedding vector")
    u = e / norms[:, None]
    sims = u @ u.T
    iu = np.triu_indices(e.shape[0], k=1)
    return float(np.mean(1.0 - sims[iu]))
