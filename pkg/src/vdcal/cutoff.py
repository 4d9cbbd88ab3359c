"""Cutoff rules and the retained sets / step distributions they induce."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ranked_dist import RankedDistribution, temperature_scale
from .valid_set import ValidSet

RULES = ("top_k", "top_p", "min_p", "fixed", "oracle_size", "oracle_validity", "none")
ORACLE_RULES = ("oracle_size", "oracle_validity")

# float slack on the cumulative-mass and relative-gap comparisons
MASS_TOL = 1e-12


class CutoffError(ValueError):
    pass


@dataclass(frozen=True)
class CutoffRule:
    rule: str
    param: float | None = None
    temperature: float = 1.0
    # half-open [start, stop) decoding steps where an oracle rule applies; elsewhere no filtering
    oracle_steps: tuple[int, int] | None = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise CutoffError(f"unknown rule {self.rule!r}")
        if not self.temperature > 0:
            raise CutoffError("temperature must be positive")
        p = self.param
        if self.rule in ("top_k", "fixed"):
            if p is None or int(p) != p:
                raise CutoffError(f"{self.rule} needs an integer parameter")
            if self.rule == "top_k" and p < 1:
                raise CutoffError("k must be >= 1")
            if self.rule == "fixed" and p < 0:
                raise CutoffError("fixed index must be >= 0")
            object.__setattr__(self, "param", int(p))
        elif self.rule in ("top_p", "min_p"):
            if p is None or not 0 < p <= 1:
                raise CutoffError(f"{self.rule} parameter must be in (0, 1]")
            object.__setattr__(self, "param", float(p))
        if self.oracle_steps is not None:
            object.__setattr__(self, "oracle_steps", tuple(int(x) for x in self.oracle_steps))

    @property
    def needs_oracle(self) -> bool:
        return self.rule in ORACLE_RULES

    def applies_at(self, step: int) -> bool:
        if self.oracle_steps is None:
            return True
        start, stop = self.oracle_steps
        return start <= step < stop

    def to_json(self) -> dict:
        out = {"rule": self.rule, "param": self.param, "temperature": self.temperature}
        if self.oracle_steps is not None:
            out["oracle_steps"] = list(self.oracle_steps)
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "CutoffRule":
        steps = obj.get("oracle_steps")
        return cls(obj["rule"], obj.get("param"), float(obj.get("temperature", 1.0)),
                   tuple(steps) if steps is not None else None)


def top_k(k: int, temperature: float = 1.0) -> CutoffRule:
    return CutoffRule("top_k", k, temperature)


def top_p(p: float, temperature: float = 1.0) -> CutoffRule:
    return CutoffRule("top_p", p, temperature)


def min_p(p_min: float, temperature: float = 1.0) -> CutoffRule:
    return CutoffRule("min_p", p_min, temperature)


def fixed_index(i: int, temperature: float = 1.0) -> CutoffRule:
    return CutoffRule("fixed", i, temperature)


def oracle_size(temperature: float = 1.0) -> CutoffRule:
    return CutoffRule("oracle_size", None, temperature)


def oracle_validity(temperature: float = 1.0, steps: tuple[int, int] | None = None) -> CutoffRule:
    return CutoffRule("oracle_validity", None, temperature, steps)


def no_filter(temperature: float = 1.0) -> CutoffRule:
    return CutoffRule("none", None, temperature)


@dataclass(frozen=True)
class RetainedSet:
    """Ranks kept by a rule, against the temperature-scaled ``source``."""

    ranks: tuple[int, ...]
    source: RankedDistribution

    def __post_init__(self):
        if not self.ranks:
            raise CutoffError("retained set is empty")

    @property
    def tokens(self) -> tuple:
        return tuple(self.source.tokens[r] for r in self.ranks)

    @property
    def token_set(self) -> frozenset:
        return frozenset(self.tokens)

    def __len__(self) -> int:
        return len(self.ranks)

    @property
    def is_contiguous(self) -> bool:
        return self.ranks == tuple(range(len(self.ranks)))


def _prefix(j: int) -> tuple[int, ...]:
    return tuple(range(j))


def retain(d: RankedDistribution, rule: CutoffRule, valid_set: ValidSet | None = None,
           prefix: Sequence[int] | None = None) -> RetainedSet:
    """Apply ``rule`` (temperature first) to ``d`` at ``prefix``."""
    src = temperature_scale(d, rule.temperature)
    n = len(src)
    kind = rule.rule
    if rule.needs_oracle and prefix is not None and not rule.applies_at(len(prefix)):
        kind = "none"
    if kind == "none":
        return RetainedSet(_prefix(n), src)
    if kind == "top_k":
        return RetainedSet(_prefix(min(rule.param, n)), src)
    if kind == "fixed":
        return RetainedSet(_prefix(min(rule.param + 1, n)), src)
    if kind == "top_p":
        cum = np.cumsum(src.probs)
        j = int(np.searchsorted(cum, rule.param - MASS_TOL, side="left")) + 1
        return RetainedSet(_prefix(min(j, n)), src)
    if kind == "min_p":
        threshold = rule.param * src.probs[0]
        j = int(np.count_nonzero(src.probs >= threshold * (1 - MASS_TOL)))
        return RetainedSet(_prefix(max(j, 1)), src)

    if valid_set is None or prefix is None:
        raise CutoffError(f"{kind} needs a valid set and a prefix")
    good = valid_set.valid_tokens(tuple(prefix))
    if not good:
        raise CutoffError(f"oracle rule at invalid prefix {list(prefix)}")
    if kind == "oracle_size":
        return RetainedSet(_prefix(min(len(good), n)), src)
    ranks = tuple(k for k, tok in enumerate(src.tokens) if tok in good)
    if not ranks:
        raise CutoffError(f"no valid token of prefix {list(prefix)} is in the distribution")
    return RetainedSet(ranks, src)


def induced_step_distribution(rs: RetainedSet, mode: str = "renormalized") -> RankedDistribution:
    """Next-token distribution over the retained tokens (uniform or renormalised)."""
    if mode == "uniform":
        k = len(rs.ranks)
        return RankedDistribution(np.full(k, 1.0 / k), rs.tokens)
    if mode != "renormalized":
        raise CutoffError(f"unknown mode {mode!r}")
    p = rs.source.probs[list(rs.ranks)]
    total = math.fsum(p)
    if total <= 0:
        raise CutoffError("retained tokens carry zero probability")
    return RankedDistribution(p / total, rs.tokens)
