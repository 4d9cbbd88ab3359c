"""Valid sets as counting prefix tries, plus the controlled testbeds."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence


class ValidSetError(ValueError):
    pass


class _Node:
    __slots__ = ("count", "children")

    def __init__(self):
        self.count = 0
        self.children: dict[int, _Node] = {}


@dataclass(frozen=True)
class BranchingProfile:
    v: tuple[int, ...]

    @property
    def m(self) -> int:
        return sum(1 for x in self.v if x >= 2)


@dataclass(frozen=True)
class BranchingViolation:
    depth: int
    first: tuple[int, ...]
    first_branching: int
    second: tuple[int, ...]
    second_branching: int


@dataclass(frozen=True, eq=False)
class ValidSet:
    """Fixed-length valid sequences stored in a trie with continuation counts.

    ``N(prefix)`` is :meth:`continuation_count`, ``G(prefix)`` is :meth:`valid_tokens`.
    ``terminator`` marks padding appended by :func:`finite_enumeration`.
    """

    d: int
    _root: _Node = field(repr=False)
    terminator: int | None = None
    token_map: Mapping[int, str] | None = field(default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self._root.count

    def __len__(self) -> int:
        return self._root.count

    def __contains__(self, seq) -> bool:
        seq = tuple(seq)
        return len(seq) == self.d and self.continuation_count(seq) == 1

    def _node(self, prefix) -> _Node | None:
        node = self._root
        for tok in prefix:
            node = node.children.get(tok)
            if node is None:
                return None
        return node

    def continuation_count(self, prefix: Sequence[int] = ()) -> int:
        if len(prefix) > self.d:
            raise ValidSetError(f"prefix length {len(prefix)} exceeds depth {self.d}")
        node = self._node(prefix)
        return 0 if node is None else node.count

    def valid_tokens(self, prefix: Sequence[int] = ()) -> frozenset[int]:
        node = self._node(prefix)
        return frozenset() if node is None else frozenset(node.children)

    def child_counts(self, prefix: Sequence[int] = ()) -> dict[int, int]:
        """``{v: N(prefix + v)}`` over the valid next tokens, in token order."""
        node = self._node(prefix)
        if node is None:
            return {}
        return {tok: node.children[tok].count for tok in sorted(node.children)}

    def sequences(self) -> Iterator[tuple[int, ...]]:
        """Valid sequences in lexicographic token order."""
        stack: list[tuple[tuple[int, ...], _Node]] = [((), self._root)]
        while stack:
            prefix, node = stack.pop()
            if len(prefix) == self.d:
                yield prefix
                continue
            for tok in sorted(node.children, reverse=True):
                stack.append((prefix + (tok,), node.children[tok]))

    def prefixes(self, depth: int) -> Iterator[tuple[int, ...]]:
        """Valid prefixes of the given length, lexicographic order."""
        level = [((), self._root)]
        for _ in range(depth):
            level = [(p + (t,), n.children[t]) for p, n in level for t in sorted(n.children)]
        for p, _ in level:
            yield p

    def check_counts(self) -> None:
        """Raise if any node count differs from the sum over its children."""
        stack = [(0, self._root)]
        while stack:
            depth, node = stack.pop()
            if depth == self.d:
                if node.count != 1 or node.children:
                    raise ValidSetError("leaf count must be 1")
                continue
            if not node.children or node.count != sum(c.count for c in node.children.values()):
                raise ValidSetError(f"count mismatch at depth {depth}")
            stack.extend((depth + 1, c) for c in node.children.values())

    def branching_profile(self) -> BranchingProfile | BranchingViolation:
        return branching_profile(self)

    def to_json(self) -> dict:
        out = {"d": self.d, "sequences": [list(s) for s in self.sequences()]}
        if self.terminator is not None:
            out["terminator"] = self.terminator
        return out


def from_sequences(seqs: Iterable[Sequence[int]], *, terminator: int | None = None,
                   token_map: Mapping[int, str] | None = None) -> ValidSet:
    seqs = [tuple(int(t) for t in s) for s in seqs]
    if not seqs:
        raise ValidSetError("valid set must be non-empty")
    d = len(seqs[0])
    if d == 0:
        raise ValidSetError("sequences must be non-empty")
    root = _Node()
    for s in seqs:
        if len(s) != d:
            raise ValidSetError(f"mixed sequence lengths: {d} and {len(s)}")
        node = root
        path = [root]
        for tok in s:
            node = node.children.setdefault(tok, _Node())
            path.append(node)
        if node.count:
            raise ValidSetError(f"duplicate sequence {list(s)}")
        for n in path:
            n.count += 1
    return ValidSet(d, root, terminator, token_map)


def continuation_count(vs: ValidSet, prefix: Sequence[int]) -> int:
    return vs.continuation_count(prefix)


def valid_tokens(vs: ValidSet, prefix: Sequence[int]) -> frozenset[int]:
    return vs.valid_tokens(prefix)


def branching_profile(vs: ValidSet) -> BranchingProfile | BranchingViolation:
    """Per-position valid branching, or the first pair of prefixes that breaks invariance."""
    v = []
    level = [((), vs._root)]
    for depth in range(vs.d):
        first_prefix, first_node = level[0]
        g = len(first_node.children)
        for prefix, node in level[1:]:
            if len(node.children) != g:
                return BranchingViolation(depth, first_prefix, g, prefix, len(node.children))
        v.append(g)
        level = [(p + (t,), n.children[t]) for p, n in level for t in sorted(n.children)]
    return BranchingProfile(tuple(v))


def _digit_tokens(base: int, token_map: Mapping[int, int] | Sequence[int] | None) -> list[int]:
    if token_map is None:
        return list(range(base))
    toks = [int(token_map[i]) for i in range(base)]
    if len(set(toks)) != base:
        raise ValidSetError("token_map must be injective")
    return toks


def digits_unconstrained(d: int, base: int = 10, token_map=None) -> ValidSet:
    """Every length-``d`` digit string is valid."""
    if d < 1 or base < 1:
        raise ValidSetError("need d >= 1 and base >= 1")
    toks = _digit_tokens(base, token_map)
    return from_sequences(tuple(toks[i] for i in digits) for digits in itertools.product(range(base), repeat=d))


def digits_sum_constrained(d: int, base: int = 10, target: int = 0, mode: str = "equals",
                           token_map=None) -> ValidSet:
    """Digit strings whose digit sum equals (or is at most) ``target``.

    Enumerated by DFS pruned with a completion-count table over (position, running sum).
    """
    if mode not in ("equals", "at_most"):
        raise ValidSetError(f"unknown mode {mode!r}")
    if target < 0:
        raise ValidSetError("target must be non-negative")
    toks = _digit_tokens(base, token_map)
    # ways[t][s]: completions of positions t..d-1 whose digits sum to s (equals) / at most s
    ways = [[0] * (target + 1) for _ in range(d + 1)]
    for s in range(target + 1):
        ways[d][s] = 1 if (s == 0 or mode == "at_most") else 0
    for t in range(d - 1, -1, -1):
        for s in range(target + 1):
            ways[t][s] = sum(ways[t + 1][s - x] for x in range(min(base - 1, s) + 1))
    if ways[0][target] == 0:
        raise ValidSetError(f"no length-{d} base-{base} strings with sum {mode} {target}")

    seqs = []

    def walk(t: int, remaining: int, digits: list[int]):
        if t == d:
            seqs.append(tuple(toks[x] for x in digits))
            return
        for x in range(min(base - 1, remaining) + 1):
            if ways[t + 1][remaining - x]:
                digits.append(x)
                walk(t + 1, remaining - x, digits)
                digits.pop()

    walk(0, target, [])
    return from_sequences(seqs)


def finite_enumeration(strings: Iterable[Sequence[int]], pad: int,
                       token_map: Mapping[int, str] | None = None) -> ValidSet:
    """Variable-length answers right-padded with ``pad`` to a common length."""
    strings = [tuple(int(t) for t in s) for s in strings]
    if not strings or any(len(s) == 0 for s in strings):
        raise ValidSetError("need at least one non-empty string")
    if any(pad in s for s in strings):
        raise ValidSetError(f"pad token {pad} collides with a content token")
    d = max(len(s) for s in strings)
    return from_sequences((s + (pad,) * (d - len(s)) for s in strings), terminator=pad, token_map=token_map)


# ---------------------------------------------------------------------------
# state-name testbed

US_STATES = (
    "alabama", "alaska", "arizona", "arkansas", "california", "colorado", "connecticut",
    "delaware", "florida", "georgia", "hawaii", "idaho", "illinois", "indiana", "iowa",
    "kansas", "kentucky", "louisiana", "maine", "maryland", "massachusetts", "michigan",
    "minnesota", "mississippi", "missouri", "montana", "nebraska", "nevada", "new hampshire",
    "new jersey", "new mexico", "new york", "north carolina", "north dakota", "ohio",
    "oklahoma", "oregon", "pennsylvania", "rhode island", "south carolina", "south dakota",
    "tennessee", "texas", "utah", "vermont", "virginia", "washington", "west virginia",
    "wisconsin", "wyoming",
)

CHAR_PAD = 0
CHAR_VOCAB = {CHAR_PAD: "<eos>", 1: " ", **{2 + i: chr(ord("a") + i) for i in range(26)}}


def encode_chars(text: str) -> tuple[int, ...]:
    lookup = {ch: tok for tok, ch in CHAR_VOCAB.items() if tok != CHAR_PAD}
    return tuple(lookup[ch] for ch in text)


def us_states() -> ValidSet:
    """The 50 US state names, one character per token, padded with ``CHAR_PAD``."""
    return finite_enumeration((encode_chars(s) for s in US_STATES), CHAR_PAD, token_map=CHAR_VOCAB)


# ---------------------------------------------------------------------------
# file format

_GENERATORS = {
    "digits_unconstrained": digits_unconstrained,
    "digits_sum_constrained": digits_sum_constrained,
    "finite_enumeration": finite_enumeration,
    "us_states": us_states,
}


def from_spec(spec: Mapping) -> ValidSet:
    """Build from ``{"d", "sequences"}`` or ``{"generator", "params"}``."""
    if "generator" in spec:
        name = spec["generator"]
        if name not in _GENERATORS:
            raise ValidSetError(f"unknown generator {name!r}")
        params = dict(spec.get("params", {}))
        if "token_map" in params and isinstance(params["token_map"], Mapping):
            params["token_map"] = {int(k): v for k, v in params["token_map"].items()}
        return _GENERATORS[name](**params)
    if "sequences" in spec:
        vs = from_sequences(spec["sequences"], terminator=spec.get("terminator"))
        if "d" in spec and int(spec["d"]) != vs.d:
            raise ValidSetError(f"declared d={spec['d']} but sequences have length {vs.d}")
        return vs
    raise ValidSetError("valid-set spec needs 'sequences' or 'generator'")


def load(path: str | Path) -> ValidSet:
    with open(path) as fh:
        return from_spec(json.load(fh))
