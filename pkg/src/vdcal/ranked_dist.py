"""Ranked next-token distributions: construction, temperature, geometric model, logit fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy.optimize import least_squares

RENORM_GUARD = 1e-9


@dataclass(frozen=True)
class RankedDistribution:
    """Next-token probabilities sorted by decreasing probability.

    ``probs[k]`` is the probability of the rank-``k`` token and ``tokens[k]`` its
    identity. Without explicit tokens the identity of rank ``k`` is ``k``.
    """

    probs: np.ndarray
    tokens: tuple = field(default=())

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1 + 1e-12):
            raise ValueError("probs must lie in [0, 1]")
        total = float(math.fsum(p))
        if abs(total - 1.0) > RENORM_GUARD:
            raise ValueError(f"probs sum to {total!r}, not 1")
        if np.any(np.diff(p) > 1e-15):
            raise ValueError("probs must be non-increasing in rank")
        tokens = tuple(self.tokens) if len(self.tokens) else tuple(range(p.size))
        if len(tokens) != p.size:
            raise ValueError("tokens must align with probs")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate token identities")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "tokens", tokens)

    def __len__(self) -> int:
        return self.probs.size

    def prob_of(self, token: Hashable) -> float:
        """Probability of ``token``, 0.0 when it is not in the support list."""
        idx = self.rank_index.get(token)
        return 0.0 if idx is None else float(self.probs[idx])

    @property
    def rank_index(self) -> dict:
        cached = self.__dict__.get("_rank_index")
        if cached is None:
            cached = {tok: k for k, tok in enumerate(self.tokens)}
            object.__setattr__(self, "_rank_index", cached)
        return cached


@dataclass(frozen=True)
class LogitVector:
    logits: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.logits, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("logits must be a non-empty 1-D sequence")
        if np.any(np.diff(x) > 0):
            raise ValueError("logits must be non-increasing in rank")
        x.setflags(write=False)
        object.__setattr__(self, "logits", x)


@dataclass(frozen=True)
class GeometricRankedModel:
    """Ranked model with ``p(i) ∝ exp(-lambdas[t] * i / temperature)`` at position ``t``."""

    lambdas: tuple
    temperature: float = 1.0
    vocab_size: int = 2

    def __post_init__(self):
        lams = tuple(float(x) for x in np.atleast_1d(self.lambdas))
        if not lams or any(not (lam > 0) for lam in lams):
            raise ValueError("every sharpness must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        object.__setattr__(self, "lambdas", lams)

    @property
    def depth(self) -> int:
        return len(self.lambdas)

    def ratio(self, position: int) -> float:
        """Geometric ratio ``q_t = exp(-lambda_t / T)``."""
        return math.exp(-self.lambdas[position] / self.temperature)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    z /= z.sum()
    return z


def from_logits(logits: Sequence[float], tokens: Sequence[Hashable] | None = None) -> RankedDistribution:
    """Softmax then sort descending; ties keep the original index order."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("logits must be a non-empty 1-D sequence")
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise ValueError(f"non-finite logit at index {int(bad[0])}: {x[bad[0]]!r}")
    order = np.argsort(-x, kind="stable")
    probs = _softmax(x[order])
    # enforce monotonicity lost to rounding in exp
    probs = np.minimum.accumulate(probs)
    probs /= probs.sum()
    ids = tuple(range(x.size)) if tokens is None else tuple(tokens)
    if len(ids) != x.size:
        raise ValueError("tokens must align with logits")
    return RankedDistribution(probs, tuple(ids[i] for i in order))


def temperature_scale(d: RankedDistribution | LogitVector, T: float) -> RankedDistribution:
    """Scale by temperature: probabilities proportional to ``p ** (1/T)``."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T!r}")
    if isinstance(d, LogitVector):
        return from_logits(d.logits / T)
    if T == 1.0:
        return d
    with np.errstate(divide="ignore"):
        logp = np.log(d.probs)
    scaled = logp / T
    probs = np.exp(scaled - scaled[0])
    probs /= probs.sum()
    probs = np.minimum.accumulate(probs)
    return RankedDistribution(probs / probs.sum(), d.tokens)


def geometric(model: GeometricRankedModel, position: int, tokens: Sequence[Hashable] | None = None) -> RankedDistribution:
    """Geometric ranked distribution at ``position``, normalised over the finite vocabulary."""
    if not 0 <= position < model.depth:
        raise IndexError(f"position {position} outside model depth {model.depth}")
    rate = model.lambdas[position] / model.temperature
    w = np.exp(-rate * np.arange(model.vocab_size, dtype=np.float64))
    return RankedDistribution(w / w.sum(), tuple(tokens) if tokens is not None else ())


def entropy(d: RankedDistribution | np.ndarray) -> float:
    """Shannon entropy in nats, with ``0 ln 0 = 0``."""
    p = np.asarray(d.probs if isinstance(d, RankedDistribution) else d, dtype=np.float64)
    p = p[p > 0]
    return float(max(0.0, -math.fsum(p * np.log(p))))


# ---------------------------------------------------------------------------
# piecewise linear-head / log-tail fit


@dataclass(frozen=True)
class PiecewiseLogitFit:
    slope: float
    intercept: float
    breakpoint: int
    tail_a: float
    tail_b: float
    tail_c: float
    mse: float
    r2: float
    n: int
    degenerate: bool = False

    def predict(self, ranks) -> np.ndarray:
        k = np.asarray(ranks, dtype=np.float64)
        head = self.slope * k + self.intercept
        with np.errstate(invalid="ignore", divide="ignore"):
            tail = self.tail_a + self.tail_b * np.log(k + self.tail_c)
        return np.where(k <= self.breakpoint, head, tail)


_C_GRID_SIZE = 48
_REFINE_CANDIDATES = 6


def _head_sse(y: np.ndarray):
    """Linear LS over ranks ``0..c`` for every ``c``, via prefix sums."""
    k = np.arange(y.size, dtype=np.float64)
    n = np.cumsum(np.ones_like(k))
    sk, skk = np.cumsum(k), np.cumsum(k * k)
    sy, sky, syy = np.cumsum(y), np.cumsum(k * y), np.cumsum(y * y)
    det = n * skk - sk * sk
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(det > 0, (n * sky - sk * sy) / det, 0.0)
    b = (sy - m * sk) / n
    sse = syy - 2 * m * sky - 2 * b * sy + m * m * skk + 2 * m * b * sk + n * b * b
    return np.maximum(sse, 0.0), m, b


def _tail_sse_for_offset(y: np.ndarray, offset: float) -> np.ndarray:
    """Best SSE of ``A + B log(k + C)`` (B <= 0) over ranks ``c+1..n-1`` for every ``c``."""
    k = np.arange(y.size, dtype=np.float64)
    x = np.log(k + offset)
    rev = slice(None, None, -1)
    n = np.cumsum(np.ones_like(x))[rev]
    sx, sxx = np.cumsum(x[rev])[rev], np.cumsum((x * x)[rev])[rev]
    sy, sxy, syy = np.cumsum(y[rev])[rev], np.cumsum((x * y)[rev])[rev], np.cumsum((y * y)[rev])[rev]
    # entry j covers ranks j..n-1; shift so entry c covers c+1..n-1
    pad = lambda a: np.append(a[1:], 0.0)  # noqa: E731
    n, sx, sxx, sy, sxy, syy = map(pad, (n, sx, sxx, sy, sxy, syy))
    det = n * sxx - sx * sx
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(det > 1e-12 * np.maximum(n * sxx, 1.0), (n * sxy - sx * sy) / det, 0.0)
        b = np.minimum(b, 0.0)
        a = np.where(n > 0, (sy - b * sx) / np.maximum(n, 1.0), 0.0)
    sse = syy - 2 * b * sxy - 2 * a * sy + b * b * sxx + 2 * a * b * sx + n * a * a
    return np.maximum(sse, 0.0)


def _refine_tail(k: np.ndarray, y: np.ndarray, c_start: float):
    """Nonlinear LS of the log tail with ``B <= 0`` and ``k + C > 0``."""
    c_lo = -float(k[0]) + 1e-9
    a0 = float(np.mean(y))

    def resid(theta):
        a, b, c = theta
        return a + b * np.log(k + c) - y

    x = np.log(k + c_start)
    design = np.column_stack([np.ones_like(x), x])
    (a_init, b_init), *_ = np.linalg.lstsq(design, y, rcond=None)
    b_init = min(b_init, 0.0)
    start = np.array([a_init if b_init < 0 else a0, b_init, max(c_start, c_lo + 1e-6)])
    res = least_squares(
        resid,
        start,
        bounds=([-np.inf, -np.inf, c_lo], [np.inf, 0.0, np.inf]),
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=2000,
        method="trf",
        x_scale="jac",
    )
    a, b, c = (float(v) for v in res.x)
    return a, b, c, float(np.sum(res.fun ** 2))


def fit_piecewise(logits) -> PiecewiseLogitFit:
    """Fit ``f(k) = m k + b`` for ``k <= c`` and ``A + B log(k + C)`` for ``k > c``.

    Every breakpoint is swept. Head fits are closed-form; the tail is screened on
    a grid of offsets ``C`` and the best few breakpoints are refined by nonlinear
    least squares. An empty tail (``c = n - 1``) is allowed.
    """
    y = np.asarray(logits.logits if isinstance(logits, LogitVector) else logits, dtype=np.float64)
    if y.ndim != 1 or y.size < 8:
        raise ValueError("need at least 8 logits to fit both pieces")
    if not np.all(np.isfinite(y)):
        raise ValueError("logits must be finite")
    n = y.size
    sst = float(np.sum((y - y.mean()) ** 2))
    if np.ptp(y) == 0:
        return PiecewiseLogitFit(0.0, float(y[0]), n - 1, 0.0, 0.0, 0.0, 0.0, 1.0, n, degenerate=True)

    head_sse, slopes, intercepts = _head_sse(y)
    offsets = np.concatenate([[0.0], np.geomspace(1e-3, max(10.0 * n, 10.0), _C_GRID_SIZE)])
    # offset 0 is invalid when rank 0 sits in the tail; c >= 1 keeps k >= 2 in the tail
    tail_best = np.full(n, np.inf)
    tail_off = np.zeros(n)
    for off in offsets:
        sse = _tail_sse_for_offset(y, off) if off > 0 else np.r_[np.inf, _tail_sse_for_offset(y, 1e-12)[1:]]
        better = sse < tail_best
        tail_best[better] = sse[better]
        tail_off[better] = off
    tail_len = n - 1 - np.arange(n)
    usable = (np.arange(n) >= 1) & ((tail_len == 0) | (tail_len >= 3))
    tail_best[tail_len == 0] = 0.0
    total = np.where(usable, head_sse + tail_best, np.inf)

    candidates = list(np.argsort(total, kind="stable")[:_REFINE_CANDIDATES])
    best = None
    for c in sorted(set(int(c) for c in candidates)):
        if tail_len[c] == 0:
            params = (0.0, 0.0, 0.0, 0.0)
        else:
            k_tail = np.arange(c + 1, n, dtype=np.float64)
            params = _refine_tail(k_tail, y[c + 1:], float(tail_off[c]) or 1.0)
        sse = float(head_sse[c]) + params[3]
        key = (sse, -c)
        if best is None or key < best[0]:
            best = (key, c, params)
    (_, c, (a, b, cc, _)) = best
    fit = PiecewiseLogitFit(float(slopes[c]), float(intercepts[c]), c, a, b, cc, 0.0, 0.0, n)
    resid = fit.predict(np.arange(n)) - y
    mse = float(np.mean(resid ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / sst
    return PiecewiseLogitFit(fit.slope, fit.intercept, c, a, b, cc, mse, r2, n)
