"""File-backed and HTTP conditional models, and the LLM-judge protocol."""
from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import httpx

from .ranked_dist import RankedDistribution, from_logits

logger = logging.getLogger(__name__)

ENV_PREFIX = "VDCAL"


class ClientError(RuntimeError):
    pass


class SchemaError(ClientError):
    pass


class RemoteTimeoutError(ClientError):
    pass


class RemoteStatusError(ClientError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"endpoint returned HTTP {status}: {body[:200]}")
        self.status = status


class MissingPrefixError(KeyError):
    pass


class LoadError(ValueError):
    pass


# ---------------------------------------------------------------------------
# token vocabulary


class Vocabulary:
    """Bidirectional token-string <-> integer id map; unseen strings get the next id."""

    def __init__(self, tokens: Mapping[int, str] | Iterable[str] | None = None):
        self._lock = threading.Lock()
        self.to_id: dict[str, int] = {}
        self.to_str: dict[int, str] = {}
        if isinstance(tokens, Mapping):
            for i, s in tokens.items():
                self.to_id[s] = int(i)
                self.to_str[int(i)] = s
        elif tokens is not None:
            for s in tokens:
                self.id(s)

    def id(self, token: str) -> int:
        with self._lock:
            if token not in self.to_id:
                new = max(self.to_str, default=-1) + 1
                self.to_id[token] = new
                self.to_str[new] = token
            return self.to_id[token]

    def text(self, token_id: int) -> str:
        return self.to_str[token_id]

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.id(t) for t in tokens)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.to_str[i] for i in ids]

    def __len__(self) -> int:
        return len(self.to_id)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class DistributionRecord:
    prefix: tuple[str, ...]
    candidates: tuple[tuple[str, float], ...]
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.candidates:
            raise SchemaError("candidates must be non-empty")
        seen = set()
        for tok, lp in self.candidates:
            if not isinstance(tok, str):
                raise SchemaError(f"token must be a string, got {tok!r}")
            if isinstance(lp, bool) or not isinstance(lp, (int, float)) or not math.isfinite(lp):
                raise SchemaError(f"log-probability for {tok!r} must be a finite number")
            if tok in seen:
                raise SchemaError(f"duplicate candidate token {tok!r}")
            seen.add(tok)
        object.__setattr__(self, "prefix", tuple(self.prefix))
        object.__setattr__(self, "candidates", tuple((t, float(lp)) for t, lp in self.candidates))

    @classmethod
    def from_json(cls, obj) -> "DistributionRecord":
        if not isinstance(obj, Mapping):
            raise SchemaError("record must be a JSON object")
        prefix = obj.get("prefix", [])
        cands = obj.get("candidates")
        if not isinstance(prefix, list) or not all(isinstance(t, str) for t in prefix):
            raise SchemaError("prefix must be a list of strings")
        if not isinstance(cands, list):
            raise SchemaError("candidates must be a list")
        pairs = []
        for c in cands:
            if not isinstance(c, Mapping) or "token" not in c or "logprob" not in c:
                raise SchemaError("each candidate needs 'token' and 'logprob'")
            pairs.append((c["token"], c["logprob"]))
        meta = {k: obj[k] for k in ("model", "task") if k in obj}
        return cls(tuple(prefix), tuple(pairs), meta)

    def to_json(self) -> dict:
        out = {"prefix": list(self.prefix),
               "candidates": [{"token": t, "logprob": lp} for t, lp in self.candidates]}
        out.update(self.metadata)
        return out

    def distribution(self, vocab: Vocabulary) -> RankedDistribution:
        """Softmax over the candidate log-probabilities, sorted by rank."""
        toks = [vocab.id(t) for t, _ in self.candidates]
        return from_logits([lp for _, lp in self.candidates], toks)


def write_records(path: str | Path, records: Iterable[DistributionRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


class FileModel:
    """Conditional model backed by a JSONL table of distribution records."""

    concurrent_safe = True

    def __init__(self, records: Iterable[DistributionRecord], vocab: Vocabulary | None = None):
        self.vocab = vocab or Vocabulary()
        self.records: dict[tuple[str, ...], DistributionRecord] = {}
        for r in records:
            if r.prefix in self.records:
                raise LoadError(f"duplicate prefix {list(r.prefix)}")
            self.records[r.prefix] = r
        self._cache: dict[tuple[str, ...], RankedDistribution] = {}
        for r in self.records.values():
            self._cache[r.prefix] = r.distribution(self.vocab)

    def query(self, prefix: Sequence[str]) -> RankedDistribution:
        key = tuple(prefix)
        if key not in self._cache:
            raise MissingPrefixError(f"no record for prefix {list(key)}")
        return self._cache[key]

    def __call__(self, prefix: tuple) -> RankedDistribution:
        try:
            return self.query(self.vocab.decode(prefix))
        except KeyError as exc:
            raise MissingPrefixError(f"no record for prefix {list(prefix)}") from exc


def load_distributions(path: str | Path, vocab: Vocabulary | None = None) -> FileModel:
    records = []
    seen: dict[tuple, int] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = DistributionRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, SchemaError) as exc:
                raise LoadError(f"{path}:{lineno}: {exc}") from exc
            if rec.prefix in seen:
                raise LoadError(f"{path}:{lineno}: duplicate prefix (first at line {seen[rec.prefix]})")
            seen[rec.prefix] = lineno
            records.append(rec)
    return FileModel(records, vocab)


# ---------------------------------------------------------------------------
# HTTP endpoint


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    token: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 8
    top: int = 1000

    @classmethod
    def from_env(cls, kind: str = "MODEL", **overrides) -> "EndpointConfig":
        """Read ``VDCAL_<KIND>_URL``, ``_TOKEN``, ``_TIMEOUT``, ``_MAX_IN_FLIGHT``, ``_MAX_RETRIES``, ``_BACKOFF``."""
        env = os.environ
        pre = f"{ENV_PREFIX}_{kind}_"
        url = overrides.pop("url", None) or env.get(pre + "URL")
        if not url:
            raise ClientError(f"no endpoint URL ({pre}URL unset)")
        kw = {
            "token": env.get(pre + "TOKEN"),
            "timeout": float(env.get(pre + "TIMEOUT", 30.0)),
            "max_in_flight": int(env.get(pre + "MAX_IN_FLIGHT", 8)),
            "max_retries": int(env.get(pre + "MAX_RETRIES", 3)),
            "backoff": float(env.get(pre + "BACKOFF", 0.5)),
        }
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(url, **kw)


_TRANSIENT_STATUS = {408, 429, 500, 502, 503, 504}


class _Endpoint:
    def __init__(self, config: EndpointConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {"Authorization": f"Bearer {config.token}"} if config.token else {}
        self.client = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)
        self._slots = threading.Semaphore(config.max_in_flight)

    def post(self, payload: dict) -> httpx.Response:
        """POST with bounded retries and exponential backoff on transient failures."""
        last: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self.client.post(self.config.url, json=payload)
            except httpx.TimeoutException as exc:
                last = exc
                logger.warning("timeout on %s (attempt %d)", self.config.url, attempt + 1)
                continue
            except httpx.TransportError as exc:
                last = exc
                logger.warning("transport error on %s: %s", self.config.url, exc)
                continue
            if resp.status_code in _TRANSIENT_STATUS:
                last = RemoteStatusError(resp.status_code, resp.text)
                continue
            if resp.status_code >= 400:
                raise RemoteStatusError(resp.status_code, resp.text)
            return resp
        if isinstance(last, RemoteStatusError):
            raise last
        raise RemoteTimeoutError(f"retry budget exhausted for {self.config.url}: {last}") from last

    def close(self):
        self.client.close()


class RemoteModel:
    """Conditional model served over HTTP.

    Request ``{"prefix": [str], "top": int}``; response
    ``{"candidates": [{"token": str, "logprob": float}]}``. Responses are cached
    per prefix so repeated queries within a session agree.
    """

    concurrent_safe = True

    def __init__(self, config: EndpointConfig, vocab: Vocabulary | None = None,
                 transport: httpx.BaseTransport | None = None):
        self.endpoint = _Endpoint(config, transport)
        self.vocab = vocab or Vocabulary()
        self._cache: dict[tuple[str, ...], RankedDistribution] = {}
        self._lock = threading.Lock()

    def query(self, prefix: Sequence[str]) -> RankedDistribution:
        key = tuple(prefix)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        resp = self.endpoint.post({"prefix": list(key), "top": self.endpoint.config.top})
        try:
            body = resp.json()
        except (json.JSONDecodeError, ValueError) as exc:
            raise SchemaError(f"response is not valid JSON: {exc}") from exc
        if not isinstance(body, Mapping) or not isinstance(body.get("candidates"), list):
            raise SchemaError("response must be an object with a 'candidates' list")
        rec = DistributionRecord.from_json({"prefix": list(key), "candidates": body["candidates"]})
        dist = rec.distribution(self.vocab)
        with self._lock:
            self._cache.setdefault(key, dist)
            return self._cache[key]

    def __call__(self, prefix: tuple) -> RankedDistribution:
        return self.query(self.vocab.decode(prefix))

    def close(self):
        self.endpoint.close()


def remote_model(config: EndpointConfig | None = None, **kwargs) -> RemoteModel:
    return RemoteModel(config or EndpointConfig.from_env("MODEL"), **kwargs)


# ---------------------------------------------------------------------------
# judge


def _template(name: str) -> str:
    return resources.files("vdcal").joinpath("data").joinpath(name).read_text()


JUDGE_SYSTEM = _template("judge_system.txt").strip()
JUDGE_TEMPLATE = _template("judge_prompt.txt")
SCORE_KEYS = ("grammar", "semantic", "overall")


def render_judge_prompt(question: str, generation: str) -> str:
    return JUDGE_TEMPLATE.replace("{question}", question).replace("{shot}", generation)


@dataclass(frozen=True)
class JudgeVerdict:
    reason: str | None
    grammar: int | None
    semantic: int | None
    overall: int | None
    threshold: int = 9
    raw: str = field(default="", repr=False)

    @property
    def parsed(self) -> bool:
        return self.grammar is not None

    @property
    def label(self) -> bool | None:
        """True iff all three scores reach the threshold; None when unparsed."""
        if not self.parsed:
            return None
        return all(s >= self.threshold for s in (self.grammar, self.semantic, self.overall))

    @property
    def scores(self) -> dict | None:
        if not self.parsed:
            return None
        return {"grammar": self.grammar, "semantic": self.semantic, "overall": self.overall}


def extract_json_object(text: str) -> dict | None:
    """First balanced ``{...}`` in ``text`` that parses as a JSON object."""
    start = text.find("{")
    while start != -1:
        depth, in_str, esc = 0, False, False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start:i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    return None


def parse_verdict(reply: str, threshold: int = 9) -> JudgeVerdict:
    obj = extract_json_object(reply)
    if obj is None:
        return JudgeVerdict(None, None, None, None, threshold, reply)
    scores = {}
    for key in SCORE_KEYS:
        val = obj.get(key)
        if isinstance(val, bool) or not isinstance(val, int) or not 1 <= val <= 10:
            raise SchemaError(f"judge score {key!r} must be an integer in 1..10, got {val!r}")
        scores[key] = val
    reason = obj.get("reason")
    return JudgeVerdict(None if reason is None else str(reason), scores["grammar"], scores["semantic"],
                        scores["overall"], threshold, reply)


class JudgeClient:
    """Judge endpoint: request ``{"system": str, "prompt": str}``, response ``{"text": str}``."""

    def __init__(self, config: EndpointConfig, threshold: int = 9, transport: httpx.BaseTransport | None = None):
        self.endpoint = _Endpoint(config, transport)
        self.threshold = threshold

    def ask(self, prompt: str) -> str:
        resp = self.endpoint.post({"system": JUDGE_SYSTEM, "prompt": prompt})
        try:
            body = resp.json()
        except (json.JSONDecodeError, ValueError) as exc:
            raise SchemaError(f"judge response is not JSON: {exc}") from exc
        if not isinstance(body, Mapping) or not isinstance(body.get("text"), str):
            raise SchemaError("judge response must be an object with a 'text' string")
        return body["text"]

    def __call__(self, question: str, generation: str) -> JudgeVerdict:
        return parse_verdict(self.ask(render_judge_prompt(question, generation)), self.threshold)

    def close(self):
        self.endpoint.close()


def judge(question: str, generation: str, endpoint: JudgeClient | EndpointConfig, threshold: int = 9) -> JudgeVerdict:
    client = endpoint if isinstance(endpoint, JudgeClient) else JudgeClient(endpoint, threshold)
    return parse_verdict(client.ask(render_judge_prompt(question, generation)), threshold)


class JudgeLabeler:
    """Tree-sweep labeler: detokenise a completed sequence and ask the judge.

    Transport and schema failures yield ``None`` (unlabeled).
    """

    def __init__(self, client: Callable[[str, str], JudgeVerdict], question: str,
                 detokenize: Callable[[Sequence], str]):
        self.client, self.question, self.detokenize = client, question, detokenize

    def __call__(self, seq: Sequence):
        try:
            return self.client(self.question, self.detokenize(seq))
        except (ClientError, httpx.HTTPError) as exc:
            logger.warning("judge failed: %s", exc)
            return None
