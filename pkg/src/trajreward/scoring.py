"""Per-token log-probability sources.

Three interchangeable providers feed the distance and curiosity
computations: a seeded toy n-gram softmax model, a line-delimited
JSON file cache, and an external HTTP scoring service whose replies
are recorded so reruns are deterministic.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import requests

from .errors import CacheMiss, MalformedResponse, ServiceUnavailable

BOS = "<s>"
SCORER_URL_ENV = "TRAJREWARD_SCORER_URL"


@dataclass(frozen=True)
class CacheKey:
    """Stable address of one scored (state, continuation) pair.

    ``kind`` is "answer" for candidate-answer continuations (keyed by the
    canonical answer text) and "step" for reasoning-step continuations
    (keyed by the step index).
    """

    prompt_id: str
    traj_id: str
    state_index: int
    kind: str
    continuation_id: str

    def as_tuple(self) -> tuple:
        return (self.prompt_id, self.traj_id, self.state_index, self.kind, self.continuation_id)


@dataclass(frozen=True)
class ScoreRequest:
    """A (prefix, continuation) pair to score; continuation is non-empty."""

    prefix: str
    continuation: str
    key: CacheKey | None = None

    def __post_init__(self):
        if not self.continuation:
            raise ValueError("score request continuation must be non-empty")


@dataclass(frozen=True)
class ScoreResponse:
    """One log-probability (<= 0) per continuation token."""

    token_logprobs: tuple[float, ...]

    def __post_init__(self):
        if not self.token_logprobs:
            raise MalformedResponse("scorer returned zero token logprobs")
        if any(lp > 0.0 for lp in self.token_logprobs):
            raise MalformedResponse("scorer returned a positive log-probability")

    @property
    def token_count(self) -> int:
        return len(self.token_logprobs)

    @property
    def total_logprob(self) -> float:
        return sum(self.token_logprobs)


class LogProbSource(Protocol):
    def score(self, request: ScoreRequest) -> ScoreResponse: ...


def _stable_digest(*parts: str) -> int:
    h = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big")


class ToyModel:
    """Seeded n-gram softmax language model over a small symbol vocabulary.

    Each context of ``order - 1`` tokens owns a logit vector, lazily
    initialized as log of a Dirichlet(1) draw seeded by (seed, context),
    so scoring is deterministic across runs and processes. Logits can be
    boosted per (context, token) to plant likelihood structure.
    """

    def __init__(self, vocabulary, order: int = 2, seed: int = 0, init: str = "dirichlet"):
        if order < 1:
            raise ValueError("order must be >= 1")
        if init not in ("dirichlet", "uniform"):
            raise ValueError(f"unknown init {init!r}")
        self.vocabulary = tuple(vocabulary)
        if not self.vocabulary:
            raise ValueError("vocabulary must be non-empty")
        self.order = order
        self.seed = seed
        self.init = init
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}
        self._boosts: dict[tuple[tuple[str, ...], int], float] = {}
        self._tables: dict[tuple[str, ...], np.ndarray] = {}

    @classmethod
    def uniform(cls, vocabulary, order: int = 2, seed: int = 0) -> "ToyModel":
        return cls(vocabulary, order=order, seed=seed, init="uniform")

    @staticmethod
    def tokenize(text: str) -> list[str]:
        return text.split()

    def token_index(self, token: str) -> int:
        idx = self._index.get(token)
        if idx is None:
            idx = _stable_digest("oov", token) % len(self.vocabulary)
        return idx

    def context_of(self, tokens) -> tuple[str, ...]:
        n = self.order - 1
        ctx = tuple(tokens[-n:]) if n else ()
        if len(ctx) < n:
            ctx = (BOS,) * (n - len(ctx)) + ctx
        return ctx

    def boost(self, context_tokens, token: str, delta: float) -> None:
        """Add ``delta`` to the logit of ``token`` after ``context_tokens``."""
        ctx = self.context_of(list(context_tokens))
        self._boosts[(ctx, self.token_index(token))] = (
            self._boosts.get((ctx, self.token_index(token)), 0.0) + delta
        )
        self._tables.pop(ctx, None)

    def logits(self, context: tuple[str, ...]) -> np.ndarray:
        table = self._tables.get(context)
        if table is None:
            size = len(self.vocabulary)
            if self.init == "uniform":
                table = np.zeros(size)
            else:
                rng = np.random.default_rng(_stable_digest(str(self.seed), *context))
                table = np.log(rng.dirichlet(np.ones(size)))
            for (ctx, tok_idx), delta in self._boosts.items():
                if ctx == context:
                    table = table.copy()
                    table[tok_idx] += delta
            self._tables[context] = table
        return table

    def log_probs(self, context: tuple[str, ...]) -> np.ndarray:
        logits = self.logits(context)
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())

    def score(self, request: ScoreRequest) -> ScoreResponse:
        cont = self.tokenize(request.continuation)
        if not cont:
            raise MalformedResponse("continuation tokenizes to zero tokens")
        history = self.tokenize(request.prefix)
        out = []
        for tok in cont:
            lp = float(self.log_probs(self.context_of(history))[self.token_index(tok)])
            out.append(min(lp, 0.0))
            history.append(tok)
        return ScoreResponse(tuple(out))

    def generate(self, prefix: str, n_tokens: int, seed: int = 0) -> list[str]:
        """Sample ``n_tokens`` continuation tokens; deterministic per seed."""
        rng = np.random.default_rng(seed)
        history = self.tokenize(prefix)
        out = []
        for _ in range(n_tokens):
            probs = np.exp(self.log_probs(self.context_of(history)))
            probs = probs / probs.sum()
            tok = self.vocabulary[rng.choice(len(self.vocabulary), p=probs)]
            out.append(tok)
            history.append(tok)
        return out

    def to_config(self) -> dict:
        return {
            "vocabulary": list(self.vocabulary),
            "order": self.order,
            "seed": self.seed,
            "init": self.init,
            "boosts": [
                {"context": list(ctx), "token": self.vocabulary[tok_idx], "delta": delta}
                for (ctx, tok_idx), delta in sorted(self._boosts.items())
            ],
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ToyModel":
        model = cls(
            cfg["vocabulary"],
            order=cfg.get("order", 2),
            seed=cfg.get("seed", 0),
            init=cfg.get("init", "dirichlet"),
        )
        for b in cfg.get("boosts", ()):
            model.boost(b["context"], b["token"], b["delta"])
        return model


class FileCacheScorer:
    """Scorer backed by a line-delimited JSON file of precomputed logprobs.

    Concurrent readers are safe; writes are serialized by a lock.
    """

    def __init__(self, entries: dict[tuple, tuple[float, ...]] | None = None):
        self._entries = dict(entries or {})
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path) -> "FileCacheScorer":
        entries = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                key = CacheKey(
                    rec["prompt_id"],
                    rec["traj_id"],
                    int(rec["state_index"]),
                    rec["kind"],
                    rec["continuation_id"],
                )
                entries[key.as_tuple()] = tuple(float(x) for x in rec["token_logprobs"])
        return cls(entries)

    def record(self, key: CacheKey, response: ScoreResponse) -> None:
        with self._lock:
            self._entries[key.as_tuple()] = response.token_logprobs

    def score(self, request: ScoreRequest) -> ScoreResponse:
        key = request.key if request.key is not None else text_key(request)
        logprobs = self._entries.get(key.as_tuple())
        if logprobs is None:
            raise CacheMiss(f"no cached score for {key}")
        return ScoreResponse(logprobs)

    def dump(self, path) -> None:
        with self._lock:
            items = sorted(self._entries.items())
        with open(path, "w", encoding="utf-8") as fh:
            for key, logprobs in items:
                rec = {
                    "prompt_id": key[0],
                    "traj_id": key[1],
                    "state_index": key[2],
                    "kind": key[3],
                    "continuation_id": key[4],
                    "token_logprobs": list(logprobs),
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


def text_key(request: ScoreRequest) -> CacheKey:
    """Content-addressed key for requests that carry no explicit key."""
    digest = hashlib.blake2b(
        (request.prefix + "\x1f" + request.continuation).encode("utf-8"), digest_size=16
    ).hexdigest()
    return CacheKey("", "", -1, "text", digest)


class HttpScorer:
    """Client for a POST /v1/score service returning {"token_logprobs": [...]}.

    Transient failures are retried with exponential backoff (3 attempts
    total). Every reply is recorded into ``cache`` so a rerun against the
    same cache never re-contacts the service.
    """

    def __init__(
        self,
        base_url: str | None = None,
        timeout: float = 10.0,
        attempts: int = 3,
        backoff: float = 0.1,
        cache: FileCacheScorer | None = None,
    ):
        url = base_url or os.environ.get(SCORER_URL_ENV)
        if not url:
            raise ValueError(f"no scorer URL: pass base_url or set {SCORER_URL_ENV}")
        self.base_url = url.rstrip("/")
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self.cache = cache if cache is not None else FileCacheScorer()
        self._session = requests.Session()

    def score(self, request: ScoreRequest) -> ScoreResponse:
        key = request.key if request.key is not None else text_key(request)
        try:
            return self.cache.score(ScoreRequest(request.prefix, request.continuation, key))
        except CacheMiss:
            pass
        payload = {"prefix": request.prefix, "continuation": request.continuation}
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._session.post(
                    self.base_url + "/v1/score", json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = ServiceUnavailable(f"HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise MalformedResponse(f"HTTP {resp.status_code}: {resp.text[:200]}")
            response = _parse_score_payload(resp)
            self.cache.record(key, response)
            return response
        raise ServiceUnavailable(
            f"scoring service failed after {self.attempts} attempts: {last_error}"
        )


def _parse_score_payload(resp) -> ScoreResponse:
    try:
        body = resp.json()
    except ValueError as exc:
        raise MalformedResponse(f"non-JSON scorer reply: {exc}") from exc
    logprobs = body.get("token_logprobs")
    if not isinstance(logprobs, list) or not logprobs:
        raise MalformedResponse("scorer reply missing non-empty token_logprobs")
    try:
        values = tuple(float(x) for x in logprobs)
    except (TypeError, ValueError) as exc:
        raise MalformedResponse(f"non-numeric token_logprobs: {exc}") from exc
    declared = body.get("token_count")
    if declared is not None and int(declared) != len(values):
        raise MalformedResponse(
            f"token count mismatch: declared {declared}, got {len(values)}"
        )
    return ScoreResponse(values)


def score_batch(requests_, source: LogProbSource, parallelism: int = 1) -> list[ScoreResponse]:
    """Score requests in order; the result is independent of parallelism.

    Identical requests are scored once and share the response, so a
    duplicated request always yields identical values at both positions.
    """
    reqs = list(requests_)
    if not reqs:
        raise ValueError("score_batch needs at least one request")
    if parallelism < 1:
        raise ValueError("parallelism must be positive")
    order: dict[ScoreRequest, int] = {}
    positions: list[int] = []
    for r in reqs:
        positions.append(order.setdefault(r, len(order)))
    unique = list(order)

    answers: list[ScoreResponse | None] = [None] * len(unique)
    errors: list[tuple[int, Exception]] = []
    if parallelism == 1:
        for i, r in enumerate(unique):
            try:
                answers[i] = source.score(r)
            except Exception as exc:  # noqa: BLE001 - re-raised below
                errors.append((i, exc))
                break
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = {pool.submit(source.score, r): i for i, r in enumerate(unique)}
            for fut, i in futures.items():
                try:
                    answers[i] = fut.result()
                except Exception as exc:  # noqa: BLE001 - re-raised below
                    errors.append((i, exc))
    if errors:
        unique_index, exc = min(errors, key=lambda pair: pair[0])
        exc.request_index = positions.index(unique_index)
        raise exc
    return [answers[i] for i in positions]  # type: ignore[misc]
