"""Extract full predicted pdfs from a next-digit probability provider.

A provider answers one question: given a serialized prompt, what is the
probability of each digit ``0-9`` as the next token?  :func:`hierarchy_pdf`
asks that question for the bare prompt and then for every digit prefix,
multiplying conditionals down to a ``10**N``-bin pdf.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ProtocolError, ProviderError
from .kernels import KernelSpec
from .estimators import kde_estimate
from .prob import DiscretePdf, Grid, SampleSet, Trajectory, uniform_ignorance

log = logging.getLogger(__name__)

DEFAULT_CONTEXT_CAP = 200


@dataclass(frozen=True)
class SerializationConfig:
    num_digits: int = 2
    digit_separator: str = " "
    number_separator: str = " , "
    trailing_separator: bool = True

    def __post_init__(self):
        if self.num_digits < 1:
            raise ValueError("num_digits must be >= 1")
        if not self.digit_separator or not self.number_separator:
            raise ValueError("separators must be non-empty")

    @property
    def grid(self) -> Grid:
        return Grid(self.num_digits)


def serialize(samples: SampleSet | Sequence[int], config: SerializationConfig = SerializationConfig()) -> str:
    """``[61, 42]`` -> ``"6 1 , 4 2 , "`` under the default config."""
    values = samples.bin_indices if isinstance(samples, SampleSet) else samples
    limit = 10 ** config.num_digits
    words = []
    for v in values:
        v = int(v)
        if not 0 <= v < limit:
            raise ValueError(f"sample {v} does not fit in {config.num_digits} digits")
        words.append(config.digit_separator.join(f"{v:0{config.num_digits}d}"))
    if not words:
        return ""
    text = config.number_separator.join(words)
    if config.trailing_separator:
        text += config.number_separator
    return text


def parse(text: str, config: SerializationConfig = SerializationConfig()) -> list[int]:
    """Inverse of :func:`serialize`."""
    if text == "":
        return []
    body = text
    if config.trailing_separator:
        if not body.endswith(config.number_separator):
            raise ProtocolError(f"context {text!r} lacks the trailing separator")
        body = body[: -len(config.number_separator)]
    out = []
    for word in body.split(config.number_separator):
        digits = word.split(config.digit_separator)
        if len(digits) != config.num_digits or not all(len(d) == 1 and d.isdigit() for d in digits):
            raise ProtocolError(f"malformed number {word!r} in context")
        out.append(int("".join(digits)))
    return out


def prefix_context(context: str, prefix: Sequence[int], config: SerializationConfig) -> str:
    """Prompt text after ``context`` plus the partially written digits ``prefix``."""
    return context + "".join(f"{d}{config.digit_separator}" for d in prefix)


def split_prefix_context(text: str, config: SerializationConfig) -> tuple[str, list[int]]:
    """Recover ``(context, prefix)`` from a :func:`prefix_context` string."""
    sep, nsep = config.digit_separator, config.number_separator

    def ends_with_digit(s):
        return len(s) > len(sep) and s.endswith(sep) and s[-len(sep) - 1].isdigit()

    prefix: list[int] = []
    body = text
    while len(prefix) < config.num_digits - 1 and ends_with_digit(body):
        before = body[: -len(sep) - 1]
        if not (before == "" or before.endswith(nsep) or ends_with_digit(before)):
            break
        prefix.insert(0, int(body[-len(sep) - 1]))
        body = before
    if body and not body.endswith(nsep):
        raise ProtocolError(f"cannot split prefix from context {text!r}")
    return body, prefix


class DigitDistribution:
    """Ten non-negative probabilities over the digit tokens, summing to one."""

    __slots__ = ("probs", "raw")

    def __init__(self, probs):
        p = np.array(probs, dtype=float)
        if p.shape != (10,):
            raise ProtocolError(f"expected 10 digit probabilities, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ProtocolError("digit probabilities must be finite and non-negative")
        total = p.sum()
        if not total > 0:
            raise ProtocolError("digit probabilities sum to zero")
        p.setflags(write=False)
        # raw answer kept so a recording replays bit-identically
        self.raw = p
        # other tokens are dropped, so renormalize over the digits
        q = p / total
        q.setflags(write=False)
        self.probs = q

    def __repr__(self):
        return f"DigitDistribution({self.probs.tolist()})"


class Provider(Protocol):
    def digit_probs(self, context: str) -> DigitDistribution: ...


class CountingProvider:
    """Base for providers that count how often they are queried."""

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def digit_probs(self, context: str) -> DigitDistribution:
        with self._lock:
            self.calls += 1
        return DigitDistribution(self._answer(context))

    def _answer(self, context: str):
        raise NotImplementedError


class UniformMock(CountingProvider):
    def _answer(self, context):
        return np.full(10, 0.1)


class DeltaMock(CountingProvider):
    """Puts all mass on ``digits[k]`` when asked for the k-th digit of a number."""

    def __init__(self, *digits: int, config: SerializationConfig = SerializationConfig()):
        super().__init__()
        if len(digits) != config.num_digits:
            raise ValueError(f"need {config.num_digits} digits, got {len(digits)}")
        self.digits = digits
        self.config = config

    def _answer(self, context):
        _, prefix = split_prefix_context(context, self.config)
        p = np.zeros(10)
        p[self.digits[len(prefix)]] = 1.0
        return p


class SeededRandomMock(CountingProvider):
    """Deterministic pseudo-random conditionals keyed on (seed, prompt text)."""

    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = seed

    def _answer(self, context):
        digest = hashlib.sha256(f"{self.seed}\x00{context}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.dirichlet(np.ones(10))


class KernelMock(CountingProvider):
    """Answers with the conditionals implied by a fixed-bandwidth KDE of the prompt.

    An empty prompt yields the uniform pdf, matching the KDE trajectory
    convention at ``n = 0``.
    """

    def __init__(self, h: float, s: float, config: SerializationConfig = SerializationConfig()):
        super().__init__()
        self.spec = KernelSpec(s, h)
        self.config = config
        self._cache: dict[str, np.ndarray] = {}

    def _pdf(self, context: str) -> np.ndarray:
        if context not in self._cache:
            values = parse(context, self.config)
            grid = self.config.grid
            if values:
                pdf = kde_estimate(SampleSet(values, None, grid), self.spec, grid)
            else:
                pdf = uniform_ignorance(grid)
            self._cache[context] = pdf.mass
        return self._cache[context]

    def _answer(self, text):
        context, prefix = split_prefix_context(text, self.config)
        mass = self._pdf(context)
        n = self.config.num_digits
        # subtree masses below the prefix, grouped by the next digit
        base = 0
        for d in prefix:
            base = base * 10 + d
        width = 10 ** (n - len(prefix) - 1)
        start = base * 10 * width
        sub = mass[start : start + 10 * width].reshape(10, width).sum(axis=1)
        if sub.sum() <= 0:
            return np.full(10, 0.1)
        return sub


class ReplayProvider(CountingProvider):
    """Serves recorded answers; any prompt not in the recording is a protocol error."""

    def __init__(self, records: dict[str, list[float]]):
        super().__init__()
        self.records = records

    @classmethod
    def from_file(cls, path) -> "ReplayProvider":
        records: dict[str, list[float]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    ctx, probs = obj["context"], obj["digit_probs"]
                except (ValueError, KeyError, TypeError) as exc:
                    raise ProtocolError(f"{path}:{lineno}: malformed replay line ({exc})") from None
                DigitDistribution(probs)
                if ctx in records and records[ctx] != probs:
                    raise ProtocolError(f"{path}:{lineno}: conflicting answers for context {ctx!r}")
                records[ctx] = probs
        return cls(records)

    def _answer(self, context):
        try:
            return self.records[context]
        except KeyError:
            raise ProtocolError(f"replay has no answer for context {context!r}") from None


class HttpProvider(CountingProvider):
    """POST ``{"context": ...}`` and read ``{"digit_probs": [10 floats]}``.

    Transport failures are retried with exponential backoff; non-2xx answers
    and malformed payloads are protocol errors and are not retried.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, retries: int = 3, backoff: float = 0.5):
        super().__init__()
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def _answer(self, context):
        body = json.dumps({"context": context}).encode()
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        attempt = 0
        while True:
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = resp.read()
                break
            except urllib.error.HTTPError as exc:
                raise ProtocolError(f"provider answered HTTP {exc.code} for context {context!r}") from None
            except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
                if attempt >= self.retries:
                    raise ProviderError(
                        f"provider unreachable after {attempt + 1} attempts: {exc}"
                    ) from exc
                delay = self.backoff * 2 ** attempt
                log.warning("transport error (%s); retrying in %.2fs", exc, delay)
                time.sleep(delay)
                attempt += 1
        try:
            obj = json.loads(payload)
            return obj["digit_probs"]
        except (ValueError, KeyError, TypeError):
            raise ProtocolError(f"malformed provider payload: {payload[:200]!r}") from None


@dataclass(frozen=True)
class ProviderSpec:
    """Declarative provider description; ``build`` instantiates it."""

    kind: str
    endpoint: str | None = None
    path: str | None = None
    preset: str | None = None
    params: tuple = ()
    timeout: float = 30.0
    retries: int = 3

    def __post_init__(self):
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http provider needs an endpoint")
        if self.kind == "replay" and not self.path:
            raise ValueError("replay provider needs a path")
        if self.kind == "mock" and self.preset not in MOCK_PRESETS:
            raise ValueError(f"mock preset must be one of {sorted(MOCK_PRESETS)}")
        if self.kind not in ("http", "replay", "mock"):
            raise ValueError(f"unknown provider kind {self.kind!r}")

    def build(self, config: SerializationConfig = SerializationConfig()):
        if self.kind == "http":
            return HttpProvider(self.endpoint, self.timeout, self.retries)
        if self.kind == "replay":
            return ReplayProvider.from_file(self.path)
        return MOCK_PRESETS[self.preset](self.params, config)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for key in ("endpoint", "path", "preset"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.params:
            out["params"] = list(self.params)
        if self.kind == "http":
            out["timeout"] = self.timeout
            out["retries"] = self.retries
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderSpec":
        d = dict(d)
        d["params"] = tuple(d.get("params", ()))
        return cls(**d)


MOCK_PRESETS: dict[str, Callable] = {
    "uniform": lambda params, cfg: UniformMock(),
    "delta": lambda params, cfg: DeltaMock(*[int(p) for p in params], config=cfg),
    "kernel-mock": lambda params, cfg: KernelMock(float(params[0]), float(params[1]), cfg),
    "seeded-random": lambda params, cfg: SeededRandomMock(int(params[0]) if params else 0),
}


def hierarchy_pdf(
    provider: Provider,
    context: SampleSet | Sequence[int] | str,
    config: SerializationConfig = SerializationConfig(),
    *,
    max_in_flight: int = 4,
    on_response: Callable[[str, DigitDistribution], None] | None = None,
) -> DiscretePdf:
    """Assemble the full ``10**N``-bin pdf from per-digit conditionals.

    Level ``k`` issues one query per live ``k``-digit prefix, so a provider
    without zero-probability digits is called ``(10**N - 1) / 9`` times.
    Prefixes whose probability is exactly zero are not refined.
    ``on_response`` sees every (prompt, answer) pair in deterministic order.
    """
    text = context if isinstance(context, str) else serialize(context, config)
    n = config.num_digits
    # mass of every live prefix at the current level, keyed by digit tuple
    level: dict[tuple, float] = {(): 1.0}
    pool = ThreadPoolExecutor(max_workers=max_in_flight) if max_in_flight > 1 else None
    try:
        for depth in range(n):
            prefixes = [p for p, m in level.items() if m > 0]
            prompts = [prefix_context(text, p, config) for p in prefixes]
            try:
                if pool is not None and len(prompts) > 1:
                    answers = list(pool.map(provider.digit_probs, prompts))
                else:
                    answers = [provider.digit_probs(q) for q in prompts]
            except ProviderError as exc:
                raise ProviderError(f"hierarchy extraction failed at depth {depth}: {exc}", partial=depth) from exc
            nxt: dict[tuple, float] = {}
            for prefix, prompt, dist in zip(prefixes, prompts, answers):
                if not isinstance(dist, DigitDistribution):
                    dist = DigitDistribution(dist)
                if on_response is not None:
                    on_response(prompt, dist)
                base = level[prefix]
                for d in range(10):
                    nxt[prefix + (d,)] = base * float(dist.probs[d])
            level = nxt
    finally:
        if pool is not None:
            pool.shutdown()
    mass = np.zeros(10 ** n)
    for digits, m in level.items():
        mass[int("".join(map(str, digits)))] = m
    return DiscretePdf.from_weights(config.grid, mass)


def icl_trajectory(
    provider: Provider,
    samples: SampleSet,
    context_lengths: Sequence[int],
    config: SerializationConfig = SerializationConfig(),
    *,
    cap: int = DEFAULT_CONTEXT_CAP,
    label: str = "icl",
    max_in_flight: int = 4,
    on_response: Callable[[str, DigitDistribution], None] | None = None,
) -> Trajectory:
    """Hierarchy pdf after each prefix ``samples[:n]``; ``n = 0`` sends an empty prompt.

    On provider failure a :class:`ProviderError` is raised whose ``partial``
    attribute holds the trajectory up to the last completed point.
    """
    ns = [int(n) for n in context_lengths]
    if ns and max(ns) > len(samples):
        raise ValueError(f"context length {max(ns)} exceeds the {len(samples)} available samples")
    if ns and max(ns) > cap:
        raise ValueError(f"context length {max(ns)} exceeds the cap of {cap}")
    done_n, done_p = [], []
    for n in ns:
        try:
            pdf = hierarchy_pdf(provider, samples.bin_indices[:n], config,
                                max_in_flight=max_in_flight, on_response=on_response)
        except ProviderError as exc:
            partial = Trajectory(tuple(done_n), tuple(done_p), label + " (partial)")
            raise ProviderError(f"trajectory stopped at n={n}: {exc}", partial=partial) from exc
        done_n.append(n)
        done_p.append(pdf)
    return Trajectory(tuple(done_n), tuple(done_p), label)


class JsonlRecorder:
    """Appends ``{"context", "digit_probs"}`` lines; usable as ``on_response``."""

    def __init__(self, path):
        self.path = Path(path)
        self.lines = 0
        self._fh = open(self.path, "w", encoding="utf-8")

    def __call__(self, context: str, dist: DigitDistribution):
        self._fh.write(json.dumps({"context": context, "digit_probs": [float(v) for v in dist.raw]}) + "\n")
        self.lines += 1

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
