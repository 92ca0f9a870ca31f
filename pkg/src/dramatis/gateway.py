"""Uniform access to chat-completion and embedding backends.

Three backend kinds:

* ``HttpBackend`` — a remote OpenAI-compatible chat-completions service.
* ``ScriptedBackend`` — wraps a script store keyed by request hash, in
  ``record`` mode (pass through to an inner backend and persist every
  exchange) or ``replay`` mode (serve recorded exchanges only; an unknown
  request is a hard error). Replay makes whole pipelines pure functions of
  (scene, script) and keeps the test suite offline.
* ``QueueBackend`` — in-memory scripted replies served in order, for unit
  tests that only need a handful of canned completions.

The ``Gateway`` wraps a backend with retry/backoff on transient transport
failures and appends one ledger entry per call, tagged with the caller's
role, so token and money costs reconcile per role afterwards. Costs are
exact rationals internally; rounding happens only at display time.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import requests

from .parsing import ParseError

ROLE_NARRATOR = "narrator"
ROLE_CHARACTER = "character"
ROLE_JUDGE = "judge"
ROLE_SCENE_FORGE = "scene_forge"

DEFAULT_TEMPERATURE = 0.7   # character and narrator calls
JUDGE_TEMPERATURE = 0.0     # scoring must be repeatable
DEFAULT_MAX_TOKENS = 1024
DEFAULT_EMBEDDING_DIM = 64


class GatewayError(Exception):
    """Base class for gateway failures."""


class TransportError(GatewayError):
    """Transient transport failure; retried up to the configured limit."""


class EmptyResponseError(GatewayError):
    """Backend returned no usable content."""


class ScriptMissError(GatewayError):
    """Replay mode was asked for a request that was never recorded."""


class MissingRateError(GatewayError):
    """The price table has no rates for a model present in the ledger."""


class ParseRepairError(GatewayError):
    """Output stayed malformed through every repair reprompt."""

    def __init__(self, message: str, last_reply: str = "", attempts: int = 0):
        super().__init__(message)
        self.last_reply = last_reply
        self.attempts = attempts


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[tuple[str, str], ...]  # (role, content) pairs
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self) -> None:
        if not self.model_id.strip():
            raise ValueError("model_id must be non-empty")
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for role, _content in self.messages:
            if role not in ("system", "user", "assistant"):
                raise ValueError(f"bad message role {role!r}")
        if self.messages[0][0] not in ("system", "user"):
            raise ValueError("first message must be system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    input_tokens: int
    output_tokens: int


def request_hash(request: ChatRequest) -> str:
    """Stable content hash identifying one exchange in a script store."""
    payload = {
        "model_id": request.model_id,
        "messages": [[role, content] for role, content in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    blob = json.dumps(payload, ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    """Deterministic fallback token count for backends that report none."""
    return max(1, len(text) // 4)


def embed_text(text: str, dim: int = DEFAULT_EMBEDDING_DIM) -> np.ndarray:
    """Content-hash-seeded pseudo-random unit vector.

    Identical text always embeds to the identical vector, which is what
    makes memory retrieval reproducible offline.
    """
    if not text:
        raise ValueError("cannot embed empty text")
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
    vec = np.random.default_rng(seed).standard_normal(dim)
    return vec / np.linalg.norm(vec)


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...
    def embed(self, text: str) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class HttpBackend:
    """OpenAI-compatible chat-completions service over HTTP."""

    def __init__(self, base_url: str, *, api_key_env: str = "DRAMATIS_API_KEY",
                 model_aliases: dict[str, str] | None = None,
                 embedding_model: str = "text-embedding",
                 embedding_dim: int = DEFAULT_EMBEDDING_DIM,
                 timeout: float = 120.0, session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.model_aliases = dict(model_aliases or {})
        self.embedding_model = embedding_model
        self.embedding_dim = embedding_dim
        self.timeout = timeout
        self.session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        try:
            resp = self.session.post(self.base_url + path, json=payload,
                                     headers=self._headers(), timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportError(f"request failed: {e}") from e
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code} from {path}")
        if resp.status_code != 200:
            raise GatewayError(f"HTTP {resp.status_code} from {path}: {resp.text[:300]}")
        return resp.json()

    def complete(self, request: ChatRequest) -> ChatResponse:
        model = self.model_aliases.get(request.model_id, request.model_id)
        doc = self._post("/chat/completions", {
            "model": model,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
        try:
            content = doc["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as e:
            raise GatewayError(f"malformed completion payload: {e}") from e
        usage = doc.get("usage") or {}
        prompt_text = "".join(c for _r, c in request.messages)
        return ChatResponse(
            content=content,
            input_tokens=int(usage.get("prompt_tokens", estimate_tokens(prompt_text))),
            output_tokens=int(usage.get("completion_tokens", estimate_tokens(content))),
        )

    def embed(self, text: str) -> np.ndarray:
        doc = self._post("/embeddings", {"model": self.embedding_model, "input": text})
        try:
            vec = np.asarray(doc["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError) as e:
            raise GatewayError(f"malformed embedding payload: {e}") from e
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise EmptyResponseError("embedding service returned a zero vector")
        return vec / norm


class ScriptStore:
    """One JSON file per recorded exchange, named by the request hash.

    Safe for concurrent reads; record mode assumes a single writer.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path_for(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, request: ChatRequest) -> ChatResponse | None:
        path = self.path_for(request_hash(request))
        if not path.exists():
            return None
        doc = json.loads(path.read_text(encoding="utf-8"))
        resp = doc["response"]
        return ChatResponse(
            content=resp["content"],
            input_tokens=int(resp["input_tokens"]),
            output_tokens=int(resp["output_tokens"]),
        )

    def put(self, request: ChatRequest, response: ChatResponse) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        doc = {
            "request": {
                "model_id": request.model_id,
                "messages": [[r, c] for r, c in request.messages],
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            },
            "response": {
                "content": response.content,
                "input_tokens": response.input_tokens,
                "output_tokens": response.output_tokens,
            },
        }
        path = self.path_for(request_hash(request))
        path.write_text(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")


class ScriptedBackend:
    """Record/replay wrapper around a script store.

    * ``record``: forward to ``inner``, persist the exchange, return it.
      Already-recorded requests are served from the store without another
      inner call, so re-recording is idempotent.
    * ``replay``: serve from the store; a missing request hash is a hard
      error rather than a silent fallback. Token counts always come from
      the recorded exchange so cost reports stay stable.
    """

    def __init__(self, store: ScriptStore, *, mode: str = "replay",
                 inner: Backend | None = None,
                 embedding_dim: int = DEFAULT_EMBEDDING_DIM):
        if mode not in ("record", "replay"):
            raise ValueError(f"mode must be record or replay, got {mode!r}")
        if mode == "record" and inner is None:
            raise ValueError("record mode needs an inner backend")
        self.store = store
        self.mode = mode
        self.inner = inner
        self.embedding_dim = embedding_dim

    def complete(self, request: ChatRequest) -> ChatResponse:
        recorded = self.store.get(request)
        if recorded is not None:
            return recorded
        if self.mode == "replay":
            raise ScriptMissError(
                f"no recorded exchange for request {request_hash(request)[:12]}… "
                f"(model {request.model_id})"
            )
        assert self.inner is not None
        response = self.inner.complete(request)
        self.store.put(request, response)
        return response

    def embed(self, text: str) -> np.ndarray:
        # Always the hash-seeded embedding, in both modes: retrieval during
        # record and during replay must rank memories identically, or the
        # replayed requests would drift off the recorded script.
        return embed_text(text, self.embedding_dim)


class QueueBackend:
    """Scripted replies served strictly in the order they were queued."""

    def __init__(self, replies: list[str] | None = None,
                 embedding_dim: int = DEFAULT_EMBEDDING_DIM):
        self.replies: list[ChatResponse] = []
        self.requests: list[ChatRequest] = []
        self.embedding_dim = embedding_dim
        for content in replies or []:
            self.queue_reply(content)

    def queue_reply(self, content: str, *, input_tokens: int | None = None,
                    output_tokens: int | None = None) -> None:
        self.replies.append(ChatResponse(
            content=content,
            input_tokens=input_tokens if input_tokens is not None else 0,
            output_tokens=output_tokens if output_tokens is not None else estimate_tokens(content),
        ))

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.requests.append(request)
        if not self.replies:
            raise ScriptMissError("queue backend has no reply left")
        reply = self.replies.pop(0)
        if reply.input_tokens == 0:
            prompt_text = "".join(c for _r, c in request.messages)
            reply = ChatResponse(reply.content, estimate_tokens(prompt_text), reply.output_tokens)
        return reply

    def embed(self, text: str) -> np.ndarray:
        return embed_text(text, self.embedding_dim)


class FlakyBackend:
    """Wrapper that fails the first `failures` calls; exercises retry paths."""

    def __init__(self, inner: Backend, failures: int):
        self.inner = inner
        self.remaining = failures
        self.calls = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        if self.remaining > 0:
            self.remaining -= 1
            raise TransportError("synthetic transient failure")
        return self.inner.complete(request)

    def embed(self, text: str) -> np.ndarray:
        return self.inner.embed(text)


# ---------------------------------------------------------------------------
# Pricing and usage accounting
# ---------------------------------------------------------------------------

MILLION = 1_000_000


@dataclass(frozen=True)
class PriceTable:
    """Per-model (input, output) rates in currency units per 1M tokens."""

    rates: dict[str, tuple[Fraction, Fraction]]

    @classmethod
    def from_dict(cls, doc: dict) -> PriceTable:
        rates: dict[str, tuple[Fraction, Fraction]] = {}
        for model_id, entry in doc.items():
            if isinstance(entry, dict):
                input_rate, output_rate = entry["input"], entry["output"]
            else:
                input_rate, output_rate = entry
            pair = (Fraction(str(input_rate)), Fraction(str(output_rate)))
            if pair[0] < 0 or pair[1] < 0:
                raise ValueError(f"negative rate for {model_id}")
            rates[model_id] = pair
        return cls(rates)

    def rate(self, model_id: str) -> tuple[Fraction, Fraction]:
        try:
            return self.rates[model_id]
        except KeyError:
            raise MissingRateError(f"no rates for model {model_id!r}") from None


@dataclass(frozen=True)
class LedgerEntry:
    role_tag: str
    model_id: str
    input_tokens: int
    output_tokens: int

    def cost(self, prices: PriceTable) -> Fraction:
        input_rate, output_rate = prices.rate(self.model_id)
        return (self.input_tokens * input_rate + self.output_tokens * output_rate) / MILLION


class UsageLedger:
    """Append-only token accounting; appends are atomic under a lock."""

    def __init__(self) -> None:
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()

    def append(self, role_tag: str, model_id: str, input_tokens: int, output_tokens: int) -> None:
        entry = LedgerEntry(role_tag, model_id, input_tokens, output_tokens)
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def totals_by_role(self) -> dict[str, tuple[int, int]]:
        out: dict[str, tuple[int, int]] = {}
        for e in self.entries:
            i, o = out.get(e.role_tag, (0, 0))
            out[e.role_tag] = (i + e.input_tokens, o + e.output_tokens)
        return out

    def total_cost(self, prices: PriceTable) -> Fraction:
        return sum((e.cost(prices) for e in self.entries), Fraction(0))

    def to_dict(self) -> dict:
        return {
            "entries": [
                {
                    "role_tag": e.role_tag,
                    "model_id": e.model_id,
                    "input_tokens": e.input_tokens,
                    "output_tokens": e.output_tokens,
                }
                for e in self.entries
            ],
            "totals_by_role": {
                role: {"input_tokens": i, "output_tokens": o}
                for role, (i, o) in sorted(self.totals_by_role().items())
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> UsageLedger:
        ledger = cls()
        for e in doc.get("entries", []):
            ledger.append(e["role_tag"], e["model_id"],
                          int(e["input_tokens"]), int(e["output_tokens"]))
        return ledger


def round_currency(amount: Fraction, places: int = 4) -> Decimal:
    """Half-up rounding for display; the ledger itself stays exact."""
    dec = Decimal(amount.numerator) / Decimal(amount.denominator)
    return dec.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class CostReport:
    per_role: dict[str, Fraction]
    total: Fraction

    def rounded_per_role(self) -> dict[str, Decimal]:
        return {role: round_currency(v) for role, v in self.per_role.items()}

    def rounded_total(self) -> Decimal:
        return round_currency(self.total)

    def to_dict(self) -> dict:
        return {
            "per_role": {r: str(round_currency(v)) for r, v in sorted(self.per_role.items())},
            "total": str(self.rounded_total()),
        }


def scene_cost_report(ledger: UsageLedger, prices: PriceTable) -> CostReport:
    """Per-role and grand-total money cost for one finalized ledger."""
    per_role: dict[str, Fraction] = {}
    for entry in ledger.entries:
        per_role[entry.role_tag] = per_role.get(entry.role_tag, Fraction(0)) + entry.cost(prices)
    return CostReport(per_role=per_role, total=sum(per_role.values(), Fraction(0)))


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

class Gateway:
    """Backend plus retry policy, empty-reply detection, and ledger tagging."""

    def __init__(self, backend: Backend, *, retry_limit: int = 3,
                 backoff_base: float = 1.0,
                 sleep: Callable[[float], None] = time.sleep):
        self.backend = backend
        self.retry_limit = retry_limit
        self.backoff_base = backoff_base
        self._sleep = sleep

    def _with_retries(self, fn: Callable[[], object]) -> object:
        attempt = 0
        while True:
            try:
                return fn()
            except TransportError:
                if attempt >= self.retry_limit:
                    raise
                self._sleep(self.backoff_base * (2 ** attempt))
                attempt += 1

    def complete(self, request: ChatRequest, *, role: str, ledger: UsageLedger) -> ChatResponse:
        response = self._with_retries(lambda: self.backend.complete(request))
        assert isinstance(response, ChatResponse)
        ledger.append(role, request.model_id, response.input_tokens, response.output_tokens)
        if not response.content.strip():
            raise EmptyResponseError(f"model {request.model_id} returned empty content")
        return response

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        vec = self._with_retries(lambda: self.backend.embed(text))
        return np.asarray(vec, dtype=float)


def complete_parsed(gateway: Gateway, request: ChatRequest, parse: Callable[[str], object],
                    *, role: str, ledger: UsageLedger, reminder: str,
                    max_repairs: int = 3):
    """Call, parse, and reprompt on malformed output.

    The first repair resends the original prompt with a terse format
    reminder appended; each further repair bumps the attempt counter in the
    reminder so recorded exchanges stay distinguishable. After
    ``max_repairs`` failed repairs the last ParseError surfaces as
    ParseRepairError.
    """
    attempts = 0
    last_reply = ""
    current = request
    while True:
        response = gateway.complete(current, role=role, ledger=ledger)
        last_reply = response.content
        try:
            return parse(response.content)
        except ParseError as e:
            attempts += 1
            if attempts > max_repairs:
                raise ParseRepairError(
                    f"output still malformed after {max_repairs} repair reprompts: {e}",
                    last_reply=last_reply, attempts=attempts,
                ) from e
            tail = request.messages[-1]
            patched = (tail[0], f"{tail[1]}\n\nFormat reminder (attempt {attempts}): {reminder}")
            current = ChatRequest(
                model_id=request.model_id,
                messages=request.messages[:-1] + (patched,),
                temperature=request.temperature,
                max_tokens=request.max_tokens,
            )


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GatewayConfig:
    backend: str = "synthetic"      # "http" | "synthetic"
    base_url: str = ""
    api_key_env: str = "DRAMATIS_API_KEY"
    model_aliases: dict[str, str] = field(default_factory=dict)
    prices: PriceTable = field(default_factory=lambda: PriceTable({}))
    retry_limit: int = 3
    backoff_base: float = 1.0
    embedding_dim: int = DEFAULT_EMBEDDING_DIM

    @classmethod
    def load(cls, path: str | Path) -> GatewayConfig:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        retry = doc.get("retry", {})
        return cls(
            backend=doc.get("backend", "synthetic"),
            base_url=doc.get("base_url", ""),
            api_key_env=doc.get("api_key_env", "DRAMATIS_API_KEY"),
            model_aliases=dict(doc.get("models", {})),
            prices=PriceTable.from_dict(doc.get("prices", {})),
            retry_limit=int(retry.get("limit", 3)),
            backoff_base=float(retry.get("backoff_base", 1.0)),
            embedding_dim=int(doc.get("embedding_dim", DEFAULT_EMBEDDING_DIM)),
        )


def build_gateway(config: GatewayConfig, *, record_dir: str | Path | None = None,
                  replay_dir: str | Path | None = None) -> Gateway:
    """Assemble the configured backend, optionally wrapped for record/replay."""
    backend: Backend
    if config.backend == "http":
        backend = HttpBackend(
            config.base_url, api_key_env=config.api_key_env,
            model_aliases=config.model_aliases, embedding_dim=config.embedding_dim,
        )
    elif config.backend == "synthetic":
        from .synthetic import SyntheticBackend
        backend = SyntheticBackend(embedding_dim=config.embedding_dim)
    else:
        raise ValueError(f"unknown backend kind {config.backend!r}")

    if record_dir is not None and replay_dir is not None:
        raise ValueError("record and replay are mutually exclusive")
    if record_dir is not None:
        backend = ScriptedBackend(ScriptStore(record_dir), mode="record", inner=backend,
                                  embedding_dim=config.embedding_dim)
    elif replay_dir is not None:
        backend = ScriptedBackend(ScriptStore(replay_dir), mode="replay",
                                  embedding_dim=config.embedding_dim)
    return Gateway(backend, retry_limit=config.retry_limit, backoff_base=config.backoff_base)
