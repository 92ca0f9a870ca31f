from __future__ import annotations

from decimal import Decimal
from fractions import Fraction

import numpy as np
import pytest

from dramatis.gateway import (
    ChatRequest,
    ChatResponse,
    EmptyResponseError,
    FlakyBackend,
    Gateway,
    GatewayConfig,
    MissingRateError,
    ParseRepairError,
    PriceTable,
    QueueBackend,
    ScriptMissError,
    ScriptStore,
    ScriptedBackend,
    TransportError,
    UsageLedger,
    build_gateway,
    complete_parsed,
    embed_text,
    estimate_tokens,
    request_hash,
    round_currency,
    scene_cost_report,
)
from dramatis.parsing import ParseError
from dramatis.synthetic import SyntheticBackend

# Reference rates: 0.5 currency units per 1M input tokens, 1.5 per 1M output.
RATES = PriceTable.from_dict({
    "narrator-model": (0.5, 1.5),
    "character-model": (0.5, 1.5),
})

# Known-good ledger rows, frozen as (input_tokens, output_tokens) -> rounded
# cost. Each row was cross-checked by hand: (i*0.5 + o*1.5) / 1e6, half-up
# at 4 places.
COST_ROWS = [
    (25723, 4203, "0.0192"),
    (75349, 14407, "0.0593"),
    (19954, 3883, "0.0158"),
    (49832, 6823, "0.0352"),
    (24403, 3928, "0.0181"),
]


def _request(model="character-model", content="hello", temperature=0.7):
    return ChatRequest(model_id=model, messages=(("user", content),),
                       temperature=temperature, max_tokens=64)


# ---------------------------------------------------------------------------
# Cost oracle (exact arithmetic first; everything else builds on it)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("input_tokens,output_tokens,expected", COST_ROWS)
def test_cost_rows_exact(input_tokens, output_tokens, expected):
    ledger = UsageLedger()
    ledger.append("narrator", "narrator-model", input_tokens, output_tokens)
    # Independent route: exact Fraction arithmetic straight from the rates.
    oracle = Fraction(input_tokens) * Fraction(1, 2_000_000) \
        + Fraction(output_tokens) * Fraction(3, 2_000_000)
    assert ledger.total_cost(RATES) == oracle
    assert str(round_currency(ledger.total_cost(RATES))) == expected


def test_cost_two_role_scene_totals():
    # A narrator on one model plus a character on another, summed exactly.
    ledger = UsageLedger()
    ledger.append("narrator", "narrator-model", 25723, 4203)
    ledger.append("character", "character-model", 75349, 14407)
    report = scene_cost_report(ledger, RATES)
    rounded = report.rounded_per_role()
    assert str(rounded["narrator"]) == "0.0192"
    assert str(rounded["character"]) == "0.0593"
    assert str(report.rounded_total()) == "0.0785"

    ledger2 = UsageLedger()
    ledger2.append("narrator", "narrator-model", 19954, 3883)
    ledger2.append("character", "character-model", 49832, 6823)
    report2 = scene_cost_report(ledger2, RATES)
    assert str(report2.rounded_per_role()["narrator"]) == "0.0158"
    assert str(report2.rounded_per_role()["character"]) == "0.0352"
    assert str(report2.rounded_total()) == "0.0510"


def test_cost_narrator_only_scene():
    # Characters on a locally served model cost nothing; the scene total is
    # the narrator's cost alone.
    ledger = UsageLedger()
    ledger.append("narrator", "narrator-model", 24403, 3928)
    report = scene_cost_report(ledger, RATES)
    assert str(report.rounded_total()) == "0.0181"
    assert "character" not in report.per_role


def test_rounding_is_half_up_not_bankers():
    assert str(round_currency(Fraction(5, 100_000))) == "0.0001"
    assert str(round_currency(Fraction(15, 100_000))) == "0.0002"
    assert str(round_currency(Fraction(25, 100_000))) == "0.0003"
    assert round_currency(Fraction(0)) == Decimal("0.0000")


def test_exact_total_is_fraction_sum_of_entries():
    ledger = UsageLedger()
    for i in range(1, 20):
        ledger.append("character", "character-model", i * 7, i * 3)
    total = sum((e.cost(RATES) for e in ledger.entries), Fraction(0))
    assert ledger.total_cost(RATES) == total
    assert isinstance(total, Fraction)


def test_missing_rate_is_an_error():
    ledger = UsageLedger()
    ledger.append("character", "unlisted-model", 10, 10)
    with pytest.raises(MissingRateError, match="unlisted-model"):
        ledger.total_cost(RATES)


def test_ledger_round_trip():
    ledger = UsageLedger()
    ledger.append("narrator", "narrator-model", 100, 20)
    ledger.append("character", "character-model", 300, 40)
    back = UsageLedger.from_dict(ledger.to_dict())
    assert back.entries == ledger.entries
    assert back.totals_by_role() == {"narrator": (100, 20), "character": (300, 40)}


# ---------------------------------------------------------------------------
# Request hashing and embeddings
# ---------------------------------------------------------------------------

def test_request_hash_is_stable_and_sensitive():
    a = _request()
    assert request_hash(a) == request_hash(_request())
    assert request_hash(a) != request_hash(_request(content="hello!"))
    assert request_hash(a) != request_hash(_request(model="narrator-model"))
    assert request_hash(a) != request_hash(_request(temperature=0.0))
    two = ChatRequest(model_id="m", messages=(("system", "s"), ("user", "u")),
                      temperature=0.7, max_tokens=64)
    swapped = ChatRequest(model_id="m", messages=(("user", "u"), ("system", "s")),
                          temperature=0.7, max_tokens=64)
    assert request_hash(two) != request_hash(swapped)


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(model_id="", messages=(("user", "x"),), temperature=0.7, max_tokens=64)
    with pytest.raises(ValueError):
        ChatRequest(model_id="m", messages=(), temperature=0.7, max_tokens=64)
    with pytest.raises(ValueError):
        ChatRequest(model_id="m", messages=(("oracle", "x"),), temperature=0.7, max_tokens=64)


def test_embeddings_are_deterministic_unit_vectors():
    a = embed_text("the lamp turns", 64)
    b = embed_text("the lamp turns", 64)
    c = embed_text("the lamp Turns", 64)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (64,)
    assert abs(float(np.linalg.norm(a)) - 1.0) < 1e-12


def test_estimate_tokens_floor():
    assert estimate_tokens("") == 1
    assert estimate_tokens("abcd" * 10) == 10


# ---------------------------------------------------------------------------
# Record / replay
# ---------------------------------------------------------------------------

def test_record_then_replay_serves_identical_exchange(tmp_path):
    store = ScriptStore(tmp_path)
    recorder = Gateway(ScriptedBackend(store, mode="record", inner=SyntheticBackend()))
    ledger = UsageLedger()
    recorded = recorder.complete(_request(), role="character", ledger=ledger)

    replayer = Gateway(ScriptedBackend(store, mode="replay"))
    replayed = replayer.complete(_request(), role="character", ledger=UsageLedger())
    assert replayed == recorded


def test_replay_miss_is_hard_error(tmp_path):
    gw = Gateway(ScriptedBackend(ScriptStore(tmp_path), mode="replay"))
    with pytest.raises(ScriptMissError):
        gw.complete(_request(), role="character", ledger=UsageLedger())


def test_replay_miss_is_not_retried(tmp_path):
    backend = ScriptedBackend(ScriptStore(tmp_path), mode="replay")
    calls = []
    original = backend.complete

    def counting(request):
        calls.append(request)
        return original(request)

    backend.complete = counting
    gw = Gateway(backend, sleep=lambda s: (_ for _ in ()).throw(AssertionError("slept")))
    with pytest.raises(ScriptMissError):
        gw.complete(_request(), role="character", ledger=UsageLedger())
    assert len(calls) == 1


def test_recording_is_idempotent(tmp_path):
    inner = QueueBackend(["only reply"])
    backend = ScriptedBackend(ScriptStore(tmp_path), mode="record", inner=inner)
    first = backend.complete(_request())
    # Same request again: served from the store, inner queue untouched.
    second = backend.complete(_request())
    assert first == second
    assert inner.replies == []
    assert len(inner.requests) == 1


def test_record_mode_requires_inner():
    with pytest.raises(ValueError, match="inner"):
        ScriptedBackend(ScriptStore("unused"), mode="record")
    with pytest.raises(ValueError, match="record or replay"):
        ScriptedBackend(ScriptStore("unused"), mode="live")


def test_scripted_embeddings_ignore_inner(tmp_path):
    class WildEmbedder(QueueBackend):
        def embed(self, text):
            raise AssertionError("inner embed must never be consulted")

    backend = ScriptedBackend(ScriptStore(tmp_path), mode="record", inner=WildEmbedder([]))
    a = backend.embed("stable")
    b = ScriptedBackend(ScriptStore(tmp_path), mode="replay").embed("stable")
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Retries, empty replies, ledger conservation
# ---------------------------------------------------------------------------

def test_transient_failures_retry_with_exponential_backoff():
    naps: list[float] = []
    inner = FlakyBackend(QueueBackend(["eventually"]), failures=2)
    gw = Gateway(inner, retry_limit=3, backoff_base=1.0, sleep=naps.append)
    response = gw.complete(_request(), role="character", ledger=UsageLedger())
    assert response.content == "eventually"
    assert naps == [1.0, 2.0]
    assert inner.calls == 3


def test_retry_budget_exhaustion_raises_last_error():
    naps: list[float] = []
    inner = FlakyBackend(QueueBackend(["never reached"]), failures=5)
    gw = Gateway(inner, retry_limit=3, backoff_base=0.5, sleep=naps.append)
    with pytest.raises(TransportError):
        gw.complete(_request(), role="character", ledger=UsageLedger())
    assert naps == [0.5, 1.0, 2.0]
    assert inner.calls == 4  # initial try + 3 retries


def test_empty_reply_is_error_but_still_charged():
    backend = QueueBackend()
    backend.queue_reply("   ", input_tokens=11, output_tokens=7)
    gw = Gateway(backend)
    ledger = UsageLedger()
    with pytest.raises(EmptyResponseError):
        gw.complete(_request(), role="character", ledger=ledger)
    assert ledger.totals_by_role() == {"character": (11, 7)}


def test_ledger_records_every_call_once():
    gw = Gateway(SyntheticBackend())
    ledger = UsageLedger()
    for i in range(5):
        gw.complete(_request(content=f"prompt {i}"), role="character", ledger=ledger)
    assert len(ledger.entries) == 5
    ins, outs = ledger.totals_by_role()["character"]
    assert ins == sum(e.input_tokens for e in ledger.entries)
    assert outs == sum(e.output_tokens for e in ledger.entries)


# ---------------------------------------------------------------------------
# Parse-repair loop
# ---------------------------------------------------------------------------

def _digit_parser(reply: str) -> int:
    if not reply.strip().isdigit():
        raise ParseError(f"not a number: {reply!r}")
    return int(reply)


def test_repair_loop_reprompts_until_parse_succeeds():
    backend = QueueBackend(["not yet", "still no", "42"])
    gw = Gateway(backend)
    got = complete_parsed(gw, _request(content="count something"), _digit_parser,
                          role="narrator", ledger=UsageLedger(), reminder="digits only")
    assert got == 42
    assert len(backend.requests) == 3
    # Each repair keeps the original user message and appends a numbered
    # reminder, so every attempt is a distinct replayable request.
    first, second, third = backend.requests
    assert first.messages[-1][1] == "count something"
    assert second.messages[-1][1].startswith("count something")
    assert "attempt 1" in second.messages[-1][1]
    assert "attempt 2" in third.messages[-1][1]
    assert "digits only" in second.messages[-1][1]
    assert len({request_hash(r) for r in backend.requests}) == 3


def test_repair_loop_gives_up_after_three_repairs():
    backend = QueueBackend(["a", "b", "c", "d", "unreached"])
    gw = Gateway(backend)
    ledger = UsageLedger()
    with pytest.raises(ParseRepairError) as exc:
        complete_parsed(gw, _request(), _digit_parser, role="narrator",
                        ledger=ledger, reminder="digits only")
    assert exc.value.attempts == 4  # initial + 3 repairs
    assert exc.value.last_reply == "d"
    assert len(backend.requests) == 4
    assert len(ledger.entries) == 4  # failed parses still cost tokens


def test_repair_zero_budget_parses_or_fails_immediately():
    backend = QueueBackend(["nope"])
    gw = Gateway(backend)
    with pytest.raises(ParseRepairError):
        complete_parsed(gw, _request(), _digit_parser, role="narrator",
                        ledger=UsageLedger(), reminder="digits", max_repairs=0)
    assert len(backend.requests) == 1


# ---------------------------------------------------------------------------
# Config / builder
# ---------------------------------------------------------------------------

def test_gateway_config_load(tmp_path):
    path = tmp_path / "backend.json"
    path.write_text("""{
        "backend": "synthetic",
        "models": {"hero": "actual-model-id"},
        "prices": {"actual-model-id": {"input": 0.5, "output": 1.5}},
        "retry": {"limit": 5, "backoff_base": 0.25},
        "embedding_dim": 32
    }""", encoding="utf-8")
    config = GatewayConfig.load(path)
    assert config.backend == "synthetic"
    assert config.model_aliases == {"hero": "actual-model-id"}
    assert config.prices.rate("actual-model-id") == (Fraction(1, 2), Fraction(3, 2))
    assert config.retry_limit == 5
    assert config.backoff_base == 0.25
    assert config.embedding_dim == 32


def test_build_gateway_rejects_record_and_replay_together(tmp_path):
    with pytest.raises(ValueError):
        build_gateway(GatewayConfig(), record_dir=tmp_path / "a", replay_dir=tmp_path / "b")


def test_build_gateway_replay_needs_no_inner(tmp_path):
    gw = build_gateway(GatewayConfig(), replay_dir=tmp_path)
    with pytest.raises(ScriptMissError):
        gw.complete(_request(), role="character", ledger=UsageLedger())
