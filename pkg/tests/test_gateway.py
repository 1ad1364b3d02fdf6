from __future__ import annotations

import json
import random

import pytest

from conftest import action_text, final_text, write_script
from vizguard.errors import ConfigError, GatewayError
from vizguard.gateway import (
    CallableProvider,
    FaultInjectingProvider,
    FinalResponse,
    HttpModelConfig,
    HttpProvider,
    ImagePart,
    MockProvider,
    ModelRequest,
    ModelResponse,
    ScriptedExchange,
    TextPart,
    ToolRequest,
    complete,
    load_script,
    make_provider,
    parse_tool_call,
)
from vizguard.rules import ClassifiedError, ModelClass, ModelKind


def _request(text="hello"):
    return ModelRequest(parts=(TextPart(text),))


def test_scripted_replay_in_order():
    provider = MockProvider(
        [ScriptedExchange(matcher="first", response="one"), ScriptedExchange(response="two")]
    )
    assert provider.complete_text(_request("the first request")).text == "one"
    assert provider.complete_text(_request("anything")).text == "two"


def test_script_exhausted_in_strict_mode():
    provider = MockProvider([ScriptedExchange(response="only")])
    provider.complete_text(_request())
    with pytest.raises(GatewayError) as exc:
        provider.complete_text(_request())
    assert exc.value.code == "ScriptExhausted"


def test_script_mismatch_in_strict_mode():
    provider = MockProvider([ScriptedExchange(matcher="needle", response="x")])
    with pytest.raises(GatewayError) as exc:
        provider.complete_text(_request("no match here"))
    assert exc.value.code == "ScriptMismatch"


def test_repeating_exchange_replays_forever():
    provider = MockProvider([ScriptedExchange(response="again", once=False)])
    for _ in range(5):
        assert provider.complete_text(_request()).text == "again"
    assert provider.unconsumed() == []


def test_unconsumed_exchanges_reported():
    provider = MockProvider(
        [ScriptedExchange(response="used"), ScriptedExchange(matcher="never", response="spare")]
    )
    provider.complete_text(_request())
    leftovers = provider.unconsumed()
    assert [e.matcher for e in leftovers] == ["never"]


def test_regex_matcher():
    provider = MockProvider([ScriptedExchange(matcher=r"table\s+\d+", response="ok", regex=True)])
    assert provider.complete_text(_request("table 42 please")).text == "ok"


def test_load_script_round_trip(tmp_path):
    path = write_script(
        tmp_path / "s.jsonl",
        [
            {"match": "a", "response": "one"},
            {"response": "two", "once": False},
            {"match": "x.*y", "response": "three", "regex": True},
        ],
    )
    exchanges = load_script(path)
    assert [e.response for e in exchanges] == ["one", "two", "three"]
    assert exchanges[1].once is False and exchanges[2].regex is True


def test_load_script_errors(tmp_path):
    with pytest.raises(GatewayError) as exc:
        load_script(str(tmp_path / "absent.jsonl"))
    assert exc.value.code == "IoError"
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json}\n")
    with pytest.raises(GatewayError) as exc:
        load_script(str(bad))
    assert exc.value.code == "FormatError"
    incomplete = tmp_path / "inc.jsonl"
    incomplete.write_text('{"match": "x"}\n')
    with pytest.raises(GatewayError) as exc:
        load_script(str(incomplete))
    assert exc.value.code == "FormatError"


def test_parse_tool_call_action():
    parsed = parse_tool_call(ModelResponse(action_text("execute_sql", {"sql": "SELECT 1"})))
    assert isinstance(parsed, ToolRequest)
    assert parsed.tool == "execute_sql" and parsed.args == {"sql": "SELECT 1"}


def test_parse_tool_call_final():
    parsed = parse_tool_call(ModelResponse(final_text("{\"mark\": \"bar\"}")))
    assert isinstance(parsed, FinalResponse)
    assert "bar" in parsed.payload


def test_parse_tool_call_prose_is_parse_error():
    parsed = parse_tool_call(ModelResponse("just some prose"))
    assert isinstance(parsed, ClassifiedError)


def test_parse_tool_call_total_over_fuzz():
    rng = random.Random(11)
    for _ in range(1500):
        text = "".join(chr(rng.randrange(1, 0x500)) for _ in range(rng.randrange(0, 200)))
        parsed = parse_tool_call(ModelResponse(text))
        assert isinstance(parsed, (ToolRequest, FinalResponse, ClassifiedError))


def test_complete_appends_trace_records():
    provider = MockProvider([ScriptedExchange(response="pong")])
    trace: list = []
    response = complete(_request("ping"), provider, trace)
    assert response.text == "pong"
    assert trace[0]["event"] == "model_exchange"
    assert trace[0]["request"] == "ping" and trace[0]["response"] == "pong"


def test_image_parts_described_not_dumped():
    provider = MockProvider([ScriptedExchange(response="ok")])
    trace: list = []
    request = ModelRequest(
        parts=(TextPart("look"), ImagePart(b"\x89PNG1234", "image/png")),
        kind=ModelKind(ModelClass.VISION, "mock-vision"),
    )
    complete(request, provider, trace)
    assert "<image image/png 8 bytes>" in trace[0]["request"]
    assert trace[0]["model"] == "mock-vision"


def test_request_invariants():
    with pytest.raises(ValueError):
        ModelRequest(parts=(ImagePart(b"x"),))
    with pytest.raises(ValueError):
        ModelRequest(
            parts=(TextPart("t"), ImagePart(b"x")),
            kind=ModelKind(ModelClass.TEXT, "text-model"),
        )


def test_callable_provider_counts_calls():
    provider = CallableProvider(lambda request, i: f"call {i}")
    assert provider.complete_text(_request()).text == "call 0"
    assert provider.complete_text(_request()).text == "call 1"


def test_fault_injector_preserves_script_position():
    inner = MockProvider([ScriptedExchange(response="real-1"), ScriptedExchange(response="real-2")])
    provider = FaultInjectingProvider(inner, every=2)
    assert provider.complete_text(_request()).text == "real-1"
    assert provider.complete_text(_request()).text == FaultInjectingProvider.GARBLED
    assert provider.complete_text(_request()).text == "real-2"


def test_http_provider_requires_credentials(monkeypatch):
    monkeypatch.delenv("VIZGUARD_TEST_KEY", raising=False)
    provider = HttpProvider(
        [HttpModelConfig("live-model", "https://example.invalid/v1", "VIZGUARD_TEST_KEY", frozenset({"text"}))]
    )
    with pytest.raises(ConfigError):
        provider.complete_text(_request())


def test_make_provider_variants(tmp_path):
    script = write_script(tmp_path / "s.jsonl", [{"response": "hi"}])
    provider = make_provider("mock", script=script)
    assert isinstance(provider, MockProvider)
    with pytest.raises(ConfigError):
        make_provider("provider:gpt-x")
    with pytest.raises(ConfigError):
        make_provider("telepathy")
    config = tmp_path / "providers.json"
    config.write_text(
        json.dumps(
            {
                "models": [
                    {"id": "m-text", "endpoint": "https://example.invalid", "env_key": "K1"},
                    {"id": "m-vis", "endpoint": "https://example.invalid", "env_key": "K2", "capabilities": ["text", "vision"]},
                ]
            }
        )
    )
    live = make_provider("provider:m-vis", config_path=str(config))
    assert live.models()[0].model_id == "m-vis"


def test_mock_determinism():
    script = [ScriptedExchange(response="a"), ScriptedExchange(response="b")]

    def run():
        provider = MockProvider([ScriptedExchange(e.matcher, e.response, e.once, e.regex) for e in script])
        trace: list = []
        complete(_request("one"), provider, trace)
        complete(_request("two"), provider, trace)
        return json.dumps(trace, sort_keys=True)

    assert run() == run()
