from __future__ import annotations

import json
import time

import pytest

from conftest import action_text, final_text, minimal_spec_payload
from vizguard.chartspec import parse_spec
from vizguard.errors import PrerequisiteUnmet, UnknownInterfaceError
from vizguard.gateway import CallableProvider, MockProvider, ScriptedExchange
from vizguard.orchestrator import (
    RunConfig,
    SystemState,
    TaskOutcome,
    Watchdog,
    agent_execute,
    coordinator_decide,
    dispatch_interface,
    run_task,
    _init_state,
)
from vizguard.rules import ErrorKind, TaskInput, TaskType


def _mock(*responses, strict=True, once=True):
    return MockProvider([ScriptedExchange(response=r, once=once) for r in responses], strict=strict)


def _config(provider, **overrides):
    config = RunConfig(provider=provider)
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


def _watchdog():
    return Watchdog(deadline=time.monotonic() + 60, max_ticks=10_000)


def _sql_script(sql, spec_payload=None):
    responses = [final_text(sql, thought="query is clear")]
    if spec_payload is not None:
        responses.append(final_text(spec_payload, thought="chart follows"))
    return _mock(*responses)


TINY_SQL = "SELECT label, value FROM samples"


# ---------------------------------------------------------------------------
# coordinator policy


def test_policy_fresh_state_queries_database(tiny_db):
    config = _config(_mock())
    state = _init_state(TaskInput(query="plot values", database=tiny_db), config)
    agent, tool, _ = coordinator_decide(state, config)
    assert (agent, tool) == ("DQ", "generate_sql")


def test_policy_data_without_spec_generates(tiny_db):
    config = _config(_sql_script(TINY_SQL))
    state = _init_state(TaskInput(query="plot values", database=tiny_db), config)
    dispatch_interface("generate_sql", {}, state, config, _watchdog())
    agent, tool, _ = coordinator_decide(state, config)
    assert (agent, tool) == ("Vis", "generate_chart_spec")


def test_policy_failed_evaluation_modifies(tiny_db):
    bad_spec = '{"mark": "bar", "encoding": {"x": "absent:N", "y": "value:Q"}}'
    provider = _mock(
        final_text(TINY_SQL),
        final_text("```json\n" + bad_spec + "\n```"),
    )
    config = _config(provider)
    state = _init_state(TaskInput(query="plot values", database=tiny_db), config)
    dispatch_interface("generate_sql", {}, state, config, _watchdog())
    dispatch_interface("generate_chart_spec", {}, state, config, _watchdog())
    dispatch_interface("evaluate_visualization", {}, state, config, _watchdog())
    assert state.last_evaluation is not None and not state.last_evaluation.passed
    agent, tool, args = coordinator_decide(state, config)
    assert (agent, tool) == ("Vis", "modify_chart_spec")
    assert args["feedback"]


# ---------------------------------------------------------------------------
# dispatch routing


def test_generate_sql_stores_sql_and_data(tiny_db):
    config = _config(_sql_script(TINY_SQL))
    state = _init_state(TaskInput(query="plot values", database=tiny_db), config)
    result = dispatch_interface("generate_sql", {}, state, config, _watchdog())
    assert result.ok
    assert state.sql == TINY_SQL
    assert state.data is not None and len(state.data.rows) == 3


def test_evaluate_without_spec_is_prerequisite_unmet(tiny_db):
    config = _config(_mock())
    state = _init_state(TaskInput(query="plot values", database=tiny_db), config)
    with pytest.raises(PrerequisiteUnmet):
        dispatch_interface("evaluate_visualization", {}, state, config, _watchdog())


def test_unknown_interface_rejected(tiny_db):
    config = _config(_mock())
    state = _init_state(TaskInput(query="q", database=tiny_db), config)
    with pytest.raises(UnknownInterfaceError):
        dispatch_interface("list_tables", {}, state, config, _watchdog())


def test_modify_replaces_spec_and_keeps_previous_in_trace():
    prior = parse_spec(
        '{"mark": "bar", "encoding": {"x": "month:N", "y": "sales:Q"},'
        ' "data": {"values": [{"month": "Jan", "sales": 3}]}}'
    )
    modified = (
        '{"mark": "bar", "encoding": {"x": {"field": "month", "type": "nominal",'
        ' "axis": {"labelAngle": -90}}, "y": "sales:Q"}, "title": "Sales by Month"}'
    )
    provider = _mock(final_text("```json\n" + modified + "\n```"))
    config = _config(provider)
    state = _init_state(TaskInput(query="make labels vertical", prior_spec=prior), config)
    old_text = state.current_spec.source_text
    result = dispatch_interface(
        "modify_chart_spec", {"feedback": ["make labels vertical"]}, state, config, _watchdog()
    )
    assert result.ok and state.modified
    assert state.current_spec.source_text != old_text
    x_entry = state.current_spec.root["encoding"]["x"]
    assert x_entry["axis"]["labelAngle"] == -90
    assert state.current_spec.root["title"] == "Sales by Month"
    superseded = [r for r in state.trace if r.get("event") == "spec_superseded"]
    assert superseded and superseded[0]["previous"] == old_text
    assert state.spec_history


# ---------------------------------------------------------------------------
# inner agent loop


def test_scripted_recovery_bad_sql_then_corrected(tiny_db):
    provider = _mock(
        final_text("SELECT label FROM missing_table"),
        final_text(TINY_SQL),
    )
    config = _config(provider)
    state = _init_state(TaskInput(query="plot values", database=tiny_db), config)
    result = dispatch_interface("generate_sql", {}, state, config, _watchdog())
    assert result.ok and state.data is not None
    recoveries = [r for r in state.trace if r.get("rule") == "EH2"]
    assert [r["strategy"] for r in recoveries] == ["RegenerateStep"]
    classified = [r for r in state.trace if r.get("rule") == "EH1"]
    assert classified and classified[0]["kind"] == ErrorKind.EXEC.value


def test_inner_loop_exhausts_at_max_steps(tiny_db):
    provider = CallableProvider(lambda request, i: action_text("list_tables", {}))
    config = _config(provider)
    state = _init_state(TaskInput(query="plot values", database=tiny_db), config)
    result = agent_execute("DQ", "generate_sql", {}, state, config, _watchdog())
    assert result.status == "exhausted"
    assert provider.calls == config.max_steps  # best-effort exactly at the cap


def test_inner_tool_args_are_clamped(tiny_db):
    provider = _mock(
        action_text("get_table", {"name": "samples", "row_limit": 5000}),
        final_text(TINY_SQL),
    )
    config = _config(provider)
    state = _init_state(TaskInput(query="plot values", database=tiny_db), config)
    result = dispatch_interface("generate_sql", {}, state, config, _watchdog())
    assert result.ok
    clamp_events = [r for r in state.trace if r.get("rule") == "TE1" and r.get("tool") == "get_table"]
    assert clamp_events
    entry = next(p for p in clamp_events[0]["params"] if p["param"] == "row_limit")
    assert entry["value"] == 1000


def test_invalid_param_triggers_retry_with_clamped(tiny_db):
    provider = _mock(
        action_text("get_table", {"name": "samples", "row_limit": "many"}),
        final_text(TINY_SQL),
    )
    config = _config(provider)
    state = _init_state(TaskInput(query="plot values", database=tiny_db), config)
    result = dispatch_interface("generate_sql", {}, state, config, _watchdog())
    assert result.ok
    eh2 = [r for r in state.trace if r.get("rule") == "EH2"]
    assert eh2 and eh2[0]["strategy"] == "RetryWithClamped"


# ---------------------------------------------------------------------------
# whole runs


def _golden_provider():
    return _mock(
        final_text(TINY_SQL),
        final_text(minimal_spec_payload()),
    )


def test_run_completes_and_canonicalizes(tiny_db):
    outcome = run_task(TaskInput(query="plot values", database=tiny_db), _config(_golden_provider()))
    assert outcome.status == TaskOutcome.COMPLETE
    assert outcome.iterations_used == 3
    values = outcome.final_spec.root["data"]["values"]
    assert values[0] == {"label": "a", "value": 1}


def test_run_missing_database_fails_with_io_error():
    outcome = run_task(TaskInput(query="q", database="/nonexistent/path.sqlite"), _config(_mock()))
    assert outcome.status == TaskOutcome.FAILED
    assert outcome.error is not None and outcome.error.kind is ErrorKind.IO
    assert outcome.trace  # trace intact


def test_trace_is_deterministic(tiny_db):
    def run_once():
        outcome = run_task(TaskInput(query="plot values", database=tiny_db), _config(_golden_provider()))
        return json.dumps(list(outcome.trace), sort_keys=True)

    assert run_once() == run_once()


def test_iteration_counter_has_no_gaps(tiny_db):
    outcome = run_task(TaskInput(query="plot values", database=tiny_db), _config(_golden_provider()))
    iterations = [r["t"] for r in outcome.trace if r.get("event") == "iteration"]
    assert iterations == list(range(len(iterations)))


def test_every_tool_call_is_rule_mediated(tiny_db):
    outcome = run_task(TaskInput(query="plot values", database=tiny_db), _config(_golden_provider()))
    trace = list(outcome.trace)
    seen = 0
    for index, record in enumerate(trace):
        if record.get("event") != "tool_call":
            continue
        window = trace[max(0, index - 6) : index]
        rules = [r.get("rule") for r in window if r.get("event") == "rule"]
        assert "CR2" in rules, record
        if record.get("ok"):  # executed calls also pass the clamp gate
            assert "TE1" in rules, record
        seen += 1
    assert seen >= 3


def test_prerequisite_failures_are_still_gated(tiny_db):
    # a model calling a tool whose prerequisites are unmet: the check fires,
    # the call is refused, recovery takes over
    provider = _mock(
        action_text("render_chart_spec", {}),
        final_text(TINY_SQL),
        final_text(minimal_spec_payload()),
    )
    outcome = run_task(TaskInput(query="plot values", database=tiny_db), _config(provider))
    assert outcome.status == TaskOutcome.COMPLETE
    trace = list(outcome.trace)
    refused = [i for i, r in enumerate(trace) if r.get("event") == "tool_call" and not r.get("ok")]
    assert refused
    for index in refused:
        window = trace[max(0, index - 4) : index]
        assert any(r.get("rule") == "CR2" and not r.get("ok") for r in window)


def test_adversarial_never_final_hits_iteration_limit(tiny_db):
    provider = CallableProvider(lambda request, i: action_text("list_tables", {}))
    outcome = run_task(TaskInput(query="plot values", database=tiny_db), _config(provider))
    assert outcome.status == TaskOutcome.ITERATION_LIMIT
    assert outcome.iterations_used == 10


def test_rules_disabled_adversarial_is_cut_by_watchdog(tiny_db):
    provider = CallableProvider(lambda request, i: action_text("list_tables", {}))
    config = _config(provider, rules_enabled=False, watchdog_ticks=150, watchdog_seconds=30)
    outcome = run_task(TaskInput(query="plot values", database=tiny_db), config)
    assert outcome.status == TaskOutcome.FAILED
    assert outcome.error.kind is ErrorKind.TIMEOUT
    assert "watchdog" in outcome.error.detail
    assert any(r.get("event") == "watchdog" for r in outcome.trace)


def test_scenario_d_with_embedded_data_skips_database():
    prior = parse_spec(
        '{"mark": "bar", "encoding": {"x": "k:N", "y": "v:Q"},'
        ' "data": {"values": [{"k": "a", "v": 1}]}}'
    )
    modified = '{"mark": "bar", "encoding": {"x": "k:N", "y": "v:Q"}, "title": "T"}'
    provider = _mock(final_text("```json\n" + modified + "\n```"))
    config = _config(provider)
    outcome = run_task(TaskInput(query="add a title", database=None, prior_spec=prior), config)
    assert outcome.status == TaskOutcome.COMPLETE
    assert outcome.iterations_used == 2
    tools = [r["tool"] for r in outcome.trace if r.get("event") == "tool_call" and r.get("interface")]
    assert tools == ["modify_chart_spec", "evaluate_visualization"]


def test_only_generation_calls_vis_once(tiny_db):
    provider = _mock(final_text(minimal_spec_payload()))
    config = _config(provider, only_generation=True, eval_enabled=False)
    outcome = run_task(TaskInput(query="plot values", database=tiny_db), config)
    assert outcome.status == TaskOutcome.COMPLETE
    assert outcome.iterations_used == 1
    tools = [r["tool"] for r in outcome.trace if r.get("event") == "tool_call" and r.get("interface")]
    assert tools == ["generate_chart_spec"]


def test_no_eval_skips_evaluation_loop(tiny_db):
    config = _config(_golden_provider(), eval_enabled=False)
    outcome = run_task(TaskInput(query="plot values", database=tiny_db), config)
    assert outcome.status == TaskOutcome.COMPLETE
    assert "evaluate_visualization" not in [
        r.get("tool") for r in outcome.trace if r.get("event") == "tool_call"
    ]


def test_classification_recorded_in_trace(tiny_db, fixtures_dir):
    config = _config(_golden_provider())
    image = str(fixtures_dir / "images" / "ref_threshold.png")
    outcome = run_task(TaskInput(query="plot values", database=tiny_db, ref_image=image), config)
    start = outcome.trace[0]
    assert start["task_type"] == TaskType.B.value


def test_vision_model_selected_for_image_case(tiny_db, fixtures_dir):
    image = str(fixtures_dir / "images" / "ref_threshold.png")
    config = _config(_golden_provider())
    outcome = run_task(TaskInput(query="plot values", database=tiny_db, ref_image=image), config)
    assert outcome.status == TaskOutcome.COMPLETE
    rc3 = [r for r in outcome.trace if r.get("rule") == "RC3"]
    vis_models = {r["model"] for r in rc3 if r["clazz"] == "VisionModel"}
    assert vis_models == {"mock-vision"}
    exchange_models = {r["model"] for r in outcome.trace if r.get("event") == "model_exchange"}
    assert "mock-vision" in exchange_models


def test_script_warning_for_unfired_exchanges(tiny_db):
    provider = MockProvider(
        [
            ScriptedExchange(response=final_text(TINY_SQL)),
            ScriptedExchange(response=final_text(minimal_spec_payload())),
            ScriptedExchange(matcher="never fires", response="spare"),
        ]
    )
    outcome = run_task(TaskInput(query="plot values", database=tiny_db), _config(provider))
    warnings = [r for r in outcome.trace if r.get("event") == "script_warning"]
    assert warnings and warnings[0]["unconsumed"] == ["never fires"]


def test_trace_file_written(tiny_db, tmp_path):
    path = tmp_path / "run" / "trace.jsonl"
    config = _config(_golden_provider(), trace_path=str(path))
    run_task(TaskInput(query="plot values", database=tiny_db), config)
    lines = path.read_text().splitlines()
    assert json.loads(lines[0])["event"] == "run_start"
    assert json.loads(lines[-1])["event"] == "outcome"


def test_state_attributes_reflect_progress(tiny_db):
    config = _config(_sql_script(TINY_SQL))
    state = _init_state(TaskInput(query="plot values", database=tiny_db), config)
    assert "db" in state.defined_attributes()
    assert "data" not in state.defined_attributes()
    dispatch_interface("generate_sql", {}, state, config, _watchdog())
    attrs = state.defined_attributes()
    assert {"db", "data", "sql", "query"} <= attrs
