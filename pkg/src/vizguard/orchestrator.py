"""Coordinator main loop and specialized-agent execution.

One task run is a single-threaded state machine.  The coordinator policy is a
deterministic state-driven table (data, then spec, then evaluation, then
modification); the model is consulted only inside an agent's inner
Thought-Action-Observation loop.  Every decision and tool call is mediated by
the rule layer: prerequisite validation and parameter clamping precede each
call, parse failures flow through classification and bounded recovery, and the
iteration guards force termination.  A wall-clock/step watchdog backs the
formal guards as an engineering backstop; with rules enabled it never fires on
the normal path.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any

from . import dbtools, gateway
from .chartspec import (
    ChartSpec,
    DataTable,
    ParseFailure,
    canonicalize,
    parse_spec,
    validate_spec,
)
from .errors import (
    NoViableAction,
    PrerequisiteUnmet,
    ToolError,
    UnknownInterfaceError,
    VizGuardError,
)
from .evaluator import EvaluationReport, assess_candidate
from .gateway import FinalResponse, ModelRequest, Provider, ToolRequest
from .registry import AGENT_DQ, AGENT_VE, AGENT_VIS, INTERFACES, TOOLS, ToolRegistryEntry, clamp_args
from .rules import (
    BOUND_TABLE,
    ERROR_LIMIT,
    MAX_STEPS,
    N_MAX,
    RECOVERY_TABLE,
    T_MAX,
    ClassifiedError,
    CoordinatorDirective,
    DirectiveKind,
    ErrorKind,
    IterationGuard,
    ProcessedReference,
    RecoveryContext,
    TaskInput,
    TaskType,
    classify_exception,
    cr_classify_task,
    cr_decide_next,
    cr_validate_prereq,
    eh_classify_parse,
    eh_select_recovery,
    rc_select_model,
    rc_should_terminate,
    rc_validate_response,
    te_process_reference,
    te_standardize_payload,
)


class WatchdogTripped(Exception):
    """Raised by the hard backstop; never handled by recovery."""


@dataclass
class Watchdog:
    deadline: float
    max_ticks: int
    ticks: int = 0

    def check(self) -> None:
        self.ticks += 1
        if self.ticks > self.max_ticks or time.monotonic() > self.deadline:
            raise WatchdogTripped(f"watchdog tripped after {self.ticks} ticks")


@dataclass
class RunConfig:
    """Everything a run needs beyond its TaskInput."""

    provider: Provider
    vlm: Provider | None = None
    t_max: int = T_MAX
    max_steps: int = MAX_STEPS
    n_max: int = N_MAX
    error_limit: int = ERROR_LIMIT
    rules_enabled: bool = True
    db_agent_enabled: bool = True
    eval_enabled: bool = True
    only_generation: bool = False
    refinement_reuses_embedded_data: bool = True
    perceptual_in_loop: bool = False
    in_loop_image: str | None = None
    alpha: float = 0.5
    seed: int = 0
    watchdog_seconds: float = 300.0
    watchdog_ticks: int = 100_000
    bounds: dict = dc_field(default_factory=lambda: dict(BOUND_TABLE))
    recovery: dict = dc_field(default_factory=lambda: dict(RECOVERY_TABLE))
    render_command: list[str] | None = None
    trace_path: str | None = None


@dataclass
class SystemState:
    """The coordinator blackboard for one run."""

    task: TaskInput
    task_type: TaskType
    renderer_available: bool = False
    db: dbtools.DbHandle | None = None
    schema_text: str | None = None
    _schema_cache: str | None = None
    sql: str | None = None
    data: DataTable | None = None
    current_spec: ChartSpec | None = None
    rendered_path: str | None = None
    last_evaluation: EvaluationReport | None = None
    directive: CoordinatorDirective | None = None
    feedback: tuple[str, ...] = ()
    references: dict = dc_field(default_factory=dict)
    spec_history: list = dc_field(default_factory=list)
    generated: bool = False
    modified: bool = False
    iteration: int = 0
    error_count: int = 0
    last_error: ClassifiedError | None = None
    trace: list = dc_field(default_factory=list)

    def defined_attributes(self) -> set[str]:
        defined = {"query"}
        if self.db is not None and self.db.is_open:
            defined.add("db")
        if self.schema_text is not None:
            defined.add("schema")
        if self.sql is not None:
            defined.add("sql")
        if self.data is not None:
            defined.add("data")
        if self.current_spec is not None:
            defined.add("current_spec")
        if self.feedback:
            defined.add("feedback")
        if self.last_evaluation is not None:
            defined.add("evaluation")
        if self.renderer_available:
            defined.add("renderer")
        return defined

    def log(self, **record: Any) -> None:
        self.trace.append(record)

    def snapshot(self) -> dict:
        return {
            "has_data": self.data is not None,
            "has_spec": self.current_spec is not None,
            "has_evaluation": self.last_evaluation is not None,
            "directive": None if self.directive is None else self.directive.kind.value,
            "error_count": self.error_count,
        }


@dataclass(frozen=True)
class StepResult:
    status: str  # "ok" | "exhausted" | "failed"
    payload: Any = None
    error: ClassifiedError | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class TaskOutcome:
    status: str  # Complete | CompleteWithNotes | IterationLimit | Failed
    error: ClassifiedError | None = None
    final_spec: ChartSpec | None = None
    evaluation: EvaluationReport | None = None
    iterations_used: int = 0
    trace: tuple = ()
    trace_path: str | None = None

    COMPLETE = "Complete"
    COMPLETE_WITH_NOTES = "CompleteWithNotes"
    ITERATION_LIMIT = "IterationLimit"
    FAILED = "Failed"

    @property
    def succeeded(self) -> bool:
        return self.status in (self.COMPLETE, self.COMPLETE_WITH_NOTES)


_CHART_TEMPLATES = {
    "bar": {"mark": "bar", "encoding": {"x": {"field": "category", "type": "nominal"}, "y": {"field": "value", "type": "quantitative"}}},
    "line": {"mark": "line", "encoding": {"x": {"field": "time", "type": "temporal"}, "y": {"field": "value", "type": "quantitative"}}},
    "scatter": {"mark": "point", "encoding": {"x": {"field": "x", "type": "quantitative"}, "y": {"field": "y", "type": "quantitative"}}},
    "area": {"mark": "area", "encoding": {"x": {"field": "time", "type": "temporal"}, "y": {"field": "value", "type": "quantitative"}}},
}

_FORMAT_RULES = (
    "Respond with a 'Thought:' line, then EITHER exactly one fenced block\n"
    "```action\n{\"tool\": \"<name>\", \"args\": {...}}\n```\n"
    "OR a line 'FINAL:' followed by your final result."
)


def effective_prerequisites(config: RunConfig) -> dict[str, frozenset[str]]:
    table = {t: e.prerequisites for t, e in TOOLS.items()}
    if config.only_generation or not config.db_agent_enabled:
        # ablations feed raw schema text instead of a query result
        table["generate_chart_spec"] = frozenset({"query"})
        table["validate_chart_spec"] = frozenset({"query"})
    return table


def _schema_summary(db: dbtools.DbHandle) -> str:
    lines = []
    for name in dbtools.list_tables(db):
        preview = dbtools.get_table(db, name, 1)
        cols = ", ".join(f"{c} {t}".strip() for c, t in preview.columns)
        lines.append(f"{name}({cols})")
    return "\n".join(lines)


def _data_summary(data: DataTable) -> str:
    cols = ", ".join(f"{c.name} ({c.ctype})" for c in data.columns)
    return f"columns: {cols}; rows: {len(data.rows)}"


def _agent_tools(agent: str) -> list[ToolRegistryEntry]:
    return [e for e in TOOLS.values() if e.agent == agent and not e.interface]


def build_prompt(agent: str, tool: str, args: dict, state: SystemState) -> str:
    """Deterministic context for one agent invocation."""
    roles = {
        AGENT_DQ: "database and query",
        AGENT_VIS: "visualization implementation",
        AGENT_VE: "validation and evaluation",
    }
    lines = [
        f"You are the {roles[agent]} agent.",
        f"interface: {tool}",
        f"task type: {state.task_type.value}",
        f"Task: {state.task.query}",
    ]
    if agent == AGENT_DQ and state.db is not None:
        if state._schema_cache is None:
            state._schema_cache = _schema_summary(state.db)
        lines.append("Database schema:")
        lines.append(state._schema_cache)
    if state.schema_text and agent == AGENT_VIS:
        lines.append("Database schema:")
        lines.append(state.schema_text)
    if state.data is not None and agent != AGENT_DQ:
        lines.append(f"Query result {_data_summary(state.data)}")
    if tool == "modify_chart_spec" and state.current_spec is not None:
        lines.append("Current chart spec:")
        lines.append(state.current_spec.source_text.strip())
    if args.get("feedback"):
        lines.append("Feedback to address:")
        lines.extend(f"- {item}" for item in args["feedback"])
    ref_code = state.references.get("code")
    if ref_code is not None and agent == AGENT_VIS:
        lines.append(f"Reference code ({ref_code.media}):")
        lines.append(str(ref_code.payload).strip())
    if state.references.get("image") is not None and agent == AGENT_VIS:
        lines.append("A reference image is attached; match its style.")
    tool_lines = []
    for entry in _agent_tools(agent):
        params = ", ".join(p.name + ("" if p.required else "?") for p in entry.params)
        tool_lines.append(f"- {entry.tool_id}({params})")
    if tool_lines:
        lines.append("Available tools:")
        lines.extend(tool_lines)
    lines.append(_FORMAT_RULES)
    return "\n".join(lines)


def _strip_code_fence(text: str) -> str:
    body = text.strip()
    if body.startswith("```"):
        first_newline = body.find("\n")
        if first_newline >= 0 and body.endswith("```"):
            return body[first_newline + 1 : -3].strip()
    return body


def _execute_tool(entry: ToolRegistryEntry, args: dict, state: SystemState, config: RunConfig) -> str:
    tool = entry.tool_id
    if tool == "list_tables":
        return json.dumps(dbtools.list_tables(state.db))
    if tool == "get_table":
        preview = dbtools.get_table(state.db, args["name"], args.get("row_limit"))
        return json.dumps(
            {"table": preview.name, "columns": list(preview.columns), "rows": [list(r) for r in preview.rows]}
        )
    if tool == "get_foreign_keys":
        return json.dumps([list(edge) for edge in dbtools.get_foreign_keys(state.db)])
    if tool == "find_fields":
        return json.dumps([list(hit) for hit in dbtools.find_fields(state.db, args["keyword"])])
    if tool == "execute_sql":
        result = dbtools.execute_sql(
            state.db, args["sql"], args.get("row_limit"), args.get("timeout_seconds")
        )
        if isinstance(result, dbtools.SqlError):
            category = "TimeoutError" if result.kind == dbtools.SqlError.TIMEOUT else "ExecError"
            raise ToolError(f"SqlError({result.kind}): {result.message}", code=result.kind, category=category)
        return json.dumps(
            {"columns": list(result.columns), "rows": [list(r) for r in result.rows], "truncated": result.truncated}
        )
    if tool == "list_chart_templates":
        return json.dumps(sorted(_CHART_TEMPLATES))
    if tool == "get_chart_template":
        name = args["name"]
        if name not in _CHART_TEMPLATES:
            raise ToolError(f"unknown template {name!r}", code="UnknownTemplate", category="ExecError")
        return json.dumps(_CHART_TEMPLATES[name], sort_keys=True)
    if tool == "validate_chart_spec":
        parsed = parse_spec(str(args["spec"]))
        if isinstance(parsed, ParseFailure):
            return json.dumps({"valid": False, "reason": str(parsed)})
        if state.data is None:
            return json.dumps({"valid": True, "reason": "no data bound; structural checks only"})
        report = validate_spec(parsed, state.data)
        return json.dumps(
            {"valid": report.valid, "diagnostics": [f"{d.code}@{d.path}" for d in report.diagnostics]}
        )
    if tool in ("render_chart_spec", "execute_plot_snippet"):
        return _invoke_renderer(tool, args, state, config)
    raise ToolError(f"tool {tool!r} has no executor", code="UnknownTool", category="ExecError")


def _invoke_renderer(tool: str, args: dict, state: SystemState, config: RunConfig) -> str:
    import subprocess
    import tempfile

    if not config.render_command:
        raise ToolError("renderer not configured", code="RendererUnavailable", category="ExecError")
    timeout = float(args.get("timeout_seconds") or BOUND_TABLE["render_timeout_seconds"].default)
    out_dir = tempfile.mkdtemp(prefix="vizguard-render-")
    out_path = str(Path(out_dir) / "chart.png")
    if tool == "render_chart_spec":
        spec_path = str(Path(out_dir) / "spec.json")
        Path(spec_path).write_text(state.current_spec.source_text, encoding="utf-8")
        cmd = list(config.render_command) + ["render", "--spec", spec_path, "--out", out_path, "--timeout", str(timeout)]
    else:
        code_path = str(Path(out_dir) / "snippet.py")
        Path(code_path).write_text(str(args.get("code", "")), encoding="utf-8")
        cmd = list(config.render_command) + ["exec", "--snippet", code_path, "--out-dir", out_dir, "--timeout", str(timeout)]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout + 30)
    except subprocess.TimeoutExpired as exc:
        raise ToolError(f"render watchdog expired: {exc}", code="RenderTimeout", category="TimeoutError") from exc
    except OSError as exc:
        raise ToolError(f"renderer unavailable: {exc}", code="RendererUnavailable", category="IoError") from exc
    if proc.returncode == 124:
        raise ToolError("render timed out", code="RenderTimeout", category="TimeoutError")
    if proc.returncode != 0:
        raise ToolError(f"render failed: {proc.stdout.strip() or proc.stderr.strip()}", code="RenderError")
    state.rendered_path = out_path
    return proc.stdout.strip() or json.dumps({"ok": True, "path": out_path})


def _trace_rule_gate(state: SystemState, entry: ToolRegistryEntry, args: dict, config: RunConfig, prereqs) -> tuple[dict, list[str]]:
    """Prerequisite check then parameter clamp, both traced, before any tool
    execution."""
    ok, missing = cr_validate_prereq(entry.tool_id, state, prereqs)
    state.log(event="rule", rule="CR2", tool=entry.tool_id, ok=ok, missing=list(missing))
    if not ok:
        raise PrerequisiteUnmet(
            f"{entry.tool_id} missing prerequisites: {', '.join(missing)}", missing=missing
        )
    clamped, events, invalid = clamp_args(entry, args, config.bounds)
    state.log(event="rule", rule="TE1", tool=entry.tool_id, params=events)
    return clamped, invalid


def agent_execute(agent: str, tool: str, args: dict, state: SystemState, config: RunConfig, watchdog: Watchdog, finalizer=None) -> StepResult:
    """Inner Thought-Action-Observation loop for one interface call.

    Every model response passes format validation; every inner tool call is
    prerequisite-checked and clamped; errors flow through classification and
    bounded recovery.  On exhaustion the loop returns its best-effort history.
    """
    prereqs = effective_prerequisites(config)
    context: list[str] = [build_prompt(agent, tool, args, state)]
    history: list[str] = []
    attempts = 0
    step = 0
    last_error: ClassifiedError | None = None

    image_ref: ProcessedReference | None = state.references.get("image")
    attach_image = image_ref is not None and agent == AGENT_VIS and tool in ("generate_chart_spec", "modify_chart_spec")

    while True:
        watchdog.check()
        if config.rules_enabled:
            # the guard's error leg is enforced by the recovery budget below
            # (the terminal GracefulFail); the loop-top check owns the step cap
            guard = IterationGuard(step, config.max_steps, 0, config.n_max)
            if rc_should_terminate(guard, None):
                return StepResult("exhausted", payload="\n".join(history[-3:]), detail="inner step cap reached")
        parts: tuple = tuple(
            [gateway.TextPart("\n\n".join(context))]
            + ([gateway.ImagePart(image_ref.payload, image_ref.media)] if attach_image else [])
        )
        kind = rc_select_model(parts, (), config.provider.models())
        if config.rules_enabled:
            state.log(event="rule", rule="RC3", model=kind.model_id, clazz=kind.clazz.value)
        try:
            response = gateway.complete(ModelRequest(parts=parts, kind=kind), config.provider, state.trace)
        except VizGuardError as exc:
            if not config.rules_enabled:
                raise
            error = classify_exception(exc)
            state.log(event="rule", rule="EH1", kind=error.kind.value, detail=error.detail)
            action = eh_select_recovery(error, RecoveryContext(attempts, config.n_max), config.recovery)
            state.log(event="rule", rule="EH2", strategy=action.strategy.value, attempts=attempts)
            if action.terminal:
                return StepResult("failed", error=error, detail="recovery budget exhausted")
            attempts += 1
            last_error = error
            step += 1
            continue
        step += 1

        if config.rules_enabled:
            ok, diagnostics = rc_validate_response(response.text)
            state.log(event="rule", rule="RC2", ok=ok, diagnostics=list(diagnostics))
            if not ok:
                error = eh_classify_parse(response.text) or ClassifiedError(ErrorKind.PARSE, "invalid response")
                state.log(event="rule", rule="EH1", kind=error.kind.value, detail=error.detail)
                action = eh_select_recovery(error, RecoveryContext(attempts, config.n_max), config.recovery)
                state.log(event="rule", rule="EH2", strategy=action.strategy.value, attempts=attempts)
                if action.terminal:
                    return StepResult("failed", error=error, detail="recovery budget exhausted")
                attempts += 1
                last_error = error
                context.append(f"Your last reply was invalid ({error.detail}).\n{_FORMAT_RULES}")
                continue

        parsed = gateway.parse_tool_call(response)
        if isinstance(parsed, ClassifiedError):
            # reachable only with rules disabled; surfaces as a run failure
            raise ToolError(f"unparsable model output: {parsed.detail}", code="Unparsable", category="ParseError")

        if isinstance(parsed, FinalResponse):
            if finalizer is None:
                return StepResult("ok", payload=parsed.payload)
            outcome = finalizer(parsed.payload)
            if outcome is None or not isinstance(outcome, ClassifiedError):
                return StepResult("ok", payload=outcome if outcome is not None else parsed.payload)
            error = outcome
            state.log(event="rule", rule="EH1", kind=error.kind.value, detail=error.detail)
            if not config.rules_enabled:
                raise ToolError(f"finalization failed: {error.detail}", code="FinalizeFailed", category=error.kind.value)
            action = eh_select_recovery(error, RecoveryContext(attempts, config.n_max), config.recovery)
            state.log(event="rule", rule="EH2", strategy=action.strategy.value, attempts=attempts)
            if action.terminal:
                return StepResult("failed", error=error, detail="recovery budget exhausted")
            attempts += 1
            last_error = error
            context.append(f"Your final result was rejected: {error.detail}. Produce a corrected FINAL result.")
            continue

        request: ToolRequest = parsed
        entry = TOOLS.get(request.tool)
        call_args = dict(request.args)
        try:
            if entry is None:
                raise ToolError(f"unregistered tool {request.tool!r}", code="UnknownTool", category="ParseError")
            if config.rules_enabled:
                call_args, invalid = _trace_rule_gate(state, entry, call_args, config, prereqs)
                if invalid:
                    error = ClassifiedError(ErrorKind.PARAM, f"invalid parameters: {', '.join(invalid)}")
                    state.log(event="rule", rule="EH1", kind=error.kind.value, detail=error.detail)
                    action = eh_select_recovery(error, RecoveryContext(attempts, config.n_max), config.recovery)
                    state.log(event="rule", rule="EH2", strategy=action.strategy.value, attempts=attempts)
                    if action.terminal:
                        return StepResult("failed", error=error, detail="recovery budget exhausted")
                    attempts += 1
                    last_error = error
                    # RetryWithClamped: substitute the documented defaults
                    for name in invalid:
                        bound_name = next(p.bound for p in entry.params if p.name == name)
                        call_args[name] = config.bounds[bound_name].default
            observation = _execute_tool(entry, call_args, state, config)
            state.log(event="tool_call", tool=request.tool, args=_safe_args(call_args), ok=True)
        except WatchdogTripped:
            raise
        except PrerequisiteUnmet as exc:
            state.log(event="tool_call", tool=request.tool, args=_safe_args(call_args), ok=False, error=str(exc))
            error = ClassifiedError(ErrorKind.EXEC, str(exc))
            if not config.rules_enabled:
                raise
            action = eh_select_recovery(error, RecoveryContext(attempts, config.n_max), config.recovery)
            state.log(event="rule", rule="EH2", strategy=action.strategy.value, attempts=attempts)
            if action.terminal:
                return StepResult("failed", error=error, detail="recovery budget exhausted")
            attempts += 1
            last_error = error
            context.append(f"Tool {request.tool} unavailable: {exc}")
            continue
        except VizGuardError as exc:
            state.log(event="tool_call", tool=request.tool, args=_safe_args(call_args), ok=False, error=str(exc))
            error = classify_exception(exc)
            if not config.rules_enabled:
                raise
            state.log(event="rule", rule="EH1", kind=error.kind.value, detail=error.detail)
            action = eh_select_recovery(error, RecoveryContext(attempts, config.n_max), config.recovery)
            state.log(event="rule", rule="EH2", strategy=action.strategy.value, attempts=attempts)
            if action.terminal:
                return StepResult("failed", error=error, detail="recovery budget exhausted")
            attempts += 1
            last_error = error
            context.append(f"Observation: tool error ({error.kind.value}): {error.detail}")
            continue

        attempts = 0
        history.append(f"{request.tool} -> {observation}")
        context.append(f"Observation: {observation}")


def _safe_args(args: dict) -> dict:
    out = {}
    for key, value in args.items():
        text = value if isinstance(value, (int, float, str, bool, type(None))) else repr(value)
        if isinstance(text, str) and len(text) > 500:
            text = text[:500] + "..."
        out[key] = text
    return out


def _bind_data(tree: dict, state: SystemState) -> dict:
    out = dict(tree)
    if state.data is not None:
        out["data"] = {"values": state.data.records()}
    return out


def _finalize_sql(state: SystemState, config: RunConfig):
    def finalize(payload: str):
        sql = _strip_code_fence(payload)
        if not sql.strip():
            return ClassifiedError(ErrorKind.PARSE, "empty SQL payload")
        result = dbtools.execute_sql(state.db, sql)
        if isinstance(result, dbtools.SqlError):
            kind = ErrorKind.TIMEOUT if result.kind == dbtools.SqlError.TIMEOUT else ErrorKind.EXEC
            return ClassifiedError(kind, f"SqlError({result.kind}): {result.message}")
        state.sql = sql
        state.data = result.to_data_table()
        return f"sql accepted; {len(result.rows)} rows"

    return finalize


def _finalize_spec(state: SystemState, config: RunConfig, *, modify: bool):
    def finalize(payload: str):
        try:
            standardized = te_standardize_payload(payload)
        except VizGuardError as exc:
            return classify_exception(exc)
        parsed = parse_spec(standardized)
        if isinstance(parsed, ParseFailure):
            return ClassifiedError(ErrorKind.PARSE, str(parsed))
        tree = _bind_data(parsed.root, state)
        if "data" not in tree and state.current_spec is not None and "data" in state.current_spec.root:
            tree["data"] = state.current_spec.root["data"]
        rebound = parse_spec(json.dumps(tree))
        if isinstance(rebound, ParseFailure):
            return ClassifiedError(ErrorKind.PARSE, str(rebound))
        spec = canonicalize(rebound)
        if state.current_spec is not None:
            state.spec_history.append(state.current_spec)
            state.log(event="spec_superseded", previous=state.current_spec.source_text)
        state.current_spec = spec
        state.generated = True
        if modify:
            state.modified = True
            state.feedback = ()
        state.last_evaluation = None
        state.directive = None
        return "spec accepted"

    return finalize


def dispatch_interface(tool: str, args: dict, state: SystemState, config: RunConfig, watchdog: Watchdog | None = None) -> StepResult:
    """Route an interface call to its owning agent and fold results into state."""
    if tool not in INTERFACES:
        raise UnknownInterfaceError(f"unknown interface {tool!r}")
    entry = TOOLS[tool]
    watchdog = watchdog or Watchdog(deadline=time.monotonic() + 300.0, max_ticks=100_000)
    prereqs = effective_prerequisites(config)

    if tool == "modify_chart_spec" and args.get("feedback"):
        # delivering feedback is part of the call; the prerequisite sees it
        state.feedback = tuple(args["feedback"])

    if config.rules_enabled:
        args, _ = _trace_rule_gate(state, entry, dict(args), config, prereqs)

    state.log(event="tool_call", tool=tool, args=_safe_args(args), ok=True, interface=True)

    if tool == "generate_sql":
        return agent_execute(AGENT_DQ, tool, args, state, config, watchdog, _finalize_sql(state, config))
    if tool == "generate_chart_spec":
        return agent_execute(AGENT_VIS, tool, args, state, config, watchdog, _finalize_spec(state, config, modify=False))
    if tool == "modify_chart_spec":
        return agent_execute(AGENT_VIS, tool, args, state, config, watchdog, _finalize_spec(state, config, modify=True))
    # evaluate_visualization: deterministic assessment, no inner model loop
    data = state.data
    if data is None and state.current_spec is not None:
        values = (state.current_spec.root.get("data") or {}).get("values")
        if isinstance(values, list) and values:
            data = DataTable.from_values(values)
    if data is None:
        data = DataTable(columns=(), rows=())
    vlm = config.vlm if config.perceptual_in_loop else None
    image = state.rendered_path or config.in_loop_image
    use_perceptual = vlm is not None and image is not None
    report = assess_candidate(
        state.current_spec,
        data,
        vlm=vlm if use_perceptual else None,
        image=image if use_perceptual else None,
        context=state.task.query,
        trace=state.trace,
    )
    state.last_evaluation = report
    state.directive = cr_decide_next(report)
    state.log(event="evaluation", report=report.to_record())
    state.log(event="rule", rule="CR3", directive=state.directive.kind.value, feedback=list(state.directive.feedback))
    return StepResult("ok", payload=report)


def coordinator_decide(state: SystemState, config: RunConfig) -> tuple[str, str, dict]:
    """Deterministic coordinator policy: data, spec, evaluation, modification.

    When an evaluation exists the choice follows its directive.
    """
    if config.only_generation:
        if state.task_type is TaskType.D and not state.modified:
            return (AGENT_VIS, "modify_chart_spec", {"feedback": [state.task.query]})
        if not state.generated:
            return (AGENT_VIS, "generate_chart_spec", {})
        raise NoViableAction("generation already performed")

    if state.directive is not None and not state.directive.is_terminal:
        if state.directive.kind is DirectiveKind.MODIFY_WITH_FEEDBACK:
            return (AGENT_VIS, "modify_chart_spec", {"feedback": list(state.directive.feedback)})
        if state.directive.kind is DirectiveKind.REGENERATE:
            return (AGENT_VIS, "generate_chart_spec", {})

    if config.db_agent_enabled and state.data is None and state.db is not None:
        return (AGENT_DQ, "generate_sql", {})
    if state.current_spec is None:
        return (AGENT_VIS, "generate_chart_spec", {})
    if state.task_type is TaskType.D and not state.modified:
        return (AGENT_VIS, "modify_chart_spec", {"feedback": [state.task.query]})
    if config.eval_enabled and state.last_evaluation is None:
        return (AGENT_VE, "evaluate_visualization", {})
    raise NoViableAction("no interface applicable to the current state")


def _is_task_complete(state: SystemState, config: RunConfig) -> bool:
    if state.directive is not None and state.directive.is_terminal:
        return True
    if config.only_generation or not config.eval_enabled:
        spec_ready = state.current_spec is not None and state.generated
        if state.task_type is TaskType.D:
            spec_ready = spec_ready and state.modified
        return spec_ready
    return False


def _init_state(task: TaskInput, config: RunConfig) -> SystemState:
    task_type = cr_classify_task(task)
    state = SystemState(task=task, task_type=task_type, renderer_available=bool(config.render_command))
    state.log(
        event="run_start",
        query=task.query,
        task_type=task_type.value,
        seed=config.seed,
        flags={
            "rules": config.rules_enabled,
            "db_agent": config.db_agent_enabled,
            "eval": config.eval_enabled,
            "only_generation": config.only_generation,
        },
    )

    if task.ref_image:
        state.references["image"] = te_process_reference("image", task.ref_image)
        state.log(event="rule", rule="TE3", kind="image", media=state.references["image"].media)
    if task.ref_code:
        state.references["code"] = te_process_reference("code", task.ref_code)
        state.log(event="rule", rule="TE3", kind="code", media=state.references["code"].media)

    if task.prior_spec is not None:
        state.current_spec = canonicalize(task.prior_spec)
        state.feedback = (task.query,)  # the refinement request itself
        values = (state.current_spec.root.get("data") or {}).get("values")
        if (
            config.refinement_reuses_embedded_data
            and isinstance(values, list)
            and values
        ):
            state.data = DataTable.from_values(values)

    needs_db = task.database is not None and (
        config.db_agent_enabled and not config.only_generation and state.data is None
    )
    if needs_db:
        state.db = dbtools.open_database(task.database)
    elif task.database is not None and (not config.db_agent_enabled or config.only_generation):
        handle = dbtools.open_database(task.database)
        try:
            state.schema_text = _schema_summary(handle)
        finally:
            handle.close()
    elif task.database is None and task_type is not TaskType.D:
        raise ToolError("a database path is required for this task type", code="IoError", category="IoError")
    return state


def run_task(task: TaskInput, config: RunConfig) -> TaskOutcome:
    """Run the main coordination loop for one task.

    At most ``t_max`` coordinator iterations; each iteration decides one
    interface call and executes it through the rule gates.  Always returns a
    structured TaskOutcome, never an uncontrolled abort.
    """
    try:
        state = _init_state(task, config)
    except VizGuardError as exc:
        error = classify_exception(exc)
        trace = [{"event": "run_start", "query": task.query}, {"event": "outcome", "status": TaskOutcome.FAILED, "error": error.detail}]
        outcome = TaskOutcome(TaskOutcome.FAILED, error=error, trace=tuple(trace))
        _write_trace(config.trace_path, trace)
        return outcome

    watchdog = Watchdog(deadline=time.monotonic() + config.watchdog_seconds, max_ticks=config.watchdog_ticks)
    status = TaskOutcome.ITERATION_LIMIT
    error: ClassifiedError | None = None

    try:
        while True:
            if _is_task_complete(state, config):
                if state.directive is not None and state.directive.kind is DirectiveKind.COMPLETE_WITH_NOTES:
                    status = TaskOutcome.COMPLETE_WITH_NOTES
                else:
                    status = TaskOutcome.COMPLETE
                break
            if config.rules_enabled:
                guard = IterationGuard(state.iteration, config.t_max, state.error_count, config.error_limit)
                if rc_should_terminate(guard, None):
                    if state.error_count >= config.error_limit:
                        status = TaskOutcome.FAILED
                        error = state.last_error or ClassifiedError(ErrorKind.EXEC, "error limit reached")
                    else:
                        status = TaskOutcome.ITERATION_LIMIT
                    state.log(event="rule", rule="RC1", iteration=state.iteration, terminated=True)
                    break
            watchdog.check()

            state.log(event="iteration", t=state.iteration, state=state.snapshot())
            try:
                agent, tool, args = coordinator_decide(state, config)
                state.log(event="decision", agent=agent, tool=tool, args=_safe_args(args))
                result = dispatch_interface(tool, args, state, config, watchdog)
            except WatchdogTripped:
                raise
            except VizGuardError as exc:
                if not config.rules_enabled:
                    # without the rule framework there is no recovery: the
                    # first uncontained error ends the run
                    raise
                result = StepResult("failed", error=classify_exception(exc), detail=str(exc))
                state.log(event="step_error", detail=str(exc))

            if result.status == "failed":
                state.error_count += 1
                state.last_error = result.error
                state.log(event="step_result", status=result.status, error=None if result.error is None else result.error.detail)
            else:
                state.error_count = 0
                state.log(event="step_result", status=result.status)
            state.iteration += 1
    except WatchdogTripped as exc:
        status = TaskOutcome.FAILED
        error = ClassifiedError(ErrorKind.TIMEOUT, f"watchdog: {exc}")
        state.log(event="watchdog", detail=str(exc))
    except Exception as exc:  # absolute backstop: no uncontrolled aborts
        status = TaskOutcome.FAILED
        error = classify_exception(exc)
        state.log(event="unexpected_error", detail=f"{type(exc).__name__}: {exc}")
    finally:
        if state.db is not None:
            state.db.close()

    unconsumed = getattr(config.provider, "unconsumed", None)
    if callable(unconsumed):
        leftovers = unconsumed()
        if leftovers:
            state.log(
                event="script_warning",
                unconsumed=[e.matcher for e in leftovers],
                detail="scripted exchanges never fired",
            )

    if status == TaskOutcome.FAILED and error is None:
        error = state.last_error
    if status in (TaskOutcome.COMPLETE, TaskOutcome.COMPLETE_WITH_NOTES) and state.current_spec is None:
        status = TaskOutcome.FAILED
        error = ClassifiedError(ErrorKind.EXEC, "completed without a spec")

    state.log(
        event="outcome",
        status=status,
        iterations=state.iteration,
        error=None if error is None else {"kind": error.kind.value, "detail": error.detail},
    )
    _write_trace(config.trace_path, state.trace)
    return TaskOutcome(
        status=status,
        error=error,
        final_spec=state.current_spec,
        evaluation=state.last_evaluation,
        iterations_used=state.iteration,
        trace=tuple(state.trace),
        trace_path=config.trace_path,
    )


def _write_trace(path: str | None, trace: list) -> None:
    if not path:
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as fh:
        for record in trace:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
