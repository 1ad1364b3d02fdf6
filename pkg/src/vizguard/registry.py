"""Tool registry: every callable surface an agent may invoke.

Each entry names its owning agent, the system-state attributes that must be
defined before it may run (the prerequisite rule), and its parameter schema
with optional safety bounds (the clamp rule).  The registry is the single
source the response
validator, the prerequisite checker, and the dispatcher consult; no tool runs
outside it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .rules import BOUND_TABLE, INVALID, ParamBound, te_clamp_param

AGENT_DQ = "DQ"  # database and query agent
AGENT_VIS = "Vis"  # visualization implementation agent
AGENT_VE = "VE"  # validation and evaluation agent


@dataclass(frozen=True)
class ParamSpec:
    name: str
    required: bool = False
    bound: str | None = None  # key into the bound table


@dataclass(frozen=True)
class ToolRegistryEntry:
    tool_id: str
    agent: str
    prerequisites: frozenset[str]
    params: tuple[ParamSpec, ...] = ()
    interface: bool = False  # coordinator-level interface vs agent-internal tool

    def required_params(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params if p.required)


def _entry(tool_id, agent, prereqs, params=(), interface=False):
    return ToolRegistryEntry(tool_id, agent, frozenset(prereqs), tuple(params), interface)


TOOLS: dict[str, ToolRegistryEntry] = {
    e.tool_id: e
    for e in (
        # coordinator interfaces
        _entry("generate_sql", AGENT_DQ, {"db"}, interface=True),
        _entry("generate_chart_spec", AGENT_VIS, {"data", "query"}, interface=True),
        _entry("modify_chart_spec", AGENT_VIS, {"current_spec", "feedback"}, interface=True),
        _entry("evaluate_visualization", AGENT_VE, {"current_spec"}, interface=True),
        # database and query agent internals
        _entry("list_tables", AGENT_DQ, {"db"}),
        _entry(
            "get_table",
            AGENT_DQ,
            {"db"},
            params=(ParamSpec("name", required=True), ParamSpec("row_limit", bound="row_limit")),
        ),
        _entry("get_foreign_keys", AGENT_DQ, {"db"}),
        _entry("find_fields", AGENT_DQ, {"db"}, params=(ParamSpec("keyword", required=True),)),
        _entry(
            "execute_sql",
            AGENT_DQ,
            {"db"},
            params=(
                ParamSpec("sql", required=True),
                ParamSpec("row_limit", bound="row_limit"),
                ParamSpec("timeout_seconds", bound="sql_timeout_seconds"),
            ),
        ),
        # visualization implementation agent internals
        _entry("list_chart_templates", AGENT_VIS, set()),
        _entry("get_chart_template", AGENT_VIS, set(), params=(ParamSpec("name", required=True),)),
        _entry("validate_chart_spec", AGENT_VIS, {"data"}, params=(ParamSpec("spec", required=True),)),
        # validation and evaluation agent internals (renderer-backed tools need
        # the sandbox configured)
        _entry(
            "render_chart_spec",
            AGENT_VE,
            {"renderer", "current_spec"},
            params=(ParamSpec("timeout_seconds", bound="render_timeout_seconds"),),
        ),
        _entry(
            "execute_plot_snippet",
            AGENT_VE,
            {"renderer"},
            params=(
                ParamSpec("code", required=True),
                ParamSpec("timeout_seconds", bound="render_timeout_seconds"),
            ),
        ),
    )
}

INTERFACES = tuple(t for t, e in TOOLS.items() if e.interface)

_TOOL_IDS = frozenset(TOOLS)
_PREREQUISITES = {t: e.prerequisites for t, e in TOOLS.items()}
_REQUIRED_ARGS = {t: e.required_params() for t, e in TOOLS.items()}


def tool_ids() -> frozenset[str]:
    return _TOOL_IDS


def prerequisite_table() -> dict[str, frozenset[str]]:
    return _PREREQUISITES


def required_argument_table() -> dict[str, tuple[str, ...]]:
    return _REQUIRED_ARGS


def clamp_args(
    entry: ToolRegistryEntry,
    args: dict,
    bounds: dict[str, ParamBound] | None = None,
) -> tuple[dict, list[dict], list[str]]:
    """Run every bounded argument through the clamp rule and fill defaults.

    Returns (clamped args, clamp events for the trace, invalid param names).
    Unknown extra arguments pass through untouched; the prerequisite and
    response validators police those separately.
    """
    bounds = bounds or BOUND_TABLE
    out = dict(args)
    events: list[dict] = []
    invalid: list[str] = []
    for spec in entry.params:
        if spec.bound is None:
            continue
        bound = bounds[spec.bound]
        raw = out.get(spec.name, bound.default)
        clamped = te_clamp_param(bound, raw)
        if clamped is INVALID:
            invalid.append(spec.name)
            events.append({"param": spec.name, "raw": repr(raw), "value": None, "invalid": True})
        else:
            out[spec.name] = clamped
            events.append({"param": spec.name, "raw": repr(raw), "value": clamped, "invalid": False})
    return out, events, invalid
