"""The four-layer rule framework constraining every coordinator and agent step.

Twelve deterministic, total functions in four layers:

* CR (coordination): task classification, tool prerequisite validation, and
  the evaluation-to-action decision table.
* TE (tool execution): parameter clamping, model-payload standardization, and
  reference-material processing.
* EH (error handling): parse-error classification, recovery-strategy
  selection, and image validation.
* RC (loop control): termination predicate, response-format validation, and
  text/vision model selection.

All functions are pure over immutable arguments and never raise on inputs
inside their documented precondition domain; failures are encoded in return
values.  The compiled-in parameter-bound and recovery tables can be overridden
from a JSON configuration file.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .chartspec import ChartSpec
from .errors import NoCompatibleModel, ToolError, UnknownToolError

# Iteration caps.  Both the coordinator loop and the inner agent loop stop at
# ten turns; recovery chains give up after three attempts; three consecutive
# invalid responses trip the error limit.
T_MAX = 10
MAX_STEPS = 10
N_MAX = 3
ERROR_LIMIT = 3
MAX_FEEDBACK_ITEMS = 3

DEFAULT_SAVE_TARGET = "chart.png"


# ---------------------------------------------------------------------------
# domain types


class TaskType(str, Enum):
    A = "A"  # query + database
    B = "B"  # + reference image
    C = "C"  # + reference code
    D = "D"  # + prior spec to refine


TASK_PRIORITY = {TaskType.A: 1, TaskType.B: 2, TaskType.C: 3, TaskType.D: 4}


@dataclass(frozen=True)
class TaskInput:
    """One run's inputs: the question, the database, optional references."""

    query: str
    database: str | None = None
    ref_image: str | None = None
    ref_code: str | None = None
    prior_spec: ChartSpec | None = None

    def __post_init__(self):
        if not self.query or not self.query.strip():
            raise ValueError("query must be non-empty")


class ParamKind(str, Enum):
    INTEGER = "integer"
    REAL = "real"
    ENUM = "enum"


class _Invalid:
    __slots__ = ()

    def __repr__(self) -> str:
        return "Invalid"

    def __bool__(self) -> bool:
        return False


INVALID = _Invalid()


@dataclass(frozen=True)
class ParamBound:
    name: str
    lower: float | None
    upper: float | None
    kind: ParamKind
    default: Any
    choices: tuple = ()

    def __post_init__(self):
        if self.kind is not ParamKind.ENUM and not (self.lower <= self.default <= self.upper):
            raise ValueError(f"default for {self.name!r} outside [{self.lower}, {self.upper}]")


BOUND_TABLE: dict[str, ParamBound] = {
    "row_limit": ParamBound("row_limit", 1, 1000, ParamKind.INTEGER, 50),
    "sql_timeout_seconds": ParamBound("sql_timeout_seconds", 1, 30, ParamKind.REAL, 10),
    "max_image_bytes": ParamBound("max_image_bytes", 1, 10 * 2**20, ParamKind.INTEGER, 10 * 2**20),
    "render_timeout_seconds": ParamBound("render_timeout_seconds", 1, 120, ParamKind.REAL, 30),
}


class ErrorKind(str, Enum):
    PARAM = "ParamError"
    EXEC = "ExecError"
    PARSE = "ParseError"
    TIMEOUT = "TimeoutError"
    IO = "IoError"
    MODEL = "ModelError"


@dataclass(frozen=True)
class ClassifiedError:
    kind: ErrorKind
    detail: str = ""


class RecoveryStrategy(str, Enum):
    RETRY_WITH_CLAMPED = "RetryWithClamped"
    REPROMPT_WITH_FORMAT_HINT = "RepromptWithFormatHint"
    REGENERATE_STEP = "RegenerateStep"
    GRACEFUL_FAIL = "GracefulFail"


@dataclass(frozen=True)
class RecoveryAction:
    strategy: RecoveryStrategy
    remaining_attempts: int
    note: str = ""

    @property
    def terminal(self) -> bool:
        return self.strategy is RecoveryStrategy.GRACEFUL_FAIL


@dataclass(frozen=True)
class RecoveryContext:
    attempts: int
    n_max: int = N_MAX


@dataclass(frozen=True)
class RecoveryRule:
    strategy: RecoveryStrategy
    fail_after: int  # attempts allowed before GracefulFail
    note: str = ""


RECOVERY_TABLE: dict[ErrorKind, RecoveryRule] = {
    ErrorKind.PARAM: RecoveryRule(RecoveryStrategy.RETRY_WITH_CLAMPED, N_MAX),
    ErrorKind.PARSE: RecoveryRule(RecoveryStrategy.REPROMPT_WITH_FORMAT_HINT, N_MAX),
    ErrorKind.EXEC: RecoveryRule(RecoveryStrategy.REGENERATE_STEP, N_MAX, "error text appended"),
    ErrorKind.TIMEOUT: RecoveryRule(RecoveryStrategy.RETRY_WITH_CLAMPED, 1, "reduced bounds"),
    ErrorKind.IO: RecoveryRule(RecoveryStrategy.REGENERATE_STEP, 1),
    ErrorKind.MODEL: RecoveryRule(RecoveryStrategy.REGENERATE_STEP, 1),
}


class DirectiveKind(str, Enum):
    COMPLETE = "Complete"
    COMPLETE_WITH_NOTES = "CompleteWithNotes"
    MODIFY_WITH_FEEDBACK = "ModifyWithFeedback"
    REGENERATE = "Regenerate"


@dataclass(frozen=True)
class CoordinatorDirective:
    kind: DirectiveKind
    feedback: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind is DirectiveKind.MODIFY_WITH_FEEDBACK and not (
            1 <= len(self.feedback) <= MAX_FEEDBACK_ITEMS
        ):
            raise ValueError("ModifyWithFeedback carries between 1 and 3 recommendations")

    @property
    def is_terminal(self) -> bool:
        return self.kind in (DirectiveKind.COMPLETE, DirectiveKind.COMPLETE_WITH_NOTES)


@dataclass(frozen=True)
class IterationGuard:
    iteration: int
    t_max: int = T_MAX
    error_count: int = 0
    error_limit: int = ERROR_LIMIT


@dataclass(frozen=True)
class ProcessedReference:
    kind: str  # "image" | "code"
    payload: bytes | str
    media: str  # media type for images, dialect tag for code


class ModelClass(str, Enum):
    TEXT = "TextModel"
    VISION = "VisionModel"


@dataclass(frozen=True)
class ModelKind:
    clazz: ModelClass
    model_id: str


@dataclass(frozen=True)
class ModelSpec:
    """A configured model: id plus capability flags, in configuration order."""

    model_id: str
    capabilities: frozenset[str] = frozenset({"text"})

    @classmethod
    def of(cls, model_id: str, *capabilities: str) -> "ModelSpec":
        return cls(model_id, frozenset(capabilities or ("text",)))


# ---------------------------------------------------------------------------
# CR rules: coordination


def cr_classify_task(task: TaskInput) -> TaskType:
    """Classify by the highest-priority trigger present
    (prior spec > reference code > reference image > plain query)."""
    candidates = [TaskType.A]
    if task.ref_image:
        candidates.append(TaskType.B)
    if task.ref_code:
        candidates.append(TaskType.C)
    if task.prior_spec is not None:
        candidates.append(TaskType.D)
    return max(candidates, key=TASK_PRIORITY.__getitem__)


def cr_validate_prereq(
    tool: str,
    state: Any,
    prerequisites: Mapping[str, frozenset[str]] | None = None,
) -> tuple[bool, tuple[str, ...]]:
    """A tool may run only when its prerequisite attributes are all
    defined in the system state.  Returns (ok, missing attributes)."""
    if prerequisites is None:
        from .registry import prerequisite_table

        prerequisites = prerequisite_table()
    if tool not in prerequisites:
        raise UnknownToolError(f"tool {tool!r} is not registered")
    if isinstance(state, (set, frozenset)):
        defined = frozenset(state)
    else:
        defined = frozenset(state.defined_attributes())
    missing = tuple(sorted(prerequisites[tool] - defined))
    return (not missing, missing)


def cr_decide_next(evaluation: Any) -> CoordinatorDirective:
    """Deterministic table from (passed, |recommendations|) to the
    next system action."""
    passed = bool(evaluation.passed)
    recs = list(evaluation.recommendations)
    if passed and not recs:
        return CoordinatorDirective(DirectiveKind.COMPLETE)
    if passed:
        return CoordinatorDirective(DirectiveKind.COMPLETE_WITH_NOTES)
    if recs:
        top = tuple(getattr(r, "text", str(r)) for r in recs[:MAX_FEEDBACK_ITEMS])
        return CoordinatorDirective(DirectiveKind.MODIFY_WITH_FEEDBACK, top)
    return CoordinatorDirective(DirectiveKind.REGENERATE)


# ---------------------------------------------------------------------------
# TE rules: tool execution


def te_clamp_param(bound: ParamBound, value: Any) -> Any:
    """Clamp a raw value into its safety bounds, or Invalid when the
    value lies outside the parameter's validity domain.

    Idempotent on its own output.  Booleans never pass as numbers; numeric
    strings are coerced before clamping.
    """
    if bound.kind is ParamKind.ENUM:
        return value if value in bound.choices else INVALID

    if isinstance(value, bool):
        return INVALID
    number: float | int
    if isinstance(value, (int, float)):
        number = value
    elif isinstance(value, str):
        try:
            number = int(value, 10)
        except ValueError:
            try:
                number = float(value)
            except ValueError:
                return INVALID
    else:
        return INVALID
    if isinstance(number, float) and math.isnan(number):
        return INVALID

    if bound.kind is ParamKind.INTEGER:
        if isinstance(number, float):
            if not number.is_integer():
                return INVALID
            number = int(number)
        return max(min(number, int(bound.upper)), int(bound.lower))
    return float(max(min(number, bound.upper), bound.lower))


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n(.*?)\n?```", re.DOTALL)


def _balanced_json_objects(text: str):
    """Yield every top-level balanced {...} substring, left to right."""
    depth = 0
    start = -1
    in_string = False
    escape = False
    for i, ch in enumerate(text):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    yield text[start : i + 1]


def _extract_document(text: str) -> dict | None:
    candidates = list(_FENCE_RE.findall(text)) + [text]
    for candidate in candidates:
        for blob in _balanced_json_objects(candidate):
            try:
                doc = json.loads(blob)
            except json.JSONDecodeError:
                continue
            if isinstance(doc, dict):
                return doc
    return None


def te_standardize_payload(text: str) -> str:
    """Standardize a model's spec payload.

    Strips code fences and surrounding prose, extracts exactly one chart
    document, injects the output-save directive when absent, and serializes in
    canonical key order.  Idempotent: a standardized payload passes through
    byte-identical.
    """
    doc = _extract_document(text)
    if doc is None:
        raise ToolError("no chart document found in payload", code="NoSpecFound", category="ParseError")
    usermeta = doc.get("usermeta")
    if not isinstance(usermeta, dict):
        usermeta = {}
        doc["usermeta"] = usermeta
    usermeta.setdefault("save", DEFAULT_SAVE_TARGET)
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_JPEG_MAGIC = b"\xff\xd8\xff"

_DIALECT_MARKERS = (
    ("altair", ("import altair", "alt.Chart", "alt.")),
    ("matplotlib", ("import matplotlib", "plt.", "pyplot")),
)


def detect_code_dialect(code: str) -> str:
    for dialect, markers in _DIALECT_MARKERS:
        if any(m in code for m in markers):
            return dialect
    return "unknown"


def te_process_reference(kind: str, path: str) -> ProcessedReference:
    """Dispatch on reference kind, verify the file is usable, and
    package it for model consumption (validated bytes for images, tagged text
    for code)."""
    if kind not in ("image", "code"):
        raise ToolError(f"unsupported reference kind {kind!r}", code="UnsupportedKind", category="ParamError")
    p = Path(path)
    if not p.is_file():
        raise ToolError(f"reference file unavailable: {path}", code="FileUnavailable", category="IoError")
    if kind == "code":
        return ProcessedReference("code", p.read_text(encoding="utf-8"), detect_code_dialect(p.read_text(encoding="utf-8")))
    if not eh_validate_image(path):
        raise ToolError(f"not a decodable PNG/JPEG image: {path}", code="InvalidImage", category="IoError")
    payload = p.read_bytes()
    limit = BOUND_TABLE["max_image_bytes"]
    if len(payload) > limit.upper:
        raise ToolError(
            f"image exceeds {int(limit.upper)} bytes", code="InvalidImage", category="IoError"
        )
    media = "image/png" if payload.startswith(_PNG_MAGIC) else "image/jpeg"
    return ProcessedReference("image", payload, media)


# ---------------------------------------------------------------------------
# response wire format, shared by EH/RC rules and the gateway

_ACTION_BLOCK_RE = re.compile(r"```action\s*\n(.*?)\n```", re.DOTALL)
_FINAL_RE = re.compile(r"^FINAL:[ \t]*(.*)$", re.MULTILINE)
_THOUGHT_RE = re.compile(r"^Thought:", re.MULTILINE)


@dataclass(frozen=True)
class AnalyzedResponse:
    """Shared analysis of one model response against the wire grammar."""

    kind: str  # "action" | "final" | "invalid"
    thought: bool = False
    tool: str | None = None
    args: Mapping[str, Any] | None = None
    payload: str = ""
    structure_errors: tuple[str, ...] = ()
    content_errors: tuple[str, ...] = ()
    error: ClassifiedError | None = None

    @property
    def is_final(self) -> bool:
        return self.kind == "final"


def analyze_response(
    text: str,
    known_tools: Iterable[str] | None = None,
    required_args: Mapping[str, Sequence[str]] | None = None,
) -> AnalyzedResponse:
    """Total analysis of arbitrary response text: syntax (fences and JSON),
    structure (one thought, exactly one action or final block), and content
    (registered tool, required arguments)."""
    if known_tools is None or required_args is None:
        from .registry import required_argument_table, tool_ids

        known_tools = tool_ids() if known_tools is None else known_tools
        required_args = required_argument_table() if required_args is None else required_args
    known = set(known_tools)

    if not isinstance(text, str):
        text = str(text)
    thought = bool(_THOUGHT_RE.search(text))
    blocks = _ACTION_BLOCK_RE.findall(text)
    final_match = _FINAL_RE.search(text)
    structure: list[str] = []
    content: list[str] = []

    if not thought:
        structure.append("NoThought")

    if final_match and not blocks:
        inline = final_match.group(1)
        payload = (inline + "\n" + text[final_match.end() :]).strip() if inline else text[final_match.end() :].strip()
        if structure:
            return AnalyzedResponse(
                "invalid",
                thought,
                payload=payload,
                structure_errors=tuple(structure),
                error=ClassifiedError(ErrorKind.PARSE, "Syntax: " + ",".join(structure)),
            )
        return AnalyzedResponse("final", thought, payload=payload)

    if len(blocks) != 1 or final_match:
        if blocks and final_match:
            detail = "both final marker and action block"
            structure.append("AmbiguousFinalAndAction")
        elif len(blocks) > 1:
            detail = "multiple action blocks"
            structure.append("MultipleActions")
        elif "```action" in text:
            detail = "unbalanced action fence"
            structure.append("NoActionOrFinal")
        else:
            detail = "no action or final block"
            structure.append("NoActionOrFinal")
        return AnalyzedResponse(
            "invalid",
            thought,
            structure_errors=tuple(structure),
            error=ClassifiedError(ErrorKind.PARSE, f"Syntax: {detail}"),
        )

    try:
        call = json.loads(blocks[0])
    except json.JSONDecodeError as exc:
        structure.append("BadActionJson")
        return AnalyzedResponse(
            "invalid",
            thought,
            structure_errors=tuple(structure),
            error=ClassifiedError(ErrorKind.PARSE, f"Syntax: invalid action JSON ({exc.msg})"),
        )
    if not isinstance(call, dict) or not isinstance(call.get("tool"), str) or not call.get("tool"):
        structure.append("BadActionShape")
        return AnalyzedResponse(
            "invalid",
            thought,
            structure_errors=tuple(structure),
            error=ClassifiedError(ErrorKind.PARSE, "Syntax: action must name a tool"),
        )
    tool = call["tool"]
    args = call.get("args", {})
    if not isinstance(args, dict):
        structure.append("BadActionShape")
        return AnalyzedResponse(
            "invalid",
            thought,
            tool=tool,
            structure_errors=tuple(structure),
            error=ClassifiedError(ErrorKind.PARSE, "Syntax: args must be an object"),
        )
    if tool not in known:
        content.append("UnknownTool")
        return AnalyzedResponse(
            "invalid",
            thought,
            tool=tool,
            args=args,
            structure_errors=tuple(structure),
            content_errors=tuple(content),
            error=ClassifiedError(ErrorKind.PARSE, f"UnknownTool: {tool}"),
        )
    missing = [a for a in required_args.get(tool, ()) if a not in args]
    if missing:
        content.append("MissingArg")
    if structure or content:
        detail = "MissingArg: " + ",".join(missing) if missing else "Syntax: " + ",".join(structure)
        return AnalyzedResponse(
            "invalid",
            thought,
            tool=tool,
            args=args,
            structure_errors=tuple(structure),
            content_errors=tuple(content),
            error=ClassifiedError(ErrorKind.PARSE, detail),
        )
    return AnalyzedResponse("action", thought, tool=tool, args=args)


# ---------------------------------------------------------------------------
# EH rules: error handling


def eh_classify_parse(
    text: str,
    known_tools: Iterable[str] | None = None,
) -> ClassifiedError | None:
    """Classify a model response's parse health.  Returns None for
    a valid action or final response, else the ParseError subcategory."""
    analyzed = analyze_response(text, known_tools=known_tools)
    return analyzed.error


def eh_select_recovery(
    error: ClassifiedError | ErrorKind,
    ctx: RecoveryContext,
    table: Mapping[ErrorKind, RecoveryRule] | None = None,
) -> RecoveryAction:
    """Select the recovery strategy for an error, falling to
    GracefulFail once the attempt budget for its kind is spent."""
    kind = error.kind if isinstance(error, ClassifiedError) else ErrorKind(error)
    rule = (table or RECOVERY_TABLE)[kind]
    budget = min(rule.fail_after, ctx.n_max)
    if ctx.attempts >= budget:
        return RecoveryAction(RecoveryStrategy.GRACEFUL_FAIL, 0, "attempt budget exhausted")
    return RecoveryAction(rule.strategy, budget - ctx.attempts - 1, rule.note)


def eh_validate_image(path: str) -> bool:
    """True iff the file exists, starts with PNG/JPEG magic bytes,
    and actually decodes."""
    p = Path(path)
    try:
        if not p.is_file():
            return False
        head = p.open("rb").read(8)
        if not (head.startswith(_PNG_MAGIC) or head.startswith(_JPEG_MAGIC)):
            return False
        from PIL import Image

        with Image.open(p) as img:
            img.verify()
        return True
    except Exception:
        return False


# ---------------------------------------------------------------------------
# RC rules: loop control


def rc_should_terminate(guard: IterationGuard, response: Any) -> bool:
    """Stop when the iteration cap is reached, the response is
    final, or the error limit is exceeded."""
    final = response is True or bool(getattr(response, "is_final", False))
    return (
        guard.iteration >= guard.t_max
        or final
        or guard.error_count >= guard.error_limit
    )


def rc_validate_response(
    text: str,
    known_tools: Iterable[str] | None = None,
) -> tuple[bool, tuple[str, ...]]:
    """Structural check (one thought plus exactly one action or
    final block) and content check (registered tool, required arguments)."""
    analyzed = analyze_response(text, known_tools=known_tools)
    diagnostics = tuple(
        [f"StructureError:{c}" for c in analyzed.structure_errors]
        + [f"ContentError:{c}" for c in analyzed.content_errors]
    )
    return (analyzed.kind != "invalid" and not diagnostics, diagnostics)


def rc_select_model(
    content: Sequence[Any],
    attachments: Sequence[Any] = (),
    models: Sequence[ModelSpec] = (),
) -> ModelKind:
    """Pick the first vision-capable model when any request part is
    an image, else the first text-capable model (configuration order breaks
    ties)."""

    def _is_image(item: Any) -> bool:
        if isinstance(item, (bytes, bytearray)):
            return True
        return getattr(item, "kind", None) == "image"

    needs_vision = any(_is_image(p) for p in list(content) + list(attachments))
    wanted = "vision" if needs_vision else "text"
    for spec in models:
        if wanted in spec.capabilities:
            return ModelKind(ModelClass.VISION if needs_vision else ModelClass.TEXT, spec.model_id)
    raise NoCompatibleModel(f"no configured model supports {wanted!r} requests")


# ---------------------------------------------------------------------------
# configuration loading


def load_bound_table(path: str) -> dict[str, ParamBound]:
    """Load parameter bounds from a JSON file, overlaying the defaults."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    table = dict(BOUND_TABLE)
    for name, row in raw.items():
        table[name] = ParamBound(
            name=name,
            lower=row.get("lower"),
            upper=row.get("upper"),
            kind=ParamKind(row.get("kind", "integer")),
            default=row["default"],
            choices=tuple(row.get("choices", ())),
        )
    return table


def load_recovery_table(path: str) -> dict[ErrorKind, RecoveryRule]:
    """Load the recovery decision table from a JSON file, overlaying defaults."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    table = dict(RECOVERY_TABLE)
    for kind_name, row in raw.items():
        kind = ErrorKind(kind_name)
        table[kind] = RecoveryRule(
            strategy=RecoveryStrategy(row["strategy"]),
            fail_after=int(row.get("fail_after", N_MAX)),
            note=row.get("note", ""),
        )
    return table


def classify_exception(exc: BaseException) -> ClassifiedError:
    """Total mapping from any raised exception to an ErrorKind."""
    category = getattr(exc, "category", None)
    if category in set(k.value for k in ErrorKind):
        return ClassifiedError(ErrorKind(category), str(exc))
    if isinstance(exc, TimeoutError):
        return ClassifiedError(ErrorKind.TIMEOUT, str(exc))
    if isinstance(exc, (OSError, IOError)):
        return ClassifiedError(ErrorKind.IO, str(exc))
    if isinstance(exc, (ValueError, TypeError, KeyError, json.JSONDecodeError)):
        return ClassifiedError(ErrorKind.PARSE, str(exc))
    return ClassifiedError(ErrorKind.EXEC, f"{type(exc).__name__}: {exc}")
