"""Declarative chart-grammar documents: parsing, validation, canonical form.

A chart document is a JSON attribute-value tree in the Vega-Lite dialect.  A
document is either a single-mark spec (a top-level ``mark``) or a layered spec
(a top-level ``layer`` list whose entries each carry a mark).  Encodings map
visual channels from a closed channel set to data fields or literal values.

The canonical form is what golden tests compare byte-for-byte: keys sorted
lexicographically, marks in object form, encoding shorthands ("sum(sales):Q")
expanded, two-space indentation, trailing newline.  ``canonicalize`` is
idempotent and ``extract_features`` is a pure function of the canonical form.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Iterator

CHANNELS = frozenset(
    {
        "x",
        "y",
        "x2",
        "y2",
        "color",
        "size",
        "shape",
        "opacity",
        "tooltip",
        "order",
        "detail",
        "row",
        "column",
        "theta",
    }
)

MARK_TYPES = frozenset(
    {
        "arc",
        "area",
        "bar",
        "circle",
        "line",
        "point",
        "rect",
        "rule",
        "square",
        "text",
        "tick",
    }
)

TYPE_CODES = {"Q": "quantitative", "N": "nominal", "O": "ordinal", "T": "temporal"}
COLUMN_TYPES = ("quantitative", "nominal", "ordinal", "temporal")

# aggregate ops that only make sense over numeric columns
_NUMERIC_AGGREGATES = {"sum", "mean", "average", "median", "stdev", "variance"}

_SHORTHAND_RE = re.compile(r"^(?:(?P<agg>\w+)\((?P<inner>[^)]*)\))?(?P<field>[^:()]*)?(?::(?P<code>[QNOT]))?$")
_DATUM_REF_RE = re.compile(r"datum\.(\w+)")


class ParseKind:
    SYNTAX = "Syntax"
    UNKNOWN_MARK = "UnknownMark"
    EMPTY = "Empty"


@dataclass(frozen=True)
class ParseFailure:
    kind: str
    offset: int
    reason: str

    def __str__(self) -> str:
        return f"ParseFailure({self.kind} at byte {self.offset}: {self.reason})"


@dataclass(frozen=True)
class ChartSpec:
    """A parsed chart document.

    ``root`` is the full attribute-value tree; ``layers`` lists the per-layer
    sub-trees of a layered spec (empty for single-mark specs); ``source_text``
    preserves the exact document the spec was parsed from.
    """

    root: dict
    layers: tuple
    source_text: str

    @property
    def is_layered(self) -> bool:
        return bool(self.layers)

    def units(self) -> Iterator[dict]:
        """Yield every mark-bearing sub-tree (the root itself when unlayered)."""
        if self.layers:
            yield from self.layers
        else:
            yield self.root


@dataclass(frozen=True)
class Column:
    name: str
    ctype: str


@dataclass(frozen=True)
class DataTable:
    """A query result: typed columns plus row tuples of equal arity."""

    columns: tuple[Column, ...]
    rows: tuple[tuple, ...]

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row arity does not match column count")

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_type(self, name: str) -> str | None:
        for c in self.columns:
            if c.name == name:
                return c.ctype
        return None

    def records(self) -> list[dict]:
        names = self.column_names
        return [dict(zip(names, row)) for row in self.rows]

    @classmethod
    def from_rows(cls, names: list[str], rows: list[tuple], declared: dict[str, str] | None = None) -> "DataTable":
        declared = declared or {}
        cols = []
        for i, name in enumerate(names):
            ctype = declared.get(name) or infer_column_type(r[i] for r in rows)
            cols.append(Column(name, ctype))
        return cls(tuple(cols), tuple(tuple(r) for r in rows))

    @classmethod
    def from_values(cls, records: list[dict]) -> "DataTable":
        names: list[str] = []
        for rec in records:
            for key in rec:
                if key not in names:
                    names.append(key)
        rows = [tuple(rec.get(n) for n in names) for rec in records]
        return cls.from_rows(names, rows)


def _is_iso_date(value: str) -> bool:
    if not re.match(r"^\d{4}-\d{2}-\d{2}([T ]\d{2}:\d{2}(:\d{2})?)?$", value):
        return False
    try:
        datetime.fromisoformat(value)
        return True
    except ValueError:
        return False


def infer_column_type(values) -> str:
    """Deterministic type inference: numbers are quantitative, ISO dates are
    temporal, everything else (including booleans) is nominal."""
    seen = False
    numeric = True
    temporal = True
    for v in values:
        if v is None:
            continue
        seen = True
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            numeric = False
        if not (isinstance(v, str) and _is_iso_date(v)):
            temporal = False
        if not numeric and not temporal:
            return "nominal"
    if not seen:
        return "nominal"
    if numeric:
        return "quantitative"
    if temporal:
        return "temporal"
    return "nominal"


def expand_shorthand(entry: Any) -> Any:
    """Expand a string channel shorthand ("sum(sales):Q") to object form."""
    if not isinstance(entry, str):
        return entry
    m = _SHORTHAND_RE.match(entry.strip())
    if not m:
        return {"field": entry}
    out: dict[str, Any] = {}
    if m.group("agg"):
        out["aggregate"] = m.group("agg")
        if m.group("inner"):
            out["field"] = m.group("inner")
    elif m.group("field"):
        out["field"] = m.group("field")
    if m.group("code"):
        out["type"] = TYPE_CODES[m.group("code")]
    return out or {"field": entry}


def _offset_of(text: str, token: str) -> int:
    pos = text.find(f'"{token}"')
    return pos if pos >= 0 else 0


def _check_unit(unit: dict, text: str, *, require_mark: bool) -> ParseFailure | None:
    mark = unit.get("mark")
    if require_mark:
        if mark is None:
            return ParseFailure(ParseKind.SYNTAX, 0, "layer entry carries no mark")
        if "layer" in unit:
            return ParseFailure(ParseKind.SYNTAX, _offset_of(text, "layer"), "nested layers are not supported")
    if mark is not None:
        mark_type = mark if isinstance(mark, str) else mark.get("type") if isinstance(mark, dict) else None
        if not isinstance(mark_type, str) or mark_type not in MARK_TYPES:
            return ParseFailure(
                ParseKind.UNKNOWN_MARK,
                _offset_of(text, "mark"),
                f"unknown mark type: {mark_type!r}",
            )
    encoding = unit.get("encoding")
    if encoding is not None:
        if not isinstance(encoding, dict):
            return ParseFailure(ParseKind.SYNTAX, _offset_of(text, "encoding"), "encoding must be an object")
        for channel, entry in encoding.items():
            if channel not in CHANNELS:
                return ParseFailure(
                    ParseKind.SYNTAX,
                    _offset_of(text, channel),
                    f"unknown encoding channel: {channel!r}",
                )
            expanded = expand_shorthand(entry)
            if not isinstance(expanded, dict):
                return ParseFailure(
                    ParseKind.SYNTAX, _offset_of(text, channel), f"channel {channel!r} entry must be an object"
                )
            has_field = bool(expanded.get("field"))
            has_literal = "value" in expanded or "datum" in expanded
            has_count = expanded.get("aggregate") == "count"
            if not (has_field or has_literal or has_count):
                return ParseFailure(
                    ParseKind.SYNTAX,
                    _offset_of(text, channel),
                    f"channel {channel!r} names neither a field nor a literal value",
                )
    return None


def parse_spec(text: str) -> ChartSpec | ParseFailure:
    """Parse a chart-grammar document.

    Returns a ChartSpec satisfying the type invariants, or a ParseFailure with
    the byte offset and reason.  Unknown-but-well-formed keys are preserved;
    unknown mark types and unknown encoding channels are rejected.
    """
    if not text or not text.strip():
        return ParseFailure(ParseKind.EMPTY, 0, "empty document")
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        return ParseFailure(ParseKind.SYNTAX, exc.pos, exc.msg)
    if not isinstance(tree, dict):
        return ParseFailure(ParseKind.SYNTAX, 0, "document root must be an object")

    has_mark = "mark" in tree
    has_layer = "layer" in tree
    if has_mark == has_layer:
        return ParseFailure(
            ParseKind.SYNTAX, 0, "root must carry exactly one of: a mark, or a non-empty layer list"
        )
    if has_layer:
        layer = tree["layer"]
        if not isinstance(layer, list) or not layer:
            return ParseFailure(ParseKind.SYNTAX, _offset_of(text, "layer"), "layer must be a non-empty list")
        for entry in layer:
            if not isinstance(entry, dict):
                return ParseFailure(ParseKind.SYNTAX, _offset_of(text, "layer"), "layer entries must be objects")
            failure = _check_unit(entry, text, require_mark=True)
            if failure:
                return failure
        layers: tuple = tuple(layer)
    else:
        failure = _check_unit(tree, text, require_mark=True)
        if failure:
            return failure
        layers = ()
    return ChartSpec(root=tree, layers=layers, source_text=text)


def _canonical_tree(node: Any) -> Any:
    if isinstance(node, dict):
        return {k: _canonical_tree(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_canonical_tree(v) for v in node]
    return node


def _normalize_unit(unit: dict) -> dict:
    out = dict(unit)
    mark = out.get("mark")
    if isinstance(mark, str):
        out["mark"] = {"type": mark}
    encoding = out.get("encoding")
    if isinstance(encoding, dict):
        out["encoding"] = {ch: expand_shorthand(entry) for ch, entry in encoding.items()}
    return out


def serialize(spec: ChartSpec) -> str:
    return spec.source_text


def canonicalize(spec: ChartSpec) -> ChartSpec:
    """Produce the canonical form: object-form marks, expanded encoding
    shorthands, lexicographically sorted keys, normalized whitespace.

    Idempotent: canonicalize(canonicalize(s)) == canonicalize(s).
    """
    tree = _canonical_tree(spec.root)
    if "layer" in tree:
        tree["layer"] = [_normalize_unit(u) for u in tree["layer"]]
    else:
        tree = _normalize_unit(tree)
    text = json.dumps(tree, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    reparsed = parse_spec(text)
    if isinstance(reparsed, ParseFailure):  # pragma: no cover - canonicalization preserves validity
        raise ValueError(f"canonicalization produced an unparsable document: {reparsed}")
    return reparsed


def canonical_text(text_or_spec: str | ChartSpec) -> str | ParseFailure:
    """Canonical serialization of a document given as text or ChartSpec."""
    if isinstance(text_or_spec, ChartSpec):
        return canonicalize(text_or_spec).source_text
    parsed = parse_spec(text_or_spec)
    if isinstance(parsed, ParseFailure):
        return parsed
    return canonicalize(parsed).source_text


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    path: str
    severity: str = "error"


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    diagnostics: tuple[Diagnostic, ...]

    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]


def _derived_fields(unit: dict) -> set[str]:
    derived: set[str] = set()
    for t in unit.get("transform", []) or []:
        if not isinstance(t, dict):
            continue
        if "calculate" in t and t.get("as"):
            derived.add(str(t["as"]))
        for agg in t.get("aggregate", []) or []:
            if isinstance(agg, dict) and agg.get("as"):
                derived.add(str(agg["as"]))
        if "bin" in t and t.get("as"):
            derived.add(str(t["as"]))
    return derived


def validate_spec(spec: ChartSpec, data: DataTable) -> ValidationReport:
    """Check a spec against the data it will visualize.

    Emits an error diagnostic for every encoded field absent from the data
    columns and for channel/type incompatibility.  Total: always returns a
    report, never raises on adversarial trees.
    """
    diagnostics: list[Diagnostic] = []
    known = set(data.column_names)
    any_encoding = False

    canon = canonicalize(spec)
    for i, unit in enumerate(canon.units()):
        prefix = f"layer[{i}]." if canon.is_layered else ""
        visible = known | _derived_fields(unit) | _derived_fields(canon.root)
        encoding = unit.get("encoding") or {}
        if not isinstance(encoding, dict):
            continue
        for channel, entry in sorted(encoding.items()):
            if not isinstance(entry, dict):
                continue
            any_encoding = True
            path = f"{prefix}encoding.{channel}"
            fname = entry.get("field")
            if fname is None:
                continue
            if fname not in visible:
                diagnostics.append(
                    Diagnostic("MissingField", f"field {fname!r} not found in data columns", path)
                )
                continue
            ctype = data.column_type(fname)
            declared = entry.get("type")
            aggregate = entry.get("aggregate")
            if aggregate in _NUMERIC_AGGREGATES and ctype not in (None, "quantitative"):
                diagnostics.append(
                    Diagnostic(
                        "TypeMismatch",
                        f"aggregate {aggregate!r} over non-quantitative field {fname!r}",
                        path,
                    )
                )
            elif declared and ctype and not aggregate and not _types_compatible(declared, ctype):
                diagnostics.append(
                    Diagnostic(
                        "TypeMismatch",
                        f"channel declares {declared!r} but column {fname!r} is {ctype}",
                        path,
                    )
                )
        for j, t in enumerate(unit.get("transform", []) or []):
            if isinstance(t, dict) and isinstance(t.get("filter"), str):
                visible_here = visible | _derived_fields(unit)
                for ref in _DATUM_REF_RE.findall(t["filter"]):
                    if ref not in visible_here:
                        diagnostics.append(
                            Diagnostic(
                                "MissingField",
                                f"filter references unknown field {ref!r}",
                                f"{prefix}transform[{j}].filter",
                            )
                        )

    if not any_encoding:
        diagnostics.append(Diagnostic("NoEncodings", "spec has no encoding entries", "encoding"))

    valid = not any(d.severity == "error" for d in diagnostics)
    return ValidationReport(valid=valid, diagnostics=tuple(diagnostics))


def _types_compatible(declared: str, column: str) -> bool:
    if declared in ("nominal", "ordinal"):
        return True
    if declared == "quantitative":
        return column == "quantitative"
    if declared == "temporal":
        return column == "temporal"
    return True


@dataclass(frozen=True)
class MarkDescriptor:
    mark_type: str
    attrs: tuple[tuple[str, str], ...] = ()

    @classmethod
    def from_node(cls, mark: Any) -> "MarkDescriptor":
        if isinstance(mark, str):
            return cls(mark)
        attrs = tuple(
            sorted((k, json.dumps(v, sort_keys=True)) for k, v in mark.items() if k != "type")
        )
        return cls(mark.get("type", ""), attrs)


@dataclass(frozen=True)
class Encoding:
    field: str | None = None
    dtype: str | None = None
    aggregate: str | None = None
    literal: str | None = None


@dataclass(frozen=True)
class ChartConfig:
    title: str | None = None
    x_label: str | None = None
    y_label: str | None = None
    legend: bool = False


@dataclass(frozen=True)
class FeatureBundle:
    """Structural features used for spec-to-spec comparison.

    ``marks`` is the multiset of mark descriptors in layer order (length equals
    the layer count, or 1 for single-mark specs); ``encodings`` maps each used
    channel to its resolved definition; transforms and interactions are kept in
    document order.
    """

    marks: tuple[MarkDescriptor, ...]
    encodings: tuple[tuple[str, Encoding], ...]
    transforms: tuple[str, ...] = ()
    interactions: tuple[tuple[str, str], ...] = ()
    config: ChartConfig = field(default_factory=ChartConfig)

    def encoding_map(self) -> dict[str, Encoding]:
        return dict(self.encodings)


def _axis_label(entry: dict | None, fallback: str | None) -> str | None:
    if not isinstance(entry, dict):
        return fallback
    axis = entry.get("axis")
    if isinstance(axis, dict) and "title" in axis:
        title = axis["title"]
        return None if title is None else str(title)
    return entry.get("field", fallback)


def extract_features(spec: ChartSpec) -> FeatureBundle:
    """Extract the FeatureBundle of a spec (computed over its canonical form,
    so formatting and key order never influence the result)."""
    canon = canonicalize(spec)
    units = list(canon.units())

    marks = tuple(MarkDescriptor.from_node(u["mark"]) for u in units)

    merged: dict[str, Encoding] = {}
    interactions: list[tuple[str, str]] = []
    for unit in units:
        encoding = unit.get("encoding") or {}
        if not isinstance(encoding, dict):
            continue
        for channel, entry in encoding.items():
            if not isinstance(entry, dict):
                continue
            enc = Encoding(
                field=entry.get("field"),
                dtype=entry.get("type"),
                aggregate=entry.get("aggregate"),
                literal=None
                if "value" not in entry and "datum" not in entry
                else json.dumps(entry.get("value", entry.get("datum")), sort_keys=True),
            )
            if channel == "tooltip":
                interactions.append(("tooltip", enc.field or enc.literal or ""))
                continue
            current = merged.get(channel)
            if current is None or (current.field is None and enc.field is not None):
                merged[channel] = enc

    transforms: list[str] = []
    for unit in [canon.root] + (list(canon.layers) if canon.is_layered else []):
        for t in unit.get("transform", []) or []:
            transforms.append(json.dumps(t, sort_keys=True))

    for p in canon.root.get("params", []) or []:
        if isinstance(p, dict):
            interactions.append(("param", json.dumps(p.get("select", p.get("name", "")), sort_keys=True)))

    title = canon.root.get("title")
    if isinstance(title, dict):
        title = title.get("text")

    def _entry(unit_list: list[dict], channel: str) -> dict | None:
        for u in unit_list:
            enc = u.get("encoding") or {}
            if isinstance(enc, dict) and isinstance(enc.get(channel), dict):
                return enc[channel]
        return None

    x_entry = _entry(units, "x")
    y_entry = _entry(units, "y")
    legend = any(
        ch in merged and not _legend_disabled(_entry(units, ch)) for ch in ("color", "size", "shape")
    )
    config = ChartConfig(
        title=None if title is None else str(title),
        x_label=_axis_label(x_entry, None),
        y_label=_axis_label(y_entry, None),
        legend=legend,
    )
    return FeatureBundle(
        marks=marks,
        encodings=tuple(sorted(merged.items())),
        transforms=tuple(transforms),
        interactions=tuple(interactions),
        config=config,
    )


def _legend_disabled(entry: dict | None) -> bool:
    return isinstance(entry, dict) and entry.get("legend", "unset") is None
