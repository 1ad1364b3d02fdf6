"""Standalone reader for chart-grammar documents.

The sandbox consumes documents through their file format only, so this module
re-implements the minimal grammar subset it needs (marks, channel shorthands,
inline data) without depending on the producing system.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

MARK_TYPES = {
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

TYPE_CODES = {"Q": "quantitative", "N": "nominal", "O": "ordinal", "T": "temporal"}

_SHORTHAND_RE = re.compile(
    r"^(?:(?P<agg>\w+)\((?P<inner>[^)]*)\))?(?P<field>[^:()]*)?(?::(?P<code>[QNOT]))?$"
)


class GrammarError(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail


def expand(entry):
    """Channel shorthand ("sum(sales):Q") to object form."""
    if not isinstance(entry, str):
        return entry if isinstance(entry, dict) else {}
    m = _SHORTHAND_RE.match(entry.strip())
    if not m:
        return {"field": entry}
    out = {}
    if m.group("agg"):
        out["aggregate"] = m.group("agg")
        if m.group("inner"):
            out["field"] = m.group("inner")
    elif m.group("field"):
        out["field"] = m.group("field")
    if m.group("code"):
        out["type"] = TYPE_CODES[m.group("code")]
    return out or {"field": entry}


@dataclass
class ChartDoc:
    tree: dict

    @property
    def title(self):
        title = self.tree.get("title")
        if isinstance(title, dict):
            return title.get("text")
        return title

    def units(self) -> list[dict]:
        if "layer" in self.tree:
            return list(self.tree["layer"])
        return [self.tree]

    def records(self) -> list[dict]:
        data = self.tree.get("data") or {}
        values = data.get("values")
        if not isinstance(values, list) or not values:
            raise GrammarError("NoData", "document carries no inline data values")
        return values

    def size(self) -> tuple[int, int]:
        width = self.tree.get("width", 640)
        height = self.tree.get("height", 480)
        return int(width), int(height)


def load_text(text: str) -> ChartDoc:
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GrammarError("Syntax", exc.msg) from exc
    if not isinstance(tree, dict):
        raise GrammarError("Syntax", "document root must be an object")
    has_mark = "mark" in tree
    has_layer = "layer" in tree
    if has_mark == has_layer:
        raise GrammarError("Syntax", "document needs exactly one of mark or layer")
    units = tree["layer"] if has_layer else [tree]
    if not isinstance(units, list) or not units:
        raise GrammarError("Syntax", "layer must be a non-empty list")
    for unit in units:
        if not isinstance(unit, dict) or "mark" not in unit:
            raise GrammarError("Syntax", "every layer needs a mark")
        mark = unit["mark"]
        mark_type = mark if isinstance(mark, str) else mark.get("type") if isinstance(mark, dict) else None
        if mark_type not in MARK_TYPES:
            raise GrammarError("UnknownMark", f"unknown mark type {mark_type!r}")
    return ChartDoc(tree)


def load_path(path: str) -> ChartDoc:
    p = Path(path)
    if not p.is_file():
        raise GrammarError("Io", f"spec file not found: {path}")
    return load_text(p.read_text(encoding="utf-8"))
