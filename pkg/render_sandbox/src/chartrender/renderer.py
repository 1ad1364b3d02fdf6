"""Matplotlib rasterizer for the chart-grammar subset.

Single-mark and layered documents share one axes; each layer applies its own
filter transforms and draws its mark over the merged coordinate system.
Output is a PNG with metadata stripped, so identical documents produce
pixel-identical bytes under a pinned matplotlib.
"""

from __future__ import annotations

import re
from datetime import datetime

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib import transforms as mtransforms

from .grammar import ChartDoc, GrammarError, expand

DPI = 100

# fixed categorical palette; first-seen order keeps colors deterministic
PALETTE = (
    "#4c78a8",
    "#f58518",
    "#54a24b",
    "#e45756",
    "#72b7b2",
    "#eeca3b",
    "#b279a2",
    "#9d755d",
)

_FILTER_RE = re.compile(r"^\s*datum\.(\w+)\s*(>=|<=|>|<|==|!=)\s*(-?\d+(?:\.\d+)?)\s*$")
_CALC_RE = re.compile(r"^\s*datum\.(\w+)\s*([*+/-])\s*(-?\d+(?:\.\d+)?)\s*$")

_OPS = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def _apply_transforms(rows: list[dict], unit: dict) -> list[dict]:
    out = rows
    for t in unit.get("transform", []) or []:
        if not isinstance(t, dict):
            continue
        if isinstance(t.get("filter"), str):
            m = _FILTER_RE.match(t["filter"])
            if not m:
                continue
            field, op, number = m.group(1), m.group(2), float(m.group(3))
            out = [r for r in out if isinstance(r.get(field), (int, float)) and _OPS[op](r[field], number)]
        elif "calculate" in t and t.get("as"):
            m = _CALC_RE.match(str(t["calculate"]))
            if not m:
                continue
            field, op, number = m.group(1), m.group(2), float(m.group(3))
            fn = {"*": lambda a: a * number, "+": lambda a: a + number, "-": lambda a: a - number, "/": lambda a: a / number}[op]
            out = [
                {**r, t["as"]: fn(r[field])} if isinstance(r.get(field), (int, float)) else r
                for r in out
            ]
    return out


def _is_temporal(entry: dict, values: list) -> bool:
    if entry.get("type") == "temporal":
        return True
    return all(isinstance(v, str) and re.match(r"^\d{4}-\d{2}-\d{2}", v) for v in values if v is not None)


def _parse_time(value: str) -> datetime:
    return datetime.fromisoformat(value.replace(" ", "T"))


class _Categories:
    """Stable category -> slot/color assignment across layers."""

    def __init__(self):
        self.slots: dict[str, dict] = {}
        self.colors: dict[str, dict] = {}

    def slot(self, axis: str, value) -> int:
        table = self.slots.setdefault(axis, {})
        if value not in table:
            table[value] = len(table)
        return table[value]

    def color(self, channel_field: str, value) -> str:
        table = self.colors.setdefault(channel_field, {})
        if value not in table:
            table[value] = PALETTE[len(table) % len(PALETTE)]
        return table[value]


def _axis_label(entry: dict | None) -> str | None:
    if not isinstance(entry, dict):
        return None
    axis = entry.get("axis")
    if isinstance(axis, dict) and "title" in axis:
        return axis["title"]
    return entry.get("field")


def _label_angle(entry: dict | None) -> float | None:
    if isinstance(entry, dict) and isinstance(entry.get("axis"), dict):
        angle = entry["axis"].get("labelAngle")
        if isinstance(angle, (int, float)):
            return float(angle)
    return None


def _mark_of(unit: dict) -> dict:
    mark = unit["mark"]
    return {"type": mark} if isinstance(mark, str) else dict(mark)


def _encoding(unit: dict) -> dict:
    return {ch: expand(entry) for ch, entry in (unit.get("encoding") or {}).items()}


def _aggregate(rows: list[dict], value_entry: dict, group_fields: list[str]) -> list[dict]:
    op = value_entry.get("aggregate")
    field = value_entry.get("field")
    out_name = field or "count"
    groups: dict[tuple, list] = {}
    order: list[tuple] = []
    for row in rows:
        key = tuple(row.get(g) for g in group_fields)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row.get(field) if field else 1)
    result = []
    for key in order:
        values = [v for v in groups[key] if isinstance(v, (int, float))] or [0]
        if op == "count":
            agg = len(groups[key])
        elif op in ("mean", "average", "avg"):
            agg = sum(values) / len(values)
        else:  # sum and friends
            agg = sum(values)
        record = dict(zip(group_fields, key))
        record[out_name] = agg
        result.append(record)
    return result


def _positional(entry: dict, row: dict, cats: _Categories, axis: str, temporal: bool):
    if "datum" in entry:
        return entry["datum"]
    field = entry.get("field") or ("count" if entry.get("aggregate") == "count" else None)
    value = row.get(field)
    if temporal and isinstance(value, str):
        return _parse_time(value)
    if isinstance(value, (int, float)):
        return value
    return cats.slot(axis, value)


def _draw_unit(ax, unit: dict, rows: list[dict], cats: _Categories, legend: dict) -> None:
    mark = _mark_of(unit)
    mark_type = mark["type"]
    enc = _encoding(unit)
    rows = _apply_transforms(rows, unit)

    color_entry = enc.get("color", {})
    color_field = color_entry.get("field")
    literal_color = mark.get("color") or mark.get("fill") or color_entry.get("value")
    opacity = mark.get("opacity", enc.get("opacity", {}).get("value", 1.0))

    def resolve_color(row) -> str:
        if color_field:
            value = row.get(color_field)
            color = cats.color(color_field, value)
            legend.setdefault(str(value), color)
            return color
        return literal_color or PALETTE[0]

    x_entry, y_entry = enc.get("x", {}), enc.get("y", {})

    if mark_type == "arc":
        theta = enc.get("theta", {})
        field = theta.get("field")
        values = [r.get(field, 0) for r in rows]
        labels = [str(r.get(color_field, "")) for r in rows] if color_field else None
        colors = [resolve_color(r) for r in rows] if color_field else None
        ax.pie(values, labels=labels, colors=colors)
        ax.set_aspect("equal")
        return

    if mark_type == "rule":
        dash = mark.get("strokeDash")
        style = (0, tuple(dash)) if isinstance(dash, list) and dash else "-"
        color = literal_color or "black"
        if "datum" in y_entry:
            ax.axhline(y_entry["datum"], linestyle=style, color=color, linewidth=mark.get("strokeWidth", 1.2))
        if "datum" in x_entry:
            ax.axvline(x_entry["datum"], linestyle=style, color=color, linewidth=mark.get("strokeWidth", 1.2))
        return

    if mark_type == "text":
        y = y_entry.get("datum", 0)
        text = mark.get("text", "")
        kwargs = {
            "ha": mark.get("align", "left"),
            "va": mark.get("baseline", "bottom"),
            "fontsize": mark.get("fontSize", 9),
            "color": literal_color or "black",
        }
        if x_entry.get("value") == "width":
            transform = mtransforms.blended_transform_factory(ax.transAxes, ax.transData)
            ax.text(0.99, y, text, transform=transform, **kwargs)
        else:
            x = x_entry.get("datum", x_entry.get("value", 0))
            ax.text(x, y, text, **kwargs)
        return

    x_temporal = _is_temporal(x_entry, [r.get(x_entry.get("field")) for r in rows]) if x_entry.get("field") else False
    y_temporal = _is_temporal(y_entry, [r.get(y_entry.get("field")) for r in rows]) if y_entry.get("field") else False

    x_agg = "aggregate" in x_entry
    y_agg = "aggregate" in y_entry
    if x_agg or y_agg:
        value_entry = x_entry if x_agg else y_entry
        group_entry = y_entry if x_agg else x_entry
        group_fields = [f for f in (group_entry.get("field"), color_field) if f]
        rows = _aggregate(rows, value_entry, group_fields)
        out_name = value_entry.get("field") or "count"
        value_entry = dict(value_entry)
        value_entry.pop("aggregate", None)
        value_entry["field"] = out_name
        if x_agg:
            x_entry = value_entry
        else:
            y_entry = value_entry

    if mark_type == "bar":
        horizontal = x_entry.get("type") == "quantitative" and y_entry.get("field") and y_entry.get("type") != "quantitative"
        stacks: dict = {}
        for row in rows:
            if horizontal:
                pos = cats.slot("y", row.get(y_entry.get("field")))
                length = row.get(x_entry.get("field"), 0) or 0
            else:
                pos = _positional(x_entry, row, cats, "x", x_temporal)
                base = y_entry.get("datum", 0)
                top = row.get(y_entry.get("field"), 0) or 0
                y2 = enc.get("y2", {})
                if "datum" in y2:
                    base = y2["datum"]
                length = top - base if not isinstance(top, str) else 0
            offset = stacks.get(pos, 0)
            if horizontal:
                ax.barh(pos, length, left=offset, color=resolve_color(row), alpha=opacity, height=0.7)
                stacks[pos] = offset + length
            else:
                bottom = base if "y2" in enc or y_entry.get("datum") is not None else offset
                ax.bar(pos, length, bottom=bottom, color=resolve_color(row), alpha=opacity, width=0.7)
                if "y2" not in enc:
                    stacks[pos] = offset + length if color_field else 0
        if horizontal:
            table = cats.slots.get("y", {})
            ax.set_yticks(list(table.values()))
            ax.set_yticklabels([str(k) for k in table])
        elif cats.slots.get("x"):
            table = cats.slots["x"]
            ax.set_xticks(list(table.values()))
            ax.set_xticklabels([str(k) for k in table])
        return

    if mark_type in ("line", "area"):
        series: dict = {}
        for row in rows:
            key = row.get(color_field) if color_field else None
            series.setdefault(key, []).append(row)
        for key, bucket in series.items():
            points = sorted(
                (
                    (_positional(x_entry, r, cats, "x", x_temporal), _positional(y_entry, r, cats, "y", y_temporal))
                    for r in bucket
                ),
                key=lambda p: p[0],
            )
            xs = [p[0] for p in points]
            ys = [p[1] for p in points]
            color = cats.color(color_field, key) if color_field else (literal_color or PALETTE[0])
            if color_field:
                legend.setdefault(str(key), color)
            if mark_type == "line":
                ax.plot(xs, ys, color=color, alpha=opacity)
            else:
                ax.fill_between(xs, ys, color=color, alpha=min(opacity, 0.75))
        return

    if mark_type in ("point", "circle", "square", "tick", "rect"):
        marker = {"point": "o", "circle": "o", "square": "s", "tick": "|", "rect": "s"}[mark_type]
        size_entry = enc.get("size", {})
        for row in rows:
            x = _positional(x_entry, row, cats, "x", x_temporal)
            y = _positional(y_entry, row, cats, "y", y_temporal)
            size = 36.0
            if size_entry.get("field"):
                raw = row.get(size_entry["field"])
                size = 20.0 + 8.0 * float(raw if isinstance(raw, (int, float)) else 1)
            elif mark_type == "rect":
                size = 500.0
            color = resolve_color(row)
            if mark_type == "tick":
                ax.scatter([x], [y], s=size, marker=marker, alpha=opacity, color=color)
            else:
                filled = mark.get("filled", mark_type != "point")
                ax.scatter(
                    [x],
                    [y],
                    s=size,
                    marker=marker,
                    alpha=opacity,
                    facecolors=color if filled else "none",
                    edgecolors=color,
                )
        for axis in ("x", "y"):
            table = cats.slots.get(axis, {})
            if table:
                ticks = list(table.values())
                labels = [str(k) for k in table]
                if axis == "x":
                    ax.set_xticks(ticks)
                    ax.set_xticklabels(labels)
                else:
                    ax.set_yticks(ticks)
                    ax.set_yticklabels(labels)
        return

    raise GrammarError("UnknownMark", f"no drawing routine for mark {mark_type!r}")


def render(doc: ChartDoc, out_path: str) -> tuple[int, int]:
    """Rasterize a document to PNG; returns (width, height) in pixels."""
    width, height = doc.size()
    rows = doc.records()
    fig, ax = plt.subplots(figsize=(width / DPI, height / DPI), dpi=DPI)
    try:
        cats = _Categories()
        legend: dict = {}
        units = doc.units()
        for unit in units:
            _draw_unit(ax, unit, rows, cats, legend)

        first_enc = _encoding(units[0])
        x_label = _axis_label(first_enc.get("x"))
        y_label = _axis_label(first_enc.get("y"))
        if x_label:
            ax.set_xlabel(x_label)
        if y_label:
            ax.set_ylabel(y_label)
        angle = _label_angle(first_enc.get("x"))
        if angle is not None:
            plt.setp(ax.get_xticklabels(), rotation=angle)
        if doc.title:
            ax.set_title(doc.title)
        if legend:
            ax.legend(
                handles=[plt.Line2D([0], [0], marker="s", linestyle="", color=c, label=l) for l, c in legend.items()],
                fontsize=8,
                loc="best",
            )
        fig.autofmt_xdate(rotation=30) if any(
            _is_temporal(_encoding(u).get("x", {}), [r.get(_encoding(u).get("x", {}).get("field")) for r in rows])
            for u in units
            if _encoding(u).get("x", {}).get("field")
        ) else None
        fig.tight_layout()
        fig.savefig(out_path, dpi=DPI, metadata={"Software": None})
    finally:
        plt.close(fig)
    return width, height
