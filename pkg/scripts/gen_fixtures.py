#!/usr/bin/env python3
"""Regenerate the committed fixture corpus under fixtures/.

Creates the case databases, the golden mock scripts, the ground-truth specs
(with data values computed through the same query path the pipeline uses, so
byte-equality holds), reference materials, pre-rendered case images, and the
case manifest.  Deterministic: rerunning produces identical files.
"""

from __future__ import annotations

import json
import sqlite3
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from vizguard import dbtools
from vizguard.chartspec import canonicalize, parse_spec
from vizguard.rules import DEFAULT_SAVE_TARGET

FIX = ROOT / "fixtures"


# ---------------------------------------------------------------------------
# databases


def build_retail(path: Path) -> None:
    path.unlink(missing_ok=True)
    conn = sqlite3.connect(path)
    cur = conn.cursor()
    cur.executescript(
        """
        CREATE TABLE monthly_sales (month TEXT NOT NULL, amount INTEGER NOT NULL);
        CREATE TABLE products (
            product_id INTEGER PRIMARY KEY,
            name TEXT NOT NULL,
            category TEXT NOT NULL,
            price REAL NOT NULL,
            rating REAL NOT NULL
        );
        CREATE TABLE regional_sales (category TEXT NOT NULL, region TEXT NOT NULL, sales INTEGER NOT NULL);
        CREATE TABLE order_items (
            item_id INTEGER PRIMARY KEY,
            product_id INTEGER NOT NULL REFERENCES products(product_id),
            qty INTEGER NOT NULL
        );
        """
    )
    months = ["2024-01-01", "2024-02-01", "2024-03-01", "2024-04-01", "2024-05-01", "2024-06-01"]
    amounts = [(120, 95), (140, 150), (180, 90), (160, 210), (240, 170), (260, 230)]
    for month, (a, b) in zip(months, amounts):
        cur.execute("INSERT INTO monthly_sales VALUES (?, ?)", (month, a))
        cur.execute("INSERT INTO monthly_sales VALUES (?, ?)", (month, b))
    products = [
        (1, "Field Notebook", "Stationery", 12.5, 4.4),
        (2, "Gel Pen Set", "Stationery", 8.0, 4.1),
        (3, "Desk Organizer", "Stationery", 24.0, 3.8),
        (4, "Trail Bottle", "Outdoors", 18.5, 4.6),
        (5, "Camp Lantern", "Outdoors", 32.0, 4.2),
        (6, "Dry Bag", "Outdoors", 27.5, 3.9),
        (7, "USB Hub", "Electronics", 29.0, 3.7),
        (8, "Wireless Mouse", "Electronics", 35.5, 4.3),
        (9, "Key Light", "Electronics", 54.0, 4.8),
    ]
    cur.executemany("INSERT INTO products VALUES (?, ?, ?, ?, ?)", products)
    regional = [
        ("Electronics", "East", 410),
        ("Electronics", "North", 380),
        ("Electronics", "West", 295),
        ("Outdoors", "East", 205),
        ("Outdoors", "North", 340),
        ("Outdoors", "West", 260),
        ("Stationery", "East", 150),
        ("Stationery", "North", 120),
        ("Stationery", "West", 175),
    ]
    cur.executemany("INSERT INTO regional_sales VALUES (?, ?, ?)", regional)
    cur.executemany(
        "INSERT INTO order_items VALUES (?, ?, ?)", [(1, 1, 3), (2, 4, 1), (3, 8, 2), (4, 9, 1)]
    )
    conn.commit()
    conn.close()


def build_journals(path: Path) -> None:
    path.unlink(missing_ok=True)
    conn = sqlite3.connect(path)
    cur = conn.cursor()
    cur.executescript(
        """
        CREATE TABLE journals (journal_id INTEGER PRIMARY KEY, name TEXT NOT NULL, theme TEXT NOT NULL);
        CREATE TABLE journal_sales (
            sale_id INTEGER PRIMARY KEY,
            journal_id INTEGER NOT NULL REFERENCES journals(journal_id),
            sales INTEGER NOT NULL,
            sale_year INTEGER NOT NULL
        );
        CREATE TABLE editors (
            editor_id INTEGER PRIMARY KEY,
            name TEXT NOT NULL,
            journal_id INTEGER NOT NULL REFERENCES journals(journal_id)
        );
        """
    )
    journals = [
        (1, "Signals Quarterly", "Technology"),
        (2, "Circuit Review", "Technology"),
        (3, "Field Biology Letters", "Science"),
        (4, "Deep Sky Notes", "Science"),
        (5, "Archive Studies", "History"),
        (6, "Old Maps Digest", "History"),
        (7, "Gallery Walks", "Arts"),
        (8, "Roadside Review", "Travel"),
        (9, "Harbor Almanac", "Travel"),
        (10, "Stage Notes", "Arts"),
    ]
    cur.executemany("INSERT INTO journals VALUES (?, ?, ?)", journals)
    sales = [
        (1, 1, 1650, 2023),
        (2, 1, 180, 2024),
        (3, 2, 1290, 2024),
        (4, 3, 1400, 2023),
        (5, 4, 1050, 2024),
        (6, 5, 820, 2023),
        (7, 6, 760, 2024),
        (8, 7, 540, 2024),
        (9, 8, 990, 2023),
        (10, 9, 1020, 2024),
        (11, 10, 450, 2023),
    ]
    cur.executemany("INSERT INTO journal_sales VALUES (?, ?, ?, ?)", sales)
    cur.executemany(
        "INSERT INTO editors VALUES (?, ?, ?)",
        [(1, "R. Alvarez", 1), (2, "M. Chen", 3), (3, "T. Okafor", 7)],
    )
    conn.commit()
    conn.close()


# ---------------------------------------------------------------------------
# helpers


def query_values(db_path: Path, sql: str) -> list[dict]:
    handle = dbtools.open_database(str(db_path))
    try:
        result = dbtools.execute_sql(handle, sql)
        if isinstance(result, dbtools.SqlError):
            raise SystemExit(f"fixture query failed: {result}")
        return result.to_data_table().records()
    finally:
        handle.close()


def canonical_with_data(spec: dict, values: list[dict] | None, save: bool = True) -> str:
    doc = dict(spec)
    if values is not None:
        doc["data"] = {"values": values}
    if save:
        doc.setdefault("usermeta", {"save": DEFAULT_SAVE_TARGET})
    parsed = parse_spec(json.dumps(doc))
    if not hasattr(parsed, "root"):
        raise SystemExit(f"fixture spec does not parse: {parsed}")
    return canonicalize(parsed).source_text


def write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_script(path: Path, exchanges: list[dict]) -> None:
    write(path, "\n".join(json.dumps(e, ensure_ascii=False) for e in exchanges) + "\n")


def action(tool: str, args: dict) -> str:
    return "```action\n" + json.dumps({"tool": tool, "args": args}) + "\n```"


def final(payload: str) -> str:
    return "FINAL:\n" + payload


def spec_payload(spec: dict) -> str:
    return "```json\n" + json.dumps(spec, indent=2) + "\n```"


def vlm_exchange(scores: tuple[int, int, int, int, int, int]) -> list[dict]:
    keys = ("chart_type", "layout", "text_content", "data_fidelity", "style", "clarity")
    block = json.dumps(dict(zip(keys, scores)))
    return [{"match": "grading a rendered chart", "response": "Here is my assessment.\n" + block}]


def render_case_image(path: Path, kind: str, values: list[dict], x: str, y: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    xs = [str(v[x]) for v in values]
    ys = [v[y] for v in values]
    fig, ax = plt.subplots(figsize=(3.2, 2.2))
    if kind == "bar":
        ax.bar(xs, ys, color="steelblue")
    elif kind == "line":
        ax.plot(range(len(xs)), ys, marker="o")
        ax.set_xticks(range(len(xs)))
        ax.set_xticklabels(xs, fontsize=5)
    elif kind == "scatter":
        ax.scatter(range(len(xs)), ys, alpha=0.6)
    else:
        ax.fill_between(range(len(xs)), ys, alpha=0.5)
    ax.tick_params(labelsize=5)
    ax.set_xlabel(x, fontsize=6)
    ax.set_ylabel(y, fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=72, metadata={"Software": None})
    plt.close(fig)


def render_reference_images() -> None:
    # threshold-style reference: blue bars, dashed line
    fig, ax = plt.subplots(figsize=(3.2, 2.2))
    days = ["Mon", "Tue", "Wed", "Thu", "Fri"]
    vals = [12, 31, 24, 40, 18]
    colors = ["steelblue" if v <= 25 else "#e45755" for v in vals]
    ax.bar(days, vals, color=colors)
    ax.axhline(25, linestyle="--", color="black", linewidth=1)
    ax.text(4.4, 25.5, "hazard", fontsize=6, ha="right")
    ax.tick_params(labelsize=6)
    fig.tight_layout()
    fig.savefig(FIX / "images" / "ref_threshold.png", dpi=72, metadata={"Software": None})
    plt.close(fig)

    # stacked horizontal bar reference
    fig, ax = plt.subplots(figsize=(3.2, 2.2))
    cats = ["Alpha", "Beta", "Gamma"]
    left = [0, 0, 0]
    for region, vals in (("north", [5, 9, 4]), ("east", [7, 3, 6]), ("west", [4, 6, 8])):
        ax.barh(cats, vals, left=left, label=region)
        left = [l + v for l, v in zip(left, vals)]
    ax.legend(fontsize=5)
    ax.tick_params(labelsize=6)
    fig.tight_layout()
    fig.savefig(FIX / "images" / "ref_stacked.png", dpi=72, metadata={"Software": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# case definitions


def main() -> None:
    (FIX / "db").mkdir(parents=True, exist_ok=True)
    (FIX / "images").mkdir(parents=True, exist_ok=True)
    build_retail(FIX / "db" / "retail.sqlite")
    build_journals(FIX / "db" / "journals.sqlite")
    render_reference_images()

    write(
        FIX / "refs" / "scatter_reference.py",
        "import matplotlib.pyplot as plt\n\n\n"
        "def draw(x, y, colors):\n"
        "    plt.scatter(x, y, c=colors, alpha=0.6)\n"
        "    plt.xlabel(\"x\")\n"
        "    plt.ylabel(\"y\")\n"
        "    plt.show()\n",
    )
    write(
        FIX / "refs" / "area_reference.py",
        "import altair as alt\n\n\n"
        "def build(data):\n"
        "    return alt.Chart(data).mark_area().encode(x=\"month:T\", y=\"total:Q\")\n",
    )

    retail = FIX / "db" / "retail.sqlite"
    journals = FIX / "db" / "journals.sqlite"
    manifest: list[dict] = []

    def add_case(
        case_id: str,
        scenario: str,
        nlq: str,
        *,
        db: Path | None,
        sql: str | None,
        spec: dict,
        script: list[dict],
        vlm_scores: tuple[int, int, int, int, int, int],
        image_kind: str,
        image_fields: tuple[str, str],
        ref_image: str | None = None,
        ref_code: str | None = None,
        initial: dict | None = None,
        initial_values: list[dict] | None = None,
    ) -> None:
        values = query_values(db, sql) if sql else list(initial_values or [])
        gt_text = canonical_with_data(spec, values)
        write(FIX / "specs" / f"{case_id}_gt.json", gt_text)
        write_script(FIX / "scripts" / f"{case_id}.jsonl", script)
        write_script(FIX / "scripts" / f"{case_id}_vlm.jsonl", vlm_exchange(vlm_scores))
        render_case_image(FIX / "images" / f"{case_id}.png", image_kind, values, *image_fields)
        row: dict = {
            "id": case_id,
            "scenario": scenario,
            "nlq": nlq,
            "ground_truth_spec": f"specs/{case_id}_gt.json",
            "rendered_image": f"images/{case_id}.png",
            "script": f"scripts/{case_id}.jsonl",
            "vlm_script": f"scripts/{case_id}_vlm.jsonl",
            "expect": {"status": "Complete"},
        }
        if db is not None:
            row["db"] = f"db/{db.name}"
        if sql:
            row["expected_result"] = {"sql": sql, "row_count": len(values)}
        if ref_image:
            row["ref_image"] = ref_image
        if ref_code:
            row["ref_code"] = ref_code
        if initial is not None:
            initial_text = canonical_with_data(initial, initial_values, save=False)
            write(FIX / "specs" / f"{case_id}_old.json", initial_text)
            row["initial_spec"] = f"specs/{case_id}_old.json"
        manifest.append(row)
        case_file = dict(row)
        # single-case files live one level down; rebase relative paths
        for key in ("db", "ground_truth_spec", "rendered_image", "script", "vlm_script", "ref_image", "ref_code", "initial_spec"):
            if key in case_file:
                case_file[key] = "../" + case_file[key]
        write(FIX / "cases" / f"{case_id}.json", json.dumps(case_file, indent=2) + "\n")

    # --- scenario A -------------------------------------------------------
    sql_a1 = "SELECT month, SUM(amount) AS sales_amount FROM monthly_sales GROUP BY month"
    spec_a1 = {
        "mark": "line",
        "encoding": {"x": "month:T", "y": "sales_amount:Q"},
        "title": "Monthly Sales Trend",
    }
    add_case(
        "a_001",
        "A",
        "Show sales trends by month.",
        db=retail,
        sql=sql_a1,
        spec=spec_a1,
        script=[
            {
                "match": "interface: generate_sql",
                "response": "Thought: Check which tables exist before writing SQL.\n" + action("list_tables", {}),
            },
            {
                "match": "monthly_sales",
                "response": "Thought: monthly_sales covers the question; aggregate per month.\n" + final(sql_a1),
            },
            {
                "match": "interface: generate_chart_spec",
                "response": "Thought: A trend over months wants a temporal line chart.\n" + final(spec_payload(spec_a1)),
            },
        ],
        vlm_scores=(18, 9, 17, 18, 16, 9),
        image_kind="line",
        image_fields=("month", "sales_amount"),
    )

    sql_a2 = "SELECT theme, COUNT(*) AS journal_count FROM journals GROUP BY theme"
    spec_a2 = {
        "mark": "bar",
        "encoding": {"x": "theme:N", "y": "journal_count:Q"},
        "title": "Journals per Theme",
    }
    add_case(
        "a_002",
        "A",
        "How many journals are there per theme?",
        db=journals,
        sql=sql_a2,
        spec=spec_a2,
        script=[
            {
                "match": "interface: generate_sql",
                "response": "Thought: journals has a theme column; count rows per theme.\n" + final(sql_a2),
            },
            {
                "match": "interface: generate_chart_spec",
                "response": "Thought: Counts per category call for a bar chart.\n" + final(spec_payload(spec_a2)),
            },
        ],
        vlm_scores=(17, 8, 15, 16, 14, 8),
        image_kind="bar",
        image_fields=("theme", "journal_count"),
    )

    sql_a3 = "SELECT category, AVG(price) AS avg_price FROM products GROUP BY category"
    spec_a3 = {
        "mark": "bar",
        "encoding": {"x": "category:N", "y": "avg_price:Q"},
        "title": "Average Price by Category",
    }
    add_case(
        "a_003",
        "A",
        "What is the average product price by category?",
        db=retail,
        sql=sql_a3,
        spec=spec_a3,
        script=[
            {
                "match": "interface: generate_sql",
                "response": "Thought: Find the price column first.\n" + action("find_fields", {"keyword": "price"}),
            },
            {
                "match": "products",
                "response": "Thought: products.price averaged per category.\n" + final(sql_a3),
            },
            {
                "match": "interface: generate_chart_spec",
                "response": "Thought: Averages per category fit a bar chart.\n" + final(spec_payload(spec_a3)),
            },
        ],
        vlm_scores=(16, 8, 14, 15, 13, 8),
        image_kind="bar",
        image_fields=("category", "avg_price"),
    )

    # --- scenario B -------------------------------------------------------
    sql_b1 = (
        "SELECT j.theme AS Theme, SUM(s.sales) AS TotalSales FROM journals AS j "
        "JOIN journal_sales AS s ON j.journal_id = s.journal_id GROUP BY j.theme"
    )
    spec_b1 = {
        "layer": [
            {
                "mark": {"type": "bar", "color": "steelblue"},
                "encoding": {"x": "Theme:N", "y": "TotalSales:Q"},
            },
            {
                "mark": {"type": "bar", "color": "#e45755"},
                "encoding": {"x": "Theme:N", "y": "TotalSales:Q", "y2": {"datum": 2000}},
                "transform": [{"filter": "datum.TotalSales > 2000"}],
            },
            {
                "mark": {"type": "rule", "strokeDash": [4, 4]},
                "encoding": {"y": {"datum": 2000}},
            },
            {
                "mark": {
                    "type": "text",
                    "text": "High Sales Threshold",
                    "align": "right",
                    "baseline": "bottom",
                    "dx": -2,
                },
                "encoding": {"y": {"datum": 2000}, "x": {"value": "width"}},
            },
        ],
        "title": "Journal Sales by Theme with Highlighted High Performers",
    }
    add_case(
        "b_001",
        "B",
        "Show total journal sales by theme as bars, in the style of the attached chart: "
        "color the part of any bar above 2000 red, keep the rest blue, add a dashed line at "
        "2000 labeled 'High Sales Threshold', and title it "
        "'Journal Sales by Theme with Highlighted High Performers'.",
        db=journals,
        sql=sql_b1,
        spec=spec_b1,
        ref_image="images/ref_threshold.png",
        script=[
            {
                "match": "interface: generate_sql",
                "response": "Thought: Inspect the journals table to find the theme column.\n"
                + action("get_table", {"name": "journals", "row_limit": 5}),
            },
            {
                "match": "journal_id",
                "response": "Thought: Join sales to journals and total per theme.\n" + final(sql_b1),
            },
            {
                "match": "interface: generate_chart_spec",
                "response": "Thought: Layer blue bars, a red overlay above the threshold, a dashed rule, and a label.\n"
                + final(spec_payload(spec_b1)),
            },
        ],
        vlm_scores=(19, 9, 18, 18, 17, 9),
        image_kind="bar",
        image_fields=("Theme", "TotalSales"),
    )

    sql_b2 = "SELECT category, region, sales FROM regional_sales"
    spec_b2 = {
        "mark": "bar",
        "encoding": {"x": "sum(sales):Q", "y": "category:N", "color": "region:N"},
        "title": "Sales by Category and Region",
    }
    add_case(
        "b_002",
        "B",
        "Make a horizontal stacked bar chart of total sales by category, stacked by region, "
        "matching the attached chart's layout.",
        db=retail,
        sql=sql_b2,
        spec=spec_b2,
        ref_image="images/ref_stacked.png",
        script=[
            {
                "match": "interface: generate_sql",
                "response": "Thought: regional_sales already holds category, region, sales.\n" + final(sql_b2),
            },
            {
                "match": "interface: generate_chart_spec",
                "response": "Thought: Horizontal stacked bars: sum of sales on x, category on y, region as color.\n"
                + final(spec_payload(spec_b2)),
            },
        ],
        vlm_scores=(18, 9, 16, 17, 16, 9),
        image_kind="bar",
        image_fields=("category", "sales"),
    )

    # --- scenario C -------------------------------------------------------
    sql_c1 = "SELECT price, rating, category FROM products"
    spec_c1 = {
        "mark": {"type": "circle", "opacity": 0.6},
        "encoding": {"x": "price:Q", "y": "rating:Q", "color": "category:N"},
        "title": "Price vs Rating",
    }
    add_case(
        "c_001",
        "C",
        "Adapt the reference plotting snippet into a chart of product price versus rating, "
        "colored by category, keeping its 0.6 opacity.",
        db=retail,
        sql=sql_c1,
        spec=spec_c1,
        ref_code="refs/scatter_reference.py",
        script=[
            {
                "match": "interface: generate_sql",
                "response": "Thought: price, rating, category live in products.\n" + final(sql_c1),
            },
            {
                "match": "interface: generate_chart_spec",
                "response": "Thought: The snippet is an alpha-blended scatter; circles with opacity 0.6 map it.\n"
                + final(spec_payload(spec_c1)),
            },
        ],
        vlm_scores=(17, 8, 15, 17, 15, 8),
        image_kind="scatter",
        image_fields=("price", "rating"),
    )

    sql_c2 = "SELECT month, SUM(amount) AS total FROM monthly_sales GROUP BY month"
    spec_c2 = {
        "mark": "area",
        "encoding": {"x": "month:T", "y": "total:Q"},
        "title": "Monthly Sales",
    }
    add_case(
        "c_002",
        "C",
        "Recreate the reference area chart over monthly sales totals.",
        db=retail,
        sql=sql_c2,
        spec=spec_c2,
        ref_code="refs/area_reference.py",
        script=[
            {
                "match": "interface: generate_sql",
                "response": "Thought: Total the amounts per month.\n" + final(sql_c2),
            },
            {
                "match": "interface: generate_chart_spec",
                "response": "Thought: Mirror the reference area encoding over the queried columns.\n"
                + final(spec_payload(spec_c2)),
            },
        ],
        vlm_scores=(17, 9, 15, 16, 15, 9),
        image_kind="area",
        image_fields=("month", "total"),
    )

    # --- scenario D -------------------------------------------------------
    d1_values = [
        {"month": "Jan", "sales": 120},
        {"month": "Feb", "sales": 180},
        {"month": "Mar", "sales": 150},
        {"month": "Apr", "sales": 210},
        {"month": "May", "sales": 175},
        {"month": "Jun", "sales": 240},
    ]
    d1_old = {"mark": "bar", "encoding": {"x": "month:N", "y": "sales:Q"}}
    d1_new = {
        "mark": "bar",
        "encoding": {
            "x": {"field": "month", "type": "nominal", "axis": {"labelAngle": -90}},
            "y": "sales:Q",
        },
        "title": "Sales by Month",
    }
    add_case(
        "d_001",
        "D",
        "Make the x-axis labels vertical and add the title 'Sales by Month'.",
        db=None,
        sql=None,
        spec=d1_new,
        initial=d1_old,
        initial_values=d1_values,
        script=[
            {
                "match": "interface: modify_chart_spec",
                "response": "Thought: Rotate x labels to -90 and set the requested title.\n" + final(spec_payload(d1_new)),
            },
        ],
        vlm_scores=(18, 9, 18, 17, 15, 9),
        image_kind="bar",
        image_fields=("month", "sales"),
    )

    d2_values = [
        {"month": "2024-01-01", "value": 32},
        {"month": "2024-02-01", "value": 45},
        {"month": "2024-03-01", "value": 38},
        {"month": "2024-04-01", "value": 52},
        {"month": "2024-05-01", "value": 49},
        {"month": "2024-06-01", "value": 61},
    ]
    d2_old = {"mark": "line", "encoding": {"x": "month:T", "y": "value:Q"}, "title": "Usage"}
    d2_new = {
        "mark": "area",
        "encoding": {"x": "month:T", "y": "value:Q", "tooltip": "value:Q"},
        "title": "Usage",
    }
    add_case(
        "d_002",
        "D",
        "Turn this into an area chart and add a tooltip showing the exact value.",
        db=None,
        sql=None,
        spec=d2_new,
        initial=d2_old,
        initial_values=d2_values,
        script=[
            {
                "match": "interface: modify_chart_spec",
                "response": "Thought: Swap the mark to area and expose value through a tooltip.\n" + final(spec_payload(d2_new)),
            },
        ],
        vlm_scores=(17, 8, 16, 17, 14, 8),
        image_kind="area",
        image_fields=("month", "value"),
    )

    d3_values = [
        {"x": 1.2, "y": 4.1, "category": "red"},
        {"x": 2.5, "y": 3.4, "category": "blue"},
        {"x": 3.1, "y": 5.6, "category": "red"},
        {"x": 4.7, "y": 2.9, "category": "green"},
        {"x": 5.0, "y": 6.2, "category": "blue"},
    ]
    d3_old = {"mark": "point", "encoding": {"x": "x:Q", "y": "y:Q"}, "title": "Readings"}
    d3_new = {
        "mark": {"type": "point", "opacity": 0.9},
        "encoding": {"x": "x:Q", "y": "y:Q", "color": "category:N"},
        "title": "Readings",
    }
    add_case(
        "d_003",
        "D",
        "Color the points by category and make them more opaque.",
        db=None,
        sql=None,
        spec=d3_new,
        initial=d3_old,
        initial_values=d3_values,
        script=[
            {
                "match": "interface: modify_chart_spec",
                "response": "Thought: Encode category on color and raise opacity to 0.9.\n" + final(spec_payload(d3_new)),
            },
        ],
        vlm_scores=(16, 8, 14, 16, 14, 8),
        image_kind="scatter",
        image_fields=("x", "y"),
    )

    write(FIX / "manifest.jsonl", "\n".join(json.dumps(row, ensure_ascii=False) for row in manifest) + "\n")

    # --- standalone specs to round out the evaluator corpus ---------------
    extras: dict[str, dict] = {
        "extra_arc": {
            "mark": "arc",
            "encoding": {"theta": "share:Q", "color": "segment:N"},
            "title": "Market Share",
            "data": {"values": [{"segment": "A", "share": 40}, {"segment": "B", "share": 35}, {"segment": "C", "share": 25}]},
        },
        "extra_heatmap": {
            "mark": "rect",
            "encoding": {"x": "day:O", "y": "hour:O", "color": "load:Q"},
            "data": {"values": [{"day": "Mon", "hour": "09", "load": 4}, {"day": "Mon", "hour": "10", "load": 7}, {"day": "Tue", "hour": "09", "load": 5}]},
        },
        "extra_tick": {
            "mark": "tick",
            "encoding": {"x": "duration:Q", "y": "group:N"},
            "data": {"values": [{"group": "a", "duration": 12}, {"group": "a", "duration": 19}, {"group": "b", "duration": 7}]},
        },
        "extra_layered_trend": {
            "layer": [
                {"mark": "line", "encoding": {"x": "t:T", "y": "v:Q"}},
                {"mark": {"type": "point", "filled": True}, "encoding": {"x": "t:T", "y": "v:Q"}},
            ],
            "title": "Trend with Points",
            "data": {"values": [{"t": "2023-01-01", "v": 3}, {"t": "2023-02-01", "v": 5}, {"t": "2023-03-01", "v": 4}]},
        },
        "extra_binned": {
            "mark": "bar",
            "encoding": {"x": {"field": "score", "type": "quantitative", "bin": True}, "y": "count()"},
            "transform": [{"filter": "datum.score > 0"}],
            "data": {"values": [{"score": 55}, {"score": 61}, {"score": 78}, {"score": 91}]},
        },
        "extra_bubble": {
            "mark": "circle",
            "encoding": {"x": "gdp:Q", "y": "life:Q", "size": "pop:Q", "tooltip": "country:N"},
            "data": {"values": [{"country": "X", "gdp": 4.2, "life": 71, "pop": 12}, {"country": "Y", "gdp": 9.8, "life": 79, "pop": 48}]},
        },
        "extra_calc": {
            "mark": "line",
            "encoding": {"x": "t:Q", "y": "scaled:Q"},
            "transform": [{"calculate": "datum.raw * 10", "as": "scaled"}],
            "data": {"values": [{"t": 1, "raw": 0.4}, {"t": 2, "raw": 0.9}]},
        },
        "extra_sorted_bar": {
            "mark": "bar",
            "encoding": {"x": "team:N", "y": "wins:Q", "order": "wins:Q", "color": {"value": "#4c78a8"}},
            "title": "Wins by Team",
            "data": {"values": [{"team": "north", "wins": 11}, {"team": "south", "wins": 14}, {"team": "west", "wins": 9}]},
        },
        "extra_selector": {
            "mark": "point",
            "encoding": {"x": "a:Q", "y": "b:Q", "opacity": {"value": 0.7}},
            "params": [{"name": "brush", "select": "interval"}],
            "data": {"values": [{"a": 1, "b": 2}, {"a": 3, "b": 1}]},
        },
        "extra_annotated_rule": {
            "layer": [
                {"mark": "bar", "encoding": {"x": "label:N", "y": "amount:Q"}},
                {"mark": {"type": "rule", "strokeDash": [2, 2]}, "encoding": {"y": {"datum": 50}}},
                {"mark": {"type": "text", "text": "goal", "dy": -4}, "encoding": {"y": {"datum": 50}, "x": {"value": "width"}}},
            ],
            "data": {"values": [{"label": "q1", "amount": 34}, {"label": "q2", "amount": 58}]},
        },
    }
    for name, spec in extras.items():
        values = spec.pop("data")["values"]
        write(FIX / "specs" / f"{name}.json", canonical_with_data(spec, values, save=False))

    counts: dict[str, int] = {}
    for row in manifest:
        counts[row["scenario"]] = counts.get(row["scenario"], 0) + 1
    print(f"wrote {len(manifest)} cases {counts}; specs: {len(list((FIX / 'specs').glob('*.json')))}")


if __name__ == "__main__":
    main()
