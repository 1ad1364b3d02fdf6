"""Read-only exploration and querying of case databases (SQLite files).

Five tools back the database agent: list_tables, get_table, get_foreign_keys,
find_fields, and execute_sql.  Two safety layers keep case files pristine:
statement-class inspection rejects anything but SELECT/WITH before execution,
and every connection is opened in read-only mode.  Unordered SELECTs get a
deterministic tiebreak ordering appended so identical queries over identical
files always return identical tables.
"""

from __future__ import annotations

import re
import sqlite3
import time
from dataclasses import dataclass

from .chartspec import DataTable
from .errors import ToolError
from .rules import BOUND_TABLE, INVALID, te_clamp_param

_SQLITE_HEADER = b"SQLite format 3\x00"
_PROGRESS_OPCODES = 1000  # VM ops between deadline checks


@dataclass
class DbHandle:
    path: str
    conn: sqlite3.Connection | None = None

    @property
    def is_open(self) -> bool:
        return self.conn is not None

    def close(self) -> None:
        if self.conn is not None:
            self.conn.close()
            self.conn = None

    def __enter__(self) -> "DbHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True)
class TablePreview:
    name: str
    columns: tuple[tuple[str, str], ...]  # (name, declared type)
    rows: tuple[tuple, ...]


@dataclass(frozen=True)
class ResultTable:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    truncated: bool = False

    def to_data_table(self) -> DataTable:
        return DataTable.from_rows(list(self.columns), list(self.rows))


@dataclass(frozen=True)
class SqlError:
    kind: str  # Syntax | ReadOnlyViolation | Timeout | Other
    message: str

    SYNTAX = "Syntax"
    READ_ONLY = "ReadOnlyViolation"
    TIMEOUT = "Timeout"
    OTHER = "Other"


def open_database(path: str) -> DbHandle:
    """Open a read-only handle to a single-file SQLite database."""
    import os

    if not os.path.isfile(path):
        raise ToolError(f"database file not found: {path}", code="IoError", category="IoError")
    with open(path, "rb") as fh:
        header = fh.read(16)
    if header != _SQLITE_HEADER:
        raise ToolError(f"not a SQLite database: {path}", code="NotADatabase", category="IoError")
    conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    return DbHandle(path=path, conn=conn)


def _require_open(db: DbHandle) -> sqlite3.Connection:
    if not db.is_open:
        raise ToolError("database handle is closed", code="HandleClosed", category="ExecError")
    return db.conn


def list_tables(db: DbHandle) -> list[str]:
    """User tables only, lexicographic order."""
    conn = _require_open(db)
    cur = conn.execute(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
    )
    return [row[0] for row in cur.fetchall()]


def _table_columns(conn: sqlite3.Connection, name: str) -> list[tuple[str, str]]:
    cur = conn.execute(f'PRAGMA table_info("{name}")')
    return [(row[1], row[2]) for row in cur.fetchall()]


def get_table(db: DbHandle, name: str, row_limit: int | None = None) -> TablePreview:
    """Column descriptors plus up to row_limit sample rows (limit clamped)."""
    conn = _require_open(db)
    if name not in list_tables(db):
        raise ToolError(f"unknown table: {name!r}", code="UnknownTable", category="ExecError")
    bound = BOUND_TABLE["row_limit"]
    clamped = te_clamp_param(bound, bound.default if row_limit is None else row_limit)
    if clamped is INVALID:
        raise ToolError(f"invalid row_limit: {row_limit!r}", code="InvalidParam", category="ParamError")
    columns = _table_columns(conn, name)
    order = ", ".join(str(i + 1) for i in range(len(columns))) or "1"
    cur = conn.execute(f'SELECT * FROM "{name}" ORDER BY {order} LIMIT ?', (clamped,))
    return TablePreview(name=name, columns=tuple(columns), rows=tuple(tuple(r) for r in cur.fetchall()))


def get_foreign_keys(db: DbHandle) -> list[tuple[str, str, str, str]]:
    """All declared FK edges as (from_table, from_column, to_table, to_column)."""
    conn = _require_open(db)
    edges = []
    for table in list_tables(db):
        cur = conn.execute(f'PRAGMA foreign_key_list("{table}")')
        for row in cur.fetchall():
            # row: (id, seq, ref_table, from_col, to_col, ...)
            to_col = row[4]
            if to_col is None:  # implicit reference to the primary key
                pk = [c for c, _ in _table_columns(conn, row[2])]
                to_col = pk[0] if pk else ""
            edges.append((table, row[3], row[2], to_col))
    return sorted(edges)


def find_fields(db: DbHandle, keyword: str) -> list[tuple[str, str]]:
    """Case-insensitive substring search over (table, column) names."""
    if not keyword:
        raise ToolError("keyword must be non-empty", code="InvalidParam", category="ParamError")
    conn = _require_open(db)
    needle = keyword.lower()
    hits = []
    for table in list_tables(db):
        for column, _ in _table_columns(conn, table):
            if needle in column.lower() or needle in table.lower():
                hits.append((table, column))
    return sorted(hits)


_LEADING_COMMENT_RE = re.compile(r"^(\s*(--[^\n]*\n|/\*.*?\*/))*\s*", re.DOTALL)


def _statement_class(sql: str) -> str:
    body = _LEADING_COMMENT_RE.sub("", sql)
    first = re.match(r"[A-Za-z]+", body)
    return first.group(0).upper() if first else ""


def _strip_strings_and_comments(sql: str) -> str:
    out = []
    i = 0
    n = len(sql)
    while i < n:
        ch = sql[i]
        if ch == "'" or ch == '"':
            quote = ch
            i += 1
            while i < n:
                if sql[i] == quote:
                    if i + 1 < n and sql[i + 1] == quote:
                        i += 2
                        continue
                    break
                i += 1
            i += 1
            out.append(" ")
        elif sql.startswith("--", i):
            while i < n and sql[i] != "\n":
                i += 1
        elif sql.startswith("/*", i):
            end = sql.find("*/", i)
            i = n if end < 0 else end + 2
            out.append(" ")
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _has_top_level_order_by(sql: str) -> bool:
    flat = _strip_strings_and_comments(sql)
    depth = 0
    tokens = re.finditer(r"\(|\)|\b[A-Za-z_]+\b", flat)
    pending_order = False
    for m in tokens:
        tok = m.group(0)
        if tok == "(":
            depth += 1
            pending_order = False
        elif tok == ")":
            depth = max(0, depth - 1)
            pending_order = False
        elif depth == 0:
            word = tok.upper()
            if pending_order and word == "BY":
                return True
            pending_order = word == "ORDER"
    return False


def execute_sql(
    db: DbHandle,
    sql: str,
    row_limit: int | None = None,
    timeout_seconds: float | None = None,
) -> ResultTable | SqlError:
    """Run a SELECT under the clamped row limit and timeout.

    Mutating statements are rejected before execution; a deterministic
    ORDER BY over all result columns is appended when the query has none.
    """
    conn = _require_open(db)

    stmt_class = _statement_class(sql)
    if stmt_class not in ("SELECT", "WITH"):
        return SqlError(SqlError.READ_ONLY, f"only SELECT statements are allowed, got {stmt_class or 'empty'}")

    limit_bound = BOUND_TABLE["row_limit"]
    limit = te_clamp_param(limit_bound, limit_bound.default if row_limit is None else row_limit)
    timeout_bound = BOUND_TABLE["sql_timeout_seconds"]
    timeout = te_clamp_param(
        timeout_bound, timeout_bound.default if timeout_seconds is None else timeout_seconds
    )
    if limit is INVALID or timeout is INVALID:
        return SqlError(SqlError.OTHER, "invalid row_limit or timeout value")

    body = sql.strip().rstrip(";").strip()
    deadline = time.monotonic() + timeout

    def _check_deadline():
        return 1 if time.monotonic() > deadline else 0

    conn.set_progress_handler(_check_deadline, _PROGRESS_OPCODES)
    try:
        try:
            probe = conn.execute(f"SELECT * FROM ({body}) AS _probe LIMIT 0")
        except sqlite3.Warning as exc:
            return SqlError(SqlError.SYNTAX, str(exc))
        except sqlite3.OperationalError as exc:
            if "interrupt" in str(exc).lower():
                return SqlError(SqlError.TIMEOUT, f"query exceeded {timeout}s")
            return SqlError(SqlError.SYNTAX, str(exc))
        except sqlite3.DatabaseError as exc:
            return SqlError(SqlError.OTHER, str(exc))
        columns = tuple(d[0] for d in probe.description or ())

        query = body
        if not _has_top_level_order_by(body) and columns:
            order = ", ".join(str(i + 1) for i in range(len(columns)))
            query = f"SELECT * FROM ({body}) AS _q ORDER BY {order}"
        try:
            cur = conn.execute(query)
            rows = cur.fetchmany(int(limit) + 1)
        except sqlite3.OperationalError as exc:
            if "interrupt" in str(exc).lower():
                return SqlError(SqlError.TIMEOUT, f"query exceeded {timeout}s")
            return SqlError(SqlError.SYNTAX, str(exc))
        except sqlite3.DatabaseError as exc:
            return SqlError(SqlError.OTHER, str(exc))
    finally:
        conn.set_progress_handler(None, 0)

    truncated = len(rows) > limit
    return ResultTable(
        columns=columns,
        rows=tuple(tuple(r) for r in rows[: int(limit)]),
        truncated=truncated,
    )
