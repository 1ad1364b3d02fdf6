from __future__ import annotations

import json
import sqlite3
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def manifest_path() -> str:
    return str(FIXTURES / "manifest.jsonl")


@pytest.fixture(scope="session")
def corpus_specs() -> list[Path]:
    """Every committed fixture spec document."""
    return sorted((FIXTURES / "specs").glob("*.json"))


@pytest.fixture(scope="session")
def journals_db() -> str:
    return str(FIXTURES / "db" / "journals.sqlite")


@pytest.fixture(scope="session")
def retail_db() -> str:
    return str(FIXTURES / "db" / "retail.sqlite")


@pytest.fixture()
def tiny_db(tmp_path) -> str:
    """Single small table; keeps fuzz loops fast."""
    path = tmp_path / "tiny.sqlite"
    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE samples (label TEXT NOT NULL, value INTEGER NOT NULL)")
    conn.executemany("INSERT INTO samples VALUES (?, ?)", [("a", 1), ("b", 2), ("c", 3)])
    conn.commit()
    conn.close()
    return str(path)


def write_script(path: Path, exchanges: list[dict]) -> str:
    path.write_text("\n".join(json.dumps(e) for e in exchanges) + "\n", encoding="utf-8")
    return str(path)


def action_text(tool: str, args: dict, thought: str = "next step") -> str:
    return f"Thought: {thought}\n```action\n" + json.dumps({"tool": tool, "args": args}) + "\n```"


def final_text(payload: str, thought: str = "done") -> str:
    return f"Thought: {thought}\nFINAL:\n{payload}"


MINIMAL_SPEC = '{"mark": "bar", "encoding": {"x": {"field": "label", "type": "nominal"}, "y": {"field": "value", "type": "quantitative"}}}'


def minimal_spec_payload() -> str:
    return "```json\n" + MINIMAL_SPEC + "\n```"
