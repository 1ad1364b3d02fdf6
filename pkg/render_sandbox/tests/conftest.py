from __future__ import annotations

import json
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent.parent
SPEC_DIR = REPO_ROOT / "fixtures" / "specs"

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def assert_valid_png(path: Path) -> None:
    """Independent image check: exists, PNG magic, decodes."""
    assert path.is_file() and path.stat().st_size > 0
    with path.open("rb") as fh:
        assert fh.read(8) == PNG_MAGIC
    from PIL import Image

    with Image.open(path) as img:
        img.verify()


@pytest.fixture(scope="session")
def spec_paths() -> list[Path]:
    paths = sorted(SPEC_DIR.glob("*.json"))
    assert paths, "fixture corpus missing; run scripts/gen_fixtures.py in the repo root"
    return paths


@pytest.fixture(scope="session")
def ground_truth_paths(spec_paths) -> list[Path]:
    return [p for p in spec_paths if p.name.endswith("_gt.json")]


def write_spec(tmp_path: Path, tree: dict, name: str = "spec.json") -> str:
    path = tmp_path / name
    path.write_text(json.dumps(tree), encoding="utf-8")
    return str(path)
