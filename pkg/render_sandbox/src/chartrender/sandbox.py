"""Isolated execution: renders in a forked child, snippets in a fresh
interpreter.  No failure mode of either (exception, abort, hang) reaches the
invoking process as anything but a structured record."""

from __future__ import annotations

import json
import multiprocessing
import os
import subprocess
import sys
import tempfile
from pathlib import Path

from .grammar import GrammarError, load_path, load_text

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_TIMEOUT = 124

# timeout safety bounds (seconds); requests are clamped into this range
TIMEOUT_LOWER = 1.0
TIMEOUT_UPPER = 120.0
TIMEOUT_DEFAULT = 30.0


def clamp_timeout(value) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        return TIMEOUT_DEFAULT
    if number != number:  # NaN
        return TIMEOUT_DEFAULT
    return max(TIMEOUT_LOWER, min(TIMEOUT_UPPER, number))


def _error(kind: str, detail: str, exit_code: int = EXIT_ERROR) -> dict:
    return {"ok": False, "error": {"kind": kind, "detail": detail}, "exit": exit_code}


def _render_child(spec_path: str | None, spec_text: str | None, out_path: str, queue) -> None:
    try:
        from .renderer import render

        doc = load_path(spec_path) if spec_path else load_text(spec_text or "")
        width, height = render(doc, out_path)
        queue.put({"ok": True, "path": out_path, "width": width, "height": height, "exit": EXIT_OK})
    except GrammarError as exc:
        queue.put(_error("RenderError", f"{exc.kind}: {exc.detail}"))
    except Exception as exc:  # noqa: BLE001 - isolation boundary
        queue.put(_error("RenderError", f"{type(exc).__name__}: {exc}"))


def render_spec(spec_path: str | None = None, spec_text: str | None = None, out_path: str | None = None, timeout=None) -> dict:
    """Render a document in a forked child under a hard deadline."""
    deadline = clamp_timeout(timeout if timeout is not None else TIMEOUT_DEFAULT)
    out_path = out_path or str(Path(tempfile.mkdtemp(prefix="chartrender-")) / "chart.png")
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    ctx = multiprocessing.get_context("fork" if sys.platform != "win32" else "spawn")
    queue = ctx.Queue()
    child = ctx.Process(target=_render_child, args=(spec_path, spec_text, out_path, queue))
    child.start()
    child.join(deadline)
    if child.is_alive():
        child.terminate()
        child.join(5)
        return _error("TimeoutError", f"render exceeded {deadline}s", EXIT_TIMEOUT)
    if queue.empty():
        return _error("RenderError", f"render child died with code {child.exitcode}")
    result = queue.get()
    if result.get("ok"):
        size = Path(result["path"]).stat().st_size if Path(result["path"]).is_file() else 0
        if size <= 0:
            return _error("RenderError", "render produced an empty file")
        result["bytes"] = size
    return result


_SNIPPET_PRELUDE = """\
import matplotlib
matplotlib.use("Agg")
"""

_SNIPPET_SAVE = """

# appended output-save directive
import matplotlib.pyplot as _plt
_plt.savefig({out_path!r}, dpi=100, metadata={{"Software": None}})
"""

_IMAGE_SUFFIXES = (".png", ".svg", ".jpg", ".jpeg", ".pdf")


def standardize_snippet(code: str, out_path: str) -> str:
    """Force the headless backend and inject a save directive when the snippet
    has none."""
    body = code
    standardized = _SNIPPET_PRELUDE + body
    if "savefig" not in body and ".save(" not in body:
        standardized += _SNIPPET_SAVE.format(out_path=out_path)
    return standardized


def execute_snippet(snippet_path: str, out_dir: str | None = None, timeout=None) -> dict:
    """Run a plotting snippet in a fresh interpreter; returns the artifact path
    or a structured error.  The host process is never affected by snippet
    crashes or hangs."""
    deadline = clamp_timeout(timeout if timeout is not None else TIMEOUT_DEFAULT)
    source = Path(snippet_path)
    if not source.is_file():
        return _error("ExecError", f"snippet not found: {snippet_path}")
    out_dir = out_dir or tempfile.mkdtemp(prefix="chartrender-exec-")
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    artifact = str(Path(out_dir) / "artifact.png")
    driver = Path(out_dir) / "_driver.py"
    driver.write_text(standardize_snippet(source.read_text(encoding="utf-8"), artifact), encoding="utf-8")
    before = {p for p in Path(out_dir).iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES}
    try:
        proc = subprocess.run(
            [sys.executable, str(driver)],
            cwd=out_dir,
            capture_output=True,
            text=True,
            timeout=deadline,
            env={**os.environ, "MPLBACKEND": "Agg"},
        )
    except subprocess.TimeoutExpired:
        return _error("TimeoutError", f"snippet exceeded {deadline}s", EXIT_TIMEOUT)
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout).strip().splitlines()[-12:]
        return _error("ExecError", "snippet failed:\n" + "\n".join(tail))
    after = {p for p in Path(out_dir).iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES}
    produced = sorted(after - before) or sorted(after)
    if not produced:
        return _error("ExecError", "snippet produced no artifact")
    return {"ok": True, "path": str(produced[0]), "exit": EXIT_OK}


def serve(stdin=None, stdout=None) -> int:
    """Line-oriented request/response loop over standard streams."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            response = _error("ProtocolError", f"bad request line: {exc.msg}")
        else:
            op = request.get("op")
            if op == "render":
                response = render_spec(
                    spec_path=request.get("spec_path"),
                    spec_text=request.get("spec"),
                    out_path=request.get("out"),
                    timeout=request.get("timeout"),
                )
            elif op == "exec":
                response = execute_snippet(
                    request.get("snippet"), request.get("out_dir"), request.get("timeout")
                )
            else:
                response = _error("ProtocolError", f"unknown op {op!r}")
        stdout.write(json.dumps(response, sort_keys=True) + "\n")
        stdout.flush()
    return EXIT_OK
