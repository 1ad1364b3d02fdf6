"""Uniform access to language/vision models, live or scripted.

Every model exchange flows through ``complete``, which appends the request and
response to a run-scoped trace.  The deterministic mock provider replays an
ordered script of exchanges (substring-matched, regex optional) so end-to-end
runs are reproducible byte-for-byte; the HTTP provider talks to a hosted
chat-completions endpoint with credentials taken from the environment.

Model output follows a strict wire grammar (one ``Thought:`` line plus either
a fenced ``action`` block or a ``FINAL:`` marker); ``parse_tool_call`` turns a
response into a ToolRequest, a FinalResponse, or a classified parse error.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol

from .errors import ConfigError, GatewayError
from .rules import (
    ClassifiedError,
    ModelKind,
    ModelSpec,
    analyze_response,
)


@dataclass(frozen=True)
class TextPart:
    text: str
    kind: str = "text"


@dataclass(frozen=True)
class ImagePart:
    payload: bytes
    media: str = "image/png"
    kind: str = "image"


@dataclass(frozen=True)
class ModelRequest:
    parts: tuple
    kind: ModelKind | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not any(getattr(p, "kind", "") == "text" for p in self.parts):
            raise ValueError("a model request needs at least one text part")
        if self.kind is not None and self.kind.clazz.value == "TextModel":
            if any(getattr(p, "kind", "") == "image" for p in self.parts):
                raise ValueError("image parts require a vision model")

    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if getattr(p, "kind", "") == "text")

    def has_image(self) -> bool:
        return any(getattr(p, "kind", "") == "image" for p in self.parts)


@dataclass(frozen=True)
class ModelResponse:
    text: str
    model_id: str = ""
    latency_ms: float = 0.0


@dataclass(frozen=True)
class ToolRequest:
    tool: str
    args: dict
    raw_text: str = ""


@dataclass(frozen=True)
class FinalResponse:
    payload: str
    raw_text: str = ""


class Provider(Protocol):
    def models(self) -> list[ModelSpec]: ...

    def complete_text(self, request: ModelRequest) -> ModelResponse: ...


@dataclass
class ScriptedExchange:
    """One canned exchange: a matcher over the request text plus the verbatim
    response.  ``once=False`` lets a trailing exchange replay forever."""

    matcher: str = ""
    response: str = ""
    once: bool = True
    regex: bool = False
    hits: int = 0

    def matches(self, request_text: str) -> bool:
        if not self.matcher:
            return True
        if self.regex:
            return re.search(self.matcher, request_text, re.DOTALL) is not None
        return self.matcher in request_text


MOCK_MODELS = [ModelSpec.of("mock-text", "text"), ModelSpec.of("mock-vision", "text", "vision")]


class MockProvider:
    """Deterministic scripted provider.  Exchanges replay strictly in order;
    in strict mode a non-matching or exhausted script raises."""

    def __init__(self, exchanges: Iterable[ScriptedExchange], strict: bool = True, models: list[ModelSpec] | None = None):
        self.exchanges = list(exchanges)
        self.strict = strict
        self._models = list(models) if models is not None else list(MOCK_MODELS)
        self.cursor = 0

    def models(self) -> list[ModelSpec]:
        return self._models

    def complete_text(self, request: ModelRequest) -> ModelResponse:
        text = request.text()
        if self.cursor >= len(self.exchanges):
            if self.strict:
                raise GatewayError("scripted exchanges exhausted", code="ScriptExhausted")
            return ModelResponse("", model_id=self._model_id(request))
        exchange = self.exchanges[self.cursor]
        if not exchange.matches(text):
            if self.strict:
                raise GatewayError(
                    f"request does not match scripted exchange {self.cursor} ({exchange.matcher!r})",
                    code="ScriptMismatch",
                )
            return ModelResponse("", model_id=self._model_id(request))
        exchange.hits += 1
        if exchange.once:
            self.cursor += 1
        return ModelResponse(exchange.response, model_id=self._model_id(request))

    def _model_id(self, request: ModelRequest) -> str:
        if request.kind is not None:
            return request.kind.model_id
        return self._models[0].model_id if self._models else "mock"

    def unconsumed(self) -> list[ScriptedExchange]:
        """Exchanges that never fired; reported as a post-run warning."""
        return [e for e in self.exchanges if e.hits == 0]


class FaultInjectingProvider:
    """Wrap a provider and garble every Nth completion without consuming the
    underlying script, so recovery-driven retries still see the real script."""

    GARBLED = "(transmission garbled)"

    def __init__(self, inner, every: int = 3):
        if every < 1:
            raise ValueError("every must be >= 1")
        self.inner = inner
        self.every = every
        self.calls = 0

    def models(self) -> list[ModelSpec]:
        return self.inner.models()

    def complete_text(self, request: ModelRequest) -> ModelResponse:
        self.calls += 1
        if self.calls % self.every == 0:
            return ModelResponse(self.GARBLED, model_id="fault-injector")
        return self.inner.complete_text(request)

    def unconsumed(self):
        unconsumed = getattr(self.inner, "unconsumed", None)
        return unconsumed() if callable(unconsumed) else []


class CallableProvider:
    """Programmatic provider for fuzzing: fn(request, call_index) -> text."""

    def __init__(self, fn, models: list[ModelSpec] | None = None):
        self.fn = fn
        self._models = list(models) if models is not None else list(MOCK_MODELS)
        self.calls = 0

    def models(self) -> list[ModelSpec]:
        return self._models

    def complete_text(self, request: ModelRequest) -> ModelResponse:
        index = self.calls
        self.calls += 1
        return ModelResponse(str(self.fn(request, index)), model_id=self._model_id(request))

    def _model_id(self, request: ModelRequest) -> str:
        if request.kind is not None:
            return request.kind.model_id
        return self._models[0].model_id if self._models else "mock"


@dataclass(frozen=True)
class HttpModelConfig:
    model_id: str
    endpoint: str
    env_key: str
    capabilities: frozenset[str] = frozenset({"text"})


class HttpProvider:
    """Thin chat-completions client.  Generation parameters stay at provider
    defaults; whatever is sent is recorded in the trace."""

    def __init__(self, configs: list[HttpModelConfig], timeout: float = 60.0):
        if not configs:
            raise ConfigError("no models configured")
        self.configs = {c.model_id: c for c in configs}
        self.order = [c.model_id for c in configs]
        self.timeout = timeout

    def models(self) -> list[ModelSpec]:
        return [ModelSpec(mid, self.configs[mid].capabilities) for mid in self.order]

    def complete_text(self, request: ModelRequest) -> ModelResponse:
        import base64
        import os

        import requests

        model_id = request.kind.model_id if request.kind else self.order[0]
        config = self.configs[model_id]
        token = os.environ.get(config.env_key, "")
        if not token:
            raise ConfigError(f"credentials environment variable {config.env_key} is not set")
        content: list[dict] = []
        for part in request.parts:
            if getattr(part, "kind", "") == "image":
                encoded = base64.b64encode(part.payload).decode("ascii")
                content.append(
                    {"type": "image_url", "image_url": {"url": f"data:{part.media};base64,{encoded}"}}
                )
            else:
                content.append({"type": "text", "text": part.text})
        body = {"model": model_id, "messages": [{"role": "user", "content": content}], **request.params}
        started = time.monotonic()
        try:
            resp = requests.post(
                config.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {token}"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            payload = resp.json()
        except requests.Timeout as exc:
            raise GatewayError(str(exc), code="Timeout", category="TimeoutError") from exc
        except requests.RequestException as exc:
            raise GatewayError(str(exc), code="Transport", category="ModelError") from exc
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed provider response: {exc}", code="BadResponse") from exc
        return ModelResponse(text, model_id=model_id, latency_ms=(time.monotonic() - started) * 1000.0)


def _describe_parts(parts: tuple) -> str:
    chunks = []
    for p in parts:
        if getattr(p, "kind", "") == "image":
            chunks.append(f"<image {p.media} {len(p.payload)} bytes>")
        else:
            chunks.append(p.text)
    return "\n".join(chunks)


def complete(request: ModelRequest, provider: Provider, trace: list | None = None) -> ModelResponse:
    """Send one request and append the exchange to the run-scoped trace."""
    response = provider.complete_text(request)
    if trace is not None:
        record: dict[str, Any] = {
            "event": "model_exchange",
            "model": response.model_id,
            "request": _describe_parts(request.parts),
            "response": response.text,
        }
        if request.params:
            record["params"] = dict(sorted(request.params.items()))
        trace.append(record)
    return response


def parse_tool_call(response: ModelResponse | str) -> ToolRequest | FinalResponse | ClassifiedError:
    """Total parser over model output: a well-formed action block becomes a
    ToolRequest, a final-answer marker becomes a FinalResponse, anything else
    becomes the classified parse error."""
    text = response.text if isinstance(response, ModelResponse) else str(response)
    analyzed = analyze_response(text)
    if analyzed.kind == "final":
        return FinalResponse(payload=analyzed.payload, raw_text=text)
    if analyzed.kind == "action":
        return ToolRequest(tool=analyzed.tool, args=dict(analyzed.args), raw_text=text)
    return analyzed.error


def load_script(path: str) -> list[ScriptedExchange]:
    """Load an ordered exchange script (one JSON object per line)."""
    p = Path(path)
    if not p.is_file():
        raise GatewayError(f"script file not found: {path}", code="IoError", category="IoError")
    exchanges = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GatewayError(
                f"{path}:{lineno}: invalid script line: {exc.msg}", code="FormatError", category="ParseError"
            ) from exc
        if not isinstance(row, dict) or "response" not in row:
            raise GatewayError(
                f"{path}:{lineno}: script line needs a 'response' field", code="FormatError", category="ParseError"
            )
        exchanges.append(
            ScriptedExchange(
                matcher=row.get("match", ""),
                response=row["response"],
                once=bool(row.get("once", True)),
                regex=bool(row.get("regex", False)),
            )
        )
    return exchanges


def load_provider_config(path: str) -> list[HttpModelConfig]:
    """Provider config file: model ids, endpoints, env credential keys, and
    capability flags."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = raw.get("models", raw) if isinstance(raw, dict) else raw
    configs = []
    for row in rows:
        configs.append(
            HttpModelConfig(
                model_id=row["id"],
                endpoint=row["endpoint"],
                env_key=row["env_key"],
                capabilities=frozenset(row.get("capabilities", ["text"])),
            )
        )
    return configs


def make_provider(
    model_arg: str,
    script: str | None = None,
    config_path: str | None = None,
    strict: bool = True,
):
    """Build a provider from the CLI's --model argument: ``mock`` replays a
    script; ``provider:<model-id>`` selects a configured HTTP model."""
    if model_arg == "mock":
        exchanges = load_script(script) if script else []
        return MockProvider(exchanges, strict=strict)
    if model_arg.startswith("provider:"):
        if not config_path:
            raise ConfigError("--model provider:<id> needs a provider config file")
        wanted = model_arg.split(":", 1)[1]
        configs = load_provider_config(config_path)
        if wanted and wanted not in {c.model_id for c in configs}:
            raise ConfigError(f"model {wanted!r} not present in {config_path}")
        # requested model first so configuration-order tie-breaking picks it
        configs.sort(key=lambda c: c.model_id != wanted)
        return HttpProvider(configs)
    raise ConfigError(f"unknown --model argument: {model_arg!r}")
