"""Uniform agent abstraction: remote chat-completion endpoints and scripted fixtures.

Every call is single-turn: one user message in, one reply out. Remote agents
speak the open chat-completions protocol (POST {endpoint}/chat/completions);
scripted agents serve canned replies from a JSON fixture so whole runs replay
deterministically without a network. Token usage is tracked per call and
merges additively.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx

from .prompts import PromptClass

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
BACKOFF_BASE_SECONDS = 0.5
BACKOFF_FACTOR = 2.0
RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class AgentConfigError(ValueError):
    """A spec problem detected before any call is made."""


class AgentTransportError(RuntimeError):
    """The remote endpoint kept failing after all retry attempts."""


class FixtureError(KeyError):
    """A scripted agent had no reply for the requested key (test-setup bug)."""


class CodeBlockError(ValueError):
    """The reply contained no fenced code block."""


@dataclass
class AgentSpec:
    """Static description of one agent: transport, model, and sampling knobs."""

    name: str
    kind: str = "scripted"  # "remote" | "scripted"
    endpoint_url: str = ""
    model: str = ""
    temperature: float = 0.2
    frequency_penalty: float = 0.5
    max_output_tokens: int | None = None
    api_key_env: str = ""
    fixture_path: str | Path | None = None
    strict_fixture_keys: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("remote", "scripted"):
            raise AgentConfigError(f"unknown agent kind {self.kind!r}")
        if self.temperature < 0:
            raise AgentConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.kind == "remote" and (not self.endpoint_url or not self.model):
            raise AgentConfigError(
                f"remote agent {self.name!r} needs endpoint_url and model"
            )

    def redacted(self) -> dict:
        """Spec as persisted in manifests: key values never leave the env."""
        return {
            "name": self.name,
            "kind": self.kind,
            "endpoint_url": self.endpoint_url,
            "model": self.model,
            "temperature": self.temperature,
            "frequency_penalty": self.frequency_penalty,
            "max_output_tokens": self.max_output_tokens,
            "api_key_env": self.api_key_env,
            "fixture_path": str(self.fixture_path) if self.fixture_path else None,
        }


@dataclass
class AgentUsage:
    """Token counts, additive across calls."""

    input_tokens: int = 0
    output_tokens: int = 0
    calls: int = 0

    def add(self, other: "AgentUsage") -> None:
        self.input_tokens += other.input_tokens
        self.output_tokens += other.output_tokens
        self.calls += other.calls

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def to_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "calls": self.calls,
        }


@dataclass
class CompletionReply:
    text: str
    usage_delta: AgentUsage


@dataclass(frozen=True)
class PromptContext:
    """Where in the run a prompt comes from; scripted fixtures key on this."""

    prompt_class: PromptClass
    round_index: int
    agent_name: str


def count_tokens(text: str, counter: Callable[[str], int] | None = None) -> int:
    """Approximate token count for cost reporting.

    The default heuristic is ceil(len/4); pass ``counter`` to plug in an exact
    tokenizer. Provider-reported usage always takes precedence over either.
    """
    if counter is not None:
        return counter(text)
    return math.ceil(len(text) / 4)


_FENCE_RE = re.compile(r"```([^\n]*)\n(.*?)```", re.DOTALL)


def extract_code_block(reply_text: str, fence_tag: str = "") -> str:
    """Return the contents of the first fenced block matching ``fence_tag``.

    Tag comparison is case-insensitive; if no block carries the tag, the first
    fenced block of any tag is used. A block without its closing fence does
    not count.
    """
    blocks = [(tag.strip(), body) for tag, body in _FENCE_RE.findall(reply_text)]
    if not blocks:
        raise CodeBlockError("no fenced code block in reply")
    if fence_tag:
        wanted = fence_tag.strip().lower()
        for tag, body in blocks:
            if tag.lower() == wanted:
                return body.rstrip("\n")
    return blocks[0][1].rstrip("\n")


def fixture_key(context: PromptContext) -> str:
    return f"{context.prompt_class.value}:{context.round_index}:{context.agent_name}"


def strict_fixture_key(prompt: str) -> str:
    return "sha256:" + hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Agent:
    """Base: complete(prompt, context) -> CompletionReply."""

    def __init__(self, spec: AgentSpec) -> None:
        self.spec = spec

    @property
    def name(self) -> str:
        return self.spec.name

    def complete(self, prompt: str, context: PromptContext) -> CompletionReply:
        raise NotImplementedError


class ScriptedAgent(Agent):
    """Replays fixture responses; the deterministic stand-in for a live model.

    Fixture format: JSON object mapping keys to {"text", "input_tokens",
    "output_tokens"}. Keys are "<prompt_class>:<round>:<agent_name>" so
    fixtures survive cosmetic template edits; strict mode keys on the sha256
    of the full prompt instead (used for replay capture).
    """

    def __init__(self, spec: AgentSpec, fixtures: dict | None = None) -> None:
        super().__init__(spec)
        if fixtures is None:
            if spec.fixture_path is None:
                raise AgentConfigError(
                    f"scripted agent {spec.name!r} has no fixture_path"
                )
            fixtures = json.loads(Path(spec.fixture_path).read_text())
        self.fixtures = fixtures

    def complete(self, prompt: str, context: PromptContext) -> CompletionReply:
        if self.spec.strict_fixture_keys:
            key = strict_fixture_key(prompt)
        else:
            key = fixture_key(context)
        entry = self.fixtures.get(key)
        if entry is None:
            raise FixtureError(f"agent {self.name!r} has no fixture for key {key!r}")
        text = entry["text"]
        usage = AgentUsage(
            input_tokens=entry.get("input_tokens", count_tokens(prompt)),
            output_tokens=entry.get("output_tokens", count_tokens(text)),
            calls=1,
        )
        return CompletionReply(text=text, usage_delta=usage)


class RemoteAgent(Agent):
    """HTTP chat-completions client with retry and token accounting.

    Wire protocol: POST {endpoint_url}/chat/completions with a JSON body
    {model, messages: [{role: "user", content}], temperature,
    frequency_penalty, max_tokens}; the reply text is
    choices[0].message.content and usage comes from usage.prompt_tokens /
    usage.completion_tokens when the provider reports it.
    """

    def __init__(
        self,
        spec: AgentSpec,
        *,
        timeout: float = 120.0,
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        super().__init__(spec)
        if not spec.api_key_env:
            raise AgentConfigError(f"remote agent {spec.name!r} has no api_key_env")
        self._timeout = timeout
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._rng = random.Random()

    def close(self) -> None:
        self._client.close()

    def _api_key(self) -> str:
        key = os.environ.get(self.spec.api_key_env)
        if not key:
            raise AgentConfigError(
                f"environment variable {self.spec.api_key_env!r} is not set for "
                f"agent {self.spec.name!r}"
            )
        return key

    def complete(self, prompt: str, context: PromptContext) -> CompletionReply:
        key = self._api_key()  # fail before any network traffic
        body = {
            "model": self.spec.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.spec.temperature,
            "frequency_penalty": self.spec.frequency_penalty,
        }
        if self.spec.max_output_tokens is not None:
            body["max_tokens"] = self.spec.max_output_tokens
        url = self.spec.endpoint_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {key}"}

        last_error: Exception | None = None
        for attempt in range(MAX_ATTEMPTS):
            if attempt > 0:
                delay = BACKOFF_BASE_SECONDS * (BACKOFF_FACTOR ** (attempt - 1))
                delay += self._rng.uniform(0, delay * 0.1)
                logger.warning(
                    "agent %s attempt %d/%d after %s; retrying in %.2fs",
                    self.name,
                    attempt + 1,
                    MAX_ATTEMPTS,
                    last_error,
                    delay,
                )
                self._sleep(delay)
            try:
                response = self._client.post(url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if response.status_code in RETRYABLE_STATUS:
                last_error = AgentTransportError(
                    f"status {response.status_code} from {url}"
                )
                continue
            if response.status_code >= 400:  # not worth retrying
                raise AgentTransportError(
                    f"agent {self.name!r} got status {response.status_code} from {url}"
                )
            return self._parse(prompt, response.json())
        raise AgentTransportError(
            f"agent {self.name!r} failed after {MAX_ATTEMPTS} attempts: {last_error}"
        )

    def _parse(self, prompt: str, payload: dict) -> CompletionReply:
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise AgentTransportError(f"malformed completion payload: {exc}") from exc
        usage = payload.get("usage") or {}
        input_tokens = usage.get("prompt_tokens")
        output_tokens = usage.get("completion_tokens")
        delta = AgentUsage(
            input_tokens=input_tokens if input_tokens is not None else count_tokens(prompt),
            output_tokens=output_tokens if output_tokens is not None else count_tokens(text),
            calls=1,
        )
        return CompletionReply(text=text, usage_delta=delta)


def build_agent(spec: AgentSpec) -> Agent:
    if spec.kind == "scripted":
        return ScriptedAgent(spec)
    return RemoteAgent(spec)
