"""Planner backends: the scripted table-driven test double and a remote
chat-completions HTTP client.

Both speak the same protocol: respond(messages, response_shape) -> text.
The scripted backend replays canned bodies per (agent, shape, stage) and
falls back to deterministic defaults when its script is exhausted; the
remote backend talks to any endpoint using the de-facto standard
chat-completions JSON shape.
"""

from __future__ import annotations

import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Protocol, Sequence

from .errors import BackendFailure, ConfigError


class PlannerBackend(Protocol):
    def respond(
        self,
        messages: Sequence[Mapping[str, str]],
        response_shape: str,
        agent: Optional[str] = None,
        stage: Optional[int] = None,
    ) -> str: ...


# Deterministic fallbacks by response shape, used when a script is exhausted.
_FALLBACKS = {
    "plan": {"version": "1", "task_label": "identity", "steps": []},
    "model_specs": {"use_default_zoo": True},
    "pcs_review": {
        "predictability": "not assessed",
        "stability": "not assessed",
        "verdict": "accept",
        "judgment_calls": [],
    },
    "problem_definition": {},
    "eda_questions": [],
}


@dataclass
class _ScriptEntry:
    shape: str
    body: Any
    agent: Optional[str] = None
    stage: Optional[int] = None
    consumed: bool = False


class ScriptedBackend:
    """Table-driven backend: responses consumed in order per matching request.

    Scenario format: {"responses": [{"shape": ..., "body": ...,
    "agent": optional, "stage": optional}, ...]}. An entry matches a request
    when shapes are equal and any agent/stage filters present on both sides
    agree. Exhausted scripts fall back to fixed defaults per shape.
    """

    def __init__(self, scenario: Optional[Mapping] = None):
        scenario = scenario or {}
        self._entries = [
            _ScriptEntry(
                shape=e["shape"],
                body=e["body"],
                agent=e.get("agent"),
                stage=e.get("stage"),
            )
            for e in scenario.get("responses", [])
        ]
        self.calls: list[dict] = []

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls(json.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario file {path} is not valid JSON: {exc}") from exc

    def respond(
        self,
        messages: Sequence[Mapping[str, str]],
        response_shape: str,
        agent: Optional[str] = None,
        stage: Optional[int] = None,
    ) -> str:
        self.calls.append(
            {"shape": response_shape, "agent": agent, "stage": stage}
        )
        for entry in self._entries:
            if entry.consumed or entry.shape != response_shape:
                continue
            if entry.agent is not None and agent is not None and entry.agent != agent:
                continue
            if entry.stage is not None and stage is not None and entry.stage != stage:
                continue
            entry.consumed = True
            if isinstance(entry.body, str):
                return entry.body
            return json.dumps(entry.body)
        return json.dumps(_FALLBACKS.get(response_shape, {}))


class RemoteBackend:
    """Chat-completions HTTP client with bounded transport retries.

    Credentials come only from the named environment variable; request and
    response bodies can be logged to a directory with credentials redacted.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: Optional[str] = None,
        timeout: float = 60.0,
        max_transport_retries: int = 2,
        log_dir: Optional[Path] = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.max_transport_retries = max_transport_retries
        self.log_dir = Path(log_dir) if log_dir else None
        self._api_key = None
        if api_key_env:
            self._api_key = os.environ.get(api_key_env)
            if not self._api_key:
                raise ConfigError(
                    f"environment variable {api_key_env!r} is not set"
                )
        self._call_count = 0

    def _log(self, record: dict) -> None:
        if self.log_dir is None:
            return
        self.log_dir.mkdir(parents=True, exist_ok=True)
        path = self.log_dir / f"backend_call_{self._call_count:04d}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(record, fh, indent=2)

    def respond(
        self,
        messages: Sequence[Mapping[str, str]],
        response_shape: str,
        agent: Optional[str] = None,
        stage: Optional[int] = None,
    ) -> str:
        self._call_count += 1
        payload = {"model": self.model, "messages": list(messages)}
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"

        record: dict = {
            "endpoint": self.endpoint,
            "shape": response_shape,
            "agent": agent,
            "stage": stage,
            "request": payload,  # never contains credentials
        }
        last_error: Optional[str] = None
        for _ in range(self.max_transport_retries + 1):
            request = urllib.request.Request(
                self.endpoint, data=body, headers=headers, method="POST"
            )
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    raw = resp.read().decode("utf-8")
                break
            except urllib.error.HTTPError as exc:
                last_error = f"HTTP {exc.code}: {exc.reason}"
            except urllib.error.URLError as exc:
                last_error = f"transport error: {exc.reason}"
            except TimeoutError:
                last_error = f"timeout after {self.timeout}s"
        else:
            record["error"] = last_error
            self._log(record)
            raise BackendFailure(last_error)

        record["response"] = raw
        self._log(record)
        try:
            doc = json.loads(raw)
            content = doc["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise BackendFailure(f"malformed response: {exc}") from exc
        if not isinstance(content, str):
            raise BackendFailure("malformed response: content is not text")
        return content


def backend_scripted(scenario) -> ScriptedBackend:
    """Build a scripted backend from a scenario mapping or file path."""
    if isinstance(scenario, (str, Path)):
        return ScriptedBackend.from_file(scenario)
    return ScriptedBackend(scenario)


def backend_remote(
    endpoint: str,
    model: str,
    api_key_env: Optional[str] = None,
    timeout: float = 60.0,
    max_transport_retries: int = 2,
    log_dir=None,
) -> RemoteBackend:
    return RemoteBackend(
        endpoint, model, api_key_env, timeout, max_transport_retries, log_dir
    )
