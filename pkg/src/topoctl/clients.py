"""Completion clients for the parameter-steering agent.

All clients implement a single call:

    complete(system_text, user_text, output_token_cap=200) -> str

Three families: a live HTTP client (OpenAI-style chat endpoint, keyed by
the TOPOCTL_LLM_API_KEY environment variable), a replay client that returns
previously recorded responses verbatim in call order, and scripted mocks
for hermetic runs and tests.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Callable, Protocol


class ClientError(Exception):
    """The client could not produce a response (network, script exhausted...)."""


class CompletionClient(Protocol):
    def complete(
        self, system_text: str, user_text: str, output_token_cap: int = 200
    ) -> str: ...


def _advisory_mock_policy(obs: dict) -> dict:
    """Default scripted policy: follow the staged advisory, respect grayness.

    Stages by budget fraction with the usual breakpoints; beta is held low
    while the design is still gray and doubled toward the stage cap once it
    clears, which exercises the gate logic without ever fighting it.
    """
    f = float(obs.get("budget_fraction", 0.0))
    grayness = float(obs.get("grayness", 1.0))
    beta_now = float(obs.get("beta", 1.0))
    if f < 0.08:
        p = 1.0 + f / 0.08
        beta, r_min, move = 1.0, 1.50, 0.20
        note = "explore"
    elif f < 0.50:
        p = 2.0 + 2.5 * (f - 0.08) / 0.42
        cap = 4.0
        beta = min(cap, max(1.0, beta_now if grayness > 0.20 else beta_now * 2.0))
        r_min, move = 1.35, 0.15
        note = "penalize, hold beta" if grayness > 0.20 else "penalize"
    elif f < 0.75:
        p = 4.5
        cap = 8.0 if grayness > 0.20 else 16.0
        beta = min(cap, max(4.0, beta_now * 2.0))
        r_min, move = 1.25, 0.08
        note = "sharpen"
    else:
        p, beta, r_min, move = 4.5, 32.0, 1.20, 0.05
        note = "polish"
    restart = bool(obs.get("best_snapshot_valid")) and (
        float(obs.get("rel_deviation", 0.0)) > 0.12
    )
    if restart:
        note += ", restart from best"
    return {
        "p": round(p, 4), "beta": beta, "rmin": r_min, "move": move,
        "restart": restart, "note": note,
    }


class ScriptedMockClient:
    """Deterministic stand-in for the live model.

    The policy maps the observation dict (parsed back out of the user text)
    to an action dict; the reply is that dict as JSON, optionally wrapped in
    prose to exercise extraction.
    """

    def __init__(
        self,
        policy: Callable[[dict], dict] | None = None,
        wrap: str = "{json}",
    ):
        self.policy = policy or _advisory_mock_policy
        self.wrap = wrap
        self.calls = 0

    def complete(
        self, system_text: str, user_text: str, output_token_cap: int = 200
    ) -> str:
        self.calls += 1
        try:
            obs = json.loads(user_text)
        except json.JSONDecodeError as err:
            raise ClientError(f"mock could not parse observation: {err}") from err
        return self.wrap.format(json=json.dumps(self.policy(obs)))


class SequenceClient:
    """Returns canned responses in order; raises when the script runs out."""

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.calls = 0

    def complete(
        self, system_text: str, user_text: str, output_token_cap: int = 200
    ) -> str:
        if self.calls >= len(self.responses):
            raise ClientError("scripted responses exhausted")
        out = self.responses[self.calls]
        self.calls += 1
        return out


class FailingClient:
    """Always errors; every call should fall back."""

    def complete(
        self, system_text: str, user_text: str, output_token_cap: int = 200
    ) -> str:
        raise ClientError("client configured to fail")


class ReplayClient:
    """Replays raw responses from a recorded call log, keyed by call order.

    The log is line-delimited JSON with a raw_response field per record (the
    format written next to every agent run). Calls beyond the end of the log
    raise ClientError, which surfaces as a fallback action downstream.
    """

    def __init__(self, log_path: str | Path):
        self.log_path = Path(log_path)
        self.responses: list[str] = []
        if self.log_path.exists():
            with open(self.log_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self.responses.append(rec["raw_response"])
        self.calls = 0

    def complete(
        self, system_text: str, user_text: str, output_token_cap: int = 200
    ) -> str:
        if self.calls >= len(self.responses):
            raise ClientError(
                f"replay log {self.log_path} exhausted at call {self.calls}"
            )
        out = self.responses[self.calls]
        self.calls += 1
        return out


API_KEY_ENV = "TOPOCTL_LLM_API_KEY"
ENDPOINT_ENV = "TOPOCTL_LLM_ENDPOINT"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_MODEL = "gpt-4.1"


class LiveClient:
    """Minimal OpenAI-style chat-completions client (temperature 0).

    30-second timeout with a single retry; the raw assistant text comes back
    unparsed. Requires TOPOCTL_LLM_API_KEY (or an explicit api_key).
    """

    def __init__(
        self,
        model: str = DEFAULT_MODEL,
        endpoint: str | None = None,
        api_key: str | None = None,
        timeout: float = 30.0,
        retries: int = 1,
    ):
        self.model = model
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, DEFAULT_ENDPOINT)
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise ClientError(f"no API key: set {API_KEY_ENV}")
        self.timeout = timeout
        self.retries = retries

    def complete(
        self, system_text: str, user_text: str, output_token_cap: int = 200
    ) -> str:
        import httpx

        payload = {
            "model": self.model,
            "temperature": 0,
            "max_tokens": output_token_cap,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_err: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = httpx.post(
                    self.endpoint, json=payload, headers=headers,
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except Exception as err:  # noqa: BLE001 - any transport failure retries once
                last_err = err
        raise ClientError(f"live completion failed: {last_err}") from last_err


def make_client(kind: str, replay_log: str | Path | None = None, **kwargs):
    """Client factory for the CLI: kind in {live, mock, replay}."""
    if kind == "mock":
        return ScriptedMockClient()
    if kind == "replay":
        if replay_log is None:
            raise ValueError("replay client needs a log path")
        return ReplayClient(replay_log)
    if kind == "live":
        return LiveClient(**kwargs)
    raise ValueError(f"unknown client kind {kind!r}")
