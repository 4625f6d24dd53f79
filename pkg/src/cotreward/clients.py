"""Wire contract for external language / vision-language model clients.

A client is anything with ``complete(messages) -> str`` where each message
is ``{"role": str, "content": str}`` plus an optional ``"image"`` entry
(raw bytes or a string payload).  The decomposer and the success labeler
share this contract.
"""

from __future__ import annotations

import base64
import os
from typing import Protocol, runtime_checkable

from .errors import TransportError

CREDENTIALS_ENV = "COTREWARD_LLM_API_KEY"


@runtime_checkable
class ChatClient(Protocol):
    def complete(self, messages: list) -> str: ...


class OpenAICompatibleClient:
    """Minimal chat-completions client for OpenAI-style HTTP endpoints.

    Credentials come from an environment variable only. Without them the
    client reports ``configured = False`` and callers fall back to fixtures.
    """

    def __init__(self, model, base_url="https://api.openai.com/v1",
                 key_env=CREDENTIALS_ENV, timeout=60.0):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.key_env = key_env
        self.timeout = timeout

    @property
    def configured(self):
        return bool(os.environ.get(self.key_env))

    @staticmethod
    def _content(msg):
        image = msg.get("image")
        if image is None:
            return msg["content"]
        if isinstance(image, str):
            image = image.encode("utf-8")
        url = "data:image/png;base64," + base64.b64encode(image).decode("ascii")
        return [{"type": "text", "text": msg["content"]}, {"type": "image_url", "image_url": {"url": url}}]

    def complete(self, messages):
        import httpx

        key = os.environ.get(self.key_env)
        if not key:
            raise TransportError(f"{self.key_env} is not set")
        body = {
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": m["role"], "content": self._content(m)} for m in messages],
        }
        try:
            resp = httpx.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"chat completion failed: {exc}") from exc


class ScriptedClient:
    """Replays canned responses in order and records every request."""

    configured = True

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def complete(self, messages):
        self.requests.append(messages)
        if not self.responses:
            raise TransportError("scripted client exhausted")
        return self.responses.pop(0)
