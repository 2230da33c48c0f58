"""Generation-backend contract with per-token logprobs.

Two implementations: an HTTP client for OpenAI-compatible chat-completions
endpoints, and a deterministic scripted backend that replays pre-authored
results for tests and offline runs.
"""

from __future__ import annotations

import logging
import os
from collections import deque
from dataclasses import dataclass, field
from math import log
from typing import Iterable, Protocol

import requests

from .errors import ArrError
from .protocol import TokenSample

logger = logging.getLogger(__name__)

FINISH_STOP = "stop"
FINISH_LENGTH = "length"
FINISH_BACKEND_ERROR = "backend_error"


class GatewayError(ArrError):
    """Base class for generation-backend failures."""


class BackendUnreachable(GatewayError):
    """The HTTP backend could not be reached or kept failing."""


class MalformedBackendResponse(GatewayError):
    """The backend replied with a payload that violates the contract."""


class ScriptExhausted(GatewayError):
    """The scripted backend ran out of pre-authored results."""


@dataclass
class GenerationRequest:
    messages: list[tuple[str, str]]
    max_tokens: int = 512
    temperature: float = 0.7
    top_logprobs_k: int = 5
    stop_sequences: tuple[str, ...] = ()
    seed: int | None = None


@dataclass
class GenerationResult:
    text: str
    tokens: list[TokenSample] = field(default_factory=list)
    finish_reason: str = FINISH_STOP

    def __post_init__(self):
        if self.tokens:
            concatenated = "".join(tok.text for tok in self.tokens)
            if concatenated != self.text:
                raise ValueError("token texts do not concatenate to the result text")
            for tok in self.tokens:
                if not tok.policy_generated:
                    raise ValueError("generation results carry policy tokens only")


class GenerationBackend(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResult: ...


@dataclass
class HttpBackendConfig:
    endpoint_url: str
    model: str
    timeout: float = 60.0
    retry_count: int = 2
    api_key_env: str = "ARR_API_KEY"


class HttpChatBackend:
    """Client for an OpenAI-compatible chat-completions endpoint.

    Sends model, messages, max_tokens, temperature, logprobs=true,
    top_logprobs=K, and stop; reads the first choice's message content plus
    its per-token logprobs. Transport errors and 5xx responses are retried
    up to the configured count.
    """

    def __init__(self, config: HttpBackendConfig):
        self.config = config

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def generate(self, request: GenerationRequest) -> GenerationResult:
        payload = {
            "model": self.config.model,
            "messages": [{"role": role, "content": content} for role, content in request.messages],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "logprobs": True,
            "top_logprobs": request.top_logprobs_k,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        if request.seed is not None:
            payload["seed"] = request.seed

        last_error: Exception | None = None
        for attempt in range(self.config.retry_count + 1):
            try:
                response = requests.post(
                    self.config.endpoint_url,
                    json=payload,
                    headers=self._headers(),
                    timeout=self.config.timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("backend request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code >= 500:
                last_error = BackendUnreachable(f"server error {response.status_code}")
                logger.warning("backend 5xx (attempt %d): %d", attempt + 1, response.status_code)
                continue
            if response.status_code != 200:
                raise BackendUnreachable(f"backend returned status {response.status_code}")
            return self._parse_payload(response, request.top_logprobs_k)
        raise BackendUnreachable(f"backend unreachable after retries: {last_error}")

    def _parse_payload(self, response: requests.Response, top_k: int) -> GenerationResult:
        try:
            data = response.json()
        except ValueError as exc:
            raise MalformedBackendResponse(f"response is not JSON: {exc}") from exc
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedBackendResponse(f"missing choices/message content: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedBackendResponse("message content is not a string")

        tokens: list[TokenSample] = []
        logprob_items = ((choice.get("logprobs") or {}).get("content")) or []
        for item in logprob_items:
            try:
                tok_text = item["token"]
                logprob = float(item["logprob"])
                alternatives = [
                    (alt["token"], float(alt["logprob"]))
                    for alt in (item.get("top_logprobs") or [])
                ]
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedBackendResponse(f"bad logprob entry: {exc}") from exc
            if logprob > 0.0 or any(lp > 0.0 for _, lp in alternatives):
                raise MalformedBackendResponse("backend returned a positive logprob")
            alternatives.sort(key=lambda pair: pair[1], reverse=True)
            tokens.append(TokenSample(tok_text, logprob, alternatives[:top_k]))

        if tokens and "".join(t.text for t in tokens) != text:
            raise MalformedBackendResponse("logprob tokens do not concatenate to the text")

        finish = choice.get("finish_reason", FINISH_STOP)
        if finish not in (FINISH_STOP, FINISH_LENGTH):
            finish = FINISH_BACKEND_ERROR
        return GenerationResult(text=text, tokens=tokens, finish_reason=finish)


class ScriptedBackend:
    """Replays a fixed sequence of generation results, one per call.

    Replay is bit-identical across runs: two backends built from the same
    script return the same results for the same call sequence.
    """

    def __init__(self, results: Iterable[GenerationResult | str], confidence: float = 0.9):
        self._queue: deque[GenerationResult] = deque(
            item if isinstance(item, GenerationResult) else make_result(item, confidence)
            for item in results
        )

    def __len__(self) -> int:
        return len(self._queue)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        if not self._queue:
            raise ScriptExhausted("scripted backend has no results left")
        return self._queue.popleft()


_CHUNK = 8
_ALT_FILLER = "·"


def synth_tokens(
    text: str,
    confidence: float,
    policy_generated: bool = True,
) -> list[TokenSample]:
    """Tile text into fixed-width tokens with a two-outcome distribution.

    Each token's top alternative carries probability ``confidence``; the rest
    of the mass sits on a filler alternative, so the full distribution (and
    therefore the exact entropy) is recoverable from the stored logprobs.
    """
    if not 0.5 <= confidence <= 1.0:
        raise ValueError("confidence must lie in [0.5, 1.0]")
    tokens = []
    for start in range(0, len(text), _CHUNK):
        chunk = text[start : start + _CHUNK]
        if confidence >= 1.0:
            alternatives = [(chunk, 0.0)]
            logprob = 0.0
        else:
            logprob = log(confidence)
            alternatives = [(chunk, logprob), (_ALT_FILLER, log(1.0 - confidence))]
        tokens.append(TokenSample(chunk, logprob, alternatives, policy_generated))
    return tokens


def make_result(text: str, confidence: float = 0.9) -> GenerationResult:
    return GenerationResult(text=text, tokens=synth_tokens(text, confidence))
