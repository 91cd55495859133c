"""Uniform chat-completion boundary.

Every stage that talks to a language model goes through a :class:`Gateway`.
``ResilientGateway`` adds rate limiting, a concurrency cap, retries with
exponential backoff, and transcript recording on top of any transport
(HTTP endpoint, scripted mock, offline synthesizer, or transcript replay).
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .errors import GatewayError, ReplayMissError, TransientGatewayError
from .util import canonical_json, content_hash

logger = logging.getLogger(__name__)


@dataclass
class ChatRequest:
    """One chat call: system + final user message, optional example message
    pairs replayed before the user turn, and surface-form logit penalties."""

    system: str
    user: str
    in_context_examples: tuple[tuple[str, str], ...] = ()
    logit_penalties: dict[str, float] = field(default_factory=dict)
    model_profile: str = ""

    def to_json(self) -> dict:
        return {
            "system": self.system,
            "user": self.user,
            "in_context_examples": [list(pair) for pair in self.in_context_examples],
            "logit_penalties": {k: self.logit_penalties[k] for k in sorted(self.logit_penalties)},
            "model_profile": self.model_profile,
        }

    def messages(self) -> list[dict]:
        out = [{"role": "system", "content": self.system}]
        for user_text, assistant_text in self.in_context_examples:
            out.append({"role": "user", "content": user_text})
            out.append({"role": "assistant", "content": assistant_text})
        out.append({"role": "user", "content": self.user})
        return out


def request_hash(request: ChatRequest) -> str:
    return content_hash(canonical_json(request.to_json()))


@dataclass
class GatewayProfile:
    """Connection and resilience settings for one model endpoint."""

    name: str = "default"
    endpoint: str = ""
    model: str = ""
    auth_env: str = ""  # name of the env var holding the token; never the token
    max_concurrent: int = 1
    requests_per_minute: int = 0  # 0 = unlimited
    max_attempts: int = 3
    backoff_base: float = 0.5
    token_bias: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")
        if self.requests_per_minute < 0:
            raise ValueError("requests_per_minute must be non-negative")


class Gateway:
    def chat(self, request: ChatRequest) -> str:
        raise NotImplementedError


class TranscriptWriter:
    """Append-only JSONL log of every issued request, for replay."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, entry: dict) -> None:
        line = json.dumps(entry, ensure_ascii=False, separators=(",", ":"))
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.write("\n")


def read_transcript(path: Path | str) -> list[dict]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


class ResilientGateway(Gateway):
    """Retries, rate limiting, concurrency cap, and transcript recording."""

    def __init__(
        self,
        inner: Gateway,
        profile: GatewayProfile,
        transcript: TranscriptWriter | None = None,
        *,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.inner = inner
        self.profile = profile
        self.transcript = transcript
        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(profile.max_concurrent)
        self._rate_lock = threading.Lock()
        self._next_slot = 0.0

    def _rate_wait(self) -> None:
        if self.profile.requests_per_minute <= 0:
            return
        interval = 60.0 / self.profile.requests_per_minute
        with self._rate_lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + interval
        if wait > 0:
            self._sleep(wait)

    def chat(self, request: ChatRequest) -> str:
        req_hash = request_hash(request)
        started = time.time()
        last_error: Exception | None = None
        with self._semaphore:
            for attempt in range(1, self.profile.max_attempts + 1):
                self._rate_wait()
                try:
                    response = self.inner.chat(request)
                except TransientGatewayError as exc:
                    last_error = exc
                    if attempt < self.profile.max_attempts:
                        self._sleep(self.profile.backoff_base * (2 ** (attempt - 1)))
                    continue
                except GatewayError as exc:
                    self._record(req_hash, request, None, attempt, started, error=str(exc))
                    raise
                self._record(req_hash, request, response, attempt, started)
                return response
        message = f"gave up after {self.profile.max_attempts} attempts: {last_error}"
        self._record(req_hash, request, None, self.profile.max_attempts, started, error=message)
        raise GatewayError(message)

    def _record(self, req_hash, request, response, attempts, started, error=None):
        if self.transcript is None:
            return
        entry = {
            "request_hash": req_hash,
            "request": request.to_json(),
            "response": response,
            "attempts": attempts,
            "started_at": started,
            "finished_at": time.time(),
        }
        if error is not None:
            entry["error"] = error
        self.transcript.append(entry)


class ScriptedGateway(Gateway):
    """Deterministic mock keyed on request-content hash (header/timestamp
    noise cannot affect matching). ``responses`` maps hash -> text; a callable
    fallback may synthesize replies for unscripted requests."""

    def __init__(
        self,
        responses: Mapping[str, str] | None = None,
        fallback: Callable[[ChatRequest], str] | None = None,
    ):
        self.responses = dict(responses or {})
        self.fallback = fallback
        self.requests: list[ChatRequest] = []

    def chat(self, request: ChatRequest) -> str:
        self.requests.append(request)
        req_hash = request_hash(request)
        if req_hash in self.responses:
            return self.responses[req_hash]
        if self.fallback is not None:
            return self.fallback(request)
        raise GatewayError(f"no scripted response for request hash {req_hash}")


class ReplayGateway(Gateway):
    """Serves recorded responses by request hash; a cache miss is an error."""

    def __init__(self, entries: Iterable[dict] | Path | str):
        if isinstance(entries, (str, Path)):
            entries = read_transcript(entries)
        self._responses: dict[str, str] = {}
        self._errors: dict[str, str] = {}
        for entry in entries:
            req_hash = entry.get("request_hash", "")
            if entry.get("error") is not None:
                self._errors.setdefault(req_hash, entry["error"])
            elif entry.get("response") is not None:
                if req_hash in self._responses and self._responses[req_hash] != entry["response"]:
                    logger.warning("transcript has conflicting responses for %s; keeping first", req_hash)
                else:
                    self._responses.setdefault(req_hash, entry["response"])

    def chat(self, request: ChatRequest) -> str:
        req_hash = request_hash(request)
        if req_hash in self._responses:
            return self._responses[req_hash]
        if req_hash in self._errors:
            raise GatewayError(f"recorded failure: {self._errors[req_hash]}")
        raise ReplayMissError(req_hash)


class HttpGateway(Gateway):
    """Chat-completions style JSON POST transport (one attempt per call)."""

    def __init__(self, profile: GatewayProfile, *, timeout: float = 60.0):
        self.profile = profile
        self.timeout = timeout

    def _auth_token(self) -> str:
        if not self.profile.auth_env:
            return ""
        token = os.environ.get(self.profile.auth_env, "")
        if not token:
            raise GatewayError(f"auth env var {self.profile.auth_env} is not set")
        return token

    def _resolve_logit_bias(self, penalties: Mapping[str, float]) -> dict[str, float] | None:
        if not penalties:
            return None
        bias: dict[str, float] = {}
        missing = []
        for surface in sorted(penalties):
            token_ids = self.profile.token_bias.get(surface)
            if token_ids is None:
                token_ids = _tokenize_surface_forms(self.profile.model, surface)
            if not token_ids:
                missing.append(surface)
                continue
            for token_id in token_ids:
                bias[str(token_id)] = penalties[surface]
        if missing:
            logger.warning("no token ids for %s; bias omitted for them", ", ".join(missing))
        return bias or None

    def chat(self, request: ChatRequest) -> str:
        payload: dict = {"model": self.profile.model, "messages": request.messages()}
        bias = self._resolve_logit_bias(request.logit_penalties)
        if bias:
            payload["logit_bias"] = bias
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        token = self._auth_token()
        if token:
            headers["Authorization"] = f"Bearer {token}"
        req = urllib.request.Request(self.profile.endpoint, data=body, headers=headers)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                data = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code == 429 or exc.code >= 500:
                raise TransientGatewayError(f"HTTP {exc.code}") from exc
            raise GatewayError(f"HTTP {exc.code}") from exc
        except (urllib.error.URLError, TimeoutError) as exc:
            raise TransientGatewayError(str(exc)) from exc
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"unexpected response shape: {exc}") from exc


def _tokenize_surface_forms(model: str, surface: str) -> list[int]:
    """Best-effort token ids for a surface form; empty when no tokenizer."""
    try:
        import tiktoken
    except ImportError:
        return []
    try:
        encoding = tiktoken.encoding_for_model(model) if model else tiktoken.get_encoding("cl100k_base")
    except KeyError:
        encoding = tiktoken.get_encoding("cl100k_base")
    ids: list[int] = []
    for form in (surface, surface.capitalize(), " " + surface, " " + surface.capitalize()):
        ids.extend(encoding.encode(form))
    return sorted(set(ids))
