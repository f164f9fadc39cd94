"""LLM gateway: one client API over remote and deterministic offline backends.

Every other module talks to language models through LlmClient, so the
whole pipeline runs without network access when a mock backend is
configured. Mock backends are pure functions of their configuration and
the request, which makes end-to-end runs bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass

from .errors import (
    ConfigError,
    CorruptTranscriptError,
    FixtureMissError,
    PromptTooLongError,
    RemoteRefusalError,
    RemoteTimeoutError,
)

log = logging.getLogger("lexjudge.llm")

DEFAULT_PROMPT_BUDGET = 12000
DEFAULT_MAX_TOKENS = 512


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def request_key(prompt: str, temperature: float, max_tokens: int) -> str:
    """Stable fixture key; hashes the prompt text verbatim."""
    payload = f"{temperature:.6g}|{max_tokens}|{prompt}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmRequest:
    prompt: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = 0.0
    stop: tuple = ()
    tag: str = ""

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


def extract_candidates(prompt: str) -> list[str]:
    """Candidate display names from a judgment prompt.

    Format contract with judge.render_judgment_prompt: candidate lines
    are exactly two spaces, an index, a dot and the display text.
    """
    out = []
    for line in prompt.splitlines():
        if line.startswith("  ") and ". " in line:
            head, _, rest = line[2:].partition(". ")
            if head.isdigit():
                out.append(rest)
    return out


def extract_fact(prompt: str) -> str:
    """The fact suffix of a reorganization prompt (text after 'Facts:')."""
    return prompt.rsplit("Facts:", 1)[-1].strip()


def make_echo_reorganized(fact: str) -> tuple[str, str, str]:
    """Deterministic stand-in triple used by the echo backend.

    Takes three spaced slices of the fact so the concatenation stays
    shorter than the source for any non-trivial input.
    """
    words = fact.split()
    n = len(words)
    k = max(1, n // 5)
    sub = " ".join(words[0:k]) or "none stated"
    obj = " ".join(words[n // 3:n // 3 + k]) or "none stated"
    ex = " ".join(words[2 * n // 3:2 * n // 3 + k]) or "none stated"
    return sub, obj, ex


class LlmBackend:
    kind = "abstract"

    def complete(self, request: LlmRequest) -> str:
        raise NotImplementedError


class EchoBackend(LlmBackend):
    """Deterministic mock that answers from the prompt itself.

    Reorganization requests (tag starts with "reorg") get a well-formed
    SUB/OBJ/EX triple sliced from the prompt's fact; judgment requests
    get "LABEL: <first candidate>"; anything else gets the configured
    default, which no vocabulary matches, forcing the parse fallback.
    """

    kind = "echo-mock"

    def __init__(self, default: str = "NO-ANSWER"):
        self.default = default

    def complete(self, request: LlmRequest) -> str:
        if request.tag.startswith("reorg"):
            sub, obj, ex = make_echo_reorganized(extract_fact(request.prompt))
            return f"SUB: {sub}\nOBJ: {obj}\nEX: {ex}"
        candidates = extract_candidates(request.prompt)
        if candidates:
            return f"LABEL: {candidates[0]}"
        return self.default


class ScriptedBackend(LlmBackend):
    """Mock driven by an explicit response table and/or responder callable.

    Lookup order: responder(request), exact prompt, sha256(prompt),
    fixture request key, default. The responder may raise an LlmError to
    inject failures. With no match and no default, raises FixtureMiss.
    """

    kind = "scripted-mock"

    def __init__(self, responses=None, responder=None, default=None):
        self.responses = dict(responses or {})
        self.responder = responder
        self.default = default

    def complete(self, request: LlmRequest) -> str:
        if self.responder is not None:
            answer = self.responder(request)
            if answer is not None:
                return answer
        for key in (request.prompt,
                    prompt_sha256(request.prompt),
                    request_key(request.prompt, request.temperature, request.max_tokens)):
            if key in self.responses:
                return self.responses[key]
        if self.default is not None:
            return self.default
        raise FixtureMissError(prompt_sha256(request.prompt))


class FixtureReplayBackend(LlmBackend):
    """Replays recorded responses; fails loudly on any unseen request."""

    kind = "fixture-replay"

    def __init__(self, path):
        self.path = str(path)
        self.fixtures = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self.fixtures[rec["key"]] = rec["response"]

    def complete(self, request: LlmRequest) -> str:
        key = request_key(request.prompt, request.temperature, request.max_tokens)
        try:
            return self.fixtures[key]
        except KeyError:
            raise FixtureMissError(key) from None


class RemoteBackend(LlmBackend):
    """HTTP chat/completions backend.

    POSTs {model, messages, temperature, max_tokens} to the configured
    endpoint with a bearer credential from LLM_API_KEY. Timeouts and
    5xx/429 raise RemoteTimeout (retryable); other HTTP errors raise
    RemoteRefusal (not retried).
    """

    kind = "remote"

    def __init__(self, endpoint, model, api_key_env="LLM_API_KEY", timeout=30.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def complete(self, request: LlmRequest) -> str:
        api_key = os.environ.get(self.api_key_env, "")
        if not api_key:
            raise ConfigError(f"remote backend needs a credential in ${self.api_key_env}")
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.stop:
            payload["stop"] = list(request.stop)
        req = urllib.request.Request(
            self.endpoint,
            data=json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json",
                     "Authorization": f"Bearer {api_key}"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code == 429 or exc.code >= 500:
                raise RemoteTimeoutError(f"HTTP {exc.code} from {self.endpoint}") from exc
            raise RemoteRefusalError(f"HTTP {exc.code} from {self.endpoint}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise RemoteTimeoutError(str(exc)) from exc
        choice = body["choices"][0]
        if "message" in choice:
            return choice["message"]["content"]
        return choice["text"]


@dataclass
class RetryPolicy:
    attempts: int = 3
    backoffs: tuple = (1.0, 4.0, 16.0)


class LlmClient:
    """Budget enforcement, retries, transcript logging and rate limiting.

    The transcript gets exactly one line per complete() call, success or
    failure; appends are serialized, so concurrent callers are safe.
    Only the remote backend is retried; mock failures are deterministic
    and propagate immediately.
    """

    def __init__(self, backend, transcript_path=None,
                 prompt_budget=DEFAULT_PROMPT_BUDGET,
                 retry: RetryPolicy | None = None,
                 max_concurrent=4, requests_per_minute=None,
                 sleep=time.sleep):
        self.backend = backend
        self.transcript_path = str(transcript_path) if transcript_path else None
        self.prompt_budget = prompt_budget
        self.retry = retry or RetryPolicy()
        self.sleep = sleep
        self.calls = 0
        self._lock = threading.Lock()
        self._remote_sem = threading.Semaphore(max_concurrent)
        self._rpm = requests_per_minute
        self._dispatch_times = deque()

    def _log_line(self, record):
        with self._lock:
            self.calls += 1
            if self.transcript_path:
                with open(self.transcript_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def _throttle(self):
        if self._rpm is None:
            return
        with self._lock:
            now = time.monotonic()
            while self._dispatch_times and now - self._dispatch_times[0] > 60.0:
                self._dispatch_times.popleft()
            wait = 0.0
            if len(self._dispatch_times) >= self._rpm:
                wait = 60.0 - (now - self._dispatch_times[0])
            self._dispatch_times.append(now + max(0.0, wait))
        if wait > 0:
            self.sleep(wait)

    def _dispatch(self, request):
        if not isinstance(self.backend, RemoteBackend):
            return self.backend.complete(request)
        last = None
        for attempt in range(self.retry.attempts):
            self._throttle()
            try:
                with self._remote_sem:
                    return self.backend.complete(request)
            except RemoteTimeoutError as exc:
                last = exc
                if attempt + 1 < self.retry.attempts:
                    self.sleep(self.retry.backoffs[min(attempt, len(self.retry.backoffs) - 1)])
        raise last

    def complete(self, request: LlmRequest) -> str:
        """Run one request; raises before dispatch when over budget."""
        base = {
            "tag": request.tag,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if len(request.prompt) > self.prompt_budget:
            err = PromptTooLongError(
                f"prompt of {len(request.prompt)} chars exceeds budget {self.prompt_budget}")
            self._log_line({**base, "error": "PromptTooLong", "message": str(err)})
            raise err
        try:
            response = self._dispatch(request)
        except Exception as exc:
            self._log_line({**base, "error": type(exc).__name__, "message": str(exc)})
            raise
        self._log_line({**base, "response": response})
        return response


def record_fixtures(transcript_path, out_path) -> int:
    """Convert a transcript into a replayable fixture file.

    Keys responses by request_key; on duplicate keys with differing
    responses the last writer wins and a warning is logged. Returns the
    number of fixture entries written.
    """
    fixtures = {}
    with open(transcript_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict) or "prompt" not in rec:
                    raise ValueError("not a transcript record")
            except ValueError as exc:
                raise CorruptTranscriptError(
                    f"{transcript_path}:{line_no}: {exc}") from None
            if "response" not in rec:
                continue  # failed call; nothing to replay
            key = request_key(rec["prompt"], rec.get("temperature", 0.0),
                              rec.get("max_tokens", DEFAULT_MAX_TOKENS))
            if key in fixtures and fixtures[key] != rec["response"]:
                log.warning("duplicate prompt with differing responses at line %d; "
                            "last writer wins", line_no)
            fixtures[key] = rec["response"]
    with open(out_path, "w", encoding="utf-8") as fh:
        for key, response in fixtures.items():
            fh.write(json.dumps({"key": key, "response": response},
                                ensure_ascii=False) + "\n")
    return len(fixtures)


def make_backend(spec) -> LlmBackend:
    """Backend from a config string ("echo", "replay:<path>", ...) or dict."""
    if isinstance(spec, str):
        name, _, arg = spec.partition(":")
        if name == "echo":
            return EchoBackend()
        if name in ("replay", "fixture-replay"):
            if not arg:
                raise ConfigError("replay backend needs a fixture path: replay:<path>")
            return FixtureReplayBackend(arg)
        if name in ("scripted", "scripted-mock"):
            if not arg:
                raise ConfigError("scripted backend needs a JSON path: scripted:<path>")
            with open(arg, encoding="utf-8") as fh:
                cfg = json.load(fh)
            return ScriptedBackend(responses=cfg.get("responses"),
                                   default=cfg.get("default"))
        if name == "remote":
            raise ConfigError("remote backend needs a dict config with endpoint and model")
        raise ConfigError(f"unknown backend {spec!r}")
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind in ("echo", "echo-mock"):
            return EchoBackend(default=spec.get("default", "NO-ANSWER"))
        if kind in ("scripted", "scripted-mock"):
            return ScriptedBackend(responses=spec.get("responses"),
                                   default=spec.get("default"))
        if kind in ("replay", "fixture-replay"):
            return FixtureReplayBackend(spec["path"])
        if kind == "remote":
            return RemoteBackend(endpoint=spec["endpoint"], model=spec["model"],
                                 api_key_env=spec.get("api_key_env", "LLM_API_KEY"),
                                 timeout=spec.get("timeout", 30.0))
        raise ConfigError(f"unknown backend kind {kind!r}")
    raise ConfigError(f"cannot build a backend from {type(spec).__name__}")
