"""LLM gateway: mocks, budget, transcript, fixtures, remote retry logic."""

import json
import threading

import pytest

import lexjudge.llm as llm_mod
from lexjudge.errors import (
    ConfigError,
    CorruptTranscriptError,
    FixtureMissError,
    PromptTooLongError,
    RemoteRefusalError,
    RemoteTimeoutError,
)
from lexjudge.llm import (
    EchoBackend,
    FixtureReplayBackend,
    LlmClient,
    LlmRequest,
    RemoteBackend,
    ScriptedBackend,
    extract_candidates,
    make_backend,
    prompt_sha256,
    record_fixtures,
    request_key,
)

JUDGE_LIKE_PROMPT = (
    "Case facts (reorganized):\nSubjective motivation: x\n\n"
    "Candidate charges:\n  1. theft\n  2. fraud\n\n"
    "Answer on a single line in the form LABEL: <label>."
)


class TestEchoBackend:
    def test_returns_first_candidate(self):
        backend = EchoBackend()
        out = backend.complete(LlmRequest(JUDGE_LIKE_PROMPT, tag="judge.charge:c1"))
        assert out == "LABEL: theft"

    def test_same_prompt_same_answer(self):
        backend = EchoBackend()
        req = LlmRequest(JUDGE_LIKE_PROMPT, tag="judge.charge:c1")
        assert backend.complete(req) == backend.complete(req)

    def test_reorg_prompts_get_parseable_triple(self):
        backend = EchoBackend()
        prompt = "summarize the following facts.\nFacts: one two three four five six seven"
        out = backend.complete(LlmRequest(prompt, tag="reorg:c1"))
        assert out.startswith("SUB: ") and "\nOBJ: " in out and "\nEX: " in out

    def test_no_candidates_yields_default(self):
        backend = EchoBackend()
        assert backend.complete(LlmRequest("no candidates here", tag="judge.x:c"))\
            == "NO-ANSWER"


class TestScriptedBackend:
    def test_exact_prompt_match(self):
        backend = ScriptedBackend(responses={"prompt-a": "盗窃"})
        assert backend.complete(LlmRequest("prompt-a")) == "盗窃"

    def test_prompt_hash_match(self):
        backend = ScriptedBackend(responses={prompt_sha256("prompt-b"): "盗窃"})
        assert backend.complete(LlmRequest("prompt-b")) == "盗窃"

    def test_responder_wins_and_may_inject_errors(self):
        def responder(request):
            if request.tag == "boom":
                raise RemoteTimeoutError("injected")
            return "ok"
        backend = ScriptedBackend(responder=responder)
        assert backend.complete(LlmRequest("x", tag="fine")) == "ok"
        with pytest.raises(RemoteTimeoutError):
            backend.complete(LlmRequest("x", tag="boom"))

    def test_miss_without_default_raises(self):
        with pytest.raises(FixtureMissError):
            ScriptedBackend().complete(LlmRequest("unseen"))


class TestClientBudgetAndTranscript:
    def test_over_budget_fails_before_dispatch(self, tmp_path):
        calls = []

        def responder(request):
            calls.append(request.prompt)
            return "ok"

        client = LlmClient(ScriptedBackend(responder=responder),
                           transcript_path=tmp_path / "t.jsonl", prompt_budget=10)
        with pytest.raises(PromptTooLongError):
            client.complete(LlmRequest("x" * 11))
        assert calls == []  # never dispatched
        assert client.complete(LlmRequest("x" * 10)) == "ok"

    def test_transcript_line_count_equals_calls(self, tmp_path):
        path = tmp_path / "t.jsonl"
        client = LlmClient(EchoBackend(), transcript_path=path, prompt_budget=50)
        client.complete(LlmRequest(JUDGE_LIKE_PROMPT[:40], tag="a"))
        with pytest.raises(PromptTooLongError):
            client.complete(LlmRequest("y" * 60, tag="b"))
        client.complete(LlmRequest("hello", tag="c"))
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == client.calls == 3
        recs = [json.loads(l) for l in lines]
        assert recs[1]["error"] == "PromptTooLong"
        assert "response" in recs[0] and "response" in recs[2]

    def test_concurrent_calls_all_logged(self, tmp_path):
        path = tmp_path / "t.jsonl"
        client = LlmClient(EchoBackend(), transcript_path=path)
        threads = [threading.Thread(
            target=lambda i=i: client.complete(LlmRequest(f"p{i}", tag=f"t{i}")))
            for i in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert client.calls == 16
        assert len(path.read_text(encoding="utf-8").splitlines()) == 16


class TestFixtures:
    def _transcribe(self, tmp_path, pairs):
        path = tmp_path / "transcript.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for prompt, response in pairs:
                fh.write(json.dumps({"tag": "", "prompt": prompt, "temperature": 0.0,
                                     "max_tokens": 512, "response": response}) + "\n")
        return path

    def test_empty_transcript_empty_fixture(self, tmp_path):
        transcript = tmp_path / "t.jsonl"
        transcript.write_text("", encoding="utf-8")
        out = tmp_path / "f.jsonl"
        assert record_fixtures(transcript, out) == 0
        assert out.read_text(encoding="utf-8") == ""

    def test_round_trip_replays_byte_exact(self, tmp_path):
        transcript = self._transcribe(tmp_path, [("p1", "r1"), ("p2", "响应2")])
        out = tmp_path / "f.jsonl"
        assert record_fixtures(transcript, out) == 2
        backend = FixtureReplayBackend(out)
        assert backend.complete(LlmRequest("p1")) == "r1"
        assert backend.complete(LlmRequest("p2")) == "响应2"

    def test_replay_miss_names_key(self, tmp_path):
        transcript = self._transcribe(tmp_path, [("p1", "r1")])
        out = tmp_path / "f.jsonl"
        record_fixtures(transcript, out)
        backend = FixtureReplayBackend(out)
        with pytest.raises(FixtureMissError) as exc:
            backend.complete(LlmRequest("unseen"))
        assert exc.value.key == request_key("unseen", 0.0, 512)

    def test_duplicate_prompt_last_writer_wins_with_warning(self, tmp_path, caplog):
        transcript = self._transcribe(tmp_path, [("p1", "old"), ("p1", "new")])
        out = tmp_path / "f.jsonl"
        with caplog.at_level("WARNING", logger="lexjudge.llm"):
            assert record_fixtures(transcript, out) == 1
        assert any("last writer wins" in r.message for r in caplog.records)
        assert FixtureReplayBackend(out).complete(LlmRequest("p1")) == "new"

    def test_corrupt_transcript(self, tmp_path):
        transcript = tmp_path / "t.jsonl"
        transcript.write_text("{broken\n", encoding="utf-8")
        with pytest.raises(CorruptTranscriptError):
            record_fixtures(transcript, tmp_path / "f.jsonl")

    def test_whitespace_change_is_a_cache_miss(self, tmp_path):
        transcript = self._transcribe(tmp_path, [("p1", "r1")])
        out = tmp_path / "f.jsonl"
        record_fixtures(transcript, out)
        with pytest.raises(FixtureMissError):
            FixtureReplayBackend(out).complete(LlmRequest("p1 "))


class TestRemoteRetry:
    def _client(self, backend, sleeps):
        return LlmClient(backend, retry=llm_mod.RetryPolicy(attempts=3,
                                                            backoffs=(1.0, 4.0, 16.0)),
                         sleep=sleeps.append)

    def test_timeouts_retried_with_backoff(self, monkeypatch):
        attempts = []

        def fake_complete(self, request):
            attempts.append(1)
            raise RemoteTimeoutError("timed out")

        monkeypatch.setattr(RemoteBackend, "complete", fake_complete)
        monkeypatch.setenv("LLM_API_KEY", "k")
        sleeps = []
        client = self._client(RemoteBackend("http://localhost:9", "m"), sleeps)
        with pytest.raises(RemoteTimeoutError):
            client.complete(LlmRequest("p"))
        assert len(attempts) == 3
        assert sleeps == [1.0, 4.0]

    def test_refusals_not_retried(self, monkeypatch):
        attempts = []

        def fake_complete(self, request):
            attempts.append(1)
            raise RemoteRefusalError("nope")

        monkeypatch.setattr(RemoteBackend, "complete", fake_complete)
        monkeypatch.setenv("LLM_API_KEY", "k")
        sleeps = []
        client = self._client(RemoteBackend("http://localhost:9", "m"), sleeps)
        with pytest.raises(RemoteRefusalError):
            client.complete(LlmRequest("p"))
        assert len(attempts) == 1
        assert sleeps == []

    def test_mock_errors_never_retried(self):
        attempts = []

        def responder(request):
            attempts.append(1)
            raise RemoteTimeoutError("injected")

        sleeps = []
        client = LlmClient(ScriptedBackend(responder=responder), sleep=sleeps.append)
        with pytest.raises(RemoteTimeoutError):
            client.complete(LlmRequest("p"))
        assert len(attempts) == 1
        assert sleeps == []

    def test_missing_credential(self):
        backend = RemoteBackend("http://localhost:9", "m", api_key_env="NO_SUCH_KEY")
        with pytest.raises(ConfigError):
            backend.complete(LlmRequest("p"))


def test_extract_candidates_contract():
    assert extract_candidates(JUDGE_LIKE_PROMPT) == ["theft", "fraud"]
    assert extract_candidates("no lists here") == []


class TestRemoteHttp:
    """Happy path over a real local HTTP server."""

    def test_chat_completions_contract(self, monkeypatch):
        import http.server

        received = {}

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                received["payload"] = json.loads(self.rfile.read(length))
                received["auth"] = self.headers.get("Authorization")
                body = json.dumps(
                    {"choices": [{"message": {"content": "LABEL: theft"}}]}
                ).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            monkeypatch.setenv("LLM_API_KEY", "sekrit")
            backend = RemoteBackend(
                f"http://127.0.0.1:{server.server_port}/v1/chat/completions",
                model="test-model")
            out = backend.complete(LlmRequest("pick one", temperature=0.0,
                                              max_tokens=64, tag="judge.charge:c1"))
            assert out == "LABEL: theft"
            assert received["payload"]["model"] == "test-model"
            assert received["payload"]["messages"] == [
                {"role": "user", "content": "pick one"}]
            assert received["payload"]["max_tokens"] == 64
            assert received["auth"] == "Bearer sekrit"
        finally:
            server.shutdown()

    def test_http_500_maps_to_retryable_timeout(self, monkeypatch):
        import http.server

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                self.send_response(500)
                self.send_header("Content-Length", "0")
                self.end_headers()

            def log_message(self, *args):
                pass

        server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            monkeypatch.setenv("LLM_API_KEY", "k")
            backend = RemoteBackend(f"http://127.0.0.1:{server.server_port}/v1",
                                    model="m")
            with pytest.raises(RemoteTimeoutError):
                backend.complete(LlmRequest("p"))
        finally:
            server.shutdown()


class TestMakeBackend:
    def test_string_forms(self, tmp_path):
        assert isinstance(make_backend("echo"), EchoBackend)
        fixture = tmp_path / "f.jsonl"
        fixture.write_text(json.dumps({"key": "k", "response": "r"}) + "\n",
                           encoding="utf-8")
        assert isinstance(make_backend(f"replay:{fixture}"), FixtureReplayBackend)
        with pytest.raises(ConfigError):
            make_backend("wat")

    def test_dict_forms(self):
        assert isinstance(make_backend({"kind": "echo"}), EchoBackend)
        assert isinstance(make_backend({"kind": "scripted", "default": "x"}),
                          ScriptedBackend)
        remote = make_backend({"kind": "remote", "endpoint": "http://x", "model": "m"})
        assert isinstance(remote, RemoteBackend)
        with pytest.raises(ConfigError):
            make_backend({"kind": "wat"})
