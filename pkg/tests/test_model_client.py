import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import httpx
import numpy as np
import pytest

from vdcal.enumeration import tree_sweep
from vdcal.model_client import (DistributionRecord, EndpointConfig, FileModel, JudgeClient, JudgeLabeler,
                                LoadError, MissingPrefixError, RemoteModel, RemoteStatusError, RemoteTimeoutError,
                                SchemaError, Vocabulary, extract_json_object, judge, load_distributions,
                                parse_verdict, render_judge_prompt, write_records)

RECORD = {"prefix": ["a"], "candidates": [{"token": "x", "logprob": -0.1}, {"token": "y", "logprob": -2.4}]}


def fast_config(url="http://model.test/next", **kw):
    return EndpointConfig(url, max_retries=kw.pop("max_retries", 2), backoff=0.0, **kw)


# records and files

def test_record_validation():
    with pytest.raises(SchemaError):
        DistributionRecord((), ())
    with pytest.raises(SchemaError):
        DistributionRecord((), (("x", -1.0), ("x", -2.0)))
    with pytest.raises(SchemaError):
        DistributionRecord((), (("x", float("nan")),))
    with pytest.raises(SchemaError):
        DistributionRecord.from_json({"prefix": [], "candidates": [{"token": "x"}]})


def test_jsonl_roundtrip(tmp_path):
    recs = [DistributionRecord.from_json(RECORD),
            DistributionRecord((), (("a", -0.5), ("b", -1.5), ("c", -0.9)), {"model": "m"})]
    path = tmp_path / "d.jsonl"
    write_records(path, recs)
    model = load_distributions(path)
    for r in recs:
        got = model.query(list(r.prefix))
        lp = np.array([l for _, l in r.candidates])
        oracle = np.exp(lp - lp.max()) / np.exp(lp - lp.max()).sum()
        by_token = dict(zip(model.vocab.decode(got.tokens), got.probs))
        for (tok, _), p in zip(r.candidates, oracle):
            assert by_token[tok] == pytest.approx(p, abs=1e-12)
        assert list(got.probs) == sorted(got.probs, reverse=True)


def test_missing_prefix(tmp_path):
    model = FileModel([DistributionRecord.from_json(RECORD)])
    with pytest.raises(MissingPrefixError):
        model.query(["zzz"])
    with pytest.raises(KeyError):
        model(model.vocab.encode(["b"]))


def test_load_errors_name_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(RECORD) + "\n{not json\n")
    with pytest.raises(LoadError, match=":2:"):
        load_distributions(path)
    path.write_text(json.dumps(RECORD) + "\n\n" + json.dumps(RECORD) + "\n")
    with pytest.raises(LoadError, match=":3:.*duplicate"):
        load_distributions(path)


def test_vocabulary_assigns_ids():
    v = Vocabulary(["a", "b"])
    assert v.encode(["b", "c"]) == (1, 2)
    assert v.decode([2, 0]) == ["c", "a"]
    assert len(v) == 3


# remote model over a mock transport

def json_transport(handler):
    calls = []

    def wrapped(request):
        calls.append(json.loads(request.content))
        return handler(request, len(calls))

    return httpx.MockTransport(wrapped), calls


def test_remote_fixed_record_and_cache():
    transport, calls = json_transport(lambda r, n: httpx.Response(200, json={"candidates": RECORD["candidates"]}))
    model = RemoteModel(fast_config(top=50), transport=transport)
    d = model.query(["a"])
    assert d.probs[0] == pytest.approx(1 / (1 + math.exp(-2.3)), abs=1e-12)
    model.query(["a"])
    assert calls == [{"prefix": ["a"], "top": 50}]


def test_remote_sorts_candidates():
    cands = [{"token": "lo", "logprob": -3.0}, {"token": "hi", "logprob": -0.2}]
    transport, _ = json_transport(lambda r, n: httpx.Response(200, json={"candidates": cands}))
    model = RemoteModel(fast_config(), transport=transport)
    d = model.query([])
    assert model.vocab.decode(d.tokens) == ["hi", "lo"]


@pytest.mark.parametrize("body", [b'{"candidates": [{"token": "x", "logp', b'{"other": 1}', b"[1, 2]"])
def test_remote_schema_errors(body):
    transport, _ = json_transport(lambda r, n: httpx.Response(200, content=body))
    with pytest.raises(SchemaError):
        RemoteModel(fast_config(), transport=transport).query([])


def test_remote_retries_then_status_error():
    transport, calls = json_transport(lambda r, n: httpx.Response(500, text="boom"))
    with pytest.raises(RemoteStatusError) as exc:
        RemoteModel(fast_config(max_retries=2), transport=transport).query([])
    assert exc.value.status == 500 and len(calls) == 3


def test_remote_recovers_after_transient():
    def handler(r, n):
        return httpx.Response(503) if n == 1 else httpx.Response(200, json={"candidates": RECORD["candidates"]})

    transport, calls = json_transport(handler)
    RemoteModel(fast_config(), transport=transport).query([])
    assert len(calls) == 2


def test_remote_client_error_not_retried():
    transport, calls = json_transport(lambda r, n: httpx.Response(401))
    with pytest.raises(RemoteStatusError):
        RemoteModel(fast_config(), transport=transport).query([])
    assert len(calls) == 1


def test_remote_timeout():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    with pytest.raises(RemoteTimeoutError):
        RemoteModel(fast_config(max_retries=1), transport=httpx.MockTransport(handler)).query([])


def test_endpoint_from_env(monkeypatch):
    monkeypatch.setenv("VDCAL_MODEL_URL", "http://x/y")
    monkeypatch.setenv("VDCAL_MODEL_MAX_IN_FLIGHT", "3")
    cfg = EndpointConfig.from_env("MODEL", timeout=2.0)
    assert (cfg.url, cfg.max_in_flight, cfg.timeout) == ("http://x/y", 3, 2.0)


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        n = len(body["prefix"])
        out = {"candidates": [{"token": str(i), "logprob": -float(i + n)} for i in range(3)]}
        data = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def test_real_http_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        model = RemoteModel(fast_config(f"http://127.0.0.1:{server.server_port}/"))
        d = model(())
        w = np.exp(-np.arange(3.0))
        assert np.allclose(d.probs, w / w.sum(), atol=1e-12)
        model.close()
    finally:
        server.shutdown()


# judge protocol

def test_verdict_valid():
    v = parse_verdict('{"reason": "ok", "grammar": 10, "semantic": 9, "overall": 9}')
    assert v.label is True and v.scores == {"grammar": 10, "semantic": 9, "overall": 9}


def test_verdict_invalid_grammar():
    assert parse_verdict('{"reason": "typo", "grammar": 8, "semantic": 10, "overall": 10}').label is False


def test_verdict_with_prose():
    reply = 'Sure! Here is my evaluation:\n{"reason": "has {braces} inside", "grammar": 9, ' \
            '"semantic": 9, "overall": 9}\nThanks.'
    v = parse_verdict(reply)
    assert v.label is True and v.reason == "has {braces} inside"


def test_verdict_out_of_range():
    with pytest.raises(SchemaError):
        parse_verdict('{"reason": "", "grammar": 11, "semantic": 9, "overall": 9}')
    with pytest.raises(SchemaError):
        parse_verdict('{"reason": "", "grammar": "nine", "semantic": 9, "overall": 9}')


def test_verdict_unparseable():
    v = parse_verdict("I cannot evaluate this.")
    assert v.label is None and not v.parsed


def test_extract_json_object():
    assert extract_json_object('x {"a": {"b": 1}} y {"c": 2}') == {"a": {"b": 1}}
    assert extract_json_object("{broken {\"ok\": 1}") == {"ok": 1}
    assert extract_json_object("nothing") is None


def test_prompt_template():
    p = render_judge_prompt("Name a US state.", "Ohio")
    assert "Name a US state." in p and "Ohio" in p
    assert "{question}" not in p and "{shot}" not in p


def test_judge_client_roundtrip():
    reply = {"text": '{"reason": "fine", "grammar": 9, "semantic": 9, "overall": 10}'}
    transport, calls = json_transport(lambda r, n: httpx.Response(200, json=reply))
    client = JudgeClient(fast_config("http://judge.test/"), transport=transport)
    assert judge("Q?", "A.", client).label is True
    assert set(calls[0]) == {"system", "prompt"} and "A." in calls[0]["prompt"]
    assert judge("Q?", "A.", client, threshold=10).label is False


def test_judge_labeler_in_tree_sweep():
    transport, _ = json_transport(lambda r, n: httpx.Response(500))
    client = JudgeClient(fast_config("http://judge.test/", max_retries=0), transport=transport)
    labeler = JudgeLabeler(client, "Q?", lambda seq: " ".join(map(str, seq)))
    from vdcal.enumeration import UniformModel
    tree = tree_sweep(UniformModel(3), 1, 3, 1, labeler=labeler)
    assert tree.warnings == 3
    assert {k.label for k in tree.children(0)} == {"unlabeled"}
