import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from embed_curation.core import ClipRecord, NarrationRecord, ValidationError, validate
from embed_curation.ingest import filter_ego_narrations
from embed_curation.narration import (
    FEW_SHOT_PAIRS,
    CompletionRequest,
    DegenerateCompletion,
    EmptyCompletion,
    HttpCompletionClient,
    ServiceError,
    StubCompletionClient,
    TransientServiceError,
    build_rephrase_prompt,
    caption_from_dict,
    clip_key,
    filter_alignability,
    filter_perplexity,
    group_by_clip,
    ingest_narrator_captions,
    merge_narrations,
    rephrase,
    rephrase_all,
)

GOLDEN = Path(__file__).parent / "golden" / "rephrase_prompt.txt"


def asr(text="let's start by turning on my stove", align=0.9, t=1.0, vid="v"):
    return NarrationRecord(vid, t, text, "original_asr", alignability=align)


def gen(ppl, t=2.5, vid="v", start=0.0):
    return NarrationRecord(
        vid, t, "#C C holds the bowl", "narrator_generated", perplexity=ppl,
        generation_meta={"clip_start_s": start, "clip_end_s": start + 5.0},
    )


# --- alignability --------------------------------------------------------------


def test_unalignable_sentence_dropped():
    res = filter_alignability([asr("i cannot wait to dig in and enjoy it on the outside", 0.05)])
    assert not res.kept and len(res.dropped) == 1


def test_alignability_boundary_kept():
    assert len(filter_alignability([asr(align=0.5)]).kept) == 1


def test_missing_score_needs_scoring():
    res = filter_alignability([asr(align=None), asr(align=0.7)])
    assert len(res.needs_scoring) == 1 and len(res.kept) == 1
    assert res.counts == {"input": 2, "kept": 1, "dropped": 0, "needs_scoring": 1}


def test_alignability_against_scan():
    rng = np.random.default_rng(2)
    scores = rng.uniform(size=100)
    res = filter_alignability([asr(align=float(s)) for s in scores])
    assert len(res.kept) == sum(1 for s in scores if s >= 0.5)
    assert len(res.kept) + len(res.dropped) == 100


@given(st.lists(st.one_of(st.none(), st.floats(0, 1)), max_size=30), st.floats(0, 1), st.randoms())
def test_alignability_idempotent_and_order_free(scores, thr, rnd):
    recs = [asr(align=s, t=float(i)) for i, s in enumerate(scores)]
    once = filter_alignability(recs, thr)
    assert filter_alignability(once.kept, thr).kept == once.kept
    shuffled = recs[:]
    rnd.shuffle(shuffled)
    again = filter_alignability(shuffled, thr)
    assert set(again.kept) == set(once.kept)
    assert sum(once.counts[k] for k in ("kept", "dropped", "needs_scoring")) == len(recs)


# --- perplexity ---------------------------------------------------------------


def test_perplexity_examples():
    recs = [gen(2.0), gen(8.0), gen(50.0)]
    assert [r.perplexity for r in filter_perplexity(recs, 10).kept] == [2.0, 8.0]
    assert len(filter_perplexity(recs, float("inf")).kept) == 3
    assert len(filter_perplexity(recs, 1.0).dropped) == 3


@given(st.lists(st.floats(0.5, 100), max_size=30), st.floats(0.5, 100))
def test_perplexity_idempotent(ppls, thr):
    once = filter_perplexity([gen(p) for p in ppls], thr)
    assert len(once.kept) + len(once.dropped) == len(ppls)
    assert filter_perplexity(once.kept, thr).kept == once.kept


def test_ego_filter_idempotent():
    recs = [NarrationRecord("e", float(i), t, "ego_manual") for i, t in enumerate(
        ["#C C opens door", "#C C picks up the knife", "#C C #unsure holds it up", "#C C washes the plate"]
    )]
    kept, rep = filter_ego_narrations(recs)
    assert rep.kept + rep.dropped_unsure + rep.dropped_short == rep.input_count == 4
    assert filter_ego_narrations(kept)[0] == kept


# --- prompt -------------------------------------------------------------------


def test_prompt_matches_golden():
    text = build_rephrase_prompt("<Input>").render()
    assert text.encode("utf-8") == GOLDEN.read_bytes()


def test_published_pair_verbatim():
    rendered = build_rephrase_prompt("hello there").render()
    assert "User: let's start by turning on my stove\nAssistant: turn on the stove\n" in rendered
    assert rendered.endswith("User: hello there\n")


def test_prompt_preconditions():
    with pytest.raises(ValueError):
        build_rephrase_prompt("x", [])
    with pytest.raises(ValueError):
        build_rephrase_prompt("   ")


def test_prompt_is_pure():
    pairs = [("a b", "c"), ("d", "e f")]
    assert build_rephrase_prompt("q", pairs).render() == build_rephrase_prompt("q", list(pairs)).render()
    assert len(FEW_SHOT_PAIRS) == 3


# --- rephrase -----------------------------------------------------------------


def test_worked_rephrase():
    client = StubCompletionClient({"i'm just gonna start by cutting it in half": "a person cuts it in half"})
    src = asr("i'm just gonna start by cutting it in half")
    out = rephrase(src, client)
    assert out.text == "a person cuts it in half"
    assert out.source == "rephrased"
    assert out.generation_meta["original"] == src.text
    assert src.source == "original_asr" and src.generation_meta is None
    assert validate(out).ok


def test_role_prefix_and_whitespace_stripped():
    client = StubCompletionClient(script=["  Assistant: turn on the stove  \nUser: more"])
    assert rephrase(asr(), client).text == "turn on the stove"


def test_request_shape():
    client = StubCompletionClient(script=["ok"])
    rephrase(asr(), client)
    body = client.calls[0].to_json()
    assert list(body) == ["prompt", "max_tokens", "temperature", "stop"]
    assert body["prompt"].endswith("User: let's start by turning on my stove\n")


def test_empty_completion_goes_to_failure_queue():
    src = asr()
    done, failed = rephrase_all([src], StubCompletionClient(script=[""]), max_in_flight=1)
    assert done == [] and failed[0].narration == src
    with pytest.raises(EmptyCompletion):
        rephrase(src, StubCompletionClient(script=["   "]))


def test_degenerate_completion():
    with pytest.raises(DegenerateCompletion):
        rephrase(asr(), StubCompletionClient(script=["word " * 65]))


def test_retries_with_backoff():
    waits = []
    client = StubCompletionClient(script=[TransientServiceError("503")] * 3 + ["turn it on"])
    out = rephrase(asr(), client, sleep=waits.append)
    assert out.text == "turn it on"
    assert waits == [0.5, 1.0, 2.0]


def test_retries_exhausted():
    client = StubCompletionClient(script=[TransientServiceError("503")] * 4)
    with pytest.raises(TransientServiceError):
        rephrase(asr(), client, sleep=lambda s: None)
    assert len(client.calls) == 4


def test_permanent_error_not_retried():
    client = StubCompletionClient(script=[ServiceError("400")])
    with pytest.raises(ServiceError):
        rephrase(asr(), client, sleep=lambda s: None)
    assert len(client.calls) == 1


def test_rephrase_all_keeps_input_order():
    recs = [asr(f"now we cut piece {i}", t=float(i)) for i in range(40)]
    done, failed = rephrase_all(recs, StubCompletionClient(), max_in_flight=8)
    assert not failed
    assert [r.generation_meta["original"] for r in done] == [r.text for r in recs]


def test_unchanged_flag_and_drop():
    client = StubCompletionClient(rewrite=None)
    done, _ = rephrase_all([asr("cut the onion")], client)
    assert done[0].generation_meta["unchanged"] is True
    dropped, _ = rephrase_all([asr("cut the onion")], client, keep_unchanged=False)
    assert dropped == []


class _Handler(BaseHTTPRequestHandler):
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Handler.seen.append((body, self.headers.get("Authorization")))
        if body["prompt"].endswith("User: fail\n"):
            self.send_response(503)
            self.end_headers()
            return
        payload = json.dumps({"text": "Assistant: a person cuts it", "token_logprobs": [-0.1, -0.2]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield f"http://127.0.0.1:{srv.server_port}/complete"
    srv.shutdown()


def test_http_client_round_trip(server, monkeypatch):
    monkeypatch.setenv("EMBED_LLM_URL", server)
    monkeypatch.setenv("EMBED_LLM_TOKEN", "secret")
    client = HttpCompletionClient()
    resp = client.complete(CompletionRequest("User: x\n"))
    assert resp.token_logprobs == (-0.1, -0.2)
    assert _Handler.seen[-1][1] == "Bearer secret"
    assert rephrase(asr(), client).text == "a person cuts it"
    with pytest.raises(TransientServiceError):
        client.complete(CompletionRequest("User: fail\n"))


def test_http_client_needs_url(monkeypatch):
    monkeypatch.delenv("EMBED_LLM_URL", raising=False)
    with pytest.raises(ServiceError):
        HttpCompletionClient()


# --- captions -----------------------------------------------------------------


def test_caption_well_formed():
    rec = caption_from_dict({
        "video_id": "v", "start_s": 0.0, "end_s": 5.0, "text": "#C C cuts the onion",
        "perplexity": 3.2, "generation_meta": {"sampling_strategy": "beam", "beam_size": 5},
    })
    assert rec.source == "narrator_generated"
    assert rec.generation_meta["beam_size"] == 5
    assert rec.timestamp_s == 2.5


def test_caption_without_perplexity_rejected(tmp_path):
    with pytest.raises(ValidationError):
        caption_from_dict({"video_id": "v", "start_s": 0.0, "end_s": 5.0, "text": "x"})
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"video_id": "v", "start_s": 0.0, "end_s": 5.0, "text": "x"}) + "\n")
    recs, rep = ingest_narrator_captions(p)
    assert recs == [] and rep.rejected == 1
    with pytest.raises(ValidationError):
        ingest_narrator_captions(p, strict=True)


def test_twenty_caption_fixture(tmp_path):
    p = tmp_path / "c.jsonl"
    with open(p, "w") as fh:
        for i in range(20):
            fh.write(json.dumps({"video_id": f"v{i % 3}", "start_s": 5.0 * i, "end_s": 5.0 * i + 5,
                                 "text": f"#C C step {i}", "perplexity": 1.0 + i}) + "\n")
    recs, rep = ingest_narrator_captions(p)
    assert len(recs) == rep.ingested == sum(1 for _ in open(p)) == 20


# --- merge --------------------------------------------------------------------


def test_merge_policies():
    key = clip_key("v", 0.0)
    r = {key: [asr()]}
    g = {key: [gen(2.0)], clip_key("v", 5.0): [gen(3.0, start=5.0)]}
    both = merge_narrations(r, g)
    assert len(both[key]) == 2
    assert len(both[clip_key("v", 5.0)]) == 1
    pref = merge_narrations(r, g, "prefer_rephrased")
    assert [n.source for n in pref[key]] == ["original_asr"]
    assert [n.source for n in merge_narrations(r, g, "prefer_generated")[key]] == ["narrator_generated"]
    with pytest.raises(ValueError):
        merge_narrations(r, g, "neither")


def test_group_by_clip():
    c = ClipRecord("v", 5.0, 10.0, (7.5,))
    assert group_by_clip([(c, asr(t=6.0)), (c, asr(t=7.0))]) == {("v", 5.0): [asr(t=6.0), asr(t=7.0)]}
