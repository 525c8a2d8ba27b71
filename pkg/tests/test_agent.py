import numpy as np
import pytest

from pbrbake.agent import (MLLMClient, PROMPT_PREFIX, PROMPT_SUFFIX, ScoreRecord,
                           best_of_n, parse_scores, score_candidates,
                           select_albedo, stitch)
from pbrbake.errors import (AllRunsFailed, MismatchedResolutions, TransportError)
from pbrbake.testlab import MockMLLMServer


def _views(rng, res=32):
    return rng.uniform(0, 1, (6, res, res, 3))


def _client(srv, **kw):
    return MLLMClient(base_url=srv.base_url, api_key="test", **kw)


# --- prompt and stitch layout ----------------------------------------------


def test_prompt_template_exact_bytes():
    assert PROMPT_PREFIX == ("Please rate the following image based on the "
                             "prompt:\nImage (Base64 encoded): ")
    s = PROMPT_SUFFIX["each_set"].format(description="wooden chair")
    assert s == ("\nPrompt: Multi-view generated albedo images of the wooden "
                 "chair\nPlease provide a score out of 100, the higher the better.")
    assert "{description}" not in s
    two = PROMPT_SUFFIX["once"].format(description="x")
    assert "two different methods" in two and "each method" in two


def test_stitch_layouts():
    rng = np.random.default_rng(0)
    a = _views(rng, 64)
    b = _views(rng, 64)
    row = stitch(a, "single_row")
    assert row.shape == (64, 384, 3)
    np.testing.assert_array_equal(row[:, :64], a[0])
    np.testing.assert_array_equal(row[:, 320:], a[5])
    grid = stitch(a, "two_rows", second=b)
    assert grid.shape == (128, 384, 3)
    np.testing.assert_array_equal(grid[:64], row)
    np.testing.assert_array_equal(grid[64:, :64], b[0])
    np.testing.assert_array_equal(grid[0, 0], a[0, 0, 0])


def test_stitch_validation():
    rng = np.random.default_rng(1)
    with pytest.raises(MismatchedResolutions):
        stitch(_views(rng, 16)[:5], "single_row")
    with pytest.raises(MismatchedResolutions):
        stitch(_views(rng, 16), "two_rows")
    with pytest.raises(MismatchedResolutions):
        stitch(_views(rng, 16), "two_rows", second=_views(rng, 32))
    with pytest.raises(MismatchedResolutions):
        stitch(_views(rng, 16), "diagonal")


def test_parse_scores():
    assert parse_scores("Score: 87", 1) == [87.0]
    assert parse_scores("Method one: 91.5. Method two: 88.", 2) == [91.5, 88.0]
    assert parse_scores("I rate it 350, no wait, call it 72", 1) == [72.0]
    assert parse_scores("no numbers here", 1) is None
    assert parse_scores("only 91 given", 2) is None


# --- scoring over the mock judge -------------------------------------------


def test_fixed_each_set_counts_and_mean():
    rng = np.random.default_rng(2)
    with MockMLLMServer(policy="fixed", fixed_text="Score: 87") as srv:
        rec_a, rec_b = score_candidates(_views(rng), _views(rng), "thing",
                                        "each_set", _client(srv), runs=5)
    assert rec_a.mean == 87.0 and rec_b.mean == 87.0
    assert rec_a.raw_scores == (87.0,) * 5
    assert rec_a.queries_issued == 10  # 2 candidates x 5 runs
    assert rec_a.queries_issued == rec_b.queries_issued


def test_strategy_query_counts_and_token_ordering():
    rng = np.random.default_rng(3)
    a, b = _views(rng), _views(rng)
    counts, tokens = {}, {}
    with MockMLLMServer(policy="fixed", fixed_text="80 and 75") as srv:
        for strategy in ("once", "each_view", "each_set"):
            rec, _ = score_candidates(a, b, "thing", strategy, _client(srv), runs=5)
            counts[strategy] = rec.queries_issued
            tokens[strategy] = rec.tokens_prompt
    assert counts == {"once": 5, "each_view": 60, "each_set": 10}
    # one big stitch 5x < two stitches 10x < twelve single views 60x
    assert tokens["once"] < tokens["each_set"] < tokens["each_view"]


def test_scripted_scores_average():
    rng = np.random.default_rng(4)
    script = []
    for sa, sb in zip((80, 82, 78, 81, 79), (70, 70, 70, 70, 70)):
        script += [f"Score: {sa}", f"Score: {sb}"]
    with MockMLLMServer(policy="scripted", scripted=script) as srv:
        rec_a, rec_b = score_candidates(_views(rng), _views(rng), "thing",
                                        "each_set",
                                        _client(srv, max_in_flight=1), runs=5)
    assert rec_a.mean == 80.0
    assert rec_b.mean == 70.0
    sel = select_albedo((rec_a, rec_b))
    assert sel.chosen == "generated"
    assert sel.rule == "argmax_mean"


def test_tie_prefers_generated():
    rng = np.random.default_rng(5)
    with MockMLLMServer(policy="fixed", fixed_text="Score: 64") as srv:
        records = score_candidates(_views(rng), _views(rng), "thing", "each_set",
                                   _client(srv), runs=3)
    sel = select_albedo(records)
    assert sel.chosen == "generated"
    assert sel.tie_break == "prefer_generated"


def test_decomposed_wins_when_better():
    a = ScoreRecord("generated", "each_set", (60.0,), 1, 2, 0, 0)
    b = ScoreRecord("decomposed", "each_set", (61.0,), 1, 2, 0, 0)
    assert select_albedo((a, b)).chosen == "decomposed"


def test_quality_encoding_prefers_clean_albedo():
    rng = np.random.default_rng(6)
    truth = _views(rng)
    dirty = np.clip(truth * 0.7 + 0.2, 0, 1)  # baked-in lighting residual
    with MockMLLMServer(policy="quality_encoding") as srv:
        srv.register_reference(stitch(truth, "single_row"))
        rec_a, rec_b = score_candidates(truth, dirty, "thing", "each_set",
                                        _client(srv), runs=5)
    assert rec_a.mean > rec_b.mean
    assert select_albedo((rec_a, rec_b)).chosen == "generated"


def test_parse_retry_recovers_run():
    rng = np.random.default_rng(7)
    # run 1 for each candidate burns two garbage replies then parses
    script = ["hmm", "no score", "Score: 90", "hmm", "no score", "Score: 40"]
    with MockMLLMServer(policy="scripted", scripted=script) as srv:
        rec_a, rec_b = score_candidates(_views(rng), _views(rng), "thing",
                                        "each_set",
                                        _client(srv, max_in_flight=1), runs=1)
    assert rec_a.raw_scores == (90.0,)
    assert rec_b.raw_scores == (40.0,)
    assert rec_a.queries_issued == 6  # retries counted


def test_all_runs_unparseable_fails():
    rng = np.random.default_rng(8)
    script = ["gibberish"] * 6
    with MockMLLMServer(policy="scripted", scripted=script) as srv:
        with pytest.raises(AllRunsFailed):
            score_candidates(_views(rng), _views(rng), "thing", "each_set",
                             _client(srv, max_in_flight=1), runs=1)


def test_script_exhaustion_is_transport_error():
    rng = np.random.default_rng(9)
    with MockMLLMServer(policy="scripted", scripted=[]) as srv:
        with pytest.raises(TransportError):
            score_candidates(_views(rng), _views(rng), "thing", "each_set",
                             _client(srv, max_in_flight=1), runs=1)


def test_client_requires_base_url(monkeypatch):
    monkeypatch.delenv("PBRBAKE_MLLM_BASE_URL", raising=False)
    with pytest.raises(TransportError):
        MLLMClient(base_url=None)


def test_audit_log_written(tmp_path):
    import json

    rng = np.random.default_rng(10)
    audit = tmp_path / "audit.jsonl"
    with MockMLLMServer(policy="fixed", fixed_text="Score: 55") as srv:
        score_candidates(_views(rng), _views(rng), "thing", "each_set",
                         _client(srv, audit_path=audit), runs=1)
    lines = [json.loads(l) for l in audit.read_text().splitlines()]
    assert len(lines) == 2
    assert all("image_sha256" in e and "response" in e for e in lines)
    assert lines[0]["response"] == "Score: 55"


# --- best of N -------------------------------------------------------------


def test_best_of_one_skips_queries():
    idx, scores = best_of_n([("a", "m", "r")], "thing", client=None)
    assert idx == 0 and scores == []


def test_best_of_n_picks_highest_and_breaks_ties_low():
    rng = np.random.default_rng(11)
    cands = [( _views(rng), rng.uniform(0, 1, (6, 32, 32)),
               rng.uniform(0, 1, (6, 32, 32))) for _ in range(3)]
    with MockMLLMServer(policy="fixed", fixed_text="Score: 42") as srv:
        idx, scores = best_of_n(cands, "thing", _client(srv), runs=2)
    assert idx == 0  # all tied at 42 -> lowest index
    assert scores == [42.0, 42.0, 42.0]

    # scripted: candidate 1 scores higher on every channel
    script = []
    for cand_score in (50, 90, 50):
        script += [f"Score: {cand_score}"] * 9  # 3 channels x 3 runs
    with MockMLLMServer(policy="scripted", scripted=script) as srv:
        idx, scores = best_of_n(cands, "thing", _client(srv, max_in_flight=1),
                                runs=3)
    assert idx == 1
    assert scores == [50.0, 90.0, 50.0]
