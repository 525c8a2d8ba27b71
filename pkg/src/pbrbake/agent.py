"""MLLM-judge scoring and selection of candidate material sets.

Three scoring strategies over the 6-view candidate sets (score a single
stitched comparison once, score every view, or score each candidate's
stitch), 5-run averaging, albedo selection between the generated
candidate and the decomposed competitor, and an optional Best-of-N pass
over full material candidates.

The judge transport is a provider-agnostic chat-completions HTTP client
with base64-embedded images; a deterministic mock server lives in
pbrbake.testlab for tests.
"""

import hashlib
import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AllRunsFailed, MismatchedResolutions, TransportError
from .wire import encode_png_b64
from . import wire

DEFAULT_RUNS = 5
MAX_PARSE_RETRIES = 3
DEFAULT_MAX_IN_FLIGHT = 2

# Query text around the embedded image; the image itself fills the slot
# after the "Image (Base64 encoded): " line. The only varying fields are
# the asset description and (for material channels) the channel name.
PROMPT_PREFIX = "Please rate the following image based on the prompt:\nImage (Base64 encoded): "

PROMPT_SUFFIX = {
    "once": (
        "\nPrompt: Multi-view generated albedo images of the {description}\n"
        "The first line and the second line correspond to two different methods "
        "respectively. Please provide a score out of 100 for each method, "
        "the higher the better."
    ),
    "each_view": (
        "\nPrompt: Generated albedo image of the {description}\n"
        "Please provide a score out of 100, the higher the better."
    ),
    "each_set": (
        "\nPrompt: Multi-view generated albedo images of the {description}\n"
        "Please provide a score out of 100, the higher the better."
    ),
    "channel": (
        "\nPrompt: Multi-view generated {channel} images of the {description}\n"
        "Please provide a score out of 100, the higher the better."
    ),
}

STRATEGIES = ("once", "each_view", "each_set")


@dataclass(frozen=True)
class ScoreRecord:
    candidate_id: str
    strategy: str
    raw_scores: tuple          # per successful run, in [0,100]
    runs: int
    queries_issued: int        # total queries of the whole scoring pass
    tokens_prompt: int         # pass totals, recorded on every record
    tokens_completion: int

    @property
    def mean(self):
        return float(np.mean(self.raw_scores))

    def to_dict(self):
        return {
            "candidate_id": self.candidate_id, "strategy": self.strategy,
            "raw_scores": list(self.raw_scores), "mean": self.mean, "runs": self.runs,
            "queries_issued": self.queries_issued, "tokens_prompt": self.tokens_prompt,
            "tokens_completion": self.tokens_completion,
        }


@dataclass(frozen=True)
class SelectionRecord:
    candidates: tuple          # ScoreRecords
    chosen: str
    rule: str = "argmax_mean"
    tie_break: str = "prefer_generated"

    def to_dict(self):
        return {
            "candidates": [c.to_dict() for c in self.candidates], "chosen": self.chosen,
            "rule": self.rule, "tie_break": self.tie_break,
        }


def stitch(images, layout="single_row", second=None):
    """Stitch 6 views into a 1x6 grid, or two candidates into a 2x6 grid.

    For two_rows the first argument is candidate A (placed on top).
    """
    rows = [np.asarray(images, dtype=np.float64)]
    if layout == "two_rows":
        if second is None:
            raise MismatchedResolutions("two_rows layout needs a second candidate")
        rows.append(np.asarray(second, dtype=np.float64))
    elif layout != "single_row":
        raise MismatchedResolutions(f"unknown layout {layout!r}")
    out_rows = []
    ref_shape = rows[0].shape[1:]
    for row in rows:
        if row.shape[0] != 6 or row.shape[1:] != ref_shape:
            raise MismatchedResolutions("all views must share one resolution")
        imgs = [row[i] for i in range(6)]
        imgs = [im if im.ndim == 3 else np.stack([im] * 3, axis=-1) for im in imgs]
        out_rows.append(np.concatenate(imgs, axis=1))
    return np.concatenate(out_rows, axis=0)


class MLLMClient:
    """Chat-completions-style judge client with an optional audit log."""

    def __init__(self, base_url=None, api_key=None, model=None, temperature=0.0,
                 timeout=120.0, audit_path=None, max_in_flight=DEFAULT_MAX_IN_FLIGHT):
        self.base_url = (base_url or os.environ.get("PBRBAKE_MLLM_BASE_URL", "")).rstrip("/")
        if not self.base_url:
            raise TransportError("no MLLM base URL configured (PBRBAKE_MLLM_BASE_URL)")
        self.api_key = api_key or os.environ.get("PBRBAKE_MLLM_API_KEY")
        self.model = model or os.environ.get("PBRBAKE_MLLM_MODEL", "gpt-4o")
        self.temperature = temperature
        self.timeout = timeout
        self.audit_path = Path(audit_path) if audit_path else None
        self.max_in_flight = max_in_flight
        self._lock = threading.Lock()

    def query(self, image, suffix_text):
        """One judge query; returns (content, prompt_tokens, completion_tokens)."""
        b64 = encode_png_b64(image, srgb=True)
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": PROMPT_PREFIX},
                    {"type": "image_url",
                     "image_url": {"url": "data:image/png;base64," + b64}},
                    {"type": "text", "text": suffix_text},
                ],
            }],
        }
        try:
            data = wire.post_json(self.base_url + "/v1/chat/completions", payload,
                                  timeout=self.timeout)
            content = data["choices"][0]["message"]["content"]
            usage = data.get("usage", {})
        except (wire.Unreachable, wire.Timeout, wire.MalformedResponse, KeyError,
                IndexError, TypeError) as e:
            raise TransportError(str(e)) from e
        pt = int(usage.get("prompt_tokens", 0))
        ct = int(usage.get("completion_tokens", 0))
        self._audit(b64, suffix_text, content, pt, ct)
        return content, pt, ct

    def _audit(self, image_b64, text, response, pt, ct):
        if self.audit_path is None:
            return
        entry = {
            "time": time.time(), "model": self.model,
            "image_sha256": hashlib.sha256(image_b64.encode()).hexdigest(),
            "text": text, "response": response,
            "prompt_tokens": pt, "completion_tokens": ct,
        }
        with self._lock:
            with open(self.audit_path, "a") as f:
                f.write(json.dumps(entry) + "\n")


_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")


def parse_scores(text, expected):
    """First `expected` numbers in [0,100] in reading order, else None."""
    found = []
    for m in _NUMBER_RE.finditer(text):
        val = float(m.group(0))
        if 0.0 <= val <= 100.0:
            found.append(val)
        if len(found) == expected:
            return found
    return None


class _Tally:
    """Thread-safe accumulator of query/token counts for one scoring pass."""

    def __init__(self):
        self.queries = 0
        self.prompt_tokens = 0
        self.completion_tokens = 0
        self._lock = threading.Lock()

    def add(self, pt, ct):
        with self._lock:
            self.queries += 1
            self.prompt_tokens += pt
            self.completion_tokens += ct


def _query_scores(client, image, suffix, expected, tally):
    """Query with parse retries; returns scores or None if the run is lost."""
    for _ in range(MAX_PARSE_RETRIES):
        content, pt, ct = client.query(image, suffix)
        tally.add(pt, ct)
        scores = parse_scores(content, expected)
        if scores is not None:
            return scores
    return None


def _run_map(client, jobs):
    """Execute query jobs with bounded concurrency, preserving job order."""
    with ThreadPoolExecutor(max_workers=client.max_in_flight) as pool:
        futures = [pool.submit(fn) for fn in jobs]
        return [f.result() for f in futures]


def score_candidates(a_views, a_prime_views, description, strategy, client,
                     runs=DEFAULT_RUNS):
    """Score the generated albedo set against the decomposed competitor.

    Returns (ScoreRecord for a, ScoreRecord for a_prime). Query and token
    counts are totals for the whole pass, recorded on both records.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    tally = _Tally()
    scores_a, scores_b = [], []

    if strategy == "once":
        image = stitch(a_views, "two_rows", second=a_prime_views)
        suffix = PROMPT_SUFFIX["once"].format(description=description)
        results = _run_map(client, [
            (lambda: _query_scores(client, image, suffix, 2, tally))
            for _ in range(runs)])
        for res in results:
            if res is not None:
                scores_a.append(res[0])
                scores_b.append(res[1])
    elif strategy == "each_set":
        img_a = stitch(a_views, "single_row")
        img_b = stitch(a_prime_views, "single_row")
        suffix = PROMPT_SUFFIX["each_set"].format(description=description)
        jobs = []
        for _ in range(runs):
            jobs.append(lambda: _query_scores(client, img_a, suffix, 1, tally))
            jobs.append(lambda: _query_scores(client, img_b, suffix, 1, tally))
        results = _run_map(client, jobs)
        for r in range(runs):
            ra, rb = results[2 * r], results[2 * r + 1]
            if ra is not None:
                scores_a.append(ra[0])
            if rb is not None:
                scores_b.append(rb[0])
    else:  # each_view
        suffix = PROMPT_SUFFIX["each_view"].format(description=description)
        views_a = [np.asarray(a_views)[i] for i in range(6)]
        views_b = [np.asarray(a_prime_views)[i] for i in range(6)]
        for _ in range(runs):
            res_a = _run_map(client, [
                (lambda im=im: _query_scores(client, im, suffix, 1, tally))
                for im in views_a])
            res_b = _run_map(client, [
                (lambda im=im: _query_scores(client, im, suffix, 1, tally))
                for im in views_b])
            if all(r is not None for r in res_a):
                scores_a.append(float(np.mean([r[0] for r in res_a])))
            if all(r is not None for r in res_b):
                scores_b.append(float(np.mean([r[0] for r in res_b])))

    if not scores_a or not scores_b:
        raise AllRunsFailed("no parseable scores after retries")
    mk = lambda cid, scores: ScoreRecord(
        candidate_id=cid, strategy=strategy, raw_scores=tuple(scores), runs=runs,
        queries_issued=tally.queries, tokens_prompt=tally.prompt_tokens,
        tokens_completion=tally.completion_tokens)
    return mk("generated", scores_a), mk("decomposed", scores_b)


def select_albedo(records) -> SelectionRecord:
    """Pick the record with the higher mean; exact ties prefer the generated set."""
    rec_a, rec_b = records
    chosen = rec_b.candidate_id if rec_b.mean > rec_a.mean else rec_a.candidate_id
    return SelectionRecord(candidates=(rec_a, rec_b), chosen=chosen)


def score_candidate_set(albedo_views, metallic_views, roughness_views, description,
                        client, runs=DEFAULT_RUNS):
    """Mean of the three per-channel means for one full material candidate."""
    channel_means = []
    tally = _Tally()
    jobs = []
    for views, suffix in (
        (albedo_views, PROMPT_SUFFIX["each_set"].format(description=description)),
        (metallic_views, PROMPT_SUFFIX["channel"].format(channel="metallic",
                                                         description=description)),
        (roughness_views, PROMPT_SUFFIX["channel"].format(channel="roughness",
                                                          description=description)),
    ):
        image = stitch(views, "single_row")
        jobs.extend([
            (lambda im=image, sx=suffix: _query_scores(client, im, sx, 1, tally))
            for _ in range(runs)])
    results = _run_map(client, jobs)
    for c in range(3):
        vals = [r[0] for r in results[c * runs:(c + 1) * runs] if r is not None]
        if not vals:
            raise AllRunsFailed("no parseable scores for a channel")
        channel_means.append(float(np.mean(vals)))
    return float(np.mean(channel_means)), tally


def best_of_n(candidates, description, client, runs=DEFAULT_RUNS):
    """Index of the best full material candidate; ties go to the lowest index.

    Each candidate is (albedo_views, metallic_views, roughness_views).
    N=1 short-circuits without querying.
    """
    if len(candidates) == 1:
        return 0, []
    scores = []
    for albedo, metallic, roughness in candidates:
        mean, _ = score_candidate_set(albedo, metallic, roughness, description,
                                      client, runs)
        scores.append(mean)
    return int(np.argmax(scores)), scores
