"""HTTP scoring API and feedback collector.

Endpoints (JSON over /v1): POST /v1/score accepts exactly one content
source (headline+body text, raw html, or a url when fetching is
enabled) and returns the incongruence score of the served model;
POST /v1/feedback appends a reader verdict to an append-only JSONL log;
GET /v1/health reports the served model version and uptime.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
import urllib.request
from dataclasses import dataclass
from datetime import datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from typing import Sequence

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .encoders import ModelParameters, ScoredPrediction, load_checkpoint, score_article
from .textcorpus import Article, CorpusError, Vocabulary, encode_text_pair, tokenize

DISPLAY_THRESHOLD = 0.5
_MIN_PARAGRAPH_TOKENS = 5
_HASH_RE = re.compile(r"^[0-9a-f]{64}$")
FEEDBACK_LABELS = ("congruent", "incongruent")


class ExtractionError(ValueError):
    """No usable headline or body text found in the markup."""


class _PageParser(HTMLParser):
    """Collects og:title, <title>, first <h1>, and <p> texts in order."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.og_title: str | None = None
        self.title_parts: list[str] = []
        self.h1_parts: list[str] = []
        self.paragraphs: list[str] = []
        self._in_title = False
        self._h1_depth = 0
        self._p_depth = 0
        self._p_parts: list[str] = []
        self._h1_done = False
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        if tag == "meta" and attrs.get("property") == "og:title":
            content = (attrs.get("content") or "").strip()
            if content and self.og_title is None:
                self.og_title = content
        elif tag in ("script", "style"):
            self._skip_depth += 1
        elif tag == "title":
            self._in_title = True
        elif tag == "h1" and not self._h1_done:
            self._h1_depth += 1
        elif tag == "p":
            if self._p_depth == 0:
                self._p_parts = []
            self._p_depth += 1

    def handle_endtag(self, tag):
        if tag in ("script", "style"):
            self._skip_depth = max(0, self._skip_depth - 1)
        elif tag == "title":
            self._in_title = False
        elif tag == "h1" and self._h1_depth:
            self._h1_depth -= 1
            if self._h1_depth == 0:
                self._h1_done = True
        elif tag == "p" and self._p_depth:
            self._p_depth -= 1
            if self._p_depth == 0:
                text = " ".join(" ".join(self._p_parts).split())
                if text:
                    self.paragraphs.append(text)

    def handle_data(self, data):
        if self._skip_depth:
            return
        if self._in_title:
            self.title_parts.append(data)
        if self._h1_depth and not self._h1_done:
            self.h1_parts.append(data)
        if self._p_depth:
            self._p_parts.append(data)


def extract_article(html: str) -> tuple[str, list[str]]:
    """Best-effort headline/paragraph extraction from raw page markup.

    Headline precedence: og:title meta, then <title>, then the first
    <h1>. Paragraphs are <p> elements with at least five tokens, in
    document order.
    """
    parser = _PageParser()
    parser.feed(html)
    parser.close()
    headline = parser.og_title
    if not headline:
        headline = " ".join(" ".join(parser.title_parts).split()) or None
    if not headline:
        headline = " ".join(" ".join(parser.h1_parts).split()) or None
    paragraphs = [p for p in parser.paragraphs if len(tokenize(p)) >= _MIN_PARAGRAPH_TOKENS]
    if not headline or not paragraphs:
        raise ExtractionError("extraction failed: no headline or no paragraphs")
    return headline, paragraphs


def score_text(
    model: ModelParameters, vocab: Vocabulary, headline_text: str, body_text: str
) -> ScoredPrediction:
    """Shared scoring path for the CLI and the HTTP API."""
    headline, paragraphs = encode_text_pair(vocab, headline_text, body_text)
    article = Article(id="request", category="", headline=headline, paragraphs=paragraphs)
    return score_article(model, article)


@dataclass
class FeedbackRecord:
    timestamp: str
    headline_hash: str
    label: str
    score_shown: float
    model_version: str
    url: str | None = None

    def validate(self) -> None:
        if self.label not in FEEDBACK_LABELS:
            raise ValueError(f"label must be one of {FEEDBACK_LABELS}")
        if not _HASH_RE.match(self.headline_hash or ""):
            raise ValueError("headline_hash must be 64 lowercase hex chars")
        if not isinstance(self.score_shown, (int, float)) or isinstance(self.score_shown, bool):
            raise ValueError("score_shown must be a number")
        datetime.fromisoformat(self.timestamp)  # raises if malformed

    def to_json(self) -> str:
        obj = {
            "timestamp": self.timestamp,
            "headline_hash": self.headline_hash,
            "label": self.label,
            "score_shown": self.score_shown,
            "model_version": self.model_version,
        }
        if self.url is not None:
            obj["url"] = self.url
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "FeedbackRecord":
        obj = json.loads(line)
        rec = cls(
            timestamp=obj["timestamp"],
            headline_hash=obj["headline_hash"],
            label=obj["label"],
            score_shown=obj["score_shown"],
            model_version=obj.get("model_version", ""),
            url=obj.get("url"),
        )
        rec.validate()
        return rec


class FeedbackLog:
    """Append-only JSONL store; appends are serialized and fsynced."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._count = 0
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                self._count = sum(1 for line in fh if line.strip())
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: FeedbackRecord) -> int:
        """Write one record; returns its 1-based line number."""
        line = record.to_json()
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.write("\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._count += 1
            return self._count


def read_feedback_log(path) -> list[FeedbackRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(FeedbackRecord.from_json(line))
    return records


def fetch_url(url: str, timeout: float = 10.0) -> str:
    """Fetch page markup; only used when fetching is explicitly enabled."""
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        charset = resp.headers.get_content_charset() or "utf-8"
        return resp.read().decode(charset, errors="replace")


def create_app(
    model: ModelParameters,
    vocab: Vocabulary,
    feedback_log: FeedbackLog,
    enable_fetch: bool = False,
    display_threshold: float = DISPLAY_THRESHOLD,
) -> FastAPI:
    """Assemble the API around an immutable model snapshot.

    ``app.state.set_model`` swaps in a new snapshot atomically between
    requests (scoring reads the reference once per request).
    """
    app = FastAPI(title="incongruity scoring service", version="1")
    state = app.state
    state.model = model
    state.vocab = vocab
    state.feedback_log = feedback_log
    state.enable_fetch = enable_fetch
    state.display_threshold = display_threshold
    state.started = time.monotonic()

    def set_model(new_model: ModelParameters) -> None:
        state.model = new_model

    state.set_model = set_model

    def _error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message})

    @app.post("/v1/score")
    async def score(request: Request):
        try:
            data = await request.json()
        except Exception:
            return _error(400, "request body must be JSON")
        if not isinstance(data, dict):
            return _error(400, "request body must be a JSON object")

        has_text = data.get("headline") is not None or data.get("body") is not None
        sources = [has_text, data.get("html") is not None, data.get("url") is not None]
        if sum(sources) != 1:
            return _error(400, "provide exactly one of headline+body, html, or url")

        current = state.model
        wanted = data.get("model")
        if wanted is not None and str(wanted).lower() not in (
            current.kind,
            current.version(),
        ):
            return _error(
                400,
                f"model {wanted!r} is not served (serving {current.kind} "
                f"{current.version()})",
            )
        if has_text:
            headline_text = data.get("headline")
            body_text = data.get("body")
            if not isinstance(headline_text, str) or not isinstance(body_text, str):
                return _error(400, "headline and body must both be strings")
            try:
                pred = score_text(current, state.vocab, headline_text, body_text)
            except CorpusError as exc:
                return _error(400, str(exc))
        else:
            if data.get("url") is not None:
                if not state.enable_fetch:
                    return _error(403, "url fetching is disabled on this server")
                if not isinstance(data["url"], str):
                    return _error(400, "url must be a string")
                try:
                    html = fetch_url(data["url"])
                except Exception as exc:
                    return _error(422, f"fetch failed: {exc}")
            else:
                html = data["html"]
                if not isinstance(html, str):
                    return _error(400, "html must be a string")
            try:
                headline_text, paragraphs = extract_article(html)
                pred = score_text(current, state.vocab, headline_text, "\n".join(paragraphs))
            except (ExtractionError, CorpusError) as exc:
                return _error(422, str(exc))

        label = "incongruent" if pred.score >= state.display_threshold else "congruent"
        return {
            "score": pred.score,
            "label": label,
            "paragraph_scores": pred.paragraph_scores,
            "top_paragraph_index": pred.top_paragraph_index,
            "model_version": pred.model_version,
        }

    @app.post("/v1/feedback")
    async def feedback(request: Request):
        try:
            data = await request.json()
        except Exception:
            return _error(400, "request body must be JSON")
        if not isinstance(data, dict):
            return _error(400, "request body must be a JSON object")
        record = FeedbackRecord(
            timestamp=datetime.now(timezone.utc).isoformat(),
            headline_hash=str(data.get("headline_hash", "")),
            label=str(data.get("label", "")),
            score_shown=data.get("score_shown"),
            model_version=str(data.get("model_version") or state.model.version()),
            url=data.get("url"),
        )
        try:
            record.validate()
        except ValueError as exc:
            return _error(400, str(exc))
        try:
            record_id = state.feedback_log.append(record)
        except OSError as exc:
            return _error(500, f"feedback storage failed: {exc}")
        return {"id": record_id}

    @app.get("/v1/health")
    async def health():
        return {
            "status": "ok",
            "model_version": state.model.version(),
            "uptime_seconds": time.monotonic() - state.started,
        }

    return app


def build_app_from_paths(
    checkpoint_path,
    vocab_path,
    feedback_log_path,
    enable_fetch: bool = False,
) -> FastAPI:
    """Load artifacts from disk and assemble the app (CLI `serve` path)."""
    model = load_checkpoint(checkpoint_path)
    vocab = Vocabulary.load(vocab_path)
    return create_app(model, vocab, FeedbackLog(feedback_log_path), enable_fetch)
