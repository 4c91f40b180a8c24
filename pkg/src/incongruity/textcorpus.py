"""Article data model, tokenization, vocabulary, and JSONL corpus I/O.

Articles carry integer token ids. Id 0 is reserved for padding and id 1
for unknown tokens; real tokens start at id 2.
"""

from __future__ import annotations

import json
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SENTENCE_ENDERS = (".", "!", "?")

_PUNCT = frozenset(string.punctuation)


class CorpusError(ValueError):
    """Malformed corpus/vocabulary file or invalid corpus argument."""


@dataclass
class Article:
    """One news article: headline and ordered body paragraphs, as token ids.

    ``label`` is 1 for incongruent, 0 for congruent, None for unlabeled
    corpora. ``provenance`` records how a generated article was derived
    (donor id and paragraph positions).
    """

    id: str
    category: str
    headline: list[int]
    paragraphs: list[list[int]]
    label: int | None = None
    provenance: dict | None = None

    def body_tokens(self) -> list[int]:
        """All body tokens flattened in paragraph order."""
        out: list[int] = []
        for p in self.paragraphs:
            out.extend(p)
        return out

    def validate(self) -> None:
        if not self.headline:
            raise CorpusError(f"article {self.id!r}: empty headline")
        if not self.paragraphs:
            raise CorpusError(f"article {self.id!r}: no paragraphs")
        if any(not p for p in self.paragraphs):
            raise CorpusError(f"article {self.id!r}: empty paragraph")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, peel leading/trailing punctuation.

    Punctuation glued to a word becomes its own token ("now!" -> "now",
    "!"); punctuation inside a word ("don't") is left alone.
    """
    out: list[str] = []
    for raw in text.lower().split():
        head: list[str] = []
        tail: list[str] = []
        while raw and raw[0] in _PUNCT:
            head.append(raw[0])
            raw = raw[1:]
        while raw and raw[-1] in _PUNCT:
            tail.append(raw[-1])
            raw = raw[:-1]
        out.extend(head)
        if raw:
            out.append(raw)
        out.extend(reversed(tail))
    return out


class Vocabulary:
    """Bijective token<->id map with reserved ids 0 (<pad>) and 1 (<unk>)."""

    def __init__(self, tokens: Sequence[str]):
        self._id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self._token_to_id: dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for tok in tokens:
            if tok in self._token_to_id:
                raise CorpusError(f"duplicate vocabulary token {tok!r}")
            self._token_to_id[tok] = len(self._id_to_token)
            self._id_to_token.append(tok)

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def token_id(self, token: str) -> int:
        """Id of ``token``, or UNK_ID when out of vocabulary."""
        return self._token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        if not 0 <= idx < self.size:
            raise CorpusError(f"token id {idx} out of range (size {self.size})")
        return self._id_to_token[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        """Map token strings to ids; unknown tokens become UNK_ID."""
        return [self._token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.token(i) for i in ids]

    def sentence_ender_ids(self) -> tuple[int, ...]:
        """Ids of in-vocabulary sentence-final punctuation tokens."""
        return tuple(
            self._token_to_id[t] for t in SENTENCE_ENDERS if t in self._token_to_id
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for idx, tok in enumerate(self._id_to_token):
                fh.write(f"{tok}\t{idx}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    tok, idx_str = line.split("\t")
                    idx = int(idx_str)
                except ValueError as exc:
                    raise CorpusError(f"vocabulary line {lineno + 1}: {line!r}") from exc
                if idx != lineno:
                    raise CorpusError(
                        f"vocabulary line {lineno + 1}: id {idx} out of order"
                    )
                tokens.append(tok)
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise CorpusError("vocabulary file must start with <pad>/<unk> entries")
        return cls(tokens[2:])


def build_vocabulary(docs: Iterable, min_count: int = 1) -> Vocabulary:
    """Count tokens over ``docs`` and keep those seen >= ``min_count`` times.

    Each doc may be a raw string (tokenized here) or a pre-tokenized
    sequence of token strings. Ids are assigned in descending frequency
    order, ties broken lexicographically, starting at id 2.
    """
    if min_count < 1:
        raise CorpusError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for doc in docs:
        counts.update(tokenize(doc) if isinstance(doc, str) else doc)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(kept)


def split_sentences_by_ids(
    paragraph: Sequence[int], ender_ids: Sequence[int]
) -> list[list[int]]:
    """Split after sentence-final tokens; the trailing fragment is kept.

    Never returns empty sentences: a delimiter directly following another
    forms a one-token sentence of its own.
    """
    enders = set(ender_ids)
    sentences: list[list[int]] = []
    current: list[int] = []
    for tok in paragraph:
        current.append(tok)
        if tok in enders:
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def split_sentences(paragraph: Sequence[int], vocab: Vocabulary) -> list[list[int]]:
    """Split a paragraph into sentences at ".", "!", "?" tokens."""
    return split_sentences_by_ids(paragraph, vocab.sentence_ender_ids())


class _RunningStat:
    """Single-pass mean and standard error accumulator."""

    __slots__ = ("n", "total", "sumsq")

    def __init__(self):
        self.n = 0
        self.total = 0.0
        self.sumsq = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        self.total += x
        self.sumsq += x * x

    @property
    def mean(self) -> float:
        return self.total / self.n

    @property
    def std_error(self) -> float:
        # sample stdev / sqrt(n); zero for n <= 1
        if self.n <= 1:
            return 0.0
        var = (self.sumsq - self.total * self.total / self.n) / (self.n - 1)
        return math.sqrt(max(var, 0.0) / self.n)


@dataclass(frozen=True)
class MeanSE:
    mean: float
    std_error: float


@dataclass(frozen=True)
class CorpusStats:
    """Mean and standard error of the four corpus size measures."""

    headline_tokens: MeanSE
    body_tokens: MeanSE
    body_paragraphs: MeanSE
    paragraph_tokens: MeanSE
    n_articles: int
    n_paragraphs: int

    def to_dict(self) -> dict:
        return {
            "headline_tokens": vars(self.headline_tokens),
            "body_tokens": vars(self.body_tokens),
            "body_paragraphs": vars(self.body_paragraphs),
            "paragraph_tokens": vars(self.paragraph_tokens),
            "n_articles": self.n_articles,
            "n_paragraphs": self.n_paragraphs,
        }


def corpus_stats(articles: Iterable[Article]) -> CorpusStats:
    """Tokens per headline/body/paragraph and paragraphs per body."""
    head = _RunningStat()
    body = _RunningStat()
    paras = _RunningStat()
    per_para = _RunningStat()
    for art in articles:
        head.add(len(art.headline))
        body.add(sum(len(p) for p in art.paragraphs))
        paras.add(len(art.paragraphs))
        for p in art.paragraphs:
            per_para.add(len(p))
    if head.n == 0:
        raise CorpusError("empty corpus")
    return CorpusStats(
        headline_tokens=MeanSE(head.mean, head.std_error),
        body_tokens=MeanSE(body.mean, body.std_error),
        body_paragraphs=MeanSE(paras.mean, paras.std_error),
        paragraph_tokens=MeanSE(per_para.mean, per_para.std_error),
        n_articles=head.n,
        n_paragraphs=per_para.n,
    )


def _require(obj: dict, key: str, lineno: int):
    if key not in obj:
        raise CorpusError(f"line {lineno}: missing {key!r} field")
    return obj[key]


def _check_token_list(val, what: str, lineno: int) -> list[int]:
    if (
        not isinstance(val, list)
        or not val
        or any(not isinstance(t, int) or isinstance(t, bool) or t < 0 for t in val)
    ):
        raise CorpusError(f"line {lineno}: {what} must be a non-empty list of non-negative ints")
    return val


def _article_from_json(obj: dict, lineno: int) -> Article:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {lineno}: expected a JSON object")
    art_id = _require(obj, "id", lineno)
    category = _require(obj, "category", lineno)
    if not isinstance(art_id, str) or not isinstance(category, str):
        raise CorpusError(f"line {lineno}: id and category must be strings")
    headline = _check_token_list(_require(obj, "headline", lineno), "headline", lineno)
    paragraphs = _require(obj, "paragraphs", lineno)
    if not isinstance(paragraphs, list) or not paragraphs:
        raise CorpusError(f"line {lineno}: paragraphs must be a non-empty list")
    paragraphs = [
        _check_token_list(p, f"paragraph {i}", lineno) for i, p in enumerate(paragraphs)
    ]
    label = obj.get("label")
    if label is not None and label not in (0, 1):
        raise CorpusError(f"line {lineno}: label must be 0 or 1")
    provenance = obj.get("provenance")
    if provenance is not None and not isinstance(provenance, dict):
        raise CorpusError(f"line {lineno}: provenance must be an object")
    return Article(
        id=art_id,
        category=category,
        headline=headline,
        paragraphs=paragraphs,
        label=label,
        provenance=provenance,
    )


def article_to_json_line(article: Article) -> str:
    """Canonical one-line JSON form; key order is fixed for byte-stable files."""
    obj: dict = {
        "id": article.id,
        "category": article.category,
        "headline": list(article.headline),
        "paragraphs": [list(p) for p in article.paragraphs],
    }
    if article.label is not None:
        obj["label"] = int(article.label)
    if article.provenance is not None:
        obj["provenance"] = {k: article.provenance[k] for k in sorted(article.provenance)}
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def read_corpus(path) -> Iterator[Article]:
    """Stream articles from a JSONL file, one per line, in file order."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            yield _article_from_json(obj, lineno)


def write_corpus(path, articles: Iterable[Article]) -> int:
    """Write articles as JSONL; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for art in articles:
            fh.write(article_to_json_line(art))
            fh.write("\n")
            n += 1
    return n


def split_paragraph_text(body_text: str) -> list[str]:
    """Split plain body text into paragraphs on newline runs."""
    return [part.strip() for part in body_text.split("\n") if part.strip()]


def encode_text_pair(
    vocab: Vocabulary, headline_text: str, body_text: str
) -> tuple[list[int], list[list[int]]]:
    """Tokenize and encode a raw headline/body pair for scoring."""
    headline = vocab.encode(tokenize(headline_text))
    if not headline:
        raise CorpusError("empty headline")
    paragraphs = []
    for part in split_paragraph_text(body_text):
        toks = vocab.encode(tokenize(part))
        if toks:
            paragraphs.append(toks)
    if not paragraphs:
        raise CorpusError("empty body")
    return headline, paragraphs
