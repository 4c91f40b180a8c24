"""Feature-based baseline: similarity features plus logistic regression.

The features approximate the hand-designed similarity measures used by
feature-ensemble stance baselines: term-frequency and tf-idf cosines
between headline and body, n-gram overlap rates, raw lengths, and the
count of headline tokens missing from the body.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .textcorpus import Article

FEATURE_NAMES = (
    "tf_cosine",
    "tfidf_cosine",
    "unigram_overlap",
    "bigram_overlap",
    "headline_len",
    "body_len",
    "paragraph_count",
    "missing_tokens",
)


class FeatureError(ValueError):
    """Invalid feature-extraction or training input."""


@dataclass(frozen=True)
class IdfTable:
    """Smoothed inverse document frequencies from the training split only."""

    idf: dict[int, float]
    n_docs: int

    def get(self, token: int) -> float:
        default = math.log((1 + self.n_docs) / 1.0) + 1.0
        return self.idf.get(token, default)


def build_idf(articles: Iterable[Article]) -> IdfTable:
    """Document frequencies over headline+body token sets per article."""
    df: Counter[int] = Counter()
    n = 0
    for art in articles:
        n += 1
        seen = set(art.headline)
        for p in art.paragraphs:
            seen.update(p)
        df.update(seen)
    idf = {t: math.log((1 + n) / (1 + c)) + 1.0 for t, c in df.items()}
    return IdfTable(idf=idf, n_docs=n)


def _cosine(a: dict[int, float], b: dict[int, float]) -> float:
    shared = set(a) & set(b)
    dot = sum(a[t] * b[t] for t in shared)
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def _bigrams(tokens: Sequence[int]) -> set[tuple[int, int]]:
    return {(tokens[i], tokens[i + 1]) for i in range(len(tokens) - 1)}


def extract_features(
    headline: Sequence[int],
    paragraphs: Sequence[Sequence[int]],
    idf: IdfTable,
) -> np.ndarray:
    """Fixed-order feature vector for one headline/body pair."""
    if not headline or not paragraphs or any(not p for p in paragraphs):
        raise FeatureError("empty headline or body")
    body = [t for p in paragraphs for t in p]
    h_counts = Counter(headline)
    b_counts = Counter(body)

    tf_cos = _cosine(dict(h_counts), dict(b_counts))
    h_tfidf = {t: c * idf.get(t) for t, c in h_counts.items()}
    b_tfidf = {t: c * idf.get(t) for t, c in b_counts.items()}
    tfidf_cos = _cosine(h_tfidf, b_tfidf)

    body_set = set(body)
    n_head = len(headline)
    unigram_overlap = sum(t in body_set for t in headline) / n_head
    body_bigrams = _bigrams(body)
    bigram_overlap = (
        sum(bg in body_bigrams for bg in zip(headline, headline[1:])) / n_head
    )
    missing = sum(t not in body_set for t in headline)

    return np.array(
        [
            tf_cos,
            tfidf_cos,
            unigram_overlap,
            bigram_overlap,
            float(n_head),
            float(len(body)),
            float(len(paragraphs)),
            float(missing),
        ]
    )


def article_features(article: Article, idf: IdfTable) -> np.ndarray:
    return extract_features(article.headline, article.paragraphs, idf)


def train_linear(
    features: np.ndarray,
    labels: Sequence[int],
    epochs: int = 200,
    lr: float = 0.1,
    seed: int = 0,
) -> np.ndarray:
    """Full-batch gradient descent on logistic cross-entropy.

    Returns weights of length d+1 with the bias last. Initialization is
    zero, so the fit is deterministic; ``seed`` is accepted for interface
    uniformity. Features are standardized internally per column.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(y) != len(x):
        raise FeatureError("features must be (n, d) with one label per row")
    classes = np.unique(y)
    if len(classes) < 2:
        raise FeatureError("need both classes present to train")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    xs = (x - mean) / std

    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        z = xs @ w + b
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        err = p - y
        w -= lr * (xs.T @ err) / n
        b -= lr * err.mean()

    # fold the standardization back into raw-feature weights
    w_raw = w / std
    b_raw = b - float(mean @ (w / std))
    return np.concatenate([w_raw, [b_raw]])


def predict_linear(weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Probabilities from a trained weight vector (bias last)."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    z = x @ weights[:-1] + weights[-1]
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def linear_loss(weights: np.ndarray, features: np.ndarray, labels) -> float:
    """Mean logistic cross-entropy of a weight vector on a dataset."""
    p = predict_linear(weights, features)
    y = np.asarray(labels, dtype=np.float64)
    eps = 1e-12
    return float(-(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).mean())


def linear_ip_score(
    weights: np.ndarray,
    headline: Sequence[int],
    paragraphs: Sequence[Sequence[int]],
    idf: IdfTable,
) -> tuple[float, list[float]]:
    """Per-paragraph baseline scores aggregated with the max rule."""
    if not paragraphs:
        raise FeatureError("empty paragraph list")
    scores = [
        float(predict_linear(weights, extract_features(headline, [p], idf))[0])
        for p in paragraphs
    ]
    return max(scores), scores


def write_features_csv(path, rows: Iterable[np.ndarray], labels=None) -> int:
    """Dump feature vectors (optionally labeled) with a fixed header."""
    labels = list(labels) if labels is not None else None
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(FEATURE_NAMES) + (["label"] if labels is not None else [])
        writer.writerow(header)
        for i, row in enumerate(rows):
            out = [f"{v:.10g}" for v in row]
            if labels is not None:
                out.append(str(labels[i]))
            writer.writerow(out)
            n += 1
    return n
