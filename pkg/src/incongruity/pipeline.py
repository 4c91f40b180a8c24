"""Training loop, evaluation metrics, and experiment history.

Training minimizes binary cross-entropy on the incongruence logit. With
the IP flag the training unit is one (headline, paragraph) instance
inheriting the article label; article-level evaluation always aggregates
per-paragraph scores with the max rule through ``score_article``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import (
    Adam,
    DivergenceError,
    backward,
    clip_global_norm,
    constant,
    mean,
    mul,
    softplus,
    sub,
    zero_grads,
)
from .encoders import (
    Instance,
    ModelParameters,
    Packed,
    TruncationLimits,
    article_to_instances,
    build_model,
    forward_logits,
    score_article,
    score_instances,
)
from .textcorpus import Article, Vocabulary


class MetricError(ValueError):
    """Invalid metric input (empty or single-class)."""


class TrainingDiverged(RuntimeError):
    """Loss or gradients became non-finite; carries the last good state."""

    def __init__(self, message: str, result: "TrainResult"):
        super().__init__(message)
        self.result = result


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-statistic AUROC; tied scores count half.

    Equals (#correctly ordered positive-negative pairs + 0.5*ties) / (P*N).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if len(s) != len(y) or len(s) == 0:
        raise MetricError("scores and labels must be equal-length and non-empty")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("both classes must be present")

    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # average of 1-based ranks i+1..j
        i = j
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    """Fraction of examples where (score >= threshold) matches the label."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if len(s) == 0 or len(s) != len(y):
        raise MetricError("scores and labels must be equal-length and non-empty")
    return float(((s >= threshold).astype(int) == y).mean())


def precision_at_n(scores: Sequence[float], labels: Sequence[int], n: int) -> float:
    """Fraction of label-1 among the n highest-scoring examples.

    Descending stable sort: tied scores keep their input order.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if not 1 <= n <= len(s):
        raise MetricError(f"n must be in 1..{len(s)}, got {n}")
    order = np.argsort(-s, kind="stable")
    top = y[order[:n]]
    return float((top == 1).mean())


@dataclass
class EvalReport:
    accuracy: float
    auroc: float
    confusion: list[dict]
    precision_at_n: list[dict]
    n_articles: int
    model_version: str = ""

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "auroc": self.auroc,
            "confusion": self.confusion,
            "precision_at_n": self.precision_at_n,
            "n_articles": self.n_articles,
            "model_version": self.model_version,
        }


_DEFAULT_PRECISION_NS = (10, 25, 50, 100, 250)


def evaluate(
    model: ModelParameters,
    articles: Sequence[Article],
    precision_ns: Sequence[int] = _DEFAULT_PRECISION_NS,
) -> EvalReport:
    """Article-level evaluation report against gold labels."""
    labels = [a.label for a in articles]
    if any(lbl is None for lbl in labels):
        raise MetricError("evaluation needs labeled articles")
    scores = score_articles(model, articles)
    thresholds = [round(0.05 * i, 2) for i in range(21)]
    confusion = []
    y = np.asarray(labels)
    for t in thresholds:
        pred = scores >= t
        confusion.append(
            {
                "threshold": t,
                "tp": int((pred & (y == 1)).sum()),
                "fp": int((pred & (y == 0)).sum()),
                "tn": int((~pred & (y == 0)).sum()),
                "fn": int((~pred & (y == 1)).sum()),
            }
        )
    ns = [n for n in precision_ns if 1 <= n <= len(articles)] or [len(articles)]
    precision_rows = [
        {"n": n, "precision": precision_at_n(scores, labels, n)} for n in ns
    ]
    return EvalReport(
        accuracy=accuracy(scores, labels),
        auroc=auroc(scores, labels),
        confusion=confusion,
        precision_at_n=precision_rows,
        n_articles=len(articles),
        model_version=model.version(),
    )


def score_articles(
    model: ModelParameters, articles: Sequence[Article], batch_size: int = 64
) -> np.ndarray:
    """Article scores computed in instance batches (fast path for eval).

    Matches per-article ``score_article`` to float tolerance; use that
    for canonical single-article scoring.
    """
    instances: list[Instance] = []
    counts: list[int] = []
    for art in articles:
        per = article_to_instances(model, art)
        counts.append(len(per))
        instances.extend(per)
    probs = _batched_probs(model, instances, batch_size)
    out = np.empty(len(articles))
    start = 0
    for i, c in enumerate(counts):
        out[i] = probs[start : start + c].max()
        start += c
    return out


def _batched_probs(model, instances, batch_size) -> np.ndarray:
    chunks = []
    for i in range(0, len(instances), batch_size):
        chunks.append(score_instances(model, instances[i : i + batch_size]))
    return np.concatenate(chunks) if chunks else np.zeros(0)


def _batch_loss(model: ModelParameters, instances: Sequence[Instance]):
    labels = np.array([inst.label for inst in instances], dtype=model.dtype)
    packed = Packed(model.kind, instances, model.dtype)
    logits = forward_logits(model, packed)
    y = constant(labels, dtype=model.dtype)
    return mean(sub(softplus(logits), mul(logits, y)))


@dataclass
class TrainConfig:
    kind: str
    ip: bool = False
    d_emb: int = 300
    d_h: int = 64
    conv_filters: int = 32
    batch_size: int = 32
    epochs: int = 5
    learning_rate: float = 1e-3
    seed: int = 0
    max_unit_tokens: int = 200
    max_units: int = 40
    eval_every: int = 1
    clip_norm: float = 5.0
    precision: int = 32

    def validate(self) -> None:
        for name in ("d_emb", "d_h", "conv_filters", "batch_size", "eval_every"):
            if getattr(self, name) < 1:
                raise MetricError(f"{name} must be positive")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise MetricError("epochs must be >= 0 and learning_rate > 0")
        if self.precision not in (32, 64):
            raise MetricError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def limits(self) -> TruncationLimits:
        return TruncationLimits(self.max_unit_tokens, self.max_units)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_loss: float | None
    dev_auroc: float | None


@dataclass
class TrainResult:
    model: ModelParameters
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int | None = None


def train(
    config: TrainConfig,
    train_articles: Sequence[Article],
    dev_articles: Sequence[Article],
    vocab: Vocabulary,
) -> TrainResult:
    """Train a detector; keeps the checkpoint with the best dev AUROC.

    Shuffling and initialization derive from ``config.seed`` alone, so two
    runs with identical inputs produce identical histories.
    """
    config.validate()
    if any(a.label is None for a in train_articles):
        raise MetricError("training articles must be labeled")

    model = build_model(
        config.kind,
        vocab.size,
        d_emb=config.d_emb,
        d_h=config.d_h,
        ip=config.ip,
        seed=config.seed,
        dtype=config.dtype,
        sentence_delims=vocab.sentence_ender_ids(),
        conv_filters=config.conv_filters,
        limits=config.limits(),
    )
    instances: list[Instance] = []
    for art in train_articles:
        instances.extend(article_to_instances(model, art))
    dev_instances: list[Instance] = []
    for art in dev_articles:
        dev_instances.extend(article_to_instances(model, art))

    params = model.params()
    optimizer = Adam(lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model=model)
    best_auroc = -np.inf
    best_model: ModelParameters | None = None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(instances))
        epoch_loss = 0.0
        seen = 0
        for start in range(0, len(order), config.batch_size):
            batch = [instances[i] for i in order[start : start + config.batch_size]]
            zero_grads(params.values())
            loss = _batch_loss(model, batch)
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                result.model = best_model or model
                raise TrainingDiverged(
                    f"divergence: non-finite loss at epoch {epoch}", result
                )
            backward(loss)
            if model.embedding.grad is not None:
                model.embedding.grad[0, :] = 0.0  # padding row stays frozen
            clip_global_norm(params.values(), config.clip_norm)
            try:
                optimizer.step(params)
            except DivergenceError as exc:
                result.model = best_model or model
                raise TrainingDiverged(str(exc), result) from exc
            epoch_loss += loss_val * len(batch)
            seen += len(batch)

        train_loss = epoch_loss / max(seen, 1)
        dev_loss = dev_auroc_val = None
        if dev_articles and (epoch % config.eval_every == 0 or epoch == config.epochs):
            dev_loss = _dataset_loss(model, dev_instances, config.batch_size)
            dev_scores = score_articles(model, dev_articles, config.batch_size)
            dev_auroc_val = auroc(dev_scores, [a.label for a in dev_articles])
            if dev_auroc_val > best_auroc:
                best_auroc = dev_auroc_val
                best_model = model.clone()
                result.best_epoch = epoch
        result.history.append(EpochStats(epoch, train_loss, dev_loss, dev_auroc_val))

    result.model = best_model if best_model is not None else model
    return result


def _dataset_loss(model, instances, batch_size) -> float:
    total = 0.0
    for i in range(0, len(instances), batch_size):
        batch = instances[i : i + batch_size]
        total += float(_batch_loss(model, batch).value) * len(batch)
    return total / max(len(instances), 1)


def dataset_loss(model: ModelParameters, articles: Sequence[Article]) -> float:
    """Mean training-objective loss of a model on labeled articles."""
    instances: list[Instance] = []
    for art in articles:
        instances.extend(article_to_instances(model, art))
    return _dataset_loss(model, instances, 64)


def write_history_csv(path, history: Sequence[EpochStats]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "dev_loss", "dev_auroc"])
        for row in history:
            writer.writerow(
                [
                    row.epoch,
                    f"{row.train_loss:.17g}",
                    "" if row.dev_loss is None else f"{row.dev_loss:.17g}",
                    "" if row.dev_auroc is None else f"{row.dev_auroc:.17g}",
                ]
            )
