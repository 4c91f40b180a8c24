"""Labeled dataset construction from an unlabeled corpus.

Incongruent (label 1) articles are made by implanting a contiguous run
of paragraphs from a donor article into a target article while keeping
the target's headline. Congruent (label 0) articles are unmodified
corpus articles whose headlines never collide with the incongruent set.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .textcorpus import (
    Article,
    Vocabulary,
    article_to_json_line,
    split_sentences_by_ids,
    write_corpus,
)


class DatagenError(ValueError):
    """Invalid generation config or an unsatisfiable sampling request."""


@dataclass
class GenConfig:
    """Knobs for dataset generation.

    ``category_match`` True draws donors from the target's own category;
    False draws them from a different category, which makes synthetic
    cross-topic corpora separable by construction. ``n_pairs`` is the
    total labeled output size (half incongruent); None uses the whole
    corpus, rounded down to an even count.
    """

    seed: int
    donor_paragraph_min: int = 1
    donor_paragraph_max: int = 3
    insertion_mode: str = "insert"
    category_match: bool = True
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    advert_blocklist_path: str | None = None
    target_balance: float = 0.5
    n_pairs: int | None = None

    def validate(self) -> None:
        if not 1 <= self.donor_paragraph_min <= self.donor_paragraph_max:
            raise DatagenError(
                f"need 1 <= donor_min <= donor_max, got "
                f"{self.donor_paragraph_min}..{self.donor_paragraph_max}"
            )
        if self.insertion_mode not in ("insert", "replace"):
            raise DatagenError(f"unknown insertion_mode {self.insertion_mode!r}")
        if len(self.split_fractions) != 3 or any(f <= 0 for f in self.split_fractions):
            raise DatagenError("split_fractions must be three positive numbers")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise DatagenError("split_fractions must sum to 1")
        if self.target_balance != 0.5:
            raise DatagenError("only target_balance=0.5 is supported")
        if self.n_pairs is not None and (self.n_pairs < 2 or self.n_pairs % 2):
            raise DatagenError("n_pairs must be an even integer >= 2")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "donor_paragraph_min": self.donor_paragraph_min,
            "donor_paragraph_max": self.donor_paragraph_max,
            "insertion_mode": self.insertion_mode,
            "category_match": self.category_match,
            "split_fractions": list(self.split_fractions),
            "advert_blocklist_path": self.advert_blocklist_path,
            "target_balance": self.target_balance,
            "n_pairs": self.n_pairs,
        }


@dataclass
class LabeledDataset:
    train: list[Article]
    dev: list[Article]
    test: list[Article]
    manifest: dict = field(default_factory=dict)

    def splits(self) -> dict[str, list[Article]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}

    def save(self, out_dir) -> dict[str, str]:
        """Write train/dev/test JSONL plus a manifest; returns file hashes."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        hashes: dict[str, str] = {}
        for name, articles in self.splits().items():
            path = out / f"{name}.jsonl"
            write_corpus(path, articles)
            hashes[f"{name}.jsonl"] = sha256_file(path)
        manifest = dict(self.manifest)
        manifest["content_hashes"] = hashes
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return hashes


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def generate_incongruent(
    target: Article, donor: Article, rng: np.random.Generator, config: GenConfig
) -> Article:
    """Implant a contiguous donor paragraph run into the target body.

    The run length is uniform over [donor_min, donor_max], clamped to the
    donor's paragraph count; the donor start and the implant position are
    uniform. Insert mode keeps every original paragraph; replace mode
    removes the same number of originals at the implant position first
    (clamped to the target's paragraph count). The headline is unchanged.
    """
    if donor.id == target.id:
        raise DatagenError("donor and target must be distinct articles")
    if config.category_match and donor.category != target.category:
        raise DatagenError(
            f"donor category {donor.category!r} != target {target.category!r}"
        )
    if len(donor.paragraphs) < config.donor_paragraph_min:
        raise DatagenError(f"donor exhausted: {donor.id} has too few paragraphs")

    k_max = min(config.donor_paragraph_max, len(donor.paragraphs))
    k = int(rng.integers(config.donor_paragraph_min, k_max, endpoint=True))
    donor_start = int(rng.integers(0, len(donor.paragraphs) - k, endpoint=True))
    run = [list(p) for p in donor.paragraphs[donor_start : donor_start + k]]

    originals = [list(p) for p in target.paragraphs]
    if config.insertion_mode == "insert":
        position = int(rng.integers(0, len(originals), endpoint=True))
        paragraphs = originals[:position] + run + originals[position:]
    else:
        k = min(k, len(originals))
        run = run[:k]
        position = int(rng.integers(0, len(originals) - k, endpoint=True))
        paragraphs = originals[:position] + run + originals[position + k :]

    return Article(
        id=target.id,
        category=target.category,
        headline=list(target.headline),
        paragraphs=paragraphs,
        label=1,
        provenance={
            "donor_id": donor.id,
            "donor_start": donor_start,
            "length": len(run),
            "position": position,
            "mode": config.insertion_mode,
        },
    )


def load_blocklist(path) -> list[tuple[str, ...]]:
    """Read one space-separated n-gram per line; blank lines ignored."""
    ngrams: list[tuple[str, ...]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = tuple(line.split())
            if parts:
                ngrams.append(parts)
    return ngrams


def encode_blocklist(
    vocab: Vocabulary, ngrams: Iterable[tuple[str, ...]]
) -> set[tuple[int, ...]]:
    """Encode n-grams to id tuples; n-grams with out-of-vocab tokens are
    dropped since they can never occur literally in an encoded corpus."""
    out: set[tuple[int, ...]] = set()
    for ngram in ngrams:
        if all(tok in vocab for tok in ngram):
            out.add(tuple(vocab.encode(ngram)))
    return out


def filter_advert(article: Article, blocklist: set[tuple[int, ...]]) -> bool:
    """True (reject) iff any blocklist n-gram occurs contiguously in the
    headline or any paragraph."""
    if not blocklist:
        return False
    lengths = sorted({len(g) for g in blocklist})
    for seq in [article.headline, *article.paragraphs]:
        for n in lengths:
            if n > len(seq):
                break
            for start in range(len(seq) - n + 1):
                if tuple(seq[start : start + n]) in blocklist:
                    return True
    return False


def _split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment so the counts sum to n exactly."""
    raw = [n * f for f in fractions]
    counts = [int(x) for x in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def build_dataset(
    corpus: Sequence[Article], config: GenConfig, vocab: Vocabulary | None = None
) -> LabeledDataset:
    """Build a balanced labeled dataset with disjoint train/dev/test splits.

    Fully deterministic given (corpus, config): targets are sampled
    first, then a donor per target under the category rule, then the
    congruent set is drawn from the remaining articles whose headlines
    do not collide with any incongruent headline and which pass the
    advert filter.
    """
    config.validate()
    corpus = list(corpus)
    n_pairs = config.n_pairs if config.n_pairs is not None else len(corpus) // 2 * 2
    if n_pairs < 2:
        raise DatagenError("corpus too small to build a dataset")
    n_inc = n_pairs // 2
    if n_pairs > len(corpus):
        raise DatagenError(
            f"corpus has {len(corpus)} articles, need {n_pairs} for the requested size"
        )

    blocklist: set[tuple[int, ...]] = set()
    if config.advert_blocklist_path:
        if vocab is None:
            raise DatagenError("a vocabulary is required to encode the blocklist")
        blocklist = encode_blocklist(vocab, load_blocklist(config.advert_blocklist_path))

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(corpus))
    targets = [corpus[i] for i in order[:n_inc]]
    target_ids = {a.id for a in targets}

    donors_all = [
        a for a in corpus if len(a.paragraphs) >= config.donor_paragraph_min
    ]
    donors_by_category: dict[str, list[Article]] = {}
    for art in donors_all:
        donors_by_category.setdefault(art.category, []).append(art)

    incongruent: list[Article] = []
    for target in targets:
        same = donors_by_category.get(target.category, [])
        if config.category_match:
            pool = same
            n_usable = len(pool) - any(a.id == target.id for a in pool)
        else:
            pool = donors_all
            n_usable = len(pool) - len(same)
        if n_usable <= 0:
            raise DatagenError(
                f"no eligible donor for target {target.id} (category {target.category})"
            )
        # rejection sampling keeps donor choice O(1) per target
        while True:
            donor = pool[int(rng.integers(0, len(pool)))]
            if donor.id == target.id:
                continue
            if not config.category_match and donor.category == target.category:
                continue
            break
        incongruent.append(generate_incongruent(target, donor, rng, config))

    incongruent_headlines = {tuple(a.headline) for a in incongruent}
    candidates = [
        a
        for a in corpus
        if a.id not in target_ids
        and tuple(a.headline) not in incongruent_headlines
        and not filter_advert(a, blocklist)
    ]
    if len(candidates) < n_inc:
        raise DatagenError(
            f"insufficient eligible congruent articles: need {n_inc}, "
            f"found {len(candidates)} (short by {n_inc - len(candidates)})"
        )
    pick = rng.permutation(len(candidates))[:n_inc]
    congruent = [replace(candidates[i], label=0) for i in sorted(pick)]

    counts = _split_counts(n_inc, config.split_fractions)
    splits: list[list[Article]] = [[], [], []]
    for articles in (incongruent, congruent):
        shuffled = [articles[i] for i in rng.permutation(len(articles))]
        start = 0
        for s, c in enumerate(counts):
            splits[s].extend(shuffled[start : start + c])
            start += c
    for s in range(3):
        splits[s] = [splits[s][i] for i in rng.permutation(len(splits[s]))]

    train, dev, test = splits
    manifest = {
        "config": config.to_dict(),
        "seed": config.seed,
        "counts": {
            name: {
                "total": len(split),
                "incongruent": sum(a.label == 1 for a in split),
            }
            for name, split in [("train", train), ("dev", dev), ("test", test)]
        },
    }
    return LabeledDataset(train=train, dev=dev, test=test, manifest=manifest)


def ip_transform(
    articles: Iterable[Article],
    hierarchical: bool = False,
    sentence_ender_ids: Sequence[int] = (),
) -> list[Article]:
    """Expand each article into one instance per paragraph.

    Every instance keeps the headline and the label. For flat models the
    instance body is the single paragraph; for hierarchical models it is
    pre-split into sentences so they can treat sentences as the lower
    encoding level. Instance order is article order then paragraph order.
    """
    out: list[Article] = []
    for art in articles:
        for j, paragraph in enumerate(art.paragraphs):
            if hierarchical:
                units = split_sentences_by_ids(paragraph, sentence_ender_ids)
            else:
                units = [list(paragraph)]
            out.append(
                Article(
                    id=f"{art.id}#p{j}",
                    category=art.category,
                    headline=list(art.headline),
                    paragraphs=units,
                    label=art.label,
                    provenance={"source_id": art.id, "paragraph_index": j},
                )
            )
    return out


def make_synthetic_corpus(
    n_articles: int,
    n_topics: int,
    words_per_topic: int = 200,
    seed: int = 0,
) -> tuple[list[Article], Vocabulary]:
    """Generate a topic-separable test corpus with disjoint vocabularies.

    Each topic owns ``words_per_topic`` unique word types under a Zipf-like
    unigram distribution. Every article draws all of its tokens from one
    topic; the article category is the topic name.
    """
    if n_topics < 2:
        raise DatagenError("need at least two topics")
    words = [
        f"t{k:02d}w{j:03d}" for k in range(n_topics) for j in range(words_per_topic)
    ]
    vocab = Vocabulary(words)

    probs = 1.0 / np.arange(1, words_per_topic + 1)
    probs /= probs.sum()
    topic_ids = [
        np.arange(2 + k * words_per_topic, 2 + (k + 1) * words_per_topic)
        for k in range(n_topics)
    ]

    rng = np.random.default_rng(seed)
    articles: list[Article] = []
    for i in range(n_articles):
        k = int(rng.integers(0, n_topics))
        ids = topic_ids[k]
        headline = rng.choice(ids, size=int(rng.integers(5, 15, endpoint=True)), p=probs)
        paragraphs = [
            rng.choice(ids, size=int(rng.integers(20, 80, endpoint=True)), p=probs).tolist()
            for _ in range(int(rng.integers(4, 12, endpoint=True)))
        ]
        articles.append(
            Article(
                id=f"syn{i:05d}",
                category=f"t{k:02d}",
                headline=headline.tolist(),
                paragraphs=paragraphs,
            )
        )
    return articles, vocab


def dataset_bytes(dataset: LabeledDataset) -> bytes:
    """Canonical serialization of all three splits, for determinism checks."""
    parts = []
    for name, articles in dataset.splits().items():
        parts.append(name.encode())
        for art in articles:
            parts.append(article_to_json_line(art).encode("utf-8"))
    return b"\n".join(parts)
