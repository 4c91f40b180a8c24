"""Command-line entry point for the whole pipeline.

Subcommands: synth-corpus, prep, stats, generate, ip-expand, train,
eval, score, serve. Artifact-writing commands emit a manifest naming
inputs, seed, and output content hashes; stochastic commands require an
explicit --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import (
    DatagenError,
    GenConfig,
    build_dataset,
    ip_transform,
    make_synthetic_corpus,
    sha256_file,
)
from .encoders import (
    KINDS,
    CheckpointError,
    ModelError,
    load_checkpoint,
    save_checkpoint,
)
from .features import FeatureError
from .pipeline import (
    MetricError,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    train,
    write_history_csv,
)
from .service import DISPLAY_THRESHOLD, ExtractionError, build_app_from_paths, score_text
from .textcorpus import (
    Article,
    CorpusError,
    Vocabulary,
    build_vocabulary,
    corpus_stats,
    read_corpus,
    tokenize,
    write_corpus,
)

_ERRORS = (
    CorpusError,
    DatagenError,
    ModelError,
    CheckpointError,
    MetricError,
    FeatureError,
    ExtractionError,
    OSError,
)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise CorpusError("config overlay must be a JSON object")
    return config


def _opt(args, config: dict, key: str, default):
    """Explicit flag > config-file value > hard default."""
    value = getattr(args, key)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _write_manifest(out_dir: Path, command: str, inputs: dict, outputs, seed, config):
    manifest = {
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "seed": seed,
        "config": config,
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
        "tool_version": __version__,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incongruity",
        description="Headline incongruence: data generation, training, scoring, serving.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="generate a synthetic topic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-articles", type=int, default=None)
    p.add_argument("--n-topics", type=int, default=None)
    p.add_argument("--words-per-topic", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("prep", help="tokenize a raw text corpus and build a vocabulary")
    p.add_argument("--input", required=True, help="JSONL of raw text articles")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("stats", help="print corpus statistics as JSON")
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("generate", help="build a balanced labeled dataset")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--vocab", default=None, help="needed when --blocklist is used")
    p.add_argument("--n-pairs", type=int, default=None)
    p.add_argument("--donor-min", type=int, default=None)
    p.add_argument("--donor-max", type=int, default=None)
    p.add_argument("--mode", choices=["insert", "replace"], default=None)
    p.add_argument("--category-match", dest="category_match", action="store_true", default=None)
    p.add_argument("--no-category-match", dest="category_match", action="store_false")
    p.add_argument("--fractions", default=None, help="train,dev,test e.g. 0.8,0.1,0.1")
    p.add_argument("--blocklist", default=None, help="advert n-gram file")
    p.add_argument("--config", default=None)

    p = sub.add_parser("ip-expand", help="expand articles into per-paragraph instances")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--hierarchical", action="store_true")
    p.add_argument("--vocab", default=None, help="needed with --hierarchical")

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--train", dest="train_path", required=True)
    p.add_argument("--dev", dest="dev_path", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", choices=list(KINDS), required=True)
    p.add_argument("--ip", action="store_true", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--d-emb", type=int, default=None)
    p.add_argument("--d-h", type=int, default=None)
    p.add_argument("--conv-filters", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-unit-tokens", type=int, default=None)
    p.add_argument("--max-units", type=int, default=None)
    p.add_argument("--precision", type=int, choices=[32, 64], default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled articles")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="also write the report here")

    p = sub.add_parser("score", help="score one headline/body pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--headline", required=True, help="file with the headline text")
    p.add_argument("--body", required=True, help="file with the body text")

    p = sub.add_parser(
        "serve",
        help="run the scoring API (flags fall back to INCONGRUITY_* env vars)",
    )
    env = os.environ
    p.add_argument("--checkpoint", default=env.get("INCONGRUITY_CHECKPOINT"))
    p.add_argument("--vocab", default=env.get("INCONGRUITY_VOCAB"))
    p.add_argument("--feedback-log", default=env.get("INCONGRUITY_FEEDBACK_LOG"))
    p.add_argument("--host", default=env.get("INCONGRUITY_HOST", "127.0.0.1"))
    p.add_argument("--port", type=int, default=int(env.get("INCONGRUITY_PORT", "8080")))
    p.add_argument(
        "--enable-fetch",
        action="store_true",
        default=env.get("INCONGRUITY_ENABLE_FETCH", "") == "1",
    )

    return parser


def _cmd_synth_corpus(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    articles, vocab = make_synthetic_corpus(
        n_articles=_opt(args, config, "n_articles", 2000),
        n_topics=_opt(args, config, "n_topics", 5),
        words_per_topic=_opt(args, config, "words_per_topic", 200),
        seed=args.seed,
    )
    corpus_path = out / "corpus.jsonl"
    vocab_path = out / "vocab.txt"
    write_corpus(corpus_path, articles)
    vocab.save(vocab_path)
    _write_manifest(
        out, "synth-corpus", {}, [corpus_path, vocab_path], args.seed, config
    )
    print(f"wrote {len(articles)} articles to {corpus_path}")
    return 0


def _read_raw_articles(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            for key in ("id", "category", "headline", "paragraphs"):
                if key not in obj:
                    raise CorpusError(f"line {lineno}: missing {key!r} field")
            yield obj


def _cmd_prep(args) -> int:
    config = _load_config(args.config)
    min_count = _opt(args, config, "min_count", 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    raw = list(_read_raw_articles(args.input))
    texts = []
    for obj in raw:
        texts.append(obj["headline"])
        texts.extend(obj["paragraphs"])
    vocab = build_vocabulary(texts, min_count=min_count)

    articles = []
    for obj in raw:
        paragraphs = [vocab.encode(tokenize(p)) for p in obj["paragraphs"]]
        paragraphs = [p for p in paragraphs if p]
        headline = vocab.encode(tokenize(obj["headline"]))
        if not headline or not paragraphs:
            continue
        articles.append(
            Article(
                id=str(obj["id"]),
                category=str(obj["category"]),
                headline=headline,
                paragraphs=paragraphs,
                label=obj.get("label"),
            )
        )
    corpus_path = out / "corpus.jsonl"
    vocab_path = out / "vocab.txt"
    write_corpus(corpus_path, articles)
    vocab.save(vocab_path)
    _write_manifest(
        out, "prep", {"input": args.input}, [corpus_path, vocab_path], None, config
    )
    print(f"wrote {len(articles)} articles, vocabulary size {vocab.size}")
    return 0


def _cmd_stats(args) -> int:
    stats = corpus_stats(read_corpus(args.corpus))
    print(json.dumps(stats.to_dict(), indent=2))
    return 0


def _cmd_generate(args) -> int:
    config = _load_config(args.config)
    fractions = _opt(args, config, "fractions", "0.8,0.1,0.1")
    if isinstance(fractions, str):
        fractions = tuple(float(x) for x in fractions.split(","))
    gen_config = GenConfig(
        seed=args.seed,
        donor_paragraph_min=_opt(args, config, "donor_min", 1),
        donor_paragraph_max=_opt(args, config, "donor_max", 3),
        insertion_mode=_opt(args, config, "mode", "insert"),
        category_match=_opt(args, config, "category_match", True),
        split_fractions=tuple(fractions),
        advert_blocklist_path=_opt(args, config, "blocklist", None),
        n_pairs=_opt(args, config, "n_pairs", None),
    )
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    corpus = list(read_corpus(args.corpus))
    dataset = build_dataset(corpus, gen_config, vocab=vocab)
    out = Path(args.out)
    dataset.manifest["inputs"] = {"corpus": str(args.corpus)}
    hashes = dataset.save(out)
    counts = dataset.manifest["counts"]
    print(
        f"wrote {counts['train']['total']}/{counts['dev']['total']}/"
        f"{counts['test']['total']} articles to {out}"
    )
    for name, digest in sorted(hashes.items()):
        print(f"  {name} sha256={digest}")
    return 0


def _cmd_ip_expand(args) -> int:
    ender_ids = ()
    if args.hierarchical:
        if not args.vocab:
            raise CorpusError("--hierarchical requires --vocab for sentence splitting")
        ender_ids = Vocabulary.load(args.vocab).sentence_ender_ids()
    articles = list(read_corpus(args.input))
    expanded = ip_transform(articles, hierarchical=args.hierarchical, sentence_ender_ids=ender_ids)
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(out_path, expanded)
    _write_manifest(
        out_path.parent,
        "ip-expand",
        {"input": args.input},
        [out_path],
        None,
        {"hierarchical": args.hierarchical},
    )
    print(f"expanded {len(articles)} articles into {len(expanded)} instances")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    vocab = Vocabulary.load(args.vocab)
    train_articles = list(read_corpus(args.train_path))
    dev_articles = list(read_corpus(args.dev_path))
    train_config = TrainConfig(
        kind=args.model,
        ip=bool(_opt(args, config, "ip", False)),
        d_emb=_opt(args, config, "d_emb", 300),
        d_h=_opt(args, config, "d_h", 64),
        conv_filters=_opt(args, config, "conv_filters", 32),
        batch_size=_opt(args, config, "batch_size", 32),
        epochs=_opt(args, config, "epochs", 5),
        learning_rate=_opt(args, config, "lr", 1e-3),
        seed=args.seed,
        max_unit_tokens=_opt(args, config, "max_unit_tokens", 200),
        max_units=_opt(args, config, "max_units", 40),
        precision=_opt(args, config, "precision", 32),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / "checkpoint.bwck"
    history_path = out / "history.csv"
    diverged = None
    try:
        result = train(train_config, train_articles, dev_articles, vocab)
    except TrainingDiverged as exc:
        result = exc.result
        diverged = str(exc)
    save_checkpoint(checkpoint_path, result.model)
    write_history_csv(history_path, result.history)
    _write_manifest(
        out,
        "train",
        {"train": args.train_path, "dev": args.dev_path, "vocab": args.vocab},
        [checkpoint_path, history_path],
        args.seed,
        {**vars(train_config)},
    )
    if diverged:
        print(f"{diverged}; wrote last good checkpoint to {checkpoint_path}", file=sys.stderr)
        return 1
    best = f" (best epoch {result.best_epoch})" if result.best_epoch else ""
    print(f"wrote {checkpoint_path}{best}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    articles = list(read_corpus(args.data))
    report = evaluate(model, articles)
    text = json.dumps(report.to_dict(), indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def _cmd_score(args) -> int:
    model = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    headline_text = Path(args.headline).read_text(encoding="utf-8")
    body_text = Path(args.body).read_text(encoding="utf-8")
    pred = score_text(model, vocab, headline_text, body_text)
    label = "incongruent" if pred.score >= DISPLAY_THRESHOLD else "congruent"
    print(
        json.dumps(
            {
                "score": pred.score,
                "label": label,
                "paragraph_scores": pred.paragraph_scores,
                "top_paragraph_index": pred.top_paragraph_index,
                "model_version": pred.model_version,
            },
            indent=2,
        )
    )
    return 0


def _cmd_serve(args) -> int:
    missing = [
        flag
        for flag, value in [
            ("--checkpoint", args.checkpoint),
            ("--vocab", args.vocab),
            ("--feedback-log", args.feedback_log),
        ]
        if not value
    ]
    if missing:
        print(
            f"usage error: serve needs {', '.join(missing)} "
            "(flags or INCONGRUITY_* environment variables)",
            file=sys.stderr,
        )
        return 2

    import uvicorn

    app = build_app_from_paths(
        args.checkpoint, args.vocab, args.feedback_log, enable_fetch=args.enable_fetch
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "synth-corpus": _cmd_synth_corpus,
    "prep": _cmd_prep,
    "stats": _cmd_stats,
    "generate": _cmd_generate,
    "ip-expand": _cmd_ip_expand,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "score": _cmd_score,
    "serve": _cmd_serve,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
