import json

import pytest

from incongruity.cli import run
from incongruity.datagen import sha256_file
from incongruity.textcorpus import read_corpus


def _run(capsys, *argv):
    code = run(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth-corpus -> generate -> train, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus_dir = root / "corpus"
    data_dir = root / "data"
    model_dir = root / "model"
    assert (
        run(
            [
                "synth-corpus",
                "--out", str(corpus_dir),
                "--seed", "7",
                "--n-articles", "160",
                "--n-topics", "3",
                "--words-per-topic", "40",
            ]
        )
        == 0
    )
    assert (
        run(
            [
                "generate",
                "--corpus", str(corpus_dir / "corpus.jsonl"),
                "--out", str(data_dir),
                "--seed", "11",
                "--n-pairs", "60",
                "--no-category-match",
                "--mode", "replace",
            ]
        )
        == 0
    )
    assert (
        run(
            [
                "train",
                "--train", str(data_dir / "train.jsonl"),
                "--dev", str(data_dir / "dev.jsonl"),
                "--vocab", str(corpus_dir / "vocab.txt"),
                "--out", str(model_dir),
                "--model", "rde",
                "--ip",
                "--seed", "5",
                "--d-emb", "8",
                "--d-h", "8",
                "--epochs", "1",
                "--batch-size", "32",
            ]
        )
        == 0
    )
    return root


class TestUsage:
    def test_unknown_subcommand_exits_2(self, capsys):
        code, _, _ = _run(capsys, "frobnicate")
        assert code == 2

    def test_serve_without_paths_exits_2(self, capsys, monkeypatch):
        for var in ("INCONGRUITY_CHECKPOINT", "INCONGRUITY_VOCAB", "INCONGRUITY_FEEDBACK_LOG"):
            monkeypatch.delenv(var, raising=False)
        code, _, err = _run(capsys, "serve")
        assert code == 2
        assert "--checkpoint" in err

    def test_unknown_flag_exits_2(self, capsys):
        code, _, _ = _run(capsys, "stats", "--corpus", "x", "--bogus")
        assert code == 2

    def test_missing_seed_exits_2(self, capsys):
        code, _, _ = _run(capsys, "synth-corpus", "--out", "x")
        assert code == 2

    def test_runtime_error_exits_1(self, capsys):
        code, _, err = _run(capsys, "stats", "--corpus", "/nonexistent/corpus.jsonl")
        assert code == 1
        assert "error:" in err


class TestSynthAndGenerate:
    def test_generate_is_deterministic(self, tmp_path, capsys):
        corpus_dir = tmp_path / "c"
        code, _, _ = _run(
            capsys, "synth-corpus", "--out", str(corpus_dir), "--seed", "3",
            "--n-articles", "80", "--n-topics", "2", "--words-per-topic", "30",
        )
        assert code == 0
        hashes = []
        for sub in ("g1", "g2"):
            out = tmp_path / sub
            code, _, _ = _run(
                capsys, "generate", "--corpus", str(corpus_dir / "corpus.jsonl"),
                "--out", str(out), "--seed", "42", "--n-pairs", "30",
            )
            assert code == 0
            manifest = json.loads((out / "manifest.json").read_text())
            hashes.append(manifest["content_hashes"])
        assert hashes[0] == hashes[1]

    def test_manifest_names_inputs_and_outputs(self, workspace):
        manifest = json.loads((workspace / "data" / "manifest.json").read_text())
        assert manifest["inputs"]["corpus"].endswith("corpus.jsonl")
        for name in ("train.jsonl", "dev.jsonl", "test.jsonl"):
            assert name in manifest["content_hashes"]
            assert manifest["content_hashes"][name] == sha256_file(
                workspace / "data" / name
            )

    def test_stats_prints_json(self, workspace, capsys):
        code, out, _ = _run(
            capsys, "stats", "--corpus", str(workspace / "corpus" / "corpus.jsonl")
        )
        assert code == 0
        stats = json.loads(out)
        assert stats["n_articles"] == 160
        assert stats["headline_tokens"]["mean"] > 0


class TestIpExpand:
    def test_expansion_counts(self, workspace, capsys):
        out_path = workspace / "expanded.jsonl"
        code, out, _ = _run(
            capsys, "ip-expand",
            "--input", str(workspace / "data" / "dev.jsonl"),
            "--output", str(out_path),
        )
        assert code == 0
        source = list(read_corpus(workspace / "data" / "dev.jsonl"))
        expanded = list(read_corpus(out_path))
        assert len(expanded) == sum(len(a.paragraphs) for a in source)
        assert all(len(a.paragraphs) == 1 for a in expanded)

    def test_hierarchical_requires_vocab(self, workspace, capsys):
        code, _, err = _run(
            capsys, "ip-expand",
            "--input", str(workspace / "data" / "dev.jsonl"),
            "--output", str(workspace / "x.jsonl"),
            "--hierarchical",
        )
        assert code == 1
        assert "vocab" in err


class TestTrainEvalScore:
    def test_train_wrote_artifacts(self, workspace):
        model_dir = workspace / "model"
        assert (model_dir / "checkpoint.bwck").exists()
        history = (model_dir / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,train_loss,dev_loss,dev_auroc"
        assert len(history) == 2
        manifest = json.loads((model_dir / "manifest.json").read_text())
        assert manifest["seed"] == 5
        assert "checkpoint.bwck" in manifest["outputs"]

    def test_eval_reports_metrics(self, workspace, capsys):
        code, out, _ = _run(
            capsys, "eval",
            "--checkpoint", str(workspace / "model" / "checkpoint.bwck"),
            "--data", str(workspace / "data" / "test.jsonl"),
        )
        assert code == 0
        report = json.loads(out)
        assert 0.0 <= report["accuracy"] <= 1.0
        assert 0.0 <= report["auroc"] <= 1.0
        assert report["n_articles"] == 6

    def test_score_outputs_prediction(self, workspace, tmp_path, capsys):
        corpus = list(read_corpus(workspace / "corpus" / "corpus.jsonl"))
        vocab_path = workspace / "corpus" / "vocab.txt"
        from incongruity.textcorpus import Vocabulary

        vocab = Vocabulary.load(vocab_path)
        art = corpus[0]
        headline_file = tmp_path / "headline.txt"
        body_file = tmp_path / "body.txt"
        headline_file.write_text(" ".join(vocab.decode(art.headline)))
        body_file.write_text(
            "\n".join(" ".join(vocab.decode(p)) for p in art.paragraphs)
        )
        code, out, _ = _run(
            capsys, "score",
            "--checkpoint", str(workspace / "model" / "checkpoint.bwck"),
            "--vocab", str(vocab_path),
            "--headline", str(headline_file),
            "--body", str(body_file),
        )
        assert code == 0
        pred = json.loads(out)
        assert 0.0 < pred["score"] < 1.0
        assert pred["label"] in ("congruent", "incongruent")
        assert pred["score"] == max(pred["paragraph_scores"])
        assert len(pred["paragraph_scores"]) == len(art.paragraphs)

    def test_config_overlay_flags_win(self, workspace, tmp_path, capsys):
        config_path = tmp_path / "overlay.json"
        config_path.write_text(json.dumps({"n_articles": 10, "n_topics": 2, "words_per_topic": 25}))
        out_dir = tmp_path / "overlay_corpus"
        code, out, _ = _run(
            capsys, "synth-corpus",
            "--out", str(out_dir), "--seed", "1",
            "--config", str(config_path),
            "--n-articles", "12",
        )
        assert code == 0
        articles = list(read_corpus(out_dir / "corpus.jsonl"))
        assert len(articles) == 12  # explicit flag beats config value
        assert len({a.category for a in articles}) <= 2
