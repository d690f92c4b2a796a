import json
from pathlib import Path

import pytest

from medext.cli import main
from medext.corpus import TagScheme, load_annotations, load_conll


def run(*argv):
    return main(list(argv))


def read_tree(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


@pytest.fixture(scope="module")
def corpus_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert run("gen-corpus", "--size", "60", "--corpus-seed", "3", "--out", str(out)) == 0
    return out / "corpus.tsv", out / "annotations.jsonl"


@pytest.fixture(scope="module")
def trained_model(tmp_path_factory, corpus_files):
    tags, ann = corpus_files
    out = tmp_path_factory.mktemp("model")
    code = run(
        "train", "--tags", str(tags), "--annotations", str(ann),
        "--steps", "40", "--seed", "1", "--out", str(out),
    )
    assert code == 0
    return out / "model.json"


class TestGenCorpus:
    def test_size_zero_writes_valid_empty_files(self, tmp_path):
        assert run("gen-corpus", "--size", "0", "--out", str(tmp_path)) == 0
        corpus = load_conll(tmp_path / "corpus.tsv", TagScheme())
        assert len(corpus) == 0
        assert (tmp_path / "annotations.jsonl").read_text() == ""

    def test_outputs_load_back(self, corpus_files):
        tags, ann = corpus_files
        corpus = load_annotations(load_conll(tags, TagScheme()), ann)
        assert len(corpus) == 60

    def test_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("gen-corpus", "--size", "25", "--corpus-seed", "9", "--out", str(out)) == 0
        assert read_tree(a) == read_tree(b)


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert run("train", "--bogus") == 1
        err = capsys.readouterr().err
        assert "usage" in err

    def test_unknown_config_key_via_set(self, capsys):
        assert run("train", "--set", "train.bogus=1") == 1
        assert "train.bogus" in capsys.readouterr().err

    def test_unknown_config_key_in_file(self, tmp_path, capsys):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"train": {"mystery_knob": 2}}))
        assert run("train", "--config", str(cfg)) == 1
        assert "train.mystery_knob" in capsys.readouterr().err

    def test_missing_corpus_file(self, capsys):
        assert run("train", "--tags", "/nonexistent/corpus.tsv") == 1
        assert "not found" in capsys.readouterr().err

    def test_missing_checkpoint(self, tmp_path):
        assert run("eval", "--checkpoint", str(tmp_path / "nope.json")) == 1

    def test_invalid_config_value(self, capsys):
        assert run("train", "--set", "train.learning_rate=-1") == 1
        assert "learning_rate" in capsys.readouterr().err


class TestConfigPrecedence:
    def test_flags_win_over_file(self, tmp_path):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"corpus": {"size": 10}, "train": {"steps": 1}}))
        out = tmp_path / "run"
        assert run(
            "gen-corpus", "--config", str(cfg), "--size", "5", "--out", str(out)
        ) == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["corpus"]["size"] == 5
        assert resolved["train"]["steps"] == 1
        assert "output_dir" not in resolved

    def test_set_overrides_file(self, tmp_path):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"corpus": {"size": 10}}))
        out = tmp_path / "run"
        assert run(
            "gen-corpus", "--config", str(cfg), "--set", "corpus.size=7", "--out", str(out)
        ) == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["corpus"]["size"] == 7


class TestTrainEval:
    def test_train_outputs(self, trained_model):
        out_dir = trained_model.parent
        assert trained_model.exists()
        log = (out_dir / "loss_log.csv").read_text().strip().split("\n")
        assert log[0] == "step,loss,ner_loss,re_loss"
        assert len(log) == 41

    def test_train_does_not_mutate_inputs(self, tmp_path, corpus_files):
        tags, ann = corpus_files
        before = (tags.read_bytes(), ann.read_bytes())
        assert run(
            "train", "--tags", str(tags), "--annotations", str(ann),
            "--steps", "2", "--out", str(tmp_path / "m"),
        ) == 0
        assert (tags.read_bytes(), ann.read_bytes()) == before

    def test_eval_writes_reports(self, tmp_path, corpus_files, trained_model):
        tags, ann = corpus_files
        out = tmp_path / "eval"
        code = run(
            "eval", "--checkpoint", str(trained_model), "--tags", str(tags),
            "--annotations", str(ann), "--split", "test", "--out", str(out),
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert "entities" in report and "micro" in report["entities"]
        assert "relations_gold_spans" in report
        md = (out / "report.md").read_text()
        assert md.startswith("| Method | Precision | Recall | F1-Score |")

    def test_train_rerun_byte_identical(self, tmp_path, corpus_files):
        tags, ann = corpus_files
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(
                "train", "--tags", str(tags), "--annotations", str(ann),
                "--steps", "5", "--seed", "2", "--out", str(out),
            ) == 0
        assert read_tree(a) == read_tree(b)


class TestPretrain:
    def test_outputs_and_determinism(self, tmp_path, corpus_files):
        tags, ann = corpus_files
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(
                "pretrain", "--tags", str(tags), "--annotations", str(ann),
                "--steps", "5", "--out", str(out),
            ) == 0
        assert read_tree(a) == read_tree(b)
        log = (a / "pretrain_log.csv").read_text().strip().split("\n")
        assert log[0] == "step,loss"
        assert len(log) == 6


class TestCompareHeads:
    def test_three_row_table(self, tmp_path, corpus_files):
        tags, ann = corpus_files
        out = tmp_path / "cmp"
        code = run(
            "compare-heads", "--tags", str(tags), "--annotations", str(ann),
            "--steps", "3", "--out", str(out),
        )
        assert code == 0
        lines = (out / "comparison.md").read_text().strip().split("\n")
        assert lines[0] == "| Method | Precision | Recall | F1-Score |"
        assert [line.split("|")[1].strip() for line in lines[2:]] == [
            "crf", "span", "seq2seq",
        ]
        details = json.loads((out / "comparison.json").read_text())
        assert set(details) == {"crf", "span", "seq2seq"}


class TestFewshotCurve:
    def test_csv_outputs(self, tmp_path, corpus_files):
        tags, ann = corpus_files
        out = tmp_path / "curve"
        code = run(
            "fewshot-curve", "--tags", str(tags), "--annotations", str(ann),
            "--set", "curve.k_values=[1,2]", "--set", "curve.seeds_per_k=2",
            "--steps", "2", "--out", str(out),
        )
        assert code == 0
        rows = (out / "curve.csv").read_text().strip().split("\n")
        assert rows[0] == "k,seed,precision,recall,f1"
        assert len(rows) == 5
        summary = (out / "curve_summary.csv").read_text().strip().split("\n")
        assert summary[0] == "k,median_f1,min_f1,max_f1"
        assert len(summary) == 3


class TestPredict:
    def test_jsonl_spans(self, tmp_path, trained_model):
        text = tmp_path / "raw.txt"
        text.write_text("the patient presented with influenza during admission\n\n")
        out_file = tmp_path / "pred.jsonl"
        code = run(
            "predict", "--checkpoint", str(trained_model),
            "--input", str(text), "--out-file", str(out_file),
        )
        assert code == 0
        lines = out_file.read_text().strip().split("\n")
        assert len(lines) == 1  # blank line skipped
        record = json.loads(lines[0])
        assert record["tokens"][0] == "the"
        for span in record["spans"]:
            assert set(span) == {"start", "end", "cls"}

    def test_missing_input_file(self, trained_model):
        assert run("predict", "--checkpoint", str(trained_model), "--input", "/nope.txt") == 1
