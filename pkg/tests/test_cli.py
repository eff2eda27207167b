import json

import pytest

from hiercls.cli import main
from hiercls.trace import render_trace

from conftest import CLOCK_GENERATOR_OUTPUT


@pytest.fixture
def tax_file(ipc, tmp_path):
    p = tmp_path / "ipc.tsv"
    ipc.to_file(p)
    return p


def make_corpus_file(tmp_path, ipc, per_subclass=55):
    p = tmp_path / "corpus.jsonl"
    lines = []
    i = 0
    for sub in sorted(ipc.levels[-1].codes):
        for _ in range(per_subclass):
            lines.append(json.dumps({
                "doc_id": f"d{i}", "text": "t", "main_label": sub,
                "source": "synth", "year": 2015, "status": "Accepted",
            }))
            i += 1
    p.write_text("\n".join(lines) + "\n")
    return p


class TestUsage:
    def test_unknown_flag(self, capsys):
        assert main(["score", "--definitely-not-a-flag"]) == 2

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 2

    def test_version(self, capsys):
        assert main(["--version"]) == 0


class TestScore:
    def test_clock_example(self, tax_file, tmp_path, capsys):
        out = tmp_path / "out.txt"
        out.write_text(CLOCK_GENERATOR_OUTPUT)
        rc = main(["score", "--taxonomy", str(tax_file), "--input", str(out),
                   "--gold", "H03L", "--mode", "step"])
        assert rc == 0
        body = json.loads(capsys.readouterr().out)
        assert body["main"] == pytest.approx(1.0, abs=1e-12)
        assert body["resolved_config"]["main_mode"] == "step"

    def test_bad_gold(self, tax_file, tmp_path, capsys):
        out = tmp_path / "out.txt"
        out.write_text("x")
        rc = main(["score", "--taxonomy", str(tax_file), "--input", str(out),
                   "--gold", "ZZZZ"])
        assert rc == 3
        assert "input_error" in capsys.readouterr().err

    def test_missing_input_file(self, tax_file, tmp_path, capsys):
        rc = main(["score", "--taxonomy", str(tax_file),
                   "--input", str(tmp_path / "nope.txt"), "--gold", "H03L"])
        assert rc == 3


class TestBuildDataset:
    def test_counts_and_snapshot(self, ipc, tax_file, tmp_path, capsys):
        corpus = make_corpus_file(tmp_path, ipc)
        out = tmp_path / "out"
        rc = main(["build-dataset", "--taxonomy", str(tax_file),
                   "--corpus", str(corpus), "--output-dir", str(out),
                   "--seed", "3"])
        assert rc == 0
        body = json.loads(capsys.readouterr().out)
        n_sub = len(ipc.levels[-1].codes)
        assert body["train"] == 45 * n_sub
        assert body["test"] == 5 * n_sub
        assert (out / "split_manifest.tsv").exists()
        snap = json.loads((out / "build-dataset.config.json").read_text())
        assert snap["seed"] == 3

    def test_rerun_equivalence(self, ipc, tax_file, tmp_path, capsys):
        corpus = make_corpus_file(tmp_path, ipc)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        for out in (out1, out2):
            assert main(["build-dataset", "--taxonomy", str(tax_file),
                         "--corpus", str(corpus), "--output-dir", str(out),
                         "--seed", "9"]) == 0
        assert (out1 / "split_manifest.tsv").read_text() == \
            (out2 / "split_manifest.tsv").read_text()

    def test_insufficient_corpus(self, ipc, tax_file, tmp_path, capsys):
        corpus = make_corpus_file(tmp_path, ipc, per_subclass=5)
        rc = main(["build-dataset", "--taxonomy", str(tax_file),
                   "--corpus", str(corpus), "--output-dir", str(tmp_path / "o")])
        assert rc == 3


class TestBuildOod:
    def test_basic(self, ipc, tax_file, tmp_path, capsys):
        corpus = make_corpus_file(tmp_path, ipc, per_subclass=15)
        labels = tmp_path / "labels.txt"
        labels.write_text("H03L H03K\n")
        out = tmp_path / "ood"
        rc = main(["build-ood", "--taxonomy", str(tax_file),
                   "--corpus", str(corpus), "--train-labels", str(labels),
                   "--cap-per-class", "10", "--output-dir", str(out)])
        assert rc == 0
        body = json.loads(capsys.readouterr().out)
        assert body["ood_docs"] == 20


class TestFilterTraces:
    def test_filtering(self, ipc, tax_file, tmp_path, capsys):
        good = render_trace(["H", "H03", "H03L"], ipc.level_names, ["a", "b", "c"])
        bad = render_trace(["H", "G06", "H03L"], ipc.level_names, ["a", "b", "c"])
        traces = tmp_path / "traces.jsonl"
        traces.write_text(
            json.dumps({"raw": good, "gold": "H03L"}) + "\n"
            + json.dumps({"raw": bad, "gold": "H03L"}) + "\n"
            + json.dumps({"raw": "junk", "gold": "H03L"}) + "\n"
        )
        out = tmp_path / "filt"
        rc = main(["filter-traces", "--taxonomy", str(tax_file),
                   "--input", str(traces), "--output-dir", str(out)])
        assert rc == 0
        body = json.loads(capsys.readouterr().out)
        assert body == {"kept": 1, "rejected": 2}
        kept = (out / "kept_traces.jsonl").read_text().strip().splitlines()
        assert len(kept) == 1


class TestEvaluate:
    def test_report(self, ipc, tax_file, tmp_path, capsys):
        text = render_trace(["H", "H03", "H03L"], ipc.level_names, ["x", "y", "z"])
        preds = tmp_path / "preds.jsonl"
        preds.write_text(
            json.dumps({"doc_id": "1", "gold_code": "H03L", "raw_output": text}) + "\n")
        out = tmp_path / "eval"
        rc = main(["evaluate", "--taxonomy", str(tax_file),
                   "--predictions", str(preds), "--output-dir", str(out),
                   "--format", "table"])
        assert rc == 0
        assert "Subclass" in capsys.readouterr().out
        report = json.loads((out / "eval_report.json").read_text())
        assert report["levels"][2]["accuracy"] == 1.0


class TestTrainToy:
    def test_short_run(self, tmp_path, capsys):
        out = tmp_path / "train"
        rc = main(["train-toy", "--features", "8", "--depth", "2",
                   "--branching", "3", "--iterations", "5",
                   "--output-dir", str(out), "--seed", "1"])
        assert rc == 0
        body = json.loads(capsys.readouterr().out)
        assert "final_mean_reward" in body
        log = (out / "training_log.jsonl").read_text().strip().splitlines()
        assert len(log) == 5
