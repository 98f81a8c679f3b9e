import json

import pytest

from annotation_fixtures import RECORDS, document, mock_script
from pinpoint.alignment import AlignmentModel
from pinpoint.annotate import read_outcomes
from pinpoint.cli import main
from pinpoint.selection import SelectionResult
from pinpoint.training import read_history


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d.npz"
    assert main(["synth-gen", "--n", "10", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(dataset), "--out", str(out), "--override", "K=4",
                 "--override", "max_steps=3", "--override", "lambda=0", "--override", "lr=1e-2"]) == 0
    return out


def test_train_outputs_and_lambda_zero(trained):
    rows = read_history(trained / "history.csv")
    assert len(rows) == 3
    assert all(r.L_total == r.L_inter and r.L_intra > 0 for r in rows)
    assert AlignmentModel.load(trained / "model.json").K == 4


def test_train_deterministic(dataset, trained, tmp_path):
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path), "--override", "K=4",
                 "--override", "max_steps=3", "--override", "lambda=0", "--override", "lr=1e-2"]) == 0
    assert (tmp_path / "model.json").read_bytes() == (trained / "model.json").read_bytes()


def test_config_echoed(dataset, tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("K = 4\nmax_steps = 1\n")
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "o"), "--config", str(cfg),
                 "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "#   K = 4" in out and "#   seed = 3" in out


def test_missing_data_path(tmp_path, capsys):
    missing = tmp_path / "nope.npz"
    assert main(["train", "--data", str(missing), "--out", str(tmp_path)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_bad_config_line(dataset, tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("K = 4\nnot a setting\n")
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path), "--config", str(cfg)]) == 1
    assert "c.txt:2" in capsys.readouterr().err


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code != 0


def test_select_writes_one_line_per_sample(dataset, trained, tmp_path):
    out = tmp_path / "s.jsonl"
    assert main(["select", "--data", str(dataset), "--model", str(trained / "model.json"), "--out", str(out),
                 "--override", "K=4"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 10
    assert all(isinstance(SelectionResult.from_dict(json.loads(line)), SelectionResult) for line in lines)


def test_eval_summary_line(dataset, trained, tmp_path, capsys):
    assert main(["eval", "--data", str(dataset), "--model", str(trained / "model.json"), "--override", "K=4",
                 "--out", str(tmp_path / "r.json")]) == 0
    last = capsys.readouterr().out.strip().splitlines()[-1]
    assert last.startswith("ANLS=") and "Region Acc.=" in last and "Cov.=" in last
    assert json.loads((tmp_path / "r.json").read_text())["n_samples"] == 10


def test_bench_flops_ratio(tmp_path):
    assert main(["bench-flops", "--override", "r=0.6", "--out", str(tmp_path / "p.json")]) == 0
    assert main(["bench-flops", "--vanilla", "--out", str(tmp_path / "v.json")]) == 0
    p = json.loads((tmp_path / "p.json").read_text())
    v = json.loads((tmp_path / "v.json").read_text())
    assert p["ratio"] < 1.0 and v["ratio"] == 1.0
    assert "alignment_share" in p


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("max rel err") and float(line.split()[-1]) < 1e-5


def test_annotate_and_stats(tmp_path):
    recs = tmp_path / "r.jsonl"
    recs.write_text("".join(json.dumps({"question_id": r.question_id, "image_id": r.image_id,
                                        "question": r.question, "answers": r.answers}) + "\n" for r in RECORDS))
    docs = tmp_path / "d.jsonl"
    docs.write_text(json.dumps(document().to_dict()) + "\n")
    script = tmp_path / "m.json"
    script.write_text(json.dumps(mock_script()))
    outs = []
    for par in ("1", "3"):
        out = tmp_path / f"o{par}.jsonl"
        assert main(["annotate", "--records", str(recs), "--docs", str(docs), "--mock-script", str(script),
                     "--parallelism", par, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert [o.case for o in read_outcomes(tmp_path / "o1.jsonl")] == ["unique", "multiple", "grounded", "manual"]
    stats = tmp_path / "s.csv"
    assert main(["stats", f"val={tmp_path / 'o1.jsonl'}", "--out", str(stats)]) == 0
    assert stats.read_text().splitlines()[1].startswith("val,4,3,")


def test_annotate_malformed_records(tmp_path, capsys):
    recs = tmp_path / "r.jsonl"
    recs.write_text('{"question_id": "a"}\n')
    assert main(["annotate", "--records", str(recs), "--mock-script", str(recs), "--out", str(tmp_path / "o")]) == 1
    assert "r.jsonl:1" in capsys.readouterr().err


def test_relevance_command(dataset, tmp_path):
    assert main(["relevance", "--data", str(dataset), "--out", str(tmp_path / "f.csv")]) == 0
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "condition,accuracy"
