import csv
import json

import numpy as np
import pytest

from ape_anomaly.cli import main
from ape_anomaly.model import load_model


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--m", "4", "--arity", "10", "--groups", "2", "--n", "3000", "--n-test", "500",
                 "--seed", "3", "--out", str(d / "w1.jsonl"), "--test-out", str(d / "w2.jsonl"),
                 "--schema-out", str(d / "s.json")]) == 0
    assert main(["train", "--train", str(d / "w1.jsonl"), "--schema", str(d / "s.json"), "--out", str(d / "m.ape"),
                 "--dim", "4", "--epochs", "3", "--seed", "7", "--report", str(d / "report.json")]) == 0
    return d


def test_train_outputs(workdir):
    report = json.loads((workdir / "report.json").read_text())
    assert len(report["epochs"]) == 3
    manifest = json.loads((workdir / "m.ape.manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seed"] == 7
    assert manifest["config"]["dim"] == 4


def test_manifest_rerun_reproduces(workdir):
    before = (workdir / "m.ape").read_bytes()
    manifest = json.loads((workdir / "m.ape.manifest.json").read_text())
    assert main(manifest["argv"]) == 0
    assert (workdir / "m.ape").read_bytes() == before


def test_no_weight_mode(workdir, tmp_path):
    out = tmp_path / "nw.ape"
    assert main(["train", "--train", str(workdir / "w1.jsonl"), "--schema", str(workdir / "s.json"),
                 "--out", str(out), "--dim", "3", "--epochs", "1", "--mode", "no-weight",
                 "--report", str(tmp_path / "r.json")]) == 0
    model = load_model(out)
    assert model.frozen_weights and np.all(model.weights == 1.0)


def test_missing_train_is_usage_error(workdir, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--schema", str(workdir / "s.json"), "--out", "x.ape"])
    assert exc.value.code == 2


def test_runtime_error_exit_one(workdir, tmp_path):
    assert main(["train", "--train", str(tmp_path / "missing.jsonl"), "--schema", str(workdir / "s.json"),
                 "--out", str(tmp_path / "x.ape")]) == 1


def test_eval(workdir, tmp_path):
    out, curves, scores = tmp_path / "eval.json", tmp_path / "curves.csv", tmp_path / "scores.csv"
    assert main(["eval", "--model", str(workdir / "m.ape"), "--train", str(workdir / "w1.jsonl"),
                 "--test", str(workdir / "w2.jsonl"), "--c", "1", "--seed", "7", "--out", str(out),
                 "--curves", str(curves), "--scores", str(scores)]) == 0
    report = json.loads(out.read_text())
    assert 0 <= report["roc_auc"] <= 1 and 0 <= report["average_precision"] <= 1
    with open(curves) as fh:
        kinds = {r["curve"] for r in csv.DictReader(fh)}
    assert kinds == {"roc", "pr"}
    with open(scores) as fh:
        labels = [int(r["label"]) for r in csv.DictReader(fh)]
    assert set(labels) == {0, 1}


def test_eval_c_zero(workdir):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--model", str(workdir / "m.ape"), "--train", str(workdir / "w1.jsonl"),
              "--test", str(workdir / "w2.jsonl"), "--c", "0"])
    assert exc.value.code == 2


def test_score(workdir, tmp_path):
    out = tmp_path / "scores.jsonl"
    assert main(["score", "--model", str(workdir / "m.ape"), "--events", str(workdir / "w1.jsonl"),
                 "--out", str(out)]) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 3000 and all(np.isfinite(r["anomaly_score"]) for r in recs)
    assert all(len(r["pairs"]) == 3 for r in recs)


def test_score_top_and_unknown(workdir, tmp_path):
    events = tmp_path / "new.jsonl"
    first = json.loads((workdir / "w1.jsonl").read_text().splitlines()[0])
    odd = dict(first, t1="never-seen")
    events.write_text("\n".join(json.dumps(e) for e in [first] * 20 + [odd]) + "\n")
    out = tmp_path / "top.jsonl"
    assert main(["score", "--model", str(workdir / "m.ape"), "--events", str(events), "--top", "10",
                 "--out", str(out)]) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 10
    scores = [r["anomaly_score"] for r in recs]
    assert scores == sorted(scores, reverse=True)
    flagged = [r for r in recs if r["unknown"]]
    assert len(flagged) == 1 and flagged[0]["unknown"] == ["t1"]


def test_export(workdir, tmp_path):
    emb, wts = tmp_path / "emb.csv", tmp_path / "w.csv"
    assert main(["export", "--model", str(workdir / "m.ape"), "--embeddings", str(emb), "--weights", str(wts)]) == 0
    model = load_model(workdir / "m.ape")
    with open(wts) as fh:
        rows = list(csv.reader(fh))
    cells = [c for r in rows[1:] for c in r[1:] if c != ""]
    assert len(cells) == model.m * (model.m - 1) // 2
    assert rows[0] == ["type", *model.schema.types[1:]]
    with open(emb) as fh:
        for r in csv.DictReader(fh):
            t = model.schema.index(r["type"])
            vec = np.array([float(r[f"v{k}"]) for k in range(model.dim)])
            assert np.array_equal(vec, model.embeddings[t][model.vocab.lookup(t, r["entity"])])


def test_synth_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--n", "2000", "--seed", "5", "--out", str(tmp_path / f"{name}.jsonl")]) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


@pytest.mark.parametrize("rho", ["1.5", "-0.2"])
def test_synth_rho_out_of_range(tmp_path, rho):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--rho", rho, "--out", str(tmp_path / "x.jsonl")])
    assert exc.value.code == 2


def test_synth_bad_groups(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--arity", "7", "--groups", "2", "--out", str(tmp_path / "x.jsonl")])
    assert exc.value.code == 2


def test_synth_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"m": 3, "arities": 4, "groups": 2, "n_events": 10, "seed": 1}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x.jsonl")]) == 0
    assert len((tmp_path / "x.jsonl").read_text().splitlines()) == 10
