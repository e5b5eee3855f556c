import csv
import json

import numpy as np
import pytest

from efc import cli
from efc.dataio import load_model
from efc.metrics import parse_report

from synth import write_cidds_csv


@pytest.fixture(scope="module")
def cidds(tmp_path_factory):
    root = tmp_path_factory.mktemp("cidds")
    write_cidds_csv(root / "benign.csv", 1000, 0, seed=1)
    write_cidds_csv(root / "mixed.csv", 700, 300, seed=2)
    write_cidds_csv(root / "test.csv", 500, 500, seed=3)
    write_cidds_csv(root / "external.csv", 500, 500, seed=4, external=True)
    return root


@pytest.fixture(scope="module")
def model_path(cidds):
    path = cidds / "model.efc"
    assert cli.main(["fit", str(cidds / "benign.csv"), str(path)]) == 0
    return path


def _read_out(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_fit_writes_model_and_manifest(model_path):
    model = load_model(model_path)
    assert model.q == 32 and model.alpha == 0.5
    assert model.schema.names == ["Duration", "Proto", "Src Pt", "Dst Pt", "Packets", "Bytes", "Flags"]
    manifest = json.loads(model_path.with_name(model_path.name + ".manifest.json").read_text())
    assert manifest["command"] == "fit"
    assert manifest["inputs"]["train_csv"].startswith("sha256:")
    assert manifest["percentile"] == 95.0 and manifest["seed"] == 0


def test_fit_excludes_malicious_rows(cidds, tmp_path, caplog):
    assert cli.main(["fit", str(cidds / "mixed.csv"), str(tmp_path / "m.efc")]) == 0
    assert "excluding 300 malicious rows" in caplog.text
    manifest = json.loads((tmp_path / "m.efc.manifest.json").read_text())
    assert manifest["parameters"]["rows_used"] == 700


def test_fit_singular_exit_code(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"label_column": "y", "benign_labels": ["0"], "malicious_labels": ["1"],
                               "feature_kinds": {"const": "categorical", "v": "categorical"}}))  # fmt: skip
    data = tmp_path / "d.csv"
    data.write_text("const,v,y\n" + "".join(f"k,{i % 3},0\n" for i in range(60)))
    code = cli.main(["fit", str(data), str(tmp_path / "m.efc"), "--config", str(cfg), "--alpha", "0", "--q", "4"])
    assert code == cli.EXIT_SINGULAR
    assert "singular" in capsys.readouterr().err


def test_fit_too_few_and_io_exit_codes(cidds, tmp_path):
    small = tmp_path / "small.csv"
    write_cidds_csv(small, 10, 0, seed=9)
    assert cli.main(["fit", str(small), str(tmp_path / "m.efc")]) == cli.EXIT_TOO_FEW
    assert cli.main(["fit", str(tmp_path / "nope.csv"), str(tmp_path / "m.efc")]) == cli.EXIT_IO
    assert cli.main(["fit", str(small), str(tmp_path / "m.efc"), "--config", "nope"]) == cli.EXIT_IO


def test_classify_training_file_flags_about_five_percent(cidds, model_path, tmp_path):
    out = tmp_path / "out.csv"
    assert cli.main(["classify", str(model_path), str(cidds / "benign.csv"), str(out)]) == 0
    rows = _read_out(out)
    assert len(rows) == 1000
    assert [int(r["row_index"]) for r in rows] == list(range(1000))
    model = load_model(model_path)
    for r in rows:
        assert (r["verdict"] == "malicious") == (float(r["energy"]) >= model.cutoff)
    flagged = sum(r["verdict"] == "malicious" for r in rows)
    assert 50 <= flagged <= 60


def test_classify_schema_mismatch(model_path, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("Duration,Proto\n1.0,TCP\n")
    assert cli.main(["classify", str(model_path), str(bad), str(tmp_path / "o.csv")]) == cli.EXIT_SCHEMA


@pytest.mark.parametrize("content", ["", "Duration,Proto,Src Pt,Dst Pt,Packets,Bytes,Flags\n"])
def test_classify_empty_csv(model_path, tmp_path, content):
    src = tmp_path / "empty.csv"
    src.write_text(content)
    out = tmp_path / "o.csv"
    assert cli.main(["classify", str(model_path), str(src), str(out)]) == 0
    assert out.read_text() == "row_index,energy,verdict\n"


def test_classify_with_delimiter(cidds, model_path, tmp_path):
    lines = (cidds / "test.csv").read_text().splitlines()[:20]
    semi = tmp_path / "semi.csv"
    semi.write_text("\n".join(";".join(next(csv.reader([ln]))) for ln in lines) + "\n")
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    (tmp_path / "comma.csv").write_text("\n".join(lines) + "\n")
    assert cli.main(["classify", "--delimiter", ";", str(model_path), str(semi), str(out_a)]) == 0
    assert cli.main(["classify", str(model_path), str(tmp_path / "comma.csv"), str(out_b)]) == 0
    assert out_a.read_text() == out_b.read_text()


def test_eval_report(cidds, model_path, tmp_path):
    report = tmp_path / "report.txt"
    assert cli.main(["eval", str(model_path), str(cidds / "test.csv"), str(report)]) == 0
    values = parse_report(report.read_text())
    assert int(values["n"]) == 1000
    assert float(values["auc"]) > 0.95
    assert float(values["f1"]) > 0.85
    roc = (tmp_path / "report.txt.roc.csv").read_text().splitlines()
    assert roc[0] == "fpr,tpr" and roc[1] == "0.0,0.0" and roc[-1] == "1.0,1.0"


def test_eval_cross_domain_same_format(cidds, model_path, tmp_path):
    report = tmp_path / "ext.txt"
    args = ["eval", str(model_path), str(cidds / "external.csv"), str(report), "--config", "cidds001-external"]
    assert cli.main(args) == 0
    assert set(parse_report(report.read_text())) == set(parse_report(cli.evaluate_table(
        load_model(model_path), cli.load_csv(cidds / "test.csv", cli.load_config("cidds001"))).to_text()))  # fmt: skip


def test_eval_single_class(cidds, model_path, tmp_path):
    code = cli.main(["eval", str(model_path), str(cidds / "benign.csv"), str(tmp_path / "r.txt")])
    assert code == cli.EXIT_SINGLE_CLASS


def test_energies_separable(cidds, tmp_path):
    model = tmp_path / "m.efc"
    assert cli.main(["fit", str(cidds / "mixed.csv"), str(model)]) == 0
    out = tmp_path / "energies.json"
    assert cli.main(["energies", str(model), str(cidds / "mixed.csv"), str(out)]) == 0
    doc = json.loads(out.read_text())
    benign = np.array(doc["benign_energies"])
    malicious = np.array(doc["malicious_energies"])
    assert benign.size == 700 and malicious.size == 300
    hist = doc["histogram"]
    assert sum(hist["benign_counts"]) == 700 and sum(hist["malicious_counts"]) == 300
    # the cutoff is the ceil(0.95 n)-th smallest training energy
    assert np.mean(benign <= hist["cutoff"]) >= 0.95
    assert hist["malicious_at_or_above_cutoff"] > 0.75


def test_energies_alpha_one_single_bin(cidds, tmp_path):
    model = tmp_path / "m.efc"
    assert cli.main(["fit", str(cidds / "mixed.csv"), str(model), "--alpha", "1"]) == 0
    out = tmp_path / "e.json"
    assert cli.main(["energies", str(model), str(cidds / "mixed.csv"), str(out)]) == 0
    doc = json.loads(out.read_text())
    assert set(doc["benign_energies"]) == {0.0} and set(doc["malicious_energies"]) == {0.0}
    counts = np.array(doc["histogram"]["benign_counts"]) + np.array(doc["histogram"]["malicious_counts"])
    assert np.count_nonzero(counts) == 1


def test_energies_without_malicious(cidds, model_path, tmp_path):
    out = tmp_path / "e.json"
    assert cli.main(["energies", str(model_path), str(cidds / "benign.csv"), str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["malicious_energies"] == [] and len(doc["benign_energies"]) == 1000


def _crosseval(cidds, out, *extra):
    args = ["crosseval", str(cidds / "mixed.csv"), str(cidds / "test.csv"), str(cidds / "mixed.csv"),
            "--report-dir", str(out), "--folds", "10", "--seed", "7", *extra]  # fmt: skip
    return cli.main(args)


def test_crosseval_protocol(cidds, tmp_path, capsys):
    out = tmp_path / "run"
    assert _crosseval(cidds, out) == 0
    printed = capsys.readouterr().out
    assert "Train/Test mixed" in printed and "±" in printed
    reports = sorted(p.name for p in out.glob("fold*.txt"))
    assert len(reports) == 30
    assert len([r for r in reports if r.endswith("_same.txt")]) == 10
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"same", "test", "mixed"}
    same_auc, cross_auc = summary["same"]["auc_mean_std"][0], summary["mixed"]["auc_mean_std"][0]
    assert abs(same_auc - cross_auc) < 0.05
    assert json.loads((out / "manifest.json").read_text())["parameters"]["folds"] == 10


def test_crosseval_is_deterministic(cidds, tmp_path, monkeypatch):
    monkeypatch.setenv("EFC_THREADS", "1")
    assert _crosseval(cidds, tmp_path / "a") == 0
    monkeypatch.setenv("EFC_THREADS", "4")
    assert _crosseval(cidds, tmp_path / "b") == 0
    for path in sorted((tmp_path / "a").glob("fold*.txt")) + [tmp_path / "a" / "summary.txt"]:
        assert path.read_text() == (tmp_path / "b" / path.name).read_text()


def test_crosseval_too_few_rows(tmp_path):
    small = tmp_path / "s.csv"
    write_cidds_csv(small, 5, 0, seed=1)
    code = cli.main(["crosseval", str(small), "--report-dir", str(tmp_path / "r"), "--folds", "10"])
    assert code == cli.EXIT_DATA
