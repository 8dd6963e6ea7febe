import csv
import json
import subprocess
import sys
from importlib import resources

import jsonschema
import numpy as np
import pytest

from shiftdiag.cli import main


def write_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])
    return str(path)


def schema(name):
    return json.loads(resources.files("shiftdiag").joinpath("schemas", name).read_text())


def without_timestamp(text):
    d = json.loads(text)
    d["metadata"].pop("created_at")
    return d


@pytest.fixture
def tables(tmp_path):
    r = np.random.default_rng(0)
    ref = r.standard_normal((300, 3))
    cur = r.standard_normal((300, 3))
    cur[:, 2] += 5
    hdr = ["a", "b", "c"]
    return {"ref": write_csv(tmp_path / "ref.csv", hdr, ref.T),
            "same": write_csv(tmp_path / "same.csv", hdr, ref.T),
            "shift": write_csv(tmp_path / "shift.csv", hdr, cur.T)}


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_detect_identical_is_clean(tables, tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _ = run(["detect", tables["ref"], tables["same"], "--out", str(out)], capsys)
    rep = json.loads(out.read_text())
    assert code == 0 and rep["rejections"] == []
    jsonschema.validate(rep, schema("shift_report.schema.json"))
    assert rep["covariate"]["shift_detected"] is False


def test_detect_flags_shifted_feature(tables, tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _ = run(["detect", tables["ref"], tables["shift"], "--out", str(out)], capsys)
    rep = json.loads(out.read_text())
    assert code == 1
    jsonschema.validate(rep, schema("shift_report.schema.json"))
    flagged = [n for n, f in rep["covariate"]["features"].items() if f["ks"]["reject"]]
    assert flagged == ["c"]
    assert "covariate:static" in rep["taxonomy_labels"]


def test_detect_missing_file_exits_2(tables, tmp_path, capsys):
    out = tmp_path / "r.json"
    code, err = run(["detect", tables["ref"], str(tmp_path / "nope.csv"), "--out", str(out)],
                    capsys)
    assert code == 2 and not out.exists() and "error" in err.err


def test_detect_label_shift(tmp_path, capsys):
    r = np.random.default_rng(1)
    x = r.standard_normal((2, 400))
    ref = write_csv(tmp_path / "r.csv", ["x", "y"], [x[0], (r.random(400) < 0.2)])
    cur = write_csv(tmp_path / "c.csv", ["x", "y"], [x[1], (r.random(400) < 0.8)])
    out = tmp_path / "o.json"
    code, _ = run(["detect", ref, cur, "--label", "y", "--out", str(out)], capsys)
    rep = json.loads(out.read_text())
    assert code == 1 and "label:static" in rep["taxonomy_labels"]
    jsonschema.validate(rep, schema("shift_report.schema.json"))


def test_bad_arguments_exit_2(capsys):
    assert main(["detect"]) == 2
    assert main(["nonsense"]) == 2


def events(text):
    ev = [json.loads(line) for line in text.splitlines() if line.strip()]
    for e in ev:
        jsonschema.validate(e, schema("drift_event.schema.json"))
    return ev


def test_stream_ddm(tmp_path, capsys):
    ok = write_csv(tmp_path / "ok.csv", ["error"], [np.zeros(500)])
    code, out = run(["stream", ok], capsys)
    assert code == 0 and events(out.out) == []
    r = np.random.default_rng(2)
    errs = np.r_[r.random(500) < 0.1, r.random(500) < 0.9]
    bad = write_csv(tmp_path / "bad.csv", ["error"], [errs])
    code, out = run(["stream", bad], capsys)
    assert code == 1 and any(e["kind"] == "drift" and e["index"] > 500 for e in events(out.out))


def test_stream_ddm_rejects_non_binary(tmp_path, capsys):
    p = write_csv(tmp_path / "e.csv", ["error"], [np.full(50, 0.5)])
    assert run(["stream", p], capsys)[0] == 2


def test_stream_windows(tmp_path, capsys):
    r = np.random.default_rng(3)
    X = r.standard_normal((300, 2))
    X[150:, 0] += 3
    p = write_csv(tmp_path / "w.csv", ["u", "v"], X.T)
    code, out = run(["stream", p, "--mode", "windows", "--window", "50"], capsys)
    ev = events(out.out)
    assert code == 1 and ev[0]["index"] == 3 and ev[0]["kind"] == "divergence-drift"
    short = write_csv(tmp_path / "s.csv", ["u"], [X[:60, 0]])
    assert run(["stream", short, "--mode", "windows", "--window", "50"], capsys)[0] == 2


def test_stream_metrics(tmp_path, capsys):
    r = np.random.default_rng(4)
    y = (r.random(400) < 0.5).astype(float)
    score = np.clip(y * 0.6 + r.uniform(0, 0.4, 400), 0, 1)
    score[200:] = 1 - score[200:]
    p = write_csv(tmp_path / "m.csv", ["s", "y"], [score, y])
    code, out = run(["stream", p, "--mode", "metrics", "--prediction", "s", "--outcome", "y",
                     "--window", "100"], capsys)
    assert code == 1 and {e["kind"] for e in events(out.out)} == {"metric-drift"}
    assert run(["stream", p, "--mode", "metrics"], capsys)[0] == 2


def concept_files(tmp_path, seed=0, disjoint=False, same=False):
    r = np.random.default_rng(seed)
    xp, xq = r.standard_normal(600), r.standard_normal(600)
    if disjoint:
        xq = xq + 20
    lp = (xp - xp) ** 2 + r.uniform(0, 0.1, 600)
    lq = lp.copy() if same else 4 * xq ** 2
    if same:
        xq = xp
    return (write_csv(tmp_path / "p.csv", ["x", "loss"], [xp, lp]),
            write_csv(tmp_path / "q.csv", ["x", "loss"], [xq, lq]))


def test_decompose_identical(tmp_path, capsys):
    p, q = concept_files(tmp_path, same=True)
    out = tmp_path / "d.json"
    code, _ = run(["decompose", p, q, "--out", str(out)], capsys)
    rep = json.loads(out.read_text())
    jsonschema.validate(rep, schema("shift_report.schema.json"))
    d = rep["concept"]["decomposition"]
    assert code == 0
    assert max(abs(d[t]) for t in ("covariate_term", "concept_term", "oos_term")) <= 1e-10


def test_decompose_concept_dominant(tmp_path, capsys):
    p, q = concept_files(tmp_path)
    out = tmp_path / "d.json"
    run(["decompose", p, q, "--k", "20", "--out", str(out)], capsys)
    d = json.loads(out.read_text())["concept"]["decomposition"]
    assert abs(d["concept_term"]) >= 0.8 * abs(d["total_gap"])


def test_decompose_disjoint(tmp_path, capsys):
    p, q = concept_files(tmp_path, disjoint=True)
    out = tmp_path / "d.json"
    code, _ = run(["decompose", p, q, "--out", str(out)], capsys)
    rep = json.loads(out.read_text())
    jsonschema.validate(rep, schema("shift_report.schema.json"))
    assert code == 1 and rep["concept"]["status"] == "no_common_support"


def test_decompose_prediction_columns(tmp_path, capsys):
    r = np.random.default_rng(5)
    x = r.standard_normal((2, 200))
    p = write_csv(tmp_path / "p.csv", ["x", "f", "y"], [x[0], x[0], x[0] + 0.1])
    q = write_csv(tmp_path / "q.csv", ["x", "f", "y"], [x[1], x[1], -x[1]])
    out = tmp_path / "d.json"
    code, _ = run(["decompose", p, q, "--prediction", "f", "--outcome", "y",
                   "--loss", "squared", "--out", str(out)], capsys)
    assert code == 0
    assert json.loads(out.read_text())["concept"]["decomposition"]["concept_term"] > 1
    assert run(["decompose", p, q, "--prediction", "f"], capsys)[0] == 2


def test_viz(tables, tmp_path, capsys):
    code, _ = run(["viz", tables["ref"], tables["shift"], "--out-dir", str(tmp_path / "v")],
                  capsys)
    assert code == 0
    pca = list(csv.reader(open(tmp_path / "v" / "pca.csv")))
    assert pca[0] == ["component_1", "component_2", "source"] and len(pca) == 601
    ecdf = list(csv.reader(open(tmp_path / "v" / "ecdf.csv")))
    assert ecdf[0] == ["t", "F", "source", "feature"]


def test_viz_too_many_components(tmp_path, capsys):
    r = np.random.default_rng(6)
    a = write_csv(tmp_path / "a.csv", ["u", "v"], r.standard_normal((2, 20)))
    assert run(["viz", a, a, "--components", "3", "--out-dir", str(tmp_path)], capsys)[0] == 2


def test_detect_is_deterministic(tables, tmp_path, capsys):
    outs = []
    for i in range(2):
        o = tmp_path / f"{i}.json"
        run(["detect", tables["ref"], tables["shift"], "--seed", "9", "--out", str(o)], capsys)
        outs.append(without_timestamp(o.read_text()))
    assert outs[0] == outs[1]


def test_console_entry_point(tables):
    proc = subprocess.run([sys.executable, "-m", "shiftdiag", "detect", tables["ref"],
                           tables["same"]], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["report_type"] == "shift"
