from __future__ import annotations

import json

import numpy as np
import pytest

from catfind.cli import main
from catfind.problem import ProblemSpec, builtin_names, load_problem
from catfind.trace import read_branch_csv
from helpers import SWALLOWTAIL, STAR, swallowtail_fold

GAMMA_STAR = -5 / (6 * 2 ** 0.6)


def run(argv, capsys):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def assignment(values: dict) -> str:
    return ", ".join(f"{k}={float(v)!r}" for k, v in values.items())


def strip_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timing"}


# ---------------------------------------------------------------------------
# classify

def test_classify_swallowtail(capsys):
    code, out, _ = run(["classify", "swallowtail", "--point", assignment(SWALLOWTAIL)], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert res["label"] == "swallowtail" and res["codim"] == 3 and res["full"] is True


def test_classify_degenerate_cusp_collision(capsys):
    point = {"x": 0, "y": 1, "alpha": 0, "beta": 1, "gamma": 0, "k": 1}
    code, out, _ = run(["classify", "cusp_degenerate", "--point", assignment(point)], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert res["label"] == "cusp" and res["full"] is False


def test_classify_regular_fold(capsys):
    code, out, _ = run(["classify", "fold", "--point", "x=0, y=0, alpha=0"], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert res["label"] == "fold" and res["full"] is True


def test_classify_csv_table(capsys):
    code, out, _ = run(["classify", "fold", "--point", "x=0, y=0, alpha=0", "--format", "csv"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "kind,index,value,scale"
    assert lines[1].startswith("B,1,")


@pytest.mark.parametrize("argv,code", [
    (["classify", "fold", "--point", "x=1, y=0, alpha=0"], 3),
    (["classify", "fold", "--point", "x=0, alpha=0"], 2),
    (["classify", "fold", "--point", "x=0, y=0, alpha"], 2),
    (["classify", "no_such_problem", "--point", "x=0"], 2),
    (["classify"], 2),
])
def test_classify_exit_codes(argv, code, capsys):
    assert run(argv, capsys)[0] == code


def test_parse_error_in_problem_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "bad", "variables": ["x"], "parameters": ["a"], "components": ["x^^2 - a"]}))
    code, _, err = run(["classify", bad, "--point", "x=0, a=0"], capsys)
    assert code == 2 and "parse error" in err


def test_report_is_deterministic_apart_from_timing(tmp_path, capsys):
    reports = []
    for i in range(2):
        path = tmp_path / f"r{i}.json"
        assert run(["classify", "swallowtail", "--point", assignment(SWALLOWTAIL), "--out", path], capsys)[0] == 0
        reports.append(json.loads(path.read_text()))
    assert strip_timing(reports[0]) == strip_timing(reports[1])
    assert reports[0]["problem"]["digest"] == load_problem("swallowtail").digest()
    assert set(reports[0]) == {"tool", "version", "command", "problem", "options", "tolerances", "results",
                               "timing"}


# ---------------------------------------------------------------------------
# find

def test_find_butterfly_multistart_gives_both_points(capsys):
    code, out, _ = run(["find", "butterfly", "--codim", "4", "--multistart"], capsys)
    assert code == 0
    pts = json.loads(out)["results"]["points"]
    xs = sorted(round(p["point"]["x"], 9) for p in pts if p["label"] == "butterfly")
    assert xs == [round(-1 / 3, 9), round(1 / 3, 9)]
    assert all(p["full"] for p in pts)


def test_find_star(capsys):
    code, out, _ = run(["find", "polarity", "--codim", "6", "--free", "alpha,beta,gamma,delta,rho,sigma"], capsys)
    assert code == 0
    pts = json.loads(out)["results"]["points"]
    assert len(pts) == 1 and pts[0]["label"] == "star"
    assert max(abs(pts[0]["point"][k] - v) for k, v in STAR.items()) <= 1e-8


@pytest.mark.parametrize("argv", [
    ["find", "fold", "--codim", "2"],
    ["find", "fold", "--codim", "0"],
    ["find", "swallowtail", "--codim", "2", "--free", "alpha"],
    ["find", "swallowtail", "--codim", "1", "--fix", "omega=1"],
])
def test_find_usage_errors(argv, capsys):
    assert run(argv, capsys)[0] == 2


# ---------------------------------------------------------------------------
# trace

def test_trace_zero_steps_reports_the_start(capsys):
    start = assignment(swallowtail_fold(1.0, 1.0))
    code, out, _ = run(["trace", "swallowtail", "--codim", "1", "--fix", "gamma=-2", "--from", start,
                        "--steps", "0"], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert res["samples"] == 1 and res["events"] == []


def test_trace_fold_slice_reports_both_cusps(tmp_path, capsys):
    gamma = GAMMA_STAR - 0.05
    start = swallowtail_fold(-gamma - 0.35 ** 2, 0.35)
    del start["gamma"]
    csv_path = tmp_path / "fold.csv"
    code, out, _ = run(["trace", "swallowtail", "--codim", "1", "--fix", f"gamma={gamma!r}", "--from",
                        assignment(start), "--toward", "y:+", "--bound", "y=0.3:1.2", "--steps", "600",
                        "--csv", csv_path], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert [e["label"] for e in res["events"]] == ["cusp", "cusp"]
    assert res["stop_reason"] == "left bounds"
    header, data = read_branch_csv(csv_path.read_text())
    assert len(data) == res["samples"]
    events = json.loads((tmp_path / "fold.csv.events.json").read_text())
    assert len(events) == 2


def test_trace_bogdanov_takens_fold(capsys):
    code, out, _ = run(["trace", "bogdanov_takens", "--codim", "1", "--from", "x=-0.5, y=0, alpha=0.25, beta=1",
                        "--bound", "beta=-2:2", "--events", "off", "--format", "csv"], capsys)
    assert code == 0
    header, data = read_branch_csv(out)
    a, b, x = data[:, header.index("alpha")], data[:, header.index("beta")], data[:, header.index("x")]
    assert len(data) > 5
    assert np.max(np.abs(a - b ** 2 / 4)) <= 1e-10 and np.max(np.abs(x + b / 2)) <= 1e-10


def test_trace_starts_from_a_find_report(tmp_path, capsys):
    report = tmp_path / "find.json"
    assert run(["find", "swallowtail", "--codim", "2", "--multistart", "--out", report], capsys)[0] == 0
    found = json.loads(report.read_text())["results"]["points"]
    assert found and found[0]["label"] == "cusp"
    code, out, _ = run(["trace", "swallowtail", "--codim", "2", "--from", report, "--steps", "5",
                        "--events", "off"], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert res["samples"] == 6
    assert all(abs(res["start"][k] - v) <= 1e-9 for k, v in found[0]["point"].items())


@pytest.mark.parametrize("argv", [
    ["trace", "swallowtail", "--codim", "3", "--from", "x=0"],
    ["trace", "swallowtail", "--codim", "1", "--from", "y=1"],
    ["trace", "swallowtail", "--codim", "1", "--from", "x=1, y=1, alpha=0, beta=0", "--toward", "q:+"],
    ["trace", "swallowtail", "--codim", "1", "--from", "x=1, y=1, alpha=0, beta=0", "--steps", "-1"],
])
def test_trace_usage_errors(argv, capsys):
    assert run(argv, capsys)[0] == 2


# ---------------------------------------------------------------------------
# census and render

def test_census_of_the_simple_cusp(tmp_path, capsys):
    csv_path = tmp_path / "census.csv"
    code, out, _ = run(["census", "cusp", "--plane", "alpha,beta", "--box=-1,1,-1,1", "--grid", "11",
                        "--resolution", "16,4,4", "--csv", csv_path], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert set(res["histogram"]) == {"1", "3"}
    meta = json.loads((tmp_path / "census.csv.json").read_text())
    assert meta["plane"] == ["alpha", "beta"] and meta["grid"] == [11, 11]


@pytest.mark.parametrize("argv", [
    ["census", "cusp", "--plane", "alpha", "--box=-1,1,-1,1"],
    ["census", "cusp", "--plane", "alpha,beta", "--box=-1,1,-1"],
    ["census", "cusp", "--plane", "alpha,omega", "--box=-1,1,-1,1", "--grid", "2"],
    ["census", "cusp", "--plane", "alpha,beta", "--box=-1,1,-1,1", "--grid", "2", "--resolution", "16,4"],
])
def test_census_usage_errors(argv, capsys):
    assert run(argv, capsys)[0] == 2


@pytest.fixture
def branch_files(tmp_path, capsys):
    csv_path = tmp_path / "cusp.csv"
    start = assignment({"x": 0.5, "y": 0, "z": 0, "alpha": -0.75, "beta": 0.25})
    code, _, _ = run(["trace", "cusp", "--codim", "1", "--from", start, "--bound", "alpha=-1:0.5",
                      "--steps", "80", "--csv", csv_path], capsys)
    assert code == 0
    return csv_path


def test_render_is_byte_identical(branch_files, tmp_path, capsys):
    outs = []
    for i in range(2):
        out = tmp_path / f"b{i}.svg"
        assert run(["render", branch_files, "--axes", "alpha,beta", "--events", f"{branch_files}.events.json",
                    "--out", out, "--title", "fold"], capsys)[0] == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].startswith(b"<svg") or outs[0].startswith(b"<?xml")
    assert b"<polyline" in outs[0]


def test_render_census(tmp_path, capsys):
    csv_path = tmp_path / "c.csv"
    assert run(["census", "cusp", "--plane", "alpha,beta", "--box=-1,1,-1,1", "--grid", "5",
                "--resolution", "8,4,4", "--csv", csv_path], capsys)[0] == 0
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert run(["render", csv_path, "--out", a], capsys)[0] == 0
    assert run(["render", csv_path, "--out", b], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().count("<rect") >= 25


def test_render_empty_branch(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("x,y,alpha,arclength,B1\n")
    out = tmp_path / "e.svg"
    assert run(["render", empty, "--out", out], capsys)[0] == 0
    assert "<svg" in out.read_text()


def test_render_rejects_bad_axes(branch_files, tmp_path, capsys):
    assert run(["render", branch_files, "--axes", "alpha,omega", "--out", tmp_path / "x.svg"], capsys)[0] == 2


# ---------------------------------------------------------------------------
# problem files

@pytest.mark.parametrize("name", builtin_names())
def test_problem_round_trip(name):
    spec = load_problem(name)
    again = ProblemSpec.from_json(spec.to_json())
    assert again == spec and again.digest() == spec.digest()
    spec.field()


@pytest.mark.parametrize("data", [
    {"name": "p", "variables": ["x", "y"], "components": ["x"]},
    {"name": "p", "variables": ["x"], "parameters": ["a"], "components": ["x"], "defaults": {"b": 1}},
    {"name": "p", "variables": ["x"], "components": ["x"], "boxes": {"x": [1, 0]}},
    {"name": "p", "variables": ["x"], "components": ["x"], "colour": "red"},
    {"name": "p", "variables": ["x"], "components": ["x"], "tolerances": {"eps_z": 1}},
])
def test_invalid_problem_files(data):
    with pytest.raises(ValueError):
        ProblemSpec.from_dict(data)


def test_version_flag(capsys):
    assert run(["--version"], capsys)[0] == 0
