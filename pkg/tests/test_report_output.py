import csv
import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from grw_errors import GRWError, PreconditionError
from report_output import build_report, dumps_report, emit_plot, to_jsonable, write_csv, write_json
from shooting_oracle import SweepHit, SweepReport


def test_to_jsonable():
    data = {"a": math.inf, "b": [np.float64(-np.inf), np.int64(3)], "c": np.array([1.0, np.nan]),
            "d": np.bool_(True), 4: (1, 2)}
    assert to_jsonable(data) == {"a": "inf", "b": ["-inf", 3], "c": [1.0, "nan"], "d": True, "4": [1, 2]}


def test_report_is_deterministic():
    report = build_report("relate", {"spacetime": {"family": "cosh"}}, {"budget": math.inf},
                          timings={"relate": 0.5})
    assert report["result"]["budget"] == "inf"
    assert report["timings"] == {"relate": 0.5}
    text = dumps_report(report)
    assert text == dumps_report(json.loads(text))
    assert list(json.loads(text)) == sorted(json.loads(text))
    assert "timings" not in build_report("relate", {}, {})


def test_write_json(tmp_path):
    path = write_json(build_report("table1", {}, {"cells": []}), tmp_path / "out" / "table1.json")
    assert json.loads(path.read_text(encoding="utf-8"))["subcommand"] == "table1"


def test_write_json_into_a_file_fails(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("x", encoding="utf-8")
    with pytest.raises(GRWError):
        write_json({}, blocker / "report.json")


def test_write_csv(tmp_path):
    path = write_csv(["K", "L", "residual"], [[4.0, 1.0, 0.1], [5.0, 1.0, math.inf]], tmp_path / "sweep.csv")
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    assert rows == [["K", "L", "residual"], ["4.0", "1.0", "0.1"], ["5.0", "1.0", "inf"]]


class TestPlots:
    def test_profile(self, tmp_path):
        curve = SimpleNamespace(r=np.linspace(0.0, 1.0, 5), tau=np.linspace(0.0, 2.0, 5), character="timelike",
                                D=-3.0)
        path = emit_plot("profile", [curve], tmp_path / "profile.svg")
        text = path.read_text(encoding="utf-8")
        assert text.startswith("<svg")
        assert text.count("<polyline") == 1
        assert "timelike D=-3" in text
        # identical input, identical file
        again = emit_plot("profile", [curve], tmp_path / "again.svg").read_text(encoding="utf-8")
        assert again == text

    def test_sweep(self, tmp_path):
        report = SweepReport(tau0=0.0, tau1=1.0, tol=1e-6, samples=[
            SweepHit(K=k, L=1.0, tau=0.5, residual=0.5, bounces=0) for k in (-1.0, 0.0, 1.0)
        ] + [SweepHit(K=2.0, L=1.0, tau=math.nan, residual=math.inf, bounces=0)])
        text = emit_plot("sweep", report, tmp_path / "sweep.svg").read_text(encoding="utf-8")
        assert text.count("<circle") == 3
        assert "L=1" in text

    def test_empty_plot(self, tmp_path):
        with pytest.raises(PreconditionError):
            emit_plot("profile", [], tmp_path / "empty.svg")
        with pytest.raises(PreconditionError):
            emit_plot("sweep", SweepReport(tau0=0.0, tau1=1.0, tol=1e-6), tmp_path / "empty.svg")

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(GRWError):
            emit_plot("histogram", [], tmp_path / "x.svg")
