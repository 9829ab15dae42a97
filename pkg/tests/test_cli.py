from __future__ import annotations

import json
import logging
import shutil
import sys
from pathlib import Path

import pytest

from bitladder.cli import main

TOOL = f"{sys.executable} {Path(__file__).with_name('fake_tool.py')}"


def _run(*argv):
    return main([str(a) for a in argv])


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert _run("mock-gen", "--count", 8, "--holdout", 2, "--seed", 3, "--out", root) == 0
    return root


def _common(corpus, work):
    return ["--recipe", corpus / "recipe.json", "--codec-config", corpus / "codec.json",
            "--workdir", work, "--seed", 3]


def _encode(corpus, work, *extra):
    return _run("encode", "--manifest", corpus / "manifest.json", "--out", work,
                *_common(corpus, work), *extra)


def test_help_exits_cleanly(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("probe", "encode", "label", "train", "predict", "eval", "bd", "mock-gen"):
        assert cmd in out


def test_mock_gen_is_reproducible(corpus, tmp_path):
    assert _run("mock-gen", "--count", 8, "--holdout", 2, "--seed", 3, "--out", tmp_path) == 0
    assert _tree(tmp_path) == _tree(corpus)
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert [m["split"] for m in manifest] == ["train"] * 6 + ["test"] * 2


def test_malformed_manifest_exits_with_line_number(corpus, tmp_path, capsys):
    bad = tmp_path / "manifest.json"
    bad.write_text('[\n {"sequence_id": "a",\n  "path": "x",,\n}\n]\n')
    code = _run("probe", "--manifest", bad, *_common(corpus, tmp_path))
    assert code == 1
    assert "manifest.json:3" in capsys.readouterr().err


def test_missing_executable_is_named(corpus, tmp_path, capsys):
    cfg = tmp_path / "codec.json"
    cfg.write_text(json.dumps({
        "encode_command_template":
            "no-such-encoder {input} {output} {stats} {bitrate_kbps} {qp} {pass}",
        "upscale_command_template": f"{TOOL} upscale {{input}} {{output}} {{width}} {{height}}",
        "quality_command_template": f"{TOOL} quality {{reference}} {{distorted}} {{output}} 80",
    }))
    code = _run("probe", "--manifest", corpus / "manifest.json", "--codec-config", cfg,
                "--workdir", tmp_path)
    assert code == 1
    err = capsys.readouterr().err
    assert "encode_command_template" in err and "no-such-encoder" in err


def test_bad_worker_count_is_rejected(corpus, tmp_path):
    with pytest.raises(SystemExit) as e:
        _run("encode", "--manifest", corpus / "manifest.json", "--workers", 0,
             *_common(corpus, tmp_path))
    assert e.value.code == 2


def test_encode_resumes_from_journal(corpus, tmp_path):
    work = tmp_path / "w"
    assert _encode(corpus, work) == 0
    rd = _tree(work / "rd")
    assert len(rd) == 8
    points = json.loads((work / "rd" / "mock0000.json").read_text())["points"]
    assert 40 <= len(points) <= 70
    lines = (work / "encode_journal.jsonl").read_text().splitlines()
    # a second run is served from the journal alone
    shutil.rmtree(work / "rd")
    assert _encode(corpus, work) == 0
    assert _tree(work / "rd") == rd
    assert (work / "encode_journal.jsonl").read_text().splitlines() == lines


def test_noisy_rate_control_logs_deviation(tmp_path, caplog):
    root = tmp_path / "noisy"
    assert _run("mock-gen", "--count", 2, "--holdout", 0, "--noise-scale", 15,
                "--out", root) == 0
    with caplog.at_level(logging.WARNING):
        _encode(root, tmp_path / "w")
    assert any("bitrate deviation" in r.getMessage() for r in caplog.records)


def test_label_eval_and_bd_on_ground_truth(corpus, tmp_path, capsys):
    work = tmp_path / "w"
    assert _encode(corpus, work) == 0
    assert _run("label", "--rd-dir", work / "rd", "--out", work / "labels",
                *_common(corpus, work)) == 0
    header = (work / "labels" / "histogram.csv").read_text().splitlines()[0]
    assert header == "bitrate_kbps,res_0,res_1,res_2,res_3,res_4,res_5,res_6"
    # predictions identical to the labels
    code = _run("eval", "--rd-dir", work / "rd", "--labels-dir", work / "labels",
                "--pred-dir", work / "labels", "--manifest", corpus / "manifest.json",
                "--out", work / "eval", *_common(corpus, work))
    assert code in (0, 2)
    report = json.loads((work / "eval" / "report.json").read_text())
    assert report["metrics"]["predicted"]["accuracy"] == 1.0
    assert set(report["aggregates"]) == {"predicted", "fixed", "ground_truth", "majority"}
    assert len(list((work / "eval" / "plots").glob("*.csv"))) == 2

    hull = tmp_path / "curve.csv"
    rows = [(p["actual_bitrate_kbps"], p["quality"])
            for p in json.loads((work / "rd" / "mock0000.json").read_text())["points"]
            if p["height"] == 1080]
    hull.write_text("kbps,quality\n" + "".join(f"{r!r},{q!r}\n" for r, q in rows))
    capsys.readouterr()
    assert _run("bd", hull, hull, "--out", tmp_path / "bd", "--curves-csv") == 0
    result = json.loads(capsys.readouterr().out)
    assert result["bd_quality"] == 0.0 and abs(result["bd_rate_percent"]) < 1e-12
    assert (tmp_path / "bd" / "bd_curves.csv").exists()


def test_bd_reports_undefined_metric(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    a.write_text(json.dumps({"rate_kbps": [100, 200, 300, 400], "quality": [30, 40, 50, 60]}))
    b.write_text(json.dumps({"rate_kbps": [1000, 2000, 3000, 4000], "quality": [70, 80, 85, 90]}))
    assert _run("bd", a, b) == 2


def test_outputs_stay_inside_workdir_and_out(corpus, tmp_path, monkeypatch):
    cwd = tmp_path / "cwd"
    cwd.mkdir()
    monkeypatch.chdir(cwd)
    work = tmp_path / "w"
    assert _encode(corpus, work) == 0
    assert not any(cwd.iterdir())
    assert {p.name for p in work.iterdir()} == {"rd", "encode_journal.jsonl"}
