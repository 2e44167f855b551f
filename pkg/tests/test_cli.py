import json
import struct

import pytest

from dvforge import __version__
from dvforge.cli import main

from cli_workspace import make_workspace, run_all


@pytest.fixture(scope="module")
def ran(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ws = make_workspace(root / "ws")
    return ws, run_all(ws, root / "out")


def test_help_and_version(capsys):
    assert main(["--help"]) == 0
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["align"]) == 1
    assert main(["nosuch"]) == 1
    assert "usage" in capsys.readouterr().err


def test_validation_errors_exit_one(ran, tmp_path, capsys):
    ws, _ = ran
    assert main(["align", "--ocr", ws["ocr"], "--qa", ws["qa"], "--out", str(tmp_path / "a")]) == 1
    assert "vocab" in capsys.readouterr().err
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\ncel = 3\n")
    assert main(["toydata", "--config", str(bad), "--out", str(tmp_path / "t")]) == 1
    assert "cel" in capsys.readouterr().err
    assert main(["toydata", "--workers", "0", "--out", str(tmp_path / "t")]) == 1


def test_runtime_errors_exit_two(tmp_path, capsys):
    broken = tmp_path / "params.bin"
    broken.write_bytes(b"DVTOYPRM" + struct.pack("<II", 1, 5) + b"{{{{{")  # corrupt header
    corpus = tmp_path / "c.txt"
    corpus.write_text("hello world\n")
    assert main(["eval", "--task", "contextual", "--params", str(broken), "--corpus", str(corpus),
                 "--out", str(tmp_path / "e.jsonl")]) == 2
    assert "runtime error" in capsys.readouterr().err


def test_losscheck_passes(capsys):
    assert main(["losscheck", "--seed", "7", "--skip-model"]) == 0
    out = capsys.readouterr().out
    assert "4/4 checks passed" in out and "FAIL" not in out


def test_every_manifest_lists_its_outputs(ran):
    _, manifests = ran
    for name, path in manifests.items():
        m = json.loads(path.read_text())
        assert m["command"] == name and m["outputs"]
        for rel in m["outputs"]:
            assert (path.parent / rel).is_file()
        assert "time" not in json.dumps(m).lower()


def test_align_outputs(ran):
    _, manifests = ran
    d = manifests["align"].parent
    samples = [json.loads(x) for x in (d / "samples.jsonl").read_text().splitlines()]
    assert [s["sample_id"] for s in samples] == ["img1#0000", "img1#0001", "img2#0000"]
    audit = [json.loads(x) for x in (d / "audit.jsonl").read_text().splitlines()]
    assert len(audit) == 4


def test_stats_prints_table(ran, capsys):
    ws, manifests = ran
    assert main(["stats", "--in", str(manifests["align"].parent)]) == 0
    head, row = capsys.readouterr().out.splitlines()
    assert head.startswith("Dataset") and row.split()[1:3] == ["3", "2"]


def test_eval_summary_line(ran):
    _, manifests = ran
    lines = (manifests["eval"].parent / "eval.jsonl").read_text().splitlines()
    assert len(lines) == 4
    assert json.loads(lines[-1])["summary"]["count"] == 3
    sweep = json.loads((manifests["sweep"].parent / "sweep.jsonl").read_text().splitlines()[-1])["summary"]
    assert sorted(sweep["by_resolution"], key=int) == ["8", "16", "32"]


def test_rerun_is_byte_identical(ran, tmp_path):
    ws, first = ran
    second = run_all(ws, tmp_path / "again", workers=2)
    for name in first:
        assert first[name].read_bytes() == second[name].read_bytes(), name
