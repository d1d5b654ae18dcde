"""Command-line driver, exercised in-process through main()."""

import filecmp
import json

import numpy as np
import pytest

from microforge.cli import main
from microforge.emit import REQUIRED_FILES


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    root = tmp_path_factory.mktemp("zoo")
    path = root / "gesture.json"
    assert main(["zoo", "export-gesture", "--out", str(path),
                 "--io-dir", str(root / "io")]) == 0
    return path


@pytest.fixture(scope="module")
def io_manifest(model_path, tmp_path_factory):
    """Manifest with expected outputs produced by the reference evaluator."""
    io_dir = model_path.parent / "io"
    exp_dir = tmp_path_factory.mktemp("exp")
    rc = main(["run-ref", "--model", str(model_path),
               "--io", str(io_dir / "manifest.json"),
               "--write-expected", str(exp_dir)])
    assert rc == 0
    return exp_dir / "manifest.json"


def test_zoo_export_writes_model_and_io(model_path, capsys):
    assert model_path.exists()
    doc = json.loads(model_path.read_text())
    assert doc["name"] == "gesture"
    io_dir = model_path.parent / "io"
    assert (io_dir / "manifest.json").exists()
    assert (io_dir / "input_x.bin").stat().st_size == 768 * 4


def test_compile_cpu_tree(model_path, io_manifest, tmp_path, capsys):
    out = tmp_path / "build"
    rc = main(["compile", "--model", str(model_path),
               "--io", str(io_manifest), "--out", str(out)])
    captured = capsys.readouterr().out
    assert rc == 0
    assert "placement: cpu: 6" in captured
    assert "arena: 2464 bytes" in captured
    for rel in REQUIRED_FILES:
        assert (out / rel).exists(), rel
    assert (out / "tvm_model/include/io.h").exists()
    mode = (out / "make.sh").stat().st_mode
    assert mode & 0o100  # owner-executable


def test_compile_with_accel(model_path, tmp_path, capsys):
    out = tmp_path / "build"
    rc = main(["compile", "--model", str(model_path), "--accel", "mac_engine",
               "--out", str(out)])
    captured = capsys.readouterr().out
    assert rc == 0
    assert "cpu: 3, mac_engine: 3" in captured
    src = (out / "tvm_model/source/model.c").read_text()
    assert "mac_engine_conv1d" in src


def test_compile_is_idempotent(model_path, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["compile", "--model", str(model_path), "--out", str(a)]) == 0
    assert main(["compile", "--model", str(model_path), "--out", str(b)]) == 0
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    match, mismatch, errors = filecmp.cmpfiles(
        a, b, [str(n) for n in names], shallow=False)
    assert not mismatch and not errors


def test_compile_report_renders_figures(model_path, tmp_path, capsys):
    out = tmp_path / "build"
    rc = main(["compile", "--model", str(model_path), "--accel", "mac_engine",
               "--out", str(out), "--report"])
    captured = capsys.readouterr().out
    assert rc == 0
    assert (out / "arena.png").stat().st_size > 0
    assert (out / "partition.png").stat().st_size > 0
    lines = (out / "schedule.csv").read_text().splitlines()
    assert lines[0] == "step,op,kind,target,output,offset_bytes,size_bytes"
    assert len(lines) == 7  # header + 6 steps
    assert "report:" in captured


def test_compile_dump_tir(model_path, tmp_path, capsys):
    out = tmp_path / "build"
    rc = main(["compile", "--model", str(model_path), "--accel", "mac_engine",
               "--out", str(out), "--dump-tir"])
    captured = capsys.readouterr().out
    assert rc == 0
    assert "func gru(" in captured
    assert "extern mac_engine_dense" in captured


def test_compile_unknown_target(model_path, tmp_path, capsys):
    rc = main(["compile", "--model", str(model_path), "--target", "z80",
               "--out", str(tmp_path / "x")])
    err = capsys.readouterr().err
    assert rc == 1
    assert "error:" in err and "host" in err


def test_compile_unknown_accel(model_path, tmp_path, capsys):
    rc = main(["compile", "--model", str(model_path), "--accel", "npu9",
               "--out", str(tmp_path / "x")])
    err = capsys.readouterr().err
    assert rc == 1
    assert "npu9" in err and "mac_engine" in err


def test_compile_missing_model(tmp_path, capsys):
    rc = main(["compile", "--model", str(tmp_path / "nope.json"),
               "--out", str(tmp_path / "x")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_compile_rejects_malformed_model(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = main(["compile", "--model", str(bad), "--out", str(tmp_path / "x")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_run_ref_reports_match(model_path, io_manifest, capsys):
    rc = main(["run-ref", "--model", str(model_path), "--io", str(io_manifest)])
    captured = capsys.readouterr().out
    assert rc == 0
    assert "softmax: max abs err" in captured and "OK" in captured


def test_run_ref_detects_mismatch(model_path, io_manifest, tmp_path, capsys):
    doc = json.loads(io_manifest.read_text())
    exp_rel = next(e["file"] for e in doc["expected_outputs"])
    src = io_manifest.parent / exp_rel
    vals = np.frombuffer(src.read_bytes(), dtype="<f4").copy()
    vals[0] += 1e-3
    bad_dir = tmp_path / "bad"
    bad_dir.mkdir()
    (bad_dir / exp_rel).write_bytes(vals.tobytes())
    for e in doc["inputs"]:
        (bad_dir / e["file"]).write_bytes((io_manifest.parent / e["file"]).read_bytes())
    (bad_dir / "manifest.json").write_text(json.dumps(doc))
    rc = main(["run-ref", "--model", str(model_path),
               "--io", str(bad_dir / "manifest.json")])
    captured = capsys.readouterr().out
    assert rc == 1
    assert "FAIL" in captured


def test_run_ref_prints_values_without_expected(model_path, capsys):
    io_dir = model_path.parent / "io"
    rc = main(["run-ref", "--model", str(model_path),
               "--io", str(io_dir / "manifest.json")])
    captured = capsys.readouterr().out
    assert rc == 0
    assert "softmax[0] = " in captured
    assert "softmax[20] = " in captured


def test_verify_needs_a_compiler(model_path, tmp_path, capsys):
    out = tmp_path / "build"
    assert main(["compile", "--model", str(model_path), "--out", str(out)]) == 0
    capsys.readouterr()
    rc = main(["verify", "--out", str(out), "--cc", "cc-that-does-not-exist"])
    err = capsys.readouterr().err
    assert rc == 1
    assert "cc-that-does-not-exist" in err


def test_verify_rejects_non_build_dir(tmp_path, capsys):
    rc = main(["verify", "--out", str(tmp_path)])
    assert rc == 1
    assert "make.sh" in capsys.readouterr().err


def test_zoo_export_respects_window(tmp_path, capsys):
    path = tmp_path / "small.json"
    rc = main(["zoo", "export-gesture", "--out", str(path), "--window", "64"])
    assert rc == 0
    doc = json.loads(path.read_text())
    assert any(n["id"] == "conv1" for n in doc["nodes"])
    assert doc["inputs"][0]["shape"] == [1, 6, 64]
