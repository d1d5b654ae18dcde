"""Acceptance gate: the properties this package promises, one line each.

Run with ``pytest -s tests/test_acceptance.py`` to see the verdict lines.
The first six checks need no C toolchain; the last two build and run the
emitted C and skip when no compiler is installed.
"""

import filecmp
import re
import shutil
import subprocess
import time

import numpy as np
import pytest

import modgen
import oracles
from microforge import hir, planner
from microforge.accel import partition
from microforge.cli import main
from microforge.frontend import convert, default_convert_map
from microforge.interp import interp, interp_op
from microforge.model_format import TensorSpec
from microforge.zoo import GestureModelConfig, build_gesture_model, param_count

CC = shutil.which("cc") or shutil.which("gcc")
needs_cc = pytest.mark.skipif(CC is None, reason="no C compiler on PATH")


def verdict(name: str, ok: bool) -> bool:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}")
    return ok


def test_parameter_count():
    graph = build_gesture_model()
    ok = graph.param_scalar_count() == 1525 == param_count()
    assert verdict("parameter-count 1525 exact", ok)


def test_data_rate_reduction():
    """Two stride-2 stages must shrink the window into [L/4 - 3, L/4]."""
    cfg = GestureModelConfig()
    ok = True
    for window in (512, 1024, 4096):
        seq = cfg.conv_out_len(cfg.conv_out_len(window))
        lo, hi = window / 4 - 3, window / 4
        if not lo <= seq <= hi:
            ok = False
    assert verdict("data-rate reduction seq in [L/4-3, L/4]", ok)


def _value(rng, shape):
    from microforge.interp import TensorValue

    return TensorValue(shape, rng.uniform(-4, 4, int(np.prod(shape))).astype(np.float32))


def test_oracle_equivalence():
    """interp_op vs the independent references, 100 instances per op."""
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        # dense
        n, c, u = int(rng.integers(1, 4)), int(rng.integers(1, 12)), int(rng.integers(1, 12))
        x, w, b = _value(rng, (n, c)), _value(rng, (u, c)), _value(rng, (u,))
        got = interp_op(hir.DENSE, {"units": u}, [x, w, b]).data
        want = oracles.dense(x.data.reshape(n, c), w.data.reshape(u, c), b.data)
        worst = max(worst, float(np.abs(got - want.ravel()).max()))

        # conv1d_dw_shared
        ch = int(rng.integers(1, 5))
        k = int(rng.integers(1, 6))
        s = int(rng.integers(1, 4))
        ln = int(rng.integers(k, k + 24))
        x = _value(rng, (1, ch, ln))
        kern, bias = _value(rng, (k,)), _value(rng, (1,))
        got = interp_op(hir.CONV1D_DW_SHARED, {"kernel_len": k, "stride": s},
                        [x, kern, bias]).data
        want = oracles.conv1d_dw_shared(x.data.reshape(ch, ln), kern.data, bias.data, s)
        worst = max(worst, float(np.abs(got - want.ravel()).max()))

        # gru
        ch, t, h = int(rng.integers(1, 5)), int(rng.integers(1, 8)), int(rng.integers(1, 6))
        x = _value(rng, (1, ch, t))
        wx, wh = _value(rng, (3 * h, ch)), _value(rng, (3 * h, h))
        bx, bh = _value(rng, (3 * h,)), _value(rng, (3 * h,))
        got = interp_op(hir.GRU, {"hidden": h}, [x, wx, wh, bx, bh]).data
        want = oracles.gru(x.data.reshape(ch, t), wx.data.reshape(3 * h, ch),
                           wh.data.reshape(3 * h, h), bx.data, bh.data)
        worst = max(worst, float(np.abs(got - want.ravel()).max()))

        # last_timestep
        got = interp_op(hir.LAST_TIMESTEP, {}, [x]).data
        want = oracles.last_timestep(x.data.reshape(ch, t))
        worst = max(worst, float(np.abs(got - want.ravel()).max()))

        # memoryless ops against float64 references
        n = int(rng.integers(1, 40))
        a, b2 = _value(rng, (1, n)), _value(rng, (1, n))
        for kind, ref in ((hir.SOFTMAX, oracles.softmax), (hir.RELU, oracles.relu),
                          (hir.SIGMOID, oracles.sigmoid), (hir.TANH, oracles.tanh)):
            got = interp_op(kind, {}, [a]).data
            want = ref(a.data.reshape(1, n))
            worst = max(worst, float(np.abs(got - want.ravel()).max()))
        for kind, ref in ((hir.ADD, oracles.add), (hir.SUB, oracles.sub),
                          (hir.MUL, oracles.mul)):
            got = interp_op(kind, {}, [a, b2]).data
            want = ref(a.data.reshape(1, n), b2.data.reshape(1, n))
            worst = max(worst, float(np.abs(got - want.ravel()).max()))

        # reshape moves no data
        got = interp_op(hir.RESHAPE, {"new_shape": (n, 1)}, [a]).data
        worst = max(worst, float(np.abs(got - a.data).max()))

    ok = worst <= 1e-6
    assert verdict(f"oracle equivalence (worst abs err {worst:.2e}, tol 1e-6)", ok)


def test_partition_neutrality():
    rng = np.random.default_rng(202)
    ok = True
    for _ in range(50):
        m = modgen.random_module(rng)
        registry = modgen.random_registry(rng)
        inputs = modgen.random_inputs(rng, m)
        base = interp(m, inputs)
        part, _ = partition(m, registry)
        after = interp(part, inputs)
        for ref in m.outputs:
            if not np.array_equal(base[ref].data, after[ref].data):
                ok = False
    assert verdict("partition neutrality bit-for-bit (50 modules)", ok)


def test_planner_soundness():
    rng = np.random.default_rng(303)
    ok = True
    for _ in range(1000):
        count = int(rng.integers(1, 14))
        live, sizes = {}, {}
        for i in range(count):
            lo = int(rng.integers(0, 12))
            live[f"b{i}"] = (lo, lo + int(rng.integers(0, 8)))
            sizes[f"b{i}"] = int(rng.integers(1, 2048))
        plan = planner.plan(live, sizes)
        names = list(sizes)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                la, lb = live[a], live[b]
                if la[0] <= lb[1] and lb[0] <= la[1]:
                    a0, a1 = plan.offsets[a], plan.offsets[a] + sizes[a]
                    b0, b1 = plan.offsets[b], plan.offsets[b] + sizes[b]
                    if not (a1 <= b0 or b1 <= a0):
                        ok = False
        bound = planner.align_up(sum(planner.align_up(s, 8) for s in sizes.values()), 8)
        if plan.arena_bytes > bound:
            ok = False
    assert verdict("planner soundness (1000 instances)", ok)


def test_compile_determinism(tmp_path):
    t0 = time.monotonic()
    model = tmp_path / "gesture.json"
    assert main(["zoo", "export-gesture", "--out", str(model),
                 "--io-dir", str(tmp_path / "io")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["compile", "--model", str(model), "--io",
            str(tmp_path / "io" / "manifest.json"), "--accel", "mac_engine"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    rels = [str(p.relative_to(a)) for p in sorted(a.rglob("*")) if p.is_file()]
    match, mismatch, errors = filecmp.cmpfiles(a, b, rels, shallow=False)
    elapsed = time.monotonic() - t0
    ok = not mismatch and not errors and len(match) == len(rels) and elapsed < 5.0
    assert verdict(f"compile determinism ({len(rels)} files, {elapsed:.2f}s)", ok)


def _expected_manifest(tmp_path, model):
    exp = tmp_path / "exp"
    assert main(["run-ref", "--model", str(model),
                 "--io", str(tmp_path / "io" / "manifest.json"),
                 "--write-expected", str(exp)]) == 0
    return exp / "manifest.json"


def _printed_outputs(build_dir):
    run = subprocess.run([str((build_dir / "run_model").resolve())],
                         cwd=build_dir, capture_output=True, text=True)
    vals = {}
    for name, idx, val in re.findall(r"(\w+)\[(\d+)\] = ([-\w.+]+)", run.stdout):
        vals[(name, int(idx))] = float(val)
    return run.returncode, vals


@needs_cc
def test_host_verification(tmp_path):
    t0 = time.monotonic()
    model = tmp_path / "gesture.json"
    assert main(["zoo", "export-gesture", "--out", str(model),
                 "--io-dir", str(tmp_path / "io")]) == 0
    manifest = _expected_manifest(tmp_path, model)
    out = tmp_path / "build"
    assert main(["compile", "--model", str(model), "--io", str(manifest),
                 "--out", str(out)]) == 0
    rc = main(["verify", "--out", str(out)])
    elapsed = time.monotonic() - t0
    ok = rc == 0 and elapsed < 30.0
    assert verdict(f"host verification, CPU only (exit {rc}, {elapsed:.1f}s)", ok)


@needs_cc
def test_accelerator_mock_equivalence(tmp_path):
    t0 = time.monotonic()
    model = tmp_path / "gesture.json"
    assert main(["zoo", "export-gesture", "--out", str(model),
                 "--io-dir", str(tmp_path / "io")]) == 0
    manifest = _expected_manifest(tmp_path, model)

    acc = tmp_path / "acc"
    assert main(["compile", "--model", str(model), "--io", str(manifest),
                 "--accel", "mac_engine", "--out", str(acc)]) == 0
    rc = main(["verify", "--out", str(acc)])

    # print-mode builds (inputs only) to compare raw outputs across targets
    plain = tmp_path / "io" / "manifest.json"
    cpu_p, acc_p = tmp_path / "cpu_p", tmp_path / "acc_p"
    assert main(["compile", "--model", str(model), "--io", str(plain),
                 "--out", str(cpu_p)]) == 0
    assert main(["compile", "--model", str(model), "--io", str(plain),
                 "--accel", "mac_engine", "--out", str(acc_p)]) == 0
    assert main(["verify", "--out", str(cpu_p)]) == 0
    assert main(["verify", "--out", str(acc_p)]) == 0
    rc_c, cpu_vals = _printed_outputs(cpu_p)
    rc_a, acc_vals = _printed_outputs(acc_p)
    gap = max(abs(cpu_vals[k] - acc_vals[k]) for k in cpu_vals)

    elapsed = time.monotonic() - t0
    ok = (rc == 0 and rc_c == 0 and rc_a == 0
          and cpu_vals.keys() == acc_vals.keys() and len(cpu_vals) == 21
          and gap <= 1e-5 and elapsed < 30.0)
    assert verdict(
        f"accelerator mock equivalence (exit {rc}, max gap {gap:.2e}, {elapsed:.1f}s)",
        ok,
    )
