"""C code generation: templates, literals, func bodies, whole trees."""

import re
import struct
from pathlib import Path

import numpy as np
import pytest

import modgen
from microforge import emit, hir, tir
from microforge.accel import AccelRegistry, builtin_registry, partition
from microforge.emit import (
    EmitError,
    Template,
    UnboundKeyError,
    UnknownKeyError,
    arena_plan,
    c_ident,
    emit_c_func,
    emit_tree,
    fmt_f32,
    load_template,
    prepare_io,
    profiles,
    render,
)
from microforge.frontend import convert, default_convert_map
from microforge.model_format import IoManifest, IoTensor, TensorSpec
from microforge.zoo import build_gesture_model


def compiled_gesture(accels=()):
    module = convert(build_gesture_model(), default_convert_map())
    registry = builtin_registry(accels) if accels else AccelRegistry()
    module, report = partition(module, registry)
    lowered = tir.lower_module(module, report, registry)
    plan = arena_plan(module, lowered)
    return module, lowered, plan, report, registry


# -- template engine --------------------------------------------------------


def test_render_missing_key_is_named():
    t = Template("demo", "cc ${CC} ${CFLAGS}", frozenset({"CC", "CFLAGS"}))
    with pytest.raises(UnboundKeyError, match="CC"):
        render(t, {"CFLAGS": "-O2"})


def test_render_rejects_unknown_extras():
    t = Template("demo", "cc ${CC}", frozenset({"CC"}))
    with pytest.raises(UnknownKeyError, match="FOO"):
        render(t, {"CC": "cc", "FOO": "bar"})


def test_render_is_single_pass():
    t = Template("demo", "x=${A}", frozenset({"A"}))
    # a value containing placeholder syntax must come through literally
    assert render(t, {"A": "${B}"}) == "x=${B}"


def test_shell_default_syntax_is_not_a_placeholder():
    t = Template("demo", 'CC="${CC:-cc}" use ${CC}', frozenset({"CC"}))
    out = render(t, {"CC": "gcc"})
    assert out == 'CC="${CC:-cc}" use gcc'


def test_shipped_templates_declare_only_standard_keys():
    for name in ("main_c.tpl", "makefile_lib.tpl", "make_sh.tpl"):
        t = load_template(name)
        assert t.required_keys <= emit.STANDARD_KEYS


def test_host_profile():
    p = profiles()
    assert "-std=c99" in p["host"]["CFLAGS"]
    assert "cortex-m4f" in p


# -- identifiers and literals ------------------------------------------------


def test_c_ident():
    assert c_ident("gesture") == "gesture"
    assert c_ident("3x-down sample") == "_3x_down_sample"
    assert c_ident("while") == "while_"
    assert c_ident("") == "_"


def test_fmt_f32_examples():
    assert fmt_f32(1.0) == "1.0f"
    assert fmt_f32(-0.5) == "-0.5f"
    assert fmt_f32(0.0) == "0.0f"
    out = fmt_f32(1e-20)
    assert out.endswith("f") and ("e" in out or "." in out)
    with pytest.raises(EmitError):
        fmt_f32(float("nan"))
    with pytest.raises(EmitError):
        fmt_f32(float("inf"))


def test_fmt_f32_round_trips():
    rng = np.random.default_rng(2)
    vals = rng.uniform(-1e6, 1e6, 500).astype(np.float32)
    vals = np.concatenate([vals, np.float32([1e-30, 3.4e38, -7.216e-3, 0])])
    for v in vals:
        text = fmt_f32(float(v))
        back = np.float32(float(text[:-1]))
        assert struct.pack("<f", back) == struct.pack("<f", v), (v, text)


# -- single-func emission ----------------------------------------------------


def one_op_func(kind, in_shapes, attrs=None):
    ops = [hir.HirOp("x", hir.INPUT, out_type=TensorSpec("x", in_shapes[0]))]
    refs = ["x"]
    for i, shp in enumerate(in_shapes[1:]):
        ref = f"p{i}"
        ops.append(hir.HirOp(ref, hir.CONST, out_type=TensorSpec(ref, shp),
                             data=np.zeros(int(np.prod(shp)), np.float32)))
        refs.append(ref)
    ops.append(hir.HirOp("y", kind, tuple(refs), attrs or {}))
    m = hir.infer_shapes(hir.HirModule("m", tuple(ops), ("x",), ("y",)))
    op = hir.op_map(m)["y"]
    return tir.lower_op(op, [hir.op_map(m)[r].out_type for r in op.inputs])


def test_relu_c_body():
    text = emit_c_func(one_op_func(hir.RELU, [(1, 8)]), "op_relu")
    assert text.startswith("static void op_relu(const float* x, float* y)")
    assert text.count("for (") == 1
    assert "fmaxf(" in text
    assert "for (int32_t i = 0; i < 8; ++i)" in text


def test_gru_c_body_structure():
    f = one_op_func(hir.GRU, [(1, 6, 28), (48, 6), (48, 16), (48,), (48,)],
                    {"hidden": 16})
    text = emit_c_func(f, "op_gru")
    assert "for (int32_t t = 0; t < 28; ++t)" in text
    assert "expf(" in text and "tanhf(" in text
    assert "float h_prev[16]" in text
    # only libm intrinsics are called
    calls = set(re.findall(r"([a-z_][a-z0-9_]*)\(", text)) - {"op_gru"}
    assert calls <= {"fmaxf", "expf", "tanhf", "for"}


def tir_loop_vars(stmts):
    out = set()
    for s in stmts:
        if isinstance(s, tir.For):
            out.add(s.var)
            out |= tir_loop_vars(s.body)
    return out


def test_emitted_funcs_compile_standalone_syntax():
    """Emitted op functions reference only their parameters and locals."""
    rng = np.random.default_rng(9)
    ident = re.compile(r"\b([A-Za-z_][A-Za-z0-9_]*)\b")
    keywords = {"static", "void", "const", "float", "int32_t", "for", "if",
                "return", "fmaxf", "expf", "tanhf"}
    for _ in range(10):
        m = modgen.random_module(rng)
        for func in tir.lower_module(m).funcs:
            text = emit_c_func(func, "op_f")
            names = set(ident.findall(text)) - keywords
            allowed = ({"op_f"} | {b.name for b in func.params}
                       | {b.name for b in func.scratch}
                       | tir_loop_vars(func.body))
            # an op reading one value twice gets its duplicate parameter
            # mangled with a numeric suffix
            stripped = {re.sub(r"_\d+$", "", n) for n in names}
            assert stripped <= allowed, stripped - allowed


# -- whole-model emission ----------------------------------------------------


def test_gesture_model_h_macros():
    module, lowered, plan, report, reg = compiled_gesture()
    files = emit.emit_model(module, lowered, plan, reg)
    header = files["tvm_model/include/model.h"]
    m = re.search(r"#define GESTURE_ARENA_BYTES (\d+)", header)
    assert m and int(m.group(1)) == plan.arena_bytes == 2464
    assert "#define GESTURE_INPUT_X_COUNT 768" in header
    assert "#define GESTURE_OUTPUT_SOFTMAX_COUNT 21" in header
    assert ("int32_t gesture_run(const float* input, float* output, "
            "uint8_t* arena);" in header)


def test_gesture_param_data_survives_the_round_trip():
    module, lowered, plan, report, reg = compiled_gesture()
    files = emit.emit_model(module, lowered, plan, reg)
    params_c = files["tvm_model/source/params.c"]
    consts = [op for op in module.ops if op.kind == hir.CONST]
    floats = re.findall(r"(-?\d[^,\s}]*f)", params_c)
    assert len(floats) == sum(op.data.size for op in consts) == 1525
    # spot-check: the first const's first scalar appears verbatim
    first = sorted(consts, key=lambda op: op.id)[0]
    assert fmt_f32(float(first.data.ravel()[0])) in params_c


def test_offloaded_model_declares_externs():
    module, lowered, plan, report, reg = compiled_gesture(["mac_engine"])
    files = emit.emit_model(module, lowered, plan, reg)
    src = files["tvm_model/source/model.c"]
    assert ("extern int32_t mac_engine_dense(const float*, const float*, "
            "const float*, float*, const int32_t*);" in src)
    assert src.count("extern int32_t mac_engine_conv1d(") == 1  # two calls, one decl
    assert "int32_t rc = 0;" in src
    assert "if (rc != 0)" in src and "return rc;" in src


def test_model_sources_need_only_freestanding_headers():
    module, lowered, plan, report, reg = compiled_gesture()
    files = emit.emit_model(module, lowered, plan, reg)
    for path in ("tvm_model/source/model.c", "tvm_model/source/params.c"):
        includes = re.findall(r"#include <([^>]+)>", files[path])
        assert set(includes) <= {"math.h", "stdint.h"}, (path, includes)


def test_identity_model_copies_input():
    m = hir.infer_shapes(hir.HirModule(
        "idty",
        (hir.HirOp("x", hir.INPUT, out_type=TensorSpec("x", (1, 4))),),
        ("x",),
        ("x",),
    ))
    lowered = tir.lower_module(m)
    plan = arena_plan(m, lowered)
    assert plan.arena_bytes == 0
    files = emit.emit_model(m, lowered, plan)
    src = files["tvm_model/source/model.c"]
    assert "int32_t idty_run(const float* input, float* output, uint8_t* arena)" in src
    assert "output[ci0] = input[ci0];" in src
    assert "(void)arena;" in src


def test_duplicate_sanitized_io_names_rejected():
    ops = (
        hir.HirOp("a-b", hir.INPUT, out_type=TensorSpec("a-b", (1, 2))),
        hir.HirOp("a_b", hir.INPUT, out_type=TensorSpec("a_b", (1, 2))),
        hir.HirOp("y", hir.ADD, ("a-b", "a_b")),
    )
    m = hir.infer_shapes(hir.HirModule("m", ops, ("a-b", "a_b"), ("y",)))
    lowered = tir.lower_module(m)
    with pytest.raises(EmitError, match="collide"):
        emit.emit_model(m, lowered, arena_plan(m, lowered))


# -- io.h --------------------------------------------------------------------


def manifest_for(values, expected=None):
    def tensors(mapping, stem):
        return tuple(
            IoTensor(n, (int(np.size(v)),), Path(f"{stem}_{n}.bin"),
                     np.asarray(v, np.float32).ravel())
            for n, v in mapping.items()
        )

    return IoManifest(tensors(values, "input"), tensors(expected or {}, "expected"))


def test_prepare_io_literals():
    text = prepare_io(manifest_for({"x": [1.0, -0.5]}))
    assert "#define IO_HAS_EXPECTED 0" in text
    assert "#define INPUT_X_COUNT 2" in text
    assert "1.0f, -0.5f," in text


def test_prepare_io_with_expected():
    text = prepare_io(manifest_for({"x": [0.0]}, {"y": [2.5, 3.5]}))
    assert "#define IO_HAS_EXPECTED 1" in text
    assert "#define EXPECTED_Y_COUNT 2" in text
    assert "static const float expected_y[2]" in text


def test_gesture_io_has_all_input_scalars():
    x = np.arange(768, dtype=np.float32) / 768
    text = prepare_io(manifest_for({"x": x}))
    assert len(re.findall(r"[-0-9][^,\s}]*f", text)) == 768


# -- emit_tree ---------------------------------------------------------------


def test_tree_has_required_files_and_substitutions():
    module, lowered, plan, report, reg = compiled_gesture()
    tree = emit_tree(module, lowered, plan, report)
    assert set(emit.REQUIRED_FILES) <= set(tree.files)
    assert "tvm_model/include/io.h" not in tree.files
    assert tree.substitutions["ARENA_BYTES"] == "2464"
    assert tree.substitutions["MODEL_NAME"] == "gesture"
    sh = tree.files["make.sh"]
    assert "${CC:-" in sh  # runtime override must survive templating


def test_tree_with_manifest_and_mock():
    module, lowered, plan, report, reg = compiled_gesture(["mac_engine"])
    manifest = manifest_for({"x": np.zeros(768, np.float32)})
    tree = emit_tree(module, lowered, plan, report, manifest=manifest,
                     registry=reg)
    assert "tvm_model/include/io.h" in tree.files
    assert "mock_accel.c" in tree.files["make.sh"]
    assert "source/mock_accel.o" in tree.substitutions["LIB_OBJS"]
    assert "MICROFORGE_MOCK_EOF" in tree.files["make.sh"]


def test_tree_io_tolerance_is_formatted():
    module, lowered, plan, report, reg = compiled_gesture()
    tree = emit_tree(module, lowered, plan, report, io_tol=2.5e-4)
    assert tree.substitutions["IO_TOL"] == "0.00025f"


def test_manifest_name_and_count_mismatches():
    module, lowered, plan, report, reg = compiled_gesture()
    with pytest.raises(EmitError, match="x"):
        emit_tree(module, lowered, plan, report,
                  manifest=manifest_for({"wrong": np.zeros(768, np.float32)}))
    with pytest.raises(EmitError, match="768"):
        emit_tree(module, lowered, plan, report,
                  manifest=manifest_for({"x": np.zeros(10, np.float32)}))
    with pytest.raises(EmitError, match="ghost"):
        emit_tree(module, lowered, plan, report,
                  manifest=manifest_for({"x": np.zeros(768, np.float32)},
                                        {"ghost": [1.0]}))


def test_unknown_target_lists_choices():
    module, lowered, plan, report, reg = compiled_gesture()
    with pytest.raises(EmitError, match="cortex-m4f.*host|host.*cortex-m4f"):
        emit_tree(module, lowered, plan, report, target="riscv")


def test_emission_is_deterministic():
    a = emit_tree(*compiled_gesture()[:4])
    b = emit_tree(*compiled_gesture()[:4])
    assert a.files == b.files


def test_vacuous_registry_emits_identical_cpu_code():
    base = emit_tree(*compiled_gesture()[:4])
    module, lowered, plan, report, reg = compiled_gesture(["mac_engine"])
    # mac_engine with no matches: re-partition against an empty registry
    module2, report2 = partition(
        convert(build_gesture_model(), default_convert_map()), AccelRegistry())
    lowered2 = tir.lower_module(module2, report2, AccelRegistry())
    again = emit_tree(module2, lowered2, arena_plan(module2, lowered2), report2)
    assert base.files == again.files


def test_report_json_shape():
    import json

    module, lowered, plan, report, reg = compiled_gesture(["mac_engine"])
    tree = emit_tree(module, lowered, plan, report, registry=reg)
    doc = json.loads(tree.files["report.json"])
    assert doc["model"] == "gesture"
    assert doc["memory_plan"]["arena_bytes"] == plan.arena_bytes
    assert doc["memory_plan"]["alignment"] == 8
    assert doc["partition"]["counts"]["mac_engine"] == 3
    kinds = {s["kind"] for s in doc["steps"]}
    assert kinds == {"cpu", "extern"}


def test_cortex_profile_disables_fp_contraction():
    p = profiles()["cortex-m4f"]
    assert "-ffp-contract=off" in p["CFLAGS"]
