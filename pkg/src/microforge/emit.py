"""C emission: from lowered module + memory plan to a buildable source tree.

The generated project is laid out the way the build script expects it::

    <out>/
      main.c                   verification driver (exit 0/1/2)
      make.sh                  assembles tvm_model/ support files, runs make
      report.json              partition + memory plan summary
      tvm_model/
        makefile               builds libtvm_model.a and ../run_model
        include/model.h        arena size, I/O extents, entry prototype
        include/params.h       extern declarations for parameter tensors
        include/io.h           input (and expected output) literals [--io only]
        source/model.c         loop nests + entry function
        source/params.c        parameter tensor definitions

`make.sh` additionally installs ``include/tvm_crt.h`` (and
``source/mock_accel.c`` when any op was offloaded) from embedded copies,
so the tree builds with nothing but a C toolchain and make.

The emitted C is freestanding-friendly: the only system includes are
``math.h``, ``stdint.h`` and ``stdio.h`` (the latter only in the driver
and runtime check helper), there is no allocation, and all model state
lives in the caller-provided arena.

Text generation is template-driven for the driver, makefile and build
script.  Templates use ``${KEY}`` placeholders drawn from one shared key
set; rendering rejects both unbound and unknown keys so a stale template
or substitution map fails loudly.  ``MICROFORGE_TEMPLATES`` overrides
the template directory.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import accel as accel_mod
from . import hir, planner, tir
from .errors import MicroforgeError
from .model_format import IoManifest

__all__ = [
    "EmitError",
    "TemplateError",
    "UnboundKeyError",
    "UnknownKeyError",
    "Template",
    "EmitPlan",
    "STANDARD_KEYS",
    "template_dir",
    "load_template",
    "load_support_file",
    "render",
    "fmt_f32",
    "c_ident",
    "emit_c_func",
    "emit_model",
    "collapsed_liveness",
    "arena_plan",
    "prepare_io",
    "gen_main",
    "gen_make",
    "gen_make_sh",
    "profiles",
    "emit_tree",
    "REQUIRED_FILES",
]


class EmitError(MicroforgeError):
    """Code generation cannot proceed (bad plan, name clash, bad target...)."""


class TemplateError(EmitError):
    """A template file is malformed."""


class UnboundKeyError(TemplateError):
    """Rendering lacked a value for a required substitution key."""


class UnknownKeyError(TemplateError):
    """Rendering was given keys outside the template's contract."""


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------

STANDARD_KEYS = frozenset(
    {
        "MODEL_NAME",
        "CC",
        "AR",
        "CFLAGS",
        "CC_DEFAULT",
        "AR_DEFAULT",
        "ARENA_BYTES",
        "ARENA_DECL",
        "IO_TOL",
        "IO_GUARDS",
        "OUTPUT_STORAGE",
        "ENTRY_CALL",
        "CHECK_BLOCK",
        "PRINT_BLOCK",
        "LIB_OBJS",
        "TVM_CRT_H",
        "MOCK_INSTALL",
    }
)

_PLACEHOLDER = re.compile(r"\$\{([A-Z][A-Z0-9_]*)\}")


@dataclass(frozen=True)
class Template:
    name: str
    body: str
    required_keys: frozenset[str]


def template_dir() -> Path:
    """Directory holding templates; MICROFORGE_TEMPLATES overrides."""
    override = os.environ.get("MICROFORGE_TEMPLATES")
    if override:
        return Path(override)
    return Path(__file__).parent / "templates"


def load_template(name: str) -> Template:
    path = template_dir() / name
    try:
        body = path.read_text()
    except OSError as exc:
        raise TemplateError(f"cannot read template '{path}': {exc}") from None
    stray = sorted({m.group(1) for m in _PLACEHOLDER.finditer(body)} - STANDARD_KEYS)
    if stray:
        raise TemplateError(
            f"template '{name}' uses keys outside the shared contract: {', '.join(stray)}"
        )
    return Template(name, body, STANDARD_KEYS)


def load_support_file(name: str) -> str:
    path = template_dir() / name
    try:
        return path.read_text()
    except OSError as exc:
        raise TemplateError(f"cannot read support file '{path}': {exc}") from None


def render(template: Template, substitutions: Mapping[str, str]) -> str:
    """Substitute ``${KEY}`` placeholders, enforcing the key contract.

    Every required key must be bound (else :class:`UnboundKeyError`, even
    if the body never mentions it) and no extra keys may be supplied
    (:class:`UnknownKeyError`).  Substituted text is never re-scanned, so
    shell constructs like ``${CC:-cc}`` in the output are safe.
    """
    provided = set(substitutions)
    missing = sorted(template.required_keys - provided)
    if missing:
        raise UnboundKeyError(
            f"template '{template.name}': no value bound for key(s): {', '.join(missing)}"
        )
    unknown = sorted(provided - template.required_keys)
    if unknown:
        raise UnknownKeyError(
            f"template '{template.name}': unknown key(s): {', '.join(unknown)}"
        )
    return _PLACEHOLDER.sub(lambda m: str(substitutions[m.group(1)]), template.body)


def profiles() -> dict[str, dict[str, str]]:
    """Target profiles (CC/AR/CFLAGS per target name) from profiles.json."""
    raw = load_support_file("profiles.json")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise TemplateError(f"profiles.json is not valid JSON: {exc}") from None
    return data


# ---------------------------------------------------------------------------
# identifiers and literals
# ---------------------------------------------------------------------------

_C_KEYWORDS = frozenset(
    "auto break case char const continue default do double else enum extern float "
    "for goto if inline int long register restrict return short signed sizeof static "
    "struct switch typedef union unsigned void volatile while".split()
)


def c_ident(name: str) -> str:
    """Deterministically map any value name onto a legal C identifier."""
    s = re.sub(r"[^0-9A-Za-z_]", "_", name)
    if not s or s[0].isdigit():
        s = "_" + s
    if s in _C_KEYWORDS:
        s += "_"
    return s


class _Mangler:
    """Hands out unique identifiers within one scope."""

    def __init__(self, reserved: set[str] | None = None):
        self._used = set(reserved or ())

    def take(self, base: str) -> str:
        name = base
        n = 2
        while name in self._used:
            name = f"{base}_{n}"
            n += 1
        self._used.add(name)
        return name


def fmt_f32(value: float) -> str:
    """A float32 C literal that round-trips the value, e.g. ``-0.5f``."""
    f = float(np.float32(value))
    if math.isnan(f) or math.isinf(f):
        raise EmitError(f"cannot emit non-finite float literal {value!r}")
    s = f"{f:.9g}"
    if "." not in s and "e" not in s:
        s += ".0"
    return s + "f"


def _float_block(values: Sequence[float], indent: str = "    ", per_line: int = 8) -> str:
    lines = []
    for start in range(0, len(values), per_line):
        chunk = values[start : start + per_line]
        lines.append(indent + " ".join(fmt_f32(v) + "," for v in chunk))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# single-func emission
# ---------------------------------------------------------------------------


def _loop_vars(stmts: Sequence[tir.Stmt]) -> set[str]:
    found: set[str] = set()
    for s in stmts:
        if isinstance(s, tir.For):
            found.add(s.var)
            found |= _loop_vars(s.body)
    return found


def _c_index(index: tir.Affine) -> str:
    parts = [f"{v}*{c}" if c != 1 else v for v, c in index.terms]
    if index.offset or not parts:
        parts.append(str(index.offset))
    return " + ".join(parts)


def _c_expr(e: tir.Expr, names: Mapping[str, str]) -> str:
    if isinstance(e, tir.Imm):
        return fmt_f32(e.value)
    if isinstance(e, tir.Load):
        if e.buffer not in names:
            raise EmitError(f"expression reads unknown buffer '{e.buffer}'")
        return f"{names[e.buffer]}[{_c_index(e.index)}]"
    if isinstance(e, tir.Bin):
        lhs, rhs = _c_expr(e.lhs, names), _c_expr(e.rhs, names)
        if e.op == "max":
            return f"fmaxf({lhs}, {rhs})"
        sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[e.op]
        return f"({lhs} {sym} {rhs})"
    if isinstance(e, tir.Intrin):
        fn = {"exp": "expf", "tanh": "tanhf"}[e.fn]
        return f"{fn}({_c_expr(e.arg, names)})"
    raise EmitError(f"cannot emit expression {type(e).__name__}")


def emit_c_func(func: tir.TirFunc, c_name: str | None = None) -> str:
    """Render one lowered op as a static C function.

    Read-only buffers become ``const float*`` parameters, the output a
    ``float*``, scratch buffers stack arrays.  No heap, no globals.
    """
    c_name = c_name or f"op_{c_ident(func.name)}"
    mangler = _Mangler(reserved=_loop_vars(func.body) | _C_KEYWORDS | {c_name})
    names: dict[str, str] = {}
    sig = []
    for b in func.params:
        cn = mangler.take(c_ident(b.name))
        names[b.name] = cn
        qual = "float*" if b.role == tir.OUT else "const float*"
        sig.append(f"{qual} {cn}")
    lines = [f"static void {c_name}({', '.join(sig) if sig else 'void'}) {{"]
    for b in func.scratch:
        cn = mangler.take(c_ident(b.name))
        names[b.name] = cn
        lines.append(f"    float {cn}[{b.count}];")

    def walk(stmts: Sequence[tir.Stmt], depth: int) -> None:
        pad = "    " * depth
        for s in stmts:
            if isinstance(s, tir.For):
                lines.append(f"{pad}for (int32_t {s.var} = 0; {s.var} < {s.extent}; ++{s.var}) {{")
                walk(s.body, depth + 1)
                lines.append(f"{pad}}}")
            else:
                if s.buffer not in names:
                    raise EmitError(f"{func.name}: store to unknown buffer '{s.buffer}'")
                lines.append(
                    f"{pad}{names[s.buffer]}[{_c_index(s.index)}] = {_c_expr(s.value, names)};"
                )

    walk(func.body, 1)
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# liveness over the collapsed call sequence, arena planning
# ---------------------------------------------------------------------------


def _step_io(step) -> tuple[tuple[str, ...], str]:
    """(read refs, written ref) of one call step."""
    if isinstance(step, tir.FuncStep):
        return step.args[:-1], step.args[-1]
    return (step.input,), step.output


def collapsed_liveness(
    module: hir.HirModule, lowered: tir.Lowered
) -> dict[str, tuple[int, int]]:
    """Live intervals over the emitted call sequence (regions are single
    steps, so interior region values never exist and are never planned)."""
    planned = set(module.inputs) | {_step_io(s)[1] for s in lowered.steps}
    events = []
    for step in lowered.steps:
        reads, written = _step_io(step)
        events.append(([r for r in reads if r in planned], [written]))
    return planner.intervals_from_steps(events, module.inputs, module.outputs)


def arena_plan(module: hir.HirModule, lowered: tir.Lowered) -> planner.MemoryPlan:
    """Pack every intermediate value (step outputs that are not graph
    outputs) into the arena.  Graph inputs/outputs use caller storage."""
    ops = hir.op_map(module)
    live = collapsed_liveness(module, lowered)
    sizes: dict[str, int] = {}
    for step in lowered.steps:
        ref = _step_io(step)[1]
        if ref in module.outputs:
            continue
        out_type = ops[ref].out_type
        if out_type is None:
            raise EmitError(f"value '{ref}' has no inferred shape; run infer_shapes first")
        sizes[ref] = 4 * out_type.count
    return planner.plan(live, sizes)


# ---------------------------------------------------------------------------
# model library emission
# ---------------------------------------------------------------------------


def _io_macro(model_macro: str, direction: str, ref: str) -> str:
    return f"{model_macro}_{direction}_{c_ident(ref).upper()}_COUNT"


def _io_array(direction: str, ref: str) -> str:
    return f"{direction}_{c_ident(ref)}"


def _io_arg_names(module: hir.HirModule) -> tuple[dict[str, str], dict[str, str]]:
    """C parameter names for graph inputs and outputs, as two maps.

    The maps are separate because a value may be both a graph input and a
    graph output; it then becomes two distinct parameters and the entry
    copies one into the other.
    """
    if len(set(module.inputs)) != len(module.inputs):
        raise EmitError("duplicate graph inputs cannot be emitted")
    if len(set(module.outputs)) != len(module.outputs):
        raise EmitError("duplicate graph outputs cannot be emitted")
    if len(module.inputs) == 1:
        in_names = {module.inputs[0]: "input"}
    else:
        in_names = {ref: f"input_{c_ident(ref)}" for ref in module.inputs}
    if len(module.outputs) == 1:
        out_names = {module.outputs[0]: "output"}
    else:
        out_names = {ref: f"output_{c_ident(ref)}" for ref in module.outputs}
    return in_names, out_names


def _entry_signature(
    module: hir.HirModule,
    entry: str,
    in_names: Mapping[str, str],
    out_names: Mapping[str, str],
) -> str:
    args = [f"const float* {in_names[r]}" for r in module.inputs]
    args += [f"float* {out_names[r]}" for r in module.outputs]
    args.append("uint8_t* arena")
    return f"int32_t {entry}({', '.join(args)})"


def _extern_decl(step: tir.ExternStep) -> str:
    args = ["const float*"] * (1 + len(step.params)) + ["float*", "const int32_t*"]
    return f"extern int32_t {step.symbol}({', '.join(args)});"


def emit_model(
    module: hir.HirModule,
    lowered: tir.Lowered,
    plan: planner.MemoryPlan,
    registry: accel_mod.AccelRegistry | None = None,
) -> dict[str, str]:
    """Produce model.c/model.h/params.c/params.h for one lowered module.

    ``plan`` must cover exactly the module's intermediate values (see
    :func:`arena_plan`).  ``registry`` is unused for code layout — the
    extern ABI is fully determined by the lowered steps — but kept so
    accelerator-specific emission hooks have a seam.
    """
    del registry  # ABI data already lives in the ExternSteps
    ops = hir.op_map(module)
    name = module.name
    prefix = c_ident(name)
    macro = prefix.upper()
    entry = f"{prefix}_run"
    in_names, out_names = _io_arg_names(module)
    io_values = set(in_names.values()) | set(out_names.values())

    gmang = _Mangler(reserved={"main", entry, "arena"} | io_values)
    param_syms: dict[str, str] = {}
    for cid in sorted(op.id for op in module.ops if op.kind == hir.CONST):
        param_syms[cid] = gmang.take(f"{prefix}_param_{c_ident(cid)}")

    intermediates: list[str] = []
    for step in lowered.steps:
        ref = _step_io(step)[1]
        if ref not in module.outputs:
            intermediates.append(ref)
    missing = [r for r in intermediates if r not in plan.offsets]
    if missing:
        raise EmitError(f"memory plan lacks offsets for: {', '.join(sorted(missing))}")

    local = _Mangler(
        reserved={"arena", "rc", entry, "main"} | io_values | set(param_syms.values())
    )
    # Reads of a value that is both input and output go through the input
    # parameter; the output parameter is written by steps or the copy below.
    value_c: dict[str, str] = dict(out_names)
    value_c.update(in_names)
    for ref in intermediates:
        value_c[ref] = local.take(f"v_{c_ident(ref)}")

    def cexpr(ref: str) -> str:
        if ref in value_c:
            return value_c[ref]
        if ref in param_syms:
            return param_syms[ref]
        raise EmitError(f"no C storage for value '{ref}'")

    # --- op functions -----------------------------------------------------
    fn_names: list[str] = []
    fn_texts: list[str] = []
    extern_decls: dict[str, str] = {}
    for step in lowered.steps:
        if isinstance(step, tir.FuncStep):
            fn = gmang.take(f"op_{c_ident(step.func.name)}")
            fn_names.append(fn)
            fn_texts.append(emit_c_func(step.func, fn))
        else:
            decl = _extern_decl(step)
            if extern_decls.setdefault(step.symbol, decl) != decl:
                raise EmitError(
                    f"extern symbol '{step.symbol}' is called with inconsistent arity"
                )
            fn_names.append(step.symbol)

    # --- entry body --------------------------------------------------------
    body: list[str] = []
    for ref in intermediates:
        body.append(
            f"    float* {value_c[ref]} = (float*)(void*)(arena + {plan.offsets[ref]});"
        )
    extern_steps = [s for s in lowered.steps if isinstance(s, tir.ExternStep)]
    for k, step in enumerate(extern_steps):
        dims = ", ".join(str(d) for d in step.dims)
        body.append(f"    const int32_t dims_{k}[{len(step.dims)}] = {{ {dims} }};")
    if extern_steps:
        body.append("    int32_t rc = 0;")
    if not intermediates:
        body.append("    (void)arena;")
    if body:
        body.append("")

    extern_index = 0
    for i, step in enumerate(lowered.steps):
        if isinstance(step, tir.FuncStep):
            args = ", ".join(cexpr(r) for r in step.args)
            body.append(f"    {fn_names[i]}({args});")
        else:
            args = [cexpr(step.input)]
            args += [cexpr(p) for p in step.params]
            args += [cexpr(step.output), f"dims_{extern_index}"]
            extern_index += 1
            body.append(f"    rc = {step.symbol}({', '.join(args)});")
            body.append("    if (rc != 0) {")
            body.append("        return rc;")
            body.append("    }")

    produced = {_step_io(s)[1] for s in lowered.steps}
    copy_idx = 0
    for ref in module.outputs:
        if ref in produced:
            continue
        # Output aliases a graph input: the entry must copy it across.
        if ref not in module.inputs:
            raise EmitError(f"output '{ref}' is never produced by any step")
        count = ops[ref].out_type.count
        var = f"ci{copy_idx}"
        copy_idx += 1
        body.append(f"    for (int32_t {var} = 0; {var} < {count}; ++{var}) {{")
        body.append(f"        {out_names[ref]}[{var}] = {cexpr(ref)}[{var}];")
        body.append("    }")
    body.append("    return 0;")

    # An input no step reads still appears in the signature; silence -Wextra.
    read_refs = {r for s in lowered.steps for r in _step_io(s)[0]}
    read_refs |= {r for r in module.outputs if r in module.inputs}
    unused = [r for r in module.inputs if r not in read_refs]
    silence = [f"    (void){in_names[r]};" for r in unused]
    body = silence + body

    model_c = "\n".join(
        [
            f"/* Inference library for model '{name}'.",
            " * Generated code: float32 loop nests over flat buffers; all",
            " * intermediate storage lives in the caller-provided arena.",
            " */",
            "#include <math.h>",
            "#include <stdint.h>",
            "",
            '#include "model.h"',
            '#include "params.h"',
            "",
        ]
        + ([d for _, d in sorted(extern_decls.items())] + [""] if extern_decls else [])
        + fn_texts
        + [
            _entry_signature(module, entry, in_names, out_names) + " {",
            *body,
            "}",
            "",
        ]
    )

    # --- headers and params -------------------------------------------------
    count_macros: list[str] = []
    seen_macros: set[str] = set()
    for direction, refs in (("INPUT", module.inputs), ("OUTPUT", module.outputs)):
        for ref in refs:
            m = _io_macro(macro, direction, ref)
            if m in seen_macros:
                raise EmitError(f"I/O names collide on macro '{m}'")
            seen_macros.add(m)
            count_macros.append(f"#define {m} {ops[ref].out_type.count}")

    model_h = "\n".join(
        [
            f"/* Public interface of model '{name}'. */",
            f"#ifndef {macro}_MODEL_H",
            f"#define {macro}_MODEL_H",
            "",
            "#include <stdint.h>",
            "",
            f"#define {macro}_ARENA_BYTES {plan.arena_bytes}",
            *count_macros,
            "",
            _entry_signature(module, entry, in_names, out_names) + ";",
            "",
            f"#endif /* {macro}_MODEL_H */",
            "",
        ]
    )

    param_defs: list[str] = []
    param_decls: list[str] = []
    for cid, sym in sorted(param_syms.items()):
        op = ops[cid]
        count = op.out_type.count
        param_decls.append(f"extern const float {sym}[{count}];")
        param_defs.append(f"const float {sym}[{count}] = {{")
        param_defs.append(_float_block(list(op.data)))
        param_defs.append("};")
        param_defs.append("")

    params_h = "\n".join(
        [
            f"/* Parameter tensors of model '{name}' (float32, row-major). */",
            f"#ifndef {macro}_PARAMS_H",
            f"#define {macro}_PARAMS_H",
            "",
            *param_decls,
            "",
            f"#endif /* {macro}_PARAMS_H */",
            "",
        ]
    )
    params_c = "\n".join(
        [
            f"/* Parameter tensor definitions for model '{name}'. */",
            '#include "params.h"',
            "",
            *param_defs,
        ]
    )

    return {
        "tvm_model/include/model.h": model_h,
        "tvm_model/include/params.h": params_h,
        "tvm_model/source/model.c": model_c,
        "tvm_model/source/params.c": params_c,
    }


# ---------------------------------------------------------------------------
# io.h
# ---------------------------------------------------------------------------


def prepare_io(manifest: IoManifest) -> str:
    """Render io.h: input literals, optional expected-output literals.

    Array and macro names derive from the manifest entry names, which
    the tree-level emitter checks against the model's I/O names.
    """
    lines = [
        "/* Input data (and expected outputs) baked in for verification. */",
        "#ifndef IO_H",
        "#define IO_H",
        "",
        f"#define IO_HAS_EXPECTED {1 if manifest.has_expected else 0}",
        "",
    ]
    for t in manifest.inputs:
        lines.append(f"#define INPUT_{c_ident(t.name).upper()}_COUNT {t.data.size}")
        lines.append(f"static const float {_io_array('input', t.name)}[{t.data.size}] = {{")
        lines.append(_float_block(list(t.data)))
        lines.append("};")
        lines.append("")
    for t in manifest.expected_outputs:
        lines.append(f"#define EXPECTED_{c_ident(t.name).upper()}_COUNT {t.data.size}")
        lines.append(f"static const float {_io_array('expected', t.name)}[{t.data.size}] = {{")
        lines.append(_float_block(list(t.data)))
        lines.append("};")
        lines.append("")
    lines.append("#endif /* IO_H */")
    lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# driver / build file generation
# ---------------------------------------------------------------------------


def gen_main(substitutions: Mapping[str, str]) -> str:
    return render(load_template("main_c.tpl"), substitutions)


def gen_make(substitutions: Mapping[str, str]) -> str:
    return render(load_template("makefile_lib.tpl"), substitutions)


def gen_make_sh(substitutions: Mapping[str, str]) -> str:
    return render(load_template("make_sh.tpl"), substitutions)


def _guard_block(module: hir.HirModule, macro: str) -> str:
    lines = []
    for ref in module.inputs:
        io_count = f"INPUT_{c_ident(ref).upper()}_COUNT"
        model_count = _io_macro(macro, "INPUT", ref)
        lines += [
            f"    if ({io_count} != {model_count}) {{",
            f'        printf("io.h input \'{ref}\' has %d values, model expects %d\\n",',
            f"               (int){io_count}, (int){model_count});",
            "        return 2;",
            "    }",
        ]
    return "\n".join(lines)


def _storage_block(module: hir.HirModule, macro: str, out_names: Mapping[str, str]) -> str:
    return "\n".join(
        f"    float {out_names[ref]}[{_io_macro(macro, 'OUTPUT', ref)}];"
        for ref in module.outputs
    )


def _entry_call(module: hir.HirModule, entry: str, out_names: Mapping[str, str]) -> str:
    args = [_io_array("input", ref) for ref in module.inputs]
    args += [out_names[ref] for ref in module.outputs]
    args.append("arena")
    return f"{entry}({', '.join(args)})"


def _check_block(
    module: hir.HirModule,
    macro: str,
    out_names: Mapping[str, str],
    manifest: IoManifest | None,
) -> str:
    expected_names = (
        {t.name for t in manifest.expected_outputs} if manifest is not None else set()
    )
    checked = [ref for ref in module.outputs if ref in expected_names]
    if not checked:
        return "    ;  /* no expected outputs in the manifest */"
    lines = []
    for ref in checked:
        io_count = f"EXPECTED_{c_ident(ref).upper()}_COUNT"
        model_count = _io_macro(macro, "OUTPUT", ref)
        lines += [
            f"    if ({io_count} != {model_count}) {{",
            f'        printf("io.h expected \'{ref}\' has %d values, model expects %d\\n",',
            f"               (int){io_count}, (int){model_count});",
            "        return 2;",
            "    }",
            f'    printf("output \'{ref}\': ");',
            f"    fail |= io_check({out_names[ref]}, {_io_array('expected', ref)}, "
            f"{model_count}, IO_TOL);",
        ]
    return "\n".join(lines)


def _print_block(module: hir.HirModule, macro: str, out_names: Mapping[str, str]) -> str:
    lines = []
    for ref in module.outputs:
        model_count = _io_macro(macro, "OUTPUT", ref)
        lines += [
            "    {",
            "        int i;",
            f"        for (i = 0; i < {model_count}; ++i) {{",
            f'            printf("{ref}[%d] = %g\\n", i, (double){out_names[ref]}[i]);',
            "        }",
            "    }",
        ]
    return "\n".join(lines)


def _check_manifest(module: hir.HirModule, manifest: IoManifest) -> None:
    ops = hir.op_map(module)
    want = {ref: ops[ref].out_type.count for ref in module.inputs}
    got = {t.name: t.data.size for t in manifest.inputs}
    if set(want) != set(got):
        raise EmitError(
            f"manifest inputs {sorted(got)} do not match model inputs {sorted(want)}"
        )
    for ref, n in want.items():
        if got[ref] != n:
            raise EmitError(
                f"manifest input '{ref}' holds {got[ref]} scalars, model expects {n}"
            )
    out_counts = {ref: ops[ref].out_type.count for ref in module.outputs}
    for t in manifest.expected_outputs:
        if t.name not in out_counts:
            raise EmitError(f"manifest expects unknown output '{t.name}'")
        if t.data.size != out_counts[t.name]:
            raise EmitError(
                f"manifest expected '{t.name}' holds {t.data.size} scalars, "
                f"model produces {out_counts[t.name]}"
            )


# ---------------------------------------------------------------------------
# whole-tree emission
# ---------------------------------------------------------------------------

REQUIRED_FILES = (
    "main.c",
    "make.sh",
    "report.json",
    "tvm_model/makefile",
    "tvm_model/include/model.h",
    "tvm_model/include/params.h",
    "tvm_model/source/model.c",
    "tvm_model/source/params.c",
)


@dataclass(frozen=True)
class EmitPlan:
    """Everything the CLI writes to disk: relative path -> text."""

    files: dict[str, str]
    substitutions: dict[str, str]


def _report_json(
    module: hir.HirModule,
    report: accel_mod.PartitionReport,
    plan: planner.MemoryPlan,
    lowered: tir.Lowered,
    target: str,
) -> str:
    steps = []
    for step in lowered.steps:
        if isinstance(step, tir.FuncStep):
            steps.append({"kind": "cpu", "op": step.func.source_op})
        else:
            steps.append(
                {
                    "kind": "extern",
                    "symbol": step.symbol,
                    "accel": step.accel,
                    "ops": list(step.op_ids),
                }
            )
    doc = {
        "model": module.name,
        "target": target,
        "partition": accel_mod.report_to_json(report),
        "memory_plan": {
            "arena_bytes": plan.arena_bytes,
            "alignment": plan.alignment,
            "offsets": dict(sorted(plan.offsets.items())),
            "sizes": dict(sorted(plan.sizes.items())),
        },
        "steps": steps,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit_tree(
    module: hir.HirModule,
    lowered: tir.Lowered,
    plan: planner.MemoryPlan,
    report: accel_mod.PartitionReport,
    *,
    manifest: IoManifest | None = None,
    target: str = "host",
    io_tol: float = 1e-5,
    registry: accel_mod.AccelRegistry | None = None,
) -> EmitPlan:
    """Assemble the complete output tree as an in-memory file map.

    Without a manifest no io.h is produced and the project only builds
    once the user supplies one; the model library itself is complete.
    """
    profs = profiles()
    if target not in profs:
        raise EmitError(
            f"unknown target profile '{target}' (available: {', '.join(sorted(profs))})"
        )
    profile = profs[target]

    files = emit_model(module, lowered, plan, registry)
    if manifest is not None:
        _check_manifest(module, manifest)
        files["tvm_model/include/io.h"] = prepare_io(manifest)

    name = module.name
    macro = c_ident(name).upper()
    entry = f"{c_ident(name)}_run"
    _, out_names = _io_arg_names(module)
    has_mock = any(isinstance(s, tir.ExternStep) for s in lowered.steps)

    lib_objs = "source/model.o source/params.o"
    mock_install = ""
    if has_mock:
        lib_objs += " source/mock_accel.o"
        mock = load_support_file("mock_accel.c").rstrip("\n")
        mock_install = (
            "cat > tvm_model/source/mock_accel.c <<'MICROFORGE_MOCK_EOF'\n"
            f"{mock}\nMICROFORGE_MOCK_EOF"
        )

    substitutions = {
        "MODEL_NAME": name,
        "CC": profile["CC"],
        "AR": profile["AR"],
        "CFLAGS": profile["CFLAGS"],
        "CC_DEFAULT": profile["CC"],
        "AR_DEFAULT": profile["AR"],
        "ARENA_BYTES": str(plan.arena_bytes),
        "ARENA_DECL": f"({macro}_ARENA_BYTES ? {macro}_ARENA_BYTES : 1)",
        "IO_TOL": f"{io_tol:g}f",
        "IO_GUARDS": _guard_block(module, macro),
        "OUTPUT_STORAGE": _storage_block(module, macro, out_names),
        "ENTRY_CALL": _entry_call(module, entry, out_names),
        "CHECK_BLOCK": _check_block(module, macro, out_names, manifest),
        "PRINT_BLOCK": _print_block(module, macro, out_names),
        "LIB_OBJS": lib_objs,
        "TVM_CRT_H": load_support_file("tvm_crt.h").rstrip("\n"),
        "MOCK_INSTALL": mock_install,
    }
    files["main.c"] = gen_main(substitutions)
    files["tvm_model/makefile"] = gen_make(substitutions)
    files["make.sh"] = gen_make_sh(substitutions)
    files["report.json"] = _report_json(module, report, plan, lowered, target)

    missing = [p for p in REQUIRED_FILES if p not in files]
    if missing:  # pragma: no cover - structural invariant
        raise EmitError(f"emission lost required files: {', '.join(missing)}")
    return EmitPlan(files, substitutions)
