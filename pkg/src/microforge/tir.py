"""Loop-level IR (TIR): explicit loop nests over flat float32 buffers.

Each HIR compute op lowers to one :class:`TirFunc` — a parameterized
loop nest with affine buffer indexing and no control flow other than
counted loops.  Ops matched to an accelerator never reach TIR; they
lower to a single external call step instead.

The lowering mirrors the reference interpreter's arithmetic exactly:
same reduction orders, same sigmoid expansion ``1/(1+exp(0-x))``, same
max-subtracted softmax.  Emitted C therefore reproduces interpreter
results to rounding of the math library.

A small pass framework (`run_tir_passes`) lets accelerator descriptions
rewrite loop nests before emission; `fold_constants` is the built-in
demonstration pass.  `check_bounds` statically verifies every buffer
access of a func against its declared extents, and `run_func` evaluates
a func on numpy buffers for testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence, Union

import numpy as np

from . import accel as accel_mod
from . import hir
from .errors import MicroforgeError
from .model_format import TensorSpec

__all__ = [
    "LoweringError",
    "PassError",
    "Buffer",
    "Affine",
    "Imm",
    "Load",
    "Bin",
    "Intrin",
    "Assign",
    "For",
    "TirFunc",
    "FuncStep",
    "ExternStep",
    "Lowered",
    "aff",
    "lower_op",
    "lower_module",
    "run_tir_passes",
    "fold_constants",
    "run_func",
    "check_bounds",
    "format_func",
]

F32 = np.float32

IN = "graph_input"
OUT = "graph_output"
PARAM = "param"
SCRATCH = "scratch"


class LoweringError(MicroforgeError):
    """An op cannot be lowered (unknown kind, missing shape, bad region)."""


class PassError(MicroforgeError):
    """A TIR pass rejected or corrupted a function."""


@dataclass(frozen=True)
class Buffer:
    """A flat float32 storage area as seen by one function."""

    name: str
    shape: tuple[int, ...]
    role: str  # graph_input | graph_output | param | scratch

    @property
    def count(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True)
class Affine:
    """Integer index expression: sum of var*coeff terms plus an offset."""

    terms: tuple[tuple[str, int], ...] = ()
    offset: int = 0


def aff(*terms: tuple[str, int], offset: int = 0) -> Affine:
    return Affine(tuple((v, int(c)) for v, c in terms if c != 0), int(offset))


@dataclass(frozen=True)
class Imm:
    value: float


@dataclass(frozen=True)
class Load:
    buffer: str
    index: Affine


@dataclass(frozen=True)
class Bin:
    op: str  # add | sub | mul | div | max
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Intrin:
    fn: str  # exp | tanh
    arg: "Expr"


Expr = Union[Imm, Load, Bin, Intrin]

_BIN_OPS = frozenset({"add", "sub", "mul", "div", "max"})
_INTRIN_FNS = frozenset({"exp", "tanh"})


@dataclass(frozen=True)
class Assign:
    buffer: str
    index: Affine
    value: Expr


@dataclass(frozen=True)
class For:
    var: str
    extent: int
    body: tuple["Stmt", ...]


Stmt = Union[Assign, For]


@dataclass(frozen=True)
class TirFunc:
    """One lowered op: pointer parameters, local scratch, a statement list."""

    name: str
    params: tuple[Buffer, ...]
    scratch: tuple[Buffer, ...]
    body: tuple[Stmt, ...]
    source_op: str = ""

    def buffer(self, name: str) -> Buffer | None:
        for b in self.params + self.scratch:
            if b.name == name:
                return b
        return None


# ---------------------------------------------------------------------------
# lowering of single ops
# ---------------------------------------------------------------------------


def _sigmoid_of(x: Expr) -> Expr:
    return Bin("div", Imm(1.0), Bin("add", Imm(1.0), Intrin("exp", Bin("sub", Imm(0.0), x))))


def _loop(var: str, extent: int, *body: Stmt) -> For:
    return For(var, extent, tuple(body))


def _elementwise_body(kind: str, out: str, ins: Sequence[str], n: int) -> tuple[Stmt, ...]:
    i = aff(("i", 1))
    a = Load(ins[0], i)
    if kind == hir.RELU:
        value: Expr = Bin("max", a, Imm(0.0))
    elif kind == hir.SIGMOID:
        value = _sigmoid_of(a)
    elif kind == hir.TANH:
        value = Intrin("tanh", a)
    elif kind == hir.RESHAPE:
        value = a
    elif kind in (hir.ADD, hir.SUB, hir.MUL):
        value = Bin({"add": "add", "sub": "sub", "mul": "mul"}[kind], a, Load(ins[1], i))
    else:  # pragma: no cover - guarded by caller
        raise LoweringError(f"not elementwise: {kind}")
    return (_loop("i", n, Assign(out, i, value)),)


def _dense_body(out: str, x: str, w: str, b: str, lead: int, c: int, units: int) -> tuple[Stmt, ...]:
    has_lead = lead > 1
    row = (("b", units),) if has_lead else ()
    xrow = (("b", c),) if has_lead else ()
    oi = aff(*row, ("u", 1))
    init = Assign(out, oi, Load(b, aff(("u", 1))))
    mac = Assign(
        out,
        oi,
        Bin(
            "add",
            Load(out, oi),
            Bin("mul", Load(w, aff(("u", c), ("c", 1))), Load(x, aff(*xrow, ("c", 1)))),
        ),
    )
    inner = _loop("u", units, init, _loop("c", c, mac))
    return (_loop("b", lead, inner),) if has_lead else (inner,)


def _conv_body(
    out: str, x: str, kern: str, bias: str, channels: int, length: int, k: int, s: int
) -> tuple[Stmt, ...]:
    out_len = (length - k) // s + 1
    oi = aff(("c", out_len), ("j", 1))
    init = Assign(out, oi, Load(bias, aff()))
    mac = Assign(
        out,
        oi,
        Bin(
            "add",
            Load(out, oi),
            Bin("mul", Load(kern, aff(("k", 1))), Load(x, aff(("c", length), ("j", s), ("k", 1)))),
        ),
    )
    return (_loop("c", channels, _loop("j", out_len, init, _loop("k", k, mac))),)


def _softmax_body(out: str, x: str, lead: int, n: int) -> tuple[Stmt, ...]:
    has_lead = lead > 1
    base = (("b", n),) if has_lead else ()
    xi = aff(*base, ("i", 1))
    mx = Load("mx", aff())
    sm = Load("sm", aff())
    row: list[Stmt] = [
        Assign("mx", aff(), Load(x, aff(*base))),
        _loop("i", n, Assign("mx", aff(), Bin("max", mx, Load(x, xi)))),
        Assign("sm", aff(), Imm(0.0)),
        _loop(
            "i",
            n,
            Assign(out, xi, Intrin("exp", Bin("sub", Load(x, xi), mx))),
            Assign("sm", aff(), Bin("add", sm, Load(out, xi))),
        ),
        _loop("i", n, Assign(out, xi, Bin("div", Load(out, xi), sm))),
    ]
    return (_loop("b", lead, *row),) if has_lead else tuple(row)


def _gru_body(
    out: str, x: str, wx: str, wh: str, bx: str, bh: str, c: int, t: int, h: int
) -> tuple[Stmt, ...]:
    xc = aff(("c", t), ("t", 1))  # x[c*T + t]

    def hp(var: str) -> Load:
        return Load("h_prev", aff((var, 1)))

    def gate(dst: str, row_off: int) -> For:
        du = aff(("u", 1))
        acc = Load(dst, du)
        return _loop(
            "u",
            h,
            Assign(dst, du, Load(bx, aff(("u", 1), offset=row_off))),
            _loop(
                "c",
                c,
                Assign(
                    dst,
                    du,
                    Bin(
                        "add",
                        acc,
                        Bin(
                            "mul",
                            Load(wx, aff(("u", c), ("c", 1), offset=row_off * c)),
                            Load(x, xc),
                        ),
                    ),
                ),
            ),
            Assign(dst, du, Bin("add", acc, Load(bh, aff(("u", 1), offset=row_off)))),
            _loop(
                "j",
                h,
                Assign(
                    dst,
                    du,
                    Bin(
                        "add",
                        acc,
                        Bin("mul", Load(wh, aff(("u", h), ("j", 1), offset=row_off * h)), hp("j")),
                    ),
                ),
            ),
            Assign(dst, du, _sigmoid_of(acc)),
        )

    du = aff(("u", 1))
    candidate = _loop(
        "u",
        h,
        Assign("xa", du, Load(bx, aff(("u", 1), offset=2 * h))),
        _loop(
            "c",
            c,
            Assign(
                "xa",
                du,
                Bin(
                    "add",
                    Load("xa", du),
                    Bin("mul", Load(wx, aff(("u", c), ("c", 1), offset=2 * h * c)), Load(x, xc)),
                ),
            ),
        ),
        Assign("nn", du, Load(bh, aff(("u", 1), offset=2 * h))),
        _loop(
            "j",
            h,
            Assign(
                "nn",
                du,
                Bin(
                    "add",
                    Load("nn", du),
                    Bin("mul", Load(wh, aff(("u", h), ("j", 1), offset=2 * h * h)), hp("j")),
                ),
            ),
        ),
        Assign(
            "nn",
            du,
            Intrin("tanh", Bin("add", Load("xa", du), Bin("mul", Load("rr", du), Load("nn", du)))),
        ),
    )
    combine = _loop(
        "u",
        h,
        Assign(
            "h_cur",
            du,
            Bin(
                "add",
                Bin("mul", Bin("sub", Imm(1.0), Load("zz", du)), Load("nn", du)),
                Bin("mul", Load("zz", du), hp("u")),
            ),
        ),
    )
    emit_out = _loop("u", h, Assign(out, aff(("u", t), ("t", 1)), Load("h_cur", du)))
    swap = _loop("u", h, Assign("h_prev", du, Load("h_cur", du)))
    return (
        _loop("j", h, Assign("h_prev", aff(("j", 1)), Imm(0.0))),
        _loop("t", t, gate("rr", 0), gate("zz", h), candidate, combine, emit_out, swap),
    )


def lower_op(op: hir.HirOp, in_specs: Sequence[TensorSpec]) -> TirFunc:
    """Lower one shape-inferred compute op to a loop nest.

    Function parameters are ordered (op inputs..., output); the trailing
    const-tensor inputs of dense/conv/gru take the ``param`` role, other
    inputs ``graph_input``, the output ``graph_output``.
    """
    if op.out_type is None:
        raise LoweringError(f"{op.id}: cannot lower an op without an inferred shape")
    if op.kind not in hir.COMPUTE_KINDS:
        raise LoweringError(f"{op.id}: '{op.kind}' is not a compute op")
    n_params = accel_mod.param_count(op.kind)
    names = list(op.inputs)
    params = []
    for pos, (ref, spec) in enumerate(zip(names, in_specs)):
        role = PARAM if pos >= len(names) - n_params else IN
        params.append(Buffer(ref, spec.shape, role))
    params.append(Buffer(op.id, op.out_type.shape, OUT))
    scratch: tuple[Buffer, ...] = ()

    out = op.id
    shapes = [s.shape for s in in_specs]
    if op.kind in (hir.RELU, hir.SIGMOID, hir.TANH, hir.RESHAPE, hir.ADD, hir.SUB, hir.MUL):
        body = _elementwise_body(op.kind, out, names, op.out_type.count)
    elif op.kind == hir.LAST_TIMESTEP:
        _, hdim, tdim = shapes[0]
        body = (_loop("u", hdim, Assign(out, aff(("u", 1)), Load(names[0], aff(("u", tdim), offset=tdim - 1)))),)
    elif op.kind == hir.DENSE:
        c = shapes[0][-1]
        lead = math.prod(shapes[0][:-1])
        body = _dense_body(out, names[0], names[1], names[2], lead, c, int(op.attrs["units"]))
    elif op.kind == hir.CONV1D_DW_SHARED:
        _, channels, length = shapes[0]
        body = _conv_body(
            out, names[0], names[1], names[2],
            channels, length, int(op.attrs["kernel_len"]), int(op.attrs["stride"]),
        )
    elif op.kind == hir.SOFTMAX:
        n = shapes[0][-1]
        lead = math.prod(shapes[0][:-1])
        body = _softmax_body(out, names[0], lead, n)
        scratch = (Buffer("mx", (1,), SCRATCH), Buffer("sm", (1,), SCRATCH))
    elif op.kind == hir.GRU:
        _, c, t = shapes[0]
        h = int(op.attrs["hidden"])
        body = _gru_body(out, names[0], names[1], names[2], names[3], names[4], c, t, h)
        scratch = tuple(
            Buffer(n, (h,), SCRATCH) for n in ("h_prev", "h_cur", "rr", "zz", "nn", "xa")
        )
    else:  # pragma: no cover - kinds above are exhaustive
        raise LoweringError(f"{op.id}: no lowering rule for kind '{op.kind}'")
    return TirFunc(op.id, tuple(params), scratch, body, source_op=op.id)


# ---------------------------------------------------------------------------
# module lowering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FuncStep:
    """Run a lowered loop nest; ``args`` bind value refs to func params."""

    func: TirFunc
    args: tuple[str, ...]


@dataclass(frozen=True)
class ExternStep:
    """Call an accelerator's external kernel for one matched region."""

    symbol: str
    accel: str
    pattern: str
    op_ids: tuple[str, ...]
    input: str
    params: tuple[str, ...]
    output: str
    dims: tuple[int, ...]


@dataclass(frozen=True)
class Lowered:
    funcs: tuple[TirFunc, ...]
    steps: tuple[Union[FuncStep, ExternStep], ...]


def lower_module(
    module: hir.HirModule,
    report: accel_mod.PartitionReport | None = None,
    registry: accel_mod.AccelRegistry | None = None,
) -> Lowered:
    """Lower every cpu op; fold each accelerator region into one extern call.

    The extern call is placed at the schedule position of the region's
    last op.  A region must draw on exactly one external data value
    (its chain head's input); anything else is a lowering error.
    """
    ops = hir.op_map(module)
    schedule = hir.topo_schedule(module)
    regions = report.regions if report is not None else ()
    last_op_of = {r.op_ids[-1]: r for r in regions}
    in_region = {op_id for r in regions for op_id in r.op_ids}

    funcs: list[TirFunc] = []
    steps: list[Union[FuncStep, ExternStep]] = []
    for op_id in schedule:
        op = ops[op_id]
        if op_id in in_region:
            region = last_op_of.get(op_id)
            if region is None:
                continue  # interior op; handled by the region's final op
            steps.append(_lower_region(module, ops, region, registry))
            continue
        in_specs = [ops[r].out_type for r in op.inputs]
        func = run_tir_passes(lower_op(op, in_specs), ())
        funcs.append(func)
        steps.append(FuncStep(func, op.inputs + (op.id,)))
    return Lowered(tuple(funcs), tuple(steps))


def _lower_region(
    module: hir.HirModule,
    ops: dict[str, hir.HirOp],
    region: accel_mod.Region,
    registry: accel_mod.AccelRegistry | None,
) -> ExternStep:
    if registry is None:
        raise LoweringError(
            f"region {region.accel}/{region.pattern} needs its accelerator registry"
        )
    desc = registry.get(region.accel)
    pattern = next((p for p in desc.patterns if p.name == region.pattern), None)
    if pattern is None:
        raise LoweringError(
            f"accelerator '{region.accel}' has no pattern '{region.pattern}'"
        )
    inside = set(region.op_ids)
    data: list[str] = []
    consts: list[str] = []
    dims: list[int] = []
    for op_id in region.op_ids:
        op = ops[op_id]
        for ref in op.inputs:
            if ref in inside:
                continue
            if ops[ref].kind == hir.CONST:
                consts.append(ref)
            elif ref not in data:
                data.append(ref)
        dims.extend(accel_mod.extern_call_dims(op, [ops[r].out_type for r in op.inputs]))
    if len(data) != 1:
        raise LoweringError(
            f"region {region.accel}/{region.pattern} ({', '.join(region.op_ids)}) must "
            f"read exactly one external value, found {len(data)}: {', '.join(data) or 'none'}"
        )
    return ExternStep(
        symbol=desc.symbol(region.pattern),
        accel=region.accel,
        pattern=region.pattern,
        op_ids=region.op_ids,
        input=data[0],
        params=tuple(consts),
        output=region.op_ids[-1],
        dims=tuple(dims),
    )


# ---------------------------------------------------------------------------
# pass framework
# ---------------------------------------------------------------------------


def run_tir_passes(func: TirFunc, passes: Sequence) -> TirFunc:
    """Apply passes left to right; any exception becomes a PassError naming
    the offending pass."""
    for p in passes:
        pname = getattr(p, "__name__", repr(p))
        try:
            result = p(func)
        except PassError:
            raise
        except Exception as exc:
            raise PassError(f"pass '{pname}' rejected func '{func.name}': {exc}") from exc
        if not isinstance(result, TirFunc):
            raise PassError(f"pass '{pname}' returned {type(result).__name__}, not a TirFunc")
        func = result
    return func


def _fold_expr(e: Expr) -> Expr:
    if isinstance(e, Bin):
        lhs, rhs = _fold_expr(e.lhs), _fold_expr(e.rhs)
        if isinstance(lhs, Imm) and isinstance(rhs, Imm):
            a, b = F32(lhs.value), F32(rhs.value)
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                v = {
                    "add": a + b,
                    "sub": a - b,
                    "mul": a * b,
                    "div": a / b,
                    "max": np.maximum(a, b),
                }[e.op]
            return Imm(float(v))
        return Bin(e.op, lhs, rhs)
    if isinstance(e, Intrin):
        arg = _fold_expr(e.arg)
        if isinstance(arg, Imm):
            v = np.exp(F32(arg.value)) if e.fn == "exp" else np.tanh(F32(arg.value))
            return Imm(float(v))
        return Intrin(e.fn, arg)
    return e


def _fold_stmt(s: Stmt) -> Stmt:
    if isinstance(s, For):
        return For(s.var, s.extent, tuple(_fold_stmt(b) for b in s.body))
    return Assign(s.buffer, s.index, _fold_expr(s.value))


def fold_constants(func: TirFunc) -> TirFunc:
    """Demo pass: collapse literal-only subexpressions (float32 semantics)."""
    return replace(func, body=tuple(_fold_stmt(s) for s in func.body))


# ---------------------------------------------------------------------------
# evaluation (testing aid)
# ---------------------------------------------------------------------------


def _eval_index(index: Affine, env: Mapping[str, int]) -> int:
    total = index.offset
    for var, coeff in index.terms:
        if var not in env:
            raise LoweringError(f"index uses '{var}' outside its loop")
        total += coeff * env[var]
    return total


def _eval_expr(e: Expr, bufs: Mapping[str, np.ndarray], env: Mapping[str, int]) -> F32:
    if isinstance(e, Imm):
        return F32(e.value)
    if isinstance(e, Load):
        return bufs[e.buffer][_eval_index(e.index, env)]
    if isinstance(e, Bin):
        a = _eval_expr(e.lhs, bufs, env)
        b = _eval_expr(e.rhs, bufs, env)
        if e.op == "add":
            return a + b
        if e.op == "sub":
            return a - b
        if e.op == "mul":
            return a * b
        if e.op == "div":
            return a / b
        return np.maximum(a, b)
    if isinstance(e, Intrin):
        a = _eval_expr(e.arg, bufs, env)
        return np.exp(a) if e.fn == "exp" else np.tanh(a)
    raise LoweringError(f"cannot evaluate {type(e).__name__}")


def run_func(func: TirFunc, buffers: Mapping[str, np.ndarray]) -> None:
    """Execute a func in place: ``buffers`` maps param names to flat
    float32 arrays (outputs are written into the given arrays)."""
    bufs: dict[str, np.ndarray] = {}
    for b in func.params:
        if b.name not in buffers:
            raise LoweringError(f"run_func: missing buffer '{b.name}'")
        arr = buffers[b.name]
        if arr.size != b.count:
            raise LoweringError(
                f"run_func: buffer '{b.name}' has {arr.size} scalars, expected {b.count}"
            )
        bufs[b.name] = arr
    for b in func.scratch:
        bufs[b.name] = np.zeros(b.count, dtype=np.float32)

    def run(stmts: Sequence[Stmt], env: dict[str, int]) -> None:
        for s in stmts:
            if isinstance(s, For):
                for i in range(s.extent):
                    env[s.var] = i
                    run(s.body, env)
                env.pop(s.var, None)
            else:
                bufs[s.buffer][_eval_index(s.index, env)] = _eval_expr(s.value, bufs, env)

    with np.errstate(over="ignore", under="ignore"):
        run(func.body, {})


# ---------------------------------------------------------------------------
# static bounds checking
# ---------------------------------------------------------------------------


def check_bounds(func: TirFunc) -> list[str]:
    """Statically verify every access; returns defect messages ([] = sound).

    Each affine index is bounded over the enclosing loop extents and
    compared against the buffer's element count; unknown buffers, free
    index variables and shadowed loop variables are also reported.
    """
    sizes = {b.name: b.count for b in func.params + func.scratch}
    errors: list[str] = []

    def span(index: Affine, extents: Mapping[str, int], where: str) -> tuple[int, int]:
        lo = hi = index.offset
        for var, coeff in index.terms:
            if var not in extents:
                errors.append(f"{where}: index var '{var}' is not bound by a loop")
                continue
            top = coeff * (extents[var] - 1)
            lo += min(0, top)
            hi += max(0, top)
        return lo, hi

    def access(buffer: str, index: Affine, extents: Mapping[str, int], what: str) -> None:
        where = f"{func.name}: {what} {buffer}"
        if buffer not in sizes:
            errors.append(f"{where}: unknown buffer")
            return
        lo, hi = span(index, extents, where)
        if lo < 0 or hi >= sizes[buffer]:
            errors.append(
                f"{where}: index range [{lo}, {hi}] escapes 0..{sizes[buffer] - 1}"
            )

    def walk_expr(e: Expr, extents: Mapping[str, int]) -> None:
        if isinstance(e, Load):
            access(e.buffer, e.index, extents, "load from")
        elif isinstance(e, Bin):
            if e.op not in _BIN_OPS:
                errors.append(f"{func.name}: unknown binary op '{e.op}'")
            walk_expr(e.lhs, extents)
            walk_expr(e.rhs, extents)
        elif isinstance(e, Intrin):
            if e.fn not in _INTRIN_FNS:
                errors.append(f"{func.name}: unknown intrinsic '{e.fn}'")
            walk_expr(e.arg, extents)

    def walk(stmts: Sequence[Stmt], extents: dict[str, int]) -> None:
        for s in stmts:
            if isinstance(s, For):
                if s.extent < 1:
                    errors.append(f"{func.name}: loop '{s.var}' has extent {s.extent}")
                if s.var in extents:
                    errors.append(f"{func.name}: loop var '{s.var}' shadows an outer loop")
                walk(s.body, {**extents, s.var: max(s.extent, 1)})
            else:
                access(s.buffer, s.index, extents, "store to")
                walk_expr(s.value, extents)

    walk(func.body, {})
    return errors


# ---------------------------------------------------------------------------
# text dump
# ---------------------------------------------------------------------------


def format_affine(index: Affine) -> str:
    parts = [f"{v}*{c}" if c != 1 else v for v, c in index.terms]
    if index.offset or not parts:
        parts.append(str(index.offset))
    return " + ".join(parts)


def _format_expr(e: Expr) -> str:
    if isinstance(e, Imm):
        return repr(e.value)
    if isinstance(e, Load):
        return f"{e.buffer}[{format_affine(e.index)}]"
    if isinstance(e, Bin):
        sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}.get(e.op)
        if sym is None:
            return f"max({_format_expr(e.lhs)}, {_format_expr(e.rhs)})"
        return f"({_format_expr(e.lhs)} {sym} {_format_expr(e.rhs)})"
    return f"{e.fn}({_format_expr(e.arg)})"


def format_func(func: TirFunc) -> str:
    """Readable dump of one lowered function."""
    sig = ", ".join(
        f"{b.name}: {b.role} f32[{', '.join(str(d) for d in b.shape)}]" for b in func.params
    )
    lines = [f"func {func.name}({sig}) {{"]
    for b in func.scratch:
        lines.append(f"  scratch {b.name}: f32[{', '.join(str(d) for d in b.shape)}]")

    def walk(stmts: Sequence[Stmt], depth: int) -> None:
        pad = "  " * depth
        for s in stmts:
            if isinstance(s, For):
                lines.append(f"{pad}for ({s.var}: {s.extent}) {{")
                walk(s.body, depth + 1)
                lines.append(f"{pad}}}")
            else:
                lines.append(f"{pad}{s.buffer}[{format_affine(s.index)}] = {_format_expr(s.value)}")

    walk(func.body, 1)
    lines.append("}")
    return "\n".join(lines) + "\n"
