"""High-level IR: a flat, typed dataflow graph over named values.

Every op's ``id`` doubles as the name of the value it produces, so edges
are plain string references.  Parameters appear as ``const`` ops carrying
their payload and graph inputs as ``input`` ops, which keeps the rest of
the compiler free of special cases: an op's ``inputs`` tuple lists *all*
values it reads, data and parameters alike.

Shape rules (no broadcasting anywhere):

====================  =========================================  ==========================
kind                  inputs                                     output shape
====================  =========================================  ==========================
dense                 x [*, c], w [units, c], b [units]          [*, units]
conv1d_dw_shared      x [1, C, L], kern [K], bias [1]            [1, C, (L - K) // S + 1]
gru                   x [1, C, T], wx [3H, C], wh [3H, H],       [1, H, T]
                      bx [3H], bh [3H]
softmax               x (last axis normalized)                   unchanged
relu / sigmoid/tanh   x                                          unchanged
add / sub / mul       a, b (identical shapes)                    unchanged
reshape               x (attr ``new_shape``, same element count) new_shape
last_timestep         x [1, H, T]                                [1, H]
====================  =========================================  ==========================
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MicroforgeError
from .model_format import TensorSpec

__all__ = [
    "ShapeError",
    "CycleError",
    "HirOp",
    "HirModule",
    "INPUT",
    "CONST",
    "COMPUTE_KINDS",
    "ALL_KINDS",
    "ARITY",
    "op_map",
    "consumers",
    "infer_op_shape",
    "infer_shapes",
    "topo_schedule",
    "validate",
    "format_module",
]


class ShapeError(MicroforgeError):
    """An op's inputs or attributes violate its shape rule."""


class CycleError(MicroforgeError):
    """The op graph is not acyclic."""


INPUT = "input"
CONST = "const"
DENSE = "dense"
CONV1D_DW_SHARED = "conv1d_dw_shared"
GRU = "gru"
SOFTMAX = "softmax"
RELU = "relu"
SIGMOID = "sigmoid"
TANH = "tanh"
ADD = "add"
SUB = "sub"
MUL = "mul"
RESHAPE = "reshape"
LAST_TIMESTEP = "last_timestep"

UNARY_KINDS = frozenset({RELU, SIGMOID, TANH, SOFTMAX})
BINARY_KINDS = frozenset({ADD, SUB, MUL})
COMPUTE_KINDS = frozenset(
    {DENSE, CONV1D_DW_SHARED, GRU, RESHAPE, LAST_TIMESTEP} | UNARY_KINDS | BINARY_KINDS
)
ALL_KINDS = COMPUTE_KINDS | {INPUT, CONST}

ARITY: Mapping[str, int] = {
    INPUT: 0,
    CONST: 0,
    DENSE: 3,
    CONV1D_DW_SHARED: 3,
    GRU: 5,
    SOFTMAX: 1,
    RELU: 1,
    SIGMOID: 1,
    TANH: 1,
    ADD: 2,
    SUB: 2,
    MUL: 2,
    RESHAPE: 1,
    LAST_TIMESTEP: 1,
}


@dataclass(frozen=True, eq=False)
class HirOp:
    """One node; ``id`` names both the op and the value it produces.

    ``data`` is set only on ``const`` ops (flat float32).  ``target`` is
    ``"cpu"`` until partitioning reassigns the op to an accelerator.
    """

    id: str
    kind: str
    inputs: tuple[str, ...] = ()
    attrs: dict = field(default_factory=dict)
    out_type: TensorSpec | None = None
    target: str = "cpu"
    data: np.ndarray | None = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, HirOp):
            return NotImplemented
        if (
            self.id != other.id
            or self.kind != other.kind
            or self.inputs != other.inputs
            or self.attrs != other.attrs
            or self.out_type != other.out_type
            or self.target != other.target
        ):
            return False
        if self.data is None or other.data is None:
            return self.data is None and other.data is None
        return bool(np.array_equal(self.data, other.data))


@dataclass(frozen=True)
class HirModule:
    name: str
    ops: tuple[HirOp, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]


def op_map(module: HirModule) -> dict[str, HirOp]:
    return {op.id: op for op in module.ops}


def consumers(module: HirModule) -> dict[str, list[str]]:
    """Map each value ref to the ids of the ops that read it (in op order)."""
    out: dict[str, list[str]] = {op.id: [] for op in module.ops}
    for op in module.ops:
        for ref in op.inputs:
            if ref in out:
                out[ref].append(op.id)
    return out


# ---------------------------------------------------------------------------
# shape inference
# ---------------------------------------------------------------------------


def _expect_rank3_batch1(spec: TensorSpec, op_id: str, kind: str) -> None:
    if len(spec.shape) != 3 or spec.shape[0] != 1:
        raise ShapeError(f"{op_id}: {kind} expects input shaped [1, C, L], got {list(spec.shape)}")


def _attr_int(attrs: Mapping, key: str, op_id: str, minimum: int = 1) -> int:
    if key not in attrs:
        raise ShapeError(f"{op_id}: missing required attr '{key}'")
    value = attrs[key]
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ShapeError(f"{op_id}: attr '{key}' must be an int >= {minimum}, got {value!r}")
    return value


def infer_op_shape(
    kind: str, attrs: Mapping, in_specs: Sequence[TensorSpec], op_id: str
) -> tuple[int, ...]:
    """Output shape of a single op given its (already typed) inputs.

    Raises :class:`ShapeError` naming ``op_id`` on any rule violation,
    including wrong parameter tensor shapes.
    """
    shapes = [s.shape for s in in_specs]
    if kind in UNARY_KINDS:
        return shapes[0]
    if kind in BINARY_KINDS:
        a, b = shapes
        if a != b:
            raise ShapeError(
                f"{op_id}: {kind} operands must have identical shapes, got "
                f"{list(a)} vs {list(b)} (no broadcasting)"
            )
        return a
    if kind == RESHAPE:
        new_shape = attrs.get("new_shape")
        if (
            not isinstance(new_shape, list)
            or not new_shape
            or not all(isinstance(d, int) and not isinstance(d, bool) and d > 0 for d in new_shape)
        ):
            raise ShapeError(f"{op_id}: reshape requires attr 'new_shape' as a positive int list")
        if math.prod(new_shape) != math.prod(shapes[0]):
            raise ShapeError(
                f"{op_id}: reshape cannot map {list(shapes[0])} "
                f"({math.prod(shapes[0])} elements) to {new_shape} ({math.prod(new_shape)})"
            )
        return tuple(new_shape)
    if kind == LAST_TIMESTEP:
        _expect_rank3_batch1(in_specs[0], op_id, kind)
        return (1, shapes[0][1])
    if kind == DENSE:
        x, w, b = shapes
        units = _attr_int(attrs, "units", op_id)
        if len(x) < 1:
            raise ShapeError(f"{op_id}: dense input must have rank >= 1")
        c = x[-1]
        if w != (units, c):
            raise ShapeError(
                f"{op_id}: dense weight must be [{units}, {c}], got {list(w)}"
            )
        if b != (units,):
            raise ShapeError(f"{op_id}: dense bias must be [{units}], got {list(b)}")
        return x[:-1] + (units,)
    if kind == CONV1D_DW_SHARED:
        _expect_rank3_batch1(in_specs[0], op_id, kind)
        x, kern, bias = shapes
        k = _attr_int(attrs, "kernel_len", op_id)
        s = _attr_int(attrs, "stride", op_id)
        length = x[2]
        if length < k:
            raise ShapeError(
                f"{op_id}: input length {length} shorter than kernel_len {k} (valid padding)"
            )
        if kern != (k,):
            raise ShapeError(f"{op_id}: kernel must be [{k}], got {list(kern)}")
        if bias != (1,):
            raise ShapeError(f"{op_id}: bias must be [1] (shared scalar), got {list(bias)}")
        return (1, x[1], (length - k) // s + 1)
    if kind == GRU:
        _expect_rank3_batch1(in_specs[0], op_id, kind)
        x, wx, wh, bx, bh = shapes
        h = _attr_int(attrs, "hidden", op_id)
        c, t = x[1], x[2]
        if wx != (3 * h, c):
            raise ShapeError(f"{op_id}: gru wx must be [{3 * h}, {c}], got {list(wx)}")
        if wh != (3 * h, h):
            raise ShapeError(f"{op_id}: gru wh must be [{3 * h}, {h}], got {list(wh)}")
        if bx != (3 * h,):
            raise ShapeError(f"{op_id}: gru bx must be [{3 * h}], got {list(bx)}")
        if bh != (3 * h,):
            raise ShapeError(f"{op_id}: gru bh must be [{3 * h}], got {list(bh)}")
        return (1, h, t)
    raise ShapeError(f"{op_id}: unknown op kind '{kind}'")


def _full_order(module: HirModule) -> list[str]:
    """Topological order over *all* ops (ties broken by id), or CycleError."""
    ops = op_map(module)
    indeg = {op.id: 0 for op in module.ops}
    down: dict[str, list[str]] = {op.id: [] for op in module.ops}
    for op in module.ops:
        for ref in op.inputs:
            if ref in ops:
                indeg[op.id] += 1
                down[ref].append(op.id)
    ready = sorted(i for i, d in indeg.items() if d == 0)
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        cur = heapq.heappop(ready)
        order.append(cur)
        for nxt in down[cur]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(order) != len(module.ops):
        stuck = sorted(i for i, d in indeg.items() if d > 0)
        raise CycleError(f"module '{module.name}' has a cycle through: {', '.join(stuck)}")
    return order


def infer_shapes(module: HirModule) -> HirModule:
    """Return a copy of the module with ``out_type`` filled on every op.

    Idempotent.  Raises :class:`ShapeError` if a rule is violated or a
    pre-set ``out_type`` contradicts the inferred one, :class:`CycleError`
    if the graph is cyclic.
    """
    ops = op_map(module)
    specs: dict[str, TensorSpec] = {}
    new_ops: dict[str, HirOp] = {}
    for op_id in _full_order(module):
        op = ops[op_id]
        if op.kind == INPUT:
            if op.out_type is None:
                raise ShapeError(f"{op.id}: input op must declare its type")
            spec = op.out_type
        elif op.kind == CONST:
            if op.out_type is None or op.data is None:
                raise ShapeError(f"{op.id}: const op must carry a type and payload")
            if op.data.size != op.out_type.count:
                raise ShapeError(
                    f"{op.id}: const payload has {op.data.size} scalars, "
                    f"shape {list(op.out_type.shape)} requires {op.out_type.count}"
                )
            spec = op.out_type
        else:
            try:
                in_specs = [specs[ref] for ref in op.inputs]
            except KeyError as exc:
                raise ShapeError(f"{op.id}: reads undefined value {exc}") from None
            shape = infer_op_shape(op.kind, op.attrs, in_specs, op.id)
            spec = TensorSpec(op.id, shape)
            if op.out_type is not None and op.out_type.shape != shape:
                raise ShapeError(
                    f"{op.id}: declared shape {list(op.out_type.shape)} "
                    f"contradicts inferred {list(shape)}"
                )
        specs[op_id] = spec
        new_ops[op_id] = op if op.out_type == spec else replace(op, out_type=spec)
    return replace(module, ops=tuple(new_ops[op.id] for op in module.ops))


def topo_schedule(module: HirModule) -> list[str]:
    """Execution order over compute ops only (inputs/consts excluded).

    Deterministic: among ready ops the lexicographically smallest id runs
    first.
    """
    return [op_id for op_id in _full_order(module) if op_map(module)[op_id].kind in COMPUTE_KINDS]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def validate(module: HirModule) -> list[str]:
    """Collect every detectable defect as a message; [] means well-formed.

    Never raises: structural problems (duplicate ids, dangling refs, bad
    arity) are reported first, and if the structure is sound the shape
    rules are checked too.
    """
    errors: list[str] = []
    seen: set[str] = set()
    for op in module.ops:
        if op.id in seen:
            errors.append(f"duplicate op id '{op.id}'")
        seen.add(op.id)
    ops = op_map(module)
    for op in module.ops:
        if op.kind not in ALL_KINDS:
            errors.append(f"{op.id}: unknown kind '{op.kind}'")
            continue
        expected = ARITY[op.kind]
        if len(op.inputs) != expected:
            errors.append(
                f"{op.id}: {op.kind} takes {expected} inputs, got {len(op.inputs)}"
            )
        for ref in op.inputs:
            if ref not in ops:
                errors.append(f"{op.id}: reads undefined value '{ref}'")
        if op.kind == CONST and op.data is None:
            errors.append(f"{op.id}: const op has no payload")
        if op.kind == INPUT and op.out_type is None:
            errors.append(f"{op.id}: input op has no declared type")
    for ref in module.inputs:
        if ref not in ops or ops[ref].kind != INPUT:
            errors.append(f"module input '{ref}' is not an input op")
    for ref in module.outputs:
        if ref not in ops:
            errors.append(f"module output '{ref}' is not produced by any op")
    if errors:
        return errors
    try:
        infer_shapes(module)
    except (ShapeError, CycleError) as exc:
        errors.append(str(exc))
    return errors


# ---------------------------------------------------------------------------
# text dump
# ---------------------------------------------------------------------------


def _fmt_attrs(attrs: Mapping) -> str:
    return ", ".join(f"{k}={v}" for k, v in attrs.items())


def _fmt_shape(spec: TensorSpec | None) -> str:
    if spec is None:
        return "?"
    return "[" + ", ".join(str(d) for d in spec.shape) + "]"


def format_module(module: HirModule) -> str:
    """Readable dump, one op per line:

    ``id: kind(attrs) (inputs) -> shape @target``
    """
    lines = [
        f"module {module.name}",
        f"  inputs: {', '.join(module.inputs)}",
        f"  outputs: {', '.join(module.outputs)}",
    ]
    for op in module.ops:
        lines.append(
            f"  {op.id}: {op.kind}({_fmt_attrs(op.attrs)}) "
            f"({', '.join(op.inputs)}) -> {_fmt_shape(op.out_type)} @{op.target}"
        )
    return "\n".join(lines) + "\n"
