"""Frontend: translate a parsed model graph into HIR via a convert map.

The convert map is the extension point for new operators.  It maps a
model-format op name to a converter function; converters decompose the
node into existing HIR primitives, so adding an operator never requires
touching the lowering or emission stages::

    def convert_hard_sigmoid(ctx, node, inputs):
        ...
        return ctx.emit("relu", (some_ref,))

    cmap = register_operator(default_convert_map(), "hard_sigmoid", convert_hard_sigmoid)
    module = convert(graph, cmap)

A converter receives a :class:`ConvertContext` (``emit``/``const``/
``shape_of`` plus the node's parameters already materialized as const
refs) and must return the ref of a value *it emitted*; ``convert``
renames that value to the node id so graph outputs resolve unchanged.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

from . import hir
from .errors import MicroforgeError
from .model_format import ModelGraph, OperatorNode, TensorSpec

__all__ = [
    "ConvertError",
    "UnknownOperatorError",
    "DuplicateOperatorError",
    "ConvertContext",
    "ConvertMap",
    "default_convert_map",
    "register_operator",
    "convert",
]


class ConvertError(MicroforgeError):
    """A converter misbehaved or a node cannot be translated."""


class UnknownOperatorError(ConvertError):
    """The model uses an op name with no entry in the convert map."""


class DuplicateOperatorError(ConvertError):
    """register_operator would silently replace an existing entry."""


class ConvertContext:
    """Emission interface handed to converter functions."""

    def __init__(self, node: OperatorNode, used: set[str], shapes: dict[str, tuple[int, ...]]):
        self._node = node
        self._used = used
        self._shapes = shapes
        self._serial = 0
        self.emitted: list[hir.HirOp] = []
        self.params: tuple[str, ...] = ()  # const refs for node.param_refs, set by convert()

    def _fresh(self, stem: str) -> str:
        while True:
            candidate = f"{stem}_{self._serial}"
            self._serial += 1
            if candidate not in self._used:
                self._used.add(candidate)
                return candidate

    def shape_of(self, ref: str) -> tuple[int, ...]:
        if ref not in self._shapes:
            raise ConvertError(f"node '{self._node.id}': unknown value '{ref}'")
        return self._shapes[ref]

    def emit(self, kind: str, inputs: Sequence[str], attrs: dict | None = None) -> str:
        """Append one HIR op and return the ref of its output value."""
        attrs = dict(attrs or {})
        ref = self._fresh(self._node.id)
        in_specs = [TensorSpec(r, self.shape_of(r)) for r in inputs]
        try:
            shape = hir.infer_op_shape(kind, attrs, in_specs, ref)
        except hir.ShapeError as exc:
            raise ConvertError(
                f"while converting node '{self._node.id}' (op '{self._node.op_name}'): {exc}"
            ) from None
        op = hir.HirOp(ref, kind, tuple(inputs), attrs, out_type=TensorSpec(ref, shape))
        self.emitted.append(op)
        self._shapes[ref] = shape
        return ref

    def const(self, values, shape: Sequence[int] | None = None) -> str:
        """Materialize a float32 constant and return its ref."""
        arr = np.asarray(values, dtype=np.float32)
        shape = tuple(shape) if shape is not None else (arr.shape or (1,))
        flat = arr.ravel()
        if flat.size != int(np.prod(shape)):
            raise ConvertError(
                f"node '{self._node.id}': const payload of {flat.size} scalars "
                f"cannot take shape {list(shape)}"
            )
        ref = self._fresh(f"{self._node.id}_c")
        spec = TensorSpec(ref, tuple(int(d) for d in shape))
        self.emitted.append(hir.HirOp(ref, hir.CONST, out_type=spec, data=flat))
        self._shapes[ref] = spec.shape
        return ref


ConverterFn = Callable[[ConvertContext, OperatorNode, list[str]], str]


@dataclass(frozen=True)
class ConvertMap:
    """Immutable op-name -> converter table."""

    entries: Mapping[str, ConverterFn]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> ConverterFn:
        return self.entries[name]

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self.entries))


def register_operator(
    cmap: ConvertMap, name: str, converter: ConverterFn, *, override: bool = False
) -> ConvertMap:
    """Return a new map with ``name`` bound to ``converter``.

    Registering an existing name raises :class:`DuplicateOperatorError`
    unless ``override=True``.
    """
    if name in cmap and not override:
        raise DuplicateOperatorError(
            f"op '{name}' is already registered (pass override=True to replace it)"
        )
    merged = dict(cmap.entries)
    merged[name] = converter
    return ConvertMap(MappingProxyType(merged))


# ---------------------------------------------------------------------------
# built-in converters
# ---------------------------------------------------------------------------


def _want_params(ctx: ConvertContext, node: OperatorNode, count: int, names: str) -> None:
    if len(ctx.params) != count:
        raise ConvertError(
            f"node '{node.id}' (op '{node.op_name}') needs {count} params ({names}), "
            f"got {len(ctx.params)}"
        )


def _want_attr_int(node: OperatorNode, key: str) -> int:
    value = node.attrs.get(key)
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConvertError(
            f"node '{node.id}' (op '{node.op_name}') needs int attr '{key}' >= 1"
        )
    return value


def _convert_identity(ctx: ConvertContext, node: OperatorNode, inputs: list[str]) -> str:
    shape = ctx.shape_of(inputs[0])
    return ctx.emit(hir.RESHAPE, (inputs[0],), {"new_shape": list(shape)})


def _convert_reshape(ctx: ConvertContext, node: OperatorNode, inputs: list[str]) -> str:
    new_shape = node.attrs.get("new_shape")
    if not isinstance(new_shape, list):
        raise ConvertError(f"node '{node.id}': reshape needs attr 'new_shape' as an int list")
    return ctx.emit(hir.RESHAPE, (inputs[0],), {"new_shape": list(new_shape)})


def _convert_dense(ctx: ConvertContext, node: OperatorNode, inputs: list[str]) -> str:
    _want_params(ctx, node, 2, "weight, bias")
    units = _want_attr_int(node, "units")
    return ctx.emit(hir.DENSE, (inputs[0], *ctx.params), {"units": units})


def _convert_conv1d_dw_shared(ctx: ConvertContext, node: OperatorNode, inputs: list[str]) -> str:
    _want_params(ctx, node, 2, "kernel, bias")
    attrs = {
        "kernel_len": _want_attr_int(node, "kernel_len"),
        "stride": _want_attr_int(node, "stride"),
    }
    return ctx.emit(hir.CONV1D_DW_SHARED, (inputs[0], *ctx.params), attrs)


def _convert_gru(ctx: ConvertContext, node: OperatorNode, inputs: list[str]) -> str:
    _want_params(ctx, node, 4, "wx, wh, bx, bh")
    hidden = _want_attr_int(node, "hidden")
    return ctx.emit(hir.GRU, (inputs[0], *ctx.params), {"hidden": hidden})


def _simple(kind: str, arity: int) -> ConverterFn:
    def conv(ctx: ConvertContext, node: OperatorNode, inputs: list[str]) -> str:
        return ctx.emit(kind, tuple(inputs[:arity]))

    conv.__name__ = f"_convert_{kind}"
    return conv


_DEFAULT_ENTRIES: dict[str, ConverterFn] = {
    "identity": _convert_identity,
    "reshape": _convert_reshape,
    "dense": _convert_dense,
    "conv1d_dw_shared": _convert_conv1d_dw_shared,
    "gru": _convert_gru,
    "softmax": _simple(hir.SOFTMAX, 1),
    "relu": _simple(hir.RELU, 1),
    "sigmoid": _simple(hir.SIGMOID, 1),
    "tanh": _simple(hir.TANH, 1),
    "add": _simple(hir.ADD, 2),
    "sub": _simple(hir.SUB, 2),
    "mul": _simple(hir.MUL, 2),
    "last_timestep": _simple(hir.LAST_TIMESTEP, 1),
}


def default_convert_map() -> ConvertMap:
    """The built-in operator table (13 entries)."""
    return ConvertMap(MappingProxyType(dict(_DEFAULT_ENTRIES)))


# ---------------------------------------------------------------------------
# conversion driver
# ---------------------------------------------------------------------------


def _node_order(graph: ModelGraph) -> list[OperatorNode]:
    """Topological order over nodes, ties broken by document order."""
    by_id = {n.id: n for n in graph.nodes}
    pos = {n.id: i for i, n in enumerate(graph.nodes)}
    indeg = {n.id: 0 for n in graph.nodes}
    down: dict[str, list[str]] = {n.id: [] for n in graph.nodes}
    for n in graph.nodes:
        for ref in n.inputs:
            if ref in by_id:
                indeg[n.id] += 1
                down[ref].append(n.id)
    ready = [(pos[i], i) for i, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order: list[OperatorNode] = []
    while ready:
        _, cur = heapq.heappop(ready)
        order.append(by_id[cur])
        for nxt in down[cur]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, (pos[nxt], nxt))
    if len(order) != len(graph.nodes):
        raise ConvertError(f"model '{graph.name}' contains a cycle")
    return order


def convert(graph: ModelGraph, cmap: ConvertMap) -> hir.HirModule:
    """Translate a validated model graph into a shape-inferred HIR module.

    Raises :class:`UnknownOperatorError` when a node's op name has no
    converter, and :class:`ConvertError` when a converter returns a ref
    it did not emit or produces an ill-formed module.
    """
    ops: list[hir.HirOp] = []
    shapes: dict[str, tuple[int, ...]] = {}
    used: set[str] = set()
    used.update(s.name for s in graph.inputs)
    used.update(n.id for n in graph.nodes)
    used.update(graph.params)

    for spec in graph.inputs:
        ops.append(hir.HirOp(spec.name, hir.INPUT, out_type=spec))
        shapes[spec.name] = spec.shape

    materialized: set[str] = set()
    for node in _node_order(graph):
        if node.op_name not in cmap:
            raise UnknownOperatorError(
                f"node '{node.id}' uses op '{node.op_name}' which has no converter; "
                f"extend the map with register_operator()"
            )
        for pname in node.param_refs:
            if pname not in materialized:
                param = graph.params[pname]
                ops.append(
                    hir.HirOp(pname, hir.CONST, out_type=param.spec, data=param.data)
                )
                shapes[pname] = param.spec.shape
                materialized.add(pname)
        ctx = ConvertContext(node, used, shapes)
        ctx.params = tuple(node.param_refs)
        result = cmap[node.op_name](ctx, node, list(node.inputs))
        emitted_ids = {op.id for op in ctx.emitted}
        if result not in emitted_ids:
            raise ConvertError(
                f"converter for op '{node.op_name}' returned '{result}', "
                f"which it did not emit"
            )
        # The node id names the node's result value; rename the returned op.
        renamed: list[hir.HirOp] = []
        for op in ctx.emitted:
            new_inputs = tuple(node.id if r == result else r for r in op.inputs)
            if op.id == result:
                out = None if op.out_type is None else replace(op.out_type, name=node.id)
                op = replace(op, id=node.id, inputs=new_inputs, out_type=out)
            elif new_inputs != op.inputs:
                op = replace(op, inputs=new_inputs)
            renamed.append(op)
        shapes[node.id] = shapes.pop(result)
        ops.extend(renamed)

    module = hir.HirModule(graph.name, tuple(ops), tuple(s.name for s in graph.inputs), graph.outputs)
    problems = hir.validate(module)
    if problems:
        raise ConvertError(
            "conversion produced an invalid module: " + "; ".join(problems)
        )
    return hir.infer_shapes(module)
