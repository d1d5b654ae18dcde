"""Reference interpreter: the numerical ground truth for every backend.

All arithmetic is float32, performed scalar-by-scalar in one canonical
order, because the generated C is expected to match these results to
tight tolerances.  The canonical reduction orders are:

* dense       acc = b[u]; acc += w[u,c] * x[.., c] for c ascending
* conv1d      acc = bias[0]; acc += kern[k] * x[c, j*S + k] for k ascending
* gru gates   acc = bx[u]; acc += wx[u,c] * x[c,t] (c asc); acc += bh[u];
              acc += wh[u,j] * h[j] (j asc) -- and for the candidate gate
              the recurrent half is kept separate and scaled by r first:
              n = tanh(xpart + r * hpart)
* softmax     running max from element 0; exp-and-sum in one pass; divide

The gate order inside a GRU step is r, z, n with the three gate rows
stacked [r | z | n] along the first axis of wx/wh/bx/bh, both biases
applied (one per half), and h initialized to zeros.

Interpretation ignores op targets entirely, so a partitioned module
produces bit-identical results to its unpartitioned twin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import hir
from .errors import MicroforgeError

__all__ = ["InterpError", "TensorValue", "interp_op", "interp"]

F32 = np.float32
_ZERO = F32(0.0)
_ONE = F32(1.0)


class InterpError(MicroforgeError):
    """Bad inputs handed to the interpreter."""


@dataclass(frozen=True)
class TensorValue:
    """A shaped float32 value; ``data`` is flat, row-major."""

    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        flat = np.asarray(self.data, dtype=np.float32).ravel()
        object.__setattr__(self, "data", flat)
        if flat.size != math.prod(self.shape):
            raise InterpError(
                f"value has {flat.size} scalars but shape {list(self.shape)} "
                f"requires {math.prod(self.shape)}"
            )

    @property
    def count(self) -> int:
        return self.data.size


def _sigmoid(x: F32) -> F32:
    return _ONE / (_ONE + np.exp(-x))


def _dense(x: TensorValue, w: TensorValue, b: TensorValue, units: int) -> TensorValue:
    c = x.shape[-1]
    rows = x.count // c
    out = np.empty(rows * units, dtype=np.float32)
    for row in range(rows):
        base = row * c
        for u in range(units):
            acc = b.data[u]
            wrow = u * c
            for i in range(c):
                acc = acc + w.data[wrow + i] * x.data[base + i]
            out[row * units + u] = acc
    return TensorValue(x.shape[:-1] + (units,), out)


def _conv1d_dw_shared(
    x: TensorValue, kern: TensorValue, bias: TensorValue, kernel_len: int, stride: int
) -> TensorValue:
    _, channels, length = x.shape
    out_len = (length - kernel_len) // stride + 1
    out = np.empty(channels * out_len, dtype=np.float32)
    for c in range(channels):
        for j in range(out_len):
            acc = bias.data[0]
            base = c * length + j * stride
            for k in range(kernel_len):
                acc = acc + kern.data[k] * x.data[base + k]
            out[c * out_len + j] = acc
    return TensorValue((1, channels, out_len), out)


def _gru(
    x: TensorValue,
    wx: TensorValue,
    wh: TensorValue,
    bx: TensorValue,
    bh: TensorValue,
    hidden: int,
) -> TensorValue:
    _, channels, steps = x.shape
    h = np.zeros(hidden, dtype=np.float32)
    out = np.empty(hidden * steps, dtype=np.float32)

    def gate_linear(row: int, t: int) -> F32:
        """bx + wx.x + bh + wh.h for one stacked row, canonical order."""
        acc = bx.data[row]
        wxrow = row * channels
        for c in range(channels):
            acc = acc + wx.data[wxrow + c] * x.data[c * steps + t]
        acc = acc + bh.data[row]
        whrow = row * hidden
        for j in range(hidden):
            acc = acc + wh.data[whrow + j] * h[j]
        return acc

    for t in range(steps):
        r = np.empty(hidden, dtype=np.float32)
        z = np.empty(hidden, dtype=np.float32)
        h_new = np.empty(hidden, dtype=np.float32)
        for u in range(hidden):
            r[u] = _sigmoid(gate_linear(u, t))
        for u in range(hidden):
            z[u] = _sigmoid(gate_linear(hidden + u, t))
        for u in range(hidden):
            row = 2 * hidden + u
            xpart = bx.data[row]
            wxrow = row * channels
            for c in range(channels):
                xpart = xpart + wx.data[wxrow + c] * x.data[c * steps + t]
            hpart = bh.data[row]
            whrow = row * hidden
            for j in range(hidden):
                hpart = hpart + wh.data[whrow + j] * h[j]
            n = np.tanh(xpart + r[u] * hpart)
            h_new[u] = (_ONE - z[u]) * n + z[u] * h[u]
        h = h_new
        for u in range(hidden):
            out[u * steps + t] = h[u]
    return TensorValue((1, hidden, steps), out)


def _softmax(x: TensorValue) -> TensorValue:
    n = x.shape[-1]
    rows = x.count // n
    out = np.empty(x.count, dtype=np.float32)
    for row in range(rows):
        base = row * n
        m = x.data[base]
        for i in range(n):
            if x.data[base + i] > m:
                m = x.data[base + i]
        s = _ZERO
        for i in range(n):
            e = np.exp(x.data[base + i] - m)
            out[base + i] = e
            s = s + e
        for i in range(n):
            out[base + i] = out[base + i] / s
    return TensorValue(x.shape, out)


def interp_op(kind: str, attrs: Mapping, inputs: Sequence[TensorValue]) -> TensorValue:
    """Evaluate one op on concrete values (shapes must already be legal)."""
    with np.errstate(over="ignore", under="ignore"):
        if kind == hir.RELU:
            x = inputs[0]
            out = np.array([v if v > _ZERO else _ZERO for v in x.data], dtype=np.float32)
            return TensorValue(x.shape, out)
        if kind == hir.SIGMOID:
            x = inputs[0]
            return TensorValue(x.shape, np.array([_sigmoid(v) for v in x.data], dtype=np.float32))
        if kind == hir.TANH:
            x = inputs[0]
            return TensorValue(x.shape, np.array([np.tanh(v) for v in x.data], dtype=np.float32))
        if kind in hir.BINARY_KINDS:
            a, b = inputs
            if a.shape != b.shape:
                raise InterpError(f"{kind} operands must match, got {a.shape} vs {b.shape}")
            if kind == hir.ADD:
                out = np.array([x + y for x, y in zip(a.data, b.data)], dtype=np.float32)
            elif kind == hir.SUB:
                out = np.array([x - y for x, y in zip(a.data, b.data)], dtype=np.float32)
            else:
                out = np.array([x * y for x, y in zip(a.data, b.data)], dtype=np.float32)
            return TensorValue(a.shape, out)
        if kind == hir.RESHAPE:
            new_shape = tuple(attrs["new_shape"])
            return TensorValue(new_shape, inputs[0].data.copy())
        if kind == hir.LAST_TIMESTEP:
            x = inputs[0]
            _, h, t = x.shape
            out = np.array([x.data[u * t + (t - 1)] for u in range(h)], dtype=np.float32)
            return TensorValue((1, h), out)
        if kind == hir.SOFTMAX:
            return _softmax(inputs[0])
        if kind == hir.DENSE:
            return _dense(inputs[0], inputs[1], inputs[2], int(attrs["units"]))
        if kind == hir.CONV1D_DW_SHARED:
            return _conv1d_dw_shared(
                inputs[0], inputs[1], inputs[2], int(attrs["kernel_len"]), int(attrs["stride"])
            )
        if kind == hir.GRU:
            return _gru(inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], int(attrs["hidden"]))
    raise InterpError(f"cannot interpret op kind '{kind}'")


def interp(
    module: hir.HirModule, inputs: Mapping[str, TensorValue | np.ndarray]
) -> dict[str, TensorValue]:
    """Run a shape-inferred module; returns {output name: value}.

    ``inputs`` must cover exactly the module's input names; plain arrays
    are accepted and converted to float32.
    """
    ops = hir.op_map(module)
    missing = [name for name in module.inputs if name not in inputs]
    if missing:
        raise InterpError(f"missing input values: {', '.join(missing)}")
    extra = sorted(set(inputs) - set(module.inputs))
    if extra:
        raise InterpError(f"unknown input values: {', '.join(extra)}")
    values: dict[str, TensorValue] = {}
    for name in module.inputs:
        spec = ops[name].out_type
        given = inputs[name]
        value = given if isinstance(given, TensorValue) else TensorValue(spec.shape, given)
        if value.count != spec.count:
            raise InterpError(
                f"input '{name}' has {value.count} scalars, expected {spec.count}"
            )
        values[name] = value
    for op in module.ops:
        if op.kind == hir.CONST:
            values[op.id] = TensorValue(op.out_type.shape, op.data)
    for op_id in hir.topo_schedule(module):
        op = ops[op_id]
        values[op_id] = interp_op(op.kind, op.attrs, [values[r] for r in op.inputs])
    return {name: values[name] for name in module.outputs}
