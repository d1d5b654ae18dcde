"""Accelerator descriptions and graph partitioning.

An accelerator is described declaratively: a set of op-chain patterns it
claims, optional graph rewrites applied to each matched region, optional
loop-level rewrites, and a scheme for naming the external C symbols the
generated code will call.  Partitioning walks the schedule greedily and
reassigns matched ops' ``target`` from ``"cpu"`` to the accelerator
name — nothing else about the module changes, so interpretation results
are unaffected by any partition.

Matching order at each op: higher pattern priority first, then
accelerator registration order, then pattern order within a description.
A multi-op pattern must cover a straight single-consumer chain whose
internal values are not module outputs.

The built-in ``mac_engine`` accelerator claims single dense and
depthwise-conv ops; its mock kernels live in the generated project (see
:mod:`microforge.emit`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from . import hir
from .errors import MicroforgeError

__all__ = [
    "PartitionError",
    "RegistrationError",
    "Pattern",
    "AcceleratorDesc",
    "AccelRegistry",
    "Region",
    "PartitionReport",
    "register_accelerator",
    "builtin_registry",
    "mac_engine_desc",
    "BUILTIN_ACCELERATORS",
    "partition",
    "extern_signature",
    "extern_call_dims",
    "param_count",
    "format_report",
    "report_to_json",
]

CPU = "cpu"


class RegistrationError(MicroforgeError):
    """Invalid accelerator description or duplicate registration."""


class PartitionError(MicroforgeError):
    """A graph pass broke a region boundary during partitioning."""


@dataclass(frozen=True)
class Pattern:
    """A chain of op kinds an accelerator claims, matched head-first."""

    name: str
    kinds: tuple[str, ...]
    priority: int = 0


def _default_symbol(accel: str, pattern: str) -> str:
    return f"{accel}_{pattern}"


@dataclass(frozen=True)
class AcceleratorDesc:
    """Everything the compiler needs to know about one accelerator."""

    name: str
    patterns: tuple[Pattern, ...]
    graph_passes: tuple[Callable[[hir.HirModule], hir.HirModule], ...] = ()
    tir_passes: tuple[Callable, ...] = ()
    symbol_for: Callable[[str, str], str] = _default_symbol

    def symbol(self, pattern_name: str) -> str:
        return self.symbol_for(self.name, pattern_name)


@dataclass(frozen=True)
class AccelRegistry:
    descs: tuple[AcceleratorDesc, ...] = ()

    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.descs)

    def get(self, name: str) -> AcceleratorDesc:
        for d in self.descs:
            if d.name == name:
                return d
        raise RegistrationError(f"no accelerator named '{name}' is registered")


def register_accelerator(registry: AccelRegistry, desc: AcceleratorDesc) -> AccelRegistry:
    """Return a new registry with ``desc`` appended."""
    if desc.name == CPU:
        raise RegistrationError("'cpu' is reserved and cannot name an accelerator")
    if desc.name in registry.names():
        raise RegistrationError(f"accelerator '{desc.name}' is already registered")
    # An empty pattern list is legal: the accelerator just never matches
    # anything and partitioning is the identity.
    seen_patterns: set[str] = set()
    for p in desc.patterns:
        if p.name in seen_patterns:
            raise RegistrationError(
                f"accelerator '{desc.name}' declares pattern '{p.name}' twice"
            )
        seen_patterns.add(p.name)
        if not p.kinds:
            raise RegistrationError(
                f"pattern '{desc.name}/{p.name}' has an empty kind chain"
            )
        unknown = [k for k in p.kinds if k not in hir.COMPUTE_KINDS]
        if unknown:
            raise RegistrationError(
                f"pattern '{desc.name}/{p.name}' names non-compute kinds: {', '.join(unknown)}"
            )
    return AccelRegistry(registry.descs + (desc,))


def mac_engine_desc() -> AcceleratorDesc:
    """A dot-product engine that claims standalone dense and conv ops."""
    return AcceleratorDesc(
        name="mac_engine",
        patterns=(
            Pattern("dense", (hir.DENSE,)),
            Pattern("conv1d", (hir.CONV1D_DW_SHARED,)),
        ),
    )


BUILTIN_ACCELERATORS: dict[str, Callable[[], AcceleratorDesc]] = {
    "mac_engine": mac_engine_desc,
}


def builtin_registry(names: Sequence[str]) -> AccelRegistry:
    """Registry holding the named built-in accelerators, in given order."""
    registry = AccelRegistry()
    for name in names:
        if name not in BUILTIN_ACCELERATORS:
            known = ", ".join(sorted(BUILTIN_ACCELERATORS))
            raise RegistrationError(f"unknown accelerator '{name}' (built-ins: {known})")
        registry = register_accelerator(registry, BUILTIN_ACCELERATORS[name]())
    return registry


# ---------------------------------------------------------------------------
# partitioning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """One matched pattern instance: a chain of op ids handed to an accelerator."""

    accel: str
    pattern: str
    op_ids: tuple[str, ...]


@dataclass(frozen=True)
class PartitionReport:
    assignments: dict[str, str]  # compute op id -> target
    counts: dict[str, int]  # target -> op count ('cpu' always present)
    regions: tuple[Region, ...]


def _match_chain(
    module: hir.HirModule,
    ops: dict[str, hir.HirOp],
    uses: dict[str, list[str]],
    head: str,
    pattern: Pattern,
    taken: set[str],
) -> tuple[str, ...] | None:
    chain = [head]
    current = head
    for kind in pattern.kinds[1:]:
        consumer_set = set(uses[current])
        if len(consumer_set) != 1 or current in module.outputs:
            return None
        nxt = next(iter(consumer_set))
        if ops[nxt].kind != kind or nxt in taken or ops[nxt].target != CPU:
            return None
        chain.append(nxt)
        current = nxt
    return tuple(chain)


def partition(
    module: hir.HirModule, registry: AccelRegistry
) -> tuple[hir.HirModule, PartitionReport]:
    """Assign ops to accelerators; returns the retargeted module and a report.

    Pure annotation: the returned module has identical structure, values
    and semantics — only ``target`` fields differ.  Matched regions are
    disjoint by construction.
    """
    ops = hir.op_map(module)
    uses = hir.consumers(module)
    candidates: list[tuple[int, int, int, AcceleratorDesc, Pattern]] = []
    for di, desc in enumerate(registry.descs):
        for pi, pat in enumerate(desc.patterns):
            candidates.append((-pat.priority, di, pi, desc, pat))
    candidates.sort(key=lambda c: c[:3])

    taken: set[str] = set()
    regions: list[Region] = []
    for op_id in hir.topo_schedule(module):
        if op_id in taken or ops[op_id].target != CPU:
            continue
        for _, _, _, desc, pat in candidates:
            if ops[op_id].kind != pat.kinds[0]:
                continue
            chain = _match_chain(module, ops, uses, op_id, pat, taken)
            if chain is None:
                continue
            taken.update(chain)
            regions.append(Region(desc.name, pat.name, chain))
            break

    target_of = {op_id: region.accel for region in regions for op_id in region.op_ids}
    new_ops = tuple(
        replace(op, target=target_of[op.id]) if op.id in target_of else op
        for op in module.ops
    )
    new_module = replace(module, ops=new_ops)

    if regions:
        new_module, regions = _apply_graph_passes(new_module, regions, registry)

    assignments = {
        op.id: op.target
        for op in new_module.ops
        if op.kind in hir.COMPUTE_KINDS
    }
    counts = {CPU: sum(1 for t in assignments.values() if t == CPU)}
    for name in registry.names():
        counts[name] = sum(1 for t in assignments.values() if t == name)
    return new_module, PartitionReport(assignments, counts, tuple(regions))


def _region_boundary(
    module: hir.HirModule, region: Region
) -> tuple[list[str], list[str], str]:
    """(external data inputs, param consts, output ref) of a region."""
    ops = hir.op_map(module)
    inside = set(region.op_ids)
    data: list[str] = []
    consts: list[str] = []
    for op_id in region.op_ids:
        for ref in ops[op_id].inputs:
            if ref in inside:
                continue
            if ops[ref].kind == hir.CONST:
                if ref not in consts:
                    consts.append(ref)
            elif ref not in data:
                data.append(ref)
    return data, consts, region.op_ids[-1]


def _apply_graph_passes(
    module: hir.HirModule, regions: list[Region], registry: AccelRegistry
) -> tuple[hir.HirModule, list[Region]]:
    """Run each owning accelerator's graph passes over its matched regions."""
    out_regions: list[Region] = []
    for region in regions:
        desc = registry.get(region.accel)
        if not desc.graph_passes:
            out_regions.append(region)
            continue
        ops = hir.op_map(module)
        data, consts, out_ref = _region_boundary(module, region)
        sub_ops: list[hir.HirOp] = []
        for ref in data:
            sub_ops.append(hir.HirOp(ref, hir.INPUT, out_type=ops[ref].out_type))
        for ref in consts:
            sub_ops.append(ops[ref])
        sub_ops.extend(ops[i] for i in region.op_ids)
        sub = hir.HirModule(
            f"{module.name}.{region.pattern}", tuple(sub_ops), tuple(data), (out_ref,)
        )
        for gp in desc.graph_passes:
            sub = gp(sub)
        problems = hir.validate(sub)
        if problems:
            raise PartitionError(
                f"graph pass on region {region.accel}/{region.pattern} produced an "
                f"invalid module: " + "; ".join(problems)
            )
        if tuple(sub.outputs) != (out_ref,) or set(sub.inputs) != set(data):
            raise PartitionError(
                f"graph pass on region {region.accel}/{region.pattern} changed the "
                f"region boundary"
            )
        sub = hir.infer_shapes(sub)
        if hir.op_map(sub)[out_ref].out_type.shape != ops[out_ref].out_type.shape:
            raise PartitionError(
                f"graph pass on region {region.accel}/{region.pattern} changed the "
                f"output shape"
            )
        module, new_ids = _splice(module, region, sub, data)
        out_regions.append(Region(region.accel, region.pattern, new_ids))
    return module, out_regions


def _splice(
    module: hir.HirModule, region: Region, sub: hir.HirModule, data: list[str]
) -> tuple[hir.HirModule, tuple[str, ...]]:
    ops = hir.op_map(module)
    keep_outside = set(data) | {
        op.id for op in sub.ops if op.kind == hir.CONST and op.id in ops
    }
    incoming = [
        replace(op, target=region.accel) if op.kind in hir.COMPUTE_KINDS else op
        for op in sub.ops
        if op.id not in keep_outside
    ]
    clash = [op.id for op in incoming if op.id in ops and op.id not in region.op_ids]
    if clash:
        raise PartitionError(
            f"graph pass on region {region.accel}/{region.pattern} introduced ids "
            f"that already exist: {', '.join(sorted(clash))}"
        )
    first = min(i for i, op in enumerate(module.ops) if op.id in region.op_ids)
    remaining = [op for op in module.ops if op.id not in region.op_ids]
    new_ops = tuple(remaining[:first]) + tuple(incoming) + tuple(remaining[first:])
    new_module = hir.infer_shapes(replace(module, ops=new_ops))
    new_ids = tuple(op.id for op in incoming if op.kind in hir.COMPUTE_KINDS)
    return new_module, new_ids


# ---------------------------------------------------------------------------
# extern call ABI
# ---------------------------------------------------------------------------

_PARAM_COUNT = {
    hir.DENSE: 2,
    hir.CONV1D_DW_SHARED: 2,
    hir.GRU: 4,
}


def param_count(kind: str) -> int:
    """Number of parameter tensors an op kind consumes."""
    return _PARAM_COUNT.get(kind, 0)


def extern_signature(desc: AcceleratorDesc, pattern: Pattern) -> str:
    """C declaration core for a pattern's external kernel, without ';'.

    The fixed ABI is ``int32_t sym(const float* in, <const float* per
    param tensor>, float* out, const int32_t* dims)`` and the returned
    text uses anonymous parameters, e.g.::

        int32_t mac_engine_dense(const float*, const float*, const float*, float*, const int32_t*)
    """
    n_params = sum(param_count(k) for k in pattern.kinds)
    args = ["const float*"] * (1 + n_params) + ["float*", "const int32_t*"]
    return f"int32_t {desc.symbol(pattern.name)}({', '.join(args)})"


def extern_call_dims(op: hir.HirOp, in_specs: Sequence) -> tuple[int, ...]:
    """Shape/attr scalars passed through the ``dims`` vector for one op.

    Multi-op regions concatenate their ops' dims in chain order.
    """
    x = in_specs[0].shape
    if op.kind == hir.DENSE:
        return (x[-1], int(op.attrs["units"]))
    if op.kind == hir.CONV1D_DW_SHARED:
        k, s = int(op.attrs["kernel_len"]), int(op.attrs["stride"])
        return (x[1], x[2], k, s, (x[2] - k) // s + 1)
    if op.kind == hir.GRU:
        return (x[1], x[2], int(op.attrs["hidden"]))
    if op.kind == hir.LAST_TIMESTEP:
        return (x[1], x[2])
    return (op.out_type.count,)


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------


def format_report(module_name: str, report: PartitionReport) -> str:
    parts = [f"{t}: {report.counts[t]}" for t in report.counts]
    lines = [f"partition of {module_name}: " + ", ".join(parts)]
    for region in report.regions:
        lines.append(
            f"  region {region.accel}/{region.pattern}: {', '.join(region.op_ids)}"
        )
    return "\n".join(lines) + "\n"


def report_to_json(report: PartitionReport) -> dict:
    return {
        "assignments": dict(sorted(report.assignments.items())),
        "counts": dict(report.counts),
        "regions": [
            {"accel": r.accel, "pattern": r.pattern, "ops": list(r.op_ids)}
            for r in report.regions
        ],
    }
