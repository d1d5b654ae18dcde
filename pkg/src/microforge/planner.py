"""Static memory planner: liveness intervals plus first-fit arena packing.

Every intermediate value (and graph I/O) of a scheduled module gets an
inclusive live interval in schedule steps; the planner then packs all
planned buffers into one byte arena so that buffers whose intervals
intersect never share addresses.  Placement is first-fit with buffers
visited largest-first (ties by name), candidate offsets aligned to the
arena alignment (8 bytes), so results are deterministic.

Intervals are inclusive on both ends and a def at step *i* conflicts
with a value whose last use is step *i* — an op's output never aliases
its inputs, matching the generated C where kernels read and write
distinct pointers.

Parameters are excluded: they live in ROM (`params.c`), not the arena.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from . import hir
from .errors import MicroforgeError

__all__ = ["PlannerError", "MemoryPlan", "liveness", "intervals_from_steps", "plan", "align_up"]


class PlannerError(MicroforgeError):
    """Inconsistent schedule, sizes or liveness handed to the planner."""


@dataclass(frozen=True)
class MemoryPlan:
    """Packed arena: byte offsets per buffer name."""

    arena_bytes: int
    offsets: dict[str, int]
    sizes: dict[str, int]
    alignment: int = 8


def align_up(value: int, alignment: int) -> int:
    return (value + alignment - 1) // alignment * alignment


def intervals_from_steps(
    events: Sequence[tuple[Sequence[str], Sequence[str]]],
    pinned_from_start: Sequence[str] = (),
    pinned_to_end: Sequence[str] = (),
) -> dict[str, tuple[int, int]]:
    """Inclusive live intervals from a (uses, defs) event list.

    ``pinned_from_start`` names are live from step 0 (graph inputs: the
    caller's data must survive until its last read but exists from entry);
    ``pinned_to_end`` names stay live through the final step (graph
    outputs).  Unreferenced pinned names get the degenerate interval at
    their pin point.
    """
    final = max(len(events) - 1, 0)
    first: dict[str, int] = {name: 0 for name in pinned_from_start}
    last: dict[str, int] = {name: 0 for name in pinned_from_start}
    for step, (uses, defs) in enumerate(events):
        for ref in uses:
            if ref not in first:
                raise PlannerError(f"step {step} reads '{ref}' before any step defines it")
            last[ref] = max(last[ref], step)
        for ref in defs:
            if ref in first:
                raise PlannerError(f"'{ref}' is defined more than once")
            first[ref] = step
            last[ref] = max(last.get(ref, step), step)
    for ref in pinned_to_end:
        if ref not in first:
            raise PlannerError(f"pinned output '{ref}' is never defined")
        last[ref] = final
    return {name: (first[name], last[name]) for name in first}


def liveness(schedule: Sequence[str], module: hir.HirModule) -> dict[str, tuple[int, int]]:
    """Live intervals over a module's compute schedule.

    Planned names are the graph inputs and every scheduled op's output;
    consts are ignored.  Graph outputs are extended to the final step.
    """
    ops = hir.op_map(module)
    planned = set(module.inputs) | set(schedule)
    events = []
    for op_id in schedule:
        op = ops.get(op_id)
        if op is None:
            raise PlannerError(f"schedule names unknown op '{op_id}'")
        uses = [ref for ref in op.inputs if ref in planned]
        events.append((uses, [op_id]))
    return intervals_from_steps(events, module.inputs, module.outputs)


def _overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def plan(
    live: Mapping[str, tuple[int, int]],
    sizes: Mapping[str, int],
    alignment: int = 8,
) -> MemoryPlan:
    """Pack buffers into one arena; see the module docstring for policy.

    ``sizes`` lists the buffers to place (bytes); each needs an interval
    in ``live``.  Returns offsets plus the total arena size (aligned up).
    """
    for name in sizes:
        if name not in live:
            raise PlannerError(f"buffer '{name}' has no liveness interval")
        if sizes[name] <= 0:
            raise PlannerError(f"buffer '{name}' has non-positive size {sizes[name]}")
    order = sorted(sizes, key=lambda n: (-sizes[n], n))
    offsets: dict[str, int] = {}
    for name in order:
        conflicts = sorted(
            (offsets[other], offsets[other] + sizes[other])
            for other in offsets
            if _overlap(live[name], live[other])
        )
        candidate = 0
        for lo, hi in conflicts:
            if candidate + sizes[name] <= lo:
                break
            candidate = max(candidate, align_up(hi, alignment))
        offsets[name] = candidate
    top = max((offsets[n] + sizes[n] for n in offsets), default=0)
    return MemoryPlan(align_up(top, alignment), offsets, dict(sizes), alignment)
