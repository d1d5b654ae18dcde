"""Report rendering: arena/partition figures and a schedule CSV.

Everything here is presentation only — the data comes straight from the
partition report, the lowered step sequence and the memory plan.  Kept
out of the compile path so the toolchain core never needs matplotlib.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import accel as accel_mod
from . import emit, hir, planner, tir

__all__ = ["write_report_outputs"]

_PNG_META = {"Software": "microforge"}


def _arena_figure(
    module: hir.HirModule, lowered: tir.Lowered, plan: planner.MemoryPlan, path: Path
) -> None:
    live = emit.collapsed_liveness(module, lowered)
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    placed = sorted(plan.offsets.items(), key=lambda kv: kv[1])
    for name, offset in placed:
        first, last = live[name]
        size = plan.sizes[name]
        ax.broken_barh(
            [(first, (last - first) + 1)],
            (offset, size),
            facecolors="tab:blue",
            edgecolor="black",
            alpha=0.55,
        )
        ax.annotate(
            name,
            ((first + last + 1) / 2.0, offset + size / 2.0),
            ha="center",
            va="center",
            fontsize=8,
        )
    if not placed:
        ax.text(0.5, 0.5, "no arena buffers", ha="center", va="center",
                transform=ax.transAxes)
    ax.set_xlabel("schedule step")
    ax.set_ylabel("arena offset (bytes)")
    ax.set_title(f"{module.name}: arena {plan.arena_bytes} bytes")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def _partition_figure(
    module: hir.HirModule, report: accel_mod.PartitionReport, path: Path
) -> None:
    counts = dict(report.counts)
    labels = sorted(counts, key=lambda t: (t != accel_mod.CPU, t))
    values = [counts[t] for t in labels]
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    bars = ax.bar(labels, values, color=["tab:gray" if t == accel_mod.CPU else "tab:orange"
                                         for t in labels])
    ax.bar_label(bars)
    ax.set_ylabel("ops")
    ax.set_title(f"{module.name}: op placement")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def _schedule_rows(
    module: hir.HirModule, lowered: tir.Lowered, plan: planner.MemoryPlan
):
    ops = hir.op_map(module)
    for i, step in enumerate(lowered.steps):
        if isinstance(step, tir.FuncStep):
            out = step.args[-1]
            op_col = step.func.source_op
            kind = ops[op_col].kind if op_col in ops else "?"
            target = accel_mod.CPU
        else:
            out = step.output
            op_col = "+".join(step.op_ids)
            kind = "extern"
            target = step.accel
        size = plan.sizes.get(out, 4 * ops[out].out_type.count)
        offset = plan.offsets.get(out, "")
        yield [i, op_col, kind, target, out, offset, size]


def write_report_outputs(
    out_dir: str | Path,
    module: hir.HirModule,
    lowered: tir.Lowered,
    plan: planner.MemoryPlan,
    report: accel_mod.PartitionReport,
) -> list[Path]:
    """Write arena.png, partition.png and schedule.csv under ``out_dir``.

    Returns the written paths in that order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arena_png = out_dir / "arena.png"
    partition_png = out_dir / "partition.png"
    schedule_csv = out_dir / "schedule.csv"

    _arena_figure(module, lowered, plan, arena_png)
    _partition_figure(module, report, partition_png)

    with schedule_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "op", "kind", "target", "output", "offset_bytes", "size_bytes"]
        )
        writer.writerows(_schedule_rows(module, lowered, plan))

    return [arena_png, partition_png, schedule_csv]
