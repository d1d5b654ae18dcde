"""Command-line entry points.

Subcommands:

* ``compile``   model JSON -> C project tree (the main path)
* ``run-ref``   evaluate the reference interpreter, compare or record outputs
* ``verify``    build an emitted tree with make.sh and run the binary
* ``zoo``       export bundled demo models and synthetic inputs

All failures raised by the toolchain surface as one ``error: <stage message>``
line on stderr and exit code 1; the verify binary's own exit code is
relayed as-is (0 ok, 1 mismatch, 2 I/O layout problem).
"""

from __future__ import annotations

import argparse
import os
import shutil
import subprocess
import sys
from pathlib import Path
from typing import Mapping

import numpy as np

from . import accel as accel_mod
from . import emit, frontend, hir, tir, zoo
from .errors import MicroforgeError
from .interp import interp as run_interp
from .model_format import ModelGraph, load_io_manifest, parse_model

__all__ = ["main", "build_parser", "write_tree"]


# ---------------------------------------------------------------------------
# shared pipeline plumbing
# ---------------------------------------------------------------------------


def _load_model(path: str) -> ModelGraph:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MicroforgeError(f"cannot read model '{path}': {exc}") from None
    return parse_model(text)


def _compile(graph: ModelGraph, accel_names: list[str]):
    """Front half of the pipeline: graph -> (module, report, lowered, plan, registry)."""
    module = frontend.convert(graph, frontend.default_convert_map())
    registry = accel_mod.builtin_registry(accel_names)
    module, report = accel_mod.partition(module, registry)
    lowered = tir.lower_module(module, report, registry)
    plan = emit.arena_plan(module, lowered)
    return module, report, lowered, plan, registry


def write_tree(out_dir: str | Path, files: Mapping[str, str]) -> list[Path]:
    """Write an emitted file map under ``out_dir``; make.sh becomes executable."""
    out_dir = Path(out_dir)
    written = []
    for rel in sorted(files):
        path = out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(files[rel])
        if rel == "make.sh":
            path.chmod(0o755)
        written.append(path)
    return written


def _placement_line(report: accel_mod.PartitionReport) -> str:
    order = sorted(report.counts, key=lambda t: (t != accel_mod.CPU, t))
    return ", ".join(f"{t}: {report.counts[t]}" for t in order)


# ---------------------------------------------------------------------------
# compile
# ---------------------------------------------------------------------------


def _cmd_compile(args: argparse.Namespace) -> int:
    graph = _load_model(args.model)
    manifest = load_io_manifest(args.io) if args.io else None
    module, report, lowered, plan, registry = _compile(graph, args.accel)
    tree = emit.emit_tree(
        module,
        lowered,
        plan,
        report,
        manifest=manifest,
        target=args.target,
        io_tol=args.tol,
        registry=registry,
    )
    out_dir = Path(args.out)
    write_tree(out_dir, tree.files)

    if args.dump_tir:
        for step in lowered.steps:
            if isinstance(step, tir.FuncStep):
                print(tir.format_func(step.func))
            else:
                ops = ", ".join(step.op_ids)
                print(f"extern {step.symbol} dims={list(step.dims)} <- [{ops}]")
            print()

    print(f"model: {module.name}")
    print(f"placement: {_placement_line(report)}")
    print(f"arena: {plan.arena_bytes} bytes")
    print(f"output: {out_dir} ({len(tree.files)} files)")

    if args.report:
        from . import report as report_mod  # matplotlib import deferred to here

        print()
        print(accel_mod.format_report(module.name, report))
        for path in report_mod.write_report_outputs(out_dir, module, lowered, plan, report):
            print(f"report: {path}")
    return 0


# ---------------------------------------------------------------------------
# run-ref
# ---------------------------------------------------------------------------


def _cmd_run_ref(args: argparse.Namespace) -> int:
    graph = _load_model(args.model)
    manifest = load_io_manifest(args.io)
    module = frontend.convert(graph, frontend.default_convert_map())
    inputs = {t.name: t.data for t in manifest.inputs}
    outputs = run_interp(module, inputs)

    if args.write_expected:
        out_dir = Path(args.write_expected)
        out_dir.mkdir(parents=True, exist_ok=True)
        doc = {"inputs": [], "expected_outputs": []}
        for t in manifest.inputs:
            fname = f"input_{t.name}.bin"
            (out_dir / fname).write_bytes(t.data.astype("<f4").tobytes())
            doc["inputs"].append({"name": t.name, "shape": list(t.shape), "file": fname})
        ops = hir.op_map(module)
        for name in module.outputs:
            fname = f"expected_{name}.bin"
            value = outputs[name]
            (out_dir / fname).write_bytes(value.data.astype("<f4").tobytes())
            doc["expected_outputs"].append(
                {"name": name, "shape": list(ops[name].out_type.shape), "file": fname}
            )
        import json

        manifest_path = out_dir / "manifest.json"
        manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
        print(f"wrote {manifest_path}")

    if manifest.has_expected:
        fail = False
        for t in manifest.expected_outputs:
            got = outputs[t.name].data
            if got.size != t.data.size:
                raise MicroforgeError(
                    f"expected output '{t.name}' has {t.data.size} values, "
                    f"model produced {got.size}"
                )
            err = float(np.max(np.abs(got - t.data))) if got.size else 0.0
            ok = err <= args.tol
            fail |= not ok
            print(f"{t.name}: max abs err {err:g} (tol {args.tol:g}): "
                  f"{'OK' if ok else 'FAIL'}")
        return 1 if fail else 0

    if not args.write_expected:
        for name in module.outputs:
            data = outputs[name].data
            for i, v in enumerate(data):
                print(f"{name}[{i}] = {float(v):g}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _tail(text: str, n: int = 30) -> str:
    lines = text.strip().splitlines()
    return "\n".join(lines[-n:])


def _cmd_verify(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    script = out_dir / "make.sh"
    if not script.is_file():
        raise MicroforgeError(f"no make.sh under '{out_dir}' — run compile first")

    env = dict(os.environ)
    if args.cc:
        env["CC"] = args.cc
    cc = env.get("CC", "cc")
    if shutil.which(cc) is None:
        print(f"error: C compiler '{cc}' not found on PATH", file=sys.stderr)
        return 1
    if shutil.which("make") is None:
        print("error: 'make' not found on PATH", file=sys.stderr)
        return 1

    build = subprocess.run(
        ["sh", "make.sh"], cwd=out_dir, env=env, capture_output=True, text=True
    )
    if build.returncode != 0:
        print("error: build failed:", file=sys.stderr)
        print(_tail(build.stdout + "\n" + build.stderr), file=sys.stderr)
        return 1

    binary = out_dir / "run_model"
    if not binary.is_file():
        raise MicroforgeError(f"build finished but '{binary}' is missing")
    run = subprocess.run(
        [str(binary.resolve())], cwd=out_dir, capture_output=True, text=True
    )
    sys.stdout.write(run.stdout)
    sys.stderr.write(run.stderr)
    print(f"run_model exit code: {run.returncode}")
    return run.returncode


# ---------------------------------------------------------------------------
# zoo
# ---------------------------------------------------------------------------


def _cmd_zoo_export_gesture(args: argparse.Namespace) -> int:
    cfg = zoo.GestureModelConfig(window_len=args.window)
    graph = zoo.export_gesture_model(args.out, cfg, seed=args.seed)
    print(f"wrote {args.out} ({graph.param_scalar_count()} parameters)")
    if args.io_dir:
        manifest = zoo.export_gesture_io(args.io_dir, cfg, seed=args.io_seed)
        print(f"wrote {manifest}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="microforge",
        description="Compile small ML models to standalone C99 libraries.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="emit a C project tree for a model")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--io", help="I/O manifest JSON; bakes inputs into io.h")
    p.add_argument("--accel", action="append", default=[], metavar="NAME",
                   help="enable a built-in accelerator (repeatable)")
    p.add_argument("--target", default="host", help="target profile (default: host)")
    p.add_argument("--tol", type=float, default=1e-5,
                   help="comparison tolerance baked into main.c (default: 1e-5)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--report", action="store_true",
                   help="print the partition report and write figures + schedule.csv")
    p.add_argument("--dump-tir", action="store_true",
                   help="print lowered loop nests before the summary")
    p.set_defaults(fn=_cmd_compile)

    p = sub.add_parser("run-ref", help="run the reference interpreter on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--io", required=True, help="I/O manifest JSON")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--write-expected", metavar="DIR",
                   help="write a manifest with recorded expected outputs to DIR")
    p.set_defaults(fn=_cmd_run_ref)

    p = sub.add_parser("verify", help="build an emitted tree and run its checker")
    p.add_argument("--out", required=True, help="directory produced by compile")
    p.add_argument("--cc", help="C compiler to use (overrides $CC)")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("zoo", help="bundled demo models")
    zsub = p.add_subparsers(dest="zoo_command", required=True)
    pz = zsub.add_parser("export-gesture", help="write the gesture demo model")
    pz.add_argument("--out", required=True, help="model JSON path to write")
    pz.add_argument("--seed", type=int, default=0, help="weight seed (default: 0)")
    pz.add_argument("--window", type=int, default=128,
                    help="input window length (default: 128)")
    pz.add_argument("--io-dir", help="also write a synthetic input + manifest here")
    pz.add_argument("--io-seed", type=int, default=1,
                    help="seed for the synthetic input (default: 1)")
    pz.set_defaults(fn=_cmd_zoo_export_gesture)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MicroforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
