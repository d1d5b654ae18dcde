"""Model interchange format: parsing, validation and serialization.

A model document is JSON with five top-level keys::

    {
      "name": "gesture",
      "inputs":  [{"name": "x", "shape": [1, 6, 128]}],
      "outputs": ["softmax"],
      "nodes":   [{"id": "conv1", "op": "conv1d_dw_shared",
                   "inputs": ["x"], "attrs": {"kernel_len": 7, "stride": 2},
                   "params": ["conv1_w", "conv1_b"]}],
      "params":  {"conv1_w": {"shape": [7], "data_b64": "<base64>"}}
    }

Parameter payloads are little-endian binary32, base64 encoded.  Input
names, node ids and parameter names share one namespace: every value in
the graph is addressed by exactly one of these names.

I/O manifests (used to drive the reference interpreter and the generated
verification binary) are JSON documents of the form::

    {
      "inputs":           [{"name": "x", "shape": [1, 6, 128], "file": "input_x.bin"}],
      "expected_outputs": [{"name": "softmax", "shape": [1, 21], "file": "expected_softmax.bin"}]
    }

where ``file`` is resolved relative to the manifest and holds raw
little-endian binary32 data.  ``expected_outputs`` is optional.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MicroforgeError

__all__ = [
    "ModelSyntaxError",
    "ModelSemanticError",
    "ManifestError",
    "TensorSpec",
    "OperatorNode",
    "ParamTensor",
    "ModelGraph",
    "IoTensor",
    "IoManifest",
    "parse_model",
    "serialize_model",
    "parse_io_manifest",
    "load_io_manifest",
]


class ModelSyntaxError(MicroforgeError):
    """The document is not valid JSON or a required field is missing/mistyped."""


class ModelSemanticError(MicroforgeError):
    """The document is well-formed but violates a graph invariant."""


class ManifestError(MicroforgeError):
    """An I/O manifest is malformed or a referenced binary does not match."""


@dataclass(frozen=True)
class TensorSpec:
    """Shape and dtype of one value.  Only float32 exists in this format."""

    name: str
    shape: tuple[int, ...]
    dtype: str = "f32"

    @property
    def count(self) -> int:
        return math.prod(self.shape)

    @property
    def size_bytes(self) -> int:
        return 4 * self.count


@dataclass(frozen=True)
class OperatorNode:
    id: str
    op_name: str
    inputs: tuple[str, ...]
    attrs: dict = field(default_factory=dict)
    param_refs: tuple[str, ...] = ()


@dataclass(frozen=True)
class ParamTensor:
    spec: TensorSpec
    data: np.ndarray  # flat float32, len == spec.count


@dataclass(frozen=True)
class ModelGraph:
    name: str
    inputs: tuple[TensorSpec, ...]
    outputs: tuple[str, ...]
    nodes: tuple[OperatorNode, ...]
    params: dict[str, ParamTensor]

    def param_scalar_count(self) -> int:
        """Total number of trained scalars across all parameter tensors."""
        return sum(p.spec.count for p in self.params.values())


@dataclass(frozen=True)
class IoTensor:
    name: str
    shape: tuple[int, ...]
    path: Path
    data: np.ndarray  # flat float32, loaded and length-checked at parse time


@dataclass(frozen=True)
class IoManifest:
    inputs: tuple[IoTensor, ...]
    expected_outputs: tuple[IoTensor, ...] = ()

    @property
    def has_expected(self) -> bool:
        return bool(self.expected_outputs)


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------


def _require(mapping: dict, key: str, kind: type, where: str):
    if not isinstance(mapping, dict):
        raise ModelSyntaxError(f"{where}: expected an object")
    if key not in mapping:
        raise ModelSyntaxError(f"{where}: missing required field '{key}'")
    value = mapping[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ModelSyntaxError(f"{where}.{key}: expected a number")
        return value
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ModelSyntaxError(f"{where}.{key}: expected {kind.__name__}")
    return value


def _parse_shape(raw, where: str) -> tuple[int, ...]:
    if not isinstance(raw, list) or not raw:
        raise ModelSyntaxError(f"{where}: shape must be a non-empty list of ints")
    for d in raw:
        if not isinstance(d, int) or isinstance(d, bool) or d <= 0:
            raise ModelSemanticError(f"{where}: shape dims must be positive ints, got {raw}")
    return tuple(raw)


def _parse_name_list(raw, where: str) -> tuple[str, ...]:
    if not isinstance(raw, list):
        raise ModelSyntaxError(f"{where}: expected a list of names")
    for item in raw:
        if not isinstance(item, str) or not item:
            raise ModelSyntaxError(f"{where}: names must be non-empty strings")
    return tuple(raw)


def _check_attrs(raw, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ModelSyntaxError(f"{where}: attrs must be an object")
    for key, value in raw.items():
        ok = isinstance(value, (int, float, str)) and not isinstance(value, bool)
        if isinstance(value, list):
            ok = all(isinstance(v, int) and not isinstance(v, bool) for v in value)
        if not ok:
            raise ModelSyntaxError(f"{where}.{key}: attr values must be int, float, str or int list")
    return dict(raw)


def _decode_param(name: str, raw) -> ParamTensor:
    shape = _parse_shape(_require(raw, "shape", list, f"params.{name}"), f"params.{name}")
    encoded = _require(raw, "data_b64", str, f"params.{name}")
    try:
        payload = base64.b64decode(encoded, validate=True)
    except Exception as exc:
        raise ModelSyntaxError(f"params.{name}: data is not valid base64: {exc}") from None
    spec = TensorSpec(name, shape)
    if len(payload) != spec.size_bytes:
        raise ModelSemanticError(
            f"params.{name}: payload holds {len(payload)} bytes, "
            f"shape {list(shape)} requires {spec.size_bytes}"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    return ParamTensor(spec, data)


def _check_acyclic(nodes: tuple[OperatorNode, ...], producers: dict[str, str]) -> None:
    """Kahn's algorithm over node->node edges; leftovers mean a cycle."""
    by_id = {n.id: n for n in nodes}
    indeg = {n.id: 0 for n in nodes}
    consumers: dict[str, list[str]] = {n.id: [] for n in nodes}
    for n in nodes:
        for ref in n.inputs:
            src = producers.get(ref)
            if src in by_id:
                indeg[n.id] += 1
                consumers[src].append(n.id)
    ready = [i for i, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        cur = ready.pop()
        seen += 1
        for nxt in consumers[cur]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if seen != len(nodes):
        stuck = sorted(i for i, d in indeg.items() if d > 0)
        raise ModelSemanticError(f"graph contains a cycle through nodes: {', '.join(stuck)}")


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def parse_model(text: str | bytes) -> ModelGraph:
    """Parse and fully validate a model document.

    Raises :class:`ModelSyntaxError` for malformed documents and
    :class:`ModelSemanticError` for namespace, reference, payload or
    cycle violations.  A returned graph always satisfies every format
    invariant.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelSyntaxError(f"document is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelSyntaxError("top level must be an object")

    name = _require(doc, "name", str, "document")
    if not name:
        raise ModelSemanticError("document.name must be non-empty")

    raw_inputs = _require(doc, "inputs", list, "document")
    if not raw_inputs:
        raise ModelSemanticError("document.inputs must declare at least one input")
    inputs = tuple(
        TensorSpec(
            _require(entry, "name", str, f"inputs[{i}]"),
            _parse_shape(_require(entry, "shape", list, f"inputs[{i}]"), f"inputs[{i}]"),
        )
        for i, entry in enumerate(raw_inputs)
    )

    outputs = _parse_name_list(_require(doc, "outputs", list, "document"), "document.outputs")
    if not outputs:
        raise ModelSemanticError("document.outputs must name at least one value")

    raw_nodes = _require(doc, "nodes", list, "document")
    nodes = []
    for i, entry in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        nodes.append(
            OperatorNode(
                id=_require(entry, "id", str, where),
                op_name=_require(entry, "op", str, where),
                inputs=_parse_name_list(entry.get("inputs", []), f"{where}.inputs"),
                attrs=_check_attrs(entry.get("attrs", {}), f"{where}.attrs"),
                param_refs=_parse_name_list(entry.get("params", []), f"{where}.params"),
            )
        )
    nodes = tuple(nodes)

    raw_params = _require(doc, "params", dict, "document") if "params" in doc else {}
    params = {pname: _decode_param(pname, raw) for pname, raw in raw_params.items()}

    # One namespace: input names, node ids and parameter names must be unique.
    seen: dict[str, str] = {}
    for spec in inputs:
        _claim(seen, spec.name, "input")
    for node in nodes:
        _claim(seen, node.id, "node")
    for pname in params:
        _claim(seen, pname, "param")

    producers = {spec.name: spec.name for spec in inputs}
    producers.update({node.id: node.id for node in nodes})

    for node in nodes:
        for ref in node.inputs:
            if ref not in producers:
                raise ModelSemanticError(f"node '{node.id}' reads undefined value '{ref}'")
        for ref in node.param_refs:
            if ref not in params:
                raise ModelSemanticError(f"node '{node.id}' references unknown param '{ref}'")
    for ref in outputs:
        if ref not in producers:
            raise ModelSemanticError(f"output '{ref}' is not produced by any node or input")
    dup_out = sorted({r for r in outputs if outputs.count(r) > 1})
    if dup_out:
        raise ModelSemanticError(f"outputs listed more than once: {', '.join(dup_out)}")

    used_params = {ref for node in nodes for ref in node.param_refs}
    unused = sorted(set(params) - used_params)
    if unused:
        raise ModelSemanticError(f"params never referenced by any node: {', '.join(unused)}")

    _check_acyclic(nodes, producers)
    return ModelGraph(name, inputs, outputs, nodes, params)


def _claim(seen: dict[str, str], name: str, role: str) -> None:
    if name in seen:
        raise ModelSemanticError(f"name '{name}' declared as both {seen[name]} and {role}")
    seen[name] = role


def serialize_model(graph: ModelGraph) -> str:
    """Render a graph back to its JSON document form (round-trips parse_model)."""
    doc = {
        "name": graph.name,
        "inputs": [{"name": s.name, "shape": list(s.shape)} for s in graph.inputs],
        "outputs": list(graph.outputs),
        "nodes": [
            {
                "id": n.id,
                "op": n.op_name,
                "inputs": list(n.inputs),
                "attrs": n.attrs,
                "params": list(n.param_refs),
            }
            for n in graph.nodes
        ],
        "params": {
            name: {
                "shape": list(p.spec.shape),
                "data_b64": base64.b64encode(p.data.astype("<f4").tobytes()).decode("ascii"),
            }
            for name, p in graph.params.items()
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def _load_io_tensor(entry, where: str, base_dir: Path) -> IoTensor:
    name = _require(entry, "name", str, where)
    shape = _parse_shape(_require(entry, "shape", list, where), where)
    rel = _require(entry, "file", str, where)
    path = (base_dir / rel).resolve()
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise ManifestError(f"{where}: cannot read '{rel}': {exc}") from None
    expected = 4 * math.prod(shape)
    if len(payload) != expected:
        raise ManifestError(
            f"{where}: '{rel}' holds {len(payload)} bytes, shape {list(shape)} requires {expected}"
        )
    return IoTensor(name, shape, path, np.frombuffer(payload, dtype="<f4").astype(np.float32))


def parse_io_manifest(text: str | bytes, base_dir: Path) -> IoManifest:
    """Parse an I/O manifest, loading and length-checking every binary.

    ``base_dir`` anchors the relative ``file`` entries (normally the
    directory containing the manifest itself).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("inputs"), list):
        raise ManifestError("manifest must be an object with an 'inputs' list")
    if not doc["inputs"]:
        raise ManifestError("manifest must declare at least one input")
    inputs = tuple(
        _load_io_tensor(e, f"inputs[{i}]", base_dir) for i, e in enumerate(doc["inputs"])
    )
    raw_expected = doc.get("expected_outputs", [])
    if not isinstance(raw_expected, list):
        raise ManifestError("expected_outputs must be a list")
    expected = tuple(
        _load_io_tensor(e, f"expected_outputs[{i}]", base_dir)
        for i, e in enumerate(raw_expected)
    )
    for group in (inputs, expected):
        names = [t.name for t in group]
        if len(set(names)) != len(names):
            raise ManifestError("manifest entries must have unique names")
    return IoManifest(inputs, expected)


def load_io_manifest(path: str | Path) -> IoManifest:
    """Read a manifest file, resolving binaries relative to its directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest '{path}': {exc}") from None
    return parse_io_manifest(text, path.parent)
