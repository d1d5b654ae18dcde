"""microforge: ahead-of-time compilation of small NN models to C99.

Pipeline: JSON model -> typed dataflow graph -> optional accelerator
partitioning -> loop-nest IR -> static arena plan -> standalone C
project (no runtime dependencies beyond libm).  The reference
interpreter mirrors the emitted arithmetic bit-for-bit and is the
oracle the generated code is verified against.
"""

from .accel import (
    AcceleratorDesc,
    AccelRegistry,
    Pattern,
    builtin_registry,
    partition,
    register_accelerator,
)
from .emit import EmitPlan, arena_plan, emit_tree
from .errors import MicroforgeError
from .frontend import ConvertMap, convert, default_convert_map, register_operator
from .interp import TensorValue, interp
from .model_format import (
    IoManifest,
    ModelGraph,
    load_io_manifest,
    parse_io_manifest,
    parse_model,
    serialize_model,
)
from .tir import lower_module
from .zoo import GestureModelConfig, build_gesture_model

__version__ = "0.1.0"

__all__ = [
    "AcceleratorDesc",
    "AccelRegistry",
    "Pattern",
    "builtin_registry",
    "partition",
    "register_accelerator",
    "EmitPlan",
    "arena_plan",
    "emit_tree",
    "MicroforgeError",
    "ConvertMap",
    "convert",
    "default_convert_map",
    "register_operator",
    "TensorValue",
    "interp",
    "IoManifest",
    "ModelGraph",
    "load_io_manifest",
    "parse_io_manifest",
    "parse_model",
    "serialize_model",
    "lower_module",
    "GestureModelConfig",
    "build_gesture_model",
    "__version__",
]
