"""Built-in reference models and synthetic input generators.

The gesture recognizer is the model the rest of the toolchain is tuned
against: two strided shared-kernel depthwise conv stages over a 6-axis
IMU window, a GRU, and a 21-way dense+softmax head over the last hidden
state.  Weights are seeded uniform noise — the point is a structurally
faithful, bit-reproducible compilation target, not a trained artifact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MicroforgeError
from .model_format import ModelGraph, OperatorNode, ParamTensor, TensorSpec

__all__ = [
    "ZooError",
    "GestureModelConfig",
    "param_count",
    "build_gesture_model",
    "gen_none_class",
    "export_gesture_model",
    "export_gesture_io",
]


class ZooError(MicroforgeError):
    pass


@dataclass(frozen=True)
class GestureModelConfig:
    """Shape knobs for the gesture recognizer.

    Defaults give the stock network: 6 channels x 128 samples in,
    21 class probabilities out, 1525 parameters.
    """

    channels: int = 6
    window_len: int = 128
    kernel_len: int = 7
    stride: int = 2
    gru_hidden: int = 16
    classes: int = 21

    def conv_out_len(self, in_len: int) -> int:
        return (in_len - self.kernel_len) // self.stride + 1


def param_count(cfg: GestureModelConfig | None = None) -> int:
    """Closed-form scalar parameter count of the gesture model."""
    cfg = cfg or GestureModelConfig()
    conv = 2 * (cfg.kernel_len + 1)
    h, c = cfg.gru_hidden, cfg.channels
    gru = 3 * h * c + 3 * h * h + 6 * h
    head = h * cfg.classes + cfg.classes
    return conv + gru + head


def _check_config(cfg: GestureModelConfig) -> None:
    if min(cfg.channels, cfg.window_len, cfg.kernel_len, cfg.gru_hidden, cfg.classes) < 1:
        raise ZooError(f"gesture config has non-positive dimensions: {cfg}")
    if cfg.stride < 1:
        raise ZooError(f"stride must be >= 1, got {cfg.stride}")
    l1 = cfg.conv_out_len(cfg.window_len)
    if cfg.window_len < cfg.kernel_len or l1 < cfg.kernel_len:
        raise ZooError(
            f"window of {cfg.window_len} samples is too short for two "
            f"kernel-{cfg.kernel_len} stride-{cfg.stride} conv stages"
        )


def build_gesture_model(cfg: GestureModelConfig | None = None, seed: int = 0) -> ModelGraph:
    """Construct the gesture model with seeded uniform [-0.5, 0.5) weights."""
    cfg = cfg or GestureModelConfig()
    _check_config(cfg)
    rng = np.random.default_rng(seed)
    h, c = cfg.gru_hidden, cfg.channels

    def param(name: str, *shape: int) -> tuple[str, ParamTensor]:
        n = int(np.prod(shape))
        data = rng.uniform(-0.5, 0.5, size=n).astype(np.float32)
        return name, ParamTensor(TensorSpec(name, tuple(shape)), data)

    params = dict(
        [
            param("conv1_kernel", cfg.kernel_len),
            param("conv1_bias", 1),
            param("conv2_kernel", cfg.kernel_len),
            param("conv2_bias", 1),
            param("gru_wx", 3 * h, c),
            param("gru_wh", 3 * h, h),
            param("gru_bx", 3 * h),
            param("gru_bh", 3 * h),
            param("dense_w", cfg.classes, h),
            param("dense_b", cfg.classes),
        ]
    )
    conv_attrs = {"kernel_len": cfg.kernel_len, "stride": cfg.stride}
    nodes = (
        OperatorNode("conv1", "conv1d_dw_shared", ("x",), dict(conv_attrs),
                     ("conv1_kernel", "conv1_bias")),
        OperatorNode("conv2", "conv1d_dw_shared", ("conv1",), dict(conv_attrs),
                     ("conv2_kernel", "conv2_bias")),
        OperatorNode("gru", "gru", ("conv2",), {"hidden": h},
                     ("gru_wx", "gru_wh", "gru_bx", "gru_bh")),
        OperatorNode("last_t", "last_timestep", ("gru",)),
        OperatorNode("dense", "dense", ("last_t",), {"units": cfg.classes},
                     ("dense_w", "dense_b")),
        OperatorNode("softmax", "softmax", ("dense",)),
    )
    return ModelGraph(
        name="gesture",
        inputs=(TensorSpec("x", (1, c, cfg.window_len)),),
        outputs=("softmax",),
        nodes=nodes,
        params=params,
    )


def gen_none_class(
    cfg: GestureModelConfig | None = None,
    seed: int = 0,
    n: int = 32,
    sigma: float = 0.02,
) -> np.ndarray:
    """Synthetic "no gesture" windows: per-channel constant offsets drawn
    uniform [-1, 1] plus gaussian jitter of scale ``sigma``.

    Returns float32 [n, channels, window_len].  The noise draw happens
    even for sigma == 0, so two calls that differ only in sigma see the
    same offsets.
    """
    cfg = cfg or GestureModelConfig()
    rng = np.random.default_rng(seed)
    out = np.empty((n, cfg.channels, cfg.window_len), dtype=np.float32)
    for i in range(n):
        offsets = rng.uniform(-1.0, 1.0, size=(cfg.channels, 1))
        noise = rng.standard_normal(size=(cfg.channels, cfg.window_len))
        out[i] = (offsets + sigma * noise).astype(np.float32)
    return out


def export_gesture_model(
    path: str | Path, cfg: GestureModelConfig | None = None, seed: int = 0
) -> ModelGraph:
    """Write the gesture model JSON to ``path`` and return the graph."""
    from .model_format import serialize_model

    graph = build_gesture_model(cfg, seed)
    Path(path).write_text(serialize_model(graph))
    return graph


def export_gesture_io(
    io_dir: str | Path, cfg: GestureModelConfig | None = None, seed: int = 1
) -> Path:
    """Write one synthetic input window plus a manifest into ``io_dir``.

    The manifest carries inputs only; pair it with the reference
    evaluator to produce expected outputs.  Returns the manifest path.
    """
    cfg = cfg or GestureModelConfig()
    io_dir = Path(io_dir)
    io_dir.mkdir(parents=True, exist_ok=True)
    window = gen_none_class(cfg, seed=seed, n=1)[0]
    (io_dir / "input_x.bin").write_bytes(window.astype("<f4").tobytes())
    manifest = {
        "inputs": [
            {
                "name": "x",
                "shape": [1, cfg.channels, cfg.window_len],
                "file": "input_x.bin",
            }
        ],
        "expected_outputs": [],
    }
    path = io_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
