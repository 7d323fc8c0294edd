"""Feature-map extraction and Grad-CAM heatmaps.

Grad-CAM targets the pre-sigmoid logit (gradients through a saturated
sigmoid vanish): per-channel weights are the global average pool of the
logit's gradient with respect to the chosen block's post-activation maps,
the weighted sum is rectified, bilinearly upsampled to the input size and
min-max normalised. Identically constant maps normalise to all zeros and
carry a degenerate flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .imaging import resize_bilinear_float
from .model import Model


@dataclass
class Heatmap:
    values: np.ndarray  # (h, w) in [0, 1]
    source_layer: int   # block index the map was taken from
    input_ref: str = ""
    degenerate: bool = False  # raw map was identically constant


def _minmax(arr: np.ndarray):
    lo = float(arr.min())
    hi = float(arr.max())
    if hi - lo <= 0.0:
        return np.zeros_like(arr), True
    return (arr - lo) / (hi - lo), False


def _check_block(model: Model, block_index: int) -> int:
    n = len(model.block_relu)
    if block_index < 0:
        block_index += n
    if not 0 <= block_index < n:
        raise ParameterError(f"block index out of range: model has {n} blocks")
    return block_index


def feature_maps(model: Model, image: np.ndarray, block_index: int):
    """Post-activation maps of one block in inference mode, min-max normalised."""
    block_index = _check_block(model, block_index)
    x = np.asarray(image)[None, ...]
    _, tape = model.forward(x, mode="infer", record=True)
    activ = tape.outputs[model.block_relu[block_index]][0]
    return [_minmax(activ[ch])[0] for ch in range(activ.shape[0])]


def grad_cam(model: Model, image: np.ndarray, block_index: int = -1, input_ref: str = "") -> Heatmap:
    """Gradient-weighted class activation map for a single image."""
    block_index = _check_block(model, block_index)
    x = np.asarray(image)[None, ...]
    node_idx = model.block_relu[block_index]
    z, tape = model.logits(x, mode="infer", record=True)
    activ = tape.outputs[node_idx]  # (1, ch, h, w)
    grad_z = np.ones((1, 1), dtype=z.dtype)
    grad_activ, _ = model.backward_from(grad_z, tape, start=node_idx + 1)
    weights = grad_activ.mean(axis=(2, 3))  # global average pool per channel
    cam = np.maximum((weights[:, :, None, None] * activ).sum(axis=1)[0], 0.0)
    cam = resize_bilinear_float(cam, model.cfg.input_h, model.cfg.input_w)
    values, degenerate = _minmax(cam)
    return Heatmap(values=values, source_layer=block_index, input_ref=input_ref,
                   degenerate=degenerate)


def heatmap_mass_in_box(values: np.ndarray, box) -> float:
    """Sum of heatmap values inside an inclusive (x0, y0, x1, y1) box."""
    x0, y0, x1, y1 = box
    h, w = values.shape
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w - 1), min(y1, h - 1)
    return float(values[y0 : y1 + 1, x0 : x1 + 1].sum())


def max_background_box_mass(values: np.ndarray, box) -> float:
    """Largest equal-area window sum over boxes disjoint from the given box."""
    x0, y0, x1, y1 = box
    h, w = values.shape
    bh, bw = y1 - y0 + 1, x1 - x0 + 1
    if bh > h or bw > w:
        raise ParameterError("box larger than heatmap")
    ii = np.zeros((h + 1, w + 1))
    ii[1:, 1:] = values.cumsum(0).cumsum(1)
    best = -np.inf
    for ty in range(0, h - bh + 1):
        for tx in range(0, w - bw + 1):
            if not (tx + bw - 1 < x0 or tx > x1 or ty + bh - 1 < y0 or ty > y1):
                continue  # overlaps the reference box
            s = ii[ty + bh, tx + bw] - ii[ty, tx + bw] - ii[ty + bh, tx] + ii[ty, tx]
            if s > best:
                best = s
    return float(best)
