"""Patch- and image-level inference, with optional rotation symmetrization.

"Multiple" prediction feeds the four 90-degree rotations of each input
window through the network, rotates the probability maps back into
alignment, and averages them pixel-wise, making the predictor exactly
equivariant under quarter-turn rotations of its input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network, patches
from .network import Model
from .wavelet import InputStack

PREDICTION_MODES = ("simple", "multiple")


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel class probabilities (H, W, K) plus the image's FOV mask."""

    probs: np.ndarray
    fov: np.ndarray

    @property
    def vessel(self) -> np.ndarray:
        return self.probs[:, :, 1]


def predict_patch(model: Model, window: np.ndarray) -> np.ndarray:
    """Softmax probabilities (h_out, w_out, K) for one (C, H, W) input window."""
    logits, _ = network.forward(model.params, model.config, window[None], "infer")
    return network.softmax(logits)[0].transpose(1, 2, 0)


def predict_patch_multi(model: Model, window: np.ndarray) -> np.ndarray:
    """Average the aligned predictions of the four rotations of a window.

    The four rotated copies run as one batch; each probability map is
    rotated back before the pixel-wise average, so channel sums stay 1.
    """
    if window.shape[-1] != window.shape[-2]:
        raise ValueError("rotation symmetrization needs square input windows")
    batch = np.stack([patches.rotate_block(window, r) for r in range(4)])
    logits, _ = network.forward(model.params, model.config, batch, "infer")
    probs = network.softmax(logits)
    aligned = [
        np.rot90(probs[r].transpose(1, 2, 0), k=-r, axes=(0, 1)) for r in range(4)
    ]
    return np.mean(aligned, axis=0)


def segment_image(
    model: Model,
    stack: InputStack,
    fov: np.ndarray,
    mode: str = "multiple",
    threshold: float = 0.5,
) -> tuple[ProbabilityMap, np.ndarray]:
    """Tile an image, predict every tile once, and reassemble.

    Returns the full-image probability map and the {0,1} vessel mask from
    thresholding the vessel probability (ties map to vessel).  Pixels
    outside the FOV are predicted like any others; scoring is expected to
    ignore them.
    """
    if mode not in PREDICTION_MODES:
        raise ValueError(f"mode must be one of {PREDICTION_MODES}")
    if stack.channels.shape[0] != model.config.in_channels:
        raise ValueError(
            f"stack has {stack.channels.shape[0]} channels, model expects "
            f"{model.config.in_channels}"
        )
    if fov.shape != stack.channels.shape[1:]:
        raise ValueError("FOV dimensions do not match the image")
    context = network.margin(model.config)
    layout = patches.plan_tiles(stack.width, stack.height, context=context)
    padded = patches.pad_for_tiles(stack.channels, layout)
    predictor = predict_patch_multi if mode == "multiple" else predict_patch
    tiles = [
        predictor(model, patches.extract_tile(padded, layout, i))
        for i in range(len(layout.origins))
    ]
    probs = patches.assemble(tiles, layout)
    binary = (probs[:, :, 1] >= threshold).astype(np.uint8)
    return ProbabilityMap(probs=probs, fov=fov), binary
