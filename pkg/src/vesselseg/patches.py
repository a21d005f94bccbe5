"""Patch sampling, rotation/elastic augmentation, and overlap-tile planning.

Training pairs couple an input window with the label window it predicts;
the input window is the label window grown by the network's context
margin on every side (default 28 px, so 88x88 inputs predict 32x32
outputs).  At test time the image is zero padded to a multiple of the
output tile size and cut into disjoint output tiles, each predicted from
its own context-grown input window, so every pixel is segmented exactly
once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .wavelet import InputStack

OUTPUT_SIZE = 32
CONTEXT = 28
INPUT_SIZE = OUTPUT_SIZE + 2 * CONTEXT

#: (alpha, sigma) combinations used to build elastic training samples
ELASTIC_COMBOS = ((8.0, 1.5), (16.0, 2.5), (32.0, 3.0))


@dataclass(frozen=True)
class PatchPair:
    """Aligned training example; arrays may be views into a shared canvas."""

    input: np.ndarray  # (C, in_size, in_size)
    target: np.ndarray  # (out_size, out_size) labels in {0, 1}
    origin: tuple[int, int]  # (row, col) of the output window in image coords


@dataclass(frozen=True)
class TileLayout:
    """Disjoint output tiling of a zero-padded canvas."""

    original_width: int
    original_height: int
    padded_width: int
    padded_height: int
    origins: tuple[tuple[int, int], ...]  # (row, col), row-major
    context: int = CONTEXT
    tile: int = OUTPUT_SIZE


def pad_channels(channels: np.ndarray, margin: int) -> np.ndarray:
    """Zero-pad a (C, H, W) block by `margin` on each spatial side."""
    return np.pad(channels, ((0, 0), (margin, margin), (margin, margin)))


def sample_training_patches(
    stack: InputStack,
    labels: np.ndarray,
    fov: np.ndarray,
    n: int,
    rng: np.random.Generator,
    context: int = CONTEXT,
    out_size: int = OUTPUT_SIZE,
) -> list[PatchPair]:
    """Draw n patch pairs with output windows uniform over in-bounds positions.

    Overlap between windows is allowed; context beyond the image border is
    zero padding.  The returned inputs are views into one padded canvas,
    so large n stays cheap.
    """
    if n < 1:
        raise ValueError("need at least one patch")
    h, w = labels.shape
    if h < out_size or w < out_size:
        raise ValueError(f"image {w}x{h} smaller than the {out_size}x{out_size} output window")
    if stack.channels.shape[1:] != labels.shape or fov.shape != labels.shape:
        raise ValueError("stack, labels, and fov dimensions disagree")
    padded = pad_channels(stack.channels, context)
    coords = rng.integers(0, [h - out_size + 1, w - out_size + 1], size=(n, 2))
    in_size = out_size + 2 * context
    pairs = []
    for r, c in coords:
        r, c = int(r), int(c)
        pairs.append(
            PatchPair(
                input=padded[:, r : r + in_size, c : c + in_size],
                target=labels[r : r + out_size, c : c + out_size],
                origin=(r, c),
            )
        )
    return pairs


def rotate_block(block: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate the spatial axes counterclockwise by 90 deg * quarter_turns.

    Works on (H, W) planes and (..., H, W) blocks; a pure index
    permutation, so it is lossless and returns a view.
    """
    return np.rot90(block, k=quarter_turns % 4, axes=(-2, -1))


def augment_rotations(
    pairs: list[PatchPair], rng: np.random.Generator, consecutive: bool = False
) -> list[PatchPair]:
    """Expand each pair into its four-rotation orbit (input and target together).

    The combined list is returned in a seeded uniform random order, or
    with each orbit kept adjacent when `consecutive` is set.
    """
    out = []
    for p in pairs:
        for r in range(4):
            out.append(
                PatchPair(
                    input=rotate_block(p.input, r),
                    target=rotate_block(p.target, r),
                    origin=p.origin,
                )
            )
    if not consecutive:
        perm = rng.permutation(len(out))
        out = [out[i] for i in perm]
    return out


def _gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian truncated at 3 sigma, normalized to unit sum."""
    radius = max(1, int(np.floor(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _smooth(field: np.ndarray, sigma: float) -> np.ndarray:
    """Separable zero-padded Gaussian smoothing of a 2D field."""
    k = _gaussian_kernel(sigma)
    radius = len(k) // 2
    for axis in (0, 1):
        padded = np.zeros_like(field)
        src = np.pad(field, [(radius, radius) if a == axis else (0, 0) for a in (0, 1)])
        for i, t in enumerate(k):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(i, i + field.shape[axis])
            padded += t * src[tuple(sl)]
        field = padded
    return field


def _bilinear(plane: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    return (
        plane[y0, x0] * (1 - fy) * (1 - fx)
        + plane[y0, x1] * (1 - fy) * fx
        + plane[y1, x0] * fy * (1 - fx)
        + plane[y1, x1] * fy * fx
    )


def elastic_deform(
    patch: PatchPair, alpha: float, sigma: float, rng: np.random.Generator
) -> PatchPair:
    """Warp a patch pair with a random smoothed displacement field.

    A per-pixel uniform [-1, 1]^2 field over the input window is Gaussian
    smoothed (truncated at 3 sigma, unit-sum kernel) and scaled by alpha.
    Input channels are sampled bilinearly; the target uses the central
    part of the same field with nearest-label sampling, keeping labels in
    {0, 1}.
    """
    if alpha <= 0 or sigma <= 0:
        raise ValueError("alpha and sigma must be positive")
    c, in_h, in_w = patch.input.shape
    out_h, out_w = patch.target.shape
    margin = (in_h - out_h) // 2
    raw = rng.uniform(-1.0, 1.0, size=(2, in_h, in_w))
    dy = _smooth(raw[0], sigma) * alpha
    dx = _smooth(raw[1], sigma) * alpha
    gy, gx = np.mgrid[0:in_h, 0:in_w].astype(np.float64)
    ys, xs = gy + dy, gx + dx
    warped = np.stack([_bilinear(patch.input[ch], ys, xs) for ch in range(c)])
    ty = gy[margin : margin + out_h, margin : margin + out_w] - margin + dy[margin : margin + out_h, margin : margin + out_w]
    tx = gx[margin : margin + out_h, margin : margin + out_w] - margin + dx[margin : margin + out_h, margin : margin + out_w]
    ny = np.clip(np.rint(ty), 0, out_h - 1).astype(np.intp)
    nx = np.clip(np.rint(tx), 0, out_w - 1).astype(np.intp)
    return PatchPair(input=warped, target=patch.target[ny, nx], origin=patch.origin)


def plan_tiles(
    width: int, height: int, context: int = CONTEXT, tile: int = OUTPUT_SIZE
) -> TileLayout:
    """Plan the disjoint output tiling of a canvas padded to tile multiples."""
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    pw = tile * ((width + tile - 1) // tile)
    ph = tile * ((height + tile - 1) // tile)
    origins = tuple((r, c) for r in range(0, ph, tile) for c in range(0, pw, tile))
    return TileLayout(
        original_width=width,
        original_height=height,
        padded_width=pw,
        padded_height=ph,
        origins=origins,
        context=context,
        tile=tile,
    )


def pad_for_tiles(channels: np.ndarray, layout: TileLayout) -> np.ndarray:
    """Grow (C, H, W) channels to the padded canvas plus the context border.

    The image sits at offset (context, context); canvas padding goes on
    the bottom/right so tile origins count from the top-left corner.
    """
    c, h, w = channels.shape
    if (w, h) != (layout.original_width, layout.original_height):
        raise ValueError("channel dimensions do not match the layout")
    m = layout.context
    return np.pad(
        channels,
        (
            (0, 0),
            (m, layout.padded_height - h + m),
            (m, layout.padded_width - w + m),
        ),
    )


def extract_tile(padded: np.ndarray, layout: TileLayout, index: int) -> np.ndarray:
    """Slice the context-grown input window of output tile `index`."""
    if not 0 <= index < len(layout.origins):
        raise IndexError(f"tile index {index} out of range (0..{len(layout.origins) - 1})")
    r, c = layout.origins[index]
    size = layout.tile + 2 * layout.context
    return padded[:, r : r + size, c : c + size]


def assemble(tile_probs: list[np.ndarray], layout: TileLayout) -> np.ndarray:
    """Place per-tile (tile, tile, K) probabilities and crop to original dims.

    Tiles are disjoint by construction, so each original pixel is written
    exactly once.
    """
    if len(tile_probs) != len(layout.origins):
        raise ValueError(
            f"got {len(tile_probs)} tiles for {len(layout.origins)} origins"
        )
    k = tile_probs[0].shape[-1]
    canvas = np.zeros((layout.padded_height, layout.padded_width, k))
    t = layout.tile
    for probs, (r, c) in zip(tile_probs, layout.origins):
        if probs.shape != (t, t, k):
            raise ValueError(f"tile shape {probs.shape} != ({t}, {t}, {k})")
        canvas[r : r + t, c : c + t] = probs
    return canvas[: layout.original_height, : layout.original_width]
