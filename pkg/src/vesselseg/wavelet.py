"""Stationary (undecimated) Haar wavelet transform and input-stack assembly.

The transform keeps every coefficient plane at the input resolution, so
detail planes can be stacked directly as extra network input channels.
Boundaries are handled by periodic extension, which makes reconstruction
and circular-shift equivariance exact.

Convolution phase convention: decomposition filters are anchored forward,
output index n combines inputs at n, n+1, ...  Reconstruction applies the
time-reversed filters anchored backward (output n combines inputs at
..., n-1, n), which is the exact adjoint of the decomposition; each level
is inverted by averaging the low- and high-band adjoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import normalize

_INV_SQRT2 = 1.0 / np.sqrt(2.0)

#: channel layouts selectable for the network input
STACK_MODES = {"base": (), "d1": (1,), "d2": (2,), "d1d2": (1, 2)}


@dataclass(frozen=True)
class FilterPair:
    """Low/high decomposition filter taps for one level."""

    level: int
    low: np.ndarray
    high: np.ndarray


@dataclass(frozen=True)
class SwtLevel:
    """One decomposition level: approximation plus three detail planes."""

    level: int
    approx: np.ndarray
    detail_v: np.ndarray
    detail_h: np.ndarray
    detail_d: np.ndarray


@dataclass(frozen=True)
class InputStack:
    """Network input: normalized green plane plus selected detail channels.

    channels has shape (C, H, W); channel 0 is always the green plane.
    """

    channels: np.ndarray
    mode: str

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]


def haar_filters(level: int) -> FilterPair:
    """Haar decomposition filters for a level, upsampled with interleaved zeros.

    Level 1 is the orthonormal pair ([1, 1]/sqrt2, [1, -1]/sqrt2); each
    further level doubles the gap between the two nonzero taps.
    """
    if level < 1:
        raise ValueError(f"level must be >= 1, got {level}")
    gap = 2 ** (level - 1)
    low = np.zeros(gap + 1)
    high = np.zeros(gap + 1)
    low[0] = low[gap] = _INV_SQRT2
    high[0] = _INV_SQRT2
    high[gap] = -_INV_SQRT2
    return FilterPair(level, low, high)


def reconstruction_filters(level: int) -> FilterPair:
    """Time-reversed copies of the decomposition filters of the same level."""
    dec = haar_filters(level)
    return FilterPair(level, dec.low[::-1].copy(), dec.high[::-1].copy())


def _analyze(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Forward-anchored circular correlation: out[n] = sum_k taps[k] x[n+k]."""
    out = np.zeros_like(x)
    for k, t in enumerate(taps):
        if t != 0.0:
            out += t * np.roll(x, -k, axis=axis)
    return out


def _synthesize(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of _analyze: out[n] = sum_k taps[k] x[n-k].

    Equals a backward-anchored application of the time-reversed filter.
    """
    out = np.zeros_like(x)
    for k, t in enumerate(taps):
        if t != 0.0:
            out += t * np.roll(x, k, axis=axis)
    return out


def swt1d(signal: np.ndarray, levels: int):
    """Decompose a 1D signal; returns (details [d_1..d_J], approx a_J).

    Every output sequence keeps the input length.  d_j and a_j come from
    circularly correlating a_{j-1} with the level-j high/low filters.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.size < 2:
        raise ValueError("signal must be 1D with length >= 2")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    details = []
    approx = signal
    for j in range(1, levels + 1):
        f = haar_filters(j)
        details.append(_analyze(approx, f.high, 0))
        approx = _analyze(approx, f.low, 0)
    return details, approx


def iswt1d(details, approx: np.ndarray) -> np.ndarray:
    """Invert swt1d: per level a_{j-1} = (low-band + high-band adjoint) / 2."""
    approx = np.asarray(approx, dtype=np.float64)
    for j in range(len(details), 0, -1):
        d = np.asarray(details[j - 1], dtype=np.float64)
        if d.shape != approx.shape:
            raise ValueError(f"level {j} detail length {d.shape} != approx {approx.shape}")
        f = haar_filters(j)
        approx = 0.5 * (_synthesize(approx, f.low, 0) + _synthesize(d, f.high, 0))
    return approx


def swt2d(plane: np.ndarray, levels: int) -> list[SwtLevel]:
    """Separable 2D decomposition, row pass (axis 1) then column pass (axis 0).

    Per level: detail_v = (rows low, cols high), detail_h = (rows high,
    cols low), detail_d = (rows high, cols high), approx = (low, low).
    All planes keep the input shape.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2 or min(plane.shape) < 2:
        raise ValueError(f"plane must be 2D with both dims >= 2, got {plane.shape}")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    out = []
    approx = plane
    for j in range(1, levels + 1):
        f = haar_filters(j)
        row_low = _analyze(approx, f.low, 1)
        row_high = _analyze(approx, f.high, 1)
        out.append(
            SwtLevel(
                level=j,
                approx=_analyze(row_low, f.low, 0),
                detail_v=_analyze(row_low, f.high, 0),
                detail_h=_analyze(row_high, f.low, 0),
                detail_d=_analyze(row_high, f.high, 0),
            )
        )
        approx = out[-1].approx
    return out


def iswt2d(levels: list[SwtLevel]) -> np.ndarray:
    """Invert swt2d from a complete level list (as produced by swt2d)."""
    if not levels:
        raise ValueError("need at least one decomposition level")
    approx = levels[-1].approx
    for lv in reversed(levels):
        f = haar_filters(lv.level)
        col_low = _synthesize(approx, f.low, 0) + _synthesize(lv.detail_v, f.high, 0)
        col_high = _synthesize(lv.detail_h, f.low, 0) + _synthesize(lv.detail_d, f.high, 0)
        approx = 0.25 * (_synthesize(col_low, f.low, 1) + _synthesize(col_high, f.high, 1))
    return approx


def build_input_stack(green: np.ndarray, fov: np.ndarray, mode: str) -> InputStack:
    """Stack the normalized green plane with normalized SWT detail channels.

    `green` must already be normalized.  Detail planes are appended in
    (dV, dH, dD) order for each selected level and get the same
    FOV-restricted normalization as the green channel.
    """
    if mode not in STACK_MODES:
        raise ValueError(f"unknown stack mode {mode!r}, expected one of {sorted(STACK_MODES)}")
    green = np.asarray(green, dtype=np.float64)
    wanted = STACK_MODES[mode]
    channels = [green]
    if wanted:
        max_level = max(wanted)
        if min(green.shape) < 2**max_level:
            raise ValueError(
                f"image {green.shape} too small for a level-{max_level} decomposition"
            )
        decomp = swt2d(green, max_level)
        for j in wanted:
            lv = decomp[j - 1]
            for detail in (lv.detail_v, lv.detail_h, lv.detail_d):
                channels.append(normalize(detail, fov))
    return InputStack(channels=np.stack(channels), mode=mode)
