"""Synthetic vessel-like test images for self-contained desk-scale runs.

Each image is a dark noisy fundus-style frame with a circular field of
view and a handful of smooth bright curves of varying width.  The truth
mask marks pixels whose curve cross-profile weight reaches 0.5, so mask
thickness tracks the drawn width.  Everything is deterministic in
(seed, image index).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .imageio import write_pnm

NOISE_SIGMA = 8.0
CURVES_RANGE = (6, 12)
WIDTHS = (1, 2, 3, 4, 5, 6)
GREEN_GAIN = 90.0
BASE_LEVELS = (20.0, 30.0, 14.0)  # r, g, b background
VESSEL_GAINS = (28.0, GREEN_GAIN, 20.0)
FRACTION_RANGE = (0.05, 0.25)
_FWHM = 2.0 * np.sqrt(2.0 * np.log(2.0))


@dataclass(frozen=True)
class ManifestRecord:
    image: str
    truth: str
    fov: str
    stratum: str


def _disk_point(rng, cx, cy, r_lo, r_hi):
    radius = rng.uniform(r_lo, r_hi)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return cx + radius * np.cos(angle), cy + radius * np.sin(angle)


def _bezier(p, ts):
    u = 1.0 - ts
    return (
        u**3 * p[0][:, None]
        + 3.0 * u**2 * ts * p[1][:, None]
        + 3.0 * u * ts**2 * p[2][:, None]
        + ts**3 * p[3][:, None]
    )


def _stamp_curves(rng, width, height, fov_radius) -> np.ndarray:
    """Max-combine Gaussian cross-profiles along random cubic Bezier curves."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    weight = np.zeros((height, width))
    n_curves = int(rng.integers(CURVES_RANGE[0], CURVES_RANGE[1] + 1))
    for _ in range(n_curves):
        ends = [_disk_point(rng, cx, cy, 0.15 * fov_radius, 0.92 * fov_radius) for _ in range(2)]
        mids = [_disk_point(rng, cx, cy, 0.0, 0.85 * fov_radius) for _ in range(2)]
        ctrl = [np.array(p) for p in (ends[0], mids[0], mids[1], ends[1])]
        w_px = WIDTHS[rng.integers(0, len(WIDTHS))]
        sigma = w_px / _FWHM
        coarse = _bezier(ctrl, np.linspace(0.0, 1.0, 33))
        length = float(np.hypot(*np.diff(coarse, axis=1)).sum())
        steps = max(16, int(2.0 * length))
        pts = _bezier(ctrl, np.linspace(0.0, 1.0, steps))
        rad = max(1, int(np.ceil(3.0 * sigma)))
        for x, y in pts.T:
            x0 = max(0, int(np.floor(x)) - rad)
            x1 = min(width - 1, int(np.ceil(x)) + rad)
            y0 = max(0, int(np.floor(y)) - rad)
            y1 = min(height - 1, int(np.ceil(y)) + rad)
            if x1 < x0 or y1 < y0:
                continue
            gy, gx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
            d2 = (gx - x) ** 2 + (gy - y) ** 2
            np.maximum(
                weight[y0 : y1 + 1, x0 : x1 + 1],
                np.exp(-0.5 * d2 / sigma**2),
                out=weight[y0 : y1 + 1, x0 : x1 + 1],
            )
    return weight


def generate_image(width: int, height: int, rng: np.random.Generator):
    """One (rgb uint8 image, truth {0,1}, fov bool) triple.

    Redraws the curve set (deterministically) until the vessel fraction
    inside the FOV lands in FRACTION_RANGE.
    """
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    fov_radius = min(width, height) / 2.0 - 1.0
    gy, gx = np.mgrid[0:height, 0:width]
    fov = (gx - cx) ** 2 + (gy - cy) ** 2 <= fov_radius**2
    for _ in range(100):
        weight = _stamp_curves(rng, width, height, fov_radius)
        truth = (weight >= 0.5).astype(np.uint8)
        fraction = truth[fov].mean()
        if FRACTION_RANGE[0] <= fraction <= FRACTION_RANGE[1]:
            break
    else:
        raise RuntimeError("could not reach the target vessel fraction in 100 draws")
    noise = rng.normal(0.0, NOISE_SIGMA, size=(height, width, 3))
    rgb = np.empty((height, width, 3))
    for ch in range(3):
        rgb[:, :, ch] = BASE_LEVELS[ch] + VESSEL_GAINS[ch] * weight + noise[:, :, ch]
    image = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    return image, truth, fov


def synth_generate(count: int, width: int, height: int, seed: int, out_dir: str):
    """Write a manifest plus `count` (image, truth, fov) file triples."""
    if width < 64 or height < 64:
        raise ValueError("synthetic images must be at least 64x64")
    if count < 1:
        raise ValueError("count must be positive")
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for i in range(count):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        image, truth, fov = generate_image(width, height, rng)
        names = (f"img_{i:03d}.ppm", f"truth_{i:03d}.pgm", f"fov_{i:03d}.pgm")
        for name, payload in zip(
            names,
            (
                write_pnm(image),
                write_pnm(truth * np.uint8(255)),
                write_pnm(fov.astype(np.uint8) * np.uint8(255)),
            ),
        ):
            with open(os.path.join(out_dir, name), "wb") as fh:
                fh.write(payload)
        records.append(
            ManifestRecord(*names, stratum="a" if i % 2 == 0 else "b")
        )
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w") as fh:
        for rec in records:
            fh.write(f"{rec.image}\t{rec.truth}\t{rec.fov}\t{rec.stratum}\n")
    return manifest
