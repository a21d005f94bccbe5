"""Raster I/O and plane preprocessing.

Images travel as binary netpbm files (P5 grayscale, P6 RGB) with maxval
255 or 65535; 16-bit samples are big-endian.  In memory an image is a
numpy array of dtype uint8/uint16, shaped (H, W) for grayscale or
(H, W, 3) for RGB.  A "plane" is a float64 (H, W) array; a FOV mask is a
bool (H, W) array where True marks pixels inside the field of view.
"""

from __future__ import annotations

import numpy as np

_MAXVALS = (255, 65535)


def _parse_header_tokens(data: bytes, count: int, start: int):
    """Read `count` whitespace-separated header tokens, skipping # comments.

    Returns (tokens, offset of the byte right after the single whitespace
    that terminates the last token).
    """
    tokens = []
    i = start
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("malformed netpbm header: truncated token list")
        tokens.append(data[i:j])
        i = j
    if i >= n or not data[i : i + 1].isspace():
        raise ValueError("malformed netpbm header: missing whitespace after maxval")
    return tokens, i + 1


def read_pnm(data: bytes) -> np.ndarray:
    """Decode a binary P5/P6 file into a uint8 or uint16 array.

    P5 yields shape (H, W); P6 yields (H, W, 3).  Only maxval 255 and
    65535 are accepted and the payload must have exactly the declared
    length.  ASCII variants (P2/P3) are rejected.
    """
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ValueError(f"unsupported netpbm magic {magic!r} (need binary P5 or P6)")
    tokens, payload_at = _parse_header_tokens(data, 3, 2)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ValueError(f"malformed netpbm header: non-numeric fields {tokens}") from None
    if width <= 0 or height <= 0:
        raise ValueError(f"malformed netpbm header: bad dimensions {width}x{height}")
    if maxval not in _MAXVALS:
        raise ValueError(f"unsupported maxval {maxval} (need 255 or 65535)")
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    expected = width * height * channels * dtype.itemsize
    payload = data[payload_at:]
    if len(payload) != expected:
        raise ValueError(
            f"payload length {len(payload)} does not match header "
            f"({width}x{height}x{channels}, {expected} bytes expected)"
        )
    arr = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="))
    shape = (height, width) if channels == 1 else (height, width, 3)
    return arr.reshape(shape)


def write_pnm(image: np.ndarray) -> bytes:
    """Encode an image array as canonical binary P5/P6 bytes."""
    if image.dtype == np.uint8:
        maxval = 255
    elif image.dtype == np.uint16:
        maxval = 65535
    else:
        raise ValueError(f"image dtype must be uint8 or uint16, got {image.dtype}")
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"image shape {image.shape} is neither (H, W) nor (H, W, 3)")
    height, width = image.shape[:2]
    header = magic + b"\n%d %d\n%d\n" % (width, height, maxval)
    samples = image.astype(">u2") if maxval == 65535 else image
    return header + samples.tobytes()


def green_channel(image: np.ndarray) -> np.ndarray:
    """Extract the green channel (or the sole channel) as a float64 plane."""
    if image.ndim == 3:
        return image[:, :, 1].astype(np.float64)
    return image.astype(np.float64)


def normalize(plane: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Shift/scale a plane to zero mean and unit variance.

    Statistics are computed over the masked pixels when a mask is given
    (population standard deviation), but the affine map is applied to the
    whole plane so that context outside the FOV stays consistent.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if mask is not None:
        if mask.shape != plane.shape:
            raise ValueError(f"mask shape {mask.shape} != plane shape {plane.shape}")
        region = plane[mask]
    else:
        region = plane.reshape(-1)
    mu = region.mean()
    sigma = region.std()
    if sigma == 0.0:
        raise ValueError("cannot normalize a constant region (zero variance)")
    return (plane - mu) / sigma


def pad_zero(plane: np.ndarray, left: int, right: int, top: int, bottom: int) -> np.ndarray:
    """Grow a plane with zero margins on each side."""
    if min(left, right, top, bottom) < 0:
        raise ValueError("padding margins must be nonnegative")
    return np.pad(plane, ((top, bottom), (left, right)))


def read_fov_mask(data: bytes) -> np.ndarray:
    """Decode a P5 mask file; samples >= 128 count as inside the FOV."""
    img = read_pnm(data)
    if img.ndim != 2:
        raise ValueError("FOV mask must be a grayscale (P5) file")
    bits = img >= 128
    if not bits.any():
        raise ValueError("FOV mask has no inside pixels")
    return bits


def read_binary_plane(data: bytes) -> np.ndarray:
    """Decode a P5 label file into a {0,1} uint8 plane (>= 128 is foreground)."""
    img = read_pnm(data)
    if img.ndim != 2:
        raise ValueError("label image must be a grayscale (P5) file")
    return (img >= 128).astype(np.uint8)


def write_binary_plane(plane: np.ndarray) -> bytes:
    """Encode a {0,1} plane as an 8-bit P5 file with values {0, 255}."""
    return write_pnm((np.asarray(plane) != 0).astype(np.uint8) * np.uint8(255))


def write_probability_plane(probs: np.ndarray) -> bytes:
    """Encode a [0,1] probability plane as 16-bit P5 (value = round(p * 65535))."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    return write_pnm(np.rint(probs * 65535.0).astype(np.uint16))


def read_probability_plane(data: bytes) -> np.ndarray:
    """Decode a 16-bit P5 probability file back to a [0,1] float plane."""
    img = read_pnm(data)
    if img.ndim != 2 or img.dtype != np.uint16:
        raise ValueError("probability map must be a 16-bit grayscale (P5) file")
    return img.astype(np.float64) / 65535.0
