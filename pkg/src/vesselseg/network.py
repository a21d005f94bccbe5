"""Fully convolutional encoder-decoder with exact manual backpropagation.

All convolutions are valid (no padding) 3x3 cross-correlations except the
1x1 linear head, so the output patch is smaller than the input by a fixed
context margin per side.  Feature-map width doubles after each pool and
halves after each upsample.  Everything runs in float64.

Public tensor contracts are channel-first (N, C, H, W).  Internally the
forward/backward passes keep activations channel-last, which lets the
im2col matrices feed BLAS without layout shuffles; the two layouts meet
only at the forward/backward entry points.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

DROPOUT_MODES = ("spatial", "standard")

MAGIC = b"VNSW"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    """Architecture description; every learnable shape follows from it.

    encoder_convs[b] counts the 3x3 conv layers in encoder block b (block
    widths are base_width * 2**b); decoder blocks mirror the encoder.
    The context margin consumed per side is determined by the conv counts
    and the scale each block runs at.
    """

    in_channels: int = 4
    classes: int = 2
    base_width: int = 8
    encoder_convs: tuple[int, ...] = (4, 3)
    bottleneck_convs: int = 2
    decoder_convs: tuple[int, ...] = (3, 4)
    dropout_p: float = 0.2
    dropout_p_last: float = 0.15
    dropout_mode: str = "spatial"
    channel_mode: str = "d2"
    kernel: int = 3
    pool: int = 2

    def __post_init__(self):
        if self.kernel != 3 or self.pool != 2:
            raise ValueError("kernel size 3 and pool size 2 are fixed")
        expected = {"base": 1, "d1": 4, "d2": 4, "d1d2": 7}.get(self.channel_mode)
        if expected is None:
            raise ValueError(f"unknown channel_mode {self.channel_mode!r}")
        if self.in_channels != expected:
            raise ValueError(
                f"channel_mode {self.channel_mode!r} implies {expected} input channels, "
                f"got {self.in_channels}"
            )
        if self.classes != 2:
            raise ValueError("this is a binary segmenter; classes must be 2")
        if self.base_width < 1:
            raise ValueError("base_width must be positive")
        if len(self.encoder_convs) != len(self.decoder_convs):
            raise ValueError("decoder block count must equal encoder block count")
        if not self.encoder_convs or min(self.encoder_convs) < 1:
            raise ValueError("each encoder block needs at least one conv")
        if min(self.decoder_convs) < 1 or self.bottleneck_convs < 1:
            raise ValueError("decoder blocks and bottleneck need at least one conv")
        for p in (self.dropout_p, self.dropout_p_last):
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout probability {p} outside [0, 1)")
        if self.dropout_mode not in DROPOUT_MODES:
            raise ValueError(f"dropout_mode must be one of {DROPOUT_MODES}")


@dataclass
class ParamSet:
    """Kernel tensors (out, in, kh, kw) and bias vectors, one pair per conv."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class Model:
    config: ArchConfig
    params: ParamSet


def margin(config: ArchConfig) -> int:
    """Context pixels consumed per side between input and output windows."""
    depth = len(config.encoder_convs)
    m = sum(n << b for b, n in enumerate(config.encoder_convs))
    m += config.bottleneck_convs << depth
    m += sum(n << (depth - 1 - i) for i, n in enumerate(config.decoder_convs))
    return m


def conv_plan(config: ArchConfig) -> list[tuple[int, int, int]]:
    """(in_channels, out_channels, kernel) for every conv layer in order."""
    depth = len(config.encoder_convs)
    plan = []
    prev = config.in_channels
    for b, count in enumerate(config.encoder_convs):
        width = config.base_width << b
        for _ in range(count):
            plan.append((prev, width, 3))
            prev = width
    width = config.base_width << depth
    for _ in range(config.bottleneck_convs):
        plan.append((prev, width, 3))
        prev = width
    for i, count in enumerate(config.decoder_convs):
        width = config.base_width << (depth - 1 - i)
        skip_width = width  # the mirrored encoder block has the same width
        plan.append((prev + skip_width, width, 3))
        prev = width
        for _ in range(count - 1):
            plan.append((width, width, 3))
    plan.append((prev, config.classes, 1))
    return plan


def shape_walk(config: ArchConfig, input_hw: tuple[int, int]) -> list[tuple[str, int, int, int]]:
    """Trace (stage, h, w, channels) through the network, validating geometry.

    Raises ValueError naming the offending stage when a conv would
    underflow, a pool would see odd dims, or a skip crop would need
    uneven margins.
    """
    def conv_run(stage, h, w, count):
        for i in range(count):
            h, w = h - 2, w - 2
            if h < 1 or w < 1:
                raise ValueError(f"{stage} conv {i + 1}: input too small ({h + 2}x{w + 2})")
        return h, w

    depth = len(config.encoder_convs)
    h, w = input_hw
    walk = [("input", h, w, config.in_channels)]
    skips = []
    for b, count in enumerate(config.encoder_convs):
        ch = config.base_width << b
        h, w = conv_run(f"encoder block {b}", h, w, count)
        walk.append((f"encoder block {b}", h, w, ch))
        skips.append((h, w, ch))
        if h % 2 or w % 2:
            raise ValueError(f"pool after encoder block {b}: odd dims {h}x{w}")
        h, w = h // 2, w // 2
        walk.append((f"pool {b}", h, w, ch))
    ch = config.base_width << depth
    h, w = conv_run("bottleneck", h, w, config.bottleneck_convs)
    walk.append(("bottleneck", h, w, ch))
    for i, count in enumerate(config.decoder_convs):
        h, w = 2 * h, 2 * w
        sh, sw, sch = skips[depth - 1 - i]
        if sh < h or sw < w:
            raise ValueError(f"decoder block {i}: skip {sh}x{sw} smaller than upsampled {h}x{w}")
        if (sh - h) % 2 or (sw - w) % 2:
            raise ValueError(f"decoder block {i}: crop margins ({sh - h}, {sw - w}) not even")
        ch = config.base_width << (depth - 1 - i)
        walk.append((f"concat {i}", h, w, sch + (config.base_width << (depth - i))))
        h, w = conv_run(f"decoder block {i}", h, w, count)
        walk.append((f"decoder block {i}", h, w, ch))
    walk.append(("head", h, w, config.classes))
    return walk


def output_size(config: ArchConfig, input_size: int) -> int:
    walk = shape_walk(config, (input_size, input_size))
    return walk[-1][1]


def xavier_init(config: ArchConfig, rng: np.random.Generator) -> ParamSet:
    """Uniform Xavier kernels on +-sqrt(6/(fan_in+fan_out)); all biases 0.1."""
    weights, biases = [], []
    for cin, cout, k in conv_plan(config):
        fan_in = cin * k * k
        fan_out = cout * k * k
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(cout, cin, k, k)))
        biases.append(np.full(cout, 0.1))
    return ParamSet(weights, biases)


# ---------------------------------------------------------------------------
# channel-last kernels (the fast path shared by the public ops and forward)
# ---------------------------------------------------------------------------


def _im2col3(x: np.ndarray) -> np.ndarray:
    """(N, H, W, C) -> (N*(H-2)*(W-2), 9*C) patch matrix for 3x3 kernels."""
    n, h, w, c = x.shape
    oh, ow = h - 2, w - 2
    s = x.strides
    view = as_strided(x, (n, oh, ow, 3, 3, c), (s[0], s[1], s[2], s[1], s[2], s[3]))
    return view.reshape(n * oh * ow, 9 * c)


def _weight_matrix(w: np.ndarray) -> np.ndarray:
    """(O, C, kh, kw) kernel -> (kh*kw*C, O) matrix matching _im2col3 order."""
    o = w.shape[0]
    return w.transpose(2, 3, 1, 0).reshape(-1, o)


def _conv_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray, cols_out: list | None = None):
    """Valid cross-correlation on channel-last tensors.

    When `cols_out` is given the materialized patch matrix is appended to
    it so the backward pass can reuse it for the kernel gradient.
    """
    n, h, wd, c = x.shape
    if w.shape[1] != c:
        raise ValueError(f"kernel expects {w.shape[1]} channels, input has {c}")
    if w.shape[2] == 1:
        cols = x.reshape(-1, c)
    else:
        if h < 3 or wd < 3:
            raise ValueError(f"spatial dims {h}x{wd} smaller than the 3x3 kernel")
        cols = _im2col3(np.ascontiguousarray(x))
    if cols_out is not None:
        cols_out.append(cols)
    out = cols @ _weight_matrix(w)
    out += b
    oh, ow = (h, wd) if w.shape[2] == 1 else (h - 2, wd - 2)
    return out.reshape(n, oh, ow, -1)


def _conv_bwd(
    x: np.ndarray,
    w: np.ndarray,
    dy: np.ndarray,
    cols: np.ndarray | None = None,
    need_dx: bool = True,
):
    """Gradients of a valid conv: (dW, db, dX) from input x and output grad dy.

    `cols` may carry the forward's patch matrix; otherwise it is rebuilt.
    The input gradient comes from a full correlation of dy with the
    flipped kernel, expressed as one more im2col GEMM; pass
    need_dx=False for the first layer, where it would be discarded.
    """
    n, h, wd, c = x.shape
    o = w.shape[0]
    dy_mat = dy.reshape(-1, o)
    db = dy_mat.sum(axis=0)
    if w.shape[2] == 1:
        dwmat = x.reshape(-1, c).T @ dy_mat
        dw = dwmat.reshape(1, 1, c, o).transpose(3, 2, 0, 1)
        dx = (dy_mat @ _weight_matrix(w).T).reshape(x.shape) if need_dx else None
        return dw, db, dx
    oh, ow = h - 2, wd - 2
    if cols is None:
        cols = _im2col3(np.ascontiguousarray(x))
    dwmat = cols.T @ dy_mat
    dw = dwmat.reshape(3, 3, c, o).transpose(3, 2, 0, 1)
    if not need_dx:
        return dw, db, None
    # dX[p] = sum_k W[k] dY[p - k]: zero-pad dy and correlate with the
    # 180-degree-flipped, in/out-swapped kernel
    wflip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    padded = np.empty((n, oh + 4, ow + 4, o))
    padded[:, :2] = 0.0
    padded[:, -2:] = 0.0
    padded[:, :, :2] = 0.0
    padded[:, :, -2:] = 0.0
    padded[:, 2 : 2 + oh, 2 : 2 + ow, :] = dy
    dx = (_im2col3(padded) @ _weight_matrix(wflip)).reshape(x.shape)
    return dw, db, dx


def _pool_fwd(x: np.ndarray):
    """2x2 non-overlapping max pool; returns output and per-window argmax."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max pooling needs even spatial dims, got {h}x{w}")
    windows = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    flat = windows.reshape(n, h // 2, w // 2, c, 4)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.uint8)


def _pool_bwd(dy: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Route gradients to the argmax position of each 2x2 window."""
    n, oh, ow, c = dy.shape
    flat = np.zeros((n, oh, ow, c, 4))
    np.put_along_axis(flat, idx[..., None].astype(np.intp), dy[..., None], axis=-1)
    windows = flat.reshape(n, oh, ow, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return windows.reshape(n, oh * 2, ow * 2, c)


def _upsample_fwd(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x upsampling (each pixel becomes a 2x2 block)."""
    n, h, w, c = x.shape
    out = np.broadcast_to(x[:, :, None, :, None, :], (n, h, 2, w, 2, c))
    return out.reshape(n, h * 2, w * 2, c)


def _upsample_bwd(dy: np.ndarray) -> np.ndarray:
    """Adjoint of nearest 2x upsampling: 2x2 block sums."""
    n, h, w, c = dy.shape
    return dy.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def _center_crop(x: np.ndarray, th: int, tw: int):
    h, w = x.shape[1:3]
    if h < th or w < tw:
        raise ValueError(f"cannot crop {h}x{w} down to {th}x{tw}")
    if (h - th) % 2 or (w - tw) % 2:
        raise ValueError(f"crop from {h}x{w} to {th}x{tw} has uneven margins")
    dy, dx = (h - th) // 2, (w - tw) // 2
    return x[:, dy : dy + th, dx : dx + tw, :], (dy, dx)


def _dropout_mask(shape, p: float, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: kept entries carry 1/(1-p), dropped are 0."""
    n, h, w, c = shape
    draw_shape = (n, 1, 1, c) if mode == "spatial" else (n, h, w, c)
    keep = rng.random(draw_shape) >= p
    return keep.astype(np.float64) / (1.0 - p)


# ---------------------------------------------------------------------------
# public layer ops (channel-first contracts)
# ---------------------------------------------------------------------------


def _to_nhwc(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t.transpose(0, 2, 3, 1))


def _to_nchw(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t.transpose(0, 3, 1, 2))


def conv2d_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of an (N, C, H, W) tensor with (O, C, kh, kw)."""
    if w.shape[2] not in (1, 3) or w.shape[2] != w.shape[3]:
        raise ValueError(f"kernel must be 1x1 or 3x3, got {w.shape[2:]} ")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    return _to_nchw(_conv_fwd(_to_nhwc(x), w, b))


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0.0)


def maxpool2x2(t: np.ndarray):
    """(N, C, H, W) -> halved dims plus argmax indices for the backward pass."""
    out, idx = _pool_fwd(_to_nhwc(t))
    return _to_nchw(out), idx


def maxpool2x2_backward(grad_out: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return _to_nchw(_pool_bwd(_to_nhwc(grad_out), idx))


def upsample_nearest2x(t: np.ndarray) -> np.ndarray:
    return _to_nchw(_upsample_fwd(_to_nhwc(t)))


def upsample_nearest2x_backward(grad_out: np.ndarray) -> np.ndarray:
    return _to_nchw(_upsample_bwd(_to_nhwc(grad_out)))


def crop_concat(skip: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Center-crop `skip` to `up`'s spatial dims and concatenate (skip first)."""
    if skip.shape[0] != up.shape[0]:
        raise ValueError("batch sizes differ between skip and upsampled tensors")
    cropped, _ = _center_crop(_to_nhwc(skip), up.shape[2], up.shape[3])
    return _to_nchw(np.concatenate([cropped, _to_nhwc(up)], axis=-1))


def spatial_dropout(t: np.ndarray, p: float, rng: np.random.Generator, training: bool = True):
    """Channel-wise inverted dropout on (N, C, H, W); identity at inference."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        return t, np.ones((t.shape[0], t.shape[1], 1, 1))
    keep = rng.random((t.shape[0], t.shape[1], 1, 1)) >= p
    mask = keep.astype(np.float64) / (1.0 - p)
    return t * mask, mask


def standard_dropout(t: np.ndarray, p: float, rng: np.random.Generator, training: bool = True):
    """Element-wise inverted dropout on (N, C, H, W); identity at inference."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        return t, np.ones_like(t)
    keep = rng.random(t.shape) >= p
    mask = keep.astype(np.float64) / (1.0 - p)
    return t * mask, mask


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    """Exp-normalize along `axis` with max subtraction for stability."""
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# full network forward / backward
# ---------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Cached activations and stochastic choices needed for the backward pass."""

    training: bool
    conv_inputs: list = field(default_factory=list)
    relu_masks: list = field(default_factory=list)
    conv_cols: list = field(default_factory=list)
    pool_idx: list = field(default_factory=list)
    drop_masks: list = field(default_factory=list)
    crop_offsets: list = field(default_factory=list)
    skip_shapes: list = field(default_factory=list)


def forward(
    params: ParamSet,
    config: ArchConfig,
    batch: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
):
    """Run the network on an (N, C, H, W) batch; returns (logits, trace).

    In "train" mode dropout is sampled from `rng` and the trace holds
    everything backward() needs; in "infer" mode dropout is the identity.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    training = mode == "train"
    if training and rng is None:
        raise ValueError("train mode needs an rng for dropout sampling")
    if batch.ndim != 4 or batch.shape[1] != config.in_channels:
        raise ValueError(
            f"batch shape {batch.shape} does not match {config.in_channels} input channels"
        )
    shape_walk(config, (batch.shape[2], batch.shape[3]))
    if len(params.weights) != len(conv_plan(config)):
        raise ValueError("parameter count does not match the architecture")

    tr = ForwardTrace(training=training)
    depth = len(config.encoder_convs)
    x = _to_nhwc(batch.astype(np.float64, copy=False))
    li = 0

    cols_out = tr.conv_cols if training else None

    def convs(x, count):
        nonlocal li
        for _ in range(count):
            tr.conv_inputs.append(x)
            x = _conv_fwd(x, params.weights[li], params.biases[li], cols_out)
            np.maximum(x, 0.0, out=x)
            if training:
                tr.relu_masks.append(x > 0.0)
            li += 1
        return x

    def drop(x, p):
        # safe in place: x is this block's last conv output and its sign
        # pattern is already captured in relu_masks
        if not training or p == 0.0:
            tr.drop_masks.append(None)
            return x
        mask = _dropout_mask(x.shape, p, config.dropout_mode, rng)
        tr.drop_masks.append(mask)
        x *= mask
        return x

    skips = []
    for b in range(depth):
        x = convs(x, config.encoder_convs[b])
        x = drop(x, config.dropout_p)
        skips.append(x)
        x, idx = _pool_fwd(x)
        tr.pool_idx.append(idx)
    x = convs(x, config.bottleneck_convs)
    x = drop(x, config.dropout_p)
    for i in range(depth):
        x = _upsample_fwd(x)
        skip = skips[depth - 1 - i]
        cropped, offset = _center_crop(skip, x.shape[1], x.shape[2])
        tr.crop_offsets.append(offset)
        tr.skip_shapes.append(skip.shape)
        x = np.concatenate([cropped, x], axis=-1)
        x = convs(x, config.decoder_convs[i])
        x = drop(x, config.dropout_p_last if i == depth - 1 else config.dropout_p)
    # linear 1x1 head, no activation
    tr.conv_inputs.append(x)
    logits = _conv_fwd(x, params.weights[li], params.biases[li], cols_out)
    if training:
        tr.relu_masks.append(None)
    return _to_nchw(logits), tr


def backward(
    trace: ForwardTrace, config: ArchConfig, params: ParamSet, grad_logits: np.ndarray
) -> ParamSet:
    """Exact parameter gradients for a scalar loss, given d(loss)/d(logits).

    The trace must come from a train-mode forward over the same params.
    """
    if not trace.training:
        raise ValueError("backward needs a trace recorded in train mode")
    nlayers = len(conv_plan(config))
    if len(trace.conv_inputs) != nlayers:
        raise ValueError("trace does not match the architecture")
    depth = len(config.encoder_convs)
    grad_w = [None] * nlayers
    grad_b = [None] * nlayers
    li = nlayers - 1

    cols = trace.conv_cols if trace.conv_cols else [None] * nlayers

    d = _to_nhwc(grad_logits)
    grad_w[li], grad_b[li], d = _conv_bwd(
        trace.conv_inputs[li], params.weights[li], d, cols[li]
    )
    li -= 1

    def convs_bwd(d, count):
        nonlocal li
        for _ in range(count):
            d *= trace.relu_masks[li]
            grad_w[li], grad_b[li], d = _conv_bwd(
                trace.conv_inputs[li], params.weights[li], d, cols[li], need_dx=li > 0
            )
            li -= 1
        return d

    def drop_bwd(d, site):
        # d is freshly owned at every call site, so scale in place
        mask = trace.drop_masks[site]
        if mask is not None:
            d *= mask
        return d

    skip_grads = [None] * depth
    for i in reversed(range(depth)):
        d = drop_bwd(d, depth + 1 + i)
        d = convs_bwd(d, config.decoder_convs[i])
        skip = depth - 1 - i
        sch = trace.skip_shapes[i][-1]
        dskip, dup = d[..., :sch], d[..., sch:]
        full = np.zeros(trace.skip_shapes[i])
        oy, ox = trace.crop_offsets[i]
        th, tw = dskip.shape[1:3]
        full[:, oy : oy + th, ox : ox + tw, :] = dskip
        skip_grads[skip] = full
        d = _upsample_bwd(dup)
    d = drop_bwd(d, depth)
    d = convs_bwd(d, config.bottleneck_convs)
    for b in reversed(range(depth)):
        d = _pool_bwd(d, trace.pool_idx[b])
        d = d + skip_grads[b]
        d = drop_bwd(d, b)
        d = convs_bwd(d, config.encoder_convs[b])
    return ParamSet(grad_w, grad_b)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = (
    "in_channels",
    "classes",
    "base_width",
    "encoder_convs",
    "bottleneck_convs",
    "decoder_convs",
    "dropout_p",
    "dropout_p_last",
    "dropout_mode",
    "channel_mode",
    "kernel",
    "pool",
)


def config_to_text(config: ArchConfig) -> str:
    lines = []
    for name in _CONFIG_FIELDS:
        value = getattr(config, name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ArchConfig:
    values = {}
    for line in text.strip().splitlines():
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_FIELDS:
            raise ValueError(f"unknown architecture key {key!r}")
        if key in values:
            raise ValueError(f"duplicate architecture key {key!r}")
        raw = raw.strip()
        if key in ("encoder_convs", "decoder_convs"):
            values[key] = tuple(int(v) for v in raw.split(","))
        elif key in ("dropout_p", "dropout_p_last"):
            values[key] = float(raw)
        elif key in ("dropout_mode", "channel_mode"):
            values[key] = raw
        else:
            values[key] = int(raw)
    missing = set(_CONFIG_FIELDS) - set(values)
    if missing:
        raise ValueError(f"architecture text is missing keys: {sorted(missing)}")
    return ArchConfig(**values)


def save_model(model: Model) -> bytes:
    """Serialize to bytes: magic, version, config text, then f64 LE tensors."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    cfg = config_to_text(model.config).encode()
    out.write(struct.pack("<I", len(cfg)))
    out.write(cfg)
    out.write(struct.pack("<I", len(model.params.weights)))
    for w, b in zip(model.params.weights, model.params.biases):
        out.write(struct.pack("<4I", *w.shape))
        out.write(w.astype("<f8").tobytes())
        out.write(struct.pack("<I", b.shape[0]))
        out.write(b.astype("<f8").tobytes())
    return out.getvalue()


def load_model(data: bytes) -> Model:
    """Parse save_model() bytes; rejects bad magic/version and truncation."""
    buf = io.BytesIO(data)

    def read(n, what):
        chunk = buf.read(n)
        if len(chunk) != n:
            raise ValueError(f"truncated checkpoint while reading {what}")
        return chunk

    if read(4, "magic") != MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    (version,) = struct.unpack("<I", read(4, "version"))
    if version != FORMAT_VERSION:
        raise ValueError(
            f"checkpoint format version {version} unsupported (this build reads {FORMAT_VERSION})"
        )
    (cfg_len,) = struct.unpack("<I", read(4, "config length"))
    config = config_from_text(read(cfg_len, "config").decode())
    (nlayers,) = struct.unpack("<I", read(4, "layer count"))
    plan = conv_plan(config)
    if nlayers != len(plan):
        raise ValueError(f"checkpoint has {nlayers} layers, architecture needs {len(plan)}")
    weights, biases = [], []
    for li, (cin, cout, k) in enumerate(plan):
        shape = struct.unpack("<4I", read(16, f"layer {li} kernel shape"))
        if shape != (cout, cin, k, k):
            raise ValueError(f"layer {li} kernel shape {shape} != expected {(cout, cin, k, k)}")
        count = int(np.prod(shape))
        w = np.frombuffer(read(8 * count, f"layer {li} kernel"), dtype="<f8")
        weights.append(w.reshape(shape).astype(np.float64))
        (blen,) = struct.unpack("<I", read(4, f"layer {li} bias length"))
        if blen != cout:
            raise ValueError(f"layer {li} bias length {blen} != expected {cout}")
        b = np.frombuffer(read(8 * blen, f"layer {li} bias"), dtype="<f8")
        biases.append(b.astype(np.float64))
    if buf.read(1):
        raise ValueError("trailing bytes after checkpoint payload")
    return Model(config, ParamSet(weights, biases))
