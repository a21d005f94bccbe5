"""Loss, Nesterov SGD with the staged learning-rate schedule, and the train loop.

The learning rate and momentum follow a step table keyed by epoch; at
every table boundary the rate resets to the tabled value and in between
it decays as eta_n = eta_{n-1} / (1 + lambda * n) with n the global
update counter.  All randomness flows from one seed, so a (seed, config,
dataset) triple fully determines the final checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network, patches
from .network import ArchConfig, Model, ParamSet
from .wavelet import InputStack

AUGMENT_MODES = ("rotations", "none", "oversample", "elastic")

LOG_EPS = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 4
    lr_table: dict[int, float] = field(
        default_factory=lambda: {1: 0.05, 10: 0.02, 14: 0.002, 18: 0.0002}
    )
    momentum_table: dict[int, float] = field(
        default_factory=lambda: {1: 0.2, 10: 0.9, 14: 0.99}
    )
    decay: float = 1e-6
    seed: int = 0
    patches_per_image: int = 2750
    augment: str = "rotations"
    consecutive_rotations: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        for table in (self.lr_table, self.momentum_table):
            keys = list(table)
            if keys != sorted(keys) or keys[0] != 1:
                raise ValueError("schedule tables must have ascending keys starting at 1")
            if any(v <= 0 for v in table.values()):
                raise ValueError("schedule values must be positive")
        if self.decay < 0:
            raise ValueError("decay must be nonnegative")
        if self.patches_per_image < 1:
            raise ValueError("patches_per_image must be positive")
        if self.augment not in AUGMENT_MODES:
            raise ValueError(f"augment must be one of {AUGMENT_MODES}")


@dataclass
class OptimizerState:
    """Velocity per parameter tensor, plus the global update counter."""

    vel_w: list[np.ndarray]
    vel_b: list[np.ndarray]
    n: int = 0
    lr: float = 0.0

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "OptimizerState":
        return cls(
            vel_w=[np.zeros_like(w) for w in params.weights],
            vel_b=[np.zeros_like(b) for b in params.biases],
        )


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean categorical cross-entropy over every pixel of the mini-batch.

    probs and targets are (N, K, H, W); targets must be one-hot per pixel.
    The clamp below only guards the logarithm.
    """
    if probs.shape != targets.shape:
        raise ValueError(f"probs shape {probs.shape} != targets shape {targets.shape}")
    if not np.array_equal(targets, targets.astype(bool)) or not np.all(
        targets.sum(axis=1) == 1.0
    ):
        raise ValueError("targets must be one-hot per pixel")
    m = probs.shape[0] * probs.shape[2] * probs.shape[3]
    return float(-(targets * np.log(np.maximum(probs, LOG_EPS))).sum() / m)


def cross_entropy_backward(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of cross_entropy w.r.t. the logits feeding the softmax."""
    m = probs.shape[0] * probs.shape[2] * probs.shape[3]
    return (probs - targets) / m


def schedule_lookup(cfg: TrainConfig, epoch: int) -> tuple[float, float]:
    """Step-function lookup: the most recent table row at or before `epoch`."""
    if not 1 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside 1..{cfg.epochs}")
    lr = max(e for e in cfg.lr_table if e <= epoch)
    mom = max(e for e in cfg.momentum_table if e <= epoch)
    return cfg.lr_table[lr], cfg.momentum_table[mom]


def lr_decay_step(lr_prev: float, decay: float, n: int) -> float:
    """In-between-epochs decay: eta_n = eta_{n-1} / (1 + lambda * n)."""
    if lr_prev <= 0 or n < 1:
        raise ValueError("need a positive previous rate and update index >= 1")
    return lr_prev / (1.0 + decay * n)


def nesterov_step(params: ParamSet, state: OptimizerState, grad_fn, lr: float, momentum: float):
    """One lookahead-momentum update: v <- nu*v - eta*grad(w + nu*v); w <- w + v.

    grad_fn evaluates the loss gradient at an arbitrary parameter point and
    returns (ParamSet gradients, loss).
    """
    look = ParamSet(
        weights=[w + momentum * v for w, v in zip(params.weights, state.vel_w)],
        biases=[b + momentum * v for b, v in zip(params.biases, state.vel_b)],
    )
    grads, loss = grad_fn(look)
    for g in grads.weights + grads.biases:
        if not np.all(np.isfinite(g)):
            raise RuntimeError("non-finite gradient encountered; aborting")
    state.vel_w = [momentum * v - lr * g for v, g in zip(state.vel_w, grads.weights)]
    state.vel_b = [momentum * v - lr * g for v, g in zip(state.vel_b, grads.biases)]
    new = ParamSet(
        weights=[w + v for w, v in zip(params.weights, state.vel_w)],
        biases=[b + v for b, v in zip(params.biases, state.vel_b)],
    )
    state.n += 1
    state.lr = lr
    return new, state, loss


@dataclass(frozen=True)
class _ElasticEntry:
    """Deferred elastic copy; materialized per batch to keep memory flat."""

    base: patches.PatchPair
    alpha: float
    sigma: float
    seed: np.random.SeedSequence


def _build_entries(train_cfg, dataset, sample_rng, order_rng, elastic_ss, context):
    base = []
    per_image = train_cfg.patches_per_image
    if train_cfg.augment == "oversample":
        per_image *= 4
    for stack, labels, fov in dataset:
        base.extend(
            patches.sample_training_patches(
                stack, labels, fov, per_image, sample_rng, context=context
            )
        )
    if train_cfg.augment == "rotations":
        return patches.augment_rotations(base, order_rng, train_cfg.consecutive_rotations)
    if train_cfg.augment == "elastic":
        seeds = elastic_ss.spawn(3 * len(base))
        entries: list = []
        for i, p in enumerate(base):
            entries.append(p)
            for j, (alpha, sigma) in enumerate(patches.ELASTIC_COMBOS):
                entries.append(_ElasticEntry(p, alpha, sigma, seeds[3 * i + j]))
        return entries
    return base


def _materialize(entries) -> tuple[np.ndarray, np.ndarray]:
    """Stack patch entries into (B, C, H, W) inputs and one-hot (B, 2, h, w)."""
    resolved = [
        patches.elastic_deform(e.base, e.alpha, e.sigma, np.random.Generator(np.random.PCG64(e.seed)))
        if isinstance(e, _ElasticEntry)
        else e
        for e in entries
    ]
    x = np.ascontiguousarray(np.stack([p.input for p in resolved]), dtype=np.float64)
    t = np.stack([p.target for p in resolved])
    y = np.stack([t == 0, t == 1], axis=1).astype(np.float64)
    return x, y


def train(
    train_cfg: TrainConfig,
    arch_cfg: ArchConfig,
    dataset: list[tuple[InputStack, np.ndarray, np.ndarray]],
    on_epoch=None,
) -> tuple[Model, list[tuple[int, float, float]]]:
    """Full training run; returns the model and per-epoch (epoch, loss, lr) rows.

    `on_epoch(epoch, model, entry)` fires after each epoch, e.g. for
    checkpointing.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    ss = np.random.SeedSequence(train_cfg.seed)
    init_ss, sample_ss, order_ss, drop_ss, elastic_ss = ss.spawn(5)
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    sample_rng = np.random.Generator(np.random.PCG64(sample_ss))
    order_rng = np.random.Generator(np.random.PCG64(order_ss))
    drop_rng = np.random.Generator(np.random.PCG64(drop_ss))

    params = network.xavier_init(arch_cfg, init_rng)
    state = OptimizerState.zeros_like(params)
    entries = _build_entries(
        train_cfg, dataset, sample_rng, order_rng, elastic_ss, network.margin(arch_cfg)
    )
    log: list[tuple[int, float, float]] = []
    lr = 0.0
    bs = train_cfg.batch_size

    for epoch in range(1, train_cfg.epochs + 1):
        lr_base, momentum = schedule_lookup(train_cfg, epoch)
        if epoch in train_cfg.lr_table:
            lr = lr_base
        perm = order_rng.permutation(len(entries))
        losses = []
        for start in range(0, len(entries), bs):
            lr = lr_decay_step(lr, train_cfg.decay, state.n + 1)
            x, y = _materialize([entries[i] for i in perm[start : start + bs]])

            def grad_fn(at: ParamSet):
                logits, tr = network.forward(at, arch_cfg, x, "train", drop_rng)
                probs = network.softmax(logits)
                loss = cross_entropy(probs, y)
                if not np.isfinite(loss):
                    raise RuntimeError(f"non-finite loss at epoch {epoch}, update {state.n + 1}")
                grads = network.backward(tr, arch_cfg, at, cross_entropy_backward(probs, y))
                return grads, loss

            params, state, loss = nesterov_step(params, state, grad_fn, lr, momentum)
            losses.append(loss)
        entry = (epoch, float(np.mean(losses)), lr)
        log.append(entry)
        if on_epoch is not None:
            on_epoch(epoch, Model(arch_cfg, params), entry)
    return Model(arch_cfg, params), log
