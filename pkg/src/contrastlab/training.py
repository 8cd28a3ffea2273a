"""Desk-scale training loop for the contrastive objectives.

The encoder is deliberately small (linear, optionally one tanh hidden
layer): what is under study is the loss, and exact gradients matter more
here than capacity.  The default optimizer is the adaptive-moment method at
learning rate 0.001; plain SGD is kept because the single-step oracle test
needs it.  The whole trajectory is deterministic given the seed: data,
batches and init all come from named substreams.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .autograd import LossSpec, loss_and_grad
from .encoder import EncoderParams, ViewBatch, flatten, init_params, unflatten_like
from .errors import BatchTooSmall, ConfigError, DivergenceDetected
from .geometry import unit_rows
from .rng import substream
from .worldmodel import SphereMixture, sample_classes, sample_views

OPTIMIZERS = ("sgd", "momentum", "adam")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    ``anchor_mode`` selects what an anchor identity is.  In "class" mode a
    view is a fresh class-conditional sample, so two views of an anchor are
    exchangeable with any same-class sample.  In "instance" mode (sphere
    worlds only) each anchor is pinned to one base sample drawn at dataset
    build time and a view redraws conditional noise of scale ``view_noise``
    around it; with probability ``class_resample_prob`` a view falls back to
    a fresh class-conditional draw, interpolating between the two regimes.
    """

    loss_kind: str = "debiased"
    tau_plus: float = 0.1
    temperature: float = 0.5
    m_positives: int = 1
    floor_mode: str = "exp_floor"
    batch_size: int = 64
    epochs: int = 200
    learning_rate: float = 0.001
    optimizer: str = "adam"
    seed: int = 0
    dataset_size: int = 512
    embed_dim: int = 16
    hidden_dim: int = 0
    anchor_mode: str = "class"
    view_noise: float = 0.0
    class_resample_prob: float = 0.0
    tail_average: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate < 0.0:
            raise ConfigError("learning_rate must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.m_positives < 1:
            raise ConfigError("m_positives must be >= 1")
        if self.anchor_mode not in ("class", "instance"):
            raise ConfigError("anchor_mode must be class | instance")
        if self.anchor_mode == "instance" and not self.view_noise > 0.0:
            raise ConfigError("instance mode needs view_noise > 0")
        if not (0.0 <= self.class_resample_prob <= 1.0):
            raise ConfigError("class_resample_prob must lie in [0, 1]")
        if not (0 <= self.tail_average <= self.epochs):
            raise ConfigError("tail_average must lie in [0, epochs]")

    def loss_spec(self) -> LossSpec:
        return LossSpec(kind=self.loss_kind, tau_plus=self.tau_plus,
                        temperature=self.temperature, floor_mode=self.floor_mode)


@dataclass(frozen=True)
class TrainDataset:
    """Fixed anchor identities; views are redrawn per batch.

    ``base_points`` is present only in instance mode: one pinned sample per
    anchor, around which views redraw conditional noise.
    """

    world: object
    labels: np.ndarray
    base_points: np.ndarray | None = None
    view_noise: float = 0.0
    class_resample_prob: float = 0.0

    @property
    def size(self) -> int:
        return self.labels.shape[0]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    wall_ms: float


def build_dataset(world, size: int, rng: np.random.Generator,
                  anchor_mode: str = "class", view_noise: float = 0.0,
                  class_resample_prob: float = 0.0) -> TrainDataset:
    labels = sample_classes(world, size, rng)
    if anchor_mode == "class":
        return TrainDataset(world=world, labels=labels)
    if anchor_mode != "instance":
        raise ConfigError("anchor_mode must be class | instance")
    if not isinstance(world, SphereMixture):
        raise ConfigError("instance mode is defined for sphere worlds only")
    base = sample_views(world, labels, rng)
    return TrainDataset(world=world, labels=labels, base_points=base,
                        view_noise=view_noise,
                        class_resample_prob=class_resample_prob)


def _draw_views(dataset: TrainDataset, idx: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    labels = dataset.labels[idx]
    if dataset.base_points is None:
        return sample_views(dataset.world, labels, rng)
    base = dataset.base_points[idx]
    views = unit_rows(base + dataset.view_noise * rng.standard_normal(base.shape))
    if dataset.class_resample_prob > 0.0:
        flip = rng.random(idx.shape[0]) < dataset.class_resample_prob
        if flip.any():
            views[flip] = sample_views(dataset.world, labels[flip], rng)
    return views


def _fresh_views(dataset: TrainDataset, labels: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """Views of freshly drawn identities with the given labels."""
    views = sample_views(dataset.world, labels, rng)
    if dataset.base_points is not None and dataset.view_noise > 0.0:
        views = unit_rows(views + dataset.view_noise * rng.standard_normal(views.shape))
    return views


def make_batches(dataset: TrainDataset, batch_size: int, m_positives: int,
                 rng: np.random.Generator, negative_pool: int = 0) -> list[ViewBatch]:
    """One epoch of view-pair batches under a seeded permutation.

    Every batch carries two primary views plus (M-1) extra positive views
    per anchor; ``negative_pool`` additionally stacks that many labeled
    fresh views for the true-negative loss.  A trailing partial batch is
    dropped, so batch_size == dataset size means exactly one batch per
    epoch.
    """
    if dataset.size < batch_size:
        raise BatchTooSmall(f"dataset size {dataset.size} < batch size {batch_size}")
    perm = rng.permutation(dataset.size)
    batches = []
    for start in range(0, dataset.size - batch_size + 1, batch_size):
        idx = perm[start:start + batch_size]
        views = [_draw_views(dataset, idx, rng) for _ in range(m_positives + 1)]
        pool_labels = None
        if negative_pool:
            pool_labels = sample_classes(dataset.world, negative_pool, rng)
            views.append(_fresh_views(dataset, pool_labels, rng))
        batches.append(ViewBatch(features=np.concatenate(views, axis=0),
                                 batch_size=batch_size, m_positives=m_positives,
                                 labels=dataset.labels[idx],
                                 neg_pool_labels=pool_labels))
    return batches


class _Optimizer:
    """First-order updates on the flattened parameter vector."""

    def __init__(self, name: str, learning_rate: float, size: int) -> None:
        self.name = name
        self.lr = learning_rate
        self.momentum = np.zeros(size)
        self.second = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.name == "sgd":
            return theta - self.lr * grad
        if self.name == "momentum":
            self.momentum = 0.9 * self.momentum + grad
            return theta - self.lr * self.momentum
        # adaptive-moment estimation with standard constants
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.t += 1
        self.momentum = b1 * self.momentum + (1.0 - b1) * grad
        self.second = b2 * self.second + (1.0 - b2) * grad ** 2
        m_hat = self.momentum / (1.0 - b1 ** self.t)
        v_hat = self.second / (1.0 - b2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + eps)


def train(config: TrainConfig, world) -> tuple[EncoderParams, list[EpochRecord]]:
    """Run the configured training and return final params plus the log.

    Substreams: (seed, 0) dataset, (seed, 1) parameter init, (seed, 2, epoch)
    batches, so the trajectory is bit-reproducible.
    """
    dataset = build_dataset(world, config.dataset_size, substream(config.seed, 0),
                            anchor_mode=config.anchor_mode,
                            view_noise=config.view_noise,
                            class_resample_prob=config.class_resample_prob)
    params = init_params(substream(config.seed, 1), world.feature_dim,
                         config.embed_dim, config.hidden_dim)
    spec = config.loss_spec()
    theta = flatten(params)
    opt = _Optimizer(config.optimizer, config.learning_rate, theta.size)
    # The true-negative trainer draws its negatives fresh from the world's
    # complement classes rather than reusing in-batch views.
    pool = 2 * (config.batch_size - 1) if config.loss_kind == "unbiased" else 0
    log: list[EpochRecord] = []
    tail_sum = np.zeros_like(theta)
    tail_count = 0
    for epoch in range(config.epochs):
        tic = time.perf_counter()
        batch_rng = substream(config.seed, 2, epoch)
        epoch_losses = []
        for batch in make_batches(dataset, config.batch_size, config.m_positives,
                                  batch_rng, negative_pool=pool):
            params = unflatten_like(params, theta)
            loss, grads = loss_and_grad(params, batch, spec)
            if not np.isfinite(loss.value):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}")
            theta = opt.step(theta, flatten(grads))
            epoch_losses.append(loss.value)
        if config.epochs - epoch <= config.tail_average:
            tail_sum += theta
            tail_count += 1
        wall_ms = (time.perf_counter() - tic) * 1000.0
        log.append(EpochRecord(epoch=epoch, loss=float(np.mean(epoch_losses)), wall_ms=wall_ms))
    if tail_count:
        theta = tail_sum / tail_count
    return unflatten_like(params, theta), log


def save_checkpoint(path, params: EncoderParams, config_hash: str, meta: dict | None = None) -> None:
    """Versioned JSON dump of encoder parameters plus the config hash."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "weights": params.weights.tolist(),
        "hidden_weights": None if params.hidden_weights is None else params.hidden_weights.tolist(),
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[EncoderParams, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"checkpoint version {payload.get('format_version')} != {CHECKPOINT_VERSION}")
    hidden = payload["hidden_weights"]
    params = EncoderParams(weights=np.array(payload["weights"]),
                           hidden_weights=None if hidden is None else np.array(hidden))
    return params, payload
