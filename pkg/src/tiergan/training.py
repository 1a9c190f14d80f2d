"""Alternating adversarial training: one discriminator step, one generator step per batch."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import NonFiniteGradientError, ShapeError, TrainingDiverged
from .losses import NON_SATURATING, LossConfig, discriminator_loss, generator_loss
from .models import LATENT_DIM, Model, ModelSpec
from .optim import AdamState, adam_step
from .tensor import backward, no_grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "latent_vector"
    dims: tuple = (LATENT_DIM,)
    distribution: str = "normal"

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.kind not in ("latent_vector", "image_field"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.distribution not in ("normal", "uniform"):
            raise ValueError(f"unknown noise distribution {self.distribution!r}")
        if self.kind == "latent_vector" and self.dims != (LATENT_DIM,):
            raise ValueError(f"latent_vector noise is {LATENT_DIM}-dimensional, got {self.dims}")
        if self.kind == "image_field" and len(self.dims) != 3:
            raise ValueError(f"image_field noise needs (C, H, W) dims, got {self.dims}")


def sample_noise(spec: NoiseSpec, m: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    if m < 1:
        raise ValueError(f"batch size must be >= 1, got {m}")
    shape = (m,) + spec.dims
    if spec.distribution == "normal":
        return rng.standard_normal(shape, dtype=np.float64).astype(dtype)
    return rng.random(shape, dtype=np.float64).astype(dtype)


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 8
    lr_g: float = 0.0001
    lr_d: float = 0.00001
    seed: int = 0
    g_loss_variant: str = NON_SATURATING
    log_every: int = 50
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        self.loss = LossConfig(g_loss_variant=self.g_loss_variant)


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    step: int
    d_loss: float
    g_loss: float


@dataclass
class TrainState:
    """Everything needed to continue a run bit-exactly."""

    g: Model
    d: Model
    opt_g: AdamState
    opt_d: AdamState
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    history: List[LossRecord] = field(default_factory=list)
    status: str = "partial"


def check_pair(g_spec: ModelSpec, d_spec: ModelSpec) -> None:
    if g_spec.layers[-1].kind != "sigmoid" or len(g_spec.output_shape) != 3 or g_spec.output_shape[0] != 1:
        raise ShapeError(f"generator must end in a sigmoid over (1, H, W), got {g_spec.output_shape}")
    if d_spec.layers[-1].kind != "sigmoid" or d_spec.output_shape != (1,):
        raise ShapeError(f"discriminator must end in a sigmoid over one unit, got {d_spec.output_shape}")
    if g_spec.output_shape != d_spec.input_shape:
        raise ShapeError(f"generator output {g_spec.output_shape} does not feed discriminator input {d_spec.input_shape}")


def init_state(g_spec: ModelSpec, d_spec: ModelSpec, config: TrainConfig,
               rng: Optional[np.random.Generator] = None) -> TrainState:
    check_pair(g_spec, d_spec)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    g = Model(g_spec, rng)
    d = Model(d_spec, rng)
    return TrainState(g, d, AdamState(lr=config.lr_g), AdamState(lr=config.lr_d), rng)


def _finite_or_raise(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(f"{what} became {value} at step {step}", step=step)


def d_train_step(d: Model, g: Model, real_batch, z, opt_d: AdamState, config: TrainConfig) -> float:
    """Update the discriminator once; the generator's parameters are not touched."""
    with no_grad():
        fake = g.forward(z, train=True).data
    d.zero_grad()
    loss = discriminator_loss(d.forward(real_batch), d.forward(fake), config.loss)
    value = float(loss.data)
    _finite_or_raise(value, "d_loss", opt_d.t)
    backward(loss)
    try:
        adam_step(d.params, d.grads(), opt_d)
    except NonFiniteGradientError as exc:
        raise TrainingDiverged(f"discriminator: {exc}", step=opt_d.t) from exc
    return value


def g_train_step(d: Model, g: Model, z, opt_g: AdamState, config: TrainConfig) -> float:
    """Update the generator once against a frozen discriminator."""
    g.zero_grad()
    with d.frozen():
        loss = generator_loss(d.forward(g.forward(z, train=True)), config.loss)
    value = float(loss.data)
    _finite_or_raise(value, "g_loss", opt_g.t)
    backward(loss)
    try:
        adam_step(g.params, g.grads(), opt_g)
    except NonFiniteGradientError as exc:
        raise TrainingDiverged(f"generator: {exc}", step=opt_g.t) from exc
    return value


def batches_per_epoch(n: int, m: int) -> int:
    # the trailing partial batch is dropped
    return n // m


def train_gan(g_spec: Optional[ModelSpec], d_spec: Optional[ModelSpec], dataset, config: TrainConfig,
              sink: Optional[Callable[[LossRecord], None]] = None, *,
              noise: NoiseSpec = NoiseSpec(), inputs=None, state: Optional[TrainState] = None,
              stop_after: Optional[int] = None,
              on_epoch_end: Optional[Callable[[TrainState], None]] = None,
              on_diverged: Optional[Callable[[TrainState], None]] = None) -> TrainState:
    """Train a (G, D) pair on ``dataset`` (an ``(N, C, H, W)`` array).

    With ``inputs`` (same length as ``dataset``) the generator is fed the
    paired input images instead of noise.  Passing a previously returned
    ``state`` resumes from its epoch; ``stop_after`` limits the number of
    epochs run in this call.
    """
    data = np.asarray(dataset, dtype=np.float32)
    if data.ndim < 2 or len(data) == 0:
        raise ValueError("dataset is empty")
    n, m = len(data), config.batch_size
    if n < m:
        raise ValueError(f"dataset of {n} images is smaller than one batch of {m}")
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=np.float32)
        if len(inputs) != n:
            raise ShapeError(f"{len(inputs)} generator inputs for {n} targets")
    if state is None:
        state = init_state(g_spec, d_spec, config)

    rng = state.rng
    run_epochs = 0
    while state.epoch < config.epochs:
        if stop_after is not None and run_epochs >= stop_after:
            return state
        perm = rng.permutation(n)
        for b in range(batches_per_epoch(n, m)):
            idx = perm[b * m:(b + 1) * m]
            real = data[idx]
            z = inputs[idx] if inputs is not None else sample_noise(noise, m, rng)
            try:
                d_loss = d_train_step(state.d, state.g, real, z, state.opt_d, config)
                g_loss = g_train_step(state.d, state.g, z, state.opt_g, config)
            except TrainingDiverged as exc:
                exc.epoch, exc.step = state.epoch, state.step
                state.status = "diverged"
                logger.error("training diverged at epoch %d step %d: %s", state.epoch, state.step, exc)
                if on_diverged is not None:
                    on_diverged(state)
                raise
            rec = LossRecord(state.epoch, state.step, d_loss, g_loss)
            state.history.append(rec)
            if sink is not None:
                sink(rec)
            if config.log_every and state.step % config.log_every == 0:
                logger.info("epoch %d step %d d_loss %.6f g_loss %.6f", rec.epoch, rec.step, d_loss, g_loss)
            state.step += 1
        state.epoch += 1
        run_epochs += 1
        if state.epoch >= config.epochs:
            state.status = "trained"
        if on_epoch_end is not None:
            on_epoch_end(state)
    state.status = "trained"
    return state


def generate(g: Model, z) -> np.ndarray:
    with no_grad():
        return g.forward(z, train=False).data

