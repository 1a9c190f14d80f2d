"""Binary cross-entropy and the empirical minimax value."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Function, Tensor, as_tensor

PROB_CLAMP = 1e-7
NON_SATURATING = "non_saturating"
SATURATING = "saturating"


@dataclass(frozen=True)
class LossConfig:
    g_loss_variant: str = NON_SATURATING
    label_real: float = 1.0
    label_fake: float = 0.0
    prob_clamp: float = PROB_CLAMP

    def __post_init__(self):
        if self.g_loss_variant not in (NON_SATURATING, SATURATING):
            raise ValueError(f"unknown generator loss variant {self.g_loss_variant!r}")
        if not 0.0 < self.prob_clamp <= 0.01:
            raise ValueError(f"prob_clamp must lie in (0, 0.01], got {self.prob_clamp}")
        if (self.label_real, self.label_fake) != (1.0, 0.0):
            raise ValueError("labels are fixed at real=1, fake=0")


class BinaryCrossEntropy(Function):
    name = "bce"

    @staticmethod
    def forward(ctx, p, y, clamp):
        # accumulate in float64, hand back the input dtype
        p64 = p.astype(np.float64)
        pc = np.clip(p64, clamp, 1.0 - clamp)
        y64 = y.astype(np.float64)
        ctx.inside = (p64 >= clamp) & (p64 <= 1.0 - clamp)
        ctx.pc, ctx.y, ctx.dtype = pc, y64, p.dtype
        loss = -np.mean(y64 * np.log(pc) + (1.0 - y64) * np.log1p(-pc))
        return np.asarray(loss, dtype=p.dtype)

    @staticmethod
    def backward(ctx, g):
        pc, y = ctx.pc, ctx.y
        gp = (pc - y) / (pc * (1.0 - pc)) / pc.size
        gp = np.where(ctx.inside, gp, 0.0) * float(g)
        return gp.astype(ctx.dtype), None


def bce_loss(p, y, clamp: float = PROB_CLAMP) -> Tensor:
    """Mean of ``-[y ln p + (1 - y) ln(1 - p)]`` with ``p`` clamped to
    ``[clamp, 1 - clamp]``.  Clamped entries receive zero gradient."""
    p = as_tensor(p)
    if isinstance(y, Tensor):
        pass
    elif np.ndim(y) == 0:
        y = Tensor(np.full(p.shape, y, dtype=p.dtype))
    else:
        y = Tensor(np.asarray(y, dtype=p.dtype))
    if p.shape != y.shape:
        raise ShapeError(f"bce_loss shape mismatch: p{p.shape} vs y{y.shape}")
    return BinaryCrossEntropy.apply(p, y, clamp=clamp)


def value_function(d_real, d_fake, clamp: float = PROB_CLAMP) -> float:
    """Empirical ``E[ln D(x)] + E[ln(1 - D(G(z)))]`` over one batch."""
    r = np.clip(np.asarray(getattr(d_real, "data", d_real), dtype=np.float64), clamp, 1.0 - clamp)
    f = np.clip(np.asarray(getattr(d_fake, "data", d_fake), dtype=np.float64), clamp, 1.0 - clamp)
    return float(np.mean(np.log(r)) + np.mean(np.log1p(-f)))


def discriminator_loss(p_real, p_fake, cfg: LossConfig = LossConfig()) -> Tensor:
    """BCE(D(x_real), 1) + BCE(D(G(z)), 0)."""
    return bce_loss(p_real, cfg.label_real, cfg.prob_clamp) + bce_loss(p_fake, cfg.label_fake, cfg.prob_clamp)


def generator_loss(p_fake, cfg: LossConfig = LossConfig()) -> Tensor:
    """Non-saturating ``-E[ln D(G(z))]`` by default; the saturating variant
    minimises ``E[ln(1 - D(G(z)))]`` directly."""
    if cfg.g_loss_variant == NON_SATURATING:
        return bce_loss(p_fake, cfg.label_real, cfg.prob_clamp)
    return -bce_loss(p_fake, cfg.label_fake, cfg.prob_clamp)
