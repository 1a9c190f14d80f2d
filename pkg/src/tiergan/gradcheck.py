"""Central finite-difference checks of every primitive and the reference models.

All checks run in float64.  The error reported for a parameter is
``max|analytic - numeric| / max(max|analytic|, max|numeric|)`` over the
checked entries, falling back to the absolute difference when both
gradients are below ``1e-8``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import ops
from .losses import bce_loss
from .models import (Model, ModelSpec, build_discriminator, build_generator, conv, dense, flatten,
                     leaky_relu, reshape, sequential, sigmoid, upsample)
from .tensor import Tensor, backward, no_grad, precision

TOLERANCE = 1e-4
ABS_FLOOR = 1e-8
DEFAULT_STEP = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    diff = float(np.max(np.abs(a - n)))
    denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))))
    return diff if denom < ABS_FLOOR else diff / denom


@dataclass
class GradCheckReport:
    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.worst < tol


def _entries(size: int, max_entries: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    return np.sort(rng.choice(size, max_entries, replace=False))


def _finite_differences(loss_fn: Callable[[], float], leaves: Dict[str, Tensor], step: float,
                        max_entries: Optional[int], rng: np.random.Generator) -> GradCheckReport:
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in leaves.items()}
    report = GradCheckReport()
    for name, t in leaves.items():
        idx = _entries(t.data.size, max_entries, rng)
        flat = t.data.reshape(-1)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * step)
        report.errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric)
    return report


def check_function(fn: Callable[..., Tensor], inputs: Dict[str, np.ndarray], step: float = DEFAULT_STEP,
                   max_entries: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """Check ``fn(**inputs)``.  Non-scalar outputs are reduced with fixed
    random weights so every entry of the Jacobian contributes."""
    # separate stream: weights drawn from the inputs' seed can be parallel to them
    rng = np.random.default_rng([seed, 1])
    with precision(np.float64):
        leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in inputs.items()}
        out = fn(**leaves)
        weights = None
        if out.size != 1:
            weights = rng.standard_normal(out.shape)
            out = ops.sum(ops.mul(out, Tensor(weights)))
        backward(out)

        def loss_value():
            with no_grad():
                y = fn(**leaves).data
            return float(np.sum(y * weights)) if weights is not None else float(y)

        return _finite_differences(loss_value, leaves, step, max_entries, rng)


def model_loss(out: Tensor, loss: str) -> Tensor:
    if loss == "bce_real":
        return bce_loss(out, 1.0)
    if loss == "bce_fake":
        return bce_loss(out, 0.0)
    if loss == "mean":
        return ops.mean(out)
    raise ValueError(f"unknown loss {loss!r}")


def grad_check(model: Model, x, loss: str = "bce_real", step: float = DEFAULT_STEP,
               max_entries: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """Compare backprop against central differences for every parameter of
    ``model`` (a float64 copy is used; the original is left untouched)."""
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        m = model.astype(np.float64)
        xin = Tensor(np.asarray(getattr(x, "data", x), dtype=np.float64))
        m.zero_grad()
        backward(model_loss(m.forward(xin, train=True), loss))

        def loss_value():
            with no_grad():
                return float(model_loss(m.forward(xin, train=True), loss).data)

        return _finite_differences(loss_value, m.params, step, max_entries, rng)


# ---------------------------------------------------------------------------
# the suite behind `tiergan gradcheck`
# ---------------------------------------------------------------------------

def tiny_generator_spec(latent: int = 8, size: int = 8) -> ModelSpec:
    return sequential((latent,), dense(latent, 2 * (size // 2) ** 2), reshape(2, size // 2, size // 2),
                      leaky_relu(), upsample(2), conv(2, 1, 3, 1, 1), sigmoid())


def tiny_discriminator_spec(size: int = 8) -> ModelSpec:
    return sequential((1, size, size), conv(1, 4, 4, 2, 1), leaky_relu(), flatten(),
                      dense(4 * (size // 2) ** 2, 1), sigmoid())


@dataclass
class SuiteResult:
    kind: str
    worst: float
    passed: bool


def _away_from_zero(rng, shape, lo=0.1):
    x = rng.uniform(lo, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def primitive_cases(rng: np.random.Generator):
    """(kind, fn, inputs) for each primitive."""
    r = rng.standard_normal
    x4 = r((2, 3, 5, 5))
    yield "dense", lambda x, w, b: ops.dense_forward(x, w, b), dict(x=r((3, 4)), w=r((4, 5)), b=r(5))
    yield "conv2d", lambda x, w, b: ops.conv2d_forward(x, w, b, stride=2, padding=1), \
        dict(x=x4, w=r((4, 3, 3, 3)), b=r(4))
    yield "conv2d_transpose", lambda x, w, b: ops.conv2d_transpose_forward(x, w, b, stride=2, padding=1), \
        dict(x=r((2, 3, 4, 4)), w=r((3, 2, 4, 4)), b=r(2))
    yield "batchnorm", lambda x, gamma, beta: ops.batchnorm_forward(x, gamma, beta, "train"), \
        dict(x=x4, gamma=r(3), beta=r(3))
    yield "leaky_relu", lambda x: ops.leaky_relu(x, 0.2), dict(x=_away_from_zero(rng, (3, 7)))
    yield "sigmoid", lambda x: ops.sigmoid(x), dict(x=3 * r((3, 7)))
    labels = Tensor(np.array([[1.0], [0.0], [1.0], [0.0]]))
    yield "bce", lambda p: bce_loss(p, labels), dict(p=rng.uniform(0.1, 0.9, (4, 1)))
    yield "upsample_nearest", lambda x: ops.upsample_nearest(x, 2), dict(x=r((2, 2, 3, 3)))
    yield "downsample_nearest", lambda x: ops.downsample_nearest(x, 2), dict(x=r((2, 2, 4, 4)))
    yield "reshape", lambda x: ops.flatten(x), dict(x=r((2, 2, 3, 3)))


# Pre-activations under the 0.02 training init sit within one finite-difference
# step of the leaky-relu kink, so the reference models are checked at a
# larger-scale parameter point (smaller for D, whose sigmoid saturates first).
CHECK_INIT_STD = 0.3
CHECK_INIT_STD_D = 0.1


def model_cases(rng: np.random.Generator):
    """(kind, model, input, loss, max_entries) for the reference and tiny models."""
    yield "tiny_generator", Model(tiny_generator_spec(), rng), rng.standard_normal((4, 8)), "bce_real", None
    yield "tiny_discriminator", Model(tiny_discriminator_spec(), rng), rng.random((4, 1, 8, 8)), "bce_real", None
    g = Model(build_generator("first", "latent_upsample", (16, 16)), rng, CHECK_INIT_STD)
    yield "reference_generator", g, rng.standard_normal((4, 128)), "bce_real", 12
    g = Model(build_generator("refine", "", (16, 16)), rng, CHECK_INIT_STD)
    yield "reference_refiner", g, rng.random((4, 1, 16, 16)), "bce_real", 12
    d = Model(build_discriminator((16, 16)), rng, CHECK_INIT_STD_D)
    yield "reference_discriminator", d, rng.random((4, 1, 16, 16)), "bce_real", 12


def run_suite(seed: int = 0, tol: float = TOLERANCE) -> List[SuiteResult]:
    rng = np.random.default_rng(seed)
    results = []
    for kind, fn, inputs in primitive_cases(rng):
        rep = check_function(fn, inputs, seed=seed)
        results.append(SuiteResult(kind, rep.worst, rep.passed(tol)))
    with precision(np.float64):
        cases = list(model_cases(rng))
    for kind, model, x, loss, max_entries in cases:
        rep = grad_check(model, x, loss, max_entries=max_entries, seed=seed)
        results.append(SuiteResult(kind, rep.worst, rep.passed(tol)))
    return results


def format_report(results: Sequence[SuiteResult]) -> str:
    lines = [f"{r.kind:<24s} max_rel_err={r.worst:.3e}  {'ok' if r.passed else 'FAIL'}" for r in results]
    return "\n".join(lines)
