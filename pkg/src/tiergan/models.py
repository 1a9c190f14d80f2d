"""Layer descriptions, model specs and the reference G/D architectures."""

from __future__ import annotations

import contextlib
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .errors import GeometryError, ShapeError
from .tensor import Tensor, as_tensor, default_dtype

Shape = Tuple[int, ...]

INIT_STD = 0.02
LEAKY_ALPHA = 0.2
LATENT_DIM = 128


@dataclass(frozen=True)
class Layer:
    """One entry of a sequential model.

    ``kind`` is one of dense, conv, conv_transpose, batchnorm, leaky_relu,
    sigmoid, reshape, flatten, upsample.  Only the fields relevant to the
    kind are meaningful.
    """

    kind: str
    n_in: int = 0
    n_out: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    alpha: float = 0.0
    shape: Tuple[int, ...] = ()
    factor: int = 1

    def geometry(self) -> ops.ConvGeometry:
        return ops.ConvGeometry(self.kernel, self.stride, self.padding, self.n_in, self.n_out)

    def out_shape(self, in_shape: Shape) -> Shape:
        k = self.kind
        if k == "dense":
            if in_shape != (self.n_in,):
                raise ShapeError(f"dense expects ({self.n_in},), got {in_shape}")
            return (self.n_out,)
        if k in ("conv", "conv_transpose"):
            if len(in_shape) != 3 or in_shape[0] != self.n_in:
                raise ShapeError(f"{k} expects ({self.n_in}, H, W), got {in_shape}")
            g = self.geometry()
            hw = g.conv_out(*in_shape[1:]) if k == "conv" else g.transpose_out(*in_shape[1:])
            return (self.n_out,) + hw
        if k == "batchnorm":
            if in_shape[0] != self.n_in:
                raise ShapeError(f"batchnorm over {self.n_in} channels got {in_shape}")
            return in_shape
        if k in ("leaky_relu", "sigmoid"):
            return in_shape
        if k == "reshape":
            if int(np.prod(self.shape)) != int(np.prod(in_shape)):
                raise ShapeError(f"cannot reshape {in_shape} into {self.shape}")
            return tuple(self.shape)
        if k == "flatten":
            return (int(np.prod(in_shape)),)
        if k == "upsample":
            c, h, w = in_shape
            return (c, h * self.factor, w * self.factor)
        raise ValueError(f"unknown layer kind {k!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d


def dense(n_in, n_out):
    return Layer("dense", n_in=n_in, n_out=n_out)


def conv(n_in, n_out, kernel, stride=1, padding=0):
    return Layer("conv", n_in=n_in, n_out=n_out, kernel=kernel, stride=stride, padding=padding)


def conv_transpose(n_in, n_out, kernel, stride=1, padding=0):
    return Layer("conv_transpose", n_in=n_in, n_out=n_out, kernel=kernel, stride=stride, padding=padding)


def batchnorm(channels):
    return Layer("batchnorm", n_in=channels, n_out=channels)


def leaky_relu(alpha=LEAKY_ALPHA):
    return Layer("leaky_relu", alpha=alpha)


def sigmoid():
    return Layer("sigmoid")


def reshape(*shape):
    return Layer("reshape", shape=tuple(shape))


def flatten():
    return Layer("flatten")


def upsample(factor):
    return Layer("upsample", factor=factor)


@dataclass(frozen=True)
class ModelSpec:
    input_shape: Shape
    layers: Tuple[Layer, ...]
    shapes: Tuple[Shape, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.out_shape(shapes[-1]))
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def output_shape(self) -> Shape:
        return self.shapes[-1]

    def to_json(self) -> str:
        payload = {"input_shape": list(self.input_shape), "layers": [l.to_dict() for l in self.layers]}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_json().encode()).digest()


def spec_digest(*specs: ModelSpec) -> bytes:
    h = hashlib.sha256()
    for s in specs:
        h.update(s.digest())
    return h.digest()


def _check_size(size) -> Tuple[int, int]:
    h, w = (size, size) if isinstance(size, int) else tuple(size)
    for v in (h, w):
        if v < 16 or v & (v - 1):
            raise GeometryError(f"image size must be a power of two >= 16, got {h}x{w}")
    return h, w


def build_generator(stage: str = "first", variant: str = "latent_upsample", out_size=(128, 128),
                    latent_dim: int = LATENT_DIM, alpha: float = LEAKY_ALPHA) -> ModelSpec:
    """Reference generators.

    ``first`` + ``latent_upsample``: dense latent -> (64, H/8, W/8), three
    stride-2 transposed convs with batch norm (64->32->16->8 channels), then
    a 3x3 conv to one sigmoid channel.

    ``refine`` (and ``first`` + ``dense_noise``, which feeds an image-sized
    noise field): conv encoder to 16 and 32 channels at stride 2, transposed
    conv decoder back to one sigmoid channel at full size.
    """
    h, w = _check_size(out_size)
    if stage == "first" and variant == "latent_upsample":
        layers = [dense(latent_dim, (h // 8) * (w // 8) * 64), reshape(64, h // 8, w // 8)]
        for c_in, c_out in ((64, 32), (32, 16), (16, 8)):
            layers += [conv_transpose(c_in, c_out, 4, 2, 1), batchnorm(c_out), leaky_relu(alpha)]
        layers += [conv(8, 1, 3, 1, 1), sigmoid()]
        return ModelSpec((latent_dim,), layers)
    if stage == "refine" or (stage == "first" and variant == "dense_noise"):
        layers = [
            conv(1, 16, 4, 2, 1), leaky_relu(alpha),
            conv(16, 32, 4, 2, 1), leaky_relu(alpha),
            conv_transpose(32, 16, 4, 2, 1), leaky_relu(alpha),
            conv_transpose(16, 1, 4, 2, 1), sigmoid(),
        ]
        return ModelSpec((1, h, w), layers)
    raise ValueError(f"unsupported generator stage/variant {stage!r}/{variant!r}")


def build_discriminator(in_size=(128, 128), alpha: float = LEAKY_ALPHA) -> ModelSpec:
    h, w = _check_size(in_size)
    layers = []
    c_in = 1
    for c_out in (16, 32, 64, 128):
        layers += [conv(c_in, c_out, 4, 2, 1), leaky_relu(alpha)]
        c_in = c_out
    layers += [flatten(), dense(128 * (h // 16) * (w // 16), 1), sigmoid()]
    return ModelSpec((1, h, w), layers)


class Model:
    """Parameters and batch-norm buffers instantiated from a :class:`ModelSpec`.

    Parameter names are ``"{layer_index}.{weight|bias|gamma|beta}"``;
    running statistics live in ``buffers`` as
    ``"{layer_index}.running_mean"`` / ``"{layer_index}.running_var"``.
    """

    def __init__(self, spec: ModelSpec, rng: Optional[np.random.Generator] = None,
                 init_std: float = INIT_STD, dtype=None):
        self.spec = spec
        dtype = np.dtype(dtype or default_dtype())
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: Dict[str, Tensor] = {}
        self.bn: Dict[int, ops.BatchNormState] = {}
        for i, layer in enumerate(spec.layers):
            if layer.kind == "dense":
                w = rng.normal(0.0, init_std, (layer.n_in, layer.n_out))
                self._add(f"{i}.weight", w, dtype)
                self._add(f"{i}.bias", np.zeros(layer.n_out), dtype)
            elif layer.kind == "conv":
                w = rng.normal(0.0, init_std, (layer.n_out, layer.n_in, layer.kernel, layer.kernel))
                self._add(f"{i}.weight", w, dtype)
                self._add(f"{i}.bias", np.zeros(layer.n_out), dtype)
            elif layer.kind == "conv_transpose":
                w = rng.normal(0.0, init_std, (layer.n_in, layer.n_out, layer.kernel, layer.kernel))
                self._add(f"{i}.weight", w, dtype)
                self._add(f"{i}.bias", np.zeros(layer.n_out), dtype)
            elif layer.kind == "batchnorm":
                self._add(f"{i}.gamma", np.ones(layer.n_in), dtype)
                self._add(f"{i}.beta", np.zeros(layer.n_in), dtype)
                self.bn[i] = ops.BatchNormState(layer.n_in, dtype)

    def _add(self, name, arr, dtype):
        self.params[name] = Tensor(np.asarray(arr, dtype=dtype), requires_grad=True, name=name)

    @property
    def buffers(self) -> Dict[str, np.ndarray]:
        out = {}
        for i, st in self.bn.items():
            out[f"{i}.running_mean"] = st.running_mean
            out[f"{i}.running_var"] = st.running_var
        return out

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        out.update(self.buffers)
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if arrays[name].shape != p.data.shape:
                raise ShapeError(f"{name}: stored {arrays[name].shape} vs model {p.data.shape}")
            p.data = np.array(arrays[name], dtype=p.data.dtype)
        for i, st in self.bn.items():
            st.running_mean = np.array(arrays[f"{i}.running_mean"], dtype=st.running_mean.dtype)
            st.running_var = np.array(arrays[f"{i}.running_var"], dtype=st.running_var.dtype)

    def astype(self, dtype) -> "Model":
        clone = Model.__new__(Model)
        clone.spec = self.spec
        clone.params = {n: Tensor(p.data.astype(dtype), requires_grad=True, name=n) for n, p in self.params.items()}
        clone.bn = {}
        for i, st in self.bn.items():
            s = ops.BatchNormState(len(st.running_mean), dtype)
            s.running_mean, s.running_var = st.running_mean.astype(dtype), st.running_var.astype(dtype)
            clone.bn[i] = s
        return clone

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> Dict[str, np.ndarray]:
        return {n: p.grad for n, p in self.params.items() if p.grad is not None}

    @contextlib.contextmanager
    def frozen(self):
        """Treat parameters as constants for the duration of the block."""
        for p in self.params.values():
            p.requires_grad = False
        try:
            yield self
        finally:
            for p in self.params.values():
                p.requires_grad = True

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, x, train: bool = True) -> Tensor:
        x = as_tensor(x)
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ShapeError(f"model expects (N,) + {self.spec.input_shape}, got {x.shape}")
        n = x.shape[0]
        for i, layer in enumerate(self.spec.layers):
            k = layer.kind
            if k == "dense":
                x = ops.dense_forward(x, self.params[f"{i}.weight"], self.params[f"{i}.bias"])
            elif k == "conv":
                x = ops.conv2d_forward(x, self.params[f"{i}.weight"], self.params[f"{i}.bias"], layer.geometry())
            elif k == "conv_transpose":
                x = ops.conv2d_transpose_forward(x, self.params[f"{i}.weight"], self.params[f"{i}.bias"],
                                                 layer.geometry())
            elif k == "batchnorm":
                x = ops.batchnorm_forward(x, self.params[f"{i}.gamma"], self.params[f"{i}.beta"],
                                          mode="train" if train else "infer", state=self.bn[i])
            elif k == "leaky_relu":
                x = ops.leaky_relu(x, layer.alpha)
            elif k == "sigmoid":
                x = ops.sigmoid(x)
            elif k == "reshape":
                x = ops.reshape(x, (n,) + tuple(layer.shape))
            elif k == "flatten":
                x = ops.flatten(x)
            elif k == "upsample":
                x = ops.upsample_nearest(x, layer.factor)
        return x

    __call__ = forward


def sequential(input_shape: Sequence[int], *layers: Layer) -> ModelSpec:
    return ModelSpec(tuple(input_shape), layers)
