import numpy as np
import pytest

from tiergan.errors import GeometryError, ShapeError
from tiergan.models import (Model, build_discriminator, build_generator, dense, flatten, reshape, sequential,
                            sigmoid, spec_digest)
from tiergan.tensor import no_grad


def test_latent_generator_chains_to_128():
    spec = build_generator("first", "latent_upsample", (128, 128))
    assert spec.input_shape == (128,)
    assert spec.output_shape == (1, 128, 128)
    assert spec.shapes[2] == (64, 16, 16)
    kinds = [l.kind for l in spec.layers]
    assert kinds.count("conv_transpose") == 3 and kinds.count("batchnorm") == 3 and kinds[-1] == "sigmoid"


def test_refiner_is_same_size():
    spec = build_generator("refine", "latent_upsample", (128, 128))
    assert spec.input_shape == spec.output_shape == (1, 128, 128)


def test_discriminator_shape_arithmetic():
    spec = build_discriminator((128, 128))
    dense_layer = [l for l in spec.layers if l.kind == "dense"][0]
    assert dense_layer.n_in == 128 * 64
    assert spec.output_shape == (1,)


@pytest.mark.parametrize("size", [8, 12, 48, (32, 24)])
def test_unsupported_sizes(size):
    with pytest.raises(GeometryError):
        build_discriminator(size)
    with pytest.raises(GeometryError):
        build_generator("first", "latent_upsample", size)


def test_chain_mismatch_rejected():
    with pytest.raises(ShapeError):
        sequential((4,), dense(5, 2), sigmoid())


def test_fresh_generator_on_zero_latent_in_open_interval():
    g = Model(build_generator("first", "latent_upsample", (32, 32)), np.random.default_rng(0))
    with no_grad():
        y = g.forward(np.zeros((2, 128), np.float32), train=False).data
    assert y.shape == (2, 1, 32, 32)
    assert np.all(np.isfinite(y)) and np.all((y > 0) & (y < 1))


def test_fresh_discriminator_is_non_degenerate(rng):
    d = Model(build_discriminator((32, 32)), np.random.default_rng(0))
    with no_grad():
        p = d.forward(rng.random((8, 1, 32, 32)).astype(np.float32)).data
    assert p.shape == (8, 1)
    assert np.all(np.abs(p - 0.5) < 0.4)


def test_init_statistics():
    g = Model(build_generator("first", "latent_upsample", (128, 128)), np.random.default_rng(3))
    w = g.params["0.weight"].data
    assert abs(float(w.std()) - 0.02) < 1e-3
    assert not np.any(g.params["0.bias"].data)


def test_digest_tracks_architecture():
    a = build_discriminator((32, 32))
    assert a.digest() == build_discriminator((32, 32)).digest()
    assert a.digest() != build_discriminator((64, 64)).digest()
    assert len(spec_digest(a, a)) == 32


def test_frozen_blocks_gradients():
    spec = sequential((1, 2, 2), flatten(), dense(4, 1), sigmoid())
    d = Model(spec)
    with d.frozen():
        out = d.forward(np.ones((2, 1, 2, 2), np.float32))
    assert not out.requires_grad
    assert all(p.requires_grad for p in d.params.values())


def test_reshape_layer_shape():
    spec = sequential((8,), dense(8, 12), reshape(3, 2, 2))
    assert spec.output_shape == (3, 2, 2)
