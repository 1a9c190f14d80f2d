import math

import numpy as np
import pytest

from tiergan.errors import TrainingDiverged
from tiergan.gradcheck import tiny_discriminator_spec, tiny_generator_spec
from tiergan.losses import discriminator_loss, value_function
from tiergan.models import Model, dense, flatten, reshape, sequential, sigmoid
from tiergan.tensor import no_grad
from tiergan.training import (NoiseSpec, TrainConfig, d_train_step, g_train_step, generate, init_state,
                              sample_noise, train_gan)
from tiergan.optim import AdamState


def _snapshot(model):
    return {k: p.data.copy() for k, p in model.params.items()}


def _same(a, b):
    return all(np.array_equal(a[k], b[k]) for k in a)


def _pair():
    g = tiny_generator_spec(128, 8)
    d = tiny_discriminator_spec(8)
    return g, d


class TestNoise:
    def test_latent_shape(self):
        z = sample_noise(NoiseSpec(), 8, np.random.default_rng(0))
        assert z.shape == (8, 128) and z.dtype == np.float32

    def test_image_field_uniform(self):
        z = sample_noise(NoiseSpec("image_field", (1, 16, 16), "uniform"), 3, np.random.default_rng(0))
        assert z.shape == (3, 1, 16, 16) and z.min() >= 0 and z.max() < 1

    def test_same_seed_same_draws(self):
        a = sample_noise(NoiseSpec(), 4, np.random.default_rng(7))
        b = sample_noise(NoiseSpec(), 4, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_normal_moments(self):
        z = sample_noise(NoiseSpec("image_field", (1, 100, 100)), 10, np.random.default_rng(0)).astype(np.float64)
        assert z.size == 10 ** 5
        assert abs(z.mean()) < 0.02
        assert 0.97 <= z.var() <= 1.03

    def test_latent_dimension_fixed(self):
        with pytest.raises(ValueError):
            NoiseSpec("latent_vector", (64,))


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.epochs, c.batch_size, c.lr_g, c.lr_d) == (2000, 8, 1e-4, 1e-5)
        assert c.lr_d == pytest.approx(c.lr_g / 10)

    @pytest.mark.parametrize("kw", [{"batch_size": 1}, {"epochs": 0}, {"lr_g": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestSteps:
    def setup_method(self):
        self.cfg = TrainConfig(seed=0)
        self.state = init_state(*_pair(), self.cfg)
        rng = np.random.default_rng(1)
        self.real = rng.random((8, 1, 8, 8)).astype(np.float32)
        self.z = sample_noise(NoiseSpec(), 8, rng)

    def test_d_step_leaves_generator_bitwise(self):
        before_g, before_d = _snapshot(self.state.g), _snapshot(self.state.d)
        loss = d_train_step(self.state.d, self.state.g, self.real, self.z, self.state.opt_d, self.cfg)
        assert _same(before_g, _snapshot(self.state.g))
        assert not _same(before_d, _snapshot(self.state.d))
        assert loss >= 0 and self.state.opt_d.t == 1 and self.state.opt_g.t == 0

    def test_g_step_leaves_discriminator_bitwise(self):
        before_g, before_d = _snapshot(self.state.g), _snapshot(self.state.d)
        loss = g_train_step(self.state.d, self.state.g, self.z, self.state.opt_g, self.cfg)
        assert _same(before_d, _snapshot(self.state.d))
        assert not _same(before_g, _snapshot(self.state.g))
        assert loss >= 0
        assert all(p.grad is None for p in self.state.d.params.values())

    def test_d_loss_is_minus_value_function(self):
        with no_grad():
            fake = self.state.g.forward(self.z).data
            pr, pf = self.state.d.forward(self.real).data, self.state.d.forward(fake).data
        ld = float(discriminator_loss(pr, pf).data)
        assert ld == pytest.approx(-value_function(pr, pf), abs=1e-6)

    def test_nan_input_diverges(self):
        real = np.full_like(self.real, np.nan)
        with pytest.raises(TrainingDiverged):
            d_train_step(self.state.d, self.state.g, real, self.z, self.state.opt_d, self.cfg)


def test_single_step_descent_on_ten_parameter_discriminator():
    # D: flatten a 3x3 image, dense 9 -> 1, sigmoid: 9 weights + 1 bias
    d_spec = sequential((1, 3, 3), flatten(), dense(9, 1), sigmoid())
    g_spec = sequential((2,), dense(2, 9), reshape(1, 3, 3), sigmoid())
    rng = np.random.default_rng(0)
    d, g = Model(d_spec, rng, init_std=0.5), Model(g_spec, rng)
    assert d.num_parameters() == 10
    real = rng.random((8, 1, 3, 3)).astype(np.float32)
    z = rng.standard_normal((8, 2)).astype(np.float32)
    cfg = TrainConfig(lr_d=1e-4)

    def l_d():
        with no_grad():
            fake = g.forward(z).data
            return float(discriminator_loss(d.forward(real), d.forward(fake)).data)

    before = l_d()
    d_train_step(d, g, real, z, AdamState(lr=cfg.lr_d), cfg)
    assert l_d() < before


def test_two_epochs_step_count():
    data = np.random.default_rng(0).random((16, 1, 8, 8)).astype(np.float32)
    records = []
    st = train_gan(*_pair(), data, TrainConfig(epochs=1, batch_size=8), sink=records.append)
    assert len(records) == 2
    assert st.opt_d.t == 2 and st.opt_g.t == 2
    assert [(r.epoch, r.step) for r in records] == [(0, 0), (0, 1)]


def test_partial_batch_is_dropped():
    data = np.zeros((19, 1, 8, 8), np.float32)
    st = train_gan(*_pair(), data, TrainConfig(epochs=3, batch_size=8))
    assert len(st.history) == 3 * 2


def test_seeded_runs_are_identical():
    data = np.random.default_rng(0).random((16, 1, 8, 8)).astype(np.float32)
    a = train_gan(*_pair(), data, TrainConfig(epochs=3, seed=5))
    b = train_gan(*_pair(), data, TrainConfig(epochs=3, seed=5))
    assert a.history == b.history
    assert _same(_snapshot(a.g), _snapshot(b.g))
    c = train_gan(*_pair(), data, TrainConfig(epochs=3, seed=6))
    assert c.history != a.history


def test_stop_and_resume_matches_uninterrupted():
    data = np.random.default_rng(0).random((16, 1, 8, 8)).astype(np.float32)
    cfg = TrainConfig(epochs=4, seed=2)
    full = train_gan(*_pair(), data, cfg)
    part = train_gan(*_pair(), data, cfg, stop_after=2)
    assert part.status == "partial" and part.epoch == 2
    done = train_gan(None, None, data, cfg, state=part)
    assert done.history == full.history and done.status == "trained"


def test_losses_finite_and_nonnegative():
    data = np.random.default_rng(0).random((16, 1, 8, 8)).astype(np.float32)
    st = train_gan(*_pair(), data, TrainConfig(epochs=5))
    for r in st.history:
        assert math.isfinite(r.d_loss) and r.d_loss >= 0
        assert math.isfinite(r.g_loss) and r.g_loss >= 0


def test_off_target_generator_moves_toward_constant_data():
    g_spec, d_spec = _pair()
    data = np.full((16, 1, 8, 8), 0.5, np.float32)
    cfg = TrainConfig(epochs=250, seed=0, lr_g=1e-2, lr_d=1e-2)
    st = init_state(g_spec, d_spec, cfg)
    st.g.params["4.bias"].data[:] = 2.0  # final conv bias: sigmoid(2) ~ 0.88
    z = sample_noise(NoiseSpec(), 256, np.random.default_rng(9))
    start = abs(float(generate(st.g, z).mean()) - 0.5)
    st = train_gan(g_spec, d_spec, data, cfg, state=st)
    assert abs(float(generate(st.g, z).mean()) - 0.5) < start / 2
