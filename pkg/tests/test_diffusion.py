"""Noise schedule, forward/reverse diffusion, denoiser network, training."""
import numpy as np
import pytest

from pidm.autodiff import Tensor
from pidm.denoiser import Denoiser, DenoiserConfig, sinusoidal_embedding
from pidm.diffusion import NoiseSchedule, ancestral_sample, q_sample, reverse_mean, reverse_step
from pidm.errors import ConfigError, TrainingDiverged
from pidm.training import DenoiserModel, TrainConfig, cosine_lr, train_denoiser


def test_linear_schedule_values():
    sched = NoiseSchedule.linear(1000)
    assert sched.beta.shape == (1000,)
    assert sched.beta[0] == 1e-4
    assert sched.beta[-1] == 0.02
    np.testing.assert_array_equal(sched.beta, np.linspace(1e-4, 0.02, 1000))
    np.testing.assert_array_equal(sched.alpha, 1.0 - sched.beta)
    np.testing.assert_array_equal(sched.alpha_bar, np.cumprod(1.0 - sched.beta))
    assert np.all(np.diff(sched.alpha_bar) < 0)


def test_schedule_index_conventions():
    sched = NoiseSchedule.linear(10)
    assert sched.alpha_bar_at(0) == 1.0
    assert sched.alpha_bar_at(1) == 1.0 - sched.beta_at(1)
    assert sched.beta_at(10) == 0.02
    for bad_t in (0, 11):
        with pytest.raises(ValueError):
            sched.beta_at(bad_t)
    with pytest.raises(ValueError):
        sched.alpha_bar_at(11)
    with pytest.raises(ValueError):
        NoiseSchedule.linear(0)


def test_q_sample_formula_and_endpoints():
    sched = NoiseSchedule.linear(50)
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((2, 6))
    eps = rng.standard_normal((2, 6))
    np.testing.assert_array_equal(q_sample(x0, 0, eps, sched), x0)
    t = 20
    ab = sched.alpha_bar_at(t)
    want = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    np.testing.assert_array_equal(q_sample(x0, t, eps, sched), want)


def test_q_sample_vector_t_matches_scalar_loop():
    sched = NoiseSchedule.linear(50)
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal((4, 3, 8))
    eps = rng.standard_normal((4, 3, 8))
    ts = np.array([1, 10, 25, 50])
    batched = q_sample(x0, ts, eps, sched)
    for i, t in enumerate(ts):
        np.testing.assert_array_equal(batched[i], q_sample(x0[i], int(t), eps[i], sched))


def test_single_step_schedule_inverts_exactly():
    # with one diffusion step the true eps recovers x0 in closed form
    sched = NoiseSchedule.linear(1)
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((3, 5))
    eps = rng.standard_normal((3, 5))
    x1 = q_sample(x0, 1, eps, sched)
    back = reverse_step(x1, eps, 1, sched, rng)
    np.testing.assert_allclose(back, x0, rtol=0, atol=1e-12)


def test_reverse_mean_formula():
    sched = NoiseSchedule.linear(30)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 4))
    eps_hat = rng.standard_normal((2, 4))
    t = 12
    beta = sched.beta_at(t)
    want = (x - beta / np.sqrt(1 - sched.alpha_bar_at(t)) * eps_hat) / np.sqrt(sched.alpha_at(t))
    np.testing.assert_array_equal(reverse_mean(x, eps_hat, t, sched), want)


def test_final_reverse_step_injects_no_noise():
    sched = NoiseSchedule.linear(30)
    rng_state = np.random.default_rng(7)
    x = np.ones((2, 3))
    eps_hat = np.zeros((2, 3))
    out = reverse_step(x, eps_hat, 1, sched, rng_state)
    np.testing.assert_array_equal(out, reverse_mean(x, eps_hat, 1, sched))
    # the generator was not consumed
    np.testing.assert_array_equal(
        rng_state.standard_normal(4), np.random.default_rng(7).standard_normal(4)
    )


def test_intermediate_reverse_step_noise_scale():
    sched = NoiseSchedule.linear(30)
    t = 15
    x = np.zeros((1, 4))
    eps_hat = np.zeros((1, 4))
    out = reverse_step(x, eps_hat, t, sched, np.random.default_rng(5))
    z = np.random.default_rng(5).standard_normal(x.shape)
    np.testing.assert_array_equal(out, np.sqrt(sched.beta_at(t)) * z)


def test_ancestral_sample_deterministic_and_t_order():
    sched = NoiseSchedule.linear(20)
    seen = []

    def eps_fn(x, t):
        seen.append(t)
        return 0.1 * x

    a = ancestral_sample(eps_fn, sched, (2, 5), np.random.default_rng(11))
    assert seen == list(range(20, 0, -1))
    b = ancestral_sample(lambda x, t: 0.1 * x, sched, (2, 5), np.random.default_rng(11))
    np.testing.assert_array_equal(a, b)
    c = ancestral_sample(lambda x, t: 0.1 * x, sched, (2, 5), np.random.default_rng(12))
    assert not np.array_equal(a, c)


def test_cosine_lr_endpoints():
    assert cosine_lr(0, 100, 1e-3, 1e-6) == pytest.approx(1e-3)
    assert cosine_lr(99, 100, 1e-3, 1e-6) == pytest.approx(1e-6)
    mid = cosine_lr(50, 101, 1e-3, 1e-6)
    assert mid == pytest.approx((1e-3 + 1e-6) / 2, rel=1e-6)
    assert cosine_lr(0, 1, 5e-4, 1e-6) == 5e-4


def test_sinusoidal_embedding_shape_and_range():
    emb = sinusoidal_embedding(np.array([0, 1, 100]), 32)
    assert emb.shape == (3, 32)
    assert np.abs(emb).max() <= 1.0
    np.testing.assert_array_equal(emb[0, :16], 0.0)
    np.testing.assert_array_equal(emb[0, 16:], 1.0)
    assert not np.array_equal(emb[1], emb[2])


def test_denoiser_config_validation():
    DenoiserConfig(channels=6, length=64).validate()
    with pytest.raises(ConfigError):
        DenoiserConfig(channels=6, length=30).validate()
    with pytest.raises(ConfigError):
        DenoiserConfig(channels=6, length=64, time_embed_dim=7).validate()
    with pytest.raises(ConfigError):
        DenoiserConfig(channels=6, length=64, use_attention=True).validate()
    with pytest.raises(ConfigError):
        DenoiserConfig(channels=6, length=64, channel_mults=(1, 2)).validate()
    with pytest.raises(ConfigError):
        DenoiserConfig(channels=6, length=64, base_channels=12, groups=8).validate()


def test_denoiser_forward_shape_and_determinism():
    cfg = DenoiserConfig(channels=4, length=16, base_channels=8, groups=4)
    net = Denoiser(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((3, 4, 16))
    t = np.array([1, 25, 50])
    out = net.forward(Tensor(x), t)
    assert out.data.shape == (3, 4, 16)
    out2 = net.forward(Tensor(x), t)
    np.testing.assert_array_equal(out.data, out2.data)


def test_untrained_denoiser_outputs_zero():
    # the output projection starts at zero so sampling begins unbiased
    cfg = DenoiserConfig(channels=4, length=16, base_channels=8, groups=4)
    net = Denoiser(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((1, 4, 16))
    np.testing.assert_array_equal(net.forward(Tensor(x), np.array([1])).data, 0.0)


def test_denoiser_time_conditioning_matters(tiny_model):
    net = tiny_model.net
    x = np.random.default_rng(1).standard_normal((1, 6, 64))
    a = net.forward(Tensor(x), np.array([1])).data
    b = net.forward(Tensor(x), np.array([50])).data
    assert not np.array_equal(a, b)


def test_denoiser_batch_rows_independent(tiny_model):
    net = tiny_model.net
    x = np.random.default_rng(2).standard_normal((2, 6, 64))
    t = np.array([3, 40])
    both = net.forward(Tensor(x), t).data
    one = net.forward(Tensor(x[:1]), t[:1]).data
    np.testing.assert_allclose(both[0], one[0], rtol=0, atol=1e-12)


def test_training_loss_decreases(tiny_model):
    h = tiny_model.loss_history
    assert len(h) == 300
    assert np.mean(h[-10:]) < 0.5 * np.mean(h[:10])


def test_training_deterministic(tiny_corpus, tiny_model):
    cfg = TrainConfig(steps=6, lr=3e-3, diffusion_steps=50, batch_size=8)
    a = train_denoiser(tiny_corpus, cfg)
    b = train_denoiser(tiny_corpus, cfg)
    assert a.loss_history == b.loss_history
    for (ka, pa), (kb, pb) in zip(a.net.parameters().items(), b.net.parameters().items()):
        assert ka == kb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_training_override_kwargs(tiny_corpus):
    model = train_denoiser(tiny_corpus, TrainConfig(steps=2, diffusion_steps=10, batch_size=4))
    assert model.schedule.n_steps == 10
    assert len(model.loss_history) == 2
    model2 = train_denoiser(
        tiny_corpus, TrainConfig(steps=2, diffusion_steps=10, batch_size=4), steps=3
    )
    assert len(model2.loss_history) == 3


def test_training_divergence_detected(tiny_corpus):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(TrainingDiverged) as exc_info:
            train_denoiser(
                tiny_corpus,
                TrainConfig(steps=60, lr=1e8, diffusion_steps=50, batch_size=8, grad_clip=1e9),
            )
    assert exc_info.value.step > 0


def test_model_predict_eps_shape(tiny_model):
    x = np.random.default_rng(0).standard_normal((6, 64))
    out = tiny_model.predict_eps(x, 5)
    assert out.shape == (6, 64)


def test_checkpoint_round_trip(tiny_model, tmp_path):
    path = str(tmp_path / "model.pidmw")
    tiny_model.save(path)
    back = DenoiserModel.load(path)
    assert back.system == tiny_model.system
    assert back.dt == tiny_model.dt
    assert back.schedule.n_steps == tiny_model.schedule.n_steps
    np.testing.assert_array_equal(back.schedule.beta, tiny_model.schedule.beta)
    np.testing.assert_array_equal(back.stats.z_min, tiny_model.stats.z_min)
    np.testing.assert_array_equal(back.stats.z_max, tiny_model.stats.z_max)
    x = np.random.default_rng(8).standard_normal((6, 64))
    np.testing.assert_array_equal(back.predict_eps(x, 17), tiny_model.predict_eps(x, 17))


def test_checkpoint_rejects_other_kind(tiny_corpus, tmp_path):
    from pidm.dataset import save_trajectories
    from pidm.errors import ContainerError

    path = str(tmp_path / "c.pidm")
    save_trajectories(path, tiny_corpus)
    with pytest.raises(ContainerError, match="weights"):
        DenoiserModel.load(path)
