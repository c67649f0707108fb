import numpy as np
import pytest
from scipy.stats import chisquare

from .. import metrics, networks, training
from .. import tensor_nn as nn
from ..errors import DivergenceError, FormatError
from ..frame import VideoSeq
from ..predictors import fd_predict, lfp_predict
from ..tensor_nn import DiscConfig, NetConfig, Weights
from ..training import ExtractConfig, TrainConfig
from .test_networks import generator_signature
from .test_tensor_nn import sample_weights


def sample_sinusoid_video(frames=16, size=24, period=12, start=0):
    """Vertical stripes 128 + 80 sin(2 pi (x - t) / period) translating right by one pixel per frame"""
    x = np.arange(size)
    out = []
    for t in range(start, start + frames):
        row = 128 + 80 * np.sin(2 * np.pi * (x - t) / period)
        out.append(np.tile(np.round(row), (size, 1)))
    return VideoSeq(out)


def sample_noise_video(frames=12, size=56, seed=0):
    """Independent uniform noise frames, every frame pair has large motion energy"""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (frames, size, size)).astype(np.uint8)


def sample_patch_dataset(count=8, seed=0):
    """9-frame 48x48 sequences cut from a smooth texture translating one pixel per frame"""
    rng = np.random.default_rng(seed)
    texture = np.cumsum(np.cumsum(rng.normal(0, 1, (48, 48 + 9 + count)), axis=0), axis=1)
    texture = 128 + 100 * (texture - texture.mean()) / np.abs(texture - texture.mean()).max()
    frames = np.stack([texture[:, t:t + 48] for t in range(9 + count)])
    return np.clip(np.round(frames), 0, 255).astype(np.uint8)[np.arange(count)[:, None] + np.arange(9)]


def test_lp_loss():
    assert training.lp_loss([0, 2], [1, 1], 1) == 1.0
    assert training.lp_loss([0, 2], [1, 1], 2) == 1.0
    assert training.lp_loss([3, 4], [3, 4], 2) == 0.0
    with pytest.raises(ValueError):
        training.lp_loss([0, 1], [0, 1, 2], 2)


def test_bce_loss():
    assert training.bce_loss(0.5, 1) == pytest.approx(np.log(2))
    assert training.bce_loss(1 - training.BCE_EPS, 1) == pytest.approx(0, abs=1e-6)
    assert training.bce_loss(training.BCE_EPS, 1) == pytest.approx(16.118, abs=1e-3)
    assert training.bce_loss(0.0, 1) == training.bce_loss(training.BCE_EPS, 1)


def test_bce_at_target_has_no_gradient():
    assert training.bce_loss(1.0, 1) == pytest.approx(0, abs=1e-6)
    assert training.bce_backward(1.0, 1) == 0.0
    assert training.bce_backward(0.0, 0) == 0.0


def test_generator_loss():
    x = np.random.uniform(-1, 1, (1, 6, 6))
    y = np.random.uniform(-1, 1, (1, 6, 6))
    mse = np.mean((x - y) ** 2)
    assert training.generator_loss(x, y, 1.0) == 0.95 * training.lp_loss(x, y, 2)
    assert training.generator_loss(y, y, 0.5) == pytest.approx(0.05 * np.log(2))
    assert training.generator_loss(x, y, 0.3) == pytest.approx(0.95 * mse + 0.05 * training.bce_loss(0.3, 1))
    assert training.generator_loss(x, y, 0.3, 1.0, 0.0) == pytest.approx(mse)


def test_split_sample():
    patches = np.arange(9 * 4, dtype=np.uint8).reshape(9, 2, 2)
    past, target = training.split_sample(patches, 3)
    assert past.shape == (3, 2, 2) and target.shape == (1, 2, 2)
    assert np.array_equal(past, patches[5:8] / 127.5 - 1)
    with pytest.raises(ValueError):
        training.split_sample(patches, 9)


def test_static_acceptance_rate():
    static = np.repeat(np.random.randint(0, 256, (1, 50, 50)), 10, axis=0).astype(np.uint8)
    patches, trials = training.extract_patches([static], ExtractConfig(seed=3), 500)
    assert len(patches) == 500
    assert 0.03 <= 500 / trials <= 0.07


def test_noise_acceptance_rate():
    patches, trials = training.extract_patches([sample_noise_video()], ExtractConfig(), 500)
    assert trials == len(patches) == 500


def test_extract_is_deterministic():
    videos = [sample_noise_video(seed=1), VideoSeq(list(sample_noise_video(seed=2)))]
    a, _ = training.extract_patches(videos, ExtractConfig(seed=5), 20)
    b, _ = training.extract_patches(videos, ExtractConfig(seed=5), 20)
    assert all(np.array_equal(p.patches, q.patches) and p.video_index == q.video_index for p, q in zip(a, b))
    assert a[0].patches.shape == (9, 48, 48)
    assert a[0].context.shape == (8, 48, 48) and a[0].target.shape == (48, 48)


def test_video_weights_scale_selection_frequency():
    videos = [sample_noise_video(seed=1), sample_noise_video(seed=2)]
    cfg = ExtractConfig(seed=11, video_weights=[1.0, 3.0])
    patches, _ = training.extract_patches(videos, cfg, 10000)
    counts = np.bincount([p.video_index for p in patches], minlength=2)
    _, p_value = chisquare(counts, f_exp=[2500, 7500])
    assert p_value > 1e-3


def test_extract_errors():
    with pytest.raises(ValueError):
        training.extract_patches([sample_noise_video(size=40)], ExtractConfig(), 1)
    with pytest.raises(ValueError):
        training.extract_patches([sample_noise_video(frames=8)], ExtractConfig(), 1)
    static = np.zeros((9, 48, 48), dtype=np.uint8)
    with pytest.raises(ValueError):
        training.extract_patches([static], ExtractConfig(low_motion_accept_prob=0.0), 1, max_trials=50)


def test_dataset_file(tmp_path):
    data = sample_patch_dataset(count=3)
    path = tmp_path / "patches.lfpd"
    training.save_dataset(data, str(path))
    assert np.array_equal(training.load_dataset(str(path)), data)
    raw = path.read_bytes()
    path.write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        training.load_dataset(str(path))
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        training.load_dataset(str(path))


def test_loss_trace_file(tmp_path):
    path = tmp_path / "trace.csv"
    training.write_loss_trace([0.5, 0.25], str(path))
    assert path.read_text().splitlines() == ["iter,loss", "0,0.5", "1,0.25"]


def test_train_lp_overfits_single_sample():
    sample = training.windows_from_video(sample_sinusoid_video(frames=5, size=16), 5)[:1]
    cfg = TrainConfig("l2", lr=3e-3, batch_size=2, iterations=200)
    _, trace = training.train_lp(sample, NetConfig(), cfg)
    assert len(trace) == 200
    assert trace[-1] < 0.1 * trace[0]
    windows = np.mean(np.reshape(trace, (4, 50)), axis=1)
    assert np.all(np.diff(windows) < 0)


def test_train_lp_is_deterministic_and_lr0_is_frozen():
    data = training.windows_from_video(sample_sinusoid_video(frames=8, size=12), 5)
    cfg = TrainConfig("l1", lr=1e-3, batch_size=2, iterations=5, seed=4)
    config = NetConfig(blocks=1, channels=4)
    _, trace_a = training.train_lp(data, config, cfg)
    _, trace_b = training.train_lp(data, config, cfg)
    assert trace_a == trace_b

    weights, _ = training.train_lp(data, config, TrainConfig("l2", lr=0.0, batch_size=2, iterations=3))
    start = weights.copy()
    training.train_lp(data, config, TrainConfig("l2", lr=0.0, batch_size=2, iterations=3), weights)
    assert weights == start


def test_train_lp_divergence(mocker):
    mocker.patch("lfpcodec.training.lp_loss", return_value=float("nan"))
    data = training.windows_from_video(sample_sinusoid_video(frames=6, size=8), 5)
    with pytest.raises(DivergenceError):
        training.train_lp(data, NetConfig(blocks=1, channels=2), TrainConfig(batch_size=1, iterations=2))


def test_learned_predictor_beats_fd_on_translation():
    train = training.windows_from_video(sample_sinusoid_video(frames=20, size=16), 5)
    cfg = TrainConfig("l2", lr=3e-3, batch_size=2, iterations=1200, seed=1)
    weights, _ = training.train_lp(train, NetConfig(), cfg)
    weights = weights.rounded()

    held_out = sample_sinusoid_video(frames=12, size=24, start=7).frames
    lfp, fd = [], []
    for t in range(4, len(held_out)):
        lfp.append(metrics.psnr(lfp_predict(held_out[t - 4:t], weights).frame, held_out[t]))
        fd.append(metrics.psnr(fd_predict(held_out[t - 1]).frame, held_out[t]))
    assert np.mean(lfp) >= np.mean(fd) + 3.0


def sample_gan_config(**kwargs):
    settings = dict(lr_generator=1e-3, lr_discriminator=1e-3, gen_batch_size=2, disc_batch_size=4, iterations=1)
    settings.update(kwargs)
    return TrainConfig("gan", **settings)


def test_gan_step_updates_both_networks():
    data = sample_patch_dataset(count=2)
    generator = training.train_lp(data, NetConfig(k=2, blocks=1, channels=2), TrainConfig(iterations=0))[0]
    before = generator.copy()
    generator, discriminator, trace = training.train_gan(data, generator, sample_gan_config(),
                                                         disc_config=DiscConfig(channels=(4, 4)))
    fresh = training.train_gan(data, before.copy(), sample_gan_config(iterations=0),
                               disc_config=DiscConfig(channels=(4, 4)))[1]
    assert len(trace) == 1
    assert generator != before
    assert discriminator != fresh


def test_discriminator_learns_to_spot_untrained_generator():
    data = sample_patch_dataset(count=12, seed=3)
    train, held_out = data[:8], data[8:]
    generator = training.train_lp(train, NetConfig(k=2, blocks=1, channels=2), TrainConfig(iterations=0))[0]
    cfg = sample_gan_config(lr_generator=0.0, disc_batch_size=8, iterations=200, seed=2)
    generator, discriminator, _ = training.train_gan(train, generator, cfg, disc_config=DiscConfig(channels=(8, 8)))
    assert training.discriminator_accuracy(held_out, generator, discriminator) > 0.5


@pytest.mark.parametrize("lambda_adv", [0.05, 0.5])
def test_generator_combined_loss_gradient_check(lambda_adv):
    rng = np.random.default_rng(30)
    generator = sample_weights(config=NetConfig(k=2, blocks=1, channels=2), seed=3)
    discriminator = sample_weights(Weights.Kind.Discriminator, DiscConfig(channels=(4, 4)), seed=4)
    patches = sample_patch_dataset(count=1, seed=5)[0]
    cfg = TrainConfig("gan", lambda_ms=1 - lambda_adv, lambda_adv=lambda_adv)
    past, _ = training.split_sample(patches, 2)

    def fn(params):
        return training.generator_sample_grads(patches, generator, discriminator, cfg)

    def signature(params):
        x, _ = networks.lfp_forward(past, generator)
        score, cache = networks.discriminator_forward(training._fake_sequence(patches, x), discriminator)
        _, z1, _, _, z2, _, _, _, _ = cache
        return np.concatenate([generator_signature(past, generator), (z1 > 0).ravel(), (z2 > 0).ravel(),
                               [score > training.BCE_EPS]])

    assert nn.gradient_check(fn, generator.params, rng=rng, signature=signature) < 1e-4

    _, mse_only = training.generator_sample_grads(patches, generator, discriminator, TrainConfig(
        "gan", lambda_ms=1 - lambda_adv, lambda_adv=0.0))
    _, combined = fn(generator.params)
    assert not np.allclose(mse_only["output.w"], combined["output.w"])
