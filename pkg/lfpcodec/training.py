import csv
import logging
import struct
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import tensor_nn as nn
from .errors import DivergenceError, FormatError
from .networks import discriminator_backward, discriminator_forward, lfp_backward, lfp_forward
from .predictors import normalize
from .tensor_nn import DiscConfig, Weights

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"LFPD"
PATCH_SIZE = 48
SEQ_LEN = 9
BCE_EPS = 1e-7


class PatchSeq:
    """A stack of co-located patches from consecutive frames; the last one is the prediction target"""

    def __init__(self, patches, video_index=None):
        patches = np.asarray(patches)
        assert patches.ndim == 3, "patch sequence must have shape (frames, height, width)"
        self._patches = patches.astype(np.uint8)
        self._video_index = video_index

    @property
    def patches(self):
        return self._patches

    @property
    def context(self):
        return self._patches[:-1]

    @property
    def target(self):
        return self._patches[-1]

    @property
    def video_index(self):
        return self._video_index


@dataclass
class ExtractConfig:
    patch_size: int = PATCH_SIZE
    seq_len: int = SEQ_LEN
    motion_threshold: float = 25.0
    low_motion_accept_prob: float = 0.05
    seed: int = 0
    video_weights: list = None

    def __post_init__(self):
        assert 0 <= self.low_motion_accept_prob <= 1, "acceptance probability must lie in [0, 1]"
        assert self.motion_threshold >= 0, "motion threshold must be non-negative"
        assert self.patch_size >= 1 and self.seq_len >= 2, "invalid patch geometry"
        if self.video_weights is not None:
            assert all(w >= 0 for w in self.video_weights), "sampling weights must be non-negative"

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainConfig:

    class Loss(Enum):
        L1 = "l1"
        L2 = "l2"
        GAN = "gan"

    loss: Loss = Loss.L2
    lambda_ms: float = 0.95
    lambda_adv: float = 0.05
    lr: float = 1e-4
    lr_generator: float = 1e-6
    lr_discriminator: float = 1e-5
    batch_size: int = 32
    gen_batch_size: int = 16
    disc_batch_size: int = 32
    iterations: int = 200
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        self.loss = TrainConfig.Loss(self.loss)
        assert self.batch_size >= 1 and self.gen_batch_size >= 1 and self.disc_batch_size >= 2, \
            "batch sizes must be positive"
        assert self.iterations >= 0, "iteration count must be non-negative"

    @property
    def p(self):
        return 1 if self.loss is TrainConfig.Loss.L1 else 2

    def to_dict(self):
        d = asdict(self)
        d["loss"] = self.loss.value
        return d


def _as_array(dataset):
    if isinstance(dataset, np.ndarray):
        return dataset
    return np.stack([s.patches if isinstance(s, PatchSeq) else np.asarray(s) for s in dataset])


def _video_array(video):
    return video.as_array() if hasattr(video, "as_array") else np.asarray(video)


def _draw_candidate(videos, cfg, probs, rng):
    index = int(rng.choice(len(videos), p=probs))
    frames = videos[index]
    count, height, width = frames.shape
    start = int(rng.integers(count - cfg.seq_len + 1))
    y = int(rng.integers(height - cfg.patch_size + 1))
    x = int(rng.integers(width - cfg.patch_size + 1))
    return index, frames[start:start + cfg.seq_len, y:y + cfg.patch_size, x:x + cfg.patch_size]


def _has_motion(patches, threshold):
    """True when the mean-square difference of every successive pair exceeds the threshold"""
    diffs = np.diff(patches.astype(np.float64), axis=0)
    return bool(np.all(np.mean(diffs ** 2, axis=(1, 2)) > threshold))


def _prepare(videos, cfg):
    videos = [_video_array(v) for v in videos]
    if not videos:
        raise ValueError("no source videos")
    for i, v in enumerate(videos):
        count, height, width = v.shape
        if count < cfg.seq_len or height < cfg.patch_size or width < cfg.patch_size:
            raise ValueError("video {} ({} frames of {}x{}) is smaller than a {}-frame {}x{} patch sequence".format(
                i, count, width, height, cfg.seq_len, cfg.patch_size, cfg.patch_size))
    weights = np.ones(len(videos)) if cfg.video_weights is None else np.asarray(cfg.video_weights, dtype=np.float64)
    if len(weights) != len(videos) or weights.sum() <= 0:
        raise ValueError("need one non-negative sampling weight per video")
    return videos, weights / weights.sum()


def extract_patches(videos, cfg, count, max_trials=None):
    """Rejection-sample patch sequences from a set of videos

    A random video (by sampling weight), start frame and location are drawn; the
    candidate is kept when every successive frame pair has enough motion, and
    otherwise with probability `cfg.low_motion_accept_prob`.

    :param videos: list of VideoSeq or (frames, height, width) uint8 arrays
    :param cfg: ExtractConfig
    :param count: number of patch sequences to return
    :param max_trials: give up after this many draws, defaults to 1000 * count
    :returns: (list of PatchSeq, number of candidates drawn)
    """
    videos, probs = _prepare(videos, cfg)
    rng = np.random.default_rng(cfg.seed)
    max_trials = 1000 * count if max_trials is None else max_trials
    accepted, trials = [], 0
    while len(accepted) < count:
        if trials >= max_trials:
            raise ValueError("only {} of {} patch sequences accepted after {} draws".format(
                len(accepted), count, trials))
        trials += 1
        index, patches = _draw_candidate(videos, cfg, probs, rng)
        if _has_motion(patches, cfg.motion_threshold) or rng.random() < cfg.low_motion_accept_prob:
            accepted.append(PatchSeq(patches, index))
    logger.info("extracted %d patch sequences from %d draws (acceptance %.3f)", count, trials,
                count / max(trials, 1))
    return accepted, trials


def windows_from_video(video, length):
    """All full-frame windows of `length` consecutive frames, as uint8 array (N, length, H, W)"""
    frames = _video_array(video)
    if len(frames) < length:
        raise ValueError("video has {} frames, windows need {}".format(len(frames), length))
    return np.stack([frames[i:i + length] for i in range(len(frames) - length + 1)])


def save_dataset(dataset, path):
    """Write patch sequences as: magic LFPD, uint32 count, then raw 9x48x48 byte blocks"""
    data = _as_array(dataset)
    if data.shape[1:] != (SEQ_LEN, PATCH_SIZE, PATCH_SIZE):
        raise ValueError("dataset files hold 9x48x48 patch sequences, got {}".format(data.shape[1:]))
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", len(data)))
        fh.write(data.astype(np.uint8).tobytes())


def load_dataset(path):
    """Read a dataset file written by `save_dataset`, as uint8 array (N, 9, 48, 48)"""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != DATASET_MAGIC:
        raise FormatError("{}: bad magic, not an LFPD dataset".format(path))
    if len(data) < 8:
        raise FormatError("{}: truncated header".format(path))
    (count,) = struct.unpack_from("<I", data, 4)
    block = SEQ_LEN * PATCH_SIZE * PATCH_SIZE
    if len(data) - 8 != count * block:
        raise FormatError("{}: {} payload bytes for {} sequences".format(path, len(data) - 8, count))
    return np.frombuffer(data, dtype=np.uint8, offset=8).reshape(count, SEQ_LEN, PATCH_SIZE, PATCH_SIZE).copy()


def write_loss_trace(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "loss"])
        for i, loss in enumerate(trace):
            writer.writerow([i, repr(float(loss))])


def lp_loss(x, y, p):
    """(1/N) * sum |y_i - x_i|^p for p in {1, 2}"""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("shape mismatch: {} vs {}".format(x.shape, y.shape))
    assert p in (1, 2), "only l1 and l2 losses are supported"
    return float(np.mean(np.abs(y - x) ** p))


def lp_loss_backward(x, y, p):
    """Gradient of `lp_loss` w.r.t. x"""
    diff = np.asarray(x, dtype=np.float64) - y
    if p == 1:
        return np.sign(diff) / diff.size
    return 2 * diff / diff.size


def _clamp_score(x):
    return min(max(float(x), BCE_EPS), 1 - BCE_EPS)


def bce_loss(x, y):
    """-y log x - (1 - y) log(1 - x), with x clamped to [1e-7, 1 - 1e-7]"""
    x = _clamp_score(x)
    return -y * np.log(x) - (1 - y) * np.log(1 - x)


def bce_backward(x, y):
    """Gradient of `bce_loss` w.r.t. the score; zero where the clamp is active"""
    if not BCE_EPS < x < 1 - BCE_EPS:
        return 0.0
    return -y / x + (1 - y) / (1 - x)


def generator_loss(x, y, x_disc, lambda_ms=0.95, lambda_adv=0.05):
    """lambda_ms * MSE(x, y) - lambda_adv * log(x_disc), with x_disc floored at 1e-7"""
    return lambda_ms * lp_loss(x, y, 2) - lambda_adv * np.log(max(float(x_disc), BCE_EPS))


def split_sample(patches, k):
    """Normalized generator input (the K frames before the target) and target

    :param patches: uint8 array (frames, H, W), last frame is the target
    :param k: generator input frame count
    :returns: (past with shape (K, H, W), target with shape (1, H, W)), both in [-1, 1]
    """
    if k > len(patches) - 1:
        raise ValueError("K={} exceeds the {} context frames of a sample".format(k, len(patches) - 1))
    x = normalize(patches)
    return x[-1 - k:-1], x[-1:]


def _check_loss(loss, iteration):
    if not np.isfinite(loss):
        raise DivergenceError("loss became {} at iteration {}".format(loss, iteration))


def train_lp(dataset, net_config, cfg, weights=None):
    """Train the generator with l1 or l2 loss on the last frame of each sample

    :param dataset: uint8 array (N, frames, H, W) or list of PatchSeq
    :param net_config: NetConfig, ignored when `weights` is given
    :param cfg: TrainConfig (loss l1 or l2)
    :param weights: generator Weights to continue from, defaults to a fresh initialization
    :returns: (trained Weights, per-iteration mean batch loss)
    """
    data = _as_array(dataset)
    if len(data) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    if weights is None:
        weights = nn.init_weights(Weights.Kind.Generator, net_config, rng)
    k, p = weights.config.k, cfg.p
    trace = []
    for iteration in range(cfg.iterations):
        grads = nn.zero_grads(weights)
        total = 0.0
        for index in rng.integers(len(data), size=cfg.batch_size):
            past, target = split_sample(data[index], k)
            x, cache = lfp_forward(past, weights)
            total += lp_loss(x, target, p)
            sample_grads, _ = lfp_backward(lp_loss_backward(x, target, p), cache, weights)
            for name, g in sample_grads.items():
                grads[name] += g
        loss = total / cfg.batch_size
        _check_loss(loss, iteration)
        for g in grads.values():
            g /= cfg.batch_size
        nn.adam_step(weights, grads, cfg.lr)
        trace.append(loss)
        if cfg.log_every and (iteration + 1) % cfg.log_every == 0:
            logger.info("l%d iteration %d: loss %.6f", p, iteration + 1, loss)
    return weights, trace


def _fake_sequence(patches, prediction):
    """First frames of the original sample followed by the generated last frame, normalized"""
    x = normalize(patches)
    x[-1] = prediction[0]
    return x


def discriminator_step(data, generator, discriminator, cfg, rng):
    """One discriminator update on half real, half generated samples

    :returns: mean BCE loss over the minibatch
    """
    k = generator.config.k
    half = cfg.disc_batch_size // 2
    grads = nn.zero_grads(discriminator)
    total = 0.0
    samples = [(data[i], 1) for i in rng.integers(len(data), size=half)] + \
              [(data[i], 0) for i in rng.integers(len(data), size=half)]
    for patches, label in samples:
        if label:
            seq = normalize(patches)
        else:
            past, _ = split_sample(patches, k)
            seq = _fake_sequence(patches, lfp_forward(past, generator)[0])
        score, cache = discriminator_forward(seq, discriminator)
        total += bce_loss(score, label)
        sample_grads, _ = discriminator_backward(bce_backward(score, label), cache, discriminator)
        for name, g in sample_grads.items():
            grads[name] += g
    for g in grads.values():
        g /= len(samples)
    nn.adam_step(discriminator, grads, cfg.lr_discriminator)
    return total / len(samples)


def generator_sample_grads(patches, generator, discriminator, cfg):
    """Combined mean-square and adversarial loss of one sample

    The adversarial term reaches the generator through the discriminator input
    gradient of the generated last frame.

    :param patches: uint8 array (frames, H, W), last frame is the target
    :returns: (loss, generator grads keyed by parameter name)
    """
    past, target = split_sample(patches, generator.config.k)
    x, gen_cache = lfp_forward(past, generator)
    score, disc_cache = discriminator_forward(_fake_sequence(patches, x), discriminator)
    loss = generator_loss(x, target, score, cfg.lambda_ms, cfg.lambda_adv)
    dscore = -cfg.lambda_adv / score if score > BCE_EPS else 0.0
    _, dseq = discriminator_backward(dscore, disc_cache, discriminator)
    dx = cfg.lambda_ms * lp_loss_backward(x, target, 2) + dseq[-1:]
    grads, _ = lfp_backward(dx, gen_cache, generator)
    return loss, grads


def generator_step(data, generator, discriminator, cfg, rng):
    """One generator update on the combined mean-square and adversarial loss

    :returns: mean generator loss over the minibatch
    """
    grads = nn.zero_grads(generator)
    total = 0.0
    for index in rng.integers(len(data), size=cfg.gen_batch_size):
        loss, sample_grads = generator_sample_grads(data[index], generator, discriminator, cfg)
        total += loss
        for name, g in sample_grads.items():
            grads[name] += g
    for g in grads.values():
        g /= cfg.gen_batch_size
    nn.adam_step(generator, grads, cfg.lr_generator)
    return total / cfg.gen_batch_size


def train_gan(dataset, generator, cfg, discriminator=None, disc_config=None):
    """Jointly train a pretrained generator and a discriminator, alternating updates

    :param dataset: uint8 array (N, 9, 48, 48) or list of PatchSeq
    :param generator: pretrained generator Weights, updated in place
    :param cfg: TrainConfig
    :param discriminator: discriminator Weights to continue from, defaults to a fresh initialization
    :param disc_config: DiscConfig for a fresh discriminator, defaults to DiscConfig()
    :returns: (generator, discriminator, per-iteration generator loss)
    """
    data = _as_array(dataset)
    if len(data) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    if discriminator is None:
        discriminator = nn.init_weights(Weights.Kind.Discriminator, disc_config or DiscConfig(), rng)
    trace = []
    for iteration in range(cfg.iterations):
        disc_loss = discriminator_step(data, generator, discriminator, cfg, rng)
        gen_loss = generator_step(data, generator, discriminator, cfg, rng)
        _check_loss(disc_loss + gen_loss, iteration)
        trace.append(gen_loss)
        if cfg.log_every and (iteration + 1) % cfg.log_every == 0:
            logger.info("gan iteration %d: generator %.6f, discriminator %.6f", iteration + 1, gen_loss, disc_loss)
    return generator, discriminator, trace


def discriminator_accuracy(dataset, generator, discriminator):
    """Fraction of real (score > 0.5) and generated (score < 0.5) samples classified correctly"""
    data = _as_array(dataset)
    k = generator.config.k
    correct = 0
    for patches in data:
        real, _ = discriminator_forward(normalize(patches), discriminator)
        past, _ = split_sample(patches, k)
        fake, _ = discriminator_forward(_fake_sequence(patches, lfp_forward(past, generator)[0]), discriminator)
        correct += (real > 0.5) + (fake < 0.5)
    return correct / (2 * len(data))
