"""Dense float64 tensor ops with hand-written backward passes

Tensors are plain numpy arrays: activations have shape (channels, height,
width), kernels (out_ch, in_ch, kh, kw). There is no batch dimension;
minibatches are loops over samples with gradient accumulation.
"""
import logging
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigMismatchError, FormatError

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"LFPW"
WEIGHTS_VERSION = 1


def _check_finite(x):
    assert np.all(np.isfinite(x)), "non-finite values in tensor"
    return x


class Activation(Enum):
    Identity = 0
    ReLU = 1
    LeakyReLU = 2
    Sigmoid = 3
    Tanh = 4


LEAKY_SLOPE = 0.2


def _correlate(x, w):
    """Valid cross-correlation of x (C, H, W) with w (O, C, kh, kw)"""
    kh, kw = w.shape[2:]
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (C, H', W', kh, kw)
    return np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4]))


def _pad(x, padding):
    if not padding:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding)))


def conv2d(x, w, b, padding=0):
    """2-D cross-correlation with zero padding

    :param x: input, as numpy array with shape (C, H, W)
    :param w: kernel, as numpy array with shape (O, C, k, k), k odd
    :param b: bias, as numpy array with shape (O,)
    :param padding: zero padding on each border, (k - 1) / 2 keeps the size
    :returns: output, as numpy array with shape (O, H + 2p - k + 1, W + 2p - k + 1)
    """
    if x.shape[0] != w.shape[1]:
        raise ValueError("channel mismatch: input has {}, kernel expects {}".format(x.shape[0], w.shape[1]))
    assert w.shape[2] % 2 == 1 and w.shape[3] % 2 == 1, "kernel spatial dims must be odd"
    y = _correlate(_pad(x, padding), w) + b[:, None, None]
    return _check_finite(y)


def conv2d_backward(dy, x, w, padding=0):
    """Gradients of `conv2d`

    :returns: (dx, dw, db)
    """
    kh, kw = w.shape[2:]
    xp = _pad(x, padding)
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    dw = np.tensordot(dy, windows, axes=([1, 2], [1, 2]))
    db = dy.sum(axis=(1, 2))
    dyp = np.pad(dy, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    dxp = _correlate(dyp, w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    if padding:
        dxp = dxp[:, padding:-padding, padding:-padding]
    return dxp, dw, db


def activation(x, kind):
    """Elementwise nonlinearity

    :param x: input array
    :param kind: Activation
    :returns: output array with the same shape
    """
    if kind is Activation.ReLU:
        return np.maximum(x, 0)
    if kind is Activation.LeakyReLU:
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    if kind is Activation.Sigmoid:
        return 0.5 * (1 + np.tanh(0.5 * x))
    if kind is Activation.Tanh:
        return np.tanh(x)
    return x


def activation_backward(dy, x, y, kind):
    """Gradient of `activation`; relu'(0) = 0

    :param dy: upstream gradient
    :param x: activation input
    :param y: activation output
    :param kind: Activation
    """
    if kind is Activation.ReLU:
        return dy * (x > 0)
    if kind is Activation.LeakyReLU:
        return dy * np.where(x > 0, 1.0, LEAKY_SLOPE)
    if kind is Activation.Sigmoid:
        return dy * y * (1 - y)
    if kind is Activation.Tanh:
        return dy * (1 - y ** 2)
    return dy


def avg_pool(x):
    """2x2 average pooling with stride 2; odd trailing rows/columns are dropped"""
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    return x[:, :2 * h2, :2 * w2].reshape(c, h2, 2, w2, 2).mean(axis=(2, 4))


def avg_pool_backward(dy, input_shape):
    dx = np.zeros(input_shape)
    h2, w2 = dy.shape[1:]
    dx[:, :2 * h2, :2 * w2] = np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) / 4
    return dx


def residual_block(x, params, prefix, res_scale=0.1):
    """y = x + res_scale * conv2(relu(conv1(x))), 3x3 same-size convolutions

    :param x: input, as numpy array with shape (C, H, W)
    :param params: mapping holding "<prefix>.conv1.w", "<prefix>.conv1.b", "<prefix>.conv2.w", "<prefix>.conv2.b"
    :param prefix: parameter name prefix
    :param res_scale: residual scaling, defaults to 0.1
    :returns: (y, cache)
    """
    w1, b1 = params[prefix + ".conv1.w"], params[prefix + ".conv1.b"]
    w2, b2 = params[prefix + ".conv2.w"], params[prefix + ".conv2.b"]
    if w1.shape[1] != x.shape[0] or w2.shape[0] != x.shape[0]:
        raise ValueError("residual block {} does not preserve {} channels".format(prefix, x.shape[0]))
    pad = w1.shape[2] // 2
    z = conv2d(x, w1, b1, pad)
    a = activation(z, Activation.ReLU)
    r = conv2d(a, w2, b2, pad)
    return x + res_scale * r, (x, z, a)


def residual_block_backward(dy, cache, params, prefix, res_scale=0.1):
    """Backward pass of `residual_block`

    :returns: (dx, grads) with grads keyed like `params`
    """
    x, z, a = cache
    w1, w2 = params[prefix + ".conv1.w"], params[prefix + ".conv2.w"]
    pad = w1.shape[2] // 2
    da, dw2, db2 = conv2d_backward(res_scale * dy, a, w2, pad)
    dz = activation_backward(da, z, a, Activation.ReLU)
    dx, dw1, db1 = conv2d_backward(dz, x, w1, pad)
    grads = {
        prefix + ".conv1.w": dw1, prefix + ".conv1.b": db1,
        prefix + ".conv2.w": dw2, prefix + ".conv2.b": db2,
    }
    return dy + dx, grads


@dataclass
class NetConfig:
    """Generator hyperparameters; defaults are the desk-scale network"""
    k: int = 4
    blocks: int = 2
    channels: int = 16
    kernel: int = 3
    res_scale: float = 0.1
    output: Activation = Activation.Identity

    def __post_init__(self):
        assert self.k >= 1 and self.blocks >= 1 and self.channels >= 1, "K, B and C must be positive"
        assert self.kernel % 2 == 1, "kernel size must be odd"
        self.output = Activation(self.output)

    @classmethod
    def full_scale(cls):
        return cls(k=8, blocks=32, channels=256)

    def header_fields(self):
        return [self.k, self.blocks, self.channels, self.kernel,
                int(round(self.res_scale * 1000)), self.output.value]

    @classmethod
    def from_header_fields(cls, fields):
        k, blocks, channels, kernel, res_millis, output = fields
        return cls(k, blocks, channels, kernel, res_millis / 1000.0, Activation(output))

    def to_dict(self):
        d = asdict(self)
        d["output"] = self.output.name
        return d


@dataclass
class DiscConfig:
    """Discriminator hyperparameters: 7x7 valid convolutions over 9-frame 48x48 patch sequences

    `channels` sets the two hidden convs (32 and 64 by default); the third conv
    maps straight to the single score channel, so the stack is 32/64/1 rather
    than ending in a 128-channel layer.
    """
    frames: int = 9
    patch: int = 48
    kernel: int = 7
    channels: tuple = field(default=(32, 64))

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        assert len(self.channels) == 2, "the discriminator has two hidden conv layers"

    def header_fields(self):
        return [self.frames, self.patch, self.kernel] + list(self.channels)

    @classmethod
    def from_header_fields(cls, fields):
        frames, patch, kernel, c1, c2 = fields
        return cls(frames, patch, kernel, (c1, c2))

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def generator_shapes(config):
    """Parameter names and shapes of the generator, in declaration order"""
    k, c, ks = config.k, config.channels, config.kernel
    shapes = [("input.w", (c, k, ks, ks)), ("input.b", (c,))]
    for i in range(config.blocks):
        for conv in ("conv1", "conv2"):
            shapes.append(("block{}.{}.w".format(i, conv), (c, c, ks, ks)))
            shapes.append(("block{}.{}.b".format(i, conv), (c,)))
    shapes += [("output.w", (1, c, ks, ks)), ("output.b", (1,))]
    return shapes


def discriminator_shapes(config):
    c1, c2 = config.channels
    ks = config.kernel
    return [
        ("conv1.w", (c1, config.frames, ks, ks)), ("conv1.b", (c1,)),
        ("conv2.w", (c2, c1, ks, ks)), ("conv2.b", (c2,)),
        ("conv3.w", (1, c2, ks, ks)), ("conv3.b", (1,)),
    ]


class AdamState:

    def __init__(self, params):
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}
        self.t = 0


class Weights:
    """Named parameter tensors of one network plus their Adam state"""

    class Kind(Enum):
        Generator = 0
        Discriminator = 1

    def __init__(self, kind, config, params):
        self._kind = kind
        self._config = config
        expected = self.shapes()
        if [name for name, _ in expected] != list(params):
            raise ConfigMismatchError("parameter names do not match the {} layout".format(kind.name))
        for name, shape in expected:
            if tuple(np.shape(params[name])) != shape:
                raise ConfigMismatchError("parameter {} has shape {}, config implies {}".format(
                    name, np.shape(params[name]), shape))
        self.params = OrderedDict((name, np.array(params[name], dtype=np.float64)) for name, _ in expected)
        self.adam = AdamState(self.params)

    @property
    def kind(self):
        return self._kind

    @property
    def config(self):
        return self._config

    def shapes(self):
        if self._kind is Weights.Kind.Generator:
            return generator_shapes(self._config)
        return discriminator_shapes(self._config)

    def copy(self):
        other = Weights(self._kind, self._config, self.params)
        other.adam.m = {n: m.copy() for n, m in self.adam.m.items()}
        other.adam.v = {n: v.copy() for n, v in self.adam.v.items()}
        other.adam.t = self.adam.t
        return other

    def rounded(self):
        """Copy with every parameter rounded to the 32-bit precision of the weight file"""
        return Weights(self._kind, self._config,
                       OrderedDict((n, p.astype(np.float32).astype(np.float64)) for n, p in self.params.items()))

    def __eq__(self, other):
        return isinstance(other, Weights) and self._kind is other._kind and self._config == other._config \
            and all(np.array_equal(self.params[n], other.params[n]) for n in self.params)


def init_weights(kind, config, rng):
    """Uniform initialization in +-1/sqrt(fan_in), biases zero, values representable in 32 bits

    :param kind: Weights.Kind
    :param config: NetConfig or DiscConfig
    :param rng: numpy Generator
    :returns: Weights
    """
    shapes = generator_shapes(config) if kind is Weights.Kind.Generator else discriminator_shapes(config)
    params = OrderedDict()
    for name, shape in shapes:
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(np.prod(shape[1:]))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32).astype(np.float64)
    return Weights(kind, config, params)


def zero_grads(weights):
    return OrderedDict((name, np.zeros_like(p)) for name, p in weights.params.items())


def adam_step(weights, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place

    :param weights: Weights, parameters and moments are updated
    :param grads: mapping from parameter name to gradient with the parameter's shape
    :param lr: learning rate
    :returns: the updated Weights
    """
    state = weights.adam
    state.t += 1
    for name, p in weights.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError("gradient for {} has shape {}, expected {}".format(name, g.shape, p.shape))
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g ** 2
        m_hat = state.m[name] / (1 - beta1 ** state.t)
        v_hat = state.v[name] / (1 - beta2 ** state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return weights


def save_weights(weights, path):
    """Write weights as: magic LFPW, version byte, kind byte, uint32 field count,
    int32 config fields, then float32 parameters in declaration order (all little-endian)
    """
    fields = weights.config.header_fields()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<BBI", WEIGHTS_VERSION, weights.kind.value, len(fields)))
        fh.write(struct.pack("<{}i".format(len(fields)), *fields))
        for p in weights.params.values():
            fh.write(p.astype("<f4").tobytes())


def load_weights(path, expected_config=None):
    """Read a weight file written by `save_weights`

    :param path: file path
    :param expected_config: NetConfig/DiscConfig the caller runs with; a different stored config raises
        ConfigMismatchError, defaults to None (accept any)
    :returns: Weights
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError("{}: bad magic, not an LFPW weight file".format(path))
    if len(data) < 10:
        raise FormatError("{}: truncated header".format(path))
    version, kind, nfields = struct.unpack_from("<BBI", data, 4)
    if version != WEIGHTS_VERSION:
        raise FormatError("{}: unsupported weight file version {}".format(path, version))
    try:
        kind = Weights.Kind(kind)
    except ValueError as e:
        raise FormatError("{}: unknown network kind {}".format(path, kind)) from e
    offset = 10 + 4 * nfields
    if len(data) < offset:
        raise FormatError("{}: truncated header".format(path))
    fields = struct.unpack_from("<{}i".format(nfields), data, 10)
    try:
        if kind is Weights.Kind.Generator:
            config = NetConfig.from_header_fields(fields)
        else:
            config = DiscConfig.from_header_fields(fields)
    except (ValueError, AssertionError) as e:
        raise FormatError("{}: invalid network configuration {}".format(path, fields)) from e
    if expected_config is not None and expected_config != config:
        raise ConfigMismatchError("{}: file holds {}, run expects {}".format(path, config, expected_config))

    shapes = generator_shapes(config) if kind is Weights.Kind.Generator else discriminator_shapes(config)
    total = sum(int(np.prod(shape)) for _, shape in shapes)
    if len(data) - offset != 4 * total:
        raise FormatError("{}: payload holds {} bytes, header implies {}".format(path, len(data) - offset, 4 * total))
    values = np.frombuffer(data, dtype="<f4", offset=offset).astype(np.float64)
    params, pos = OrderedDict(), 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        params[name] = values[pos:pos + size].reshape(shape)
        pos += size
    logger.debug("loaded %s weights %s from %s", kind.name, config, path)
    return Weights(kind, config, params)


def gradient_check(fn, params, num_coords=20, h=1e-5, rng=None, signature=None):
    """Compare analytic gradients against central finite differences

    :param fn: callable mapping params to (loss, grads)
    :param params: mapping from name to float64 array, perturbed in place and restored
    :param num_coords: number of randomly sampled coordinates, defaults to 20
    :param h: finite-difference step, defaults to 1e-5
    :param rng: numpy Generator, defaults to a fresh unseeded one
    :param signature: optional callable mapping params to a boolean array of gate states
        (e.g. relu masks); coordinates whose +-h perturbation changes it straddle a kink and
        are skipped, defaults to None
    :returns: max relative error |a - n| / max(|a|, |n|, 1e-7) over the checked coordinates
    """
    rng = np.random.default_rng() if rng is None else rng
    _, grads = fn(params)
    base = None if signature is None else signature(params)
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, checked = 0.0, 0
    for index in rng.permutation(int(sizes.sum())):
        if checked == num_coords:
            break
        i = int(np.searchsorted(offsets, index, side="right") - 1)
        name, local = names[i], int(index - offsets[i])
        p = params[name].reshape(-1)
        original = p[local]
        p[local] = original + h
        plus, _ = fn(params)
        kink = base is not None and not np.array_equal(signature(params), base)
        p[local] = original - h
        minus, _ = fn(params)
        kink = kink or base is not None and not np.array_equal(signature(params), base)
        p[local] = original
        if kink:
            continue
        checked += 1
        numeric = (plus - minus) / (2 * h)
        analytic = grads[name].reshape(-1)[local]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-7)
        worst = max(worst, err)
    if checked < num_coords:
        logger.warning("gradient check covered %d of %d coordinates, the rest straddle kinks", checked, num_coords)
    return worst
