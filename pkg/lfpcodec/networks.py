import numpy as np

from . import tensor_nn as nn
from .errors import ConfigMismatchError
from .tensor_nn import Activation, Weights


def _require(weights, kind):
    if weights.kind is not kind:
        raise ConfigMismatchError("expected {} weights, got {}".format(kind.name, weights.kind.name))


def lfp_forward(past, weights):
    """Generator forward pass

    input conv (K -> C) -> B residual blocks -> global skip from the input conv
    output -> output conv (C -> 1); the output layer is linear unless the config
    selects tanh.

    :param past: K past frames normalized to [-1, 1], as numpy array with shape (K, H, W)
    :param weights: generator Weights
    :returns: (prediction with shape (1, H, W), cache for `lfp_backward`)
    """
    _require(weights, Weights.Kind.Generator)
    config, params = weights.config, weights.params
    if past.shape[0] != config.k:
        raise ConfigMismatchError("generator expects {} input frames, got {}".format(config.k, past.shape[0]))
    if min(past.shape[1:]) < config.kernel:
        raise ValueError("frames of {}x{} are smaller than the {}x{} kernel".format(
            past.shape[2], past.shape[1], config.kernel, config.kernel))
    pad = config.kernel // 2
    h0 = nn.conv2d(past, params["input.w"], params["input.b"], pad)
    h, caches = h0, []
    for i in range(config.blocks):
        h, cache = nn.residual_block(h, params, "block{}".format(i), config.res_scale)
        caches.append(cache)
    body = h + h0
    z = nn.conv2d(body, params["output.w"], params["output.b"], pad)
    y = nn.activation(z, config.output)
    return y, (past, body, caches, z, y)


def lfp_backward(dy, cache, weights):
    """Backward pass of `lfp_forward`

    :param dy: gradient w.r.t. the prediction, shape (1, H, W)
    :returns: (grads keyed by parameter name, gradient w.r.t. the input frames)
    """
    config, params = weights.config, weights.params
    past, body, caches, z, y = cache
    pad = config.kernel // 2
    grads = {}
    dz = nn.activation_backward(dy, z, y, config.output)
    dbody, grads["output.w"], grads["output.b"] = nn.conv2d_backward(dz, body, params["output.w"], pad)
    dh = dbody
    for i in reversed(range(config.blocks)):
        dh, block_grads = nn.residual_block_backward(dh, caches[i], params, "block{}".format(i), config.res_scale)
        grads.update(block_grads)
    dh0 = dh + dbody
    dpast, grads["input.w"], grads["input.b"] = nn.conv2d_backward(dh0, past, params["input.w"], pad)
    return grads, dpast


def discriminator_forward(patchseq, weights):
    """Discriminator forward pass

    conv7 -> leaky relu -> avg pool -> conv7 -> leaky relu -> avg pool -> conv7 -> sigmoid,
    no padding, so a 48x48 input shrinks 42 -> 21 -> 15 -> 7 -> 1.

    :param patchseq: 8 context patches plus one real or generated patch stacked as channels,
        normalized to [-1, 1], as numpy array with shape (9, 48, 48)
    :param weights: discriminator Weights
    :returns: (score in (0, 1), cache for `discriminator_backward`)
    """
    _require(weights, Weights.Kind.Discriminator)
    config, p = weights.config, weights.params
    expected = (config.frames, config.patch, config.patch)
    if patchseq.shape != expected:
        raise ValueError("discriminator expects input of shape {}, got {}".format(expected, patchseq.shape))
    z1 = nn.conv2d(patchseq, p["conv1.w"], p["conv1.b"])
    a1 = nn.activation(z1, Activation.LeakyReLU)
    s1 = nn.avg_pool(a1)
    z2 = nn.conv2d(s1, p["conv2.w"], p["conv2.b"])
    a2 = nn.activation(z2, Activation.LeakyReLU)
    s2 = nn.avg_pool(a2)
    z3 = nn.conv2d(s2, p["conv3.w"], p["conv3.b"])
    if z3.shape != (1, 1, 1):
        raise ValueError("discriminator output is {}, not a scalar".format(z3.shape))
    score = nn.activation(z3, Activation.Sigmoid)
    return float(score[0, 0, 0]), (patchseq, z1, a1, s1, z2, a2, s2, z3, score)


def discriminator_backward(dscore, cache, weights):
    """Backward pass of `discriminator_forward`

    :param dscore: gradient w.r.t. the scalar score
    :returns: (grads keyed by parameter name, gradient w.r.t. the input patch sequence)
    """
    p = weights.params
    x, z1, a1, s1, z2, a2, s2, z3, score = cache
    grads = {}
    dz3 = nn.activation_backward(np.full((1, 1, 1), dscore), z3, score, Activation.Sigmoid)
    ds2, grads["conv3.w"], grads["conv3.b"] = nn.conv2d_backward(dz3, s2, p["conv3.w"])
    da2 = nn.avg_pool_backward(ds2, a2.shape)
    dz2 = nn.activation_backward(da2, z2, a2, Activation.LeakyReLU)
    ds1, grads["conv2.w"], grads["conv2.b"] = nn.conv2d_backward(dz2, s1, p["conv2.w"])
    da1 = nn.avg_pool_backward(ds1, a1.shape)
    dz1 = nn.activation_backward(da1, z1, a1, Activation.LeakyReLU)
    dx, grads["conv1.w"], grads["conv1.b"] = nn.conv2d_backward(dz1, x, p["conv1.w"])
    return grads, dx
