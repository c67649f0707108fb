import logging
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigMismatchError
from .frame import Frame, round_half_away
from .networks import lfp_forward

logger = logging.getLogger(__name__)

MB = 16
DEFAULT_SEARCH_RANGE = 16


def max_motion(width, height):
    """Largest |dx| or |dy| in half-pel units; further out a block only sees replicated edges"""
    return 2 * (max(width, height) + MB)


class MotionCost(Enum):
    SAD = "sad"
    MSE = "mse"


class MotionField:
    """Per-block motion vectors in half-pel units, raster order

    The convention is predicted(x, y) = ref(x + dx / 2, y + dy / 2).
    """

    def __init__(self, width, height, mvs, block_size=MB, costs=None):
        self._width = width
        self._height = height
        self._block_size = block_size
        mvs = np.asarray(mvs, dtype=np.int64).reshape(-1, 2)
        if len(mvs) != self.num_blocks:
            raise ValueError("{} motion vectors for a grid of {} blocks".format(len(mvs), self.num_blocks))
        self._mvs = mvs
        self._costs = None if costs is None else np.asarray(costs)

    @property
    def block_size(self):
        return self._block_size

    @property
    def grid(self):
        """(block rows, block columns)"""
        return -(-self._height // self._block_size), -(-self._width // self._block_size)

    @property
    def num_blocks(self):
        rows, cols = self.grid
        return rows * cols

    @property
    def mvs(self):
        """(dx, dy) pairs, as numpy array with shape (num_blocks, 2)"""
        return self._mvs.copy()

    @property
    def costs(self):
        """Matching cost of each block's chosen vector, when produced by `bmc_search`"""
        return None if self._costs is None else self._costs.copy()

    def __eq__(self, other):
        return isinstance(other, MotionField) and self.grid == other.grid and np.array_equal(self._mvs, other._mvs)


class Prediction:

    def __init__(self, frame, side_info=None):
        self._frame = frame
        self._side_info = side_info

    @property
    def frame(self):
        return self._frame

    @property
    def side_info(self):
        return self._side_info


def fd_predict(past):
    """Frame difference: the prediction is the most recent decoded frame"""
    return Prediction(past)


def half_pel_sample(ref, x, y):
    """Sample a frame at a half-pel position

    :param ref: Frame
    :param x: horizontal position in half-pel units
    :param y: vertical position in half-pel units
    :returns: integer sample; half positions give the bilinear average rounded half away
        from zero; positions outside the frame are clamped (edge replication)
    """
    samples = ref.samples.astype(np.float64)
    h, w = samples.shape

    def taps(pos, size):
        lo, hi = pos // 2, (pos + 1) // 2
        return min(max(lo, 0), size - 1), min(max(hi, 0), size - 1)

    x0, x1 = taps(int(x), w)
    y0, y1 = taps(int(y), h)
    mean = (samples[y0, x0] + samples[y0, x1] + samples[y1, x0] + samples[y1, x1]) / 4
    return int(round_half_away(mean))


def _upsample(ref, pad):
    """Half-pel grid of a frame padded by `pad` pixels of edge replication

    Entry [2i + a, 2j + b] holds ref sampled at padded position (j + b/2, i + a/2).
    """
    p = np.pad(ref.astype(np.float64), pad, mode="edge")
    h, w = p.shape
    up = np.empty((2 * h - 1, 2 * w - 1))
    up[::2, ::2] = p
    up[1::2, ::2] = (p[:-1] + p[1:]) / 2
    up[::2, 1::2] = (p[:, :-1] + p[:, 1:]) / 2
    up[1::2, 1::2] = (p[:-1, :-1] + p[:-1, 1:] + p[1:, :-1] + p[1:, 1:]) / 4
    return round_half_away(up)


def _padded_current(samples, block_size):
    h, w = samples.shape
    return np.pad(samples.astype(np.float64), ((0, -h % block_size), (0, -w % block_size)), mode="edge")


def _candidate_order(search_range):
    """Half-pel displacements in [-2R, 2R]^2, raster order (dy outer, dx inner)"""
    r = 2 * search_range
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return dx.ravel(), dy.ravel()


def _block_costs(block, windows, cost):
    diff = windows - block
    if cost is MotionCost.MSE:
        return (diff ** 2).sum(axis=(-2, -1))
    return np.abs(diff).sum(axis=(-2, -1))


def bmc_search(current, ref, search_range=DEFAULT_SEARCH_RANGE, block_size=MB, cost=MotionCost.SAD):
    """Exhaustive half-pel block motion search

    Every displacement in [-2R, 2R]^2 half-pel units is evaluated; the minimum
    cost wins, ties broken by smaller |dx| + |dy|, then by raster order of the
    candidates. Partial edge blocks repeat their last in-frame row and column in
    both the current block and every candidate, so the reported cost is the cost
    of the block `bmc_compensate` produces.

    :param current: Frame to predict
    :param ref: reference Frame with the same dimensions
    :param search_range: R in integer pixels, defaults to 16
    :param block_size: defaults to 16
    :param cost: MotionCost, defaults to SAD
    :returns: MotionField
    """
    if current.shape != ref.shape:
        raise ValueError("current and reference frames differ in size")
    search_range = min(search_range, max_motion(current.width, current.height) // 2)
    height, width = current.shape
    cur = _padded_current(current.samples, block_size)
    pad = search_range + 1 + cur.shape[0] - current.height + cur.shape[1] - current.width
    up = _upsample(ref.samples, pad)
    cand_dx, cand_dy = _candidate_order(search_range)
    span = 4 * search_range + 1
    l1 = np.abs(cand_dx) + np.abs(cand_dy)
    raster = np.arange(span * span)

    rows, cols = cur.shape[0] // block_size, cur.shape[1] // block_size
    mvs, costs = [], []
    for by in range(rows):
        for bx in range(cols):
            y0, x0 = by * block_size, bx * block_size
            block = cur[y0:y0 + block_size, x0:x0 + block_size]
            # half-pel origin of the block's top-left pixel at zero displacement
            oy, ox = 2 * (y0 + pad), 2 * (x0 + pad)
            region = up[oy - 2 * search_range:oy + 2 * search_range + 2 * block_size - 1,
                        ox - 2 * search_range:ox + 2 * search_range + 2 * block_size - 1]
            windows = sliding_window_view(region, (2 * block_size - 1, 2 * block_size - 1))[:, :, ::2, ::2]
            if y0 + block_size > height or x0 + block_size > width:
                inside_y = np.minimum(np.arange(block_size), height - 1 - y0)
                inside_x = np.minimum(np.arange(block_size), width - 1 - x0)
                windows = windows[:, :, inside_y][:, :, :, inside_x]
            block_cost = _block_costs(block, windows, cost).ravel()
            best = np.lexsort((raster, l1, block_cost))[0]
            mvs.append((cand_dx[best], cand_dy[best]))
            costs.append(block_cost[best])
    field = MotionField(current.width, current.height, mvs, block_size, costs)
    logger.debug("bmc search: %d blocks, total cost %.0f", len(mvs), float(np.sum(costs)))
    return field


def bmc_compensate(ref, field):
    """Build the motion-compensated prediction of a frame

    :param ref: reference Frame
    :param field: MotionField on the frame's block grid
    :returns: predicted Frame, cropped to the reference dimensions
    """
    if field.grid != (-(-ref.height // field.block_size), -(-ref.width // field.block_size)):
        raise ValueError("motion field does not match the frame's block grid")
    bs = field.block_size
    rows, cols = field.grid
    max_mv = int(np.abs(field.mvs).max()) if field.num_blocks else 0
    pad = (max_mv + 1) // 2 + 1 + rows * bs - ref.height + cols * bs - ref.width
    up = _upsample(ref.samples, pad)
    out = np.empty((rows * bs, cols * bs))
    for index, (dx, dy) in enumerate(field.mvs):
        by, bx = divmod(index, cols)
        oy, ox = 2 * (by * bs + pad) + dy, 2 * (bx * bs + pad) + dx
        out[by * bs:(by + 1) * bs, bx * bs:(bx + 1) * bs] = up[oy:oy + 2 * bs:2, ox:ox + 2 * bs:2]
    return Frame(out[:ref.height, :ref.width].astype(np.uint8))


def normalize(samples):
    """Map 8-bit samples to [-1, 1] via v / 127.5 - 1"""
    return np.asarray(samples, dtype=np.float64) / 127.5 - 1


def denormalize(values):
    """Map network output back to 8-bit: clamp(round((y + 1) * 127.5), 0, 255), halves away from zero"""
    return np.clip(round_half_away((np.asarray(values) + 1) * 127.5), 0, 255).astype(np.uint8)


def lfp_predict(past, weights):
    """Learned frame prediction from the K most recent decoded frames

    :param past: list of K Frames, oldest first
    :param weights: generator Weights
    :returns: Prediction without side information
    """
    k = weights.config.k
    if len(past) != k:
        raise ConfigMismatchError("learned predictor needs {} past frames, got {}".format(k, len(past)))
    if any(f.shape != past[0].shape for f in past):
        raise ValueError("past frames differ in size")
    stacked = normalize(np.stack([f.samples for f in past]))
    y, _ = lfp_forward(stacked, weights)
    return Prediction(Frame(denormalize(y[0])))


def block_costs(current, prediction, block_size=MB, cost=MotionCost.SAD):
    """Per-block matching cost between a frame and its prediction, raster order"""
    cur = _padded_current(current.samples, block_size)
    pred = _padded_current(prediction.samples, block_size)
    rows, cols = cur.shape[0] // block_size, cur.shape[1] // block_size
    blocks_c = cur.reshape(rows, block_size, cols, block_size).swapaxes(1, 2)
    blocks_p = pred.reshape(rows, block_size, cols, block_size).swapaxes(1, 2)
    return _block_costs(blocks_p, blocks_c, cost).ravel()
