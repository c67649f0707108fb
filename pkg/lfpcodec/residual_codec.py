from enum import Enum

import numpy as np
from scipy import fft

from .bits import BitReader, BitWriter
from .errors import DecodeError
from .frame import round_half_away

BLOCK = 8
EOB_RUN = 63
RESIDUAL_RANGE = 255


def _zigzag_order(n=BLOCK):
    """Standard JPEG zigzag scan as a list of (row, col) pairs"""
    order = []
    for s in range(2 * n - 1):
        diagonal = [(i, s - i) for i in range(n) if 0 <= s - i < n]
        order.extend(diagonal if s % 2 else diagonal[::-1])
    return order


ZIGZAG = np.array([r * BLOCK + c for r, c in _zigzag_order()])
UNZIGZAG = np.argsort(ZIGZAG)


class QuantParams:
    """Quantizer derived from a QP in [0, 51]: step = 2^((qp - 4) / 6), floored at 0.5"""

    MIN_QP, MAX_QP = 0, 51
    MIN_STEP = 0.5

    def __init__(self, qp):
        if not QuantParams.MIN_QP <= int(qp) <= QuantParams.MAX_QP or int(qp) != qp:
            raise ValueError("qp must be an integer in [0, 51], got {}".format(qp))
        self._qp = int(qp)
        self._step = max(QuantParams.MIN_STEP, 2.0 ** ((self._qp - 4) / 6.0))

    @property
    def qp(self):
        return self._qp

    @property
    def step(self):
        return self._step

    def __eq__(self, other):
        return isinstance(other, QuantParams) and other.qp == self.qp

    def __repr__(self):
        return "QuantParams(qp={}, step={:.4f})".format(self._qp, self._step)


class PlaneKind(Enum):
    Intra = 0
    Residual = 1


class CodedPlane:

    def __init__(self, payload, bit_count, qp, width, height, kind):
        self._payload = bytes(payload)
        self._bit_count = bit_count
        self._qp = qp
        self._width = width
        self._height = height
        self._kind = kind

    @property
    def payload(self):
        return self._payload

    @property
    def bit_count(self):
        return self._bit_count

    @property
    def qp(self):
        return self._qp

    @property
    def width(self):
        return self._width

    @property
    def height(self):
        return self._height

    @property
    def kind(self):
        return self._kind

    @property
    def signed(self):
        return self._kind is PlaneKind.Residual


def dct8(block, inverse=False):
    """Orthonormal 2-D type-II DCT (type-III when `inverse`) over the last two axes

    :param block: array with shape (..., 8, 8)
    :param inverse: compute the inverse transform, defaults to False
    :returns: transformed array with the same shape, float64
    """
    block = np.asarray(block, dtype=np.float64)
    if inverse:
        return fft.idctn(block, type=2, norm="ortho", axes=(-2, -1))
    return fft.dctn(block, type=2, norm="ortho", axes=(-2, -1))


def quantize(coefs, q):
    """Uniform quantization, level = round(c / step) with halves away from zero"""
    return round_half_away(np.asarray(coefs, dtype=np.float64) / q.step).astype(np.int64)


def dequantize(levels, q):
    return np.asarray(levels, dtype=np.float64) * q.step


def zigzag(levels):
    """Scan 8x8 blocks (..., 8, 8) into zigzag vectors (..., 64)"""
    levels = np.asarray(levels)
    return levels.reshape(levels.shape[:-2] + (BLOCK * BLOCK,))[..., ZIGZAG]


def unzigzag(vector):
    """Inverse of `zigzag`: (..., 64) back to (..., 8, 8)"""
    vector = np.asarray(vector)
    return vector[..., UNZIGZAG].reshape(vector.shape[:-1] + (BLOCK, BLOCK))


def _to_blocks(plane):
    """Pad a plane to multiples of 8 by edge replication and split into (rows, cols, 8, 8) blocks"""
    h, w = plane.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    rows, cols = padded.shape[0] // BLOCK, padded.shape[1] // BLOCK
    return padded.reshape(rows, BLOCK, cols, BLOCK).swapaxes(1, 2)


def _from_blocks(blocks, height, width):
    rows, cols = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(rows * BLOCK, cols * BLOCK)[:height, :width]


def reconstruct(levels, q, kind, height, width):
    """Decoder-side reconstruction shared by encoder and decoder

    dequantize -> inverse DCT -> round half away from zero -> clamp; intra
    planes are shifted back by +128.

    :param levels: integer levels with shape (rows, cols, 8, 8)
    :returns: reconstructed plane, as int64 numpy array with shape (height, width)
    """
    pixels = round_half_away(dct8(dequantize(levels, q), inverse=True))
    plane = _from_blocks(pixels, height, width)
    if kind is PlaneKind.Intra:
        return np.clip(plane + 128, 0, 255).astype(np.int64)
    return np.clip(plane, -RESIDUAL_RANGE, RESIDUAL_RANGE).astype(np.int64)


def _write_block(writer, vector):
    nonzero = np.flatnonzero(vector)
    prev = -1
    for pos in nonzero:
        run = pos - prev - 1
        if run == EOB_RUN:
            # a lone coefficient at position 63 would collide with the EOB run
            writer.write_ue(EOB_RUN - 1)
            writer.write_se(0)
            run = 0
        writer.write_ue(int(run))
        writer.write_se(int(vector[pos]))
        prev = pos
    if prev != BLOCK * BLOCK - 1:
        writer.write_ue(EOB_RUN)


def _read_block(reader):
    vector = np.zeros(BLOCK * BLOCK, dtype=np.int64)
    pos = 0
    while pos < BLOCK * BLOCK:
        run = reader.read_ue()
        if run == EOB_RUN:
            break
        pos += run
        if pos >= BLOCK * BLOCK:
            raise DecodeError("run of {} overflows the block".format(run))
        vector[pos] = reader.read_se()
        pos += 1
    return vector


def write_plane(writer, plane, q, kind):
    """Transform, quantize and entropy-code a plane into `writer`

    :param writer: BitWriter
    :param plane: integer array; intra planes hold samples in [0, 255], residuals values in [-255, 255]
    :param q: QuantParams
    :param kind: PlaneKind
    :returns: the reconstruction the decoder will produce, as int64 numpy array
    """
    plane = np.asarray(plane, dtype=np.float64)
    height, width = plane.shape
    if kind is PlaneKind.Intra:
        plane = plane - 128
    levels = quantize(dct8(_to_blocks(plane)), q)
    for vector in zigzag(levels).reshape(-1, BLOCK * BLOCK):
        _write_block(writer, vector)
    return reconstruct(levels, q, kind, height, width)


def read_plane(reader, width, height, q, kind):
    """Decode a plane written by `write_plane`

    :param reader: BitReader positioned at the plane
    :returns: reconstructed plane, as int64 numpy array with shape (height, width)
    """
    rows, cols = -(-height // BLOCK), -(-width // BLOCK)
    vectors = np.stack([_read_block(reader) for _ in range(rows * cols)])
    levels = unzigzag(vectors).reshape(rows, cols, BLOCK, BLOCK)
    return reconstruct(levels, q, kind, height, width)


def encode_plane(plane, q, kind=PlaneKind.Residual):
    """Code one plane on its own

    :returns: (CodedPlane, reconstruction)
    """
    writer = BitWriter()
    recon = write_plane(writer, plane, q, kind)
    height, width = np.shape(plane)
    return CodedPlane(writer.getvalue(), writer.tell(), q.qp, width, height, kind), recon


def decode_plane(coded):
    """Decode a CodedPlane produced by `encode_plane`"""
    reader = BitReader(coded.payload, coded.bit_count)
    return read_plane(reader, coded.width, coded.height, QuantParams(coded.qp), coded.kind)
