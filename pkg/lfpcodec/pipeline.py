import logging
import struct
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from prettytable import PrettyTable

from . import metrics
from .bits import BitReader, BitWriter
from .errors import ConfigMismatchError, DecodeError, FormatError
from .frame import Frame, VideoSeq
from .predictors import (DEFAULT_SEARCH_RANGE, MB, MotionCost, MotionField, Prediction, bmc_compensate,
                         bmc_search, fd_predict, lfp_predict, max_motion)
from .residual_codec import PlaneKind, QuantParams, read_plane, write_plane
from .tensor_nn import load_weights

logger = logging.getLogger(__name__)

STREAM_MAGIC = b"LPVC"
STREAM_VERSION = 1


@dataclass
class CodecConfig:

    class Predictor(Enum):
        FD = 0
        BMC = 1
        LFP = 2

    predictor: Predictor = Predictor.FD
    k: int = 1
    qp: int = 28
    search_range: int = DEFAULT_SEARCH_RANGE
    weights_path: str = None
    cost: MotionCost = MotionCost.SAD

    def __post_init__(self):
        self.predictor = CodecConfig.Predictor(self.predictor)
        self.cost = MotionCost(self.cost)
        assert self.k >= 1, "K must be at least 1"
        assert self.search_range >= 0, "search range must be non-negative"
        QuantParams(self.qp)

    @property
    def quant(self):
        return QuantParams(self.qp)

    def to_dict(self):
        d = asdict(self)
        d["predictor"] = self.predictor.name
        d["cost"] = self.cost.value
        return d


@dataclass
class BitstreamHeader:
    width: int
    height: int
    frame_count: int
    rate_num: int
    rate_den: int
    predictor: CodecConfig.Predictor
    k: int
    qp: int
    version: int = STREAM_VERSION

    FORMAT = "<4s9I"

    def pack(self):
        return struct.pack(BitstreamHeader.FORMAT, STREAM_MAGIC, self.version, self.width, self.height,
                           self.frame_count, self.rate_num, self.rate_den, self.predictor.value, self.k, self.qp)

    @classmethod
    def size(cls):
        return struct.calcsize(cls.FORMAT)

    @classmethod
    def unpack(cls, data):
        if len(data) < cls.size():
            raise FormatError("bitstream shorter than its header")
        magic, version, width, height, count, num, den, predictor, k, qp = struct.unpack_from(cls.FORMAT, data)
        if magic != STREAM_MAGIC:
            raise FormatError("bad magic {!r}, not an LPVC bitstream".format(magic))
        if version != STREAM_VERSION:
            raise FormatError("unsupported bitstream version {}".format(version))
        try:
            predictor = CodecConfig.Predictor(predictor)
        except ValueError as e:
            raise FormatError("unknown predictor id {}".format(predictor)) from e
        if width == 0 or height == 0 or count == 0 or num == 0 or den == 0 or k == 0 or qp > QuantParams.MAX_QP:
            raise FormatError("invalid bitstream header fields")
        return cls(width, height, count, num, den, predictor, k, qp, version)


@dataclass
class FrameStats:
    index: int
    intra: bool
    mv_bits: int
    residual_bits: int
    payload_bytes: int
    prediction_psnr: float
    reconstruction_psnr: float

    @property
    def bits(self):
        return self.mv_bits + self.residual_bits


@dataclass
class EncodeStats:
    frames: list
    fps: float
    reconstruction: VideoSeq = field(default=None, repr=False)

    @property
    def total_bits(self):
        return sum(f.bits for f in self.frames)

    @property
    def payload_bits(self):
        return 8 * sum(f.payload_bytes for f in self.frames)

    @property
    def mv_bits(self):
        return sum(f.mv_bits for f in self.frames)

    @property
    def bitrate_kbps(self):
        return metrics.bitrate_kbps(self.payload_bits, self.fps, len(self.frames))

    def mean_psnr(self, skip=0):
        return float(np.mean([f.reconstruction_psnr for f in self.frames[skip:]]))

    def __str__(self):
        table = PrettyTable()
        table.field_names = ["frame", "type", "mv_bits", "residual_bits", "pred_psnr", "recon_psnr"]
        for f in self.frames:
            table.add_row([f.index, "I" if f.intra else "P", f.mv_bits, f.residual_bits,
                           "-" if f.prediction_psnr is None else "{:.2f}".format(f.prediction_psnr),
                           "{:.2f}".format(f.reconstruction_psnr)])
        return "{}\n{:.3f} kbps, mean PSNR {:.3f} dB".format(table, self.bitrate_kbps, self.mean_psnr())


def resolve_weights(cfg, weights=None):
    """Generator weights for an LFP run, rounded to the precision the decoder reads back

    :param cfg: CodecConfig
    :param weights: in-memory Weights, defaults to loading `cfg.weights_path`
    :returns: Weights, or None for FD/BMC
    """
    if cfg.predictor is not CodecConfig.Predictor.LFP:
        return None
    if weights is None:
        if not cfg.weights_path:
            raise ConfigMismatchError("the LFP predictor needs a weight file")
        weights = load_weights(cfg.weights_path)
    if weights.config.k != cfg.k:
        raise ConfigMismatchError("weights were trained for K={}, codec runs with K={}".format(
            weights.config.k, cfg.k))
    return weights.rounded()


def context_size(cfg):
    """Number of past frames a predictor consumes"""
    return cfg.k if cfg.predictor is CodecConfig.Predictor.LFP else 1


def predict(cfg, context, current=None, weights=None, field=None):
    """Run the configured predictor

    :param cfg: CodecConfig
    :param context: past frames, oldest first
    :param current: current original frame, only used by the BMC search at the encoder
    :param weights: generator Weights for LFP
    :param field: decoded MotionField, replaces the BMC search at the decoder
    :returns: Prediction
    """
    if cfg.predictor is CodecConfig.Predictor.FD:
        return fd_predict(context[-1])
    if cfg.predictor is CodecConfig.Predictor.BMC:
        if field is None:
            field = bmc_search(current, context[-1], cfg.search_range, cost=cfg.cost)
        return Prediction(bmc_compensate(context[-1], field), field)
    return lfp_predict(list(context)[-cfg.k:], weights)


def write_motion_field(writer, field):
    """Differential MV coding: se(dx - dx_left), se(dy - dy_left), (0, 0) predictor at each row start"""
    rows, cols = field.grid
    mvs = field.mvs.reshape(rows, cols, 2)
    for row in mvs:
        left = (0, 0)
        for dx, dy in row:
            writer.write_se(int(dx - left[0]))
            writer.write_se(int(dy - left[1]))
            left = (dx, dy)


def read_motion_field(reader, width, height):
    rows, cols = -(-height // MB), -(-width // MB)
    bound = max_motion(width, height)
    mvs = []
    for _ in range(rows):
        left = (0, 0)
        for _ in range(cols):
            left = (left[0] + reader.read_se(), left[1] + reader.read_se())
            if abs(left[0]) > bound or abs(left[1]) > bound:
                raise DecodeError("motion vector {} out of range".format(left))
            mvs.append(left)
    return MotionField(width, height, mvs)


def encode_video(seq, cfg, weights=None):
    """Closed-loop predictive encoder

    Frames 0..K-1 are intra coded. Every later frame is predicted from the
    reconstructed context, the residual is coded, and the reconstruction the
    decoder will produce is pushed into the context window.

    :param seq: VideoSeq
    :param cfg: CodecConfig
    :param weights: generator Weights for LFP, defaults to loading `cfg.weights_path`
    :returns: (bitstream bytes, EncodeStats)
    """
    weights = resolve_weights(cfg, weights)
    q = cfg.quant
    header = BitstreamHeader(seq.width, seq.height, len(seq), seq.frame_rate[0], seq.frame_rate[1],
                             cfg.predictor, cfg.k, cfg.qp)
    if len(seq) <= cfg.k:
        logger.warning("sequence of %d frames is entirely intra coded with K=%d", len(seq), cfg.k)
    chunks = [header.pack()]
    context = deque(maxlen=context_size(cfg))
    frame_stats, recon_frames = [], []
    for index, frame in enumerate(seq):
        writer = BitWriter()
        mv_bits, pred_psnr = 0, None
        if index < cfg.k:
            recon = write_plane(writer, frame.samples, q, PlaneKind.Intra)
        else:
            prediction = predict(cfg, context, frame, weights)
            pred_psnr = metrics.psnr(prediction.frame, frame)
            if prediction.side_info is not None:
                write_motion_field(writer, prediction.side_info)
                mv_bits = writer.tell()
            residual = frame.samples.astype(np.int64) - prediction.frame.samples
            decoded = write_plane(writer, residual, q, PlaneKind.Residual)
            recon = np.clip(prediction.frame.samples + decoded, 0, 255)
        recon = Frame(recon.astype(np.uint8))
        context.append(recon)
        recon_frames.append(recon)
        payload = writer.getvalue()
        chunks.append(struct.pack("<I", len(payload)))
        chunks.append(payload)
        stats = FrameStats(index, index < cfg.k, mv_bits, writer.tell() - mv_bits, len(payload),
                           pred_psnr, metrics.psnr(recon, frame))
        frame_stats.append(stats)
        logger.debug("frame %d: %s", index, stats)
    stats = EncodeStats(frame_stats, seq.fps, VideoSeq(recon_frames, seq.frame_rate))
    logger.info("encoded %d frames with %s at qp %d: %.3f kbps, %.3f dB",
                len(seq), cfg.predictor.name, cfg.qp, stats.bitrate_kbps, stats.mean_psnr())
    return b"".join(chunks), stats


def read_header(data):
    return BitstreamHeader.unpack(data)


def decode_video(data, weights=None, weights_path=None):
    """Decode an LPVC bitstream

    :param data: bitstream bytes
    :param weights: generator Weights for LFP streams
    :param weights_path: weight file for LFP streams, used when `weights` is None
    :returns: VideoSeq bit-exactly equal to the encoder's reconstruction
    """
    header = BitstreamHeader.unpack(data)
    cfg = CodecConfig(header.predictor, header.k, header.qp, weights_path=weights_path)
    weights = resolve_weights(cfg, weights)
    q = cfg.quant
    pos = BitstreamHeader.size()
    context = deque(maxlen=context_size(cfg))
    frames = []
    for index in range(header.frame_count):
        if pos + 4 > len(data):
            raise FormatError("bitstream truncated before frame {}".format(index))
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        payload = data[pos:pos + length]
        if len(payload) != length:
            raise FormatError("payload of frame {} is truncated".format(index))
        pos += length
        reader = BitReader(payload)
        try:
            if index < header.k:
                recon = read_plane(reader, header.width, header.height, q, PlaneKind.Intra)
            else:
                field = None
                if cfg.predictor is CodecConfig.Predictor.BMC:
                    field = read_motion_field(reader, header.width, header.height)
                prediction = predict(cfg, context, weights=weights, field=field)
                decoded = read_plane(reader, header.width, header.height, q, PlaneKind.Residual)
                recon = np.clip(prediction.frame.samples + decoded, 0, 255)
        except DecodeError as e:
            raise DecodeError("frame {}: {}".format(index, e)) from e
        recon = Frame(recon.astype(np.uint8))
        context.append(recon)
        frames.append(recon)
    if pos != len(data):
        logger.warning("%d trailing bytes after the last frame", len(data) - pos)
    return VideoSeq(frames, (header.rate_num, header.rate_den))


def predict_only(seq, cfg, weights=None):
    """Open-loop prediction quality using original past frames as context

    :param seq: VideoSeq
    :param cfg: CodecConfig selecting the predictor
    :param weights: generator Weights for LFP
    :returns: list of (frame index, PSNR of the prediction) for every frame index >= context size
    """
    weights = resolve_weights(cfg, weights)
    size = context_size(cfg)
    if len(seq) <= size:
        raise ValueError("sequence of {} frames is shorter than the context of {}".format(len(seq), size + 1))
    frames = seq.frames
    results = []
    for index in range(size, len(frames)):
        prediction = predict(cfg, frames[index - size:index], frames[index], weights)
        results.append((index, metrics.psnr(prediction.frame, frames[index])))
    return results


def rd_point(seq, cfg, weights=None):
    """Encode at one QP and return its (bitrate kbps, mean decoded PSNR) point"""
    _, stats = encode_video(seq, cfg, weights)
    return metrics.RdPoint(stats.bitrate_kbps, stats.mean_psnr())


def _rd_point_job(args):
    return rd_point(*args)


def rd_sweep(seq, cfg, qps, weights=None, jobs=1):
    """Encode a sequence at every QP of a sweep

    :param seq: VideoSeq
    :param cfg: CodecConfig; its qp is replaced by each sweep value
    :param qps: iterable of QPs
    :param weights: generator Weights for LFP
    :param jobs: worker processes, defaults to 1 (sequential)
    :returns: list of (qp, RdPoint) in QP order
    """
    qps = sorted(qps)
    weights = resolve_weights(cfg, weights)
    tasks = [(seq, CodecConfig(cfg.predictor, cfg.k, qp, cfg.search_range, cfg.weights_path, cfg.cost), weights)
             for qp in qps]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_rd_point_job, tasks))
    else:
        points = [_rd_point_job(t) for t in tasks]
    for qp, point in zip(qps, points):
        logger.info("qp %d: %.3f kbps, %.3f dB", qp, point.bitrate, point.psnr)
    return list(zip(qps, points))
