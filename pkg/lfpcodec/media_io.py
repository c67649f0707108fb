import logging
import os
import re
from enum import Enum

import numpy as np

from .errors import FormatError
from .frame import Frame, VideoSeq

logger = logging.getLogger(__name__)

Y4M_MAGIC = b"YUV4MPEG2"
Y4M_FRAME = b"FRAME"


class VideoFormat(Enum):
    Y4M = "y4m"
    RAW = "raw"


def _chroma_samples(colorspace, width, height):
    """Number of chroma samples following the luma plane of one Y4M frame

    :param colorspace: value of the Y4M `C` tag, e.g. "420jpeg" or "mono"
    :param width: luma width
    :param height: luma height
    :returns: count of chroma bytes to skip per frame
    """
    half_w, half_h = (width + 1) // 2, (height + 1) // 2
    if colorspace.startswith("mono"):
        return 0
    if colorspace.startswith("420"):
        return 2 * half_w * half_h
    if colorspace.startswith("422"):
        return 2 * half_w * height
    if colorspace.startswith("444"):
        return 2 * width * height
    raise FormatError("unsupported Y4M colorspace \"C{}\"".format(colorspace))


def _parse_y4m_header(line):
    """Parse the stream header line of a Y4M file

    :param line: header line without trailing newline, as bytes
    :returns: (width, height, (rate_num, rate_den), colorspace)
    """
    tokens = line.split(b" ")
    if tokens[0] != Y4M_MAGIC:
        raise FormatError("not a YUV4MPEG2 stream")
    width = height = None
    rate = (30, 1)
    colorspace = "420"
    for token in tokens[1:]:
        if not token:
            continue
        tag, value = chr(token[0]), token[1:].decode("ascii", errors="replace")
        try:
            if tag == "W":
                width = int(value)
            elif tag == "H":
                height = int(value)
            elif tag == "F":
                num, den = value.split(":")
                rate = (int(num), int(den))
            elif tag == "C":
                colorspace = value
        except ValueError as e:
            raise FormatError("malformed Y4M header field \"{}\"".format(token.decode("ascii", "replace"))) from e
    if width is None or height is None:
        raise FormatError("Y4M header lacks W or H")
    if width <= 0 or height <= 0:
        raise FormatError("zero or negative Y4M dimensions {}x{}".format(width, height))
    if rate[0] <= 0 or rate[1] <= 0:
        raise FormatError("invalid Y4M frame rate {}:{}".format(*rate))
    return width, height, rate, colorspace


def _read_y4m(data):
    header_end = data.find(b"\n")
    if header_end < 0:
        raise FormatError("Y4M header is not terminated")
    width, height, rate, colorspace = _parse_y4m_header(data[:header_end])
    luma_size = width * height
    chroma_size = _chroma_samples(colorspace, width, height)
    if chroma_size:
        logger.warning("discarding chroma planes of Y4M stream (C%s), keeping luma only", colorspace)

    frames = []
    pos = header_end + 1
    while pos < len(data):
        line_end = data.find(b"\n", pos)
        if line_end < 0 or not data[pos:line_end].startswith(Y4M_FRAME):
            raise FormatError("expected FRAME marker at byte {}".format(pos))
        start = line_end + 1
        end = start + luma_size + chroma_size
        if end > len(data):
            raise FormatError("truncated Y4M payload in frame {}".format(len(frames)))
        luma = np.frombuffer(data, dtype=np.uint8, count=luma_size, offset=start)
        frames.append(Frame(luma.reshape(height, width)))
        pos = end
    if not frames:
        raise FormatError("Y4M stream contains no frames")
    return VideoSeq(frames, rate)


def _read_raw(data, width, height, frame_count, frame_rate):
    if not width or not height or width <= 0 or height <= 0:
        raise FormatError("raw video needs positive width and height")
    frame_size = width * height
    if len(data) % frame_size:
        raise FormatError("raw file of {} bytes is not a whole number of {}x{} frames".format(
            len(data), width, height))
    stored = len(data) // frame_size
    if frame_count is not None and frame_count != stored:
        raise FormatError("raw file holds {} frames, {} expected".format(stored, frame_count))
    if stored == 0:
        raise FormatError("raw file is empty")
    planes = np.frombuffer(data, dtype=np.uint8).reshape(stored, height, width)
    return VideoSeq([Frame(p) for p in planes], frame_rate)


def read_video(path, fmt=VideoFormat.Y4M, width=None, height=None, frame_count=None, frame_rate=(30, 1)):
    """Read a grayscale video sequence

    :param path: file path
    :param fmt: VideoFormat.Y4M or VideoFormat.RAW, defaults to Y4M
    :param width: frame width, required for raw files
    :param height: frame height, required for raw files
    :param frame_count: expected number of frames for raw files, optional
    :param frame_rate: (numerator, denominator), only used for raw files
    :returns: VideoSeq with frames in stored order
    """
    fmt = VideoFormat(fmt)
    with open(path, "rb") as fh:
        data = fh.read()
    if fmt is VideoFormat.Y4M:
        return _read_y4m(data)
    return _read_raw(data, width, height, frame_count, frame_rate)


def write_video(seq, path, fmt=VideoFormat.Y4M):
    """Write a grayscale video sequence, bit-exact with respect to `read_video`

    Y4M output is written with `Cmono` so only the luma plane is stored.

    :param seq: VideoSeq
    :param path: file path
    :param fmt: VideoFormat.Y4M or VideoFormat.RAW, defaults to Y4M
    """
    fmt = VideoFormat(fmt)
    with open(path, "wb") as fh:
        if fmt is VideoFormat.Y4M:
            fh.write("YUV4MPEG2 W{} H{} F{}:{} Ip A1:1 Cmono\n".format(
                seq.width, seq.height, *seq.frame_rate).encode("ascii"))
        for frame in seq:
            if fmt is VideoFormat.Y4M:
                fh.write(Y4M_FRAME + b"\n")
            fh.write(frame.samples.tobytes())


_PGM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\S+)")


def read_pgm(path):
    """Read a binary (P5) PGM image with maxval 255; header comments are skipped

    :param path: file path
    :returns: Frame
    """
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    for _ in range(4):
        match = _PGM_TOKEN.match(data, pos)
        if match is None:
            raise FormatError("truncated PGM header")
        fields.append(match.group(1))
        pos = match.end()
    magic, width, height, maxval = fields
    if magic != b"P5":
        raise FormatError("only binary P5 PGM is supported, got {}".format(magic.decode("ascii", "replace")))
    try:
        width, height, maxval = int(width), int(height), int(maxval)
    except ValueError as e:
        raise FormatError("malformed PGM header") from e
    if maxval != 255:
        raise FormatError("only 8-bit PGM (maxval 255) is supported, got {}".format(maxval))
    if width <= 0 or height <= 0:
        raise FormatError("zero PGM dimensions")
    pos += 1  # single whitespace byte before the raster
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise FormatError("truncated PGM raster")
    return Frame(np.frombuffer(raster, dtype=np.uint8).reshape(height, width))


def write_pgm(frame, path):
    """Write a frame as binary (P5) PGM with maxval 255

    :param frame: Frame
    :param path: file path
    """
    with open(path, "wb") as fh:
        fh.write("P5\n{} {}\n255\n".format(frame.width, frame.height).encode("ascii"))
        fh.write(frame.samples.tobytes())


def video_format_from_path(path):
    """Guess the video format from a file extension, Y4M unless the extension is .yuv/.raw/.gray"""
    ext = os.path.splitext(path)[1].lower()
    return VideoFormat.RAW if ext in (".yuv", ".raw", ".gray") else VideoFormat.Y4M
