import csv

import numpy as np

from .errors import FormatError

PSNR_CAP = 99.0
PEAK = 255.0
RD_CSV_HEADER = ["bitrate_kbps", "psnr_db"]


def _samples(frame):
    return np.asarray(getattr(frame, "samples", frame), dtype=np.float64)


def mse(a, b):
    """Mean squared error between two equally sized frames (or arrays)"""
    a, b = _samples(a), _samples(b)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch: {} vs {}".format(a.shape, b.shape))
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for 8-bit content

    Identical inputs return the cap PSNR_CAP so that means stay finite.

    :param a: Frame or array
    :param b: Frame or array with the same dimensions
    :returns: PSNR in dB
    """
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP
    return float(10 * np.log10(PEAK ** 2 / err))


def sequence_psnr(decoded, original, skip=0):
    """Per-frame PSNR and its mean over the frames from index `skip` on

    :param decoded: VideoSeq (or list of frames)
    :param original: VideoSeq (or list of frames) of the same length
    :param skip: number of leading frames excluded from the mean, defaults to 0
    :returns: (list of per-frame PSNR, mean PSNR)
    """
    if len(decoded) != len(original):
        raise ValueError("sequence length mismatch: {} vs {}".format(len(decoded), len(original)))
    assert 0 <= skip < len(original), "skip must leave at least one frame"
    per_frame = [psnr(d, o) for d, o in zip(decoded, original)]
    return per_frame, float(np.mean(per_frame[skip:]))


def bitrate_kbps(total_bits, frame_rate, frame_count):
    """kbps = total_payload_bits * frame_rate / frame_count / 1000"""
    return total_bits * frame_rate / frame_count / 1000.0


class RdPoint:

    def __init__(self, bitrate, psnr):
        if not bitrate > 0:
            raise ValueError("bitrate must be strictly positive, got {}".format(bitrate))
        self._bitrate = float(bitrate)
        self._psnr = float(psnr)

    @property
    def bitrate(self):
        return self._bitrate

    @property
    def psnr(self):
        return self._psnr

    def __iter__(self):
        return iter((self._bitrate, self._psnr))

    def __repr__(self):
        return "RdPoint({:.3f} kbps, {:.3f} dB)".format(self._bitrate, self._psnr)


class RdCurve:
    """PSNR-vs-bitrate samples of one codec on one sequence, ordered by increasing bitrate"""

    MIN_POINTS = 4

    def __init__(self, points):
        points = [p if isinstance(p, RdPoint) else RdPoint(*p) for p in points]
        if len(points) < RdCurve.MIN_POINTS:
            raise ValueError("an RD curve needs at least {} points, got {}".format(RdCurve.MIN_POINTS, len(points)))
        rates = [p.bitrate for p in points]
        if any(r2 <= r1 for r1, r2 in zip(rates, rates[1:])):
            raise ValueError("RD curve bitrates must be strictly increasing")
        self._points = points

    @classmethod
    def from_points(cls, points):
        """Build a curve from unordered (bitrate, psnr) pairs, e.g. a QP sweep"""
        points = [p if isinstance(p, RdPoint) else RdPoint(*p) for p in points]
        return cls(sorted(points, key=lambda p: p.bitrate))

    @property
    def points(self):
        return list(self._points)

    @property
    def log_rates(self):
        return np.log10([p.bitrate for p in self._points])

    @property
    def psnrs(self):
        return np.array([p.psnr for p in self._points])

    def fit(self):
        """Least-squares cubic fit of PSNR against log10(bitrate)

        :returns: polynomial coefficients, highest power first, as numpy array with shape (4,)
        """
        return np.polyfit(self.log_rates, self.psnrs, 3)

    def __len__(self):
        return len(self._points)


def bd_psnr(test, anchor):
    """Bjontegaard delta PSNR of `test` against `anchor`

    Each curve is fitted with a least-squares cubic in log10(bitrate); the
    difference polynomial is integrated analytically over the intersection of
    the log-rate ranges and divided by the interval width. Positive values
    mean the test curve is better.

    :param test: RdCurve
    :param anchor: RdCurve
    :returns: average PSNR difference in dB
    """
    lo = max(test.log_rates.min(), anchor.log_rates.min())
    hi = min(test.log_rates.max(), anchor.log_rates.max())
    if not hi > lo:
        raise ValueError("RD curves have no overlapping bitrate range")
    diff = np.polysub(test.fit(), anchor.fit())
    integral = np.polyint(diff)
    return float((np.polyval(integral, hi) - np.polyval(integral, lo)) / (hi - lo))


def read_rd_curve(path):
    """Read an RD curve from a `bitrate_kbps,psnr_db` CSV file"""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != RD_CSV_HEADER:
            raise FormatError("{}: expected CSV header \"{}\"".format(path, ",".join(RD_CSV_HEADER)))
        points = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                points.append(RdPoint(float(row[0]), float(row[1])))
            except (ValueError, IndexError) as e:
                raise FormatError("{}:{}: malformed RD point {}".format(path, lineno, row)) from e
    try:
        return RdCurve.from_points(points)
    except ValueError as e:
        raise FormatError("{}: {}".format(path, e)) from e


def write_rd_curve(points, path):
    """Write RD points to CSV in the given order (e.g. QP order of a sweep)

    :param points: iterable of RdPoint or (bitrate, psnr) pairs
    :param path: file path
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RD_CSV_HEADER)
        for bitrate, value in points:
            writer.writerow([repr(float(bitrate)), repr(float(value))])
