import numpy as np


class Frame:
    """One grayscale 8-bit image plane, stored row-major as a (height, width) array"""

    def __init__(self, samples):
        samples = np.array(samples)
        assert samples.ndim == 2, "frame samples must be a 2-D array"
        if samples.shape[0] == 0 or samples.shape[1] == 0:
            raise ValueError("frame dimensions must be positive, got {}".format(samples.shape))
        if samples.dtype != np.uint8:
            if np.any(samples != np.floor(samples)):
                raise ValueError("frame samples must be integers")
            if np.any(samples < 0) or np.any(samples > 255):
                raise ValueError("frame samples must lie in [0, 255]")
            samples = samples.astype(np.uint8)
        self._samples = samples
        self._samples.setflags(write=False)

    @property
    def width(self):
        return self._samples.shape[1]

    @property
    def height(self):
        return self._samples.shape[0]

    @property
    def shape(self):
        return self._samples.shape

    @property
    def samples(self):
        return self._samples

    def __eq__(self, other):
        return isinstance(other, Frame) and np.array_equal(self._samples, other._samples)

    def __repr__(self):
        return "Frame({}x{})".format(self.width, self.height)


class VideoSeq:
    """Ordered, non-empty list of equally sized frames plus a frame rate"""

    def __init__(self, frames, frame_rate=(30, 1)):
        frames = [f if isinstance(f, Frame) else Frame(f) for f in frames]
        if not frames:
            raise ValueError("a video sequence needs at least one frame")
        if any(f.shape != frames[0].shape for f in frames):
            raise ValueError("all frames of a sequence must share the same dimensions")
        num, den = frame_rate
        assert num > 0 and den > 0, "frame rate must be positive"
        self._frames = frames
        self._frame_rate = (int(num), int(den))

    @property
    def frames(self):
        return list(self._frames)

    @property
    def frame_rate(self):
        """Frame rate as a (numerator, denominator) pair"""
        return self._frame_rate

    @property
    def fps(self):
        return self._frame_rate[0] / self._frame_rate[1]

    @property
    def width(self):
        return self._frames[0].width

    @property
    def height(self):
        return self._frames[0].height

    def __len__(self):
        return len(self._frames)

    def __getitem__(self, index):
        return self._frames[index]

    def __iter__(self):
        return iter(self._frames)

    def as_array(self):
        """Stack all frames into an array with shape (frame_count, height, width)"""
        return np.stack([f.samples for f in self._frames])

    def __eq__(self, other):
        return isinstance(other, VideoSeq) and len(self) == len(other) and \
            all(a == b for a, b in zip(self._frames, other._frames))

    def __repr__(self):
        return "VideoSeq({} frames, {}x{}, {}/{} fps)".format(
            len(self), self.width, self.height, *self._frame_rate)


def round_half_away(values):
    """Round to the nearest integer, halves away from zero, as float array"""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)
