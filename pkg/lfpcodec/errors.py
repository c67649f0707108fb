class LfpCodecError(Exception):
    """Base class for every data error raised by lfpcodec"""


class FormatError(LfpCodecError, ValueError):
    """Malformed or truncated file, header or container"""


class DecodeError(LfpCodecError, ValueError):
    """Malformed entropy-coded payload"""


class ConfigMismatchError(LfpCodecError):
    """Weights, bitstream and run configuration disagree"""


class DivergenceError(LfpCodecError):
    """Training produced a non-finite loss"""
