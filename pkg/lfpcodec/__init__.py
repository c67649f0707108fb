__version__ = "0.1"

from .errors import ConfigMismatchError, DecodeError, DivergenceError, FormatError, LfpCodecError
from .frame import Frame, VideoSeq
from .metrics import RdCurve, RdPoint, bd_psnr, psnr
from .pipeline import CodecConfig, decode_video, encode_video, predict_only, rd_sweep
from .tensor_nn import DiscConfig, NetConfig, Weights, load_weights, save_weights
