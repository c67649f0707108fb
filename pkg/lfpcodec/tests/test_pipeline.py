import struct

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from .. import metrics, pipeline
from ..bits import BitWriter
from ..errors import ConfigMismatchError, DecodeError, FormatError
from ..frame import Frame, VideoSeq
from ..pipeline import BitstreamHeader, CodecConfig
from ..predictors import MotionField, max_motion
from ..residual_codec import PlaneKind, QuantParams, write_plane
from ..tensor_nn import NetConfig, save_weights
from .test_tensor_nn import sample_weights


def sample_static_video(frames=10, seed=0):
    """32x32 frames made of distinct constant 8x8 blocks, identical over time"""
    rng = np.random.default_rng(seed)
    values = rng.permutation(np.arange(16, 256, 15)).reshape(4, 4)
    frame = np.kron(values, np.ones((8, 8), dtype=np.int64))
    return VideoSeq([frame] * frames)


def sample_translating_video(frames=30, size=64, seed=0):
    """Smooth random texture moving left by one pixel per frame"""
    rng = np.random.default_rng(seed)
    texture = gaussian_filter(rng.normal(0, 1, (size, size + frames)), 1.5)
    texture = 128 + 60 * texture / np.abs(texture).max()
    texture = np.clip(np.round(texture), 0, 255)
    return VideoSeq([texture[:, t:t + size] for t in range(frames)])


def sample_random_video(frames=4, height=20, width=36, seed=0):
    """Noise frames with a drifting bright square"""
    rng = np.random.default_rng(seed)
    out = []
    for t in range(frames):
        f = rng.integers(0, 80, (height, width))
        f[4:12, 3 + 2 * t:11 + 2 * t] = 200
        out.append(f)
    return VideoSeq(out, (25, 1))


def sample_config(predictor, qp=28, k=1):
    return CodecConfig(predictor, k=k, qp=qp, search_range=3)


def sample_pass_through_weights(seed=0):
    """K=1 generator whose outer convs pass the last frame through, around random residual blocks"""
    weights = sample_weights(config=NetConfig(k=1, blocks=1, channels=2), seed=seed)
    p = weights.params
    for name in ("input.w", "input.b", "output.w", "output.b"):
        p[name][...] = 0
    p["input.w"][0, 0, 1, 1] = 1.0
    # the global skip doubles the input conv output
    p["output.w"][0, 0, 1, 1] = 0.5
    return weights


def replace_frame_payload(data, index, payload):
    """Swap the payload of one frame in a bitstream, keeping every other frame"""
    pos = BitstreamHeader.size()
    for _ in range(index):
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4 + length
    (length,) = struct.unpack_from("<I", data, pos)
    return data[:pos] + struct.pack("<I", len(payload)) + payload + data[pos + 4 + length:]


def motion_payload(seq, first_mv, qp=28):
    """Frame payload with `first_mv` on the first block, zero vectors elsewhere and an all-zero residual"""
    mvs = np.zeros((-(-seq.height // 16) * -(-seq.width // 16), 2), dtype=np.int64)
    mvs[0] = first_mv
    writer = BitWriter()
    pipeline.write_motion_field(writer, MotionField(seq.width, seq.height, mvs))
    write_plane(writer, np.zeros((seq.height, seq.width), dtype=np.int64), QuantParams(qp), PlaneKind.Residual)
    return writer.getvalue()


@pytest.mark.parametrize("qp", [12, 28, 40])
@pytest.mark.parametrize("predictor", CodecConfig.Predictor)
@pytest.mark.parametrize("repeat", range(20))
def test_decoder_matches_encoder(predictor, qp, repeat):
    seq = sample_random_video(seed=repeat)
    weights = None
    k = 1
    if predictor is CodecConfig.Predictor.LFP:
        k = 2
        weights = sample_weights(config=NetConfig(k=2, blocks=1, channels=4), seed=repeat)
    data, stats = pipeline.encode_video(seq, sample_config(predictor, qp, k), weights)
    decoded = pipeline.decode_video(data, weights=weights)
    assert decoded == stats.reconstruction
    assert decoded.frame_rate == (25, 1)
    _, mean = metrics.sequence_psnr(decoded, seq)
    assert mean == pytest.approx(stats.mean_psnr())


def test_static_fd_codes_only_eob():
    seq = sample_static_video()
    data, stats = pipeline.encode_video(seq, sample_config(CodecConfig.Predictor.FD, 30))
    assert stats.frames[0].intra
    for f in stats.frames[1:]:
        assert f.mv_bits == 0
        assert f.residual_bits == 16 * 13
    decoded = pipeline.decode_video(data)
    per_frame, mean = metrics.sequence_psnr(decoded, seq)
    assert mean >= per_frame[0] - 1e-9


def test_static_bmc_sends_zero_vectors():
    seq = sample_static_video()
    _, stats = pipeline.encode_video(seq, CodecConfig(CodecConfig.Predictor.BMC, qp=30))
    # two se(0) per 16x16 block
    assert all(f.mv_bits == 2 * 4 for f in stats.frames[1:])
    assert stats.mv_bits == 9 * 8
    assert stats.total_bits == stats.mv_bits + sum(f.residual_bits for f in stats.frames)


def test_fd_and_lfp_streams_carry_no_side_information():
    seq = sample_random_video()
    weights = sample_weights(config=NetConfig(k=1, blocks=1, channels=2))
    runs = [(sample_config(CodecConfig.Predictor.FD), None), (sample_config(CodecConfig.Predictor.LFP), weights)]
    for cfg, w in runs:
        _, stats = pipeline.encode_video(seq, cfg, w)
        assert stats.mv_bits == 0


def test_decoder_does_not_search(mocker):
    seq = sample_random_video(frames=5)
    search = mocker.spy(pipeline, "bmc_search")
    data, _ = pipeline.encode_video(seq, sample_config(CodecConfig.Predictor.BMC))
    assert search.call_count == 4
    pipeline.decode_video(data)
    assert search.call_count == 4


def test_header_roundtrip():
    header = BitstreamHeader(64, 48, 30, 30000, 1001, CodecConfig.Predictor.BMC, 1, 33)
    assert BitstreamHeader.unpack(header.pack()) == header
    assert len(header.pack()) == BitstreamHeader.size() == 40


def test_bitstream_errors():
    data, _ = pipeline.encode_video(sample_random_video(), sample_config(CodecConfig.Predictor.FD))
    with pytest.raises(FormatError):
        pipeline.decode_video(b"LPVX" + data[4:])
    with pytest.raises(FormatError):
        pipeline.decode_video(data[:-5])
    with pytest.raises(FormatError):
        pipeline.decode_video(data[:20])


def test_corrupt_motion_vector_is_a_decode_error():
    seq = sample_random_video()
    data, _ = pipeline.encode_video(seq, sample_config(CodecConfig.Predictor.BMC))
    with pytest.raises(DecodeError, match="out of range"):
        pipeline.decode_video(replace_frame_payload(data, 1, motion_payload(seq, (1 << 22, 0))))

    bound = max_motion(seq.width, seq.height)
    decoded = pipeline.decode_video(replace_frame_payload(data, 1, motion_payload(seq, (-bound, bound))))
    corner = decoded[1].samples[:16, :16]
    assert np.all(corner == decoded[0].samples[-1, 0])


def test_lfp_weight_errors():
    seq = sample_random_video()
    with pytest.raises(ConfigMismatchError):
        pipeline.encode_video(seq, sample_config(CodecConfig.Predictor.LFP, k=2))
    weights = sample_weights(config=NetConfig(k=2, blocks=1, channels=2))
    with pytest.raises(ConfigMismatchError):
        pipeline.encode_video(seq, sample_config(CodecConfig.Predictor.LFP, k=3), weights)
    data, _ = pipeline.encode_video(seq, sample_config(CodecConfig.Predictor.LFP, k=2), weights)
    with pytest.raises(ConfigMismatchError):
        pipeline.decode_video(data)


def test_lfp_weight_file_path(tmp_path):
    seq = sample_random_video()
    weights = sample_weights(config=NetConfig(k=2, blocks=1, channels=2))
    path = str(tmp_path / "w.lfpw")
    save_weights(weights, path)
    cfg = CodecConfig(CodecConfig.Predictor.LFP, k=2, qp=20, weights_path=path)
    data, stats = pipeline.encode_video(seq, cfg)
    assert pipeline.decode_video(data, weights_path=path) == stats.reconstruction


def test_predict_only():
    static = sample_static_video(frames=4)
    results = pipeline.predict_only(static, sample_config(CodecConfig.Predictor.FD))
    assert [i for i, _ in results] == [1, 2, 3]
    assert all(value == metrics.PSNR_CAP for _, value in results)

    moving = sample_translating_video(frames=4, size=48)
    fd = pipeline.predict_only(moving, sample_config(CodecConfig.Predictor.FD))
    bmc = pipeline.predict_only(moving, sample_config(CodecConfig.Predictor.BMC))
    assert all(f < b for (_, f), (_, b) in zip(fd, bmc))

    with pytest.raises(ValueError):
        pipeline.predict_only(VideoSeq(static.frames[:1]), sample_config(CodecConfig.Predictor.FD))


def test_bmc_prediction_exact_on_interior():
    moving = sample_translating_video(frames=2, size=48)
    prediction = pipeline.predict(sample_config(CodecConfig.Predictor.BMC), [moving[0]], moving[1])
    # the right-most block column sees content entering the frame
    assert metrics.psnr(Frame(prediction.frame.samples[:, :32]), Frame(moving[1].samples[:, :32])) == metrics.PSNR_CAP


@pytest.mark.parametrize("predictor", CodecConfig.Predictor)
def test_rd_sweep_is_monotone(predictor):
    seq = sample_translating_video()
    weights = sample_pass_through_weights() if predictor is CodecConfig.Predictor.LFP else None
    sweep = pipeline.rd_sweep(seq, CodecConfig(predictor, k=1, search_range=2), range(34, 23, -1), weights)
    assert [qp for qp, _ in sweep] == list(range(24, 35))
    rates = [p.bitrate for _, p in sweep]
    psnrs = [p.psnr for _, p in sweep]
    assert all(b <= a for a, b in zip(rates, rates[1:]))
    assert all(b <= a for a, b in zip(psnrs, psnrs[1:]))
    assert rates[0] > rates[-1] and psnrs[0] > psnrs[-1]


def test_bmc_beats_fd_on_translation():
    seq = sample_translating_video()
    qps = range(20, 41, 2)
    curves = {}
    for predictor in (CodecConfig.Predictor.FD, CodecConfig.Predictor.BMC):
        sweep = pipeline.rd_sweep(seq, CodecConfig(predictor, search_range=2), qps)
        curves[predictor] = metrics.RdCurve.from_points([p for _, p in sweep])
    assert metrics.bd_psnr(curves[CodecConfig.Predictor.BMC], curves[CodecConfig.Predictor.FD]) > 1.0


def test_parallel_sweep_matches_sequential():
    seq = sample_random_video(frames=3)
    cfg = sample_config(CodecConfig.Predictor.BMC)
    sequential = pipeline.rd_sweep(seq, cfg, [30, 20, 25])
    parallel = pipeline.rd_sweep(seq, cfg, [30, 20, 25], jobs=2)
    assert [(qp, tuple(p)) for qp, p in sequential] == [(qp, tuple(p)) for qp, p in parallel]


def test_encode_stats_table():
    _, stats = pipeline.encode_video(sample_random_video(), sample_config(CodecConfig.Predictor.BMC))
    text = str(stats)
    assert "kbps" in text
    assert stats.bitrate_kbps == pytest.approx(stats.payload_bits * 25 / 4 / 1000)
