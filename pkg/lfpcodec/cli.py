import csv
import datetime
import glob
import json
import logging
import os

import click
import numpy as np

from . import __version__, metrics, pipeline, training
from . import tensor_nn as nn
from .errors import LfpCodecError
from .media_io import VideoFormat, read_video, video_format_from_path, write_video
from .pipeline import CodecConfig
from .predictors import DEFAULT_SEARCH_RANGE, MotionCost
from .tensor_nn import DiscConfig, NetConfig, Weights

logger = logging.getLogger(__name__)

EXIT_DATA_ERROR = 3
PREDICTORS = [p.name.lower() for p in CodecConfig.Predictor]


class _Group(click.Group):
    """Maps data errors to exit code 3; click already uses 2 for usage errors"""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (LfpCodecError, OSError, ValueError) as e:
            click.echo("error: {}".format(e), err=True)
            ctx.exit(EXIT_DATA_ERROR)


def write_manifest(output, command, config, seed=None):
    """Write `<output>.manifest.json` with the command, resolved config, seed and tool version"""
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(output + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_input(path, width, height, fps):
    fmt = video_format_from_path(path)
    if fmt is VideoFormat.RAW and (width is None or height is None):
        raise click.UsageError("raw input {} needs --width and --height".format(path))
    return read_video(path, fmt, width=width, height=height, frame_rate=(fps, 1))


def _codec_config(predictor, qp, k, search_range, weights, cost):
    predictor = CodecConfig.Predictor[predictor.upper()]
    if predictor is CodecConfig.Predictor.LFP:
        if weights is None:
            raise click.UsageError("--predictor lfp requires --weights")
        if k is None:
            k = nn.load_weights(weights).config.k
    elif weights is not None:
        raise click.UsageError("--weights only applies to --predictor lfp")
    if search_range is not None and predictor is not CodecConfig.Predictor.BMC:
        raise click.UsageError("--range only applies to --predictor bmc")
    return CodecConfig(predictor, k or 1, qp, DEFAULT_SEARCH_RANGE if search_range is None else search_range,
                       weights, MotionCost(cost))


def _input_options(f):
    f = click.option("--fps", type=int, default=30, show_default=True, help="Frame rate of raw input")(f)
    f = click.option("--height", type=int, help="Frame height of raw input")(f)
    f = click.option("--width", type=int, help="Frame width of raw input")(f)
    f = click.option("--in", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
                     help="Input video (.y4m, or raw .yuv/.gray with --width/--height)")(f)
    return f


def _predictor_options(f):
    f = click.option("--cost", type=click.Choice([c.value for c in MotionCost]), default="sad", show_default=True,
                     help="BMC matching cost")(f)
    f = click.option("--weights", type=click.Path(exists=True, dir_okay=False), help="LFP weight file")(f)
    f = click.option("--range", "search_range", type=click.IntRange(min=0),
                     help="BMC search range in pixels [default: {}]".format(DEFAULT_SEARCH_RANGE))(f)
    f = click.option("--k", type=click.IntRange(min=1), help="Intra lead-in / context frames")(f)
    f = click.option("--predictor", type=click.Choice(PREDICTORS), required=True)(f)
    return f


def _skip_option(f):
    return click.option("--skip", type=click.IntRange(min=0), default=0, show_default=True,
                        help="Leave the first frames out of the mean PSNR")(f)


@click.group(cls=_Group)
@click.option("--verbose", "-v", is_flag=True, help="Log debug output")
@click.option("--quiet", "-q", is_flag=True, help="Log warnings only")
@click.version_option(__version__)
def cli(verbose, quiet):
    """Predictive video coding with learned, block-matching and frame-difference predictors"""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@_input_options
@_predictor_options
@click.option("--qp", type=click.IntRange(0, 51), default=28, show_default=True)
@click.option("--out", "output", required=True, type=click.Path(dir_okay=False))
@_skip_option
def encode(input_path, width, height, fps, predictor, k, search_range, weights, cost, qp, output, skip):
    """Encode a video into an LPVC bitstream"""
    cfg = _codec_config(predictor, qp, k, search_range, weights, cost)
    seq = _load_input(input_path, width, height, fps)
    if skip >= len(seq):
        raise click.UsageError("--skip {} leaves no frames".format(skip))
    data, stats = pipeline.encode_video(seq, cfg)
    with open(output, "wb") as fh:
        fh.write(data)
    write_manifest(output, "encode", cfg.to_dict())
    click.echo(stats)
    if skip:
        click.echo("mean PSNR {:.3f} dB without the first {} frames".format(stats.mean_psnr(skip), skip))


@cli.command()
@click.option("--in", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output", required=True, type=click.Path(dir_okay=False))
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), help="LFP weight file")
def decode(input_path, output, weights):
    """Decode an LPVC bitstream into a Y4M (or raw) video"""
    with open(input_path, "rb") as fh:
        data = fh.read()
    header = pipeline.read_header(data)
    if header.predictor is CodecConfig.Predictor.LFP and weights is None:
        raise click.UsageError("LFP bitstreams need --weights")
    seq = pipeline.decode_video(data, weights_path=weights)
    write_video(seq, output, video_format_from_path(output))
    write_manifest(output, "decode", {"input": input_path, "weights": weights,
                                      "predictor": header.predictor.name, "k": header.k, "qp": header.qp})
    click.echo("decoded {} frames of {}x{}".format(len(seq), seq.width, seq.height))


@cli.command()
@_input_options
@_predictor_options
@click.option("--out", "output", required=True, type=click.Path(dir_okay=False), help="Per-frame PSNR CSV")
@_skip_option
def predict(input_path, width, height, fps, predictor, k, search_range, weights, cost, output, skip):
    """Per-frame PSNR of predictions made from uncompressed past frames"""
    cfg = _codec_config(predictor, 28, k, search_range, weights, cost)
    seq = _load_input(input_path, width, height, fps)
    if skip >= len(seq):
        raise click.UsageError("--skip {} leaves no predicted frames".format(skip))
    results = pipeline.predict_only(seq, cfg)
    with open(output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "psnr_db"])
        for index, value in results:
            writer.writerow([index, repr(value)])
    write_manifest(output, "predict", cfg.to_dict())
    kept = [v for index, v in results if index >= skip]
    click.echo("mean prediction PSNR {:.3f} dB over {} frames".format(float(np.mean(kept)), len(kept)))


@cli.command("rd-sweep")
@_input_options
@_predictor_options
@click.option("--qp-min", type=click.IntRange(0, 51), default=25, show_default=True)
@click.option("--qp-max", type=click.IntRange(0, 51), default=35, show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help="Parallel encodes")
@click.option("--out", "output", required=True, type=click.Path(dir_okay=False), help="RD curve CSV")
def rd_sweep(input_path, width, height, fps, predictor, k, search_range, weights, cost, qp_min, qp_max, jobs,
             output):
    """Encode at every QP in [qp-min, qp-max] and write the RD curve"""
    if qp_max < qp_min:
        raise click.UsageError("--qp-max must not be below --qp-min")
    cfg = _codec_config(predictor, qp_min, k, search_range, weights, cost)
    seq = _load_input(input_path, width, height, fps)
    sweep = pipeline.rd_sweep(seq, cfg, range(qp_min, qp_max + 1), jobs=jobs)
    metrics.write_rd_curve([point for _, point in sweep], output)
    config = cfg.to_dict()
    config.update(qp_min=qp_min, qp_max=qp_max)
    del config["qp"]
    write_manifest(output, "rd-sweep", config)
    for qp, point in sweep:
        click.echo("qp {:2d}: {:10.3f} kbps {:7.3f} dB".format(qp, point.bitrate, point.psnr))


@cli.command()
@click.option("--test", "test_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--anchor", "anchor_path", required=True, type=click.Path(exists=True, dir_okay=False))
def bd(test_path, anchor_path):
    """BD-PSNR of a test RD curve against an anchor; positive means the test is better"""
    value = metrics.bd_psnr(metrics.read_rd_curve(test_path), metrics.read_rd_curve(anchor_path))
    click.echo("{:.3f}".format(value))


def _parse_weight(ctx, param, values):
    weights = {}
    for value in values:
        name, sep, weight = value.rpartition("=")
        try:
            weights[name] = float(weight)
        except ValueError:
            sep = ""
        if not sep or not name:
            raise click.BadParameter("expected NAME=WEIGHT, got \"{}\"".format(value), param=param)
    return weights


@cli.command()
@click.option("--videos", required=True, type=click.Path(exists=True, file_okay=False), help="Directory of .y4m files")
@click.option("--count", type=click.IntRange(min=1), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threshold", type=click.FloatRange(min=0), default=25.0, show_default=True,
              help="Motion threshold (mean-square difference per pixel)")
@click.option("--accept-prob", type=click.FloatRange(0, 1), default=0.05, show_default=True,
              help="Acceptance probability of low-motion sequences")
@click.option("--weight", "video_weights", multiple=True, callback=_parse_weight,
              help="Sampling weight for videos whose file name starts with NAME, e.g. sports=3")
@click.option("--out", "output", required=True, type=click.Path(dir_okay=False))
def extract(videos, count, seed, threshold, accept_prob, video_weights, output):
    """Sample 9-frame 48x48 patch sequences into an LFPD dataset"""
    paths = sorted(glob.glob(os.path.join(videos, "*.y4m")))
    if not paths:
        raise click.UsageError("no .y4m files in {}".format(videos))
    weights = []
    for path in paths:
        base = os.path.basename(path)
        matches = [w for name, w in video_weights.items() if base.startswith(name)]
        weights.append(matches[0] if matches else 1.0)
    cfg = training.ExtractConfig(motion_threshold=threshold, low_motion_accept_prob=accept_prob, seed=seed,
                                 video_weights=weights)
    patches, trials = training.extract_patches([read_video(p) for p in paths], cfg, count)
    training.save_dataset(patches, output)
    config = cfg.to_dict()
    config.update(videos=[os.path.basename(p) for p in paths], count=count)
    write_manifest(output, "extract", config, seed)
    click.echo("wrote {} patch sequences to {} (acceptance {:.3f})".format(count, output, count / trials))


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False), help="LFPD dataset")
@click.option("--loss", type=click.Choice([l.value for l in training.TrainConfig.Loss]), default="l2",
              show_default=True)
@click.option("--out", "output", required=True, type=click.Path(dir_okay=False), help="Generator weight file")
@click.option("--init", "init_path", type=click.Path(exists=True, dir_okay=False),
              help="Generator to start from (required for gan)")
@click.option("--disc-out", type=click.Path(dir_okay=False), help="Discriminator weight file (gan)")
@click.option("--k", type=click.IntRange(1, 8), default=4, show_default=True, help="Past frames per prediction")
@click.option("--blocks", type=click.IntRange(min=1), default=2, show_default=True, help="Residual blocks")
@click.option("--channels", type=click.IntRange(min=1), default=16, show_default=True, help="Channel width")
@click.option("--iterations", type=click.IntRange(min=0), default=200, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=32, show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--lr-generator", type=float, default=1e-6, show_default=True)
@click.option("--lr-discriminator", type=float, default=1e-5, show_default=True)
@click.option("--gen-batch-size", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--disc-batch-size", type=click.IntRange(min=2), default=32, show_default=True)
@click.option("--lambda-ms", type=float, default=0.95, show_default=True)
@click.option("--lambda-adv", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--trace", type=click.Path(dir_okay=False), help="Loss trace CSV")
def train(data, loss, output, init_path, disc_out, k, blocks, channels, iterations, batch_size, lr, lr_generator,
          lr_discriminator, gen_batch_size, disc_batch_size, lambda_ms, lambda_adv, seed, trace):
    """Train the frame prediction network with l1, l2 or l2 + adversarial loss"""
    cfg = training.TrainConfig(loss, lambda_ms, lambda_adv, lr, lr_generator, lr_discriminator, batch_size,
                               gen_batch_size, disc_batch_size, iterations, seed)
    dataset = training.load_dataset(data)
    generator = nn.load_weights(init_path) if init_path else None
    if cfg.loss is training.TrainConfig.Loss.GAN:
        if generator is None:
            raise click.UsageError("--loss gan needs a pretrained generator via --init")
        generator, discriminator, losses = training.train_gan(dataset, generator, cfg, disc_config=DiscConfig())
        if disc_out:
            nn.save_weights(discriminator, disc_out)
    else:
        if disc_out:
            raise click.UsageError("--disc-out only applies to --loss gan")
        generator, losses = training.train_lp(dataset, NetConfig(k, blocks, channels), cfg, generator)
    nn.save_weights(generator, output)
    if trace:
        training.write_loss_trace(losses, trace)
    config = cfg.to_dict()
    config.update(net=generator.config.to_dict(), data=data, init=init_path)
    write_manifest(output, "train", config, seed)
    if losses:
        click.echo("final loss {:.6f} after {} iterations".format(losses[-1], len(losses)))


def run(argv=None):
    """Run the command line with `argv` and return the exit code"""
    try:
        rv = cli.main(args=argv, prog_name="lfpcodec", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    cli()
