"""``ncd`` command-line entry point.

Every command loads a :class:`RunConfig` (``--config FILE`` then ``--set k=v``
overrides, then command flags), prints it, and writes it next to each output
as ``<output>.config.txt``.  Outputs are never overwritten without ``--force``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import torch

from . import checkpoint
from .aff import AFFConfig
from .analysis import gaussian_control, noise_statistics, rd_sweep
from .codec import CodecConfig, DecodeError, FormatError, compress, decompress, read_bitstream, write_bitstream
from .codec.model import InvalidInputError
from .codec.train import train_codec
from .config import ConfigError, RunConfig, parse_overrides, parse_text
from .data import build_manifest, load_crops
from .imaging import load_image, save_png
from .losses import LossWeights
from .metrics import bd_rate
from .perceptual import make_embedder, make_perceptual
from .pipeline import enhance
from .schedule import build_schedule
from .tiling import TileError
from .trainer import train_diffusion
from .unet import PredictorConfig

log = logging.getLogger("ncdiff")

USER_ERRORS = (
    ConfigError,
    FileNotFoundError,
    FileExistsError,
    FormatError,
    DecodeError,
    InvalidInputError,
    checkpoint.CheckpointError,
    TileError,
    FloatingPointError,
    ValueError,
)


class CLIError(RuntimeError):
    pass


# --------------------------------------------------------------------------- helpers


def _config(args, **flags) -> RunConfig:
    values = parse_text(Path(args.config).read_text()) if args.config else {}
    values.update(parse_overrides(args.set))
    values.update({k: v for k, v in flags.items() if v is not None})
    cfg = RunConfig(values)
    print(f"# effective config ({args.command})")
    print(cfg.dumps(), end="")
    return cfg


def _check_output(path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _sidecar(path, cfg: RunConfig, extra: dict = None):
    text = cfg.dumps()
    for k, v in (extra or {}).items():
        text += f"# {k} = {v}\n"
    Path(f"{path}.config.txt").write_text(text)


def _predictor_config(cfg: RunConfig) -> PredictorConfig:
    aff = AFFConfig(r_th=tuple(cfg["aff.r_th"]), gamma_init=cfg["aff.gamma_init"], enabled=cfg["aff.enabled"])
    return PredictorConfig(base_channels=cfg["unet.base_channels"], attention_stage=cfg["unet.attention_stage"], aff=aff)


def _tile(cfg: RunConfig):
    return (cfg["tile.size"], cfg["tile.overlap"]) if cfg["tile.enabled"] else None


def _chunks(start: int, total: int, every: int):
    """Split ``[start, total)`` at multiples of ``every``."""
    step = start
    while step < total:
        nxt = min(total, (step // every + 1) * every)
        yield step, nxt - step
        step = nxt


def _write_loss_log(path, header, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(history)


def _load_resume(path, kind_loader):
    obj, data = kind_loader(path)
    state = data.get("train_state") or {}
    if "step" not in state:
        raise CLIError(f"{path} has no training state to resume from")
    return obj, state


def _decoded_input(path, codec_path):
    """Decoded image from a PNG, or from a bitstream when ``codec_path`` is given."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    with open(path, "rb") as f:
        is_bitstream = f.read(4) == b"NCDF"
    if not is_bitstream:
        return load_image(path)
    if codec_path is None:
        raise CLIError(f"{path} is a bitstream; pass --codec to decode it")
    return decompress(checkpoint.load_codec(codec_path), read_bitstream(path))


def _images(path):
    """``[(name, image)]`` from a file or a directory."""
    p = Path(path)
    if p.is_dir():
        files = build_manifest(p).files
        if not files:
            raise ValueError(f"{p} contains no decodable images")
    elif p.exists():
        files = (p,)
    else:
        raise FileNotFoundError(f"input not found: {p}")
    return [(f.stem, load_image(f)) for f in files]


# --------------------------------------------------------------------------- commands


def cmd_train_codec(args) -> int:
    cfg = _config(args, **{"codec.lambda_rd": args.lambda_rd, "codec.steps": args.steps, "seed": args.seed})
    every, log_every = cfg["train.checkpoint_every"], cfg["train.log_every"]
    if every % log_every:
        raise ConfigError("train.checkpoint_every must be a multiple of train.log_every")
    out = Path(args.out)
    if args.resume is None or Path(args.resume).resolve() != out.resolve():
        _check_output(out, args.force)
    manifest = build_manifest(args.data, cfg["data.crop_size"])
    crops = load_crops(manifest, cfg["data.num_crops"], cfg["seed"])
    print(f"# {len(manifest)} images, {len(crops)} crops")

    codec, state = None, {"step": 0, "optimizer_state": None, "history": []}
    if args.resume:
        codec, state = _load_resume(args.resume, checkpoint.load_codec_full)
        for p in codec.parameters():
            p.requires_grad_(True)
    history = [tuple(r) for r in state["history"]]
    config = CodecConfig(hidden_channels=cfg["codec.hidden_channels"], latent_channels=cfg["codec.latent_channels"])
    opt_state = state["optimizer_state"]
    for start, n in _chunks(state["step"], cfg["codec.steps"], every):
        res = train_codec(
            crops, cfg["codec.lambda_rd"], n, config,
            batch_size=cfg["codec.batch_size"], lr=cfg["codec.lr"], seed=cfg["seed"],
            codec=codec, optimizer_state=opt_state, start_step=start, log_every=log_every,
            total_steps=cfg["codec.steps"], lr_decay_at=cfg["codec.lr_decay_at"],
            on_log=lambda r: print("step %d loss %.5f mse %.6f bpp %.4f" % r),
        )
        codec, opt_state = res.codec, res.optimizer_state
        history += res.history
        train_state = {"step": res.step, "optimizer_state": opt_state, "history": history}
        checkpoint.save_codec(out, codec, train_state, dict(cfg))
        _write_loss_log(f"{out}.loss.csv", ("step", "loss", "mse", "bpp"), history)
        for p in codec.parameters():
            p.requires_grad_(True)
    if not out.exists():
        raise CLIError(f"nothing to do: checkpoint is already at step {state['step']}")
    _sidecar(out, cfg, {"data": args.data})
    print(f"wrote {out}")
    return 0


def cmd_train_diffusion(args) -> int:
    cfg = _config(args, **{"diffusion.steps": args.steps, "seed": args.seed})
    every, log_every = cfg["train.checkpoint_every"], cfg["train.log_every"]
    if every % log_every:
        raise ConfigError("train.checkpoint_every must be a multiple of train.log_every")
    try:
        codec_path = checkpoint.resolve(args.codec)
    except FileNotFoundError:
        raise CLIError(f"codec checkpoint {args.codec} not found; train the codec first") from None
    codec = checkpoint.load_codec(codec_path)
    out = Path(args.out)
    if args.resume is None or Path(args.resume).resolve() != out.resolve():
        _check_output(out, args.force)
    manifest = build_manifest(args.data, cfg["data.crop_size"])
    crops = load_crops(manifest, cfg["data.num_crops"], cfg["seed"])
    print(f"# {len(manifest)} images, {len(crops)} crops")

    schedule = build_schedule(cfg["diffusion.schedule"], cfg["diffusion.T"])
    predictor, state = None, {"step": 0, "optimizer_state": None, "history": []}
    if args.resume:
        bundle, state = _load_resume(args.resume, checkpoint.load_diffusion_full)
        predictor, schedule = bundle.predictor, bundle.schedule
        for p in predictor.parameters():
            p.requires_grad_(True)
    history = [tuple(r) for r in state["history"]]
    weights = LossWeights(cfg["loss.omega"], cfg["loss.beta"], cfg["loss.wavelet_levels"])
    perceptual = make_perceptual(cfg["loss.perceptual"]) if cfg["loss.omega"] > 0 else None
    opt_state = state["optimizer_state"]
    for start, n in _chunks(state["step"], cfg["diffusion.steps"], every):
        res = train_diffusion(
            crops, codec, schedule, n,
            predictor=predictor, predictor_config=_predictor_config(cfg), weights=weights,
            perceptual=perceptual, lr=cfg["optim.lr"], batch_size=cfg["optim.batch_size"], seed=cfg["seed"],
            quantizer_mode=cfg["diffusion.quantizer"], cache_residuals=cfg["diffusion.cache_residuals"],
            optimizer_state=opt_state, start_step=start, log_every=log_every,
            total_steps=cfg["diffusion.steps"], lr_decay_at=cfg["optim.lr_decay_at"],
            on_log=lambda r: print("step %d l_eps %.6f l_lpips %.6f l_high %.6f l_total %.6f" % r),
        )
        predictor, opt_state = res.predictor, res.optimizer_state
        history += res.history
        train_state = {"step": res.step, "optimizer_state": opt_state, "history": history}
        checkpoint.save_diffusion(out, predictor, schedule, train_state, dict(cfg), codec_id=codec_path.stem)
        _write_loss_log(f"{out}.loss.csv", ("step", "l_eps", "l_lpips", "l_high", "l_total"), history)
        for p in predictor.parameters():
            p.requires_grad_(True)
    if not out.exists():
        raise CLIError(f"nothing to do: checkpoint is already at step {state['step']}")
    _sidecar(out, cfg, {"data": args.data, "codec": codec_path})
    print(f"wrote {out}")
    return 0


def cmd_compress(args) -> int:
    cfg = _config(args)
    out = _check_output(args.output, args.force)
    codec = checkpoint.load_codec(args.codec)
    bs = compress(codec, load_image(args.input))
    write_bitstream(out, bs)
    _sidecar(out, cfg, {"codec": args.codec, "input": args.input})
    h, w = bs.orig_h, bs.orig_w
    print(f"wrote {out}: {out.stat().st_size} bytes, {8 * out.stat().st_size / (h * w):.5f} bpp")
    return 0


def cmd_decompress(args) -> int:
    cfg = _config(args)
    out = _check_output(args.output, args.force)
    codec = checkpoint.load_codec(args.codec)
    image = decompress(codec, read_bitstream(args.input))
    save_png(image, out)
    _sidecar(out, cfg, {"codec": args.codec, "input": args.input})
    print(f"wrote {out}")
    return 0


def cmd_enhance(args) -> int:
    flags = {
        "sampler.steps": args.steps,
        "guidance.lambda": args.guidance_lambda,
        "guidance.embedder": args.embedder,
        "tile.size": args.tile_size,
        "tile.overlap": args.tile_overlap,
    }
    if args.no_tiling:
        flags["tile.enabled"] = False
    cfg = _config(args, **flags)
    output = args.output or str(Path(args.input).with_suffix("")) + ".enhanced.png"
    out = _check_output(output, args.force)
    bundle = checkpoint.load_diffusion(args.diffusion)
    image = _decoded_input(args.input, args.codec)
    embedder = make_embedder(cfg["guidance.embedder"], image.shape[1]) if cfg["guidance.lambda"] else None
    result = enhance(
        image, bundle, steps=cfg["sampler.steps"], guidance_lambda=cfg["guidance.lambda"],
        embedder=embedder, tile=_tile(cfg), workers=args.workers,
    )
    save_png(result, out)
    _sidecar(out, cfg, {"diffusion": args.diffusion, "codec": args.codec, "input": args.input})
    print(f"wrote {out}")
    return 0


def _sweep(args, cfg, codecs, diffusions, out_dir):
    images = _images(args.data)
    return rd_sweep(
        images, codecs, diffusions, cfg["sampler.steps"], out_dir,
        dataset=Path(args.data).name, guidance_lambda=cfg["guidance.lambda"], tile=_tile(cfg),
    )


def cmd_evaluate(args) -> int:
    cfg = _config(args, **{"sampler.steps": args.steps, "guidance.lambda": args.guidance_lambda})
    out_dir = Path(args.out)
    _check_output(out_dir / "rd.csv", args.force)
    _, rows = _sweep(args, cfg, [args.codec], args.diffusion, out_dir)
    if not rows:
        raise CLIError("no results: codec checkpoint missing")
    for r in rows:
        print("{codec_id} {variant}: bpp {bpp:.4f} psnr {psnr:.3f} ms-ssim {ms_ssim:.4f} perceptual {perceptual:.4f}".format(**r))
    _sidecar(out_dir / "rd.csv", cfg, {"codec": args.codec, "diffusion": args.diffusion, "data": args.data})
    return 0


def cmd_rd_curve(args) -> int:
    cfg = _config(args, **{"sampler.steps": args.steps, "guidance.lambda": args.guidance_lambda})
    out_dir = Path(args.out)
    _check_output(out_dir / "rd.csv", args.force)
    diffusions = args.diffusion if len(args.diffusion) > 1 else (args.diffusion[0] if args.diffusion else None)
    if isinstance(diffusions, list) and len(diffusions) != len(args.codec):
        raise ConfigError("give one --diffusion for all codecs or one per codec")
    curves, rows = _sweep(args, cfg, args.codec, diffusions, out_dir)
    for r in rows:
        print("{codec_id} {variant}: bpp {bpp:.4f} psnr {psnr:.3f} ms-ssim {ms_ssim:.4f}".format(**r))
    by_id = {c.codec_id: c for c in curves}
    if "initial" in by_id and "nc-diffusion" in by_id and len(by_id["initial"].points) >= 4:
        for metric in ("psnr", "ms_ssim"):
            print(f"BD-rate ({metric}) nc-diffusion vs initial: {bd_rate(by_id['initial'], by_id['nc-diffusion'], metric):+.2f}%")
    else:
        print("# BD-rate needs at least 4 rate points per curve")
    _sidecar(out_dir / "rd.csv", cfg, {"codecs": args.codec, "diffusion": args.diffusion, "data": args.data})
    return 0


def cmd_analyze_noise(args) -> int:
    cfg = _config(args, **{"seed": args.seed})
    out = _check_output(args.out, args.force)
    codec = checkpoint.load_codec(args.codec)
    image = load_image(args.input)
    g = torch.Generator().manual_seed(cfg["seed"])
    report = noise_statistics(image, codec, args.quantizer, g)
    control = gaussian_control(image, report.variance**0.5, cfg["seed"])
    result = {"codec": report.to_dict(), "gaussian_control": control.to_dict()}
    Path(out).write_text(json.dumps(result, indent=2))
    _sidecar(out, cfg, {"codec": args.codec, "input": args.input, "quantizer": args.quantizer})
    print(f"residual mean {report.mean:+.5f} variance {report.variance:.6f}")
    print(f"edge correlation: codec {report.edge_correlation:+.4f}, gaussian control {control.edge_correlation:+.4f}")
    print(f"wrote {out}")
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="ncd", description="Noise-constrained diffusion enhancement for learned image compression")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-codec", parents=[common], help="train the backbone codec")
    p.add_argument("--data", required=True, help="image directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--lambda-rd", type=float)
    p.add_argument("--steps", type=int, help="total steps (including resumed ones)")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("train-diffusion", parents=[common], help="train the noise predictor over a frozen codec")
    p.add_argument("--data", required=True)
    p.add_argument("--codec", required=True, help="trained codec checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, help="total steps (including resumed ones)")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train_diffusion)

    p = sub.add_parser("compress", parents=[common], help="image -> bitstream")
    p.add_argument("--codec", "--model", dest="codec", required=True, help="codec checkpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", parents=[common], help="bitstream -> PNG")
    p.add_argument("--codec", "--model", dest="codec", required=True, help="codec checkpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("enhance", parents=[common], help="run the reverse process on a decoded image")
    p.add_argument("--diffusion", required=True)
    p.add_argument("--codec", "--model", dest="codec", help="codec checkpoint, needed when the input is a bitstream")
    p.add_argument("--input", required=True, help="decoded PNG or .ncdf bitstream")
    p.add_argument("--out", dest="output", help="output PNG (default: <input>.enhanced.png)")
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance-lambda", type=float)
    p.add_argument("--embedder", help="'stub' or 'external:<torchscript path>'")
    p.add_argument("--tile-size", type=int)
    p.add_argument("--tile-overlap", type=int)
    p.add_argument("--no-tiling", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", parents=[common], help="metrics for one codec (+ diffusion) on a dataset")
    p.add_argument("--codec", required=True)
    p.add_argument("--diffusion")
    p.add_argument("--data", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance-lambda", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rd-curve", parents=[common], help="RD sweep over several codec checkpoints")
    p.add_argument("--codec", required=True, action="append", help="repeat once per rate point")
    p.add_argument("--diffusion", action="append", default=[], help="one for all codecs, or one per codec")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance-lambda", type=float)
    p.set_defaults(func=cmd_rd_curve)

    p = sub.add_parser("analyze-noise", parents=[common], help="statistics of the codec residual")
    p.add_argument("--codec", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--quantizer", default="test-round", choices=("test-round", "train-uniform"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_analyze_noise)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CLIError, *USER_ERRORS) as exc:
        print(f"ncd {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
