"""Command-line entry point.

Subcommands: ``schedule`` (build/rescale/inspect noise schedules),
``generate`` (factorized image+video sampling or past-frame extension),
``interp-mask`` (zero-interleave / stitch latents), ``curate``
(motion-score and filter a JSONL manifest), ``eval`` (vote analytics
and the simulated agreement curve), ``train`` (toy net training).

Every run that writes outputs also writes a manifest JSON recording the
resolved configuration, its hash, the seed, and the package version, so
outputs are reproducible from the manifest alone. Config precedence is
flags > config file (``--config``) > defaults.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .conditioning import (
    interleave_for_interpolation,
    interleave_indices,
    noise_augment,
    stitch_interpolated_halves,
)
from .curation import ManifestFormatError, run_curation
from .denoiser import (
    GaussianOracleDenoiser,
    ToyFactorizedNet,
    ToyNetDenoiser,
    TrainingDivergenceError,
    load_checkpoint,
    save_checkpoint,
    toy_train_step,
)
from .guidance import GuidanceSpec, GuidanceStrategy, default_image_spec
from .juice_eval import (
    AgreementClass,
    VoteFormatError,
    agreement_histogram,
    fleiss_kappa,
    load_votes_csv,
    reason_distribution,
    simulate_kappa_curve,
    win_rate,
)
from .latent import LatentFormatError, LatentVideo, load_latent, save_latent
from .sampler import (
    SamplerConfig,
    SamplingDivergenceError,
    TimestepSelection,
    extend_video,
    generate_factorized,
)
from .schedule import (
    PredictionKind,
    ScheduleError,
    ZeroSignalError,
    build_quad_schedule,
    load_schedule,
    rescale_zero_terminal_snr,
    save_schedule,
    snr,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


def _resolve(args: argparse.Namespace, key: str, default):
    """flags > config file > defaults; absent flags parse as None."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    config = getattr(args, "_config", {})
    if key in config:
        return config[key]
    return default


def _load_config(args: argparse.Namespace) -> None:
    config = {}
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(config, dict):
            raise DataError(f"config {path} must hold a JSON object")
    args._config = config


def _write_run_manifest(path: str, subcommand: str, config: dict) -> None:
    canonical = json.dumps(config, sort_keys=True)
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "seed": config.get("seed"),
        "version": __version__,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _build_schedule(steps: int, beta_start: float, beta_end: float, zero_terminal: bool):
    sched = build_quad_schedule(steps, beta_start, beta_end)
    if zero_terminal:
        sched = rescale_zero_terminal_snr(sched)
    return sched


def cmd_schedule(args: argparse.Namespace) -> int:
    try:
        sched = _build_schedule(args.steps, args.beta_start, args.beta_end, args.zero_terminal)
    except ScheduleError as exc:
        raise UsageError(str(exc)) from exc
    if args.json:
        save_schedule(sched, args.json)
        _write_run_manifest(
            str(args.json) + ".manifest.json",
            "schedule",
            {
                "steps": args.steps,
                "beta_start": args.beta_start,
                "beta_end": args.beta_end,
                "zero_terminal": args.zero_terminal,
                "json": str(args.json),
            },
        )
        print(f"wrote schedule to {args.json}")
        return EXIT_OK
    n = sched.num_steps
    probe = sorted({1, n // 4, n // 2, 3 * n // 4, n})
    print(f"{'t':>6} {'signal':>12} {'noise':>12} {'snr':>14}")
    for t in probe:
        print(f"{t:>6} {sched.signal(t):>12.6f} {sched.noise(t):>12.6f} {snr(sched, t):>14.6g}")
    return EXIT_OK


def _sampling_configs(args: argparse.Namespace):
    steps = int(_resolve(args, "steps", 250))
    image_steps = int(_resolve(args, "image_steps", steps))
    seed = int(_resolve(args, "seed", 0))
    pred = PredictionKind(_resolve(args, "pred", "v"))
    selection = TimestepSelection(_resolve(args, "timesteps", "trailing"))
    cfg_video = SamplerConfig(steps, pred, selection, seed=seed + 1)
    cfg_image = SamplerConfig(image_steps, pred, selection, seed=seed)
    return cfg_image, cfg_video


def cmd_generate(args: argparse.Namespace) -> int:
    _load_config(args)
    frames = int(_resolve(args, "frames", 8))
    channels = int(_resolve(args, "channels", 4))
    height = int(_resolve(args, "height", 8))
    width = int(_resolve(args, "width", 8))
    w_image = float(_resolve(args, "w_image", 2.0))
    w_text = float(_resolve(args, "w_text", 7.5))
    strategy = GuidanceStrategy(_resolve(args, "strategy", "image_first"))
    denoiser_kind = _resolve(args, "denoiser", "oracle")
    mu = float(_resolve(args, "mu", 0.0))
    sigma2 = float(_resolve(args, "sigma2", 1.0))
    try:
        cfg_image, cfg_video = _sampling_configs(args)
        guidance_video = GuidanceSpec(w_image, w_text, strategy)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    sched = _build_schedule(1000, 8.5e-4, 1.2e-2, True)

    if denoiser_kind == "oracle":
        denoiser = GaussianOracleDenoiser(mu, sigma2, sched)
    else:
        ckpt = _resolve(args, "checkpoint", None)
        if not ckpt:
            raise UsageError("--denoiser toy requires --checkpoint")
        try:
            net = load_checkpoint(ckpt)
        except OSError as exc:
            raise DataError(f"cannot read checkpoint {ckpt}: {exc}") from exc
        except (ValueError, KeyError) as exc:
            raise DataError(f"bad checkpoint {ckpt}: {exc}") from exc
        if net.channels != channels:
            raise UsageError(f"checkpoint has {net.channels} channels, requested {channels}")
        denoiser = ToyNetDenoiser(net, sched)

    os.makedirs(args.out_dir, exist_ok=True)
    config = {
        "frames": frames,
        "channels": channels,
        "height": height,
        "width": width,
        "steps": cfg_video.num_inference_steps,
        "image_steps": cfg_image.num_inference_steps,
        "seed": cfg_image.seed,
        "pred": cfg_video.prediction_kind.value,
        "timesteps": cfg_video.timestep_selection.value,
        "w_image": w_image,
        "w_text": w_text,
        "strategy": strategy.value,
        "denoiser": denoiser_kind,
        "mu": mu,
        "sigma2": sigma2,
        "extend": str(args.extend) if args.extend else None,
    }

    if args.extend:
        try:
            past = load_latent(args.extend)
        except OSError as exc:
            raise DataError(f"cannot read {args.extend}: {exc}") from exc
        if frames <= past.frames:
            raise UsageError(f"--frames {frames} must exceed the past clip length {past.frames}")
        extended = extend_video(cfg_video, sched, denoiser, guidance_video, past, frames)
        out = os.path.join(args.out_dir, "extended.lat")
        save_latent(extended, out)
        print(f"wrote {out} ({extended.frames} frames)")
    else:
        image, video = generate_factorized(
            cfg_image, cfg_video, sched, denoiser, default_image_spec(), guidance_video,
            (frames, channels, height, width),
        )
        image_out = os.path.join(args.out_dir, "image.lat")
        video_out = os.path.join(args.out_dir, "video.lat")
        save_latent(image, image_out)
        save_latent(video, video_out)
        print(f"wrote {image_out} and {video_out}")
    _write_run_manifest(os.path.join(args.out_dir, "run_manifest.json"), "generate", config)
    return EXIT_OK


def cmd_interp_mask(args: argparse.Namespace) -> int:
    if args.stitch:
        try:
            first = load_latent(args.stitch[0])
            second = load_latent(args.stitch[1])
        except OSError as exc:
            raise DataError(str(exc)) from exc
        try:
            out = stitch_interpolated_halves(first, second)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        save_latent(out, args.out)
        _write_run_manifest(
            str(args.out) + ".manifest.json",
            "interp-mask",
            {"stitch": [str(p) for p in args.stitch], "out": str(args.out)},
        )
        print(f"stitched {out.frames} frames to {args.out}")
        return EXIT_OK

    try:
        low_fps = load_latent(args.infile)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    try:
        pack = interleave_for_interpolation(low_fps)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    config = {
        "in": str(args.infile),
        "out_cond": str(args.out_cond),
        "out_mask": str(args.out_mask),
        "augment_t": args.augment_t,
        "augment_seed": args.augment_seed,
        "schedule": str(args.schedule) if args.schedule else None,
    }
    if args.augment_t:
        sched = load_schedule(args.schedule) if args.schedule else _build_schedule(1000, 8.5e-4, 1.2e-2, True)
        pack = noise_augment(pack, sched, args.augment_t, args.augment_seed)
    save_latent(pack.cond_latent, args.out_cond)
    save_latent(LatentVideo(pack.frame_mask), args.out_mask)
    _write_run_manifest(str(args.out_cond) + ".manifest.json", "interp-mask", config)
    indices = ",".join(str(i) for i in interleave_indices())
    print(f"interleaved {low_fps.frames} -> {pack.shape[0]} frames; conditioned indices: {indices}")
    return EXIT_OK


def cmd_curate(args: argparse.Namespace) -> int:
    if args.block < 1 or args.radius < 1:
        raise UsageError("--block and --radius must be positive")
    try:
        summary = run_curation(
            args.infile,
            args.out,
            block=args.block,
            radius=args.radius,
            clip_min=args.clip_min,
            aesthetic_min=args.aesthetic_min,
            motion_min=args.motion_min,
        )
    except OSError as exc:
        raise DataError(str(exc)) from exc
    except ManifestFormatError as exc:
        raise DataError(str(exc)) from exc
    _write_run_manifest(
        str(args.out) + ".manifest.json",
        "curate",
        {
            "in": str(args.infile),
            "out": str(args.out),
            "block": args.block,
            "radius": args.radius,
            "clip_min": args.clip_min,
            "aesthetic_min": args.aesthetic_min,
            "motion_min": args.motion_min,
        },
    )
    print(
        f"total={summary.total} kept={summary.kept} "
        f"rejected={summary.rejected} incomplete={summary.incomplete}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    if args.simulate:
        replacement = AgreementClass(args.replacement)
        fractions = [i / 10 for i in range(11)]
        curve = simulate_kappa_curve(args.items, replacement, fractions)
        lines = ["fraction_complete,kappa"]
        lines += [f"{f},{k:.12g}" for f, k in curve]
        text = "\n".join(lines) + "\n"
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
            _write_run_manifest(
                str(args.out) + ".manifest.json",
                "eval",
                {"simulate": True, "replacement": args.replacement, "items": args.items, "out": str(args.out)},
            )
            print(f"wrote curve to {args.out}")
        else:
            sys.stdout.write(text)
        return EXIT_OK

    if not args.votes:
        raise UsageError("either --votes or --simulate is required")
    try:
        records = load_votes_csv(args.votes)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    if not records:
        raise DataError(f"{args.votes}: no records")
    rate = win_rate(records, "A")
    print(f"items: {len(records)}")
    print(f"win rate A: {100 * rate:.1f}%  B: {100 * (1 - rate):.1f}%")
    hist = agreement_histogram(records)
    print(
        "agreement: "
        + "  ".join(f"{cls.value}={hist[cls]}" for cls in AgreementClass)
    )
    kappa = fleiss_kappa(records)
    print("fleiss kappa: " + ("degenerate (single category)" if math.isnan(kappa) else f"{kappa:.4f}"))
    for side in ("A", "B"):
        dist = reason_distribution(records, side)
        if dist:
            pretty = ", ".join(f"{tag} {pct:.1f}%" for tag, pct in dist.items())
            print(f"reasons when {side} wins: {pretty}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    _load_config(args)
    steps = int(_resolve(args, "steps", 500))
    lr = float(_resolve(args, "lr", 0.02))
    seed = int(_resolve(args, "seed", 0))
    frames = int(_resolve(args, "frames", 4))
    channels = int(_resolve(args, "channels", 2))
    height = int(_resolve(args, "height", 4))
    width = int(_resolve(args, "width", 4))
    batch_size = int(_resolve(args, "batch", 8))
    data_mu = float(_resolve(args, "data_mu", 1.0))
    data_sigma = float(_resolve(args, "data_sigma", 0.5))
    if steps < 1 or lr < 0 or batch_size < 1:
        raise UsageError("steps and batch must be positive, lr nonnegative")
    sched = _build_schedule(1000, 8.5e-4, 1.2e-2, True)
    net = ToyFactorizedNet.initialize(channels=channels, seed=seed)
    data_rng = np.random.default_rng(seed + 1)
    losses = []
    for step in range(steps):
        batch = [
            LatentVideo(data_mu + data_sigma * data_rng.standard_normal((frames, channels, height, width)))
            for _ in range(batch_size)
        ]
        net, loss = toy_train_step(net, batch, sched, rng_seed=seed + 10_000 + step, lr=lr)
        losses.append(loss)
    save_checkpoint(net, args.out)
    _write_run_manifest(
        str(args.out) + ".manifest.json",
        "train",
        {
            "steps": steps, "lr": lr, "seed": seed, "frames": frames, "channels": channels,
            "height": height, "width": width, "batch": batch_size,
            "data_mu": data_mu, "data_sigma": data_sigma, "out": str(args.out),
        },
    )
    early = sum(losses[:10]) / min(10, len(losses))
    late = sum(losses[-10:]) / min(10, len(losses))
    print(f"trained {steps} steps: first-10 loss {early:.4f}, last-10 loss {late:.4f}")
    print(f"wrote checkpoint to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factorvid", description=__doc__)
    parser.add_argument("--version", action="version", version=f"factorvid {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("schedule", help="build and inspect noise schedules")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=8.5e-4)
    p.add_argument("--beta-end", type=float, default=1.2e-2)
    p.add_argument("--zero-terminal", action="store_true")
    p.add_argument("--json", metavar="PATH", help="write the schedule JSON instead of printing")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("generate", help="factorized image+video sampling")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", metavar="PATH", help="JSON config supplying flag defaults")
    p.add_argument("--denoiser", choices=["oracle", "toy"])
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--frames", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--image-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pred", choices=[k.value for k in PredictionKind])
    p.add_argument("--timesteps", choices=[s.value for s in TimestepSelection])
    p.add_argument("--w-image", type=float)
    p.add_argument("--w-text", type=float)
    p.add_argument("--strategy", choices=[s.value for s in GuidanceStrategy])
    p.add_argument("--extend", metavar="PAST_LAT", help="extend a past clip instead of factorized generation")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("interp-mask", help="zero-interleave or stitch latents")
    p.add_argument("--in", dest="infile", metavar="LAT")
    p.add_argument("--out-cond", metavar="LAT")
    p.add_argument("--out-mask", metavar="LAT")
    p.add_argument("--stitch", nargs=2, metavar=("FIRST", "SECOND"))
    p.add_argument("--out", metavar="LAT")
    p.add_argument("--augment-t", type=int, default=0)
    p.add_argument("--augment-seed", type=int, default=0)
    p.add_argument("--schedule", metavar="JSON")
    p.set_defaults(func=cmd_interp_mask)

    p = sub.add_parser("curate", help="motion-score and filter a JSONL manifest")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--block", type=int, default=16)
    p.add_argument("--radius", type=int, default=7)
    p.add_argument("--clip-min", type=float, default=0.25)
    p.add_argument("--aesthetic-min", type=float, default=5.7)
    p.add_argument("--motion-min", type=float, default=0.5)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("eval", help="vote analytics and the simulated agreement curve")
    p.add_argument("--votes", metavar="CSV")
    p.add_argument("--simulate", action="store_true")
    p.add_argument("--replacement", choices=["split", "partial"], default="split")
    p.add_argument("--items", type=int, default=304)
    p.add_argument("--out", metavar="CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train the toy factorized net on synthetic data")
    p.add_argument("--out", required=True, metavar="CKPT")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--data-mu", type=float)
    p.add_argument("--data-sigma", type=float)
    p.set_defaults(func=cmd_train)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand == "interp-mask":
        if bool(args.stitch) == bool(args.infile):
            parser.error("interp-mask needs exactly one of --in or --stitch")
        if args.stitch and not args.out:
            parser.error("--stitch requires --out")
        if args.infile and not (args.out_cond and args.out_mask):
            parser.error("--in requires --out-cond and --out-mask")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(f"run 'factorvid {args.subcommand} --help' for usage", file=sys.stderr)
        return EXIT_USAGE
    except (ZeroSignalError, SamplingDivergenceError, TrainingDivergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        DataError,
        ManifestFormatError,
        VoteFormatError,
        LatentFormatError,
        json.JSONDecodeError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ScheduleError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
