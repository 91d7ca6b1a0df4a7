"""Command-line entry point: ``ctxpaint <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import io as imgio
from .errors import CtxPaintError

log = logging.getLogger("ctxpaint")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctxpaint", description="In-context diffusion inpainting toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="SUBCOMMAND")

    p = sub.add_parser("gen-data", help="render a synthetic paired-view dataset")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_positive_int, default=32)
    p.add_argument("--min-overlap", type=float, default=0.5)
    p.add_argument("--max-overlap", type=float, default=0.9)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("mask-gen", help="write a random-rectangle mask PNG")
    p.add_argument("--rects", type=_positive_int, default=10)
    p.add_argument("--ratio", type=_unit_interval, default=0.4)
    p.add_argument("--size", type=_positive_int, default=32)
    p.add_argument("--patch-size", type=_positive_int, default=None,
                   help="grow the mask to whole patches of this size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a denoiser from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint directory to continue from")
    p.add_argument("--out", required=True)

    p = sub.add_parser("inpaint", help="inpaint the masked region of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=_positive_int, default=1000)
    p.add_argument("--jumps", type=_positive_int, default=10)
    p.add_argument("--jump-length", type=_positive_int, default=10)
    p.add_argument("--schedule", choices=("cosine", "laplace"), default=None,
                   help="sampling schedule (default: the checkpoint's training schedule)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict-paper", action="store_true",
                   help="known-region noise N(sqrt(abar_t) x0, (1 - alpha_t) I)")
    p.add_argument("--no-patch-align", action="store_true",
                   help="use the pixel mask as-is instead of growing it to whole patches")
    p.add_argument("--dump-chain", default=None, help="directory for intermediate x_t images")
    p.add_argument("--chain-stride", type=_positive_int, default=50)
    p.add_argument("--out", required=True, help="output .png, or .icdf for a lossless dump")

    p = sub.add_parser("eval", help="PSNR/SSIM of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--masks", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("schedule-dump", help="write a noise schedule as CSV")
    p.add_argument("--schedule", choices=("cosine", "laplace"), default="cosine")
    p.add_argument("--T", type=lambda s: _positive_int(s), default=1000)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--b", type=float, default=0.5)
    p.add_argument("--out", required=True)
    return parser


# ----------------------------------------------------------------- validation
def _require_file(path: str, flag: str) -> None:
    if not os.path.isfile(path):
        raise UsageError(f"{flag}: no such file {path!r}")


def _require_dir(path: str, flag: str) -> None:
    if not os.path.isdir(path):
        raise UsageError(f"{flag}: no such directory {path!r}")


def _load_array_image(path: str) -> np.ndarray:
    if path.endswith(".icdf"):
        return imgio.load_icdf(path)
    return imgio.load_image(path)


# ------------------------------------------------------------------- commands
def cmd_gen_data(args) -> int:
    from .scenes import make_dataset

    if not 0.0 <= args.min_overlap <= args.max_overlap <= 1.0:
        raise UsageError("--min-overlap/--max-overlap must satisfy 0 <= min <= max <= 1")
    index = make_dataset(args.n, args.seed, args.out, size=args.size,
                         overlap_range=(args.min_overlap, args.max_overlap), workers=args.workers)
    print(json.dumps({"pairs": len(index["pairs"]), "out": args.out}))
    return EXIT_OK


def cmd_mask_gen(args) -> int:
    from .masks import random_rect_mask, save_mask

    if args.patch_size and args.size % args.patch_size:
        raise UsageError("--size must be divisible by --patch-size")
    spec = random_rect_mask(args.size, args.size, args.rects, args.ratio,
                            np.random.default_rng(args.seed), patch_size=args.patch_size)
    pixels = spec.aligned_pixels(args.patch_size) if args.patch_size else spec.pixel_mask
    save_mask(args.out, pixels)
    print(json.dumps({"achieved_ratio": round(float(pixels.mean()), 6), "out": args.out}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import TrainConfig, train

    _require_file(args.config, "--config")
    try:
        config = TrainConfig.from_json(args.config)
    except (json.JSONDecodeError, TypeError) as exc:
        raise UsageError(f"--config: {exc}") from None
    except CtxPaintError as exc:
        raise UsageError(f"--config: {exc}") from None
    _require_dir(config.dataset, "dataset")
    if args.resume:
        _require_dir(args.resume, "--resume")
    t0 = time.time()
    ck = train(config, args.out, resume=args.resume)
    print(json.dumps({"steps": ck.opt.step, "epochs": ck.epoch, "seconds": round(time.time() - t0, 1),
                      "checkpoint": os.path.join(args.out, "final")}))
    return EXIT_OK


def cmd_inpaint(args) -> int:
    from .masks import load_mask
    from .sampler import InpaintTask, inpaint_batch
    from .schedule import make_schedule, match_timesteps
    from .trainer import load_checkpoint

    for flag in ("image", "context", "mask"):
        _require_file(getattr(args, flag), "--" + flag)
    _require_dir(args.checkpoint, "--checkpoint")
    if not args.out.endswith((".png", ".icdf")):
        raise UsageError("--out must end in .png or .icdf")

    ck = load_checkpoint(args.checkpoint)
    cfg = ck.model.config
    image = _load_array_image(args.image)
    context = _load_array_image(args.context)
    spec = load_mask(args.mask)
    pixel_mask = spec.pixel_mask if args.no_patch_align else spec.aligned_pixels(cfg.patch_size)
    kind = args.schedule or ck.schedule.kind
    sampling = ck.schedule if (kind == ck.schedule.kind and args.steps == ck.schedule.T) else \
        make_schedule(kind, args.steps)
    task = InpaintTask(
        x0_known=imgio.to_model_range(image), mask=pixel_mask,
        ctx=imgio.to_model_range(context), schedule=sampling,
        jump_length=args.jump_length, n_jumps=args.jumps, seed=args.seed,
        strict_paper=args.strict_paper, model_steps=match_timesteps(sampling, ck.schedule),
    )

    on_state = None
    if args.dump_chain:
        os.makedirs(args.dump_chain, exist_ok=True)
        counter = {"i": 0}

        def on_state(t, x):
            i = counter["i"]
            counter["i"] += 1
            if i % args.chain_stride == 0 or t == 0:
                imgio.save_image(os.path.join(args.dump_chain, f"x_{i:06d}_t{t:04d}.png"),
                                 imgio.to_unit_range(x[0]))

    t0 = time.time()
    result = inpaint_batch([task], ck.model, on_state=on_state)
    out = imgio.to_unit_range(result.images[0])
    if args.out.endswith(".icdf"):
        imgio.save_icdf(args.out, out)
    else:
        imgio.save_image(args.out, out)
    print(json.dumps({
        "model_evals": result.model_evals,
        "denoise_transitions": result.jump_schedule.denoise_count,
        "renoise_steps": result.jump_schedule.renoise_count,
        "masked_ratio": round(float(pixel_mask.mean()), 6),
        "seconds": round(time.time() - t0, 2),
        "out": args.out,
    }))
    return EXIT_OK


def _stems(directory: str) -> dict:
    """Map file stem to path, preferring lossless .icdf over .png."""
    found = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext == ".icdf" or (ext == ".png" and stem not in found):
            found[stem] = os.path.join(directory, name)
    return found


def cmd_eval(args) -> int:
    from .masks import load_mask
    from .metrics import full_metrics, masked_metrics

    _require_dir(args.pred, "--pred")
    _require_dir(args.gt, "--gt")
    if args.masks:
        _require_dir(args.masks, "--masks")
    preds, gts = _stems(args.pred), _stems(args.gt)
    masks = _stems(args.masks) if args.masks else {}
    names = sorted(set(preds) & set(gts))
    if not names:
        raise UsageError("--pred and --gt share no image names")

    rows = []
    for name in names:
        a, b = _load_array_image(preds[name]), _load_array_image(gts[name])
        full = full_metrics(a, b)
        row = {"image": name, "psnr": full.psnr, "ssim": full.ssim,
               "masked_psnr": "", "masked_ssim": "", "masked_pixels": ""}
        if name in masks:
            m = load_mask(masks[name]).pixel_mask
            if m.any():
                rep = masked_metrics(a, b, m)
                row.update(masked_psnr=rep.psnr, masked_ssim=rep.ssim, masked_pixels=rep.pixels)
        rows.append(row)

    def mean_of(key):
        vals = [r[key] for r in rows if r[key] != ""]
        return float(np.mean(vals)) if vals else ""

    summary = {"image": "mean", **{k: mean_of(k) for k in ("psnr", "ssim", "masked_psnr", "masked_ssim")},
               "masked_pixels": ""}
    fields = ["image", "psnr", "ssim", "masked_psnr", "masked_ssim", "masked_pixels"]
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows + [summary]:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    print(json.dumps({"images": len(rows), "psnr": summary["psnr"], "ssim": summary["ssim"]}))
    return EXIT_OK


def cmd_schedule_dump(args) -> int:
    from .schedule import cosine_schedule, dump_csv, laplace_schedule

    if args.T < 2:
        raise UsageError("--T must be at least 2")
    if args.schedule == "laplace":
        if args.b <= 0:
            raise UsageError("--b must be positive")
        sched = laplace_schedule(args.T, args.mu, args.b)
    else:
        sched = cosine_schedule(args.T)
    with open(args.out, "w") as fh:
        fh.write(dump_csv(sched))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "mask-gen": cmd_mask_gen,
    "train": cmd_train,
    "inpaint": cmd_inpaint,
    "eval": cmd_eval,
    "schedule-dump": cmd_schedule_dump,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ctxpaint {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CtxPaintError, OSError) as exc:
        print(f"ctxpaint {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch())
