"""Command-line interface: train / enhance / eval / synth / gradcheck / selftest.

Heavy imports happen after argument parsing so that `--threads` can pin the
BLAS thread count through the environment before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dlen",
        description="Dual-branch low-light image enhancement (train/apply/evaluate).")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (falls back to env DLEN_SEED, then 0)")
        p.add_argument("--threads", type=int, default=1,
                       help="BLAS thread cap; 1 (default) is fully deterministic")

    p = sub.add_parser("train", help="train a model on a paired low/high dataset")
    p.add_argument("--data-dir", required=True, help="dataset root with low/ and high/")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--crop", type=int, default=128)
    p.add_argument("--width", type=int, default=16, help="base channel count C")
    p.add_argument("--seb-width", type=int, default=0,
                   help="structure-branch width C_s (0: C/2 rounded even)")
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--no-lwn", action="store_true", help="drop the wavelet module")
    p.add_argument("--no-seab", action="store_true", help="drop the structure branch")
    p.add_argument("--log-every", type=int, default=20)
    add_common(p)

    p = sub.add_parser("enhance", help="enhance one image with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dump-intermediates", action="store_true",
                   help="also save the lit image and both branch residuals")
    add_common(p)

    p = sub.add_parser("eval", help="PSNR/SSIM report over a paired dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--report", default=None, help="write the TSV report here")
    p.add_argument("--ssim", choices=("windowed", "global"), default="windowed")
    add_common(p)

    p = sub.add_parser("synth", help="build a synthetic low/high dataset")
    p.add_argument("--input-dir", required=True, help="directory of normal-light images")
    p.add_argument("--out", required=True, help="dataset root to create")
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--gain", type=float, default=0.35)
    p.add_argument("--noise-sigma", type=float, default=0.02)
    add_common(p)

    p = sub.add_parser("gradcheck", help="64-bit finite-difference gradient suite")
    add_common(p)

    p = sub.add_parser("selftest", help="wavelet/metric/determinism/shape checks")
    add_common(p)
    return parser


def resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("DLEN_SEED", "0"))


def pad_to_multiple(chw, multiple: int = 8):
    """Reflect-pad [C,H,W] on the bottom/right; returns (padded, (H, W))."""
    import numpy as np
    _, h, w = chw.shape
    pb = (-h) % multiple
    pr = (-w) % multiple
    if pb or pr:
        chw = np.pad(chw, ((0, 0), (0, pb), (0, pr)), mode="reflect")
    return chw, (h, w)


def _enhance_array(model, chw):
    """Forward one [3,H,W] float array; returns the EnhancedOutput, cropped."""
    import numpy as np
    from . import tensor as T
    from .model import dlen_forward

    padded, (h, w) = pad_to_multiple(chw)
    x = T.Tensor(padded[None].astype(np.float32))
    with T.no_grad():
        out = dlen_forward(x, model)
    return out, (h, w)


def cmd_train(args) -> int:
    import numpy as np
    from . import tensor as T
    from .checkpoint import save_checkpoint
    from .image import augment_pair, load_image, random_crop_pair, scan_dataset
    from .model import DlenConfig, init_params, train_step
    from .tensor import Adam, Prng, Tensor

    seed = resolve_seed(args)
    if args.crop % 8:
        print(f"error: --crop must be a multiple of 8, got {args.crop}", file=sys.stderr)
        return 1
    ds = scan_dataset(args.data_dir)
    pairs = []
    for low_p, high_p in ds.entries:
        low, high = load_image(low_p), load_image(high_p)
        if low.pixels.shape != high.pixels.shape:
            raise ValueError(f"pair dimension mismatch: {low_p} vs {high_p}")
        pairs.append((low.to_chw(), high.to_chw()))
    print(f"dataset: {len(pairs)} pairs from {args.data_dir}")

    cfg = DlenConfig(width=args.width, seb_width=args.seb_width,
                     use_lwn=not args.no_lwn, use_seab=not args.no_seab,
                     train_res=args.crop)
    model = init_params(cfg, seed)
    print(f"model: {model.param_count()} parameters "
          f"(C={cfg.width}, C_s={cfg.resolved_seb_width()}, "
          f"lwn={cfg.use_lwn}, seab={cfg.use_seab})")
    opt = Adam(model.params, lr=args.lr)
    rng = Prng(seed).fork(1000)
    for it in range(args.iters):
        low_b, high_b = [], []
        for _ in range(args.batch):
            idx = int(rng.randint(1, len(pairs))[0])
            lo, hi = pairs[idx]
            lo, hi = random_crop_pair(lo, hi, args.crop, rng)
            lo, hi = augment_pair(lo, hi, rng)
            low_b.append(lo)
            high_b.append(hi)
        low = Tensor(np.stack(low_b).astype(np.float32))
        high = Tensor(np.stack(high_b).astype(np.float32))
        loss = train_step(model, low, high, opt)
        if it % args.log_every == 0 or it == args.iters - 1:
            print(f"iter {it:5d}  mae {loss:.6f}", flush=True)
    save_checkpoint(model, args.out)
    print(f"checkpoint written: {args.out}")
    return 0


def cmd_enhance(args) -> int:
    import numpy as np
    from .checkpoint import load_checkpoint
    from .image import ImageBuffer, load_image, save_image

    model = load_checkpoint(args.model)
    img = load_image(args.input)
    out, (h, w) = _enhance_array(model, img.to_chw())

    def crop(t):
        return t.data[0, :, :h, :w]

    save_image(ImageBuffer.from_chw(crop(out.i_en)), args.output)
    print(f"enhanced image written: {args.output}")
    if args.dump_intermediates:
        stem = Path(args.output)
        for tag, t in (("lit", out.i_lu), ("flb", out.i_flb), ("feb", out.i_feb)):
            if t is None:
                continue
            p = stem.with_name(stem.stem + f".{tag}" + stem.suffix)
            save_image(ImageBuffer.from_chw(np.clip(crop(t), 0.0, 1.0)), p)
            print(f"intermediate written: {p}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .image import load_image, scan_dataset
    from .metrics import MetricReport, psnr, ssim_global, ssim_windowed

    model = load_checkpoint(args.model)
    ds = scan_dataset(args.data_dir)
    ssim_fn = ssim_windowed if args.ssim == "windowed" else ssim_global
    report = MetricReport(ssim_kind=args.ssim)
    for low_p, high_p in ds.entries:
        low, high = load_image(low_p), load_image(high_p)
        out, (h, w) = _enhance_array(model, low.to_chw())
        import numpy as np
        pred = np.clip(out.i_en.data[0, :, :h, :w], 0.0, 1.0)
        target = high.to_chw()
        report.add(low_p.name, psnr(pred, target), ssim_fn(pred, target))
    text = report.to_tsv()
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
        print(f"report written: {args.report}")
    sys.stdout.write(text)
    print(f"mean over {report.count} images: "
          f"psnr {report.mean_psnr:.3f} dB, ssim({report.ssim_kind}) {report.mean_ssim:.4f}")
    return 0


def cmd_synth(args) -> int:
    from .image import load_image, save_image, synth_lowlight

    seed = resolve_seed(args)
    src = Path(args.input_dir)
    if not src.is_dir():
        raise FileNotFoundError(f"no such directory: {src}")
    names = sorted(p.name for p in src.iterdir() if p.is_file())
    if not names:
        raise FileNotFoundError(f"no images under {src}")
    out = Path(args.out)
    (out / "low").mkdir(parents=True, exist_ok=True)
    (out / "high").mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(names):
        img = load_image(src / name)
        low = synth_lowlight(img, args.gamma, args.gain, args.noise_sigma,
                             seed=seed + i)
        base = Path(name).stem + ".ppm"
        save_image(img, out / "high" / base)
        save_image(low, out / "low" / base)
    print(f"synthetic dataset with {len(names)} pairs written under {out}")
    return 0


def _run_suite(results) -> int:
    failed = 0
    for r in results:
        print(r.line())
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def cmd_gradcheck(args) -> int:
    from .checks import gradient_suite
    return _run_suite(gradient_suite())


def cmd_selftest(args) -> int:
    from .checks import selftest_suite
    return _run_suite(selftest_suite())


COMMANDS = {
    "train": cmd_train,
    "enhance": cmd_enhance,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = str(max(1, args.threads))
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ValueError, ArithmeticError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
