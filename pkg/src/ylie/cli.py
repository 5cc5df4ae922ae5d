"""``ylie`` command line: enhance, train, bench, analyze, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .analysis import feature_spectrum, plane_spectra, swap_images, swap_report
from .bench import REFERENCE_CPU_MS, bench_latency
from .colorspace import ImageBuffer
from .io.atomic import atomic_write_text
from .io.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .io.images import ImageFormatError, is_image_path, load_image, save_image
from .model.config import ModelConfig
from .model.flops import count_flops
from .model.params import count_params, init_params
from .model.pipeline import FEATURES, enhance_tensor, pipeline_forward
from .training import NumericFailure, TrainConfig, load_pair_dir, load_train_state, save_train_state, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "YLIE_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        h, w = int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 256x256, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def resolve_threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get(THREADS_ENV)
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV}={env!r} is not an integer") from None
    if value < 1:
        raise UsageError(f"thread count must be positive, got {value}")
    return value


def _load_model(path: str | None) -> tuple[dict, ModelConfig]:
    if path is None:
        cfg = ModelConfig()
        return init_params(cfg), cfg
    return load_checkpoint(path)


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# enhance

def cmd_enhance(args) -> int:
    threads = resolve_threads(args.threads)
    params, cfg = load_checkpoint(args.model)
    src, dst = Path(args.input), Path(args.output)
    if src.is_dir():
        jobs = [(p, dst / p.name) for p in sorted(src.iterdir()) if is_image_path(p)]
        dst.mkdir(parents=True, exist_ok=True)
    else:
        jobs = [(src, dst)]

    def run(job):
        inp, out = job
        try:
            img = load_image(inp)
            if img.space != "RGB":
                raise ImageFormatError(f"{inp}: expected an RGB image, got {img.space}")
            save_image(pipeline_forward(img, params, cfg), out)
            return None
        except (ImageFormatError, ValueError, OSError) as exc:
            return f"{inp}: {exc}"

    per_worker = 1 if len(jobs) > 1 else threads
    with threadpool_limits(limits=per_worker):
        if len(jobs) > 1 and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                failures = [f for f in pool.map(run, jobs) if f]
        else:
            failures = [f for f in map(run, jobs) if f]
    for f in failures:
        _err(f)
    print(f"enhanced {len(jobs) - len(failures)} of {len(jobs)} image(s)")
    return EXIT_DATA if failures else EXIT_OK


# ---------------------------------------------------------------------------
# train

HISTORY_HEADER = ("epoch", "loss", "train_psnr")


def _read_history(path: Path) -> list[list[str]]:
    if not path.exists():
        return []
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    return rows[1:] if rows else []


def _write_history(path: Path, rows: list[list[str]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def cmd_train(args) -> int:
    threads = resolve_threads(args.threads)
    pairs = load_pair_dir(args.data)
    if not pairs:
        _err(f"no matching low/high image pairs under {args.data}")
        return EXIT_DATA
    out = Path(args.out)
    history_path = Path(args.history) if args.history else out.with_name(out.name + ".history.csv")
    mcfg = ModelConfig()
    params = state = None
    start_epoch = 0
    rows: list[list[str]] = []
    if args.resume:
        params, mcfg = load_checkpoint(args.resume)
        state, start_epoch = load_train_state(args.resume)
        rows = _read_history(history_path)[:start_epoch]
    tcfg = TrainConfig(lr=args.lr, epochs=args.epochs, crop=args.crop, batch=args.batch, seed=args.seed,
                       w_smooth=args.w_smooth, w_psnr=args.w_psnr, schedule=args.schedule,
                       loss_space=args.loss_space, checkpoint_every=args.checkpoint_every or max(args.epochs, 1),
                       checkpoint_path=str(out))
    try:
        tcfg.validate(mcfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if state is not None:
        state.lr = tcfg.lr

    def on_epoch(rec):
        rows.append([str(rec.epoch), repr(rec.loss), repr(rec.train_psnr)])
        _write_history(history_path, rows)
        if not args.quiet:
            print(f"epoch {rec.epoch} step {rec.step} loss {rec.loss:.6f} psnr {rec.train_psnr:.3f} lr {rec.lr:.3g}")

    def on_checkpoint(path, st, epoch):
        save_train_state(st, epoch, path)

    try:
        with threadpool_limits(limits=threads):
            result = train(pairs, mcfg, tcfg, params=params, state=state, start_epoch=start_epoch,
                           on_epoch=on_epoch, on_checkpoint=on_checkpoint)
    except NumericFailure as exc:
        _err(f"{exc}; last good checkpoint: {exc.last_good or 'none'}")
        return EXIT_NUMERIC
    if not result.checkpoints or tcfg.epochs % tcfg.checkpoint_every:
        save_checkpoint(result.params, mcfg, out)
        save_train_state(result.state, tcfg.epochs, str(out))
    print(f"checkpoint: {out}\nhistory: {history_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench

def cmd_bench(args) -> int:
    threads = resolve_threads(args.threads)
    params, cfg = _load_model(args.model)
    h, w = args.size
    report = bench_latency(params, cfg, h, w, threads=threads, runs=args.runs, warmup=args.warmup)
    flops = count_flops(cfg, h, w)
    n = count_params(params)
    sys.stdout.write(report.to_text())
    print(f"params={n}")
    print(f"params_m={n / 1e6:.4f}")
    print(f"flops={flops.total:.0f}")
    print(f"flops_g={flops.total / 1e9:.4f}")
    print(f"latency_vs_reference=median {report.median_ms:.1f} ms here, {REFERENCE_CPU_MS} ms reference CPU")
    if args.report:
        d = report.to_dict()
        d.update(params=n, flops=flops.total)
        atomic_write_text(args.report, json.dumps(d, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze

def _save_gray(arr: np.ndarray, path: Path) -> None:
    save_image(ImageBuffer(arr[:, :, None].astype(np.float32), "Y"), path)


def cmd_analyze(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    images = [load_image(p) for p in args.input]
    manifest: dict = {"mode": args.mode, "inputs": list(args.input), "files": []}
    ext = args.format

    if args.mode == "spectra":
        for i, img in enumerate(images):
            space = args.space.upper()
            if img.space == "Y":
                space = "Y"
            for name, plane, spec in plane_spectra(img, space):
                for kind, arr in (("plane", plane), ("spectrum", spec)):
                    path = out / f"in{i}_{name}_{kind}.{ext}"
                    _save_gray(arr, path)
                    manifest["files"].append({"input": i, "plane": name, "kind": kind, "path": path.name})
    elif args.mode == "swap":
        if len(images) != 2:
            raise UsageError("swap mode needs exactly two --input images")
        a, b = images
        if a.data.shape != b.data.shape:
            _err(f"swap needs equal dims, got {a.data.shape[:2]} and {b.data.shape[:2]}")
            return EXIT_DATA
        ab, ba = swap_images(a, b)
        for name, img in (("amp0_phase1", ab), ("amp1_phase0", ba)):
            path = out / f"{name}.{ext}"
            save_image(img, path)
            manifest["files"].append({"kind": name, "path": path.name})
        manifest["edge_correlation"] = swap_report(a, b)
        for name, r in manifest["edge_correlation"].items():
            print(f"{name}: corr_phase_donor={r['corr_phase_donor']:.4f} corr_amp_donor={r['corr_amp_donor']:.4f}")
    else:
        params, cfg = _load_model(args.model)
        for i, img in enumerate(images):
            feats: dict = {}
            enhance_tensor(params, cfg, img.to_tensor(next(iter(params.values())).dtype), capture=feats)
            for name in FEATURES:
                path = out / f"in{i}_{name}_spectrum.{ext}"
                _save_gray(feature_spectrum(feats[name].data), path)
                manifest["files"].append({"input": i, "feature": name, "path": path.name})
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(manifest['files'])} image file(s) and manifest.json to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect

def cmd_inspect(args) -> int:
    params, cfg = _load_model(args.model)
    h, w = args.size
    print("config:")
    for k, v in cfg.to_dict().items():
        print(f"  {k} = {v}")
    print("tensors:")
    width = max(len(k) for k in params)
    for name in sorted(params):
        t = params[name]
        print(f"  {name:<{width}}  {'x'.join(map(str, t.shape)):>12}  {t.size}")
    total = count_params(params)
    print(f"total params: {total}")
    rep = count_flops(cfg, h, w)
    print(f"flops at {h}x{w}:")
    fw = max(len(k) for k in rep.layers)
    for name, f in rep.table():
        print(f"  {name:<{fw}}  {f:>14.0f}")
    print(f"total flops: {rep.total:.0f} ({rep.total / 1e9:.4f} G)")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ylie", description="Lightweight low-light image enhancement in YUV space.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("enhance", help="enhance an image or a directory of images")
    e.add_argument("--model", required=True, help="checkpoint path")
    e.add_argument("--input", required=True, help="image file or directory")
    e.add_argument("--output", required=True, help="output file or directory")
    e.add_argument("--threads", type=int, help=f"worker/BLAS threads (default ${THREADS_ENV} or 1)")
    e.set_defaults(func=cmd_enhance)

    t = sub.add_parser("train", help="train on a low/ + high/ dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint to write")
    t.add_argument("--epochs", type=int, default=1, help="total epochs; --resume continues up to this count")
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--crop", type=int, default=256)
    t.add_argument("--batch", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--w-smooth", type=float, default=1.0)
    t.add_argument("--w-psnr", type=float, default=0.1)
    t.add_argument("--schedule", choices=("cosine", "constant"), default="cosine")
    t.add_argument("--loss-space", choices=("rgb", "yuv"), default="rgb")
    t.add_argument("--checkpoint-every", type=int, default=0, help="epochs between checkpoints (default: end only)")
    t.add_argument("--history", help="loss history CSV (default: <out>.history.csv)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--threads", type=int)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="time the forward pass")
    b.add_argument("--model", help="checkpoint (default: freshly initialized default model)")
    b.add_argument("--size", type=_size, default=(256, 256))
    b.add_argument("--threads", type=int)
    b.add_argument("--runs", type=int, default=20)
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--report", help="also write the report as JSON here")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("analyze", help="spectrum images, amplitude/phase swaps, feature spectra")
    a.add_argument("--mode", choices=("spectra", "swap", "feature-spectra"), required=True)
    a.add_argument("--input", action="append", required=True, help="input image (repeatable)")
    a.add_argument("--output", required=True, help="output directory")
    a.add_argument("--space", choices=("rgb", "yuv"), default="rgb", help="planes for spectra mode")
    a.add_argument("--model", help="checkpoint for feature-spectra mode")
    a.add_argument("--format", choices=("png", "ppm"), default="png")
    a.set_defaults(func=cmd_analyze)

    i = sub.add_parser("inspect", help="config, tensors, parameter and FLOPs tables")
    i.add_argument("--model", help="checkpoint (default: freshly initialized default model)")
    i.add_argument("--size", type=_size, default=(256, 256))
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except NumericFailure as exc:
        _err(str(exc))
        return EXIT_NUMERIC
    except (CheckpointError, ImageFormatError, FileNotFoundError, NotADirectoryError, ValueError) as exc:
        _err(str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
