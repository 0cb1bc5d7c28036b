"""Command-line entry point: ``filterdeblur {degrade,train,restore,blend,eval}``."""

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL.PngImagePlugin import PngInfo

from . import __version__
from .bankfile import BankFormatError, load_bank, save_bank
from .blending import BlendConfig, blend, report_lines
from .imaging import (
    NoiseSpec,
    degrade,
    load_color,
    load_image,
    parse_kernel,
    psnr,
    rgb_to_ycbcr,
    ssim,
    to_uint8,
    ycbcr_to_rgb,
)
from .inference import restore
from .learning import TrainConfig, train
from .sharpness import QConfig, sharpness_report
from .structure import ANGLE_BINS, COHERENCE_BINS, STRENGTH_BINS, QuantConfig

log = logging.getLogger("filterdeblur")

IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}
CSV_HEADER = ["name", "psnr", "ssim", "q_orig", "q_degr", "q_rest", "v", "j", "well_behaved"]

DEFAULTS = {
    "kernel": "gaussian:15:2.10",
    "sigma": 0.0,
    "seed": 0,
    "patch_size": 21,
    "stride": None,
    "strength_thresholds": [0.01, 0.06],
    "coherence_thresholds": [0.25, 0.5],
    "rcond": 1e-8,
    "augment": True,
    "eta": 1e-4,
    "epsilon_w": 1e-3,
    "max_rounds_cap": 1000,
    "q_patch_size": 8,
    "tau": 0.10,
    "q_scale": 64.0,
}


class CliError(Exception):
    pass


def n_workers():
    cap = os.environ.get("DEBLUR_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            raise CliError(f"DEBLUR_THREADS must be an integer, got {cap!r}") from None
    return n


def resolve(args, name):
    """Flag value, else config-file value, else built-in default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    return args.config_values.get(name, DEFAULTS.get(name))


def load_config(path, command):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    values = {k.replace("-", "_"): v for k, v in raw.items() if not isinstance(v, dict)}
    values.update({k.replace("-", "_"): v for k, v in raw.get(command, {}).items()})
    return values


def list_images(paths):
    """Expand files and flat directories into a sorted list of image files."""
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES))
        else:
            out.append(p)
    return out


def pair_list(text):
    parts = [float(x) for x in str(text).split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected two comma-separated numbers")
    return parts


class Manifest:
    def __init__(self, args, command):
        self.data = {
            "command": command,
            "argv": sys.argv[1:],
            "inputs": [],
            "outputs": [],
            "config": {},
            "version": __version__,
            "timings": {},
        }
        self.start = time.perf_counter()

    def write(self, path):
        self.data["timings"]["total_s"] = round(time.perf_counter() - self.start, 6)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return path


def save_png(image, path, manifest_path):
    """8-bit PNG carrying a text chunk that names the producing manifest."""
    info = PngInfo()
    info.add_text("manifest", str(manifest_path))
    PILImage.fromarray(to_uint8(image)).save(path, format="PNG", pnginfo=info)


def read_luma_or_color(path):
    arr = load_color(path)
    if arr.ndim == 3:
        return arr, rgb_to_ycbcr(arr)
    return arr, None


def _luma(arr, ycc):
    return np.clip(ycc[..., 0], 0, 1) if ycc is not None else arr


def run_pool(fn, items):
    """Apply ``fn`` to items in a thread pool; yields ``(item, result, error)`` in order."""
    with ThreadPoolExecutor(n_workers()) as pool:
        futures = [pool.submit(fn, item) for item in items]
        for item, fut in zip(items, futures):
            try:
                yield item, fut.result(), None
            except (ValueError, OSError, BankFormatError) as exc:
                yield item, None, exc


def cmd_degrade(args):
    kernel = parse_kernel(resolve(args, "kernel"))
    sigma, seed = float(resolve(args, "sigma")), int(resolve(args, "seed"))
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(args, "degrade")
    manifest.data["config"] = {"kernel": kernel.tag, "sigma": sigma, "seed": seed}
    manifest_path = out_dir / "manifest.json"
    inputs = list_images(args.inputs)
    if not inputs:
        raise CliError("no input images")

    def work(item):
        index, path = item
        # per-file seed keeps results independent of worker scheduling
        return degrade(load_image(path), kernel, NoiseSpec(sigma, seed + index))

    failures = 0
    for (_, path), result, err in run_pool(work, list(enumerate(inputs))):
        manifest.data["inputs"].append(str(path))
        if err is not None:
            print(f"error: {path}: {err}", file=sys.stderr)
            failures += 1
            continue
        target = out_dir / f"{path.stem}.png"
        save_png(result, target, manifest_path)
        manifest.data["outputs"].append(str(target))
    manifest.write(manifest_path)
    return 1 if failures else 0


def _histogram_lines(counts):
    lines = ["bucket population (rows: angle bin; columns: strength.coherence)"]
    header = "angle " + " ".join(
        f"{s}.{c:<9}" for s in range(STRENGTH_BINS) for c in range(COHERENCE_BINS)
    )
    lines.append(header)
    grid = np.asarray(counts).reshape(ANGLE_BINS, STRENGTH_BINS * COHERENCE_BINS)
    for a, row in enumerate(grid):
        lines.append(f"{a:>5} " + " ".join(f"{int(v):<11}" for v in row))
    lines.append(f"non-empty buckets: {int(np.count_nonzero(counts))}/{len(counts)}")
    return lines


def cmd_train(args):
    quant = QuantConfig(
        tuple(resolve(args, "strength_thresholds")), tuple(resolve(args, "coherence_thresholds"))
    )
    augment = resolve(args, "augment")
    config = TrainConfig(
        patch_size=int(resolve(args, "patch_size")),
        stride=resolve(args, "stride"),
        kernel=resolve(args, "kernel"),
        quant=quant,
        rcond=float(resolve(args, "rcond")),
        augment=bool(augment),
    )
    corpus = list_images(args.corpus)
    if not corpus:
        raise CliError("training corpus is empty")
    manifest = Manifest(args, "train")
    t0 = time.perf_counter()
    bank = train([str(p) for p in corpus], config, n_jobs=n_workers())
    manifest.data["timings"]["train_s"] = round(time.perf_counter() - t0, 6)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_bank(bank, out)
    manifest.data["inputs"] = [str(p) for p in corpus]
    manifest.data["outputs"] = [str(out)]
    manifest.data["config"] = {
        "patch_size": config.patch_size,
        "stride": config.stride_for(len(corpus)),
        "kernel": bank.kernel_tag,
        "strength_thresholds": list(quant.strength_thresholds),
        "coherence_thresholds": list(quant.coherence_thresholds),
        "rcond": config.rcond,
        "augment": config.augment,
    }
    manifest.write(str(out) + ".manifest.json")
    print("\n".join(_histogram_lines(bank.counts)))
    return 0


def restore_color(arr, ycc, bank):
    y = restore(_luma(arr, ycc), bank)
    if ycc is None:
        return y
    out = ycc.copy()
    out[..., 0] = y
    return ycbcr_to_rgb(out)


def cmd_restore(args):
    try:
        banks = [(Path(p), load_bank(p)) for p in args.bank]
    except (OSError, BankFormatError) as exc:
        raise CliError(f"cannot load filter bank: {exc}") from None
    inputs = list_images(args.inputs)
    if not inputs:
        raise CliError("no input images")
    out_dir = Path(args.output)
    manifest = Manifest(args, "restore")
    manifest.data["config"] = {
        "banks": [str(p) for p, _ in banks],
        "patch_sizes": [b.patch_size for _, b in banks],
        "kernels": [b.kernel_tag for _, b in banks],
        "color": bool(args.color),
    }
    manifest_path = out_dir / "manifest.json"
    jobs = [(path, bpath, bank) for path in inputs for bpath, bank in banks]

    def work(job):
        path, _, bank = job
        arr, ycc = read_luma_or_color(path)
        if args.color:
            return restore_color(arr, ycc, bank)
        return restore(_luma(arr, ycc), bank)

    failures = 0
    for (path, bpath, _), result, err in run_pool(work, jobs):
        if err is not None:
            print(f"error: {path} with {bpath}: {err}", file=sys.stderr)
            failures += 1
            continue
        target_dir = out_dir if len(banks) == 1 else out_dir / bpath.stem
        target_dir.mkdir(parents=True, exist_ok=True)
        target = target_dir / f"{path.stem}.png"
        save_png(result, target, manifest_path)
        manifest.data["outputs"].append(str(target))
    manifest.data["inputs"] = [str(p) for p in inputs]
    manifest.write(manifest_path)
    return 1 if failures else 0


def _qconfig(args):
    return QConfig(int(resolve(args, "q_patch_size")), float(resolve(args, "tau")), float(resolve(args, "q_scale")))


def cmd_blend(args):
    paths = list_images(args.candidates)
    if len(paths) < 2:
        raise CliError("blending needs at least two candidate images")
    images = []
    for p in paths:
        arr, ycc = read_luma_or_color(p)
        images.append(_luma(arr, ycc))
    config = BlendConfig(
        float(resolve(args, "eta")), float(resolve(args, "epsilon_w")), int(resolve(args, "max_rounds_cap"))
    )
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    report_path = Path(args.report) if args.report else out.with_suffix(".report.txt")
    manifest_path = out.with_suffix(".manifest.json")
    manifest = Manifest(args, "blend")
    image, state = blend(images, config, _qconfig(args))
    save_png(image, out, manifest_path)
    lines = [f"manifest={manifest_path}"]
    lines += [f"candidate.{i}={p}" for i, p in enumerate(paths)]
    lines += report_lines(state)
    report_path.write_text("\n".join(lines) + "\n")
    manifest.data.update(
        inputs=[str(p) for p in paths],
        outputs=[str(out), str(report_path)],
        config={"eta": config.eta, "epsilon_w": config.epsilon_w, "max_rounds_cap": config.max_rounds_cap},
    )
    manifest.write(manifest_path)
    print("\n".join(lines))
    return 0


def _find(directory, stem):
    for suffix in sorted(IMAGE_SUFFIXES):
        p = Path(directory) / f"{stem}{suffix}"
        if p.exists():
            return p
    return None


def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def cmd_eval(args):
    originals = list_images([args.original])
    if not originals:
        raise CliError("no original images")
    qconfig = _qconfig(args)
    jobs = []
    failures = 0
    for path in originals:
        deg, rest = _find(args.degraded, path.stem), _find(args.restored, path.stem)
        if deg is None or rest is None:
            missing = "degraded" if deg is None else "restored"
            print(f"error: {path.name}: no {missing} counterpart", file=sys.stderr)
            failures += 1
            continue
        jobs.append((path, deg, rest))

    def work(job):
        o, g, r = (np.clip(_luma(*read_luma_or_color(p)), 0, 1) for p in job)
        rep = sharpness_report(o, g, r, qconfig)
        return [job[0].stem, psnr(o, r), ssim(o, r), rep.q_original, rep.q_degraded,
                rep.q_restored, rep.v, rep.j, rep.well_behaved]

    rows = []
    for job, row, err in run_pool(work, jobs):
        if err is not None:
            print(f"error: {job[0].name}: {err}", file=sys.stderr)
            failures += 1
            continue
        rows.append(row)

    manifest_path = Path(args.csv).with_suffix(".manifest.json") if args.csv else None
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in rows:
                writer.writerow([_fmt(x) for x in row])
        manifest = Manifest(args, "eval")
        manifest.data.update(
            inputs=[args.original, args.degraded, args.restored],
            outputs=[args.csv],
            config={"q_patch_size": qconfig.patch_size, "tau": qconfig.tau, "q_scale": qconfig.scale},
        )
        manifest.write(manifest_path)

    table = [CSV_HEADER] + [[_fmt(x) for x in row] for row in rows]
    if rows:
        means = ["mean"]
        for col in range(1, 8):
            means.append(_fmt(float(np.mean([row[col] for row in rows]))))
        means.append(_fmt(sum(bool(row[8]) for row in rows) == len(rows)))
        table.append(means)
    widths = [max(len(r[i]) for r in table) for i in range(len(CSV_HEADER))]
    for r in table:
        print("  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))))
    return 1 if failures else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="filterdeblur", description="Learned-filter deblurring, blending and evaluation."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON file of option defaults (flags take precedence)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="blur (and optionally add noise to) images")
    p.add_argument("inputs", nargs="+", help="image files or flat directories")
    p.add_argument("--kernel", help="gaussian:K:SIGMA, box:K or identity (default gaussian:15:2.10)")
    p.add_argument("--sigma", type=float, help="additive Gaussian noise std (default 0)")
    p.add_argument("--seed", type=int, help="noise seed (default 0)")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="learn a filter bank from sharp images")
    p.add_argument("corpus", nargs="+", help="image files or flat directories")
    p.add_argument("--kernel", help="training degradation (default gaussian:15:2.10)")
    p.add_argument("--patch-size", type=int, help="odd patch side (default 21)")
    p.add_argument("--stride", type=int, help="training patch stride (default 1, or 2 above 100 images)")
    p.add_argument("--strength-thresholds", type=pair_list, help="two cut points on sqrt(lambda1)")
    p.add_argument("--coherence-thresholds", type=pair_list, help="two cut points on coherence")
    p.add_argument("--rcond", type=float, help="relative singular value cutoff (default 1e-8)")
    p.add_argument("--no-augment", dest="augment", action="store_const", const=False)
    p.add_argument("-o", "--output", required=True, help="output .dfbk path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("restore", help="restore blurred images with one or more banks")
    p.add_argument("inputs", nargs="+", help="image files or flat directories")
    p.add_argument("--bank", action="append", required=True, help="filter bank file (repeatable)")
    p.add_argument("--color", action="store_true", help="restore luma and keep chroma for RGB inputs")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("blend", help="fuse candidate restorations by Q-guided weighting")
    p.add_argument("candidates", nargs="+", help="candidate images (>= 2)")
    p.add_argument("--eta", type=float, help="minimum per-round Q gain (default 1e-4)")
    p.add_argument("--epsilon-w", type=float, help="stop once the lowest weight falls below this")
    p.add_argument("--max-rounds-cap", type=int)
    p.add_argument("--report", help="report path (default OUTPUT with .report.txt)")
    p.add_argument("-o", "--output", required=True, help="blended PNG path")
    _q_options(p)
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("eval", help="PSNR, SSIM, Q, V and J per image")
    p.add_argument("original")
    p.add_argument("degraded")
    p.add_argument("restored")
    p.add_argument("--csv", help="write per-image rows to this CSV file")
    _q_options(p)
    p.set_defaults(func=cmd_eval)
    return parser


def _q_options(p):
    p.add_argument("--q-patch-size", type=int, help="Q tile size (default 8)")
    p.add_argument("--tau", type=float, help="Q anisotropy threshold (default 0.10)")
    p.add_argument("--q-scale", type=float, help="Q multiplier (default 64)")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s"
    )
    try:
        args.config_values = load_config(args.config, args.command)
        return args.func(args)
    except (CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
