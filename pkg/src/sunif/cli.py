"""Command-line entry point: ``sunif simulate|reconstruct|peaks|coherence|track``.

Exit codes: 0 success, 2 configuration or usage error, 3 data or file-format
error, 4 numerical failure such as a non-converging fit.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .coherence import FitError, fit_temporal_coherence, spatial_coherence_length
from .forward import MODES, ScanConfig, simulate_stack
from .optics import IlluminationModel, coherence_lengths
from .reconstruct import (DEFAULT_BLUR, DEFAULT_PEAK_THRESHOLD, default_window, direct_only_image,
                          extract_depth, extract_peaks, reconstruct_transient)
from .tracking import (DRIFT_RATE, EXPOSURE, MIN_INCREMENT, StageModel, TrackerState, TrackingLost,
                       run_tracking)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULT_FRAMES = 1000
DEFAULT_STEP = 5.0
DEFAULT_WAVELENGTH = 0.55
DEFAULT_BANDWIDTH = 0.1


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _positive(kind):
    def check(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return check


def _nonneg(text):
    value = float(text)
    if not (math.isfinite(value) and value >= 0):
        raise argparse.ArgumentTypeError(f"must be finite and >= 0, got {text}")
    return value


def _every(text):
    """``every=N`` or plain ``N``."""
    key, sep, value = text.partition("=")
    if sep and key != "every":
        raise argparse.ArgumentTypeError(f"expected every=N, got {text}")
    n = int(value if sep else key)
    if n < 1:
        raise argparse.ArgumentTypeError("every must be >= 1")
    return n


def _common(p, threads=True):
    p.add_argument("--config", type=Path, help="JSON file whose keys set option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    if threads:
        p.add_argument("--threads", type=_positive(int), default=1,
                       help="worker threads; affects speed only")


def _illumination(p):
    p.add_argument("--wavelength", type=_positive(float), default=DEFAULT_WAVELENGTH, help="um")
    p.add_argument("--bandwidth", type=_positive(float), default=DEFAULT_BANDWIDTH,
                   help="spectral std, rad/um")
    p.add_argument("--angular-bandwidth", type=_nonneg, default=0.0, help="rad")


def _pipeline(p):
    p.add_argument("--stack", type=Path, required=True)
    p.add_argument("--window", type=_positive(int), help="moving-average frames (default 4 L_T)")
    p.add_argument("--blur", type=_positive(float), default=DEFAULT_BLUR, help="pixels")
    p.add_argument("--bandwidth", type=_positive(float), default=DEFAULT_BANDWIDTH,
                   help="spectral std used for the default window, rad/um")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sunif", description="Sunlight interferometry simulator and tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render an axial scan of a scene")
    _common(p)
    p.add_argument("--scene", type=Path, required=True, help="JSON scene file")
    p.add_argument("--out", type=Path, default=Path("stack.sif"))
    p.add_argument("--truth", type=Path, help="ground-truth depth raster (default <out>.truth.sdm)")
    _illumination(p)
    p.add_argument("--start", type=float, help="first reference position, um (default near depth - 5 L_T)")
    p.add_argument("--step", type=_positive(float), default=DEFAULT_STEP, help="um")
    p.add_argument("--frames", type=_positive(int), default=DEFAULT_FRAMES)
    p.add_argument("--reference-amplitude", type=_nonneg, default=1.0)
    p.add_argument("--ambient", type=_nonneg, default=0.0)
    p.add_argument("--shot-noise", type=_nonneg, default=0.0)
    p.add_argument("--vibration", type=_nonneg, default=0.0, help="axial jitter std, um")
    p.add_argument("--mode", choices=MODES, default="envelope")

    p = sub.add_parser("reconstruct", help="depth map and transient from a stack")
    _common(p)
    _pipeline(p)
    p.add_argument("--min-conf", type=_nonneg, default=0.0)
    p.add_argument("--min-contrast", type=_nonneg, default=0.0)
    p.add_argument("--refine", action="store_true", help="parabolic sub-bin depth")
    p.add_argument("--export-transient", type=_every, metavar="every=N",
                   help="write every N-th transient slice as 16-bit PNG")
    p.add_argument("--preview", action="store_true", help="write a colorized depth PNG")

    p = sub.add_parser("peaks", help="multi-surface peak detection")
    _common(p)
    _pipeline(p)
    p.add_argument("--threshold", type=_positive(float), default=DEFAULT_PEAK_THRESHOLD)
    p.add_argument("--min-separation", type=_positive(float), default=20.0, help="um")

    p = sub.add_parser("coherence", help="measure temporal or spatial coherence length")
    _common(p, threads=False)
    p.add_argument("mode", choices=("temporal", "spatial"))
    p.add_argument("--stack", type=Path, help="temporal: mirror-scan stack")
    p.add_argument("--window", type=_positive(int))
    p.add_argument("--blur", type=_positive(float), default=DEFAULT_BLUR)
    p.add_argument("--bandwidth", type=_positive(float), default=DEFAULT_BANDWIDTH)
    p.add_argument("--image", type=Path, help="spatial: image of the Sun")
    p.add_argument("--focal-length", type=_positive(float), help="spatial: lens focal length, um")
    p.add_argument("--pixel-pitch", type=_positive(float), default=3.7, help="spatial: um")
    p.add_argument("--wavelength", type=_positive(float), default=DEFAULT_WAVELENGTH, help="um")

    p = sub.add_parser("track", help="closed-loop Sun-tracking simulation")
    _common(p, threads=False)
    p.add_argument("--duration", type=_nonneg, default=600.0, help="s")
    p.add_argument("--gain", type=_positive(float), default=0.5)
    p.add_argument("--min-increment", type=_positive(float), default=MIN_INCREMENT, help="deg")
    p.add_argument("--drift-rate", type=_nonneg, default=DRIFT_RATE, help="deg/s")
    p.add_argument("--drift-direction", type=float, default=0.0, help="deg from azimuth")
    p.add_argument("--recenter-every", type=_positive(int), default=100, help="frames")
    p.add_argument("--exposure", type=_positive(float), default=EXPOSURE, help="s")
    p.add_argument("--sensitivity", type=_positive(float), default=100.0, help="px/deg")
    p.add_argument("--fov", type=_positive(float), default=200.0, help="half-width, px")
    p.add_argument("--noise-px", type=_nonneg, default=0.0)
    p.add_argument("--initial-error", type=float, nargs=2, default=(0.0, 0.0), metavar=("AZ", "ALT"),
                   help="deg")
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        return action.choices[name]
    raise KeyError(name)


def parse_args(argv):
    """Parse ``argv``; a ``--config`` JSON file supplies defaults that flags override."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if known.config is None or command is None:
        return parser.parse_args(argv)
    try:
        cfg = sio.load_json(known.config)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    sub = _subparser(parser, command)
    dests = {a.dest for a in sub._actions} - {"help", "config", "mode"}
    try:
        sio.check_keys(cfg, dests, f"config {known.config}")
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    converted = {}
    for action in sub._actions:
        if action.dest not in cfg:
            continue
        value = cfg[action.dest]
        if action.type is not None and not isinstance(value, (list, bool)):
            try:
                value = action.type(str(value))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CliError(EXIT_CONFIG, f"config key {action.dest}: {exc}") from exc
        converted[action.dest] = value
        action.required = False
    sub.set_defaults(**converted)
    return parser.parse_args(argv)


def _out(args, name):
    return args.out_dir / name


def _read_stack(path):
    try:
        return sio.read_stack(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_CONFIG, f"stack not found: {path}") from exc
    except (OSError, sio.FormatError) as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}") from exc


def _window(args, stack):
    if args.window is not None:
        window = args.window
    else:
        window = default_window(1.0 / args.bandwidth, stack.step) if stack.num_frames > 1 else 2
    if not 2 <= window <= stack.num_frames:
        raise CliError(EXIT_CONFIG, f"window {window} must lie in [2, {stack.num_frames}]")
    return window


def cmd_simulate(args):
    try:
        scene = sio.load_scene(args.scene, args.seed)
    except FileNotFoundError as exc:
        raise CliError(EXIT_CONFIG, f"scene file not found: {args.scene}") from exc
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"bad scene {args.scene}: {exc}") from exc
    try:
        illum = IlluminationModel.from_wavelength(args.wavelength, args.bandwidth, args.angular_bandwidth)
        lengths = coherence_lengths(illum)
        near, _ = scene.depth_range()
        start = near - 5 * lengths.temporal if args.start is None else args.start
        cfg = ScanConfig(start, args.step, args.frames, args.reference_amplitude, args.ambient,
                         args.shot_noise, args.vibration, args.seed)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc

    stack = simulate_stack(scene, illum, cfg, mode=args.mode, workers=args.threads)
    out = args.out if args.out.is_absolute() else args.out_dir / args.out
    truth = args.truth or out.with_name(out.name + ".truth.sdm")
    truth = truth if truth.is_absolute() else args.out_dir / truth
    stack_bytes = sio.encode_stack(stack)
    truth_bytes = sio.encode_raster(scene.layers[0].depth)
    out.parent.mkdir(parents=True, exist_ok=True)
    truth.parent.mkdir(parents=True, exist_ok=True)
    sio.atomic_write(out, stack_bytes)
    sio.atomic_write(truth, truth_bytes)
    print(sio.format_report({
        "stack": out, "truth": truth, "width": scene.width, "height": scene.height,
        "frames": cfg.frames, "start": cfg.start, "step": cfg.step,
        "temporal_coherence_length": lengths.temporal,
        "spatial_coherence_length": lengths.spatial,
    }), end="")


def cmd_reconstruct(args):
    stack = _read_stack(args.stack)
    window = _window(args, stack)
    volume = reconstruct_transient(stack, window, args.blur, workers=args.threads)
    dm = extract_depth(volume, args.min_conf, args.refine, args.min_contrast)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    sio.write_raster(_out(args, "depth.sdm"), dm.raster())
    sio.write_raster(_out(args, "confidence.sdm"), dm.confidence)
    sio.write_raster(_out(args, "direct.sdm"), direct_only_image(volume, dm))
    slices = 0
    if args.export_transient:
        tdir = _out(args, "transient")
        tdir.mkdir(exist_ok=True)
        hi = float(volume.tau.max())
        for m in range(0, stack.num_frames, args.export_transient):
            sio.save_png16(tdir / f"slice_{m:05d}.png", volume.tau[m], 0.0, hi)
            slices += 1
    if args.preview:
        sio.save_preview(_out(args, "depth_preview.png"), dm.raster())
    report = {
        "frames": stack.num_frames, "width": stack.width, "height": stack.height,
        "window": window, "blur": args.blur, "valid_fraction": dm.valid_fraction,
        "depth_min": float(np.nanmin(dm.raster())) if dm.valid.any() else float("nan"),
        "depth_max": float(np.nanmax(dm.raster())) if dm.valid.any() else float("nan"),
        "transient_slices": slices,
    }
    sio.write_report(_out(args, "reconstruct.txt"), report)
    print(sio.format_report(report), end="")


def cmd_peaks(args):
    stack = _read_stack(args.stack)
    window = _window(args, stack)
    if not 0 < args.threshold < 1:
        raise CliError(EXIT_CONFIG, "threshold must lie in (0, 1)")
    volume = reconstruct_transient(stack, window, args.blur, workers=args.threads)
    peaks = extract_peaks(volume, args.threshold, args.min_separation)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    sio.write_raster(_out(args, "peak_count.sdm"), peaks.count.astype(np.float32))
    for k in range(peaks.depths.shape[2]):
        sio.write_raster(_out(args, f"peak_{k}.sdm"), peaks.depths[:, :, k])
    counts = np.bincount(peaks.count.ravel(), minlength=3)
    report = {
        "window": window, "threshold": args.threshold, "min_separation": args.min_separation,
        "max_peaks": int(peaks.count.max()),
        "fraction_one": float(counts[1] / peaks.count.size),
        "fraction_two": float(counts[2] / peaks.count.size),
    }
    two = peaks.count >= 2
    if two.any():
        report["median_separation"] = float(np.median(peaks.depths[two][:, 1] - peaks.depths[two][:, 0]))
    sio.write_report(_out(args, "peaks.txt"), report)
    print(sio.format_report(report), end="")


def cmd_coherence(args):
    if args.mode == "temporal":
        if args.stack is None:
            raise CliError(EXIT_CONFIG, "temporal mode needs --stack")
        stack = _read_stack(args.stack)
        window = _window(args, stack)
        volume = reconstruct_transient(stack, window, args.blur)
        transient = volume.tau.mean(axis=(1, 2))
        try:
            fit = fit_temporal_coherence(volume.positions, transient)
        except FitError as exc:
            raise CliError(EXIT_NUMERIC, f"Gaussian fit failed: {exc}") from exc
        except ValueError as exc:
            raise CliError(EXIT_NUMERIC, f"cannot fit transient: {exc}") from exc
        report = {
            "mode": "temporal", "fwhm": fit.fwhm, "sigma": fit.sigma, "center": fit.center,
            "amplitude": fit.amplitude, "offset": fit.offset,
            "residual_rms": fit.residual_rms, "iterations": fit.iterations,
        }
    else:
        if args.image is None or args.focal_length is None:
            raise CliError(EXIT_CONFIG, "spatial mode needs --image and --focal-length")
        try:
            image = sio.load_image(args.image)
        except FileNotFoundError as exc:
            raise CliError(EXIT_CONFIG, f"image not found: {args.image}") from exc
        except (OSError, sio.FormatError) as exc:
            raise CliError(EXIT_DATA, str(exc)) from exc
        try:
            sun = spatial_coherence_length(image, args.focal_length, args.pixel_pitch,
                                           2 * math.pi / args.wavelength)
        except ValueError as exc:
            raise CliError(EXIT_DATA, str(exc)) from exc
        report = {
            "mode": "spatial", "diameter_px": sun.diameter_px,
            "angular_extent_rad": sun.angular_extent,
            "angular_extent_deg": math.degrees(sun.angular_extent),
            "spatial_coherence_length": sun.spatial_length,
        }
    args.out_dir.mkdir(parents=True, exist_ok=True)
    sio.write_report(_out(args, f"coherence_{args.mode}.txt"), report)
    print(sio.format_report(report), end="")


def cmd_track(args):
    try:
        state = TrackerState(
            azimuth=StageModel(args.min_increment), altitude=StageModel(args.min_increment),
            sun=(-args.initial_error[0], -args.initial_error[1]),
            sensitivity=args.sensitivity * np.eye(2), gain=args.gain,
            fov_half_width=args.fov, noise_px=args.noise_px, drift_rate=args.drift_rate,
            drift_direction=args.drift_direction, seed=args.seed)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    lost_at = None
    try:
        trace = run_tracking(state, args.duration, args.recenter_every, args.exposure)
    except TrackingLost as exc:
        trace, lost_at = exc.trace, exc.time

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("t", "err_az", "err_alt", "cmd_az", "cmd_alt"))
    for row in trace.rows():
        writer.writerow([repr(v) for v in row])
    args.out_dir.mkdir(parents=True, exist_ok=True)
    sio.atomic_write(_out(args, "trace.csv"), buf.getvalue().encode())
    report = {
        "samples": len(trace.time), "max_error": trace.max_error,
        "steady_state_error": trace.steady_state_error,
        "lost": lost_at is not None, "lost_time": lost_at if lost_at is not None else "",
        "oscillating": trace.oscillating,
    }
    sio.write_report(_out(args, "track.txt"), report)
    print(sio.format_report(report), end="")


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "peaks": cmd_peaks,
    "coherence": cmd_coherence,
    "track": cmd_track,
}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    except CliError as exc:
        print(f"sunif: error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"sunif: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
