"""Binary stack and raster formats, key=value reports, JSON scene files and PNG export.

SUNIF1 stack layout (little-endian)::

    6s   magic  b"SUNIF1"
    3I   width, height, frames
    2d   axial start, axial step (um)
    4s   encoding  b"f32\\0"
    ...  float32 payload, frames x height x width, row-major

SUNDM1 raster layout: magic ``b"SUNDM1"``, ``2I`` width and height, then
float32 row-major values with NaN marking invalid pixels.
"""

from __future__ import annotations

import io as _io
import json
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .forward import ImageStack
from .scene import IndirectKernel, Scene, make_test_scene

STACK_MAGIC = b"SUNIF1"
RASTER_MAGIC = b"SUNDM1"
ENCODING_F32 = b"f32\0"
_STACK_HEADER = struct.Struct("<6s3I2d4s")
_RASTER_HEADER = struct.Struct("<6s2I")
_U32_MAX = 2**32 - 1


class FormatError(ValueError):
    """A file is truncated, has the wrong magic, or is otherwise malformed."""


def atomic_write(path, data: bytes):
    """Write ``data`` to a sibling temp file and rename it over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check_dims(*dims):
    for d in dims:
        if not 0 < d <= _U32_MAX:
            raise ValueError(f"dimension {d} does not fit the format")


def encode_stack(stack: ImageStack) -> bytes:
    m, h, w = np.shape(stack.frames)
    _check_dims(w, h, m)
    step = stack.step if m > 1 else 0.0
    if m > 1 and not np.allclose(np.diff(stack.positions), step, rtol=1e-9, atol=0):
        raise ValueError("SUNIF1 needs uniformly spaced axial positions")
    header = _STACK_HEADER.pack(STACK_MAGIC, w, h, m, float(stack.positions[0]), step, ENCODING_F32)
    payload = np.ascontiguousarray(stack.frames, dtype="<f4").tobytes()
    return header + payload


def decode_stack(data: bytes) -> ImageStack:
    if len(data) < _STACK_HEADER.size:
        raise FormatError("stack file shorter than its header")
    magic, w, h, m, start, step, enc = _STACK_HEADER.unpack_from(data)
    if magic != STACK_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {STACK_MAGIC!r}")
    if enc != ENCODING_F32:
        raise FormatError(f"unsupported payload encoding {enc!r}")
    if w == 0 or h == 0 or m == 0:
        raise FormatError("stack header has a zero dimension")
    expected = w * h * m * 4
    got = len(data) - _STACK_HEADER.size
    if got != expected:
        raise FormatError(f"payload is {got} bytes, header implies {expected}")
    if not (math.isfinite(start) and math.isfinite(step)) or (m > 1 and step <= 0):
        raise FormatError("invalid axial start/step in header")
    frames = np.frombuffer(data, dtype="<f4", offset=_STACK_HEADER.size).reshape(m, h, w)
    return ImageStack(frames.astype(np.float32), start + step * np.arange(m))


def write_stack(path, stack: ImageStack):
    atomic_write(path, encode_stack(stack))


def read_stack(path) -> ImageStack:
    return decode_stack(Path(path).read_bytes())


def encode_raster(values) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("raster must be 2-D")
    h, w = values.shape
    _check_dims(w, h)
    return _RASTER_HEADER.pack(RASTER_MAGIC, w, h) + np.ascontiguousarray(values, dtype="<f4").tobytes()


def decode_raster(data: bytes) -> np.ndarray:
    if len(data) < _RASTER_HEADER.size:
        raise FormatError("raster file shorter than its header")
    magic, w, h = _RASTER_HEADER.unpack_from(data)
    if magic != RASTER_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {RASTER_MAGIC!r}")
    expected = w * h * 4
    got = len(data) - _RASTER_HEADER.size
    if got != expected:
        raise FormatError(f"payload is {got} bytes, header implies {expected}")
    return np.frombuffer(data, dtype="<f4", offset=_RASTER_HEADER.size).reshape(h, w).astype(np.float32)


def write_raster(path, values):
    atomic_write(path, encode_raster(values))


def read_raster(path) -> np.ndarray:
    return decode_raster(Path(path).read_bytes())


def _format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_report(items) -> str:
    """``key=value`` lines in the given order."""
    lines = []
    for key, value in dict(items).items():
        if "=" in key or "\n" in key:
            raise ValueError(f"bad report key {key!r}")
        lines.append(f"{key}={_format_value(value)}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"report line without '=': {line!r}")
        out[key] = value
    return out


def write_report(path, items):
    atomic_write(path, format_report(items).encode())


def check_keys(mapping, allowed, where):
    if not isinstance(mapping, dict):
        raise ValueError(f"{where} must be a JSON object")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ValueError(f"unknown keys in {where}: {unknown}")


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from exc


SCENE_KEYS = ("kind", "width", "height", "pixel_pitch", "seed", "speckle", "params", "kernel")
KERNEL_KEYS = ("offsets", "weights", "extra_path")


def scene_from_config(cfg: dict, seed=0) -> Scene:
    """Build a scene from a parsed scene file.

    Schema (unknown keys are errors)::

        {
          "kind": "step",              # flat | step | ramp | two_layer_diffuser | checker_reflectance
          "width": 64, "height": 64,   # pixels
          "pixel_pitch": 3.7,          # um
          "seed": 7,                   # optional, overrides the command-line seed
          "speckle": true,
          "params": {"depth": 400, "step_height": 50},
          "kernel": {"offsets": [[0, 20]], "weights": [0.3], "extra_path": [0.0]}
        }
    """
    check_keys(cfg, SCENE_KEYS, "scene")
    if "kind" not in cfg:
        raise ValueError("scene needs a 'kind'")
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ValueError("scene params must be a JSON object")
    scene = make_test_scene(
        cfg["kind"], width=int(cfg.get("width", 64)), height=int(cfg.get("height", 64)),
        pixel_pitch=float(cfg.get("pixel_pitch", 3.7)), seed=int(cfg.get("seed", seed)),
        speckle=bool(cfg.get("speckle", True)), **params)
    kernel = cfg.get("kernel")
    if kernel is not None:
        check_keys(kernel, KERNEL_KEYS, "scene kernel")
        n = len(kernel.get("weights", []))
        scene = scene.with_kernel(IndirectKernel(kernel.get("offsets", []), kernel.get("weights", []),
                                                 kernel.get("extra_path", [0.0] * n)))
    return scene


def load_scene(path, seed=0) -> Scene:
    return scene_from_config(load_json(path), seed)


def load_image(path) -> np.ndarray:
    """2-D float image from a SUNDM1 raster, a ``.npy`` array or any Pillow-readable file.

    Colour images are reduced to luminance. Raises :class:`FormatError` when
    the file cannot be decoded as a finite 2-D image.
    """
    path = Path(path)
    data = path.read_bytes()
    if data[:6] == RASTER_MAGIC:
        img = decode_raster(data).astype(float)
    elif path.suffix == ".npy":
        try:
            img = np.load(path, allow_pickle=False).astype(float)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    else:
        try:
            with Image.open(path) as im:
                im.load()
                if im.mode in ("RGB", "RGBA", "P", "LA", "CMYK", "YCbCr"):
                    im = im.convert("L")
                img = np.asarray(im, dtype=float)
        except (UnidentifiedImageError, OSError) as exc:
            raise FormatError(f"{path}: not a readable image ({exc})") from exc
    if img.ndim != 2 or img.size == 0:
        raise FormatError(f"{path}: expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise FormatError(f"{path}: image contains non-finite values")
    return img


def to_uint16(values, lo=None, hi=None) -> np.ndarray:
    """Linear map of ``[lo, hi]`` onto 0..65535; NaN becomes 0."""
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    if lo is None:
        lo = float(values[finite].min()) if finite.any() else 0.0
    if hi is None:
        hi = float(values[finite].max()) if finite.any() else 1.0
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((np.where(finite, values, lo) - lo) / span, 0.0, 1.0)
    return np.round(scaled * 65535).astype(np.uint16)


def save_png16(path, values, lo=None, hi=None):
    """16-bit grayscale preview PNG."""
    buf = _png_bytes(Image.fromarray(to_uint16(values, lo, hi)))
    atomic_write(path, buf)


# Perceptually ordered dark-blue -> teal -> yellow ramp.
_RAMP = np.array([
    [0.267, 0.005, 0.329],
    [0.230, 0.322, 0.546],
    [0.128, 0.567, 0.551],
    [0.369, 0.789, 0.383],
    [0.993, 0.906, 0.144],
])


def colorize(values) -> np.ndarray:
    """RGB uint8 rendering of a raster; NaN pixels are black."""
    values = np.asarray(values, dtype=float)
    t = to_uint16(values) / 65535.0
    x = np.linspace(0.0, 1.0, len(_RAMP))
    rgb = np.stack([np.interp(t, x, _RAMP[:, k]) for k in range(3)], axis=-1)
    rgb[~np.isfinite(values)] = 0.0
    return np.round(rgb * 255).astype(np.uint8)


def save_preview(path, values):
    atomic_write(path, _png_bytes(Image.fromarray(colorize(values), mode="RGB")))


def _png_bytes(image) -> bytes:
    buf = _io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()
