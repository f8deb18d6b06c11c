"""Scene description: layered surfaces with speckle microstructure.

Arrays are indexed ``[row, col]`` (height first).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .optics import spatial_coherence_from_length

SCENE_KINDS = ("flat", "step", "ramp", "two_layer_diffuser", "checker_reflectance")


@dataclass(frozen=True)
class SurfaceLayer:
    """One reflecting surface seen through every pixel.

    ``depth`` in um, ``amplitude`` is the field reflectance (>= 0),
    ``microphase`` the fixed speckle phase in [0, 2 pi), ``transparency``
    the fraction of field transmitted per traversal.
    """

    depth: np.ndarray
    amplitude: np.ndarray
    microphase: np.ndarray
    transparency: np.ndarray

    def __post_init__(self):
        shape = np.shape(self.depth)
        for name in ("depth", "amplitude", "microphase", "transparency"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape or arr.ndim != 2:
                raise ValueError(f"layer {name} must be a 2-D array of shape {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(self.depth)):
            raise ValueError("layer depth must be finite")
        if np.any(self.amplitude < 0) or not np.all(np.isfinite(self.amplitude)):
            raise ValueError("layer amplitude must be finite and >= 0")
        if np.any(self.microphase < 0) or np.any(self.microphase >= 2 * np.pi):
            raise ValueError("microphase must lie in [0, 2 pi)")
        if np.any(self.transparency < 0) or np.any(self.transparency > 1):
            raise ValueError("transparency must lie in [0, 1]")

    @property
    def shape(self):
        return self.depth.shape

    @classmethod
    def uniform(cls, shape, depth, amplitude=1.0, microphase=None, transparency=0.0):
        """Layer with scalar or array parameters broadcast to ``shape``."""
        full = lambda v: np.broadcast_to(np.asarray(v, dtype=float), shape).copy()
        phase = np.zeros(shape) if microphase is None else full(microphase)
        return cls(full(depth), full(amplitude), phase, full(transparency))


@dataclass(frozen=True)
class IndirectKernel:
    """Shift-invariant near-diagonal transport.

    Each entry couples pixel ``x`` to ``x + offset`` with weight ``w`` and an
    extra pathlength ``extra_path`` (um). The zero offset is reserved for the
    direct (diagonal) response and is rejected.
    """

    offsets: np.ndarray
    weights: np.ndarray
    extra_path: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=int).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        extra = np.asarray(self.extra_path, dtype=float).reshape(-1)
        if not (len(offsets) == len(weights) == len(extra)):
            raise ValueError("offsets, weights and extra_path must have equal length")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("kernel weights must be finite and >= 0")
        if not np.all(np.isfinite(extra)):
            raise ValueError("extra_path must be finite")
        if np.any(np.all(offsets == 0, axis=1)):
            raise ValueError("zero offset belongs to the diagonal response")
        for name, arr in (("offsets", offsets), ("weights", weights), ("extra_path", extra)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def radius(self) -> float:
        if len(self.offsets) == 0:
            return 0.0
        return float(np.max(np.hypot(self.offsets[:, 0], self.offsets[:, 1])))

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def ring(cls, distance, total_weight, extra_path=0.0):
        """Four entries at +/- ``distance`` pixels along each axis."""
        d = int(distance)
        offsets = [(d, 0), (-d, 0), (0, d), (0, -d)]
        return cls(offsets, [total_weight / 4.0] * 4, [extra_path] * 4)


@dataclass(frozen=True)
class Scene:
    layers: tuple
    pixel_pitch: float = 3.7
    kernel: IndirectKernel | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a scene needs at least one layer")
        shape = layers[0].shape
        if any(layer.shape != shape for layer in layers):
            raise ValueError("all layers must share the same dimensions")
        if not self.pixel_pitch > 0:
            raise ValueError("pixel_pitch must be positive")
        object.__setattr__(self, "layers", layers)

    @property
    def height(self) -> int:
        return self.layers[0].shape[0]

    @property
    def width(self) -> int:
        return self.layers[0].shape[1]

    @property
    def shape(self):
        return self.layers[0].shape

    def with_kernel(self, kernel):
        return replace(self, kernel=kernel)

    def without_layer(self, index):
        layers = list(self.layers)
        del layers[index]
        return replace(self, layers=tuple(layers))

    def effective_layers(self):
        """Per-layer ``(depth, complex amplitude)`` arrays after front-layer attenuation.

        Layer ``k`` is attenuated by the squared product of the transparencies
        of layers ``0..k-1`` (light crosses each of them twice).
        """
        through = np.ones(self.shape)
        out = []
        for layer in self.layers:
            amp = layer.amplitude * through**2 * np.exp(1j * layer.microphase)
            out.append((layer.depth, amp))
            through = through * layer.transparency
        return out

    def depth_range(self):
        lo = min(float(layer.depth.min()) for layer in self.layers)
        hi = max(float(layer.depth.max()) for layer in self.layers)
        return lo, hi


def _check_pixel(scene, pixel):
    row, col = pixel
    if not (0 <= row < scene.height and 0 <= col < scene.width):
        raise IndexError(f"pixel {pixel} outside {scene.height}x{scene.width} scene")
    return int(row), int(col)


def diagonal_response(scene: Scene, pixel):
    """Direct-only response at ``pixel`` as a list of ``(depth, amplitude)``.

    Layers whose effective amplitude is zero are omitted.
    """
    row, col = _check_pixel(scene, pixel)
    out = []
    for depth, amp in scene.effective_layers():
        a = complex(amp[row, col])
        if a != 0:
            out.append((float(depth[row, col]), a))
    return out


def kernel_coupling(scene: Scene, spatial_length):
    """Per-entry weight times spatial coherence, ``w * S(|offset| * pitch)``.

    Returns ``(couplings, masks)`` where ``masks[p]`` flags pixels whose
    partner ``x + offset`` lies inside the image.
    """
    kernel = scene.kernel
    if kernel is None or len(kernel.offsets) == 0:
        return np.zeros(0), np.zeros((0,) + scene.shape, dtype=bool)
    dist = np.hypot(kernel.offsets[:, 0], kernel.offsets[:, 1]) * scene.pixel_pitch
    couplings = kernel.weights * spatial_coherence_from_length(dist, spatial_length)
    rows = np.arange(scene.height)[:, None]
    cols = np.arange(scene.width)[None, :]
    masks = np.empty((len(kernel.offsets),) + scene.shape, dtype=bool)
    for p, (dr, dc) in enumerate(kernel.offsets):
        masks[p] = ((rows + dr >= 0) & (rows + dr < scene.height)
                    & (cols + dc >= 0) & (cols + dc < scene.width))
    return couplings, masks


def indirect_response(scene: Scene, pixel, spatial_length, mean_wavenumber) -> complex:
    """Near-diagonal contribution at ``pixel`` for a given spatial coherence length.

    Sums kernel weights times the spatial coherence of each lateral offset and
    the carrier phase ``exp(i k extra_path)``. Partners outside the image do
    not contribute.
    """
    row, col = _check_pixel(scene, pixel)
    couplings, masks = kernel_coupling(scene, spatial_length)
    if len(couplings) == 0:
        return 0j
    inside = masks[:, row, col]
    phase = np.exp(1j * mean_wavenumber * scene.kernel.extra_path[inside])
    return complex(np.sum(couplings[inside] * phase))


def _microphase(rng, shape, speckle):
    if not speckle:
        return np.zeros(shape)
    return rng.uniform(0.0, 2 * np.pi, size=shape)


def _smooth_texture(rng, shape, relief, correlation_px=4.0):
    if relief == 0:
        return np.zeros(shape)
    tex = ndimage.gaussian_filter(rng.standard_normal(shape), correlation_px, mode="wrap")
    tex /= tex.std()
    return relief * tex


def make_test_scene(kind, *, width=64, height=64, pixel_pitch=3.7, seed=0,
                    speckle=True, **params) -> Scene:
    """Synthetic scenes for simulation and testing.

    Kinds and their parameters (all depths in um):

    ``flat``
        ``depth`` (0), ``amplitude`` (1).
    ``step``
        ``depth`` (0), ``step_height`` (50), ``amplitude`` (1). Columns at or right
        of the middle sit ``step_height`` deeper.
    ``ramp``
        ``depth`` (0), ``slope`` per column (1), ``amplitude`` (1).
    ``two_layer_diffuser``
        ``depth`` (0), ``gap`` (4000), ``front_amplitude`` (0.35),
        ``front_transparency`` (0.7), ``back_amplitude`` (1), ``relief`` (0):
        a flat semi-transparent front plane over a back surface whose
        reflectance varies smoothly between 0.6 and 1 times ``back_amplitude``;
        ``relief`` adds a smooth height texture with that std.
    ``checker_reflectance``
        ``depth`` (0), ``square`` side in pixels (8), ``low`` (0.3) and
        ``high`` (1) amplitudes.

    ``speckle=False`` gives a polished (zero microphase) surface.
    """
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    allowed = {
        "flat": {"depth", "amplitude"},
        "step": {"depth", "step_height", "amplitude"},
        "ramp": {"depth", "slope", "amplitude"},
        "two_layer_diffuser": {"depth", "gap", "front_amplitude", "front_transparency",
                               "back_amplitude", "relief"},
        "checker_reflectance": {"depth", "square", "low", "high"},
    }[kind]
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"unknown parameters for {kind}: {sorted(unknown)}")
    if width < 1 or height < 1:
        raise ValueError("width and height must be positive")

    rng = np.random.default_rng(seed)
    shape = (height, width)
    base = float(params.get("depth", 0.0))
    cols = np.broadcast_to(np.arange(width, dtype=float)[None, :], shape)

    if kind == "flat":
        layer = SurfaceLayer.uniform(shape, base, params.get("amplitude", 1.0),
                                     _microphase(rng, shape, speckle))
        return Scene((layer,), pixel_pitch)

    if kind == "step":
        h = float(params.get("step_height", 50.0))
        depth = np.where(cols >= width // 2, base + h, base)
        layer = SurfaceLayer.uniform(shape, depth, params.get("amplitude", 1.0),
                                     _microphase(rng, shape, speckle))
        return Scene((layer,), pixel_pitch)

    if kind == "ramp":
        depth = base + float(params.get("slope", 1.0)) * cols
        layer = SurfaceLayer.uniform(shape, depth, params.get("amplitude", 1.0),
                                     _microphase(rng, shape, speckle))
        return Scene((layer,), pixel_pitch)

    if kind == "two_layer_diffuser":
        gap = float(params.get("gap", 4000.0))
        front = SurfaceLayer.uniform(
            shape, base, params.get("front_amplitude", 0.35),
            _microphase(rng, shape, speckle), params.get("front_transparency", 0.7))
        pattern = _smooth_texture(rng, shape, 1.0)
        pattern = (pattern - pattern.min()) / max(np.ptp(pattern), 1e-12)
        relief = _smooth_texture(rng, shape, float(params.get("relief", 0.0)))
        back = SurfaceLayer.uniform(shape, base + gap + relief,
                                    params.get("back_amplitude", 1.0) * (0.6 + 0.4 * pattern),
                                    _microphase(rng, shape, speckle))
        return Scene((front, back), pixel_pitch)

    square = int(params.get("square", 8))
    if square < 1:
        raise ValueError("square must be >= 1")
    rows = np.arange(height)[:, None] // square
    checker = ((rows + np.arange(width)[None, :] // square) % 2).astype(bool)
    amp = np.where(checker, params.get("high", 1.0), params.get("low", 0.3))
    layer = SurfaceLayer.uniform(shape, base, amp, _microphase(rng, shape, speckle))
    return Scene((layer,), pixel_pitch)
