"""Axial-scan image formation for a sunlight Michelson interferometer.

Each frame is ``I = b + 2 Re{c}`` where ``b`` is the interference-free
image and ``c`` the scene/reference correlation at the current reference
mirror position.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _random
from .optics import IlluminationModel, coherence_lengths, sample_spectrum
from .scene import Scene, kernel_coupling

MODES = ("envelope", "spectral_sum")

# Frames per work item. Fixed so results never depend on the worker count.
CHUNK_FRAMES = 16
# Bound on (frames x depths x wavenumbers) evaluated at once in spectral mode.
_SPECTRAL_BLOCK = 1 << 21

_NOISE_STREAM = 1
_VIBRATION_STREAM = 2


@dataclass(frozen=True)
class ScanConfig:
    """Reference-arm scan and nuisance parameters.

    ``ambient`` is an incoherent background in units of the intensity a
    unit-reflectance scene returns. ``shot_noise`` scales a Gaussian
    perturbation with std ``shot_noise * sqrt(I)``. ``vibration`` is the std
    (um) of a per-frame axial jitter shared by all pixels.
    """

    start: float
    step: float
    frames: int
    reference_amplitude: float = 1.0
    ambient: float = 0.0
    shot_noise: float = 0.0
    vibration: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.frames) != self.frames or self.frames < 1:
            raise ValueError("frames must be a positive integer")
        if not (math.isfinite(self.start) and math.isfinite(self.step)):
            raise ValueError("start and step must be finite")
        if self.step <= 0:
            raise ValueError("step must be positive")
        for name in ("reference_amplitude", "ambient", "shot_noise", "vibration"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")

    @property
    def positions(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.frames)

    @classmethod
    def for_range(cls, near, far, coherence_length, margin=None, **kwargs):
        """Scan ``[near, far]`` at half the coherence length per step.

        The range is padded by ``margin`` (default three coherence lengths)
        on each side.
        """
        margin = 3 * coherence_length if margin is None else margin
        step = coherence_length / 2
        depth = (far - near) + 2 * margin
        frames = max(1, math.ceil(2 * depth / coherence_length)) + 1
        return cls(start=near - margin, step=step, frames=frames, **kwargs)


@dataclass
class ImageStack:
    """Intensity frames ``frames[m, row, col]`` at reference positions ``positions[m]``."""

    frames: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.frames.ndim != 3:
            raise ValueError("frames must be a 3-D array (M, H, W)")
        if self.positions.shape != (self.frames.shape[0],):
            raise ValueError("need one axial position per frame")
        if self.frames.shape[0] > 1 and np.any(np.diff(self.positions) <= 0):
            raise ValueError("axial positions must be strictly increasing")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def step(self) -> float:
        if self.num_frames < 2:
            return float("nan")
        return float(self.positions[1] - self.positions[0])


def _carrier_envelope(illum):
    kbar, dk = illum.mean_wavenumber, illum.spectral_bandwidth

    def g(tau):
        return np.exp(1j * kbar * tau - 0.5 * (dk * tau) ** 2)

    return g


def _carrier_spectral(illum):
    kappa, weights = sample_spectrum(illum)
    if len(kappa) < 3:
        raise ValueError("spectral_sum mode needs at least 3 spectral samples")

    def g(tau):
        tau = np.asarray(tau)
        flat = tau.reshape(-1)
        out = np.empty(flat.shape, dtype=complex)
        block = max(1, _SPECTRAL_BLOCK // len(kappa))
        for i in range(0, len(flat), block):
            phase = np.exp(1j * flat[i:i + block, None] * kappa[None, :])
            out[i:i + block] = phase @ weights
        return out.reshape(tau.shape)

    return g


def _carrier(illum, mode):
    if mode == "envelope":
        return _carrier_envelope(illum)
    if mode == "spectral_sum":
        return _carrier_spectral(illum)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def _accumulate(c, amp, depth, positions, carrier):
    # Depth maps are often piecewise constant; evaluate the carrier once per distinct depth.
    uniq, inverse = np.unique(depth, return_inverse=True)
    g = carrier(uniq[None, :] - positions[:, None])
    c += amp[None] * g[:, inverse.reshape(depth.shape)]


def correlation(scene: Scene, illum: IlluminationModel, positions,
                reference_amplitude=1.0, mode="envelope") -> np.ndarray:
    """Complex correlation ``c[m, row, col]`` at the given reference positions."""
    carrier = _carrier(illum, mode)
    positions = np.atleast_1d(np.asarray(positions, dtype=float))
    c = np.zeros((len(positions),) + scene.shape, dtype=complex)
    for depth, amp in scene.effective_layers():
        _accumulate(c, reference_amplitude * amp, depth, positions, carrier)
    if scene.kernel is not None:
        couplings, masks = kernel_coupling(scene, coherence_lengths(illum).spatial)
        front = scene.layers[0].depth
        for p, extra in enumerate(scene.kernel.extra_path):
            amp = np.where(masks[p], reference_amplitude * couplings[p], 0.0)
            _accumulate(c, amp, front + extra, positions, carrier)
    return c


def interference_free_image(scene: Scene, cfg: ScanConfig) -> np.ndarray:
    """Interference-free image: scene intensity + reference intensity + ambient."""
    b = np.full(scene.shape, cfg.reference_amplitude**2 + cfg.ambient)
    for _, amp in scene.effective_layers():
        b += np.abs(amp) ** 2
    if scene.kernel is not None:
        _, masks = kernel_coupling(scene, math.inf)
        for p, w in enumerate(scene.kernel.weights):
            b += np.where(masks[p], w**2, 0.0)
    return b


def frame_jitter(cfg: ScanConfig) -> np.ndarray:
    """Per-frame axial jitter (um) drawn from the configured seed."""
    if cfg.vibration == 0:
        return np.zeros(cfg.frames)
    return cfg.vibration * _random.standard_normal(cfg.seed, _VIBRATION_STREAM,
                                                    np.arange(cfg.frames))


def _render_chunk(scene, illum, cfg, mode, b, positions, first):
    c = correlation(scene, illum, positions, cfg.reference_amplitude, mode)
    frames = b[None] + 2.0 * c.real
    if cfg.shot_noise > 0:
        h, w = scene.shape
        m = np.arange(first, first + len(positions), dtype=np.uint64)
        index = (m[:, None, None] * np.uint64(h) + np.arange(h, dtype=np.uint64)[None, :, None]) \
            * np.uint64(w) + np.arange(w, dtype=np.uint64)[None, None, :]
        z = _random.standard_normal(cfg.seed, _NOISE_STREAM, index)
        frames = frames + cfg.shot_noise * np.sqrt(np.maximum(frames, 0.0)) * z
    return np.maximum(frames, 0.0)


def simulate_stack(scene: Scene, illum: IlluminationModel, cfg: ScanConfig,
                   mode="envelope", workers=1) -> ImageStack:
    """Render the full axial scan.

    ``mode="envelope"`` uses the closed-form Gaussian coherence envelope;
    ``mode="spectral_sum"`` sums the interference of each sampled wavenumber
    explicitly. ``workers`` changes speed only.
    """
    carrier_check = _carrier(illum, mode)  # validates mode and sample count early
    del carrier_check
    b = interference_free_image(scene, cfg)
    nominal = cfg.positions
    actual = nominal + frame_jitter(cfg)
    starts = range(0, cfg.frames, CHUNK_FRAMES)

    def work(i):
        return _render_chunk(scene, illum, cfg, mode, b, actual[i:i + CHUNK_FRAMES], i)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(i) for i in starts]
    return ImageStack(np.concatenate(parts, axis=0), nominal)


def phase_shift_offsets(illum: IlluminationModel) -> np.ndarray:
    """Reference offsets giving carrier phase steps of 0, pi/2, pi, 3 pi/2."""
    return np.arange(4) * (np.pi / 2) / illum.mean_wavenumber


def simulate_phase_shift_quad(scene: Scene, illum: IlluminationModel, cfg: ScanConfig,
                              index: int):
    """Four noiseless frames around frame ``index`` with quarter-fringe phase steps.

    The sub-wavelength offsets are applied to the carrier only; the coherence
    envelope is held at the nominal position.

    Returns
    -------
    frames : ndarray, shape (4, H, W)
    positions : ndarray, shape (4,)
    """
    if not 0 <= index < cfg.frames:
        raise IndexError(f"frame {index} outside scan of {cfg.frames}")
    position = cfg.positions[index]
    c = correlation(scene, illum, [position], cfg.reference_amplitude)[0]
    b = interference_free_image(scene, cfg)
    steps = np.exp(-1j * (np.pi / 2) * np.arange(4))
    frames = b[None] + 2.0 * (c[None] * steps[:, None, None]).real
    return frames, position + phase_shift_offsets(illum)


def four_bucket(frames):
    """Four-bucket estimate from frames at phase steps 0, pi/2, pi, 3 pi/2.

    Returns ``(amplitude, phase)`` where ``amplitude`` is the fringe
    amplitude ``2 |c|`` (half the peak-to-peak swing).
    """
    i0, i1, i2, i3 = frames
    amplitude = np.sqrt((i0 - i2) ** 2 + (i1 - i3) ** 2) / 2.0
    return amplitude, np.arctan2(i1 - i3, i0 - i2)


def phase_shift_transient(scene: Scene, illum: IlluminationModel, cfg: ScanConfig) -> np.ndarray:
    """Squared correlation amplitude at every scan position via four-bucket frames."""
    out = np.empty((cfg.frames,) + scene.shape)
    for m in range(cfg.frames):
        frames, _ = simulate_phase_shift_quad(scene, illum, cfg, m)
        amplitude, _ = four_bucket(frames)
        out[m] = (amplitude / 2.0) ** 2
    return out
