"""Direct-only transients, depth maps and multi-surface peaks from an axial stack.

Pipeline: a temporal moving average estimates the interference-free image,
the squared residual estimates the squared interference, and a lateral
Gaussian blur averages speckle into the squared correlation amplitude.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .forward import ImageStack

DEFAULT_BLUR = 2.0
DEFAULT_PEAK_THRESHOLD = 0.3
_BLUR_CHUNK = 16


@dataclass
class TransientVolume:
    """Squared correlation amplitude ``tau[m, row, col]`` on the stack's axial grid."""

    tau: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.tau.ndim != 3 or self.positions.shape != (self.tau.shape[0],):
            raise ValueError("tau must be (M, H, W) with one position per frame")
        if not np.all(np.isfinite(self.tau)) or np.any(self.tau < 0):
            raise ValueError("tau must be finite and non-negative")

    @property
    def shape(self):
        return self.tau.shape


@dataclass
class DepthMap:
    depth: np.ndarray
    confidence: np.ndarray
    valid: np.ndarray
    index: np.ndarray

    def raster(self) -> np.ndarray:
        """Depth with NaN at invalid pixels."""
        return np.where(self.valid, self.depth, np.nan)

    @property
    def valid_fraction(self) -> float:
        return float(np.mean(self.valid))


@dataclass
class PeakList:
    """Per-pixel surfaces ordered near to far.

    ``depths`` and ``amplitudes`` have shape ``(H, W, P)`` padded with NaN;
    ``count[row, col]`` gives the number of real entries.
    """

    depths: np.ndarray
    amplitudes: np.ndarray
    count: np.ndarray

    def at(self, row, col):
        n = int(self.count[row, col])
        return list(zip(self.depths[row, col, :n].tolist(),
                        self.amplitudes[row, col, :n].tolist()))


def default_window(coherence_length, step) -> int:
    """Frames spanning four coherence lengths (at least 2)."""
    return max(2, math.ceil(4.0 * coherence_length / step - 1e-9))


def _window_sum(csum, lo, hi, m):
    lo = np.clip(lo, 0, m)
    hi = np.clip(hi, 0, m)
    return csum[hi] - csum[lo], (hi - lo).astype(float)


def interference_free(stack: ImageStack, window: int) -> ImageStack:
    """Centered moving average over ``window`` frames.

    Odd windows average frames ``m - window//2 .. m + window//2``. Even
    windows cover ``m - window/2 .. m + window/2`` with the two end frames at
    half weight, so the weights still sum to ``window`` and stay symmetric.
    Near the scan ends the window is cut to the available frames and
    renormalized by the weight that remains.
    """
    if int(window) != window or window < 2:
        raise ValueError("window must be an integer >= 2")
    window = int(window)
    m = stack.num_frames
    if window > m:
        raise ValueError(f"window {window} exceeds the {m} frames in the stack")
    data = np.asarray(stack.frames, dtype=float)
    csum = np.concatenate([np.zeros((1,) + data.shape[1:]), np.cumsum(data, axis=0)])
    idx = np.arange(m)
    half = window // 2
    if window % 2:
        total, weight = _window_sum(csum, idx - half, idx + half + 1, m)
    else:
        s1, w1 = _window_sum(csum, idx - half, idx + half, m)
        s2, w2 = _window_sum(csum, idx - half + 1, idx + half + 1, m)
        total, weight = 0.5 * (s1 + s2), 0.5 * (w1 + w2)
    return ImageStack(total / weight[:, None, None], stack.positions)


def squared_interference(stack: ImageStack, smooth: ImageStack) -> ImageStack:
    """``(I - b)^2 / 4`` frame by frame."""
    if np.shape(stack.frames) != np.shape(smooth.frames):
        raise ValueError("stack and interference-free estimate differ in shape")
    diff = np.asarray(stack.frames, dtype=float) - smooth.frames
    return ImageStack(0.25 * diff * diff, stack.positions)


def _blur_frames(frames, sigma):
    return ndimage.gaussian_filter(frames, sigma=(0.0, sigma, sigma), mode="reflect")


def correlation_amplitude(r: ImageStack, blur: float = DEFAULT_BLUR, workers=1) -> TransientVolume:
    """Lateral Gaussian blur (std ``blur`` pixels) of each squared-interference frame."""
    if not blur > 0:
        raise ValueError("blur must be positive")
    data = np.asarray(r.frames, dtype=float)
    starts = range(0, data.shape[0], _BLUR_CHUNK)

    def work(i):
        return _blur_frames(data[i:i + _BLUR_CHUNK], blur)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(i) for i in starts]
    tau = np.concatenate(parts, axis=0) if parts else data.copy()
    # the filter can leave -0.0 or rounding-level negatives
    return TransientVolume(np.maximum(tau, 0.0), r.positions)


def reconstruct_transient(stack: ImageStack, window: int, blur: float = DEFAULT_BLUR,
                          workers=1) -> TransientVolume:
    """Full transient estimate: moving average, squared residual, lateral blur."""
    smooth = interference_free(stack, window)
    return correlation_amplitude(squared_interference(stack, smooth), blur, workers)


def _check_nonempty(volume):
    if volume.tau.size == 0:
        raise ValueError("empty transient volume")


def _step(pos):
    return float(np.diff(pos).mean()) if len(pos) > 1 else 0.0


def _parabolic_offset(tau, index):
    """Sub-bin vertex offset (in bins, within +/-0.5) of a parabola through three samples.

    ``index`` has the shape of ``tau[0]`` or adds trailing peak slots; peaks on
    the scan boundary or on a non-concave triple get 0.
    """
    m = tau.shape[0]
    if m < 3:
        return np.zeros(index.shape)
    flat = tau.reshape(m, -1)
    idx = index.reshape(flat.shape[1], -1)
    inner = (idx > 0) & (idx < m - 1)
    i = np.clip(idx, 1, m - 2)
    left = np.take_along_axis(flat, (i - 1).T, axis=0).T
    mid = np.take_along_axis(flat, i.T, axis=0).T
    right = np.take_along_axis(flat, (i + 1).T, axis=0).T
    curv = left - 2 * mid + right
    ok = inner & (curv < 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(ok, 0.5 * (left - right) / curv, 0.0)
    return np.clip(delta, -0.5, 0.5).reshape(index.shape)


def extract_depth(volume: TransientVolume, min_conf: float = 0.0, refine=False,
                  min_contrast: float = 0.0) -> DepthMap:
    """Depth at the per-pixel transient maximum.

    Ties go to the nearest position. A pixel is invalid when its peak is below
    ``min_conf`` times the global maximum; with ``min_conf > 0`` a transient
    with no variation at all is invalid too. ``min_contrast`` additionally
    rejects pixels whose peak is below that multiple of the pixel's own
    median (its noise floor), which is what separates signal from noise when
    every pixel is dim. ``refine`` fits a parabola through the peak and its
    two neighbours for sub-bin depth.
    """
    _check_nonempty(volume)
    if min_conf < 0 or min_contrast < 0:
        raise ValueError("min_conf and min_contrast must be >= 0")
    tau, pos = volume.tau, volume.positions
    index = np.argmax(tau, axis=0)
    peak = np.take_along_axis(tau, index[None], axis=0)[0]
    depth = pos[index].astype(float)

    if refine:
        depth = depth + _parabolic_offset(tau, index) * _step(pos)

    valid = np.ones(peak.shape, dtype=bool)
    if min_conf > 0:
        valid = (peak >= min_conf * tau.max()) & (peak > tau.min(axis=0))
    if min_contrast > 0:
        valid &= peak > min_contrast * np.median(tau, axis=0)
    return DepthMap(depth, peak, valid, index)


def extract_peaks(volume: TransientVolume, threshold: float = DEFAULT_PEAK_THRESHOLD,
                  min_separation: float = 20.0, refine=False) -> PeakList:
    """All significant surfaces per pixel.

    Candidates are local maxima of the transient at or above ``threshold``
    times that pixel's maximum. They are accepted greedily, largest first,
    discarding any candidate closer than ``min_separation`` (um) to an
    accepted one. ``refine`` applies the same parabolic sub-bin correction
    as :func:`extract_depth`.
    """
    _check_nonempty(volume)
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if not min_separation > 0:
        raise ValueError("min_separation must be positive")
    tau, pos = volume.tau, volume.positions
    m = tau.shape[0]

    cand = np.zeros(tau.shape, dtype=bool)
    if m == 1:
        cand[0] = True
    else:
        cand[1:-1] = (tau[1:-1] > tau[:-2]) & (tau[1:-1] >= tau[2:])
        cand[0] = tau[0] > tau[1]
        cand[-1] = tau[-1] > tau[-2]
    top = tau.max(axis=0)
    cand &= (tau >= threshold * top[None]) & (top[None] > 0)

    chosen_idx = []
    remaining = np.where(cand, tau, -np.inf)
    while True:
        best = np.argmax(remaining, axis=0)
        best_val = np.take_along_axis(remaining, best[None], axis=0)[0]
        live = np.isfinite(best_val)
        if not live.any():
            break
        chosen_idx.append(np.where(live, best, -1))
        near = np.abs(pos[:, None, None] - pos[best][None]) < min_separation
        remaining[near & live[None]] = -np.inf

    h, w = tau.shape[1:]
    p = max(1, len(chosen_idx))
    idx = np.full((h, w, p), -1)
    for k, sel in enumerate(chosen_idx):
        idx[:, :, k] = sel
    # near-to-far: sort by axial index with padding (-1) pushed to the end
    key = np.where(idx < 0, m, idx)
    idx = np.take_along_axis(idx, np.argsort(key, axis=2, kind="stable"), axis=2)
    have = idx >= 0
    safe = np.where(have, idx, 0)
    depths = pos[safe]
    if refine:
        depths = depths + _parabolic_offset(tau, safe) * _step(pos)
    depths = np.where(have, depths, np.nan)
    amps = np.where(have, np.take_along_axis(np.moveaxis(tau, 0, -1), safe, axis=2), np.nan)
    return PeakList(depths, amps, have.sum(axis=2))


def direct_only_image(volume: TransientVolume, depth: DepthMap) -> np.ndarray:
    """Transient value at each pixel's recovered depth bin; 0 where invalid."""
    if depth.index.shape != volume.tau.shape[1:]:
        raise ValueError("depth map and volume are not aligned")
    value = np.take_along_axis(volume.tau, depth.index[None], axis=0)[0]
    return np.where(depth.valid, value, 0.0)
