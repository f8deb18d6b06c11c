"""Coherence-length estimation from measured transients and Sun images."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .optics import FWHM_PER_STD

MAX_ITERATIONS = 200
REL_TOL = 1e-8


class FitError(RuntimeError):
    """Raised when the Gaussian fit fails to converge.

    ``last`` holds the final iterate as ``(amplitude, center, sigma, offset)``.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


@dataclass(frozen=True)
class GaussianFit:
    amplitude: float
    center: float
    sigma: float
    offset: float
    residual_rms: float
    iterations: int = 0

    @property
    def fwhm(self) -> float:
        return FWHM_PER_STD * self.sigma

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.exp(-0.5 * ((x - self.center) / self.sigma) ** 2) + self.offset


def _model(p, x):
    a, mu, sigma, b = p
    u = (x - mu) / sigma
    e = np.exp(-0.5 * u * u)
    f = a * e + b
    jac = np.empty((len(x), 4))
    jac[:, 0] = e
    jac[:, 1] = a * e * u / sigma
    jac[:, 2] = a * e * u * u / sigma
    jac[:, 3] = 1.0
    return f, jac


def _initial_guess(x, y):
    i = int(np.argmax(y))
    mu = x[i]
    lo, hi = float(y.min()), float(y.max())
    w = y - lo
    sigma = math.sqrt(float(np.sum(w * (x - mu) ** 2) / np.sum(w)))
    if not sigma > 0:
        sigma = float(np.ptp(x)) / 4
    return np.array([hi - lo, mu, sigma, lo])


def fit_gaussian(x, y) -> GaussianFit:
    """Least-squares fit of ``A exp(-(x - mu)^2 / 2 sigma^2) + b``.

    Levenberg-Marquardt iterations starting from the peak sample (``mu``),
    the data range (``A``), the minimum (``b``) and the second moment of the
    baseline-subtracted data about the peak (``sigma``). Stops when every
    parameter moves by less than 1e-8 of its scale (the data range for ``A``
    and ``b``, the abscissa span for ``mu`` and ``sigma``).

    Raises
    ------
    ValueError
        Fewer than five samples, non-finite input or constant values.
    FitError
        No convergence within 200 iterations.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    if len(x) < 5:
        raise ValueError("need at least 5 samples")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    if np.ptp(y) == 0:
        raise ValueError("samples are constant")

    p = _initial_guess(x, y)
    scale = np.array([np.ptp(y), np.ptp(x), np.ptp(x), np.ptp(y)])
    f, jac = _model(p, x)
    resid = y - f
    cost = resid @ resid
    lam = 1e-3
    for it in range(1, MAX_ITERATIONS + 1):
        jtj = jac.T @ jac
        grad = jac.T @ resid
        while True:
            damped = jtj + lam * np.diag(np.diag(jtj))
            try:
                step = np.linalg.solve(damped, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(damped, grad, rcond=None)[0]
            trial = p + step
            if trial[0] > 0 and trial[2] > 0:
                f_t, jac_t = _model(trial, x)
                r_t = y - f_t
                cost_t = r_t @ r_t
                if cost_t <= cost:
                    break
            lam *= 10.0
            if lam > 1e16:
                break
        small = np.all(np.abs(step) <= REL_TOL * scale)
        if lam > 1e16:
            # no descent direction left: we are at the minimum to working precision
            if small or np.all(np.abs(step) <= 1e-6 * scale):
                return _result(p, resid, it)
            raise FitError("damping diverged without reaching a minimum", tuple(p))
        p, f, jac, resid, cost = trial, f_t, jac_t, r_t, cost_t
        lam = max(lam / 10.0, 1e-12)
        if small:
            return _result(p, resid, it)
    raise FitError(f"no convergence after {MAX_ITERATIONS} iterations", tuple(p))


def _result(p, resid, iterations):
    rms = float(np.sqrt(np.mean(resid**2)))
    return GaussianFit(float(p[0]), float(p[1]), float(p[2]), float(p[3]), rms, iterations)


def fit_temporal_coherence(positions, transient, use_sqrt=True) -> GaussianFit:
    """Gaussian fit to an axial transient (its square root by default).

    The square root of the squared correlation amplitude follows the
    coherence envelope, whose std is the temporal coherence length.
    """
    transient = np.asarray(transient, dtype=float)
    if np.any(transient < 0):
        raise ValueError("transient must be non-negative")
    values = np.sqrt(transient) if use_sqrt else transient
    return fit_gaussian(positions, values)


def temporal_coherence_length(positions, transient, use_sqrt=True) -> float:
    """FWHM (um) of the Gaussian fitted to the transient."""
    return fit_temporal_coherence(positions, transient, use_sqrt).fwhm


@dataclass(frozen=True)
class SunMeasurement:
    diameter_px: float
    angular_extent: float
    spatial_length: float


def spatial_coherence_length(image, focal_length, pixel_pitch, mean_wavenumber) -> SunMeasurement:
    """Angular size of the Sun and the implied spatial coherence length.

    The disk is the largest connected region at or above half of the way from
    the image minimum to its maximum; its diameter is taken from its area.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty 2-D image")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if focal_length <= 0 or pixel_pitch <= 0 or mean_wavenumber <= 0:
        raise ValueError("focal_length, pixel_pitch and mean_wavenumber must be positive")
    lo, hi = float(img.min()), float(img.max())
    if not hi > lo:
        raise ValueError("no disk found: image has no bright region")
    mask = img >= lo + 0.5 * (hi - lo)
    labels, n = ndimage.label(mask)
    if n == 0:
        raise ValueError("no disk found above half maximum")
    sizes = np.bincount(labels.ravel())[1:]
    area = float(sizes.max())
    diameter = 2.0 * math.sqrt(area / math.pi)
    extent = diameter * pixel_pitch / focal_length
    return SunMeasurement(diameter, extent, 1.0 / (mean_wavenumber * extent))


def render_disk(shape, angular_diameter, focal_length, pixel_pitch, center=None,
                background=0.0, peak=1.0, supersample=4):
    """Image of a uniform disk subtending ``angular_diameter`` radians at infinity focus."""
    h, w = shape
    radius = 0.5 * angular_diameter * focal_length / pixel_pitch
    cy, cx = ((h - 1) / 2, (w - 1) / 2) if center is None else center
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5
    yy = np.arange(h)[:, None, None, None] + sub[None, None, :, None]
    xx = np.arange(w)[None, :, None, None] + sub[None, None, None, :]
    inside = ((yy - cy) ** 2 + (xx - cx) ** 2) <= radius**2
    cover = inside.mean(axis=(2, 3))
    return background + (peak - background) * cover
