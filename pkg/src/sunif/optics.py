"""Illumination models and coherence functions for filtered sunlight.

Units throughout: lengths in micrometers, wavenumbers in rad/um, angles in
radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# sinc(x) = sin(x)/x. The pi-scaled variant (numpy.sinc) is sin(pi x)/(pi x).
SINC_CONVENTION = "unnormalized"

FWHM_PER_STD = 2.0 * math.sqrt(2.0 * math.log(2.0))

# Span of the sampled spectrum, in standard deviations either side of the mean.
SPECTRUM_SPAN = 4.0

# Values measured on the prototype; kept for comparison against formula output.
PAPER_TEMPORAL_COHERENCE_LENGTH = 10.0
PAPER_SPATIAL_COHERENCE_LENGTH = 100.0
SOLAR_ANGULAR_DIAMETER = math.radians(0.57)


@dataclass(frozen=True)
class IlluminationModel:
    """Gaussian spectrum with a uniform angular spread.

    Parameters
    ----------
    mean_wavenumber : float
        Central wavenumber in rad/um.
    spectral_bandwidth : float
        Standard deviation of the Gaussian power spectrum, rad/um.
    angular_bandwidth : float
        Full width of the uniform angular distribution, rad.
    num_spectral_samples : int
        Number of wavenumbers used by brute-force spectral summation.
    """

    mean_wavenumber: float
    spectral_bandwidth: float
    angular_bandwidth: float = 0.0
    num_spectral_samples: int = 201

    def __post_init__(self):
        for name in ("mean_wavenumber", "spectral_bandwidth", "angular_bandwidth"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.mean_wavenumber <= 0:
            raise ValueError("mean_wavenumber must be positive")
        if self.spectral_bandwidth <= 0:
            raise ValueError("spectral_bandwidth must be positive")
        if self.angular_bandwidth < 0:
            raise ValueError("angular_bandwidth must be non-negative")
        if int(self.num_spectral_samples) != self.num_spectral_samples or self.num_spectral_samples < 1:
            raise ValueError("num_spectral_samples must be a positive integer")

    @property
    def mean_wavelength(self) -> float:
        return 2.0 * math.pi / self.mean_wavenumber

    @classmethod
    def from_wavelength(cls, wavelength, spectral_bandwidth, angular_bandwidth=0.0,
                        num_spectral_samples=201):
        """Build from a central wavelength in um."""
        return cls(2.0 * math.pi / wavelength, spectral_bandwidth,
                   angular_bandwidth, num_spectral_samples)


@dataclass(frozen=True)
class CoherenceLengths:
    temporal: float
    spatial: float


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input")


def sinc(x):
    """sin(x)/x with sinc(0) = 1."""
    x = np.asarray(x, dtype=float)
    return np.sinc(x / np.pi)


def temporal_coherence(delay, spectral_bandwidth):
    """Temporal coherence function exp(-(dk * delay)^2 / 2).

    Parameters
    ----------
    delay : float or ndarray
        Pathlength difference, um.
    spectral_bandwidth : float
        Gaussian spectral std, rad/um.
    """
    _check_finite(delay, spectral_bandwidth)
    if spectral_bandwidth <= 0:
        raise ValueError("spectral_bandwidth must be positive")
    delay = np.asarray(delay, dtype=float)
    out = np.exp(-0.5 * (spectral_bandwidth * delay) ** 2)
    return out if out.ndim else float(out)


def spatial_coherence(offset, mean_wavenumber, angular_bandwidth):
    """Spatial coherence function sinc(2 * offset * k * dtheta)."""
    _check_finite(offset, mean_wavenumber, angular_bandwidth)
    if mean_wavenumber <= 0:
        raise ValueError("mean_wavenumber must be positive")
    if angular_bandwidth < 0:
        raise ValueError("angular_bandwidth must be non-negative")
    out = sinc(2.0 * np.asarray(offset, dtype=float) * mean_wavenumber * angular_bandwidth)
    return out if out.ndim else float(out)


def spatial_coherence_from_length(offset, spatial_length):
    """Same kernel parameterized by the spatial coherence length.

    ``spatial_length = inf`` is the fully coherent limit (weight 1).
    """
    offset = np.asarray(offset, dtype=float)
    if spatial_length <= 0:
        raise ValueError("spatial_length must be positive")
    if math.isinf(spatial_length):
        out = np.ones_like(offset)
    else:
        out = sinc(2.0 * offset / spatial_length)
    return out if out.ndim else float(out)


def coherence_lengths(illum: IlluminationModel) -> CoherenceLengths:
    """Temporal length 1/dk and spatial length 1/(k dtheta); inf when dtheta = 0."""
    temporal = 1.0 / illum.spectral_bandwidth
    denom = illum.mean_wavenumber * illum.angular_bandwidth
    spatial = math.inf if denom == 0 else 1.0 / denom
    return CoherenceLengths(temporal, spatial)


def sample_spectrum(illum: IlluminationModel, num_samples: int | None = None):
    """Uniform wavenumber grid over mean +/- 4 std with normalized Gaussian weights.

    Returns
    -------
    wavenumbers, weights : ndarray
        Both of length ``num_samples``; weights sum to 1.
    """
    k = illum.num_spectral_samples if num_samples is None else num_samples
    if int(k) != k or k < 1:
        raise ValueError("num_samples must be >= 1")
    k = int(k)
    if k == 1:
        return np.array([illum.mean_wavenumber]), np.array([1.0])
    span = SPECTRUM_SPAN * illum.spectral_bandwidth
    kappa = np.linspace(illum.mean_wavenumber - span, illum.mean_wavenumber + span, k)
    w = np.exp(-0.5 * ((kappa - illum.mean_wavenumber) / illum.spectral_bandwidth) ** 2)
    return kappa, w / w.sum()


def bandwidth_from_filter(center_nm, width_nm, convention="std"):
    """Convert a bandpass filter spec in nm to a wavenumber std in rad/um.

    ``convention`` says what ``width_nm`` measures: ``"std"`` (one standard
    deviation), ``"fwhm"`` (full width at half maximum) or ``"half_width"``
    (the +/- figure in a "550 +/- 20 nm" label, taken as a FWHM of twice that).
    The nm-to-wavenumber mapping is linearized about the center,
    dk = 2 pi dlambda / lambda^2.
    """
    if center_nm <= 0 or width_nm <= 0:
        raise ValueError("center and width must be positive")
    if convention == "std":
        std_nm = width_nm
    elif convention == "fwhm":
        std_nm = width_nm / FWHM_PER_STD
    elif convention == "half_width":
        std_nm = 2.0 * width_nm / FWHM_PER_STD
    else:
        raise ValueError(f"unknown bandwidth convention {convention!r}")
    center_um = center_nm * 1e-3
    return 2.0 * math.pi * (std_nm * 1e-3) / center_um**2
