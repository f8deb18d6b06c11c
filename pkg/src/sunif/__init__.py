"""Simulation and reconstruction for direct-only imaging with a sunlight interferometer."""

from .coherence import FitError, GaussianFit, fit_gaussian, spatial_coherence_length, temporal_coherence_length
from .forward import ImageStack, ScanConfig, simulate_stack
from .optics import IlluminationModel, coherence_lengths, spatial_coherence, temporal_coherence
from .reconstruct import (DepthMap, PeakList, TransientVolume, extract_depth, extract_peaks,
                          reconstruct_transient)
from .scene import IndirectKernel, Scene, SurfaceLayer, make_test_scene
from .tracking import TrackerState, TrackingLost, run_tracking

__version__ = "0.1.0"

__all__ = [
    "FitError", "GaussianFit", "fit_gaussian", "spatial_coherence_length", "temporal_coherence_length",
    "ImageStack", "ScanConfig", "simulate_stack",
    "IlluminationModel", "coherence_lengths", "spatial_coherence", "temporal_coherence",
    "DepthMap", "PeakList", "TransientVolume", "extract_depth", "extract_peaks", "reconstruct_transient",
    "IndirectKernel", "Scene", "SurfaceLayer", "make_test_scene",
    "TrackerState", "TrackingLost", "run_tracking",
]
