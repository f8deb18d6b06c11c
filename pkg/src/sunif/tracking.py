"""Closed-loop Sun tracking with quantized two-axis rotation stages.

Angles are in degrees, time in seconds, sensor offsets in pixels. The
angular error is the beam direction set by the stages minus the Sun
direction; the tracking camera sees it through a 2x2 sensitivity matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# 0.02 deg of solar motion per 100 frames at 50 ms.
DRIFT_RATE = 0.02 / (100 * 0.05)
MIN_INCREMENT = 0.03
EXPOSURE = 0.05


class TrackingLost(RuntimeError):
    """The Sun left the tracking camera's field of view.

    ``time`` is when it happened; ``trace`` holds the samples recorded up to
    (and including) the failed measurement.
    """

    def __init__(self, time, trace=None):
        super().__init__(f"tracking lost at t={time:.3f} s: Sun outside the field of view")
        self.time = time
        self.trace = trace


@dataclass
class StageModel:
    """Rotation stage that only moves in multiples of ``min_increment``.

    Moves are capped by what a trapezoidal speed profile (``max_speed``,
    ``max_accel``) can cover in the time available. ``quantized=False``
    models an ideal continuous stage.
    """

    min_increment: float = MIN_INCREMENT
    max_speed: float = 10.0
    max_accel: float = 10.0
    angle: float = 0.0
    quantized: bool = True

    def __post_init__(self):
        if not self.min_increment > 0:
            raise ValueError("min_increment must be positive")
        if not (self.max_speed > 0 and self.max_accel > 0):
            raise ValueError("speed and acceleration limits must be positive")

    def quantize(self, command):
        """Nearest multiple of the increment, halves rounded away from zero.

        Anything under half an increment is 0.
        """
        if not self.quantized:
            return float(command)
        q = self.min_increment
        # tolerance keeps exact half-increments from flooring on representation error
        steps = math.floor(abs(command) / q + 0.5 + 1e-9)
        return math.copysign(q * steps, command) if command else 0.0

    def reach(self, dt):
        """Largest rotation (deg) the speed/acceleration limits allow in ``dt`` seconds."""
        v, a = self.max_speed, self.max_accel
        t_ramp = v / a
        if dt <= 2 * t_ramp:
            return a * (dt / 2) ** 2
        return v * (dt - t_ramp)

    def move(self, command, dt=math.inf):
        """Apply a quantized command, clipped to the reachable range; returns the move."""
        delta = self.quantize(command)
        limit = self.reach(dt)
        if abs(delta) > limit:
            cap = self.min_increment * math.floor(limit / self.min_increment) if self.quantized else limit
            delta = math.copysign(cap, delta)
        self.angle += delta
        return delta


def sun_drift(t, rate=DRIFT_RATE, direction=0.0):
    """Solar displacement ``(d_az, d_alt)`` after ``t`` seconds.

    Linear motion at ``rate`` deg/s along ``direction`` (deg, measured from
    the azimuth axis toward altitude).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    d = rate * t
    theta = math.radians(direction)
    return d * math.cos(theta), d * math.sin(theta)


@dataclass
class TrackerState:
    azimuth: StageModel = field(default_factory=StageModel)
    altitude: StageModel = field(default_factory=StageModel)
    sun: tuple = (0.0, 0.0)
    principal_point: tuple = (0.0, 0.0)
    sensitivity: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(2))
    gain: float = 0.5
    fov_half_width: float = 200.0
    noise_px: float = 0.0
    drift_rate: float = DRIFT_RATE
    drift_direction: float = 0.0
    seed: int = 0
    time: float = 0.0

    def __post_init__(self):
        self.sensitivity = np.asarray(self.sensitivity, dtype=float)
        if self.sensitivity.shape != (2, 2):
            raise ValueError("sensitivity must be 2x2")
        if abs(np.linalg.det(self.sensitivity)) < 1e-12:
            raise ValueError("sensitivity matrix must be invertible")
        if not self.gain > 0:
            raise ValueError("gain must be positive")
        self._rng = np.random.default_rng(self.seed)

    def sun_direction(self, t=None):
        t = self.time if t is None else t
        daz, dalt = sun_drift(t, self.drift_rate, self.drift_direction)
        return self.sun[0] + daz, self.sun[1] + dalt

    def angular_error(self):
        az, alt = self.sun_direction()
        return np.array([self.azimuth.angle - az, self.altitude.angle - alt])


def measure_error(state: TrackerState) -> np.ndarray:
    """Sun-image offset from the principal point, in pixels.

    Raises :class:`TrackingLost` if the offset leaves the field of view.
    """
    px = state.sensitivity @ state.angular_error()
    if state.noise_px > 0:
        px = px + state.noise_px * state._rng.standard_normal(2)
    if np.any(np.abs(px) > state.fov_half_width):
        raise TrackingLost(state.time)
    return px


def control_step(state: TrackerState, error_px) -> tuple:
    """Proportional correction ``-gain * S^-1 * error``, quantized per stage."""
    raw = -state.gain * np.linalg.solve(state.sensitivity, np.asarray(error_px, dtype=float))
    return state.azimuth.quantize(raw[0]), state.altitude.quantize(raw[1])


@dataclass
class TrackingTrace:
    """Samples taken at each re-centering, before the correction is applied."""

    time: np.ndarray
    error: np.ndarray       # (n, 2) angular error, deg
    command: np.ndarray     # (n, 2) applied stage moves, deg

    @property
    def error_norm(self):
        return np.hypot(self.error[:, 0], self.error[:, 1]) if len(self.time) else np.zeros(0)

    @property
    def max_error(self) -> float:
        return float(self.error_norm.max()) if len(self.time) else 0.0

    @property
    def steady_state_error(self) -> float:
        """Largest error over the second half of the run."""
        n = len(self.time)
        if n == 0:
            return 0.0
        return float(self.error_norm[n // 2:].max())

    @property
    def oscillating(self) -> bool:
        """True if some axis shows three successive errors that flip sign without shrinking."""
        for axis in range(2):
            e = self.error[:, axis]
            for k in range(len(e) - 2):
                a, b, c = e[k:k + 3]
                if a * b < 0 and b * c < 0 and abs(b) >= abs(a) and abs(c) >= abs(b):
                    return True
        return False

    def rows(self):
        for t, (ea, el), (ca, cl) in zip(self.time, self.error, self.command):
            yield float(t), float(ea), float(el), float(ca), float(cl)


def _trace(times, errors, commands):
    return TrackingTrace(np.asarray(times, dtype=float),
                         np.asarray(errors, dtype=float).reshape(-1, 2),
                         np.asarray(commands, dtype=float).reshape(-1, 2))


def run_tracking(state: TrackerState, duration, recenter_every=100, exposure=EXPOSURE) -> TrackingTrace:
    """Simulate drift, sensing and correction every ``recenter_every`` frames.

    A sample is taken at ``t = k * interval`` for every ``k`` with
    ``t < duration``. Raises :class:`TrackingLost` (with the partial trace)
    if the Sun leaves the field of view.
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if recenter_every < 1 or exposure <= 0:
        raise ValueError("recenter_every and exposure must be positive")
    interval = recenter_every * exposure
    steps = math.ceil(duration / interval - 1e-12) if duration > 0 else 0
    times, errors, commands = [], [], []
    for k in range(steps):
        state.time = k * interval
        err = state.angular_error()
        try:
            px = measure_error(state)
        except TrackingLost as exc:
            times.append(state.time)
            errors.append(err)
            commands.append((0.0, 0.0))
            exc.trace = _trace(times, errors, commands)
            raise
        cmd_az, cmd_alt = control_step(state, px)
        moved = (state.azimuth.move(cmd_az, interval), state.altitude.move(cmd_alt, interval))
        times.append(state.time)
        errors.append(err)
        commands.append(moved)
    return _trace(times, errors, commands)
