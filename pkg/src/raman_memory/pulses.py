"""Temporal/spatial grids, pulse construction, pulse trains and trace import.

All times are in nanoseconds, Rabi frequencies in rad/ns, and the medium
coordinate z is dimensionless on [0, 1].  Signal amplitudes carry units of
sqrt(photons/ns) so that the trapezoid sum of |A|^2 dt is a photon number.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

# intensity-FWHM Gaussian: A(t) = peak * exp(-2 ln2 (t-c)^2 / fwhm^2)
_GAUSS_COEF = 2.0 * np.log(2.0)
# sech pulse: A(t) = peak * sech(2 arccosh(sqrt 2) (t-c) / fwhm)
_SECH_COEF = 2.0 * np.arccosh(np.sqrt(2.0))

CLIP_TOLERANCE = 1e-6      # max allowed edge amplitude relative to peak
OVERLAP_TOLERANCE = 1e-3   # max allowed envelope amplitude at bin midpoints
TRACE_NOISE_FLOOR = 1e-3   # negative-trace clamp threshold (relative to max)


class PulseClippedError(ValueError):
    """A pulse does not fit inside the grid span."""


class PulseOverlapError(ValueError):
    """Adjacent train pulses overlap beyond tolerance."""


class NegativeTraceError(ValueError):
    """An intensity trace has negative entries beyond the noise floor."""


def trapezoid_weights(n: int, step: float) -> np.ndarray:
    """Composite trapezoid quadrature weights for n uniform samples."""
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    return w


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid: samples t_start + k*dt for k = 0..n-1 (ns)."""

    t_start: float
    dt: float
    n: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n < 2:
            raise ValueError(f"need at least 2 samples, got {self.n}")
        if not np.isfinite(self.t_start + (self.n - 1) * self.dt):
            raise ValueError("grid span is not finite")

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n)

    @property
    def t_end(self) -> float:
        return self.t_start + (self.n - 1) * self.dt

    @property
    def span(self) -> float:
        return (self.n - 1) * self.dt

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.n, self.dt)

    def shifted(self, offset: float) -> "TimeGrid":
        return TimeGrid(self.t_start + offset, self.dt, self.n)


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform grid on the dimensionless medium coordinate z in [0, 1]."""

    nz: int

    def __post_init__(self):
        if self.nz < 2:
            raise ValueError(f"need at least 2 z samples, got {self.nz}")

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nz)

    @property
    def dz(self) -> float:
        return 1.0 / (self.nz - 1)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.nz, self.dz)


def _as_complex_samples(grid, values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=complex)
    if arr.shape != (grid.n,):
        raise ValueError(f"{what} must have shape ({grid.n},), got {arr.shape}")
    if not np.all(np.isfinite(arr.view(float))):
        raise ValueError(f"{what} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SignalField:
    """Complex signal amplitude A(t) on a time grid, units sqrt(photons/ns)."""

    grid: TimeGrid
    amp: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amp", _as_complex_samples(self.grid, self.amp, "amp"))

    def energy(self) -> float:
        """Pulse energy in photon units, trapezoid quadrature of |A|^2."""
        return float(np.sum(self.grid.weights * np.abs(self.amp) ** 2))

    def shifted(self, offset: float) -> "SignalField":
        return SignalField(self.grid.shifted(offset), self.amp)


@dataclass(frozen=True)
class ControlField:
    """Control-pulse Rabi envelope Omega(t) on a time grid, rad/ns."""

    grid: TimeGrid
    rabi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rabi", _as_complex_samples(self.grid, self.rabi, "rabi"))

    def energy(self) -> float:
        """Total integrated Rabi energy w_total = int |Omega|^2 dt (rad^2 ns)."""
        return float(np.sum(self.grid.weights * np.abs(self.rabi) ** 2))

    def cumulative_energy(self) -> np.ndarray:
        """Running integral w(t) of |Omega|^2, trapezoid rule; w[0] = 0."""
        f = np.abs(self.rabi) ** 2
        w = np.zeros(self.grid.n)
        np.cumsum(0.5 * self.grid.dt * (f[1:] + f[:-1]), out=w[1:])
        return w

    def scaled_to_energy(self, energy: float) -> "ControlField":
        """Rescale the envelope so the integrated Rabi energy equals `energy`."""
        if energy < 0:
            raise ValueError("control energy must be non-negative")
        w0 = self.energy()
        if w0 == 0.0:
            if energy == 0.0:
                return self
            raise ValueError("cannot rescale a zero control field to finite energy")
        return ControlField(self.grid, self.rabi * np.sqrt(energy / w0))


@dataclass(frozen=True)
class TrainSpec:
    """Pockels-cell pulse-train selection: evenly spaced copies of one base pulse.

    `amplitudes[k]` scales the pulse centred at start_time + k*rep_period;
    a zero entry is a deselected (blocked) slot.
    """

    amplitudes: list = field(default_factory=lambda: [1.0])
    rep_period: float = 12.5
    pulse_duration: float = 0.3
    pulse_shape: str = "gaussian"
    start_time: float = 0.0

    def __post_init__(self):
        amps = [float(a) for a in self.amplitudes]
        object.__setattr__(self, "amplitudes", amps)
        if self.pulse_shape not in ("gaussian", "sech", "imported"):
            raise ValueError(f"unknown pulse shape {self.pulse_shape!r}")
        if not self.rep_period > self.pulse_duration:
            raise ValueError("rep_period must exceed pulse_duration")
        if any(a < 0 for a in amps):
            raise ValueError("train amplitudes must be non-negative")
        if not any(a > 0 for a in amps):
            raise ValueError("train needs at least one nonzero amplitude")

    @property
    def centers(self) -> np.ndarray:
        return self.start_time + self.rep_period * np.arange(len(self.amplitudes))


def gaussian_envelope(t, center: float, fwhm: float, peak: float):
    """Gaussian amplitude envelope with intensity FWHM `fwhm`."""
    return peak * np.exp(-_GAUSS_COEF * ((t - center) / fwhm) ** 2)


def sech_envelope(t, center: float, fwhm: float, peak: float):
    """Hyperbolic-secant amplitude envelope with intensity FWHM `fwhm`."""
    return peak / np.cosh(_SECH_COEF * (t - center) / fwhm)


_ENVELOPES = {"gaussian": gaussian_envelope, "sech": sech_envelope}


def _check_clipping(grid: TimeGrid, envelope, center, fwhm, peak):
    if peak == 0:
        return
    for edge in (grid.t_start, grid.t_end):
        a = abs(envelope(edge, center, fwhm, peak))
        if a >= CLIP_TOLERANCE * abs(peak):
            raise PulseClippedError(
                f"pulse at t={center} ns is clipped: edge amplitude {a:.3e} "
                f"exceeds {CLIP_TOLERANCE:g} x peak on grid "
                f"[{grid.t_start}, {grid.t_end}] ns"
            )


def make_gaussian_pulse(grid: TimeGrid, center: float, fwhm: float, peak: float,
                        *, control: bool = False):
    """Sample a Gaussian pulse on the grid.

    Parameters
    ----------
    grid : TimeGrid
    center : float
        Pulse centre (ns).
    fwhm : float
        Full width at half maximum of the intensity |A|^2 (ns).
    peak : float
        Peak amplitude.  The pulse energy is peak^2 * fwhm * sqrt(pi/ln 16).
    control : bool
        Return a ControlField instead of a SignalField.

    Raises
    ------
    PulseClippedError
        If the envelope at either grid edge exceeds 1e-6 of the peak.
    """
    if not fwhm > 0:
        raise ValueError("fwhm must be positive")
    _check_clipping(grid, gaussian_envelope, center, fwhm, peak)
    amp = gaussian_envelope(grid.times, center, fwhm, peak).astype(complex)
    return ControlField(grid, amp) if control else SignalField(grid, amp)


def make_sech_pulse(grid: TimeGrid, center: float, fwhm: float, peak: float,
                    *, control: bool = False):
    """Sample a sech pulse (intensity FWHM `fwhm`) on the grid."""
    if not fwhm > 0:
        raise ValueError("fwhm must be positive")
    _check_clipping(grid, sech_envelope, center, fwhm, peak)
    amp = sech_envelope(grid.times, center, fwhm, peak).astype(complex)
    return ControlField(grid, amp) if control else SignalField(grid, amp)


def gaussian_pulse_energy(fwhm: float, peak: float) -> float:
    """Closed-form energy of the Gaussian pulse: peak^2 fwhm sqrt(pi/ln 16)."""
    return peak ** 2 * fwhm * np.sqrt(np.pi / np.log(16.0))


def make_train(grid: TimeGrid, spec: TrainSpec, base: SignalField | None = None) -> ControlField:
    """Superpose shifted copies of the base pulse into a control train.

    Pulse k sits at spec.start_time + k*spec.rep_period, scaled by
    spec.amplitudes[k].  For pulse_shape "imported", `base` supplies the
    envelope (peak-normalised internally, centred at its grid's amplitude
    maximum).

    Raises
    ------
    PulseOverlapError
        If the base envelope at half the repetition period exceeds 1e-3 of
        its peak, i.e. neighbouring pulses would overlap at bin midpoints.
    PulseClippedError
        If any selected pulse does not fit in the grid.
    """
    if spec.pulse_shape == "imported":
        if base is None:
            raise ValueError("imported train shape needs a base pulse")
        b = np.abs(base.amp)
        peak_idx = int(np.argmax(b))
        peak = b[peak_idx]
        if peak == 0:
            raise ValueError("imported base pulse is identically zero")
        t_rel = base.grid.times - base.grid.times[peak_idx]

        def envelope(t, center, _fwhm, scale):
            return scale * np.interp(t - center, t_rel, b / peak, left=0.0, right=0.0)

        half = envelope(np.array([spec.rep_period / 2.0]), 0.0, None, 1.0)[0]
    else:
        envelope = _ENVELOPES[spec.pulse_shape]
        half = abs(envelope(spec.rep_period / 2.0, 0.0, spec.pulse_duration, 1.0))

    if half >= OVERLAP_TOLERANCE:
        raise PulseOverlapError(
            f"adjacent pulses overlap: envelope is {half:.3e} of peak at the bin "
            f"midpoint (rep_period {spec.rep_period} ns, duration {spec.pulse_duration} ns)"
        )

    total = np.zeros(grid.n, dtype=complex)
    for k, a in enumerate(spec.amplitudes):
        if a == 0.0:
            continue
        center = spec.start_time + k * spec.rep_period
        if spec.pulse_shape != "imported":
            _check_clipping(grid, envelope, center, spec.pulse_duration, a)
        total += envelope(grid.times, center, spec.pulse_duration, a)
    return ControlField(grid, total)


def amp_from_trace(trace, grid: TimeGrid, eps_noise: float = TRACE_NOISE_FLOOR) -> SignalField:
    """Reconstruct a flat-phase amplitude from a measured intensity trace.

    amp = sqrt(trace); small negative excursions (above -eps_noise * max)
    are clamped to zero as detector noise.

    Raises
    ------
    NegativeTraceError
        If any entry is below -eps_noise * max(trace).
    """
    tr = np.asarray(trace, dtype=float)
    if tr.shape != (grid.n,):
        raise ValueError(f"trace must have shape ({grid.n},), got {tr.shape}")
    peak = float(tr.max(initial=0.0))
    floor = -eps_noise * peak
    if np.any(tr < floor):
        worst = float(tr.min())
        raise NegativeTraceError(
            f"trace entry {worst:.3e} below the noise floor {floor:.3e}"
        )
    return SignalField(grid, np.sqrt(np.clip(tr, 0.0, None)).astype(complex))


def read_trace_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a two-column (time_ns, intensity) CSV trace; header optional."""
    times, values = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            try:
                t = float(row[0])
            except ValueError:
                continue  # header line
            if len(row) < 2:
                raise ValueError(f"{path}: expected two columns, got {row!r}")
            times.append(t)
            values.append(float(row[1]))
    if len(times) < 2:
        raise ValueError(f"{path}: fewer than two samples")
    return np.asarray(times), np.asarray(values)


def signal_from_trace_csv(path, eps_noise: float = TRACE_NOISE_FLOOR) -> SignalField:
    """Load a CSV intensity trace and reconstruct the flat-phase amplitude."""
    t, tr = read_trace_csv(path)
    steps = np.diff(t)
    dt = float(np.median(steps))
    if np.any(np.abs(steps - dt) > 1e-6 * dt):
        raise ValueError(f"{path}: time column is not uniformly sampled")
    grid = TimeGrid(float(t[0]), dt, len(t))
    return amp_from_trace(tr, grid, eps_noise)
