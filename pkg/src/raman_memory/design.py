"""Inverse problems: calibrate the coupling and read energies, design readouts.

Every inversion is a 1-D bisection on a bracket whose monotonicity is
verified by sampling first; the forward solver is the only model of truth.
Storage and each read decouple: the coupling is fixed by the storage
efficiency alone, and each read pulse's energy follows from its target
reflectivity through the single-read efficiency curve of the stored mode.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import DEFAULT_NZ, MemoryParams, SpinWave, solve_storage
from .network import (DEFAULT_REP_PERIOD, DecoherenceModel, ReadoutPlan,
                      _ReadEventSolver, cascade_bins)
from .pulses import (ControlField, SignalField, SpaceGrid, TimeGrid,
                     make_gaussian_pulse, make_sech_pulse)

EFFICIENCY_TOL = 1e-4      # bisection tolerance, in efficiency
MONOTONE_SAMPLES = 5
DEGENERATE_OUTPUT = 1e-12


class InfeasibleTargetError(ValueError):
    """A requested efficiency cannot be reached; carries a feasibility report."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


class NonMonotoneBracketError(RuntimeError):
    """The efficiency map is not monotone on the root-finding bracket."""


class SaturationError(ValueError):
    """A reflectivity exceeds the single-pulse maximum; carries that maximum."""

    def __init__(self, message: str, max_achievable: float):
        super().__init__(message)
        self.max_achievable = max_achievable


@dataclass(frozen=True)
class CalibrationTarget:
    """Measured operating point to fit: storage and single-read efficiency."""

    storage_eff: float = 0.43
    single_read_eff: float = 0.565

    def __post_init__(self):
        for name, v in (("storage_eff", self.storage_eff),
                        ("single_read_eff", self.single_read_eff)):
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")


@dataclass(frozen=True)
class TargetDistribution:
    """Per-bin readout targets.

    mode "absolute": fractions are per-bin output efficiencies relative to
    the input energy.  mode "relative": fractions are proportions; the
    design extracts the full available excitation in those proportions
    (the last read takes everything that remains).
    """

    fractions: tuple
    mode: str = "absolute"

    def __post_init__(self):
        frac = tuple(float(x) for x in self.fractions)
        object.__setattr__(self, "fractions", frac)
        if self.mode not in ("absolute", "relative"):
            raise ValueError(f"unknown target mode {self.mode!r}")
        if not frac:
            raise ValueError("need at least one target bin")
        if any(x < 0 for x in frac):
            raise ValueError("target fractions must be non-negative")
        if self.mode == "relative" and sum(frac) <= 0:
            raise ValueError("relative targets need a positive total")

    def normalized(self) -> np.ndarray:
        f = np.asarray(self.fractions)
        return f / f.sum() if self.mode == "relative" else f


@dataclass(frozen=True)
class CalibrationSetup:
    """Reference pulse shapes and grids used for calibration runs."""

    pulse_fwhm: float = 0.3
    pulse_shape: str = "gaussian"
    dt: float = 0.01
    nz: int = DEFAULT_NZ
    coupling_cap: float = 400.0
    energy_cap: float = 400.0
    read_spacing: float = DEFAULT_REP_PERIOD

    def window_half(self) -> float:
        # Gaussian needs ~3.2 fwhm for the 1e-6 clip margin, sech ~6.2
        return (4.0 if self.pulse_shape == "gaussian" else 7.5) * self.pulse_fwhm

    def storage_fields(self) -> tuple[SignalField, ControlField]:
        half = self.window_half()
        n = int(round(2.0 * half / self.dt)) + 1
        grid = TimeGrid(0.0, self.dt, n)
        maker = make_gaussian_pulse if self.pulse_shape == "gaussian" else make_sech_pulse
        signal = maker(grid, half, self.pulse_fwhm, 1.0)
        signal = SignalField(grid, signal.amp / np.sqrt(signal.energy()))
        write = maker(grid, half, self.pulse_fwhm, 1.0, control=True)
        return signal, write


@dataclass(frozen=True)
class CalibrationResult:
    """A fitted operating point plus the reference objects it was fitted on."""

    params: MemoryParams
    read_energy: float
    achieved_storage: float
    achieved_read: float
    write_energy: float
    setup: CalibrationSetup
    signal: SignalField
    write: ControlField
    stored_mode: SpinWave

    def read_solver(self) -> _ReadEventSolver:
        return _ReadEventSolver(self.stored_mode, self.params, self.setup.dt,
                                self.setup.read_spacing / 2.0,
                                self.setup.pulse_fwhm, self.setup.pulse_shape)


def verify_monotone(f, xs, values=None, slack: float = 1e-9):
    """Evaluate f on xs (unless given) and require a non-decreasing sequence."""
    ys = [f(x) for x in xs] if values is None else list(values)
    for (x1, y1), (x2, y2) in zip(zip(xs, ys), zip(xs[1:], ys[1:])):
        if y2 < y1 - slack:
            raise NonMonotoneBracketError(
                f"map is not monotone on the bracket: f({x1:g})={y1:.6g} "
                f"> f({x2:g})={y2:.6g}")
    return ys


def bisect_increasing(f, lo: float, hi: float, target: float,
                      f_tol: float = EFFICIENCY_TOL, max_iter: int = 200) -> float:
    """Bisect a verified-increasing map until |f(x) - target| < f_tol."""
    xs = list(np.linspace(lo, hi, MONOTONE_SAMPLES))
    ys = verify_monotone(f, xs)
    if not ys[0] - f_tol <= target <= ys[-1] + f_tol:
        raise InfeasibleTargetError(
            f"target {target:.6g} outside bracket range [{ys[0]:.6g}, {ys[-1]:.6g}]",
            {"bracket": [lo, hi], "range": [ys[0], ys[-1]]})
    # narrow using the samples already paid for
    k = int(np.searchsorted(ys, target))
    lo, flo = (xs[k - 1], ys[k - 1]) if k > 0 else (xs[0], ys[0])
    hi, fhi = (xs[k], ys[k]) if k < len(xs) else (xs[-1], ys[-1])
    if abs(flo - target) < f_tol:
        return lo
    if abs(fhi - target) < f_tol:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm - target) < f_tol:
            return mid
        if fm < target:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("bisection failed to converge")


def storage_efficiency_curve(setup: CalibrationSetup):
    """Return f(C) = storage efficiency of the reference pulses, plus the fields."""
    signal, write = setup.storage_fields()
    space = SpaceGrid(setup.nz)
    e_in = signal.energy()

    def f(coupling: float) -> float:
        _, b = solve_storage(signal, write, MemoryParams(coupling), space=space)
        return b.excitation() / e_in

    return f, signal, write, space


def calibrate(target: CalibrationTarget,
              setup: CalibrationSetup = CalibrationSetup(),
              f_tol: float = EFFICIENCY_TOL) -> CalibrationResult:
    """Fit the coupling to the storage efficiency, then the read energy.

    Stage 1 root-finds C so that the reference signal/write pair stores the
    target fraction; stage 2 root-finds the control energy whose single
    read retrieves the target fraction of the stored mode.  Both maps are
    verified monotone on their brackets.
    """
    f_storage, signal, write, space = storage_efficiency_curve(setup)

    if target.storage_eff == 0.0:
        coupling = 0.0
    else:
        top = f_storage(setup.coupling_cap)
        if top < target.storage_eff:
            raise InfeasibleTargetError(
                f"storage target {target.storage_eff} exceeds the maximum "
                f"{top:.4f} reachable below the coupling cap {setup.coupling_cap}",
                {"max_storage": top, "coupling_cap": setup.coupling_cap})
        coupling = bisect_increasing(f_storage, 0.0, setup.coupling_cap,
                                     target.storage_eff, f_tol)

    params = MemoryParams(coupling)
    _, b_stored = solve_storage(signal, write, params, space=space)
    stored = b_stored.excitation()
    if stored > 0:
        mode = SpinWave(space, b_stored.amp / np.sqrt(stored))
    else:
        mode = SpinWave(space, np.ones(space.nz, dtype=complex))
    achieved_storage = stored / signal.energy()

    solver = _ReadEventSolver(mode, params, setup.dt, setup.read_spacing / 2.0,
                              setup.pulse_fwhm, setup.pulse_shape)
    if target.single_read_eff == 0.0 or coupling == 0.0:
        if target.single_read_eff > 0.0:
            raise InfeasibleTargetError(
                "cannot retrieve from a memory with zero coupling",
                {"max_read": 0.0})
        read_energy, achieved_read = 0.0, 0.0
    else:
        top = solver.efficiency(setup.energy_cap)
        if top < target.single_read_eff:
            raise InfeasibleTargetError(
                f"single-read target {target.single_read_eff} exceeds the "
                f"maximum {top:.4f} reachable below the energy cap {setup.energy_cap}",
                {"max_read": top, "energy_cap": setup.energy_cap})
        read_energy = bisect_increasing(solver.efficiency, 0.0, setup.energy_cap,
                                        target.single_read_eff, f_tol)
        achieved_read = solver.efficiency(read_energy)

    return CalibrationResult(
        params=params,
        read_energy=read_energy,
        achieved_storage=achieved_storage,
        achieved_read=achieved_read,
        write_energy=write.energy(),
        setup=setup,
        signal=signal,
        write=write,
        stored_mode=mode,
    )


@dataclass(frozen=True)
class DesignResult:
    """A designed readout: reflectivities, predicted bins and realised energies."""

    read_times: tuple
    etas: tuple
    predicted_bins: tuple     # per-bin output efficiency vs input energy
    storage_eff: float
    feasibility: dict
    energies: tuple | None = None

    def to_plan(self, pulse_fwhm: float = 0.3, pulse_shape: str = "gaussian") -> ReadoutPlan:
        if self.energies is None:
            raise ValueError("design has no realised energies yet")
        return ReadoutPlan(self.read_times, self.energies, pulse_fwhm,
                           pulse_shape, predicted_bins=self.predicted_bins)


def required_reflectivities(target: TargetDistribution, storage_eff: float,
                            read_times, model: DecoherenceModel,
                            t_write: float = 0.0) -> DesignResult:
    """Per-read reflectivities that realise a target output distribution.

    Recursion on the surviving excitation: eta_k = wanted_k / available_k
    with available_k = storage * (accumulated survival) * prod_{j<k}(1-eta_j).
    A feasibility report (the per-bin output ceilings, i.e. available_k for
    eta_k = 1 given earlier targets) is computed before solving and carried
    by the infeasibility error if any eta_k would exceed 1.
    """
    times = tuple(float(t) for t in read_times)
    wanted = target.normalized()
    if len(times) != len(wanted):
        raise ValueError("need one read time per target bin")

    if target.mode == "relative":
        # full extraction in the given proportions: the last read takes all
        # that remains, which fixes the overall scale.
        surv = np.array([model.survival(t2 - t1) for t1, t2 in
                         zip((t_write,) + times[:-1], times)])
        tail = np.array([np.prod(surv[j + 1:]) for j in range(len(times))])
        scale = storage_eff * np.prod(surv) / float(np.sum(wanted * tail))
        wanted = wanted * scale

    etas = []
    ceilings = []
    available = storage_eff
    t_prev = t_write
    feasible = True
    for k, (w_k, t_k) in enumerate(zip(wanted, times)):
        available *= model.survival(t_k - t_prev)
        ceilings.append(available)
        eta = w_k / available if available > 0 else np.inf
        etas.append(eta)
        available *= max(0.0, 1.0 - eta)
        t_prev = t_k
        if eta > 1.0 + 1e-12:
            feasible = False
    report = {
        "feasible": feasible,
        "max_bin_fractions": ceilings,
        "targets": list(wanted),
        "reflectivities": etas,
    }
    if not feasible:
        bad = next(k for k, e in enumerate(etas) if e > 1.0 + 1e-12)
        raise InfeasibleTargetError(
            f"bin {bad} wants {wanted[bad]:.4g} of the input but only "
            f"{ceilings[bad]:.4g} is available (reflectivity {etas[bad]:.3f} > 1)",
            report)
    etas = [min(e, 1.0) for e in etas]
    bins = cascade_bins(storage_eff, etas, times, model, t_write)
    return DesignResult(times, tuple(etas), tuple(float(b) for b in bins),
                        storage_eff, report)


def energies_from_reflectivities(etas, calibration: CalibrationResult,
                                 f_tol: float = EFFICIENCY_TOL,
                                 energy_cap: float | None = None) -> tuple:
    """Control energies realising the given reflectivities, one root find each.

    The map eta(E) is the single-read efficiency of the calibrated stored
    mode ("the reflectivity is set by the energy in the control"); it is
    verified monotone on each bracket.  Reflectivities above the
    single-pulse maximum raise SaturationError carrying that maximum.
    """
    cap = energy_cap if energy_cap is not None else calibration.setup.energy_cap
    solver = calibration.read_solver()
    energies = []
    for k, eta in enumerate(etas):
        eta = float(eta)
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"reflectivity {eta} outside [0, 1]")
        if eta == 0.0:
            energies.append(0.0)
            continue
        top = solver.efficiency(cap)
        if eta > top + f_tol:
            raise SaturationError(
                f"reflectivity {eta:.4f} for read {k} exceeds the single-pulse "
                f"maximum {top:.4f} at the energy cap {cap:g}", top)
        energies.append(bisect_increasing(solver.efficiency, 0.0, cap, eta, f_tol))
    return tuple(energies)


def design_readout(target: TargetDistribution, calibration: CalibrationResult,
                   read_times, model: DecoherenceModel, t_write: float = 0.0,
                   f_tol: float = EFFICIENCY_TOL) -> DesignResult:
    """required_reflectivities + energies_from_reflectivities in one step."""
    design = required_reflectivities(target, calibration.achieved_storage,
                                     read_times, model, t_write)
    energies = energies_from_reflectivities(design.etas, calibration, f_tol)
    return replace(design, energies=energies)


def w_state_amplitudes(design, model: DecoherenceModel | None = None):
    """Normalised per-bin amplitudes of the designed single-excitation state.

    amplitude_k = sqrt(bin_k efficiency) with the flat-phase convention;
    returns (amplitudes, success_probability) where the success probability
    is the un-normalised total output efficiency.
    """
    bins = np.asarray(design.predicted_bins, dtype=float)
    if bins.size < 1:
        raise ValueError("design has no bins")
    total = float(bins.sum())
    if total < DEGENERATE_OUTPUT:
        raise ValueError("total output efficiency is degenerate (< 1e-12)")
    return np.sqrt(bins / total), total
