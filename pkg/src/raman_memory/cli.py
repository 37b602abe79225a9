"""Batch front end: config-driven simulate / design / calibrate / interfere.

Configs are YAML with explicit unit suffixes on every physical quantity
("10 ps", "899 ns", "15 GHz"); dimensionless numbers (couplings, fractions,
phases in rad) are plain numbers.  Commands write JSON/CSV artifacts and
use exit codes 0 (ok), 2 (config error), 3 (solver error), 4 (infeasible
design target), with a machine-readable error JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .design import (CalibrationResult, CalibrationSetup, CalibrationTarget,
                     InfeasibleTargetError, NonMonotoneBracketError,
                     SaturationError, TargetDistribution, calibrate,
                     energies_from_reflectivities, required_reflectivities)
from .dynamics import (DEFAULT_NZ, ConvergenceError, KernelMismatchError,
                       MemoryParams, SpinWave, solve_storage)
from .interferometer import (InterferometerConfig, run_interference,
                             save_interference_csv)
from .network import (DecoherenceModel, GatingAmbiguityError, ReadoutPlan,
                      equivalent_train_run, record_to_dict, run_multipulse,
                      save_record_json, save_traces_csv)
from .pulses import (PulseClippedError, PulseOverlapError, SignalField,
                     SpaceGrid, TimeGrid, make_gaussian_pulse, make_sech_pulse)

SCHEMA_VERSION = 1

_TIME_UNITS = {"ns": 1.0, "ps": 1e-3, "us": 1e3, "µs": 1e3, "ms": 1e6}
_FREQ_UNITS = {"GHz": 1.0, "MHz": 1e-3, "kHz": 1e-6}


class ConfigError(ValueError):
    pass


def parse_time(value, where: str) -> float:
    """Parse a time quantity with a mandatory unit suffix; returns ns."""
    return _parse_quantity(value, _TIME_UNITS, where, "ns/ps/us/ms")


def parse_freq(value, where: str) -> float:
    """Parse a frequency quantity with a mandatory unit suffix; returns GHz."""
    return _parse_quantity(value, _FREQ_UNITS, where, "GHz/MHz/kHz")


def _parse_quantity(value, units: dict, where: str, expected: str) -> float:
    if not isinstance(value, str):
        raise ConfigError(f"{where}: physical quantities need a unit "
                          f"({expected}); got {value!r}")
    parts = value.split()
    if len(parts) != 2 or parts[1] not in units:
        raise ConfigError(f"{where}: expected '<number> <{expected}>', got {value!r}")
    try:
        number = float(parts[0])
    except ValueError:
        raise ConfigError(f"{where}: cannot parse number in {value!r}") from None
    return number * units[parts[1]]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a plain number, got {value!r}")
    return float(value)


def _section(cfg: dict, name: str, required: bool = False) -> dict:
    value = cfg.get(name)
    if value is None:
        if required:
            raise ConfigError(f"missing config section {name!r}")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return value


def load_config(path, grid_scale: float = 1.0) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    if grid_scale != 1.0:
        if grid_scale < 1.0:
            raise ConfigError("--grid-scale must be >= 1")
        cfg["_grid_scale"] = float(grid_scale)
    return cfg


class Experiment:
    """Everything a command needs, parsed from one config."""

    def __init__(self, cfg: dict):
        scale = float(cfg.get("_grid_scale", 1.0))
        grid = _section(cfg, "grid")
        self.dt = parse_time(grid.get("dt", "10 ps"), "grid.dt") / scale
        nz = int(grid.get("nz", DEFAULT_NZ))
        self.nz = (nz - 1) * int(round(scale)) + 1 if scale != 1.0 else nz
        self.space = SpaceGrid(self.nz)

        sig = _section(cfg, "signal")
        self.signal_fwhm = parse_time(sig.get("fwhm", "300 ps"), "signal.fwhm")
        self.signal_energy = _number(sig.get("energy", 1.0), "signal.energy")
        self.signal_shape = sig.get("shape", "gaussian")
        self.t_write = parse_time(sig.get("center", "0 ns"), "signal.center")

        wr = _section(cfg, "write")
        self.write_fwhm = parse_time(wr.get("fwhm", "300 ps"), "write.fwhm")
        self.write_energy = wr.get("energy")
        if self.write_energy is not None:
            self.write_energy = _number(self.write_energy, "write.energy")

        dec = _section(cfg, "decoherence")
        self.model = DecoherenceModel(
            kappa_ref=_number(dec.get("survival", 0.7), "decoherence.survival"),
            t_ref=parse_time(dec.get("reference_time", "900 ns"),
                             "decoherence.reference_time"),
        )

        self.memory_cfg = _section(cfg, "memory")
        self.calibration_cfg = _section(cfg, "calibration")
        if self.memory_cfg and self.calibration_cfg:
            raise ConfigError("give either 'memory' or 'calibration', not both")
        if "from_file" in self.memory_cfg:
            params_path = Path(self.memory_cfg["from_file"])
            try:
                loaded = json.loads(params_path.read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read params file {params_path}: {exc}") from exc
            self.memory_cfg = {"coupling": loaded["coupling"],
                               "detuning": f"{loaded['detuning']} GHz"}

        self.reads_cfg = _section(cfg, "reads")
        self.interference_cfg = _section(cfg, "interference")
        self.output_dir = _section(cfg, "output").get("dir")
        self._calibration: CalibrationResult | None = None

    # -- memory operating point ------------------------------------------

    def _setup(self) -> CalibrationSetup:
        return CalibrationSetup(pulse_fwhm=self.write_fwhm,
                                pulse_shape=self.signal_shape,
                                dt=self.dt, nz=self.nz,
                                read_spacing=self._read_spacing())

    def operating_point(self) -> CalibrationResult:
        """Calibrated result, from targets or from explicit parameters."""
        if self._calibration is not None:
            return self._calibration
        setup = self._setup()
        if self.calibration_cfg:
            target = CalibrationTarget(
                storage_eff=_number(self.calibration_cfg.get("storage_efficiency", 0.43),
                                    "calibration.storage_efficiency"),
                single_read_eff=_number(
                    self.calibration_cfg.get("single_read_efficiency", 0.565),
                    "calibration.single_read_efficiency"),
            )
            self._calibration = calibrate(target, setup)
        else:
            if "coupling" not in self.memory_cfg:
                raise ConfigError("need memory.coupling or a calibration section")
            params = MemoryParams(
                coupling=_number(self.memory_cfg["coupling"], "memory.coupling"),
                detuning=parse_freq(self.memory_cfg.get("detuning", "15 GHz"),
                                    "memory.detuning"),
            )
            signal, write = setup.storage_fields()
            _, stored = solve_storage(signal, write, params, space=self.space)
            exc = stored.excitation()
            mode = SpinWave(self.space, stored.amp / np.sqrt(exc)) if exc > 0 \
                else SpinWave(self.space, np.ones(self.nz, dtype=complex))
            self._calibration = CalibrationResult(
                params=params, read_energy=0.0,
                achieved_storage=exc / signal.energy(),
                achieved_read=0.0, write_energy=write.energy(),
                setup=setup, signal=signal, write=write, stored_mode=mode)
        return self._calibration

    # -- pulses and plans --------------------------------------------------

    def storage_fields(self, calib: CalibrationResult) -> tuple[SignalField, object]:
        signal = calib.signal
        write = calib.write
        if self.signal_energy != 1.0:
            signal = SignalField(signal.grid,
                                 signal.amp * np.sqrt(self.signal_energy))
        if self.write_energy is not None:
            write = write.scaled_to_energy(self.write_energy)
        if self.t_write != 0.0:
            # pulses are built centred in their window; shift to absolute time
            offset = self.t_write - signal.grid.times[int(np.argmax(np.abs(signal.amp)))]
            signal = signal.shifted(offset)
            write = type(write)(write.grid.shifted(offset), write.rabi)
        return signal, write

    def read_times(self) -> tuple:
        reads = self.reads_cfg
        if "times" in reads:
            return tuple(parse_time(t, "reads.times") for t in reads["times"])
        if "start" in reads:
            start = parse_time(reads["start"], "reads.start")
            period = parse_time(reads.get("period", "12.5 ns"), "reads.period")
            count = int(reads.get("count", 1))
            return tuple(start + k * period for k in range(count))
        if not reads:
            return ()
        raise ConfigError("reads need 'times' or 'start'/'period'/'count'")

    def _read_spacing(self) -> float:
        try:
            times = self.read_times()
        except ConfigError:
            return 12.5
        if len(times) < 2:
            return 12.5
        return float(min(np.diff(times)))

    def read_mode(self) -> str:
        reads = self.reads_cfg
        given = [k for k in ("energies", "reflectivities", "targets") if k in reads]
        if len(given) > 1:
            raise ConfigError(f"reads must give exactly one of energies/"
                              f"reflectivities/targets, got {given}")
        if not given:
            if self.read_times() == ():
                return "none"
            raise ConfigError("reads need energies, reflectivities or targets")
        return given[0]

    def target_distribution(self) -> TargetDistribution:
        t = self.reads_cfg["targets"]
        if not isinstance(t, dict) or "fractions" not in t:
            raise ConfigError("reads.targets needs a 'fractions' list")
        return TargetDistribution(
            fractions=tuple(_number(x, "reads.targets.fractions") for x in t["fractions"]),
            mode=t.get("mode", "absolute"))

    def resolve_plan(self) -> tuple[ReadoutPlan, dict | None]:
        """Build the readout plan, designing energies if needed."""
        times = self.read_times()
        fwhm = parse_time(self.reads_cfg.get("fwhm", "300 ps"), "reads.fwhm")
        shape = self.reads_cfg.get("shape", "gaussian")
        mode = self.read_mode()
        if mode == "none":
            return ReadoutPlan((), (), fwhm, shape), None
        if mode == "energies":
            energies = tuple(_number(e, "reads.energies")
                             for e in self.reads_cfg["energies"])
            return ReadoutPlan(times, energies, fwhm, shape), None
        calib = self.operating_point()
        if mode == "reflectivities":
            etas = tuple(_number(e, "reads.reflectivities")
                         for e in self.reads_cfg["reflectivities"])
            if len(etas) != len(times):
                raise ConfigError("one reflectivity per read time required")
            energies = energies_from_reflectivities(etas, calib)
            return ReadoutPlan(times, energies, fwhm, shape), None
        design = required_reflectivities(self.target_distribution(),
                                         calib.achieved_storage, times,
                                         self.model, self.t_write)
        energies = energies_from_reflectivities(design.etas, calib)
        plan = ReadoutPlan(times, energies, fwhm, shape,
                           predicted_bins=design.predicted_bins)
        return plan, {"etas": list(design.etas),
                      "predicted_bins": list(design.predicted_bins),
                      "feasibility": design.feasibility}


def _dump_json(data: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(cfg: dict, out_dir: Path) -> int:
    exp = Experiment(cfg)
    calib = exp.operating_point()
    signal, write = exp.storage_fields(calib)
    plan, design_info = exp.resolve_plan()
    record = run_multipulse(signal, write, plan, calib.params, exp.model,
                            space=exp.space, t_write=exp.t_write)
    summary = record_to_dict(record)
    summary["coupling"] = calib.params.coupling
    if design_info:
        summary["design"] = design_info
    _dump_json(summary, out_dir / "summary.json")
    save_traces_csv(record, out_dir / "traces.csv")
    return 0


def cmd_design(cfg: dict, out_dir: Path) -> int:
    exp = Experiment(cfg)
    if exp.read_mode() != "targets":
        raise ConfigError("design needs a reads.targets section")
    calib = exp.operating_point()
    times = exp.read_times()
    design = required_reflectivities(exp.target_distribution(),
                                     calib.achieved_storage, times,
                                     exp.model, exp.t_write)
    energies = energies_from_reflectivities(design.etas, calib)
    _dump_json({
        "schema_version": SCHEMA_VERSION,
        "read_times_ns": list(times),
        "reflectivities": list(design.etas),
        "energies": list(energies),
        "predicted_bins": list(design.predicted_bins),
        "storage_efficiency": design.storage_eff,
        "feasibility": design.feasibility,
    }, out_dir / "design.json")
    return 0


def cmd_calibrate(cfg: dict, out_dir: Path) -> int:
    exp = Experiment(cfg)
    if not exp.calibration_cfg:
        raise ConfigError("calibrate needs a calibration section")
    calib = exp.operating_point()
    _dump_json({
        "schema_version": SCHEMA_VERSION,
        "coupling": calib.params.coupling,
        "detuning": calib.params.detuning,
        "read_energy": calib.read_energy,
        "write_energy": calib.write_energy,
        "achieved_storage": calib.achieved_storage,
        "achieved_read": calib.achieved_read,
    }, out_dir / "params.json")
    return 0


def cmd_interfere(cfg: dict, out_dir: Path) -> int:
    exp = Experiment(cfg)
    icfg = exp.interference_cfg
    arm_b_over = icfg.get("arm_b", {})

    def run_arm(overrides: dict):
        merged = dict(cfg)
        for key, val in overrides.items():
            base = dict(merged.get(key) or {})
            base.update(val)
            merged[key] = base
        arm = Experiment(merged)
        calib = arm.operating_point()
        signal, write = arm.storage_fields(calib)
        plan, _ = arm.resolve_plan()
        record = equivalent_train_run(signal, write, plan, calib.params,
                                      arm.model, space=arm.space,
                                      t_write=arm.t_write)
        return record.bin_traces[0]

    trace_a = run_arm({})
    trace_b = run_arm(arm_b_over) if arm_b_over else trace_a
    config = InterferometerConfig(
        relative_phase=_number(icfg.get("phase", 0.0), "interference.phase"),
        amplitude_split=_number(icfg.get("split", 0.5), "interference.split"),
        analysis_basis=icfg.get("basis", "both"),
    )
    result = run_interference(trace_a, trace_b, config)
    save_interference_csv(result, out_dir / "interference.csv")
    _dump_json({
        "schema_version": SCHEMA_VERSION,
        "visibility": result.visibility,
        "visibility_analytic": result.visibility_analytic,
        "arm_energy_a": result.arm_energy_a,
        "arm_energy_b": result.arm_energy_b,
        "phase": config.relative_phase,
        "split": config.amplitude_split,
    }, out_dir / "interference.json")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "design": cmd_design,
    "calibrate": cmd_calibrate,
    "interfere": cmd_interfere,
}

_CONFIG_ERRORS = (ConfigError, PulseClippedError, PulseOverlapError, ValueError)
_SOLVER_ERRORS = (ConvergenceError, GatingAmbiguityError, KernelMismatchError,
                  NonMonotoneBracketError, np.linalg.LinAlgError)
_INFEASIBLE_ERRORS = (InfeasibleTargetError, SaturationError)


def _emit_error(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    report = getattr(exc, "report", None)
    if report:
        payload["report"] = report
    if isinstance(exc, SaturationError):
        payload["max_achievable"] = exc.max_achievable
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="raman-memory",
        description="Simulate and design multi-pulse readout of a Raman memory.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--grid-scale", type=float, default=1.0,
                       help="uniform grid refinement factor for convergence studies")
        p.add_argument("--seed", type=int, default=None,
                       help="reserved; the model is deterministic")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, args.grid_scale)
        out_dir = Path(args.out) if args.out else Path(cfg.get("output", {}).get("dir", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out_dir)
    except _INFEASIBLE_ERRORS as exc:
        return _emit_error(exc, 4)
    except _SOLVER_ERRORS as exc:
        return _emit_error(exc, 3)
    except _CONFIG_ERRORS as exc:
        return _emit_error(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
