"""Broadband Raman memory as a configurable temporal beam-splitter network.

A stored light pulse becomes a spin wave; trains of read control pulses
convert it back into a sequence of time bins with per-pulse reflectivities
set by the control energies.  The package provides the storage/retrieval
solver and its Bessel-function kernel oracles, Schmidt-mode analysis,
multi-pulse readout bookkeeping with analytic decoherence, inverse design
of readout trains, and two-memory interference.
"""

from .pulses import (CLIP_TOLERANCE, ControlField, NegativeTraceError,
                     PulseClippedError, PulseOverlapError, SignalField,
                     SpaceGrid, TimeGrid, TrainSpec, amp_from_trace,
                     gaussian_pulse_energy, make_gaussian_pulse, make_sech_pulse,
                     make_train, signal_from_trace_csv, trapezoid_weights)
from .dynamics import (DEFAULT_NZ, ConvergenceError, KernelMatrix,
                       KernelMismatchError, MemoryParams, ResourceLimitError,
                       SpinWave, assert_green_equivalence, bessel_green_retrieval,
                       bessel_green_storage, build_kernel, kernel_deviation,
                       load_kernel, save_kernel, solve_retrieval, solve_storage,
                       spin_transmission_bessel)
from .modes import (ModeDecomposition, decompose, export_modes_csv, mode_overlap,
                    overlaps, stored_energy_by_modes)
from .network import (BinOutput, DecoherenceModel, ExperimentRecord,
                      GatingAmbiguityError, ReadoutPlan, apply_decoherence,
                      build_read_train, cascade_bins, combined_readout_efficiency,
                      equivalent_train_run, record_to_dict, run_multipulse,
                      save_record_json, save_traces_csv)
from .design import (CalibrationResult, CalibrationSetup, CalibrationTarget,
                     DesignResult, InfeasibleTargetError, NonMonotoneBracketError,
                     SaturationError, TargetDistribution, bisect_increasing,
                     calibrate, design_readout, energies_from_reflectivities,
                     required_reflectivities, w_state_amplitudes)
from .interferometer import (InterferenceResult, InterferometerConfig,
                             per_bin_energies, per_bin_visibility,
                             run_interference, save_interference_csv)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
