"""Schmidt-mode decomposition of memory kernels into beam-splitter channels.

The SVD of the quadrature-weighted kernel pairs one input mode with one
output mode per channel; the squared singular value is that channel's
beam-splitter reflectivity (fraction of mode energy converted between
light and spin wave).  Weighting by sqrt(dt), sqrt(dz) before the SVD makes
the modes orthonormal in the continuum inner product, so reflectivities
are grid-independent to quadrature order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import KernelMatrix
from .pulses import SignalField

DEFAULT_MODE_CUTOFF = 1e-6
RECONSTRUCTION_TOL = 1e-10
ORTHONORMALITY_TOL = 1e-8


@dataclass(frozen=True)
class ModeDecomposition:
    """Independent beam-splitter channels of one storage/retrieval kernel.

    input_modes / output_modes hold one mode per row, orthonormal under the
    trapezoid inner product on their own coordinate (time for storage
    inputs, z for storage outputs; swapped for retrieval kernels).
    """

    kind: str
    input_modes: np.ndarray
    output_modes: np.ndarray
    singular_values: np.ndarray
    input_weights: np.ndarray
    output_weights: np.ndarray
    input_coordinate: np.ndarray
    output_coordinate: np.ndarray

    @property
    def reflectivities(self) -> np.ndarray:
        return self.singular_values ** 2

    @property
    def n_modes(self) -> int:
        return len(self.singular_values)

    def input_mode(self, k: int) -> np.ndarray:
        return self.input_modes[k]

    def output_mode(self, k: int) -> np.ndarray:
        return self.output_modes[k]


def _fix_phases(u: np.ndarray, vh: np.ndarray):
    """Rotate each singular pair so the dominant output component is real positive."""
    for k in range(u.shape[1]):
        idx = int(np.argmax(np.abs(u[:, k])))
        pivot = u[idx, k]
        if pivot != 0:
            phase = pivot / abs(pivot)
            u[:, k] /= phase
            vh[k, :] *= np.conj(phase)
    return u, vh


def decompose(kernel: KernelMatrix, cutoff: float = DEFAULT_MODE_CUTOFF) -> ModeDecomposition:
    """SVD of the quadrature-weighted kernel.

    Modes with singular value below `cutoff` are truncated (pass 0 to keep
    everything).  Raises if the SVD fails to reconstruct the kernel to
    1e-10 relative, which would indicate a numerical failure.
    """
    weighted = kernel.weighted()
    u, s, vh = np.linalg.svd(weighted, full_matrices=False)
    norm = np.linalg.norm(weighted)
    if norm > 0:
        err = np.linalg.norm((u * s) @ vh - weighted) / norm
        if err > RECONSTRUCTION_TOL:
            raise np.linalg.LinAlgError(
                f"SVD reconstruction error {err:.2e} exceeds {RECONSTRUCTION_TOL:g}")
    keep = s >= cutoff if cutoff > 0 else slice(None)
    u, s, vh = u[:, keep], s[keep], vh[keep, :]
    u, vh = _fix_phases(u.copy(), vh.copy())

    win = kernel.input_weights
    wout = kernel.output_weights
    if kernel.kind == "storage":
        in_coord, out_coord = kernel.time_grid.times, kernel.space_grid.z
    else:
        in_coord, out_coord = kernel.space_grid.z, kernel.time_grid.times
    return ModeDecomposition(
        kind=kernel.kind,
        input_modes=np.conj(vh) / np.sqrt(win)[None, :],
        output_modes=u.T / np.sqrt(wout)[None, :],
        singular_values=s,
        input_weights=win,
        output_weights=wout,
        input_coordinate=in_coord,
        output_coordinate=out_coord,
    )


def mode_overlap(field, decomposition: ModeDecomposition, k: int) -> complex:
    """Quadrature inner product of a field with the k-th input mode."""
    if not 0 <= k < decomposition.n_modes:
        raise IndexError(f"mode index {k} out of range (have {decomposition.n_modes})")
    values = field.amp if isinstance(field, SignalField) else np.asarray(field, dtype=complex)
    if values.shape != decomposition.input_modes[k].shape:
        raise ValueError("field is not sampled on the decomposition's input grid")
    return complex(np.sum(decomposition.input_weights
                          * np.conj(decomposition.input_modes[k]) * values))


def overlaps(field, decomposition: ModeDecomposition) -> np.ndarray:
    """Inner products with every input mode at once."""
    values = field.amp if isinstance(field, SignalField) else np.asarray(field, dtype=complex)
    return (decomposition.input_modes.conj()
            * (decomposition.input_weights * values)[None, :]).sum(axis=1)


def stored_energy_by_modes(field, decomposition: ModeDecomposition) -> float:
    """Beam-splitter bookkeeping: sum_k r_k |<mode_k, field>|^2."""
    c = overlaps(field, decomposition)
    return float(np.sum(decomposition.reflectivities * np.abs(c) ** 2))


def export_modes_csv(decomposition: ModeDecomposition, path, which: str = "input",
                     imag_tol: float = 1e-9) -> None:
    """Write modes as CSV: leading column is the grid coordinate, one column per mode.

    Modes are phase-fixed at decomposition time; a residual imaginary part
    above `imag_tol` (relative to the mode peak) is an error.
    """
    if which == "input":
        modes, coord = decomposition.input_modes, decomposition.input_coordinate
    elif which == "output":
        modes, coord = decomposition.output_modes, decomposition.output_coordinate
    else:
        raise ValueError("which must be 'input' or 'output'")
    peak = max(np.max(np.abs(modes)), 1e-300)
    if np.max(np.abs(modes.imag)) > imag_tol * peak:
        raise ValueError("modes have non-negligible imaginary parts; "
                         "export supports phase-fixed real modes only")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["coordinate"] + [f"mode_{k}" for k in range(modes.shape[0])])
        for i, x in enumerate(coord):
            writer.writerow([repr(float(x))] + [repr(float(m)) for m in modes[:, i].real])
