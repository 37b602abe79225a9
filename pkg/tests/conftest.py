import numpy as np
import pytest

import raman_memory as rm


@pytest.fixture(scope="session")
def calib43():
    """Paper operating point: storage 43%, single-read 56.5%."""
    return rm.calibrate(rm.CalibrationTarget(0.43, 0.565))


@pytest.fixture(scope="session")
def calib40():
    """Shaped-readout operating point: storage 40%."""
    return rm.calibrate(rm.CalibrationTarget(0.40, 0.565))


@pytest.fixture()
def small_scenario():
    """Cheap co-timed Gaussian signal/write pair for unit tests."""
    grid = rm.TimeGrid(0.0, 0.02, 141)
    signal = rm.make_gaussian_pulse(grid, 1.4, 0.3, 1.0)
    write = rm.make_gaussian_pulse(grid, 1.4, 0.3, 1.0, control=True)
    return grid, signal, write, rm.SpaceGrid(101)


def random_case(rng, nz=161):
    """One randomized storage scenario: shape, widths, coupling, energy."""
    shape = rng.choice(["gaussian", "sech"])
    fwhm = rng.uniform(0.2, 0.5)
    dt = 0.01
    half = (4.0 if shape == "gaussian" else 7.5) * fwhm
    n = int(round(2 * half / dt)) + 1
    grid = rm.TimeGrid(0.0, dt, n)
    maker = rm.make_gaussian_pulse if shape == "gaussian" else rm.make_sech_pulse
    offset = rng.uniform(-0.2, 0.2) * fwhm
    signal = maker(grid, half + offset / 2, fwhm * rng.uniform(0.8, 1.2), 1.0)
    peak = rng.uniform(0.5, 2.0)
    write = maker(grid, half, fwhm, peak, control=True)
    strength = rng.uniform(0.05, 3.0)  # dimensionless C * control energy
    params = rm.MemoryParams(strength / write.energy())
    return grid, signal, write, params, rm.SpaceGrid(nz)
