"""Shared solved value functions; solving is the expensive part, so these
are session-scoped and reused across modules."""

import math

import numpy as np
import pytest

from safekernel.dynamics import DubinsParams
from safekernel.reachability import (
    Grid3,
    KeepOutDisk,
    ValueFunction,
    build_library,
    solve_disk,
)


SIM_RADIUS = 2.25


def make_synthetic_vf(fn, grid=None):
    """A ValueFunction whose node values are fn(x, y, theta); handy for exact
    interpolation arithmetic."""
    grid = grid or Grid3((-2.0, -2.0, -math.pi), (2.0, 2.0, math.pi), (5, 5, 8))
    xs = grid.coordinates(0)[:, None, None]
    ys = grid.coordinates(1)[None, :, None]
    ts = grid.coordinates(2)[None, None, :]
    vals = fn(xs, ys, ts) * np.ones(grid.dims)
    return ValueFunction(grid=grid, values=vals, omega_max=1.0,
                         obstacle_radius=1.0, converged=True, residual=0.0,
                         iterations=0)


@pytest.fixture(scope="session")
def params_true():
    return DubinsParams(speed=3.0, omega_max=1.0)


@pytest.fixture(scope="session")
def grid_test():
    # same footprint as the default grid, a notch coarser for test speed
    return Grid3((-15.0, -15.0, -math.pi), (15.0, 15.0, math.pi), (91, 91, 48))


@pytest.fixture(scope="session")
def grid_coarse():
    return Grid3((-12.0, -12.0, -math.pi), (12.0, 12.0, math.pi), (73, 73, 40))


@pytest.fixture(scope="session")
def vf_sound(grid_coarse, params_true):
    """omega=1, r=2.25: the solver-soundness workhorse."""
    vf = solve_disk(KeepOutDisk(0.0, 0.0, 2.25), grid_coarse, params_true)
    assert vf.converged
    return vf


@pytest.fixture(scope="session")
def lib_small(grid_test):
    """Four-member library at the trial obstacle radius.

    0.75 plays the supervisor, 1.0 the true dynamics, 1.5 exceeds the true
    turn bound (useful for conservativeness filtering tests).
    """
    lib = build_library([0.5, 0.75, 1.0, 1.5], SIM_RADIUS, grid_test)
    assert all(vf.converged for vf in lib)
    return lib


@pytest.fixture(scope="session")
def vf_sup(lib_small):
    return next(vf for vf in lib_small if vf.omega_max == 0.75)


@pytest.fixture(scope="session")
def vf_true(lib_small):
    return next(vf for vf in lib_small if vf.omega_max == 1.0)
