"""Grid-based avoidance value functions for the Dubins car.

The value of a state is the lowest payoff (signed distance to a keep-out
disk) the car can guarantee over an unbounded horizon while steering to
avoid.  Negative value means capture is unavoidable; the safe set at level
``a`` is ``{V > a}``.

The solver marches the variational inequality

    V_next = min(l, V + dt * H_num(V))

to a fixed point in pseudo-time, where H_num is the global Lax-Friedrichs
numerical Hamiltonian built from first-order one-sided differences (theta
periodic, x/y one-sided at the boundary).  The iteration is monotone
non-increasing from V = l, so the fixed point is approached from above.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .dynamics import Costate, DubinsParams, State, wrap_angle

TWO_PI = 2.0 * math.pi

DEFAULT_BOUND = 15.0
DEFAULT_DIMS = (121, 121, 60)
DEFAULT_DT_FACTOR = 0.9
DEFAULT_T_MAX = 20.0
TOL_SCALE = 1e-3

VF_SCHEMA = "vf-1"


class GridMismatchError(ValueError):
    """Two value functions live on different grids."""


class DataFormatError(ValueError):
    """A persisted artifact does not match its declared schema."""


@dataclass(frozen=True)
class Grid3:
    """Regular (x, y, theta) grid; theta is periodic with no duplicated endpoint."""

    mins: tuple[float, float, float]
    maxs: tuple[float, float, float]
    dims: tuple[int, int, int]
    periodic: tuple[bool, bool, bool] = (False, False, True)

    def __post_init__(self):
        if self.periodic != (False, False, True):
            raise ValueError("x and y must be non-periodic, theta periodic")
        for lo, hi, n in zip(self.mins, self.maxs, self.dims):
            if n < 3:
                raise ValueError(f"need at least 3 nodes per axis, got {n}")
            if not hi > lo:
                raise ValueError(f"axis bounds inverted: [{lo}, {hi}]")
        if abs(self.mins[2] + math.pi) > 1e-9 or abs(self.maxs[2] - math.pi) > 1e-9:
            raise ValueError("theta axis must span [-pi, pi)")

    @property
    def spacing(self) -> tuple[float, float, float]:
        hx = (self.maxs[0] - self.mins[0]) / (self.dims[0] - 1)
        hy = (self.maxs[1] - self.mins[1]) / (self.dims[1] - 1)
        ht = (self.maxs[2] - self.mins[2]) / self.dims[2]
        return (hx, hy, ht)

    def coordinates(self, axis: int) -> np.ndarray:
        if axis == 2:
            return self.mins[2] + self.spacing[2] * np.arange(self.dims[2])
        return np.linspace(self.mins[axis], self.maxs[axis], self.dims[axis])

    def contains(self, x: float, y: float) -> bool:
        return (self.mins[0] <= x <= self.maxs[0]
                and self.mins[1] <= y <= self.maxs[1])


def default_grid(bound: float = DEFAULT_BOUND,
                 dims: tuple[int, int, int] = DEFAULT_DIMS) -> Grid3:
    return Grid3((-bound, -bound, -math.pi), (bound, bound, math.pi), dims)


@dataclass(frozen=True)
class KeepOutDisk:
    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError(f"disk radius must be positive, got {self.r}")


@dataclass
class ValueFunction:
    grid: Grid3
    values: np.ndarray  # shape grid.dims, C order (theta fastest when flattened)
    omega_max: float
    obstacle_radius: float
    converged: bool
    residual: float
    iterations: int
    speed: float = 3.0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.dims:
            raise ValueError(
                f"values shape {self.values.shape} != grid dims {self.grid.dims}")


def signed_distance_payoff(disk: KeepOutDisk, grid: Grid3) -> np.ndarray:
    """Payoff l(x, y, theta) = distance to the disk edge, negative inside."""
    xs = grid.coordinates(0)[:, None]
    ys = grid.coordinates(1)[None, :]
    plane = np.hypot(xs - disk.cx, ys - disk.cy) - disk.r
    return np.repeat(plane[:, :, None], grid.dims[2], axis=2)


@njit(cache=True, nogil=True)
def _vi_sweep(v, l, out, cos_t, sin_t, hx, hy, ht, speed, omega, dt):
    """One VI step; returns the max absolute change."""
    nx, ny, nt = v.shape
    max_change = 0.0
    for ix in range(nx):
        ixm = ix - 1
        ixp = ix + 1
        for iy in range(ny):
            iym = iy - 1
            iyp = iy + 1
            for it in range(nt):
                itm = it - 1 if it > 0 else nt - 1
                itp = it + 1 if it < nt - 1 else 0
                c = v[ix, iy, it]
                # one-sided differences collapse to the interior-side one at
                # the x/y walls (domain is padded so the zero set stays away)
                if ix == 0:
                    vxp = v[ixp, iy, it]
                    vxm = 2.0 * c - vxp
                elif ix == nx - 1:
                    vxm = v[ixm, iy, it]
                    vxp = 2.0 * c - vxm
                else:
                    vxm = v[ixm, iy, it]
                    vxp = v[ixp, iy, it]
                if iy == 0:
                    vyp = v[ix, iyp, it]
                    vym = 2.0 * c - vyp
                elif iy == ny - 1:
                    vym = v[ix, iym, it]
                    vyp = 2.0 * c - vym
                else:
                    vym = v[ix, iym, it]
                    vyp = v[ix, iyp, it]
                vtm = v[ix, iy, itm]
                vtp = v[ix, iy, itp]

                p1 = (vxp - vxm) / (2.0 * hx)
                p2 = (vyp - vym) / (2.0 * hy)
                p3 = (vtp - vtm) / (2.0 * ht)
                ham = (speed * (cos_t[it] * p1 + sin_t[it] * p2)
                       + omega * abs(p3))
                # Lax-Friedrichs dissipation: in this marching direction it
                # enters with a plus sign (diffusive), keeping the update
                # monotone in every neighbour under the CFL bound
                diss = (speed * (vxp - 2.0 * c + vxm) / (2.0 * hx)
                        + speed * (vyp - 2.0 * c + vym) / (2.0 * hy)
                        + omega * (vtp - 2.0 * c + vtm) / (2.0 * ht))
                vn = c + dt * (ham + diss)
                cap = l[ix, iy, it]
                if vn > cap:
                    vn = cap
                out[ix, iy, it] = vn
                ch = abs(vn - c)
                if ch > max_change:
                    max_change = ch
    return max_change


def solve_hji(payoff: np.ndarray, grid: Grid3, params: DubinsParams,
              dt_factor: float = DEFAULT_DT_FACTOR, tol: float | None = None,
              t_max: float = DEFAULT_T_MAX,
              obstacle_radius: float = float("nan")) -> ValueFunction:
    """March the avoidance VI to its stationary value function.

    ``tol`` is a residual rate (value units per unit pseudo-time); the
    default is 1e-3 times the payoff range.  If the residual has not
    dropped below ``tol`` by pseudo-time ``t_max`` the partial solution is
    returned with ``converged=False``.
    """
    if not 0.0 < dt_factor <= 1.0:
        raise ValueError(f"dt_factor must be in (0, 1], got {dt_factor}")
    l = np.ascontiguousarray(payoff, dtype=np.float64)
    if l.shape != grid.dims:
        raise ValueError(f"payoff shape {l.shape} != grid dims {grid.dims}")
    if tol is None:
        tol = TOL_SCALE * float(l.max() - l.min())
    hx, hy, ht = grid.spacing
    rate = params.speed / hx + params.speed / hy + params.omega_max / ht
    dt = dt_factor / rate
    thetas = grid.coordinates(2)
    cos_t = np.cos(thetas)
    sin_t = np.sin(thetas)

    v = l.copy()
    out = np.empty_like(v)
    t = 0.0
    iterations = 0
    residual = math.inf
    converged = False
    while t < t_max:
        change = _vi_sweep(v, l, out, cos_t, sin_t, hx, hy, ht,
                           params.speed, params.omega_max, dt)
        v, out = out, v
        t += dt
        iterations += 1
        residual = change / dt
        if residual < tol:
            converged = True
            break
    return ValueFunction(grid=grid, values=v, omega_max=params.omega_max,
                         obstacle_radius=obstacle_radius, converged=converged,
                         residual=residual, iterations=iterations,
                         speed=params.speed)


def solve_disk(disk: KeepOutDisk, grid: Grid3, params: DubinsParams,
               **options) -> ValueFunction:
    """Solve for a single keep-out disk (canonical use: disk at the origin)."""
    return solve_hji(signed_distance_payoff(disk, grid), grid, params,
                     obstacle_radius=disk.r, **options)


def thread_budget() -> int:
    """Worker cap for internal parallelism, overridable via SAFEKERNEL_THREADS."""
    env = os.environ.get("SAFEKERNEL_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError as exc:
            raise ValueError(f"SAFEKERNEL_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise ValueError("SAFEKERNEL_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def build_library(omegas: Sequence[float], obstacle_radius: float,
                  grid: Grid3 | None = None, speed: float = 3.0,
                  **options) -> list[ValueFunction]:
    """Solve the canonical origin-disk problem for each turn-rate bound.

    Entries come back sorted by omega_max ascending; convergence flags are
    preserved per entry for the caller to inspect.
    """
    if len(omegas) == 0:
        raise ValueError("need at least one omega value")
    if any(w < 0 for w in omegas):
        raise ValueError("omega values must be >= 0")
    grid = grid or default_grid()
    disk = KeepOutDisk(0.0, 0.0, obstacle_radius)
    ordered = sorted(float(w) for w in omegas)

    def run(w: float) -> ValueFunction:
        return solve_disk(disk, grid, DubinsParams(speed=speed, omega_max=w),
                          **options)

    workers = min(thread_budget(), len(ordered))
    if workers == 1:
        return [run(w) for w in ordered]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, ordered))


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def interpolate_many(vf: ValueFunction, xs, ys, thetas,
                     return_inside: bool = False):
    """Trilinear interpolation at arrays of states; theta wraps, x/y clamp."""
    grid = vf.grid
    hx, hy, ht = grid.spacing
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    thetas = np.asarray(thetas, dtype=np.float64)

    inside = ((xs >= grid.mins[0]) & (xs <= grid.maxs[0])
              & (ys >= grid.mins[1]) & (ys <= grid.maxs[1]))

    fx = np.clip((xs - grid.mins[0]) / hx, 0.0, grid.dims[0] - 1.0)
    fy = np.clip((ys - grid.mins[1]) / hy, 0.0, grid.dims[1] - 1.0)
    ix = np.minimum(fx.astype(np.int64), grid.dims[0] - 2)
    iy = np.minimum(fy.astype(np.int64), grid.dims[1] - 2)
    tx = fx - ix
    ty = fy - iy

    ft = (np.mod(thetas + math.pi, TWO_PI)) / ht  # distance from theta_min in cells
    it = np.minimum(ft.astype(np.int64), grid.dims[2] - 1)
    tt = ft - it
    itp = np.mod(it + 1, grid.dims[2])

    v = vf.values
    c00 = v[ix, iy, it] * (1 - tt) + v[ix, iy, itp] * tt
    c01 = v[ix, iy + 1, it] * (1 - tt) + v[ix, iy + 1, itp] * tt
    c10 = v[ix + 1, iy, it] * (1 - tt) + v[ix + 1, iy, itp] * tt
    c11 = v[ix + 1, iy + 1, it] * (1 - tt) + v[ix + 1, iy + 1, itp] * tt
    c0 = c00 * (1 - ty) + c01 * ty
    c1 = c10 * (1 - ty) + c11 * ty
    out = c0 * (1 - tx) + c1 * tx
    if return_inside:
        return out, inside
    return out


def interpolate_value(vf: ValueFunction, state: State) -> float:
    """Value at one state; out-of-domain (x, y) clamp to the boundary."""
    return float(interpolate_many(vf, [state.x], [state.y], [state.theta])[0])


def gradient_many(vf: ValueFunction, xs, ys, thetas):
    """Central-difference gradients (half-cell probes) at arrays of states."""
    hx, hy, ht = vf.grid.spacing
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    thetas = np.asarray(thetas, dtype=np.float64)
    n = xs.shape[0]
    px = np.concatenate([xs + hx / 2, xs - hx / 2, xs, xs, xs, xs])
    py = np.concatenate([ys, ys, ys + hy / 2, ys - hy / 2, ys, ys])
    pt = np.concatenate([thetas, thetas, thetas, thetas,
                         thetas + ht / 2, thetas - ht / 2])
    vals = interpolate_many(vf, px, py, pt)
    p1 = (vals[0:n] - vals[n:2 * n]) / hx
    p2 = (vals[2 * n:3 * n] - vals[3 * n:4 * n]) / hy
    p3 = (vals[4 * n:5 * n] - vals[5 * n:6 * n]) / ht
    return p1, p2, p3


def interpolate_gradient(vf: ValueFunction, state: State) -> Costate:
    p1, p2, p3 = gradient_many(vf, [state.x], [state.y], [state.theta])
    return Costate(float(p1[0]), float(p2[0]), float(p3[0]))


def is_safe(vf: ValueFunction, state: State, level: float) -> bool:
    """Strictly above the level set; boundary states count as unsafe."""
    return interpolate_value(vf, state) > level


def value_tolerance(vf: ValueFunction) -> float:
    """Grid-resolution value tolerance: 2 * max over axes of h_i * max|dV/dx_i|.

    h_i * max|dV/dx_i| is exactly the largest one-cell value change along
    axis i, so the bound is computed from node differences directly.
    """
    v = vf.values
    gx = np.abs(np.diff(v, axis=0)).max()
    gy = np.abs(np.diff(v, axis=1)).max()
    gt = np.abs(np.roll(v, -1, axis=2) - v).max()
    return 2.0 * max(float(gx), float(gy), float(gt))


def cell_value(grid: Grid3) -> float:
    """Value change across one spatial cell for a unit-gradient payoff."""
    hx, hy, _ = grid.spacing
    return max(hx, hy)


def is_superset_reachable(candidate: ValueFunction, reference: ValueFunction,
                          margin: float | None = None) -> bool:
    """Does the candidate's avoid region cover the reference's?

    True when every node the reference marks unavoidable (value <= 0) is
    also at or below ``margin`` in the candidate.  Default margin is one
    spatial grid cell of signed-distance value.
    """
    if (candidate.grid.mins != reference.grid.mins
            or candidate.grid.maxs != reference.grid.maxs
            or candidate.grid.dims != reference.grid.dims):
        raise GridMismatchError("value functions live on different grids")
    if margin is None:
        margin = cell_value(reference.grid)
    mask = reference.values <= 0.0
    if not mask.any():
        return True
    return bool((candidate.values[mask] <= margin).all())


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_value_function(vf: ValueFunction, path: str) -> None:
    doc = {
        "schema": VF_SCHEMA,
        "grid": {
            "mins": list(vf.grid.mins),
            "maxs": list(vf.grid.maxs),
            "dims": list(vf.grid.dims),
            "periodic": list(vf.grid.periodic),
        },
        "omega_max": vf.omega_max,
        "obstacle_radius": vf.obstacle_radius,
        "speed": vf.speed,
        "converged": vf.converged,
        "residual": vf.residual,
        "iterations": vf.iterations,
        "values": vf.values.reshape(-1).tolist(),
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_value_function(path: str) -> ValueFunction:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != VF_SCHEMA:
        raise DataFormatError(f"{path}: expected schema {VF_SCHEMA!r}")
    for key in ("grid", "omega_max", "obstacle_radius", "converged",
                "residual", "values"):
        if key not in doc:
            raise DataFormatError(f"{path}: missing key {key!r}")
    g = doc["grid"]
    try:
        grid = Grid3(tuple(g["mins"]), tuple(g["maxs"]), tuple(g["dims"]),
                     tuple(g.get("periodic", (False, False, True))))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad grid block: {exc}") from exc
    values = np.asarray(doc["values"], dtype=np.float64)
    expected = grid.dims[0] * grid.dims[1] * grid.dims[2]
    if values.size != expected:
        raise DataFormatError(
            f"{path}: {values.size} values for a {expected}-node grid")
    return ValueFunction(grid=grid, values=values.reshape(grid.dims),
                         omega_max=float(doc["omega_max"]),
                         obstacle_radius=float(doc["obstacle_radius"]),
                         converged=bool(doc["converged"]),
                         residual=float(doc["residual"]),
                         iterations=int(doc.get("iterations", 0)),
                         speed=float(doc.get("speed", 3.0)))


def export_slice(vf: ValueFunction, theta: float, path: str) -> None:
    """Write the fixed-theta slice as CSV rows x, y, v over the grid nodes."""
    xs = vf.grid.coordinates(0)
    ys = vf.grid.coordinates(1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    flat_x = gx.reshape(-1)
    flat_y = gy.reshape(-1)
    vals = interpolate_many(vf, flat_x, flat_y,
                            np.full_like(flat_x, wrap_angle(theta)))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "v"])
        for x, y, v in zip(flat_x, flat_y, vals):
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
