"""2D rack topology and robot motion-time distributions.

The library floor is a ``rows x cols`` rectangle of unit-spaced cells.
Drive cells are carved out of the rectangle; every remaining cell is the
home of exactly one cartridge. Robot travel time is proportional to the
Euclidean distance between endpoint cells, scaled so that the mean time
of a single motion equals 3600 / (4 * xph) for the configured exchange
rate. A 3D cuboid would follow the same scheme with one more coordinate;
only the 2D case is implemented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .config import SimConfig


class GridError(ValueError):
    pass


class MotionKind(Enum):
    """The four motions of a full exchange, in cycle order.

    R2D: robot travels to the drive and GETs the spent cartridge.
    D2C: robot PUTs the spent cartridge back on its shelf.
    C2C: robot travels to the target cartridge and GETs it.
    C2D: robot PUTs the target cartridge into the drive.
    """

    R2D = "r2d"
    D2C = "d2c"
    C2C = "c2c"
    C2D = "c2d"


EXCHANGE_SEQUENCE = (MotionKind.R2D, MotionKind.D2C, MotionKind.C2C, MotionKind.C2D)

# Motions with one endpoint at a drive; the other endpoint is a shelf cell.
_DRIVE_KINDS = frozenset({MotionKind.R2D, MotionKind.D2C, MotionKind.C2D})


@dataclass(frozen=True)
class LibraryGrid:
    rows: int
    cols: int
    drive_cells: tuple[tuple[int, int], ...]
    cartridge_cells: tuple[tuple[int, int], ...]

    @property
    def num_cartridge_cells(self) -> int:
        return len(self.cartridge_cells)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.rows - 1, self.cols - 1)

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        r, c = cell
        return 0 <= r < self.rows and 0 <= c < self.cols

    def distance(self, a: tuple[int, int], b: tuple[int, int]) -> float:
        """Euclidean distance in cell units; symmetric, zero iff a == b."""
        if not self.in_bounds(a):
            raise GridError(f"cell {a} outside {self.rows}x{self.cols} grid")
        if not self.in_bounds(b):
            raise GridError(f"cell {b} outside {self.rows}x{self.cols} grid")
        return math.hypot(a[0] - b[0], a[1] - b[1])

    def cartridge_home(self, cartridge_id: int) -> tuple[int, int]:
        return self.cartridge_cells[cartridge_id % len(self.cartridge_cells)]


def build_grid(cfg: SimConfig) -> LibraryGrid:
    """Lay out the rack for a config; drive cells come from the config."""
    rows, cols = cfg.grid_rows, cfg.grid_cols
    drive_cells = tuple(cfg.drive_positions)
    if len(set(drive_cells)) != len(drive_cells):
        raise GridError("drive positions collide")
    drive_set = set(drive_cells)
    for cell in drive_cells:
        if not (0 <= cell[0] < rows and 0 <= cell[1] < cols):
            raise GridError(f"drive cell {cell} outside {rows}x{cols} grid")
    cartridge_cells = tuple(
        (r, c) for r in range(rows) for c in range(cols) if (r, c) not in drive_set
    )
    if not cartridge_cells:
        raise GridError("no cells left for cartridges")
    return LibraryGrid(rows, cols, drive_cells, cartridge_cells)


def _pair_distance_sum(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of Euclidean distances over the cross product of two cell sets."""
    diff_r = a[:, 0][:, None] - b[:, 0][None, :]
    diff_c = a[:, 1][:, None] - b[:, 1][None, :]
    return float(np.hypot(diff_r, diff_c).sum())


def _full_grid_pair_sum(rows: int, cols: int) -> float:
    """Sum of distances over all ordered cell pairs of the full rectangle.

    Works through the distribution of coordinate differences, so it stays
    O(rows * cols) instead of O((rows * cols)^2).
    """
    dr = np.arange(rows, dtype=np.float64)
    dc = np.arange(cols, dtype=np.float64)
    w_r = np.where(dr > 0, 2.0 * (rows - dr), float(rows))
    w_c = np.where(dc > 0, 2.0 * (cols - dc), float(cols))
    dist = np.hypot(dr[:, None], dc[None, :])
    return float((w_r[:, None] * w_c[None, :] * dist).sum())


def mean_cartridge_drive_distance(grid: LibraryGrid) -> float:
    cart = np.asarray(grid.cartridge_cells, dtype=np.float64)
    drv = np.asarray(grid.drive_cells, dtype=np.float64)
    return _pair_distance_sum(cart, drv) / (len(cart) * len(drv))


def mean_cartridge_pair_distance(grid: LibraryGrid) -> float:
    """Mean distance over ordered distinct cartridge-cell pairs.

    Inclusion-exclusion against the full rectangle keeps this exact and
    cheap even for tens of thousands of cells.
    """
    n_cart = grid.num_cartridge_cells
    if n_cart < 2:
        return 0.0
    drv = np.asarray(grid.drive_cells, dtype=np.float64)
    all_cells = np.array(
        [(r, c) for r in range(grid.rows) for c in range(grid.cols)], dtype=np.float64
    )
    total = _full_grid_pair_sum(grid.rows, grid.cols)
    if len(drv):
        total -= 2.0 * _pair_distance_sum(drv, all_cells)
        total += _pair_distance_sum(drv, drv)
    return total / (n_cart * (n_cart - 1))


@dataclass(frozen=True, eq=False)
class MotionTimeModel:
    """Per-kind motion-time distributions calibrated to an exchange rate.

    The robot has no tracked position: each motion samples its endpoints
    from the stationary distributions (shelf cells uniformly; the drive
    endpoint uniformly over the drive cells in use), and the time is
    time_scale * distance.
    """

    grid: LibraryGrid
    time_scale: float
    target_mean_motion_s: float
    _cart_r: np.ndarray
    _cart_c: np.ndarray
    _drv_r: np.ndarray
    _drv_c: np.ndarray

    @classmethod
    def calibrate(cls, grid: LibraryGrid, robot_xph: float) -> "MotionTimeModel":
        """Scale distances so the mean single motion is 3600 / (4 * xph)."""
        if robot_xph <= 0:
            raise GridError("robot_xph must be positive")
        target = 3600.0 / (4.0 * robot_xph)
        e_cd = mean_cartridge_drive_distance(grid)
        e_cc = mean_cartridge_pair_distance(grid)
        mean_distance = (3.0 * e_cd + e_cc) / 4.0
        cart = np.asarray(grid.cartridge_cells, dtype=np.float64)
        drv = np.asarray(grid.drive_cells, dtype=np.float64)
        return cls(
            grid=grid,
            time_scale=target / mean_distance,
            target_mean_motion_s=target,
            _cart_r=cart[:, 0].copy(),
            _cart_c=cart[:, 1].copy(),
            _drv_r=drv[:, 0].copy(),
            _drv_c=drv[:, 1].copy(),
        )

    @property
    def max_motion_seconds(self) -> float:
        return self.time_scale * self.grid.diagonal

    def sample_motion_time(self, kind: MotionKind, rng: np.random.Generator) -> float:
        """One motion time in seconds.

        C2C draws two distinct shelf cells; with a single shelf cell the
        robot is already in place and the motion costs nothing.
        """
        n_cart = len(self._cart_r)
        if kind in _DRIVE_KINDS:
            i = rng.integers(n_cart)
            j = rng.integers(len(self._drv_r))
            d = math.hypot(self._cart_r[i] - self._drv_r[j], self._cart_c[i] - self._drv_c[j])
        elif kind is MotionKind.C2C:
            if n_cart < 2:
                return 0.0
            i = int(rng.integers(n_cart))
            j = int(rng.integers(n_cart - 1))
            if j >= i:
                j += 1
            d = math.hypot(self._cart_r[i] - self._cart_r[j], self._cart_c[i] - self._cart_c[j])
        else:
            raise GridError(f"unknown motion kind {kind!r}")
        return self.time_scale * d

    def sample_exchange_seconds(self, rng: np.random.Generator) -> float:
        """Total time of the four-motion GET-PUT-GET-PUT cycle."""
        return sum(self.sample_motion_time(kind, rng) for kind in EXCHANGE_SEQUENCE)

    def sample_return_seconds(self, rng: np.random.Generator) -> float:
        """Drive-queue service: carry a spent cartridge back to its shelf."""
        return self.sample_motion_time(MotionKind.D2C, rng)

    def motion_histogram(
        self,
        kind: MotionKind,
        rng: np.random.Generator,
        samples: int = 100_000,
        bins: int = 40,
    ) -> list[tuple[float, float, float]]:
        """(bin_low, bin_high, probability) rows for one motion kind."""
        times = np.array([self.sample_motion_time(kind, rng) for _ in range(samples)])
        counts, edges = np.histogram(times, bins=bins, range=(0.0, self.max_motion_seconds))
        probs = counts / counts.sum() if counts.sum() else counts.astype(float)
        return [
            (float(edges[i]), float(edges[i + 1]), float(probs[i])) for i in range(len(counts))
        ]
