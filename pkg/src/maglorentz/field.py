"""Lazy Poisson field of hard-disk scatterers on the unbounded plane.

The plane is tiled by square cells of side `cell_side`.  Each cell owns a
Poisson(intensity * cell_side^2) number of disk centers placed uniformly in
the cell, drawn from a stream keyed by (seed, cell) only, so any region can
be materialized on demand, in any order, on any worker, with identical
results.  Centers closer than `eps` to the excluded start point are dropped,
which conditions the field on the particle starting outside every disk.

Disk centers may overlap each other; there is no mutual hard core.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .geometry import Vec2
from .rng import Stream, derive_seed

_COORD_OFFSET = 1 << 20  # id packing supports cell indices in [-2^20, 2^20)


class Scatterer(NamedTuple):
    id: int
    c: Vec2


@dataclass(frozen=True)
class FieldConfig:
    """Parameters of one field realization.

    The number density is tied to the disk radius by intensity = 1/eps, the
    low-density scaling that keeps the mean free path finite as eps shrinks.
    """

    eps: float
    seed: int
    excluded_point: Vec2
    cell_side: float

    def __post_init__(self):
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")
        if not self.cell_side > 0.0:
            raise ValueError("cell_side must be positive")
        if self.mean_per_cell > 1e4:
            raise ValueError("cell_side^2/eps too large; shrink cell_side")

    @property
    def intensity(self) -> float:
        return 1.0 / self.eps

    @property
    def mean_per_cell(self) -> float:
        return self.cell_side * self.cell_side / self.eps


def default_cell_side(eps: float, radius: float) -> float:
    """O(1) expected scatterers per cell while keeping annulus queries short."""
    return max(4.0 * eps, radius / 2.0)


def _pack_id(kx: int, ky: int, idx: int) -> int:
    return (
        ((kx + _COORD_OFFSET) << 42)
        | ((ky + _COORD_OFFSET) << 21)
        | idx
    )


class ScattererField:
    """Deterministic lazily generated field; queries are pure given the config.

    `injected` bypasses the Poisson draw entirely and serves the given centers
    (test fixtures); ids are then the list indices.
    """

    def __init__(self, cfg: FieldConfig, injected: Iterable[Vec2] | None = None):
        self.cfg = cfg
        self._cells: dict[tuple[int, int], list[Scatterer]] = {}
        self._injected = (
            None
            if injected is None
            else [Scatterer(i, (float(x), float(y))) for i, (x, y) in enumerate(injected)]
        )

    def cell_scatterers(self, key: tuple[int, int]) -> list[Scatterer]:
        """Scatterers of one cell; repeated calls return identical lists."""
        if self._injected is not None:
            lo_x = key[0] * self.cfg.cell_side
            lo_y = key[1] * self.cfg.cell_side
            hi_x = lo_x + self.cfg.cell_side
            hi_y = lo_y + self.cfg.cell_side
            return [
                s
                for s in self._injected
                if lo_x <= s.c[0] < hi_x and lo_y <= s.c[1] < hi_y
            ]
        cached = self._cells.get(key)
        if cached is not None:
            return cached
        kx, ky = key
        rng = Stream(derive_seed(self.cfg.seed, "cell", kx, ky))
        count = rng.poisson(self.cfg.mean_per_cell)
        lo_x = kx * self.cfg.cell_side
        lo_y = ky * self.cfg.cell_side
        ex, ey = self.cfg.excluded_point
        eps = self.cfg.eps
        out: list[Scatterer] = []
        for i in range(count):
            cx = lo_x + rng.uniform_in(0.0, self.cfg.cell_side)
            cy = lo_y + rng.uniform_in(0.0, self.cfg.cell_side)
            if math.hypot(cx - ex, cy - ey) < eps:
                continue  # conditioned on the start point being outside every disk
            out.append(Scatterer(_pack_id(kx, ky, i), (cx, cy)))
        self._cells[key] = out
        return out

    def scatterers_near_circle(self, q: Vec2, radius: float) -> list[Scatterer]:
        """All scatterers whose center distance to q lies in [radius-eps, radius+eps].

        Visits every cell overlapping the annulus bounding region, so there
        are no false negatives; a 1e-12 slack keeps boundary centers in (the
        downstream hit test resolves exact tangencies).
        """
        eps = self.cfg.eps
        r_out = radius + eps + 1e-12
        r_in = max(0.0, radius - eps - 1e-12)
        side = self.cfg.cell_side
        kx_lo = math.floor((q[0] - r_out) / side)
        kx_hi = math.floor((q[0] + r_out) / side)
        ky_lo = math.floor((q[1] - r_out) / side)
        ky_hi = math.floor((q[1] + r_out) / side)
        r_out_sq = r_out * r_out
        r_in_sq = r_in * r_in
        found: list[Scatterer] = []
        for kx in range(kx_lo, kx_hi + 1):
            lo_x = kx * side
            # nearest/farthest x-offsets from q to the cell column
            nx = 0.0 if lo_x <= q[0] <= lo_x + side else min(
                abs(q[0] - lo_x), abs(q[0] - lo_x - side)
            )
            fx = max(abs(q[0] - lo_x), abs(q[0] - lo_x - side))
            for ky in range(ky_lo, ky_hi + 1):
                lo_y = ky * side
                ny = 0.0 if lo_y <= q[1] <= lo_y + side else min(
                    abs(q[1] - lo_y), abs(q[1] - lo_y - side)
                )
                fy = max(abs(q[1] - lo_y), abs(q[1] - lo_y - side))
                if nx * nx + ny * ny > r_out_sq:
                    continue  # cell entirely outside the outer circle
                if fx * fx + fy * fy < r_in_sq:
                    continue  # cell entirely inside the hole
                for s in self.cell_scatterers((kx, ky)):
                    dsq = (s.c[0] - q[0]) ** 2 + (s.c[1] - q[1]) ** 2
                    if r_in_sq <= dsq <= r_out_sq:
                        found.append(s)
        return found

    def scatterers_in_rect(
        self, x_lo: float, x_hi: float, y_lo: float, y_hi: float
    ) -> list[Scatterer]:
        """All scatterers inside an axis-aligned rectangle (debug dumps)."""
        side = self.cfg.cell_side
        out: list[Scatterer] = []
        for kx in range(math.floor(x_lo / side), math.floor(x_hi / side) + 1):
            for ky in range(math.floor(y_lo / side), math.floor(y_hi / side) + 1):
                for s in self.cell_scatterers((kx, ky)):
                    if x_lo <= s.c[0] <= x_hi and y_lo <= s.c[1] <= y_hi:
                        out.append(s)
        return out
