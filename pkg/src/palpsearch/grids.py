"""Rectangular lattices over the search domain and their region partitions."""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class DomainGrid:
    """Cell-centred lattice tiling ``bounds = (xmin, xmax, ymin, ymax)``.

    Field arrays aligned to the grid have shape ``(ny, nx)``, row ``iy`` at
    ``y = ymin + (iy + 0.5) * dy``. The linear cell index is ``iy * nx + ix``.
    """

    bounds: tuple = (0.0, 1.0, 0.0, 1.0)
    nx: int = 32
    ny: int = 32

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2x2 cells, got {self.nx}x{self.ny}")
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"degenerate bounds {self.bounds}")
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def width(self):
        return self.bounds[1] - self.bounds[0]

    @property
    def height(self):
        return self.bounds[3] - self.bounds[2]

    @property
    def dx(self):
        return self.width / self.nx

    @property
    def dy(self):
        return self.height / self.ny

    @cached_property
    def xs(self):
        return self.bounds[0] + (np.arange(self.nx) + 0.5) * self.dx

    @cached_property
    def ys(self):
        return self.bounds[2] + (np.arange(self.ny) + 0.5) * self.dy

    @cached_property
    def centers(self):
        """Cell centres as an (ny * nx, 2) array in linear-index order."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        xmin, xmax, ymin, ymax = self.bounds
        return (p[..., 0] >= xmin) & (p[..., 0] <= xmax) & (p[..., 1] >= ymin) & (p[..., 1] <= ymax)

    def clip(self, points):
        p = np.array(points, dtype=float)
        xmin, xmax, ymin, ymax = self.bounds
        p[..., 0] = np.clip(p[..., 0], xmin, xmax)
        p[..., 1] = np.clip(p[..., 1], ymin, ymax)
        return p

    def interpolate(self, values, points):
        """Bilinear interpolation of a cell-centred field; clamps outside the centre hull."""
        values = np.asarray(values, dtype=float).reshape(self.shape)
        p = np.asarray(points, dtype=float)
        fx = np.clip((p[..., 0] - self.bounds[0]) / self.dx - 0.5, 0, self.nx - 1)
        fy = np.clip((p[..., 1] - self.bounds[2]) / self.dy - 0.5, 0, self.ny - 1)
        ix = np.minimum(np.floor(fx).astype(int), self.nx - 2)
        iy = np.minimum(np.floor(fy).astype(int), self.ny - 2)
        tx = fx - ix
        ty = fy - iy
        v00 = values[iy, ix]
        v01 = values[iy, ix + 1]
        v10 = values[iy + 1, ix]
        v11 = values[iy + 1, ix + 1]
        return (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11)


@dataclass(frozen=True)
class RegionGrid:
    """Axis-aligned rectangles partitioning the domain, plus classification thresholds.

    ``tumor_threshold`` may be left as ``None`` by callers that set it
    adaptively; operations that need it raise if it is still unset.
    """

    regions: tuple
    tumor_threshold: float | None = None
    confidence: float = 0.8

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError(f"confidence must lie in (0, 1), got {self.confidence}")
        regs = tuple(tuple(float(v) for v in r) for r in self.regions)
        for r in regs:
            if not (r[1] > r[0] and r[3] > r[2]):
                raise ValueError(f"region {r} has no area")
        object.__setattr__(self, "regions", regs)

    @classmethod
    def uniform(cls, bounds, nrx=8, nry=8, tumor_threshold=None, confidence=0.8):
        xmin, xmax, ymin, ymax = bounds
        xe = np.linspace(xmin, xmax, nrx + 1)
        ye = np.linspace(ymin, ymax, nry + 1)
        regions = [
            (xe[i], xe[i + 1], ye[j], ye[j + 1]) for j in range(nry) for i in range(nrx)
        ]
        return cls(tuple(regions), tumor_threshold, confidence)

    def __len__(self):
        return len(self.regions)

    @property
    def areas(self):
        r = np.asarray(self.regions)
        return (r[:, 1] - r[:, 0]) * (r[:, 3] - r[:, 2])

    def with_threshold(self, tau):
        return replace(self, tumor_threshold=float(tau))

    def threshold(self):
        if self.tumor_threshold is None:
            raise ValueError("tumor_threshold has not been set on this RegionGrid")
        return self.tumor_threshold

    def membership(self, grid: DomainGrid):
        """Boolean (n_regions, n_cells) matrix of which cell centres fall in each region.

        Region edges are half-open on the upper side except at the domain
        boundary, so cells never belong to two regions.
        """
        c = grid.centers
        xmin, xmax, ymin, ymax = grid.bounds
        out = np.zeros((len(self.regions), len(c)), dtype=bool)
        for g, (x0, x1, y0, y1) in enumerate(self.regions):
            in_x = (c[:, 0] >= x0) & ((c[:, 0] < x1) | (x1 >= xmax))
            in_y = (c[:, 1] >= y0) & ((c[:, 1] < y1) | (y1 >= ymax))
            out[g] = in_x & in_y
        return out

    def weights(self, grid: DomainGrid):
        """Uniform averaging weights (n_regions, n_cells); raises on an empty region."""
        M = self.membership(grid).astype(float)
        counts = M.sum(axis=1)
        if np.any(counts == 0):
            g = int(np.flatnonzero(counts == 0)[0])
            raise ValueError(f"region {self.regions[g]} contains no grid cells")
        return M / counts[:, None]
