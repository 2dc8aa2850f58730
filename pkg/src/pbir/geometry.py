"""Acquisition geometry, Joseph ray-driven projector and ordered-subset schemes.

The system matrix is assembled once per (geometry, grid) as a CSR matrix.
Forward projection is ``A @ x`` and backprojection is ``A.T @ y``, so the
pair is an exact adjoint by construction.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Array shape does not match the geometry it is used with."""


@dataclass(frozen=True)
class ImageGrid:
    """Regular 2D pixel grid centred on the isocentre.

    Arrays on this grid have shape ``(ny, nx)`` (row index is y).
    """

    nx: int
    ny: int
    dx: float = 1.0
    dy: float = 1.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid must have at least one pixel, got {self.nx}x{self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError(f"pixel spacing must be positive, got dx={self.dx}, dy={self.dy}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) - (self.nx - 1) / 2.0) * self.dx

    @property
    def y(self) -> np.ndarray:
        return (np.arange(self.ny) - (self.ny - 1) / 2.0) * self.dy

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y)


@dataclass(frozen=True)
class ScanGeometry:
    """Circular-orbit 2D scan: view angles, detector row and image grid.

    Parallel-beam rays for view angle ``theta`` run along ``(-sin, cos)`` and
    hit the detector at ``u = x cos(theta) + y sin(theta)``.  Fan-beam uses a
    flat detector at ``source_to_det`` from the source, with ``det_spacing``
    measured on the detector.
    """

    grid: ImageGrid
    angles: tuple[float, ...]
    n_dets: int
    det_spacing: float
    beam_type: str = "parallel"
    source_to_iso: float | None = None
    source_to_det: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if self.n_views < 1 or self.n_dets < 1:
            raise ValueError("need at least one view and one detector")
        if self.det_spacing <= 0:
            raise ValueError(f"det_spacing must be positive, got {self.det_spacing}")
        a = np.asarray(self.angles)
        if np.any(np.diff(a) <= 0):
            raise ValueError("view angles must be strictly increasing")
        if self.beam_type == "parallel":
            if a[-1] - a[0] >= math.pi:
                raise ValueError("parallel-beam angles must span less than pi")
            if self.source_to_iso is not None or self.source_to_det is not None:
                raise ValueError("fan parameters given for a parallel-beam geometry")
        elif self.beam_type == "fan":
            if self.source_to_iso is None or self.source_to_det is None:
                raise ValueError("fan-beam geometry needs source_to_iso and source_to_det")
            if a[-1] - a[0] >= 2 * math.pi:
                raise ValueError("fan-beam angles must span less than 2*pi")
            half_diag = 0.5 * math.hypot(self.grid.nx * self.grid.dx, self.grid.ny * self.grid.dy)
            if self.source_to_iso <= half_diag:
                raise ValueError("source lies inside the reconstruction grid")
            if self.source_to_det <= self.source_to_iso:
                raise ValueError("source_to_det must exceed source_to_iso")
        else:
            raise ValueError(f"unknown beam_type {self.beam_type!r}")

    @classmethod
    def parallel(cls, grid: ImageGrid, n_views: int = 360, n_dets: int | None = None,
                 det_spacing: float | None = None) -> "ScanGeometry":
        """Uniform views over [0, pi); defaults to 1.5*nx detectors at pixel pitch."""
        if n_dets is None:
            n_dets = int(math.ceil(1.5 * grid.nx))
        if det_spacing is None:
            det_spacing = grid.dx
        angles = np.arange(n_views) * (math.pi / n_views)
        return cls(grid, tuple(angles), n_dets, det_spacing)

    @classmethod
    def fan(cls, grid: ImageGrid, n_views: int, n_dets: int, det_spacing: float,
            source_to_iso: float, source_to_det: float) -> "ScanGeometry":
        angles = np.arange(n_views) * (2 * math.pi / n_views)
        return cls(grid, tuple(angles), n_dets, det_spacing, "fan", source_to_iso, source_to_det)

    @property
    def n_views(self) -> int:
        return len(self.angles)

    @property
    def n_rays(self) -> int:
        return self.n_views * self.n_dets

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_dets)

    @property
    def det_positions(self) -> np.ndarray:
        return (np.arange(self.n_dets) - (self.n_dets - 1) / 2.0) * self.det_spacing

    def rays(self, view: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(points, unit_directions)`` of shape (n_dets, 2) for one view."""
        theta = self.angles[view]
        c, s = math.cos(theta), math.sin(theta)
        u = self.det_positions
        if self.beam_type == "parallel":
            points = np.stack([u * c, u * s], axis=1)
            dirs = np.tile([-s, c], (self.n_dets, 1))
            return points, dirs
        src = np.array([self.source_to_iso * s, -self.source_to_iso * c])
        centre = src + self.source_to_det * np.array([-s, c])
        dets = centre[None, :] + u[:, None] * np.array([c, s])[None, :]
        dirs = dets - src[None, :]
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return np.tile(src, (self.n_dets, 1)), dirs


@dataclass(frozen=True)
class SubsetScheme:
    """Interleaved partition of views into ordered subsets."""

    n_subsets: int
    assignment: tuple[int, ...]
    order: tuple[int, ...] = field(default=())

    def views(self, index: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) == index)


def bit_reversal_order(n: int) -> list[int]:
    """Bit-reversal permutation of ``range(n)`` (padded to a power of two, then filtered)."""
    if n <= 1:
        return list(range(n))
    bits = (n - 1).bit_length()
    perm = [int(format(i, f"0{bits}b")[::-1], 2) for i in range(1 << bits)]
    return [p for p in perm if p < n]


def make_subsets(geom: ScanGeometry, n_subsets: int) -> SubsetScheme:
    if not 1 <= n_subsets <= geom.n_views:
        raise ValueError(f"n_subsets must be in [1, {geom.n_views}], got {n_subsets}")
    assignment = tuple(v % n_subsets for v in range(geom.n_views))
    return SubsetScheme(n_subsets, assignment, tuple(bit_reversal_order(n_subsets)))


def _joseph_view(points, dirs, grid: ImageGrid):
    """Matrix entries (ray_local, pixel, weight) for one bundle of rays."""
    rows, cols, vals = [], [], []
    x0 = -(grid.nx - 1) / 2.0 * grid.dx
    y0 = -(grid.ny - 1) / 2.0 * grid.dy
    steep = np.abs(dirs[:, 1]) >= np.abs(dirs[:, 0])
    for mask, along, across in ((steep, 1, 0), (~steep, 0, 1)):
        ray_idx = np.flatnonzero(mask)
        if ray_idx.size == 0:
            continue
        p = points[ray_idx]
        e = dirs[ray_idx]
        if along == 1:
            n_step, step, n_across, d_across, c_step, c_across = grid.ny, grid.dy, grid.nx, grid.dx, y0, x0
        else:
            n_step, step, n_across, d_across, c_step, c_across = grid.nx, grid.dx, grid.ny, grid.dy, x0, y0
        centres = c_step + np.arange(n_step) * step
        t = (centres[None, :] - p[:, along, None]) / e[:, along, None]
        pos = p[:, across, None] + t * e[:, across, None]
        f = (pos - c_across) / d_across
        i0 = np.floor(f).astype(np.int64)
        frac = f - i0
        length = step / np.abs(e[:, along])
        k = np.broadcast_to(np.arange(n_step)[None, :], f.shape)
        r = np.broadcast_to(ray_idx[:, None], f.shape)
        for idx, w in ((i0, 1.0 - frac), (i0 + 1, frac)):
            w = w * length[:, None]
            ok = (idx >= 0) & (idx < n_across) & (w > 0)
            if along == 1:
                pix = k[ok] * grid.nx + idx[ok]
            else:
                pix = idx[ok] * grid.nx + k[ok]
            rows.append(r[ok])
            cols.append(pix)
            vals.append(w[ok])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def system_matrix(geom: ScanGeometry) -> sp.csr_matrix:
    """Assemble the Joseph system matrix, rows ordered view-major then detector."""
    rows, cols, vals = [], [], []
    for v in range(geom.n_views):
        r, c, w = _joseph_view(*geom.rays(v), geom.grid)
        rows.append(r + v * geom.n_dets)
        cols.append(c)
        vals.append(w)
    rows = np.concatenate(rows).astype(np.int32)
    cols = np.concatenate(cols).astype(np.int32)
    vals = np.concatenate(vals)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(geom.n_rays, geom.grid.size))
    A.sum_duplicates()
    A.sort_indices()
    return A


class Projector:
    """Linear operator pair around an explicit system matrix.

    Rays are grouped into ``n_views`` consecutive blocks of ``n_dets`` rows;
    subset products use row-restricted copies of the same matrix, so subset
    and full projections agree exactly on shared rows.
    """

    def __init__(self, matrix, grid: ImageGrid, n_views: int = 1):
        self.matrix = sp.csr_matrix(matrix, dtype=np.float64)
        self.grid = grid
        self.n_views = n_views
        if self.matrix.shape[1] != grid.size:
            raise DimensionError(f"matrix has {self.matrix.shape[1]} columns, grid has {grid.size} pixels")
        if self.matrix.shape[0] % n_views:
            raise DimensionError("row count is not a multiple of n_views")
        self.n_dets = self.matrix.shape[0] // n_views
        self._matrix_t = self.matrix.T.tocsr()
        self._subsets: dict = {}

    @classmethod
    def from_geometry(cls, geom: ScanGeometry) -> "Projector":
        return cls(system_matrix(geom), geom.grid, geom.n_views)

    @property
    def n_rays(self) -> int:
        return self.matrix.shape[0]

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_dets)

    def subset_rows(self, scheme: SubsetScheme, index: int) -> np.ndarray:
        views = scheme.views(index)
        return (views[:, None] * self.n_dets + np.arange(self.n_dets)[None, :]).ravel()

    def _subset_ops(self, scheme: SubsetScheme, index: int):
        key = (scheme.assignment, index)
        ops = self._subsets.get(key)
        if ops is None:
            sub = self.matrix[self.subset_rows(scheme, index)]
            ops = (sub, sub.T.tocsr())
            self._subsets[key] = ops
        return ops

    def forward(self, image, subset: tuple[SubsetScheme, int] | None = None) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.grid.shape:
            raise DimensionError(f"image shape {image.shape} does not match grid {self.grid.shape}")
        if subset is None:
            return (self.matrix @ image.ravel()).reshape(self.sino_shape)
        sub, _ = self._subset_ops(*subset)
        return (sub @ image.ravel()).reshape(-1, self.n_dets)

    def back(self, rays, subset: tuple[SubsetScheme, int] | None = None) -> np.ndarray:
        rays = np.asarray(rays, dtype=np.float64)
        if subset is None:
            if rays.size != self.n_rays:
                raise DimensionError(f"ray array of size {rays.size}, expected {self.n_rays}")
            return (self._matrix_t @ rays.ravel()).reshape(self.grid.shape)
        _, sub_t = self._subset_ops(*subset)
        if rays.size != sub_t.shape[1]:
            raise DimensionError(f"subset ray array of size {rays.size}, expected {sub_t.shape[1]}")
        return (sub_t @ rays.ravel()).reshape(self.grid.shape)


@functools.lru_cache(maxsize=4)
def get_projector(geom: ScanGeometry) -> Projector:
    return Projector.from_geometry(geom)


def forward_project(image, geom: ScanGeometry, subset=None) -> np.ndarray:
    return get_projector(geom).forward(image, subset)


def back_project(rays, geom: ScanGeometry, subset=None) -> np.ndarray:
    return get_projector(geom).back(rays, subset)
