"""Ellipse phantoms, HU conversion and Poisson transmission data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ImageGrid, ScanGeometry, get_projector

MU_WATER = 0.02  # mm^-1
HU_PER_MU = 1000.0 / MU_WATER
AIR_HU = -1000.0


@dataclass(frozen=True)
class Ellipse:
    center_x: float
    center_y: float
    semi_axis_a: float
    semi_axis_b: float
    rotation: float = 0.0
    value: float = 0.0

    def __post_init__(self):
        if self.semi_axis_a <= 0 or self.semi_axis_b <= 0:
            raise ValueError("ellipse semi-axes must be positive")


@dataclass
class EllipsePhantom:
    """Additive ellipses on an air background (values in HU)."""

    ellipses: list[Ellipse] = field(default_factory=list)

    @classmethod
    def water_cylinder(cls, radius: float = 160.0) -> "EllipsePhantom":
        return cls([Ellipse(0.0, 0.0, radius, radius, 0.0, 1000.0)])

    @classmethod
    def abdomen(cls, scale: float = 1.0) -> "EllipsePhantom":
        """Elliptical body with soft-tissue, fat and bone-like inserts."""
        s = scale
        body = [
            Ellipse(0.0, 0.0, 160 * s, 120 * s, 0.0, 1040.0),
            Ellipse(-60 * s, 20 * s, 35 * s, 25 * s, 0.3, 20.0),     # liver-like, 60 HU
            Ellipse(55 * s, 30 * s, 22 * s, 22 * s, 0.0, -140.0),    # fat, -100 HU
            Ellipse(0.0, -70 * s, 18 * s, 14 * s, 0.0, 360.0),       # spine, 400 HU
            Ellipse(40 * s, -25 * s, 12 * s, 8 * s, -0.5, 120.0),    # enhancing vessel
            Ellipse(-20 * s, 60 * s, 15 * s, 10 * s, 0.8, 40.0),
        ]
        return cls(body)

    @classmethod
    def from_file(cls, path) -> "EllipsePhantom":
        """Read whitespace-separated rows ``cx cy a b rotation value`` ('#' comments)."""
        ellipses = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            ellipses.append(Ellipse(*map(float, parts)))
        return cls(ellipses)

    def to_text(self) -> str:
        lines = ["# center_x center_y semi_axis_a semi_axis_b rotation value"]
        for e in self.ellipses:
            lines.append(f"{e.center_x!r} {e.center_y!r} {e.semi_axis_a!r} {e.semi_axis_b!r} "
                         f"{e.rotation!r} {e.value!r}")
        return "\n".join(lines) + "\n"


@dataclass
class ImageVolume:
    grid: ImageGrid
    values: np.ndarray
    unit: str = "mm-1"

    def __post_init__(self):
        if self.unit not in ("HU", "mm-1"):
            raise ValueError(f"unknown unit {self.unit!r}")
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    def to_mu(self) -> "ImageVolume":
        return self if self.unit == "mm-1" else ImageVolume(self.grid, hu_to_mu(self.values), "mm-1")

    def to_hu(self) -> "ImageVolume":
        return self if self.unit == "HU" else ImageVolume(self.grid, mu_to_hu(self.values), "HU")


def rasterize(phantom: EllipsePhantom, grid: ImageGrid) -> ImageVolume:
    X, Y = grid.meshgrid()
    img = np.full(grid.shape, AIR_HU)
    for e in phantom.ellipses:
        c, s = math.cos(e.rotation), math.sin(e.rotation)
        xr = (X - e.center_x) * c + (Y - e.center_y) * s
        yr = -(X - e.center_x) * s + (Y - e.center_y) * c
        inside = (xr / e.semi_axis_a) ** 2 + (yr / e.semi_axis_b) ** 2 <= 1.0
        img[inside] += e.value
    return ImageVolume(grid, img, "HU")


def hu_to_mu(hu):
    return MU_WATER * (1.0 + np.asarray(hu, dtype=np.float64) / 1000.0)


def mu_to_hu(mu):
    return (np.asarray(mu, dtype=np.float64) / MU_WATER - 1.0) * 1000.0


@dataclass
class Sinogram:
    """Log-normalised line integrals ``l`` with PWLS weights ``w``, shape (n_views, n_dets)."""

    geom: ScanGeometry
    l: np.ndarray
    w: np.ndarray
    counts: np.ndarray
    I0: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("l", "w", "counts"):
            if getattr(self, name).shape != self.geom.sino_shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, "
                                 f"expected {self.geom.sino_shape}")


def _view_rng(seed: int, view: int) -> np.random.Generator:
    # keyed by (seed, view) so draws do not depend on generation order
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, view]))


def simulate_counts(mu, geom: ScanGeometry, I0: float = 2e5, seed: int = 0,
                    noiseless: bool = False) -> Sinogram:
    """Monochromatic Poisson transmission data.

    ``noiseless=True`` substitutes the Poisson mean: ``l`` is the exact line
    integral and ``w = I0 * exp(-l)``.  Zero counts are clamped to 1 before
    the log; the number of clamped rays is recorded in ``meta``.
    """
    if not I0 > 0:
        raise ValueError(f"I0 must be positive, got {I0}")
    line = get_projector(geom).forward(mu)
    mean = I0 * np.exp(-line)
    if noiseless:
        return Sinogram(geom, line, mean, mean.copy(), float(I0),
                        {"noiseless": True, "seed": None, "n_clamped": 0})
    counts = np.empty_like(mean)
    for v in range(geom.n_views):
        counts[v] = _view_rng(seed, v).poisson(mean[v])
    clamped = counts < 1
    safe = np.maximum(counts, 1.0)
    l = np.log(I0 / safe)
    return Sinogram(geom, l, counts.copy(), counts, float(I0),
                    {"noiseless": False, "seed": int(seed), "n_clamped": int(clamped.sum())})


def weighted_data(sino: Sinogram) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(y, w)`` with ``y = sqrt(w) * l``."""
    if np.any(sino.w < 0):
        raise ValueError("negative statistical weights")
    return np.sqrt(sino.w) * sino.l, sino.w
