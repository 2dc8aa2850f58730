"""Image-domain error metrics and noise power spectra (all in HU)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulate import ImageVolume, mu_to_hu


def _hu(img) -> np.ndarray:
    if isinstance(img, ImageVolume):
        return img.to_hu().values
    return mu_to_hu(img)


def _pair(a, b, roi):
    if isinstance(a, ImageVolume) and isinstance(b, ImageVolume) and a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")
    ha, hb = _hu(a), _hu(b)
    if ha.shape != hb.shape:
        raise ValueError(f"shape mismatch: {ha.shape} vs {hb.shape}")
    diff = ha - hb
    if roi is not None:
        diff = diff[roi]
    if diff.size == 0:
        raise ValueError("empty ROI")
    return diff


def rmsd(a, b, roi=None) -> float:
    """Root-mean-squared difference in HU.

    Plain arrays are taken to be attenuation in mm^-1; ``ImageVolume`` inputs
    are converted by unit.  ``roi`` is anything that indexes a 2D array
    (boolean mask or slice tuple).
    """
    d = _pair(a, b, roi)
    return float(np.sqrt(np.mean(d * d)))


def mad(a, b, roi=None) -> float:
    """Mean absolute difference in HU."""
    return float(np.mean(np.abs(_pair(a, b, roi))))


def central_roi(shape, fraction: float = 0.25) -> tuple[slice, slice]:
    """Centred square of side ``fraction * min(shape)``."""
    n = max(int(round(fraction * min(shape))), 2)
    y0 = (shape[0] - n) // 2
    x0 = (shape[1] - n) // 2
    return slice(y0, y0 + n), slice(x0, x0 + n)


@dataclass
class NPSResult:
    spectrum: np.ndarray        # HU^2 mm^2, DC at the centre
    fx: np.ndarray              # mm^-1
    fy: np.ndarray
    radial_freq: np.ndarray     # bin centres, mm^-1
    radial_profile: np.ndarray
    peak_frequency: float
    n_realizations: int
    dx: float = 1.0
    dy: float = 1.0

    @property
    def normalized_profile(self) -> np.ndarray:
        total = self.radial_profile.sum()
        return self.radial_profile / total if total > 0 else self.radial_profile.copy()

    def integral(self) -> float:
        """Integral of the spectrum over the frequency plane (equals the noise variance)."""
        dfx = 1.0 / (self.spectrum.shape[1] * self.dx)
        dfy = 1.0 / (self.spectrum.shape[0] * self.dy)
        return float(self.spectrum.sum() * dfx * dfy)


def radial_profile(spectrum, fx, fy, n_bins: int | None = None):
    """Annular average of a centred 2D spectrum out to the smaller Nyquist frequency."""
    FX, FY = np.meshgrid(fx, fy)
    fr = np.hypot(FX, FY)
    f_max = min(np.abs(fx).max(), np.abs(fy).max())
    df = max(fx[1] - fx[0] if fx.size > 1 else f_max, fy[1] - fy[0] if fy.size > 1 else f_max)
    if n_bins is None:
        n_bins = max(int(round(f_max / df)), 1)
    edges = np.linspace(0.0, f_max, n_bins + 1)
    # half-bin shift so each annulus is centred on a multiple of the grid spacing
    edges = edges - 0.5 * (edges[1] - edges[0])
    edges[0] = 0.0
    idx = np.digitize(fr.ravel(), edges) - 1
    ok = (idx >= 0) & (idx < n_bins)
    sums = np.bincount(idx[ok], weights=spectrum.ravel()[ok], minlength=n_bins)
    counts = np.bincount(idx[ok], minlength=n_bins)
    prof = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    centres = np.linspace(0.0, f_max, n_bins + 1)[:-1]
    return centres, prof


def nps(realizations, roi=None, dx: float = 1.0, dy: float | None = None,
        n_bins: int | None = None, mode: str = "ensemble") -> NPSResult:
    """Noise power spectrum from repeated reconstructions.

    ``mode='ensemble'`` subtracts the ensemble mean and rescales by N/(N-1)
    so the integral matches the unbiased pixel variance.  ``mode='difference'``
    uses consecutive pairwise differences with a factor 1/2.
    """
    if len(realizations) < 2:
        raise ValueError(f"need at least 2 realizations, got {len(realizations)}")
    if isinstance(realizations[0], ImageVolume):
        dx, dy = realizations[0].grid.dx, realizations[0].grid.dy
    dy = dx if dy is None else dy
    stack = np.stack([_hu(r) for r in realizations])
    if roi is None:
        roi = central_roi(stack.shape[1:])
    stack = stack[(slice(None),) + tuple(roi)]
    n, ny, nx = stack.shape
    if mode == "ensemble":
        resid = stack - stack.mean(axis=0)
        scale = n / (n - 1)
    elif mode == "difference":
        resid = stack[1:] - stack[:-1]
        scale = 0.5
    else:
        raise ValueError(f"unknown NPS mode {mode!r}")
    power = np.abs(np.fft.fft2(resid)) ** 2
    spec = np.fft.fftshift(power.mean(axis=0)) * scale * dx * dy / (nx * ny)
    fx = np.fft.fftshift(np.fft.fftfreq(nx, dx))
    fy = np.fft.fftshift(np.fft.fftfreq(ny, dy))
    rf, prof = radial_profile(spec, fx, fy, n_bins)
    peak = float(rf[int(np.argmax(prof))])
    return NPSResult(spec, fx, fy, rf, prof, peak, n, dx, dy)


def nps_peak_path(results) -> tuple[np.ndarray, int]:
    """Peak frequency per frame and the number of increases along the sequence."""
    results = list(results)
    if not results:
        raise ValueError("empty NPS sequence")
    peaks = np.array([r.peak_frequency if isinstance(r, NPSResult) else float(r) for r in results])
    return peaks, int(np.sum(np.diff(peaks) > 0))
