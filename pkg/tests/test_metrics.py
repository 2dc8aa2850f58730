import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pbir.geometry import ImageGrid
from pbir.metrics import NPSResult, central_roi, mad, nps, nps_peak_path, radial_profile, rmsd
from pbir.simulate import ImageVolume, hu_to_mu

hu_images = arrays(np.float64, (6, 7), elements=st.floats(-200, 200))


def vol(hu, dx=1.0):
    ny, nx = hu.shape
    return ImageVolume(ImageGrid(nx, ny, dx, dx), hu, "HU")


class TestDifferences:
    def test_identical(self, rng):
        a = hu_to_mu(rng.normal(0, 10, (5, 5)))
        assert rmsd(a, a) == 0 and mad(a, a) == 0

    def test_constant_offset(self):
        a = vol(np.zeros((4, 4)))
        b = vol(np.full((4, 4), 3.0))
        assert rmsd(a, b) == pytest.approx(3.0) and mad(a, b) == pytest.approx(3.0)

    def test_checkerboard(self):
        c = 7.0
        board = c * (-1.0) ** np.add.outer(np.arange(6), np.arange(6))
        assert rmsd(vol(board), vol(np.zeros((6, 6)))) == pytest.approx(c)
        assert mad(vol(board), vol(np.zeros((6, 6)))) == pytest.approx(c)

    def test_mu_arrays_in_hu(self):
        assert rmsd(hu_to_mu(np.zeros((2, 2))), hu_to_mu(np.full((2, 2), 5.0))) == pytest.approx(5.0)

    @given(hu_images, hu_images)
    def test_rmsd_dominates_mad(self, a, b):
        assert rmsd(vol(a), vol(b)) >= mad(vol(a), vol(b)) - 1e-9 >= -1e-9

    @given(hu_images, hu_images, st.integers(1, 5))
    @settings(max_examples=50)
    def test_roi_combination(self, a, b, split):
        top = (slice(0, split), slice(None))
        bot = (slice(split, None), slice(None))
        n1, n2 = split * 7, (6 - split) * 7
        A, B = vol(a), vol(b)
        combined = np.sqrt((n1 * rmsd(A, B, top) ** 2 + n2 * rmsd(A, B, bot) ** 2) / (n1 + n2))
        assert combined == pytest.approx(rmsd(A, B), rel=1e-9, abs=1e-9)
        assert (n1 * mad(A, B, top) + n2 * mad(A, B, bot)) / (n1 + n2) == pytest.approx(mad(A, B), abs=1e-9)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            rmsd(vol(np.zeros((4, 4))), vol(np.zeros((4, 4)), dx=2.0))
        with pytest.raises(ValueError):
            mad(np.zeros((3, 3)), np.zeros((4, 4)))


class TestNPS:
    def test_needs_two(self):
        with pytest.raises(ValueError):
            nps([np.zeros((8, 8))])

    def test_identical_realizations(self):
        img = hu_to_mu(np.random.default_rng(0).normal(0, 10, (16, 16)))
        r = nps([img, img.copy()])
        assert not r.spectrum.any() and r.peak_frequency == 0.0

    def test_white_noise_flat(self):
        rng = np.random.default_rng(3)
        ims = [vol(rng.normal(0, 20, (64, 64)), 0.5) for _ in range(32)]
        r = nps(ims, roi=(slice(None), slice(None)))
        assert r.radial_profile.max() / r.radial_profile.min() < 2
        # flat level: sigma^2 dx dy
        assert np.median(r.radial_profile) == pytest.approx(400 * 0.25, rel=0.1)

    @pytest.mark.parametrize("mode", ["ensemble", "difference"])
    def test_parseval(self, mode):
        rng = np.random.default_rng(4)
        ims = []
        for _ in range(10):
            x = rng.normal(0, 10, (40, 40))
            ims.append(vol(x + np.roll(x, 1, 0) + np.roll(x, 1, 1), 2.0))  # correlated noise
        r = nps(ims, roi=(slice(None), slice(None)), mode=mode)
        stack = np.stack([v.values for v in ims])
        var = stack.var(axis=0, ddof=1).mean()
        assert r.integral() == pytest.approx(var, rel=0.05 if mode == "difference" else 1e-9)

    def test_point_symmetric(self):
        rng = np.random.default_rng(5)
        r = nps([vol(rng.normal(0, 5, (16, 16))) for _ in range(4)], roi=(slice(None), slice(None)))
        s = r.spectrum[1:, 1:]
        np.testing.assert_allclose(s, s[::-1, ::-1], rtol=1e-10, atol=1e-10)
        assert r.spectrum.min() >= 0

    def test_profile_shape_and_nyquist(self):
        rng = np.random.default_rng(6)
        r = nps([vol(rng.normal(0, 5, (32, 32)), 3.0) for _ in range(3)], roi=(slice(None), slice(None)),
                n_bins=10)
        assert len(r.radial_profile) == 10 and r.n_realizations == 3
        assert 0 <= r.peak_frequency <= 1 / (2 * 3.0)
        assert r.normalized_profile.sum() == pytest.approx(1.0)

    def test_default_roi(self):
        assert central_roi((128, 128)) == (slice(48, 80), slice(48, 80))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            nps([np.zeros((4, 4))] * 2, mode="median")

    def test_lowpass_noise_peaks_lower(self):
        rng = np.random.default_rng(7)
        k = np.fft.fftfreq(64)
        K = np.hypot(*np.meshgrid(k, k))

        def band(f0):
            out = []
            for _ in range(16):
                F = np.fft.fft2(rng.normal(0, 1, (64, 64))) * np.exp(-((K - f0) / 0.03) ** 2)
                out.append(vol(np.real(np.fft.ifft2(F))))
            return nps(out, roi=(slice(None), slice(None))).peak_frequency

        assert band(0.3) > band(0.15) > band(0.05)


class TestPeakPath:
    def test_single(self):
        peaks, v = nps_peak_path([0.2])
        assert peaks.tolist() == [0.2] and v == 0

    def test_synthetic_spectra(self):
        fx = fy = np.fft.fftshift(np.fft.fftfreq(16))
        res = []
        for b in (5, 3, 4, 1):
            prof = np.zeros(8)
            prof[b] = 1.0
            res.append(NPSResult(np.zeros((16, 16)), fx, fy, np.arange(8) / 16, prof, b / 16, 2))
        peaks, v = nps_peak_path(res)
        assert (peaks * 16).tolist() == [5, 3, 4, 1] and v == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            nps_peak_path([])


def test_radial_profile_of_ring():
    f = np.fft.fftshift(np.fft.fftfreq(32))
    FX, FY = np.meshgrid(f, f)
    spec = (np.abs(np.hypot(FX, FY) - 0.25) < 0.01).astype(float)
    rf, prof = radial_profile(spec, f, f)
    assert rf[int(np.argmax(prof))] == pytest.approx(0.25)
