import math

import numpy as np
import pytest

from ndec import FilterSpec, apply_filter, design_bessel, filter_grid_search
from ndec.errors import TooShort
from ndec.filters import DEFAULT_CUTOFFS, DEFAULT_ORDERS, reverse_bessel_poly

GRID_CORNERS = [(o, c) for o in (1, 2, 3, 4) for c in (0.05, 0.5)]
FULL_GRID = [(o, c) for o in DEFAULT_ORDERS for c in DEFAULT_CUTOFFS]


def bessel_coeff_oracle(n):
    """Closed-form reverse Bessel coefficients (independent of the recurrence)."""
    out = []
    for k in range(n, -1, -1):
        out.append(
            math.factorial(2 * n - k)
            / (2 ** (n - k) * math.factorial(k) * math.factorial(n - k))
        )
    return np.array(out)


def freq_response(sos, w):
    """Direct cascade evaluation of H(e^{jw}) (test-side oracle)."""
    z = np.exp(-1j * np.atleast_1d(w))
    h = np.ones_like(z)
    for b0, b1, b2, a1, a2 in sos:
        h *= (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
    return h


class TestDesign:
    def test_reverse_bessel_order1(self):
        np.testing.assert_allclose(reverse_bessel_poly(1), [1.0, 1.0])

    def test_order2_denominator(self):
        # recurrence gives s^2 + 3s + 3
        np.testing.assert_allclose(reverse_bessel_poly(2), [1.0, 3.0, 3.0],
                                   atol=1e-9)

    @pytest.mark.parametrize("n", range(1, 7))
    def test_recurrence_matches_factorial_formula(self, n):
        np.testing.assert_allclose(reverse_bessel_poly(n), bessel_coeff_oracle(n),
                                   rtol=1e-12)

    def test_order1_dc_gain(self):
        coeffs = design_bessel(1, 0.2)
        assert coeffs.dc_gain() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("order,cutoff", FULL_GRID)
    def test_dc_gain_unity(self, order, cutoff):
        coeffs = design_bessel(order, cutoff)
        assert abs(coeffs.dc_gain() - 1.0) <= 1e-9

    @pytest.mark.parametrize("order,cutoff", GRID_CORNERS)
    def test_minus_3db_at_cutoff(self, order, cutoff):
        coeffs = design_bessel(order, cutoff)
        mag = abs(freq_response(coeffs.sos, np.pi * cutoff)[0])
        db = 20 * np.log10(mag)
        assert abs(db - 20 * np.log10(1 / np.sqrt(2))) < 0.01
        assert -3.1 < db < -2.9

    @pytest.mark.parametrize("order,cutoff", FULL_GRID)
    def test_stable_and_impulse_decays(self, order, cutoff):
        coeffs = design_bessel(order, cutoff)
        assert np.all(np.abs(coeffs.poles()) < 1.0)
        impulse = np.zeros(100_000)
        impulse[0] = 1.0
        y = apply_filter(impulse, FilterSpec(order=order, cutoff=cutoff,
                                             mode="forward"))
        assert np.max(np.abs(y[-1000:])) < 1e-9

    @pytest.mark.parametrize("order,cutoff", [(2, 0.07), (4, 0.05), (1, 0.15), (3, 0.3)])
    def test_matches_scipy_magnitude(self, order, cutoff):
        signal = pytest.importorskip("scipy.signal")
        sos_ref = signal.bessel(order, cutoff, norm="mag", output="sos")
        w = np.linspace(0.001, 0.9 * np.pi, 300)
        ours = np.abs(freq_response(design_bessel(order, cutoff).sos, w))
        _, h_ref = signal.sosfreqz(sos_ref, worN=w)
        ref = np.abs(h_ref)
        keep = ref > 1e-6
        np.testing.assert_allclose(ours[keep], ref[keep], rtol=1e-7)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            design_bessel(5, 0.1)
        with pytest.raises(ValueError):
            design_bessel(2, 0.01)

    def test_csv_export(self, tmp_path):
        coeffs = design_bessel(4, 0.1)
        path = tmp_path / "sos.csv"
        coeffs.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("section,b0")
        assert len(lines) == 3  # two biquad sections


class TestApply:
    def test_constant_passthrough(self, rng):
        c = -0.73
        x = np.full(400, c)
        fwd = apply_filter(x, FilterSpec(order=3, cutoff=0.1, mode="forward"))
        assert fwd[-1] == pytest.approx(c, rel=1e-9)  # after the transient
        bid = apply_filter(x, FilterSpec(order=3, cutoff=0.1, mode="bid"))
        assert bid[200] == pytest.approx(c, rel=1e-6)
        blk = apply_filter(x, FilterSpec(order=3, cutoff=0.1, mode="block_bid"))
        np.testing.assert_allclose(blk, c, rtol=1e-12)

    def test_bid_zero_phase_on_inband_sine(self):
        t = np.arange(2000)
        x = np.sin(2 * np.pi * 0.01 * t)  # well inside a 0.1-Nyquist band
        y = apply_filter(x, FilterSpec(order=4, cutoff=0.1, mode="bid"))
        lags = np.arange(-40, 41)
        xc = [np.dot(x[200:-200], np.roll(y, lag)[200:-200]) for lag in lags]
        assert lags[int(np.argmax(xc))] == 0

    def test_bid_magnitude_is_forward_squared(self):
        coeffs = design_bessel(3, 0.1)
        n = 8192
        impulse = np.zeros(n)
        impulse[n // 2] = 1.0
        y = apply_filter(impulse, FilterSpec(order=3, cutoff=0.1, mode="bid"))
        mag_bid = np.abs(np.fft.rfft(y))
        w = np.linspace(0, np.pi, len(mag_bid))
        mag_fwd = np.abs(freq_response(coeffs.sos, w))
        keep = mag_fwd > 1e-3
        np.testing.assert_allclose(mag_bid[keep], mag_fwd[keep] ** 2, rtol=1e-6)

    def test_linearity(self, rng):
        x = rng.normal(size=300)
        y = rng.normal(size=300)
        a, b = 2.3, -0.7
        for mode in ("forward", "bid", "block_bid"):
            spec = FilterSpec(order=2, cutoff=0.1, mode=mode)
            lhs = apply_filter(a * x + b * y, spec)
            rhs = a * apply_filter(x, spec) + b * apply_filter(y, spec)
            np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_length_preserved_all_modes(self, rng):
        x = rng.normal(size=257)
        for mode in ("forward", "bid", "block_bid"):
            y = apply_filter(x, FilterSpec(order=2, cutoff=0.2, mode=mode))
            assert y.shape == x.shape

    def test_two_axes_filtered_independently(self, rng):
        x = rng.normal(size=(2, 300))
        spec = FilterSpec(order=2, cutoff=0.1, mode="forward")
        both = apply_filter(x, spec)
        np.testing.assert_array_equal(both[0], apply_filter(x[0], spec))
        np.testing.assert_array_equal(both[1], apply_filter(x[1], spec))

    def test_block_bid_dependence_horizon(self, rng):
        W = 16
        spec = FilterSpec(order=2, cutoff=0.1, mode="block_bid", block_window=W)
        x = rng.normal(size=120)
        base = apply_filter(x, spec)
        for j in (0, 17, 60, 100, 119):
            x2 = x.copy()
            x2[j] += 5.0
            pert = apply_filter(x2, spec)
            unaffected = np.arange(120) + W // 2 < j
            np.testing.assert_array_equal(pert[unaffected], base[unaffected])
            if j >= W // 2:
                # the sample itself must feel an in-horizon perturbation
                assert pert[j] != base[j]

    def test_bid_too_short(self):
        with pytest.raises(TooShort):
            apply_filter(np.ones(10), FilterSpec(order=4, cutoff=0.1, mode="bid"))

    def test_block_bid_too_short(self):
        with pytest.raises(TooShort):
            apply_filter(np.ones(10), FilterSpec(order=2, cutoff=0.1,
                                                 mode="block_bid", block_window=16))


class TestGridSearch:
    def test_recovers_injected_filter(self, rng):
        x = rng.normal(size=(2, 1500))
        target = FilterSpec(order=3, cutoff=0.2, mode="bid")
        labels = apply_filter(x, target)
        best, rows = filter_grid_search(x, labels, mode="bid")
        assert (best.order, best.cutoff) == (3, 0.2)
        assert len(rows) == len(DEFAULT_ORDERS) * len(DEFAULT_CUTOFFS)

    def test_tie_break_keeps_lowest_order_and_cutoff(self, rng):
        x = rng.normal(size=(2, 400))
        labels = x + 0.1 * rng.normal(size=(2, 400))
        best, rows = filter_grid_search(
            x, labels, orders=(2, 2), cutoffs=(0.1, 0.1), mode="forward"
        )
        # duplicated cells score identically; the first (lowest) wins
        assert (best.order, best.cutoff) == (2, 0.1)
        assert rows[0][2] == rows[1][2] == rows[2][2] == rows[3][2]
