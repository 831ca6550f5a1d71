import cmath
import math

import numpy as np
import pytest

from denseeit.core import validate_params
from denseeit.series import SpectrumSeries
from denseeit.slab import (
    PulseTrace,
    SpectralLeakageError,
    fwhm_duration,
    gaussian_pulse,
    group_delay,
    propagate_pulse,
    pulse_metrics,
    transmission,
    transmission_spectrum,
    transparency_window,
)


def textbook(chi, L):
    n = cmath.sqrt(1 + 4 * math.pi * chi)
    return 2 * n / (2 * n * cmath.cos(L * n) - 1j * (1 + n * n) * cmath.sin(L * n))


@pytest.mark.parametrize("chi, L", [(0.01 + 0.02j, 3.0), (0.2j, 1.5), (-0.03 + 0.001j, 10.0), (0.05, 2.2)])
def test_transmission_matches_textbook_form(chi, L):
    assert abs(transmission(0.0, chi, L).amplitude - textbook(chi, L)) < 1e-13


def test_vacuum_and_zero_thickness():
    assert transmission(0.3, 0, 7.0).amplitude == pytest.approx(cmath.exp(7j))
    assert transmission(0.3, 0.5j, 0.0).amplitude == 1


def test_opaque_slab_does_not_overflow():
    t = transmission(0.0, 1.0j, 1e4).amplitude
    assert np.isfinite(t.real) and abs(t) < 1e-100


def test_lossless_dielectric_never_amplifies():
    for L in np.linspace(0.1, 20, 50):
        assert abs(transmission(0.0, 0.1, L).amplitude) <= 1 + 1e-14


def test_negative_length_rejected():
    with pytest.raises(ValueError):
        transmission(0.0, 0.1j, -1.0)


def test_spectrum_columns():
    p = validate_params({"density": 1.0, "atom_count": 100})
    s = transmission_spectrum(np.linspace(-3, 3, 61), p)
    assert np.allclose(s["abs_T2"], np.abs(s["T"]) ** 2)
    assert np.all(s["abs_T2"] <= 1 + 1e-12)
    assert s.meta["slab_length"] == pytest.approx(100 ** (1 / 3))


def test_gaussian_fwhm():
    t = np.arange(4096) * 0.25
    p = gaussian_pulse(t, 500.0, 20.0)
    assert fwhm_duration(p) == pytest.approx(20.0, rel=1e-4)


def test_unit_transfer_is_identity():
    t = np.arange(1024) * 0.5
    p = gaussian_pulse(t, 200.0, 15.0)
    out = propagate_pulse(p, lambda d: np.ones_like(d, dtype=complex))
    assert np.allclose(out.field, p.field, atol=1e-14)


def test_linear_phase_delays_pulse():
    t = np.arange(2048) * 0.5
    p = gaussian_pulse(t, 300.0, 20.0)
    out = propagate_pulse(p, lambda d: np.exp(1j * d * 25.0))
    m = pulse_metrics(p, out)
    assert m["delay"] == pytest.approx(25.0, abs=1e-8)
    assert m["efficiency"] == pytest.approx(1.0, abs=1e-12)
    assert m["broadening"] == pytest.approx(1.0, abs=1e-10)


def test_series_transfer_and_leakage():
    t = np.arange(2048) * 0.5
    p = gaussian_pulse(t, 300.0, 20.0)
    wide = np.linspace(-10, 10, 4001)
    series = SpectrumSeries(wide, {"T": np.exp(0.5j * wide)})
    out = propagate_pulse(p, series)
    assert pulse_metrics(p, out)["delay"] == pytest.approx(0.5, abs=1e-3)
    narrow = np.linspace(-0.01, 0.01, 11)
    with pytest.raises(SpectralLeakageError):
        propagate_pulse(p, SpectrumSeries(narrow, {"T": np.ones(11, dtype=complex)}))


def test_trace_validation():
    with pytest.raises(ValueError):
        PulseTrace(np.array([0.0, 1.0, 3.0]), np.zeros(3))
    with pytest.raises(ValueError):
        PulseTrace(np.arange(3.0), np.zeros(4))


def test_eit_window_and_positive_group_delay():
    p = validate_params({"density": 1.0, "atom_count": 100, "rabi_control": 1.0})
    grid = np.linspace(-1, 1, 2001)
    s = transmission_spectrum(grid, p)
    lo, hi = transparency_window(s, 0.0)
    assert lo < 0 < hi and 0.1 < hi - lo < 0.5
    assert group_delay(s, 0.0) > 5


def test_window_on_synthetic_lorentzian():
    grid = np.linspace(-5, 5, 10001)
    t2 = 1 / (1 + grid**2)
    s = SpectrumSeries(grid, {"abs_T2": t2, "T": np.sqrt(t2).astype(complex)})
    lo, hi = transparency_window(s, 0.0)
    assert lo == pytest.approx(-1, abs=1e-3) and hi == pytest.approx(1, abs=1e-3)
