"""Probe transmission through a slab of the self-consistent medium, and pulse propagation.

Time convention exp(-i omega t): a transfer function exp(i nu t0) delays a
pulse by t0.  Pulse envelopes are functions of time in units of 1/gamma; their
spectra are indexed by the offset nu from the carrier detuning.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ModelParams
from .selfconsistent import chi_spectrum
from .series import SpectrumSeries

LEAKAGE_LIMIT = 1e-3


class SpectralLeakageError(ValueError):
    pass


@dataclass(frozen=True)
class TransmissionPoint:
    probe_detuning: float
    amplitude: complex
    phase_thickness: complex


@dataclass
class PulseTrace:
    time: np.ndarray
    field: np.ndarray
    carrier_detuning: float = 0.0

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.field = np.asarray(self.field, dtype=complex)
        if self.time.shape != self.field.shape:
            raise ValueError("time and field must have the same shape")
        dt = np.diff(self.time)
        if len(dt) and not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
            raise ValueError("time grid must be uniform")

    @property
    def dt(self) -> float:
        return float(self.time[1] - self.time[0])

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.field) ** 2

    def energy(self) -> float:
        return float(np.sum(self.intensity) * self.dt)


def transmission(probe_detuning: float, chi: complex, slab_length: float) -> TransmissionPoint:
    """Complex amplitude transmission of a slab with epsilon = 1 + 4 pi chi.

    T = 2 n / (2 n cos psi - i (1 + n^2) sin psi), n = sqrt(eps) principal,
    psi = L n (omega/c = 1/lambdabar at resonance).
    """
    if slab_length < 0:
        raise ValueError("slab_length must be non-negative")
    eps = 1 + 4 * math.pi * complex(chi)
    n = cmath.sqrt(eps)
    psi = slab_length * n
    if psi == 0:
        return TransmissionPoint(probe_detuning, 1.0 + 0j, 0j)
    if eps == 1:
        return TransmissionPoint(probe_detuning, cmath.exp(1j * psi), psi)
    # written with exp(i psi) factored out so large Im psi does not overflow
    e = cmath.exp(1j * psi)
    e2 = e * e
    denom = n * (1 + e2) + 0.5 * (1 + eps) * (1 - e2)
    amp = 2 * n * e / denom
    return TransmissionPoint(probe_detuning, amp, psi)


def transmission_spectrum(grid, params: ModelParams, chi: SpectrumSeries | None = None, workers: int = 1) -> SpectrumSeries:
    """|T|^2 and T over ``grid`` for a slab of ``params.slab_length``."""
    if chi is None:
        chi = chi_spectrum(grid, params, workers=workers)
    elif not np.array_equal(chi.detuning, np.asarray(grid, dtype=float)):
        raise ValueError("susceptibility series does not match the grid")
    pts = [transmission(d, c, params.slab_length) for d, c in zip(chi.detuning, chi["chi"])]
    amp = np.array([p.amplitude for p in pts])
    return SpectrumSeries(
        chi.detuning,
        {
            "T": amp,
            "abs_T2": np.abs(amp) ** 2,
            "psi": np.array([p.phase_thickness for p in pts]),
            "chi": chi["chi"],
        },
        meta={"params": params.to_dict(), "slab_length": params.slab_length},
    )


TRANSMISSION_COLUMNS = [
    ("detuning", lambda s: s.detuning),
    ("re_T", lambda s: s["T"].real),
    ("im_T", lambda s: s["T"].imag),
    ("abs_T2", lambda s: s["abs_T2"]),
]


def gaussian_pulse(time, center: float, fwhm: float, carrier_detuning: float = 0.0) -> PulseTrace:
    """Gaussian envelope whose intensity has the given FWHM duration."""
    time = np.asarray(time, dtype=float)
    sigma = fwhm / (2 * math.sqrt(2 * math.log(2)))  # of the intensity
    field = np.exp(-((time - center) ** 2) / (4 * sigma**2))
    return PulseTrace(time, field.astype(complex), carrier_detuning)


def pulse_frequencies(trace: PulseTrace) -> np.ndarray:
    """Offsets nu (from the carrier) of the FFT bins, matching exp(-i nu t)."""
    return -2 * math.pi * np.fft.fftfreq(len(trace.time), trace.dt)


def propagate_pulse(trace: PulseTrace, transfer: SpectrumSeries | Callable[[np.ndarray], np.ndarray]) -> PulseTrace:
    """Filter a pulse through a transfer function T(omega).

    ``transfer`` is either a transmission SpectrumSeries (column "T", indexed by
    absolute probe detuning, interpolated linearly in re/im) or a callable of
    absolute detuning.  Spectral energy outside the series' grid is an error
    above 0.1 %.
    """
    nu = pulse_frequencies(trace)
    detuning = trace.carrier_detuning + nu
    spec = np.fft.fft(trace.field)
    if callable(transfer):
        t_vals = np.asarray(transfer(detuning), dtype=complex)
    else:
        grid = transfer.detuning
        amp = transfer["T"]
        if grid[0] > grid[-1]:
            grid, amp = grid[::-1], amp[::-1]
        inside = (detuning >= grid[0]) & (detuning <= grid[-1])
        power = np.abs(spec) ** 2
        leak = power[~inside].sum() / power.sum()
        if leak > LEAKAGE_LIMIT:
            raise SpectralLeakageError(
                f"{leak:.2%} of the pulse energy lies outside the transmission grid "
                f"[{grid[0]}, {grid[-1]}]; widen the grid"
            )
        t_vals = np.zeros_like(spec)
        t_vals[inside] = np.interp(detuning[inside], grid, amp.real) + 1j * np.interp(detuning[inside], grid, amp.imag)
    out = np.fft.ifft(t_vals * spec)
    return PulseTrace(trace.time.copy(), out, trace.carrier_detuning)


def _centroid_width(trace: PulseTrace) -> tuple[float, float]:
    w = trace.intensity
    norm = w.sum()
    t0 = float((trace.time * w).sum() / norm)
    var = float(((trace.time - t0) ** 2 * w).sum() / norm)
    return t0, math.sqrt(var)


def fwhm_duration(trace: PulseTrace) -> float:
    """Intensity FWHM with linear interpolation at the half-maximum crossings."""
    w = trace.intensity
    half = w.max() / 2
    above = np.nonzero(w >= half)[0]
    lo, hi = above[0], above[-1]
    t = trace.time

    def cross(i0, i1):
        return t[i0] + (half - w[i0]) * (t[i1] - t[i0]) / (w[i1] - w[i0])

    left = cross(lo - 1, lo) if lo > 0 else t[lo]
    right = cross(hi, hi + 1) if hi + 1 < len(w) else t[hi]
    return float(right - left)


def pulse_metrics(inp: PulseTrace, out: PulseTrace) -> dict:
    """Centroid delay, energy efficiency, RMS broadening and peak-shift delay."""
    if not np.array_equal(inp.time, out.time):
        raise ValueError("traces must share one time grid")
    e_in = inp.energy()
    if e_in <= 0:
        raise ValueError("input pulse carries no energy")
    c_in, w_in = _centroid_width(inp)
    c_out, w_out = _centroid_width(out)
    return {
        "delay": c_out - c_in,
        "efficiency": out.energy() / e_in,
        "broadening": w_out / w_in,
        "peak_delay": float(out.time[np.argmax(out.intensity)] - inp.time[np.argmax(inp.intensity)]),
        "input_fwhm": fwhm_duration(inp),
    }


PULSE_COLUMNS = [
    ("time", lambda p: p.time),
    ("re_field", lambda p: p.field.real),
    ("im_field", lambda p: p.field.imag),
    ("abs2", lambda p: p.intensity),
]


def transparency_window(spectrum: SpectrumSeries, center: float, level: float = 0.5) -> tuple[float, float]:
    """Edges of the contiguous region around ``center`` where |T|^2 >= level * |T(center)|^2."""
    grid = spectrum.detuning
    t2 = spectrum["abs_T2"]
    i0 = int(np.argmin(np.abs(grid - center)))
    thresh = level * t2[i0]
    lo = i0
    while lo > 0 and t2[lo - 1] >= thresh:
        lo -= 1
    hi = i0
    while hi < len(grid) - 1 and t2[hi + 1] >= thresh:
        hi += 1
    return float(grid[lo]), float(grid[hi])


def group_delay(spectrum: SpectrumSeries, at: float) -> float:
    """d arg T / d omega at ``at`` by central differences on the grid."""
    grid = spectrum.detuning
    phase = np.unwrap(np.angle(spectrum["T"]))
    return float(np.interp(at, grid, np.gradient(phase, grid)))
