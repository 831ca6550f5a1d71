"""Cross-checks between the macroscopic and microscopic schemes.

Babinet bridge: an opaque slab of cross-area A = L^2 has total cross section
~2A, so 2A (1 - |T|^2) estimates Q0 near resonance.  Dilute bridge: N
independent scatterers give Q0 = N sigma_1.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ModelParams
from .microscopic import AtomConfiguration, cross_section_spectrum, sample_configuration, single_atom_cross_section
from .series import SpectrumSeries, write_csv, write_json
from .slab import transmission_spectrum


class EnsembleError(RuntimeError):
    def __init__(self, msg, failed, report=None):
        super().__init__(msg)
        self.failed = failed
        self.report = report


@dataclass
class ComparisonReport:
    detuning: np.ndarray
    series: dict[str, np.ndarray] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def save(self, out_dir: str | Path) -> Path:
        """One CSV per series (detuning, value) plus summary.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, values in self.series.items():
            write_csv(out / f"{name}.csv", [("detuning", self.detuning), (name, values)])
        write_json(out / "summary.json", self.summary)
        return out


def relative_sup_difference(a, b) -> float:
    """max |a - b| / max |b|: spectral difference relative to the reference peak."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def babinet_estimate(transmission: SpectrumSeries, box_length: float) -> SpectrumSeries:
    area = box_length**2
    return SpectrumSeries(
        transmission.detuning,
        {"babinet": 2 * area * (1 - transmission["abs_T2"])},
        meta={"box_length": box_length},
    )


def dilute_reference(grid, params: ModelParams) -> SpectrumSeries:
    """N times the single-atom cross section of the microscopic model."""
    sigma1 = single_atom_cross_section(grid, params)
    return SpectrumSeries(np.asarray(grid, dtype=float), {"dilute": params.atom_count * sigma1, "sigma1": sigma1})


def convergence_study(config: AtomConfiguration, n_values, grid, params: ModelParams, method: str = "auto") -> ComparisonReport:
    """Q0 for each n on one configuration, with pairwise difference table."""
    n_values = list(n_values)
    if n_values != sorted(n_values):
        raise ValueError("n_values must be ascending")
    grid = np.asarray(grid, dtype=float)
    spectra = {}
    methods = {}
    for n in n_values:
        s = cross_section_spectrum(grid, params, config, n=n, method=method)
        spectra[n] = s["q0"]
        methods[n] = s.meta["method"]
    table = {}
    for i, na in enumerate(n_values):
        for nb in n_values[i + 1 :]:
            table[f"{na}-{nb}"] = relative_sup_difference(spectra[na], spectra[nb])
    consecutive = [relative_sup_difference(spectra[a], spectra[b]) for a, b in zip(n_values, n_values[1:])]
    monotone = all(x > y for x, y in zip(consecutive, consecutive[1:]))
    summary = {
        "n_values": n_values,
        "seed": config.seed,
        "difference_measure": "max|Q_a - Q_b| / max|Q_b|",
        "pairwise_difference": table,
        "consecutive_difference": consecutive,
        "monotone_convergence": monotone,
        "methods": {str(k): v for k, v in methods.items()},
        "peak": {str(n): _peak(grid, q) for n, q in spectra.items()},
    }
    return ComparisonReport(grid, {f"q0_n{n}": q for n, q in spectra.items()}, summary)


def _peak(grid, values) -> dict:
    i = int(np.argmax(values))
    return {"detuning": float(grid[i]), "value": float(values[i])}


def _member(args):
    grid, params, method = args
    return cross_section_spectrum(grid, params, method=method)["q0"]


def ensemble_average(seeds, grid, params: ModelParams, workers: int = 1, method: str = "auto") -> ComparisonReport:
    """Mean and std of Q0 over configurations drawn with the given seeds."""
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValueError("ensemble_average needs at least two seeds")
    grid = np.asarray(grid, dtype=float)
    jobs = [(grid, params.with_(seed=s), method) for s in seeds]
    results: dict[int, np.ndarray] = {}
    failed = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_member, j) for j in jobs]
            for s, fut in zip(seeds, futures):
                try:
                    results[s] = fut.result()
                except Exception as exc:  # reported below, never dropped
                    failed.append({"seed": s, "error": f"{type(exc).__name__}: {exc}"})
    else:
        for s, job in zip(seeds, jobs):
            try:
                results[s] = _member(job)
            except Exception as exc:
                failed.append({"seed": s, "error": f"{type(exc).__name__}: {exc}"})
    report = _ensemble_report(grid, seeds, results, params)
    if failed:
        report.summary["failed_seeds"] = failed
        raise EnsembleError(f"{len(failed)} of {len(seeds)} ensemble members failed", failed, report)
    return report


def _ensemble_report(grid, seeds, results, params) -> ComparisonReport:
    ok = [s for s in seeds if s in results]
    stack = np.array([results[s] for s in ok]) if ok else np.zeros((0, len(grid)))
    mean = stack.mean(axis=0) if ok else np.full(len(grid), np.nan)
    std = stack.std(axis=0) if ok else np.full(len(grid), np.nan)
    i = int(np.nanargmax(mean)) if ok else 0
    series = {"q0_mean": mean, "q0_std": std}
    for s in ok:
        series[f"q0_seed{s}"] = results[s]
    summary = {
        "seeds": seeds,
        "params": params.to_dict(),
        "peak": _peak(grid, mean) if ok else None,
        "relative_sensitivity_at_peak": float(std[i] / mean[i]) if ok else None,
        "failed_seeds": [],
    }
    return ComparisonReport(grid, series, summary)


def compare_schemes(grid, params: ModelParams, seeds=None, workers: int = 1, method: str = "auto") -> ComparisonReport:
    """Microscopic Q0 (mean +- std), Babinet-scaled slab estimate and dilute reference."""
    grid = np.asarray(grid, dtype=float)
    seeds = [params.seed] if not seeds else [int(s) for s in seeds]
    if len(seeds) > 1:
        micro = ensemble_average(seeds, grid, params, workers=workers, method=method)
        mean, std = micro.series["q0_mean"], micro.series["q0_std"]
    else:
        mean = cross_section_spectrum(grid, params.with_(seed=seeds[0]), method=method)["q0"]
        std = np.zeros_like(mean)
    box = params.box_length
    slab = transmission_spectrum(grid, params.with_(slab_length=box))
    bab = babinet_estimate(slab, box)["babinet"]
    dil = dilute_reference(grid, params)["dilute"]

    i = int(np.argmax(mean))
    mesoscopic = box < 2 * math.pi
    summary = {
        "params": params.to_dict(),
        "seeds": seeds,
        "box_length": box,
        "geometric_area": box**2,
        "mesoscopic": mesoscopic,
        "peak_microscopic": _peak(grid, mean),
        "peak_babinet": _peak(grid, bab),
        "peak_dilute": _peak(grid, dil),
        "babinet_relative_deviation_at_peak": float(abs(mean[i] - bab[i]) / mean[i]),
        "microscopic_to_babinet_peak_ratio": float(mean.max() / bab.max()),
        "microscopic_to_dilute_peak_ratio": float(mean.max() / dil.max()),
        "max_abs_deviation_babinet": float(np.max(np.abs(mean - bab))),
        "max_abs_deviation_dilute": float(np.max(np.abs(mean - dil))),
        "black_disk_bound_ok": bool(mean.max() <= 4 * box**2),
        "relative_sensitivity_at_peak": float(std[i] / mean[i]),
        # shapes only, each curve scaled to unit peak
        "max_deviation_peak_normalized": float(np.max(np.abs(mean / mean.max() - bab / bab.max()))),
    }
    series = {
        "q0_mean": mean,
        "q0_std": std,
        "babinet": bab,
        "dilute": dil,
        "abs_T2": slab["abs_T2"],
        "q0_normalized": mean / mean.max(),
        "babinet_normalized": bab / bab.max(),
    }
    return ComparisonReport(grid, series, summary)
