"""Command-line runs: ``denseeit <command> --config run.json --out DIR``.

Every run writes its CSV/JSON outputs plus ``manifest.json``.  Failures write
``error.json`` (and echo it on stderr) with exit status 2 for configuration
problems, 3 for solver failures and 4 for resource caps.

Environment overrides (flags win over the environment):
  DENSEEIT_WORKERS   default worker count
  DENSEEIT_MAX_DIM   restricted-basis dimension cap
  DENSEEIT_GRID      default grid, "min:max:points"
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import ConfigError, ModelParams, load_config, validate_params
from .microscopic import (
    MAX_DIM,
    XSECTION_COLUMNS,
    ConfigurationError,
    ResourceCapError,
    build_basis,
    cross_section_spectrum,
    sample_configuration,
)
from .selfconsistent import CHI_COLUMNS, BranchError, OracleError, SolverError, chi_spectrum
from .series import write_csv, write_json
from .slab import (
    PULSE_COLUMNS,
    TRANSMISSION_COLUMNS,
    SpectralLeakageError,
    gaussian_pulse,
    group_delay,
    propagate_pulse,
    pulse_frequencies,
    pulse_metrics,
    transmission_spectrum,
    transparency_window,
)
from .validation import EnsembleError, compare_schemes, convergence_study, ensemble_average

COMMANDS = ("susceptibility", "transmission", "pulse", "xsection", "compare", "converge")
EXIT_CONFIG, EXIT_SOLVER, EXIT_RESOURCE = 2, 3, 4
DEFAULT_GRID = (-10.0, 10.0, 801)

_PARAM_KEYS = set(ModelParams.__dataclass_fields__)
_RUN_KEYS = {"grid", "seeds", "n_values", "method", "pulse", "max_dim"}
_PULSE_KEYS = {"fwhm", "center", "carrier_detuning", "samples", "dt"}


@dataclass
class RunManifest:
    command: str
    params: dict
    grid: dict
    seeds: list
    output_dir: str
    settings: dict = field(default_factory=dict)
    version: str = __version__
    timestamp: str = ""

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "params": self.params,
            "grid": self.grid,
            "seeds": self.seeds,
            "output_dir": self.output_dir,
            "settings": self.settings,
            "version": self.version,
            "timestamp": self.timestamp,
        }


def parse_grid(text) -> tuple[float, float, int]:
    if isinstance(text, dict):
        try:
            lo, hi, pts = text["min"], text["max"], text["points"]
        except KeyError as exc:
            raise ConfigError(f"grid needs min, max and points (missing {exc.args[0]})") from None
    else:
        parts = str(text).split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid must look like min:max:points, got {text!r}")
        lo, hi, pts = parts
    try:
        lo, hi = float(lo), float(hi)
        pts_f = float(pts)
    except (TypeError, ValueError):
        raise ConfigError(f"grid values must be numeric, got {text!r}") from None
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
        raise ConfigError(f"grid needs finite min < max, got {lo}, {hi}")
    if pts_f != int(pts_f) or pts_f < 2:
        raise ConfigError(f"grid points must be an integer >= 2, got {pts}")
    return lo, hi, int(pts_f)


def parse_seeds(text) -> list[int]:
    try:
        seeds = [int(s) for s in (text.split(",") if isinstance(text, str) else text)]
    except (TypeError, ValueError):
        raise ConfigError(f"seed list must be integers, got {text!r}") from None
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds must be non-negative")
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def _positive_int(text, name) -> int:
    try:
        val = int(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {text!r}") from None
    if val < 1:
        raise ConfigError(f"{name} must be >= 1, got {val}")
    return val


@dataclass
class RunConfig:
    params: ModelParams
    grid: tuple[float, float, int]
    seeds: list[int]
    n_values: list[int]
    method: str
    pulse: dict
    max_dim: int
    workers: int

    @property
    def frequencies(self) -> np.ndarray:
        lo, hi, pts = self.grid
        return np.linspace(lo, hi, pts)


def resolve_config(raw: dict, args, env=os.environ) -> RunConfig:
    unknown = [k for k in raw if k not in _PARAM_KEYS | _RUN_KEYS and not k.startswith("_")]
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    params = validate_params(raw)

    grid = DEFAULT_GRID
    if "DENSEEIT_GRID" in env:
        grid = parse_grid(env["DENSEEIT_GRID"])
    if "grid" in raw:
        grid = parse_grid(raw["grid"])
    if args.grid:
        grid = parse_grid(args.grid)

    seeds = [params.seed]
    if "seeds" in raw:
        seeds = parse_seeds(raw["seeds"])
    if args.seed_list:
        seeds = parse_seeds(args.seed_list)

    n_values = raw.get("n_values", list(range(1, params.neighbor_count + 1)))
    if not isinstance(n_values, list) or not n_values or any(not isinstance(n, int) or n < 1 for n in n_values):
        raise ConfigError("n_values must be a non-empty list of positive integers")
    if n_values != sorted(set(n_values)):
        raise ConfigError("n_values must be strictly ascending")
    if max(n_values) > params.atom_count:
        raise ConfigError("n_values exceed atom_count")

    method = raw.get("method", "auto")
    if method not in ("auto", "eig", "direct"):
        raise ConfigError(f"method must be auto, eig or direct, got {method!r}")

    max_dim = MAX_DIM
    if "DENSEEIT_MAX_DIM" in env:
        max_dim = _positive_int(env["DENSEEIT_MAX_DIM"], "DENSEEIT_MAX_DIM")
    if "max_dim" in raw:
        max_dim = _positive_int(raw["max_dim"], "max_dim")

    workers = os.cpu_count() or 1
    if "DENSEEIT_WORKERS" in env:
        workers = _positive_int(env["DENSEEIT_WORKERS"], "DENSEEIT_WORKERS")
    if args.workers is not None:
        workers = _positive_int(args.workers, "--workers")

    pulse = _resolve_pulse(raw.get("pulse"))
    return RunConfig(params, grid, seeds, list(n_values), method, pulse, max_dim, workers)


def _resolve_pulse(raw) -> dict:
    pulse = {"fwhm": 34.0, "center": 200.0, "carrier_detuning": 0.0, "samples": 4096, "dt": 0.5}
    if raw is None:
        return pulse
    if not isinstance(raw, dict):
        raise ConfigError("pulse must be an object")
    unknown = [k for k in raw if k not in _PULSE_KEYS and not k.startswith("_")]
    if unknown:
        raise ConfigError(f"unknown pulse keys: {', '.join(sorted(unknown))}")
    pulse.update({k: v for k, v in raw.items() if not k.startswith("_")})
    for key in ("fwhm", "dt", "center", "carrier_detuning"):
        if not isinstance(pulse[key], (int, float)) or isinstance(pulse[key], bool):
            raise ConfigError(f"pulse.{key} must be numeric")
    if pulse["fwhm"] <= 0 or pulse["dt"] <= 0:
        raise ConfigError("pulse.fwhm and pulse.dt must be positive")
    n = pulse["samples"]
    if not isinstance(n, int) or n < 16 or n & (n - 1):
        raise ConfigError(f"pulse.samples must be a power of two >= 16, got {n}")
    window = n * pulse["dt"]
    if window < 8 * pulse["fwhm"]:
        raise ConfigError(f"time window {window} shorter than 8 pulse durations")
    if not 0 <= pulse["center"] <= window:
        raise ConfigError("pulse.center lies outside the time window")
    return pulse


# commands


def _susceptibility(cfg: RunConfig, out: Path) -> list[str]:
    grid = cfg.frequencies
    chi = chi_spectrum(grid, cfg.params)
    files = [chi.to_csv(out / "chi.csv", CHI_COLUMNS)]
    if cfg.params.rabi_control > 0:
        bare = chi_spectrum(grid, cfg.params.with_(rabi_control=0.0))
        files.append(bare.to_csv(out / "chi_no_control.csv", CHI_COLUMNS))
    # dilute single-atom line without the local-field shift, for reference
    lor = -(cfg.params.density / 4) / (grid + 0.5j)
    files.append(write_csv(out / "lorentzian.csv", [("detuning", grid), ("re_chi", lor.real), ("im_chi", lor.imag)]))
    write_json(out / "chi_meta.json", {"params": cfg.params.to_dict(), "max_iterations": int(chi["iterations"].max()), "max_residual": float(chi["residual"].max())})
    return [str(f.name) for f in files]


def _transmission(cfg: RunConfig, out: Path) -> list[str]:
    spec = transmission_spectrum(cfg.frequencies, cfg.params)
    spec.to_csv(out / "transmission.csv", TRANSMISSION_COLUMNS)
    write_json(out / "transmission_meta.json", {"params": cfg.params.to_dict(), "slab_length": cfg.params.slab_length})
    return ["transmission.csv", "transmission_meta.json"]


def pulse_run(params: ModelParams, pulse: dict) -> dict:
    """Transmit the configured Gaussian pulse through the slab; returns traces and metrics."""
    time = np.arange(pulse["samples"]) * pulse["dt"]
    inp = gaussian_pulse(time, pulse["center"], pulse["fwhm"], pulse["carrier_detuning"])
    detuning = np.sort(pulse["carrier_detuning"] + pulse_frequencies(inp))
    spec = transmission_spectrum(detuning, params)
    outp = propagate_pulse(inp, spec)
    metrics = pulse_metrics(inp, outp)
    metrics["delay_over_duration"] = metrics["delay"] / metrics["input_fwhm"]
    lo, hi = transparency_window(spec, pulse["carrier_detuning"])
    metrics["window"] = [lo, hi]
    metrics["spectral_fwhm"] = 4 * math.log(2) / pulse["fwhm"]
    metrics["group_delay"] = group_delay(spec, pulse["carrier_detuning"])
    return {"input": inp, "output": outp, "transmission": spec, "metrics": metrics}


def _pulse(cfg: RunConfig, out: Path) -> list[str]:
    res = pulse_run(cfg.params, cfg.pulse)
    write_csv(out / "pulse_in.csv", [(n, f(res["input"])) for n, f in PULSE_COLUMNS])
    write_csv(out / "pulse_out.csv", [(n, f(res["output"])) for n, f in PULSE_COLUMNS])
    res["transmission"].to_csv(out / "transmission.csv", TRANSMISSION_COLUMNS)
    write_json(out / "pulse_metrics.json", {"pulse": cfg.pulse, "params": cfg.params.to_dict(), **res["metrics"]})
    return ["pulse_in.csv", "pulse_out.csv", "transmission.csv", "pulse_metrics.json"]


def _xsection(cfg: RunConfig, out: Path) -> list[str]:
    grid = cfg.frequencies
    files = []
    if len(cfg.seeds) > 1:
        report = ensemble_average(cfg.seeds, grid, cfg.params, workers=cfg.workers, method=cfg.method)
        report.save(out / "ensemble")
        files.append("ensemble/")
    for seed in cfg.seeds:
        p = cfg.params.with_(seed=seed)
        config = sample_configuration(p)
        build_basis(config, p.neighbor_count, max_dim=cfg.max_dim)  # cap check before any work
        spec = cross_section_spectrum(grid, p, config, method=cfg.method, max_dim=cfg.max_dim)
        stem = "xsection" if len(cfg.seeds) == 1 else f"xsection_seed{seed}"
        spec.to_csv(out / f"{stem}.csv", XSECTION_COLUMNS)
        write_json(
            out / f"{stem}_meta.json",
            {
                "seed": seed,
                "N": p.atom_count,
                "density": p.density,
                "n": p.neighbor_count,
                "rabi_control": p.rabi_control,
                "control_detuning": p.control_detuning,
                "dimension": spec.meta["dimension"],
                "method": spec.meta["method"],
            },
        )
        config.save(out / f"configuration_seed{seed}.json")
        files += [f"{stem}.csv", f"{stem}_meta.json", f"configuration_seed{seed}.json"]
    return files


def _compare(cfg: RunConfig, out: Path) -> list[str]:
    report = compare_schemes(cfg.frequencies, cfg.params, cfg.seeds, workers=cfg.workers, method=cfg.method)
    report.save(out)
    return sorted(p.name for p in out.iterdir() if p.name not in ("manifest.json",))


def _converge(cfg: RunConfig, out: Path) -> list[str]:
    p = cfg.params.with_(seed=cfg.seeds[0])
    config = sample_configuration(p)
    build_basis(config, max(cfg.n_values), max_dim=cfg.max_dim)
    report = convergence_study(config, cfg.n_values, cfg.frequencies, p, method=cfg.method)
    report.save(out)
    config.save(out / f"configuration_seed{p.seed}.json")
    return sorted(x.name for x in out.iterdir() if x.name != "manifest.json")


_RUNNERS = {
    "susceptibility": _susceptibility,
    "transmission": _transmission,
    "pulse": _pulse,
    "xsection": _xsection,
    "compare": _compare,
    "converge": _converge,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="denseeit", description="EIT in dense atomic gases: self-consistent and microscopic runs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed-list", help="comma-separated seeds, overrides the config")
        p.add_argument("--workers", help="worker processes for seed ensembles")
        p.add_argument("--grid", help="probe detuning grid min:max:points (write --grid=-10:10:801 for a negative min)")
    return parser


def _error_record(out: Path | None, code: int, exc: BaseException) -> int:
    record = {"exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    for attr in ("index", "residual", "failed"):
        if getattr(exc, attr, None) is not None:
            val = getattr(exc, attr)
            record[attr] = val if not isinstance(val, complex) else [val.real, val.imag]
    if out is not None:
        try:
            write_json(out / "error.json", record)
        except OSError:
            pass
    print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return _error_record(None, EXIT_CONFIG, ConfigError(f"cannot create output directory {out}: {exc.strerror}"))
    try:
        cfg = resolve_config(load_config(args.config), args)
        files = _RUNNERS[args.command](cfg, out)
    except (ConfigError, ConfigurationError) as exc:
        return _error_record(out, EXIT_CONFIG, exc)
    except ResourceCapError as exc:
        return _error_record(out, EXIT_RESOURCE, exc)
    except (SolverError, BranchError, OracleError, SpectralLeakageError, EnsembleError, np.linalg.LinAlgError) as exc:
        return _error_record(out, EXIT_SOLVER, exc)

    lo, hi, pts = cfg.grid
    manifest = RunManifest(
        command=args.command,
        params=cfg.params.to_dict(),
        grid={"min": lo, "max": hi, "points": pts},
        seeds=cfg.seeds,
        output_dir=str(out),
        settings={
            "n_values": cfg.n_values,
            "method": cfg.method,
            "pulse": cfg.pulse,
            "max_dim": cfg.max_dim,
            "workers": cfg.workers,
            "files": files,
        },
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    )
    write_json(out / "manifest.json", manifest.to_dict())
    return 0


if __name__ == "__main__":
    sys.exit(main())
