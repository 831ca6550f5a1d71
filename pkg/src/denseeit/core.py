"""Units, level scheme and parameter handling shared by both calculation schemes.

Dimensionless units throughout: the natural linewidth gamma = 1, the reduced
wavelength lambdabar = 1/k0 = 1 and hbar = 1.  Frequencies are detunings from
the bare transition frequency omega0 in units of gamma; lengths are in
lambdabar.  Slowly varying prefactors (omega**2, omega**3) are frozen at omega0.

Level scheme: ground F0 = 1 (M0 = -1, 0, +1), excited F = 0.  All atoms start in
M0 = +1 and the weak probe is sigma-minus polarised, so the probe only drives
M0 = +1 <-> M = 0.  The two control fields sit on the empty transitions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

# d0**2 * omega0**3 / (hbar c**3) in units of gamma.  Fixed so that the
# extraordinary-mode rate reduces to gamma in the dilute limit, which is the
# same as gamma = 4 d0^2 k^3 / hbar summed over three equal decay channels.
COUPLING = 0.25

GROUND_SUBLEVELS = (1, 0, -1)
PROBE_Q = -1
INITIAL_SUBLEVEL = 1

# <F=0,M=0| d_q |F0=1,M0=m> / d0 for q = -m.  Condon-Shortley sign of the
# Clebsch-Gordan coefficient <1 m; 1 -m | 0 0> = (-1)**(1-m) / sqrt(3).
CONDON_SHORTLEY = {1: 1.0 + 0j, 0: -1.0 + 0j, -1: 1.0 + 0j}


class ConfigError(ValueError):
    """Invalid run configuration (bad value or schema)."""


@dataclass(frozen=True)
class LevelScheme:
    """F0 = 1 -> F = 0 scheme with a selectable phase convention.

    ``phases`` maps each ground sublevel to the phase of its reduced matrix
    element.  Observables must not depend on it; tests flip it on purpose.
    """

    phases: Mapping[int, complex] = field(default_factory=lambda: dict(CONDON_SHORTLEY))

    d_ground: int = 3
    d_excited: int = 1

    def dipole_component(self, m_ground: int, q: int) -> complex:
        if m_ground not in GROUND_SUBLEVELS or q not in (-1, 0, 1):
            raise ValueError(f"invalid sublevel/polarisation ({m_ground}, {q})")
        if q != -m_ground:
            return 0j
        return complex(self.phases[m_ground])

    def absorption_vector(self, m_ground: int) -> np.ndarray:
        """Cartesian <n| d |m> in units of d0."""
        sph = np.zeros(3, dtype=complex)
        for i, q in enumerate(SPHERICAL_ORDER):
            # d = sum_q d_q e_q^*
            sph[i] = self.dipole_component(m_ground, q)
        return spherical_cartesian(sph, conjugate_basis=True)

    def emission_vector(self, m_ground: int) -> np.ndarray:
        """Cartesian <m| d |n> in units of d0."""
        return np.conj(self.absorption_vector(m_ground))


DEFAULT_SCHEME = LevelScheme()


def dipole_component(m_ground: int, q: int) -> complex:
    """Spherical component q of <F=0,M=0| d |F0=1,M0=m_ground> in units of d0."""
    return DEFAULT_SCHEME.dipole_component(m_ground, q)


SPHERICAL_ORDER = (-1, 0, 1)
_S2 = 1.0 / math.sqrt(2.0)
# columns: e_{-1} = (x - iy)/sqrt2, e_0 = z, e_{+1} = -(x + iy)/sqrt2
SPHERICAL_BASIS = np.array(
    [
        [_S2, 0.0, -_S2],
        [-1j * _S2, 0.0, -1j * _S2],
        [0.0, 1.0, 0.0],
    ],
    dtype=complex,
)


def spherical_cartesian(v, conjugate_basis: bool = False) -> np.ndarray:
    """Map components on (e_-1, e_0, e_+1) to Cartesian (x, y, z).

    With ``conjugate_basis`` the components multiply e_q^* instead of e_q,
    which is how a dipole operator expands (d = sum_q d_q e_q^*).
    """
    v = np.asarray(v, dtype=complex)
    basis = SPHERICAL_BASIS.conj() if conjugate_basis else SPHERICAL_BASIS
    return basis @ v


def cartesian_spherical(v) -> np.ndarray:
    """Inverse of :func:`spherical_cartesian`."""
    return SPHERICAL_BASIS.conj().T @ np.asarray(v, dtype=complex)


@dataclass(frozen=True)
class ModelParams:
    density: float = 1.0
    rabi_control: float = 0.0
    control_detuning: float = 0.0
    slab_length: float = 0.0
    atom_count: int = 1
    neighbor_count: int = 1
    min_separation: float = 0.0
    seed: int = 0

    @property
    def box_length(self) -> float:
        return (self.atom_count / self.density) ** (1.0 / 3.0)

    def with_(self, **changes: Any) -> "ModelParams":
        """Copy with changes; re-derives slab_length when N or density change."""
        derived = math.isclose(self.slab_length, self.box_length, rel_tol=1e-12)
        new = replace(self, **changes)
        if derived and "slab_length" not in changes:
            new = replace(new, slab_length=new.box_length)
        return new

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_INT_FIELDS = {"atom_count", "neighbor_count", "seed"}
_PARAM_NAMES = {f.name for f in fields(ModelParams)}


def validate_params(raw: Mapping[str, Any]) -> ModelParams:
    """Build ModelParams from a raw mapping, filling defaults.

    Unknown keys are ignored here (run configs carry grid/pulse sections).
    ``slab_length`` defaults to the cube side (N / density)**(1/3).
    """
    values: dict[str, Any] = {}
    for name in _PARAM_NAMES:
        if name not in raw or raw[name] is None:
            continue
        val = raw[name]
        try:
            if name in _INT_FIELDS:
                if isinstance(val, bool) or float(val) != int(val):
                    raise ConfigError(f"{name} must be an integer, got {val!r}")
                val = int(val)
            else:
                val = float(val)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{name} must be numeric, got {val!r}") from None
        values[name] = val

    density = values.get("density", 1.0)
    if not density > 0 or not math.isfinite(density):
        raise ConfigError(f"density must be positive, got {density}")
    n_atoms = values.get("atom_count", 1)
    if n_atoms < 1:
        raise ConfigError(f"atom_count must be >= 1, got {n_atoms}")
    n_nbr = values.get("neighbor_count", 1)
    if n_nbr < 1:
        raise ConfigError(f"neighbor_count must be >= 1, got {n_nbr}")
    if n_nbr > n_atoms:
        raise ConfigError(f"neighbor_count exceeds atom_count ({n_nbr} > {n_atoms})")
    if values.get("rabi_control", 0.0) < 0:
        raise ConfigError(f"rabi_control must be non-negative, got {values['rabi_control']}")
    if values.get("min_separation", 0.0) < 0:
        raise ConfigError(f"min_separation must be non-negative, got {values['min_separation']}")
    if values.get("seed", 0) < 0:
        raise ConfigError("seed must be an unsigned integer")
    if "slab_length" in values and values["slab_length"] < 0:
        raise ConfigError("slab_length must be non-negative")

    params = ModelParams(**values)
    if "slab_length" not in values:
        params = replace(params, slab_length=params.box_length)
    return params


def load_config(path: str | Path) -> dict:
    """Read a JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return raw
