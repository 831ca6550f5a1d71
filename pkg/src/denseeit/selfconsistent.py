"""Self-consistent macroscopic susceptibility of the dense Lambda medium.

Eliminating the dipole amplitude between the steady-state dipole equation,
the averaged polarisation P = n0 d = chi E and the radiative self-energy gives,
in units gamma = lambdabar = hbar = 1 (d0^2/hbar = 1/4),

    chi = F(chi) = -(rho/4) / (Delta - s(Delta) + pi*rho/3 + i*(1 + gamma_e(chi))/4)

with rho = n0 lambdabar^3, s = Omega_c^2 / (2 (Delta - Delta_c)) the control
dressing and pi*rho/3 = (4 pi/3) n0 d0^2/hbar the Lorentz-Lorenz local-field
term, which pulls the resonance to the red.  gamma_e is the decay rate into the
extraordinary mode of the anisotropic medium; gamma_o = gamma.
"""

from __future__ import annotations

import cmath
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core import COUPLING, ModelParams
from .series import SpectrumSeries

TOL = 1e-10
MAX_ITER = 10_000
RELAX = 0.5
NEWTON_AFTER = 200
PASSIVITY_TOL = 1e-10


class SolverError(RuntimeError):
    """Fixed-point iteration failed; carries the last iterate."""

    def __init__(self, msg, chi=None, residual=None, index=None):
        super().__init__(msg)
        self.chi = chi
        self.residual = residual
        self.index = index


class BranchError(SolverError):
    """Solution left the physical (passive, dilute-connected) branch."""


@dataclass(frozen=True)
class SusceptibilityPoint:
    probe_detuning: float
    chi: complex
    gamma_e: complex
    iterations: int
    residual: float


@dataclass(frozen=True)
class PermittivityTensor:
    """Diagonal permittivity; rows/columns are sigma+, sigma-, pi."""

    matrix: np.ndarray

    @property
    def epsilon(self) -> complex:
        return complex(self.matrix[1, 1])


def permittivity(chi: complex) -> PermittivityTensor:
    m = np.eye(3, dtype=complex)
    m[1, 1] = 1 + 4 * math.pi * chi
    return PermittivityTensor(m)


# ---------------------------------------------------------------------------
# extraordinary-mode decay rate


def _atan_ratio(a: complex) -> complex:
    """arctan(sqrt(a))/sqrt(a); even in sqrt(a), so analytic in a off (-inf, -1]."""
    if abs(a) < 1e-4:
        return 1 - a / 3 + a * a / 5 - a**3 / 7 + a**4 / 9
    r = cmath.sqrt(a)
    return cmath.atan(r) / r


def _atan_ratio_prime(a: complex) -> complex:
    if abs(a) < 1e-4:
        return -1 / 3 + 2 * a / 5 - 3 * a * a / 7 + 4 * a**3 / 9
    return (1 / (1 + a) - _atan_ratio(a)) / (2 * a)


def gamma_e(chi: complex, omega: float = 0.0) -> complex:
    """Extraordinary-mode rate in units of gamma.

    gamma_e = 4 (d0^2 w^3/hbar c^3) sqrt((1+4 pi chi)/(2 pi chi)) arcsin sqrt(2 pi chi/(1+2 pi chi)).
    arcsin(sqrt(a/(1+a))) = arctan(sqrt(a)) with a = 2 pi chi, so the rate is
    sqrt(1+2a) * arctan(sqrt a)/sqrt a, which is free of sqrt sign ambiguity
    and equals 1 at chi = 0.  ``omega`` is accepted for interface symmetry;
    the w^3 prefactor is frozen at resonance.
    """
    chi = complex(chi)
    if chi == 0:
        return 1.0 + 0j
    a = 2 * math.pi * chi
    if a.imag == 0 and a.real <= -1:
        raise BranchError(f"2*pi*chi = {a.real:.6g} lies on the arctan branch cut")
    eps = 1 + 2 * a
    return 4 * COUPLING * cmath.sqrt(eps) * _atan_ratio(a)


def gamma_e_derivative(chi: complex) -> complex:
    a = 2 * math.pi * complex(chi)
    eps = 1 + 2 * a
    root = cmath.sqrt(eps)
    d_da = _atan_ratio(a) / root + root * _atan_ratio_prime(a)
    return 4 * COUPLING * 2 * math.pi * d_da


def dispersion_residual(k_vector, omega: float, chi: complex) -> complex:
    """Left side of the anisotropic dispersion relation, c = 1.

    ``omega`` is the vacuum wavenumber omega/c in units of 1/lambdabar.
    Vanishes on the ordinary branch |k| = omega and on the extraordinary one.
    """
    kx, ky, kz = (complex(x) for x in k_vector)
    k2 = kx * kx + ky * ky + kz * kz
    w2 = omega * omega
    two_pi_chi = 2 * math.pi * chi
    return (k2 - w2) * (k2 - w2 * (1 + 2 * two_pi_chi) + (k2 - kz * kz) * two_pi_chi)


class OracleError(RuntimeError):
    pass


def extraordinary_pole(cos_theta: float, chi: complex, omega: float = 1.0) -> complex:
    """Root k_e(theta) of the second Green's-function denominator in the upper half plane."""
    sin2 = 1.0 - cos_theta * cos_theta
    aniso = 1 + 2 * math.pi * chi * sin2
    eps = 1 + 4 * math.pi * chi
    roots = np.roots([aniso, 0.0, -omega * omega * eps])
    upper = [r for r in roots if r.imag > 1e-300]
    if upper:
        return complex(max(upper, key=lambda r: r.imag))
    # real roots: the -i0 prescription moves the positive one up
    return complex(max(roots, key=lambda r: r.real))


def gamma_e_oracle(chi: complex, omega: float = 0.0, tol: float = 1e-9) -> complex:
    """gamma_e by residues of the trace of the transverse Green's function.

    For each direction cos(theta) = u the radial k integral of the
    extraordinary term is closed in the upper half plane around its pole
    k_e(u); the angular integral is done by adaptive quadrature.
    """
    chi = complex(chi)
    eps = 1 + 4 * math.pi * chi

    def residue(u: float) -> complex:
        aniso = 1 + 2 * math.pi * chi * (1 - u * u)
        k_e = extraordinary_pole(u, chi)
        # numerator eps w^2 over d/dk of the denominator (aniso k^2 - eps w^2)
        return eps / (2 * aniso * k_e)

    # Sigma_e = (w^2 d0^2/hbar^2) (-4 pi hbar)/(2 pi)^3 * int dOmega (i pi Res)
    #         = -i * COUPLING * 2 * int_0^1 Res du      and gamma_e = 4 i Sigma_e
    parts = []
    for take in (lambda z: z.real, lambda z: z.imag):
        val, err = integrate.quad(lambda u: take(residue(u)), 0.0, 1.0, epsabs=tol * 1e-3, epsrel=1e-13, limit=200)
        if err > tol:
            us = np.linspace(0, 1, 65)
            vals = np.array([residue(u) for u in us])
            worst = us[1 + int(np.argmax(np.abs(np.diff(vals, 2))))]
            raise OracleError(f"quadrature did not converge (err {err:.3g}); worst angle cos(theta)={worst:.4f}")
        parts.append(val)
    return 8 * COUPLING * complex(parts[0], parts[1])


# ---------------------------------------------------------------------------
# fixed point


def control_shift(probe_detuning: float, params: ModelParams) -> complex | None:
    """Omega_c^2 / (2 (Delta - Delta_c)); None at exact two-photon resonance."""
    if params.rabi_control == 0:
        return 0.0
    diff = probe_detuning - params.control_detuning
    if diff == 0:
        return None
    return params.rabi_control**2 / (2 * diff)


def lorentzian_chi(probe_detuning: float, params: ModelParams) -> complex:
    """Dilute-limit chi (gamma_e = gamma) with the local-field shift kept."""
    s = control_shift(probe_detuning, params)
    if s is None:
        return 0j
    rho = params.density
    return -(rho * COUPLING) / (probe_detuning - s + math.pi * rho / 3 + 0.5j)


def _fixed_point_map(chi: complex, base: complex, rho: float) -> tuple[complex, complex]:
    g = gamma_e(chi)
    denom = base + 0.25j * (1 + g)
    return -(rho * COUPLING) / denom, denom


def solve_chi(
    probe_detuning: float,
    params: ModelParams,
    seed: complex | None = None,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> SusceptibilityPoint:
    """Solve chi = F(chi) at one probe detuning.

    Damped iteration (relaxation 0.5) from ``seed`` (default: the dilute
    Lorentzian); after NEWTON_AFTER steps switches to complex Newton on
    chi - F(chi) with step halving.
    """
    if not math.isfinite(probe_detuning):
        raise ValueError("probe detuning must be finite")
    s = control_shift(probe_detuning, params)
    if s is None:
        return SusceptibilityPoint(probe_detuning, 0j, 1.0 + 0j, 0, 0.0)
    rho = params.density
    base = probe_detuning - s + math.pi * rho / 3

    chi = lorentzian_chi(probe_detuning, params) if seed is None else complex(seed)
    res = math.inf
    for it in range(1, max_iter + 1):
        f, denom = _fixed_point_map(chi, base, rho)
        g_val = chi - f
        res = abs(g_val)
        if res < tol * max(1.0, abs(chi)):
            return _checked(probe_detuning, chi, it - 1, res)
        if it <= NEWTON_AFTER:
            chi = (1 - RELAX) * chi + RELAX * f
            continue
        # dF/dchi = (rho/4) / denom^2 * (i/4) gamma_e'
        dg = 1 - (rho * COUPLING) / denom**2 * 0.25j * gamma_e_derivative(chi)
        step = g_val / dg
        lam = 1.0
        while lam > 1e-6:
            trial = chi - lam * step
            f_t, _ = _fixed_point_map(trial, base, rho)
            if abs(trial - f_t) < res:
                break
            lam *= 0.5
        chi = trial
    raise SolverError(
        f"no convergence at detuning {probe_detuning} after {max_iter} iterations (residual {res:.3g})",
        chi=chi,
        residual=res,
    )


def _checked(delta: float, chi: complex, iterations: int, res: float) -> SusceptibilityPoint:
    if chi.imag < -PASSIVITY_TOL:
        raise BranchError(f"non-passive solution Im chi = {chi.imag:.3g} at detuning {delta}", chi=chi, residual=res)
    return SusceptibilityPoint(delta, chi, gamma_e(chi), iterations, res)


def _sweep(grid, params: ModelParams) -> list[SusceptibilityPoint]:
    out = []
    seed = None
    for i, delta in enumerate(grid):
        try:
            pt = solve_chi(float(delta), params, seed=seed)
        except SolverError as exc:
            exc.index = i
            raise
        out.append(pt)
        # the exact two-photon point carries no information about the branch
        seed = pt.chi if pt.iterations or pt.chi != 0 else None
    return out


def chi_spectrum(grid, params: ModelParams, workers: int = 1, monitor: bool = True) -> SpectrumSeries:
    """Sweep solve_chi over a monotone grid with continuation.

    Each point is seeded with the previous solution; the first point of the
    grid (or of each chunk when ``workers`` > 1) starts from the dilute
    Lorentzian.  Chunked and serial sweeps agree to the solver tolerance.
    """
    grid = np.asarray(grid, dtype=float)
    steps = np.diff(grid)
    if grid.ndim != 1 or not (np.all(steps > 0) or np.all(steps < 0)):
        raise ValueError("grid must be one-dimensional and strictly monotone")

    if workers > 1 and len(grid) >= 2 * workers:
        chunks = np.array_split(np.arange(len(grid)), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep, grid[idx], params) for idx in chunks]
            points = []
            for idx, fut in zip(chunks, futures):
                try:
                    points.extend(fut.result())
                except SolverError as exc:
                    exc.index = int(idx[0]) + (exc.index or 0)
                    raise
    else:
        points = _sweep(grid, params)

    chi = np.array([p.chi for p in points])
    ge = np.array([p.gamma_e for p in points])
    if monitor:
        jumps = branch_jumps(ge)
        if jumps:
            i = jumps[0]
            raise BranchError(f"discontinuity in gamma_e at grid index {i} (detuning {grid[i]})", index=i)
    return SpectrumSeries(
        grid,
        {
            "chi": chi,
            "gamma_e": ge,
            "iterations": np.array([p.iterations for p in points]),
            "residual": np.array([p.residual for p in points]),
        },
        meta={"params": params.to_dict(), "tolerance": TOL, "relaxation": RELAX},
    )


def branch_jumps(values, factor: float = 10.0, floor: float = 1e-6) -> list[int]:
    """Indices i where |v_i - v_{i-1}| exceeds ``factor`` times both neighbouring steps."""
    v = np.asarray(values)
    if len(v) < 4:
        return []
    d = np.abs(np.diff(v))
    out = []
    for j in range(1, len(d) - 1):
        local = max(d[j - 1], d[j + 1])
        if d[j] > floor and d[j] > factor * local:
            out.append(j + 1)
    return out


CHI_COLUMNS = [
    ("detuning", lambda s: s.detuning),
    ("re_chi", lambda s: s["chi"].real),
    ("im_chi", lambda s: s["chi"].imag),
    ("re_gamma_e", lambda s: s["gamma_e"].real),
    ("im_gamma_e", lambda s: s["gamma_e"].imag),
    ("iterations", lambda s: s["iterations"]),
    ("residual", lambda s: s["residual"]),
]
