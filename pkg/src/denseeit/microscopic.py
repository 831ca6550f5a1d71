"""Ab-initio single-photon scattering on a random cloud of F0=1 -> F=0 atoms.

The single-excitation resolvent is built on a restricted basis: the excited
atom a plus a magnetic configuration of its n-1 nearest neighbours, every other
atom staying in M0 = +1.  Couplings are the vacuum dipole-dipole self-energy in
the pole approximation; the diagonal carries -i/2 (Lamb shift absorbed into
omega0).  The total cross section follows from the forward amplitude through
the optical theorem:

    Q0(Delta) = -4 pi k (d0^2/hbar) Im  w^T (z - H)^-1 v,   z = Delta - s(Delta)

which is -pi Im(...) in units lambdabar = gamma = 1.  The quantisation volume of
the T-matrix cancels against the optical-theorem prefactor and never appears.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import COUPLING, DEFAULT_SCHEME, GROUND_SUBLEVELS, INITIAL_SUBLEVEL, PROBE_Q, LevelScheme, ModelParams
from .selfconsistent import control_shift
from .series import SpectrumSeries

log = logging.getLogger(__name__)

MAX_DIM = 200_000
EIG_MAX_DIM = 6_000
COND_LIMIT = 1e8
DENSE_SOLVE_MAX_DIM = 300  # sparse LU wins above this
MAX_PLACEMENT_ATTEMPTS = 1_000_000


class ConfigurationError(RuntimeError):
    pass


class ResourceCapError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configurations


@dataclass
class AtomConfiguration:
    positions: np.ndarray
    seed: int
    box_length: float
    neighbor_count: int = 1
    neighbor_lists: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if not self.neighbor_lists:
            self.neighbor_lists = nearest_neighbors(self.positions, self.neighbor_count - 1)

    @property
    def atom_count(self) -> int:
        return self.positions.shape[0]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "seed": self.seed,
            "box_length": self.box_length,
            "neighbor_count": self.neighbor_count,
            "positions": [[repr(float(x)) for x in row] for row in self.positions],
        }
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path, neighbor_count: int | None = None) -> "AtomConfiguration":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        pos = np.array([[float(x) for x in row] for row in doc["positions"]])
        return cls(pos, int(doc["seed"]), float(doc["box_length"]), neighbor_count or int(doc["neighbor_count"]))

    def with_neighbor_count(self, n: int) -> "AtomConfiguration":
        return AtomConfiguration(self.positions, self.seed, self.box_length, n)


def nearest_neighbors(positions: np.ndarray, k: int) -> list[np.ndarray]:
    """k nearest neighbours of each atom in distance order, ties to the lower index."""
    n = positions.shape[0]
    if k <= 0:
        return [np.empty(0, dtype=int) for _ in range(n)]
    if k > n - 1:
        raise ValueError(f"cannot pick {k} neighbours among {n} atoms")
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    idx = np.arange(n)
    out = []
    for a in range(n):
        order = np.lexsort((idx, dist[a]))
        order = order[order != a]
        out.append(order[:k].copy())
    return out


def sample_configuration(params: ModelParams) -> AtomConfiguration:
    """Uniform i.i.d. positions in the cube [0, L]^3 from a seeded generator.

    With ``min_separation`` > 0 atoms are placed one after another and each
    candidate violating the exclusion radius is redrawn (random sequential
    addition), which slightly favours more ordered configurations than a true
    hard-sphere gas.
    """
    n, box = params.atom_count, params.box_length
    rng = np.random.default_rng(params.seed)
    dmin = params.min_separation
    if dmin <= 0:
        pos = rng.uniform(0.0, box, size=(n, 3))
    else:
        r = dmin / 2
        if n > 1 and n * (4 / 3) * math.pi * r**3 > 0.7405 * (box + 2 * r) ** 3:
            raise ConfigurationError(f"cannot pack {n} atoms with separation {dmin} in a box of side {box:.4g}")
        pos = np.empty((n, 3))
        attempts = 0
        placed = 0
        while placed < n:
            cand = rng.uniform(0.0, box, size=3)
            attempts += 1
            if attempts > MAX_PLACEMENT_ATTEMPTS:
                raise ConfigurationError(f"placed only {placed} of {n} atoms after {MAX_PLACEMENT_ATTEMPTS} attempts")
            if placed and np.min(np.sum((pos[:placed] - cand) ** 2, axis=1)) < dmin * dmin:
                continue
            pos[placed] = cand
            placed += 1
    return AtomConfiguration(pos, params.seed, box, params.neighbor_count)


# ---------------------------------------------------------------------------
# dipole-dipole coupling


def greens_dyadic(R, omega: float = 1.0) -> np.ndarray:
    """Field tensor of an oscillating point dipole, E(R) = G(R) p (Gaussian units).

    G = e^{ikR}/R^3 [ (k^2R^2 + ikR - 1) delta - (k^2R^2 + 3ikR - 3) RR/R^2 ].
    ``omega`` is the wavenumber omega/c (1 at resonance).  Works on (..., 3)
    arrays of separations and returns (..., 3, 3).
    """
    R = np.asarray(R, dtype=float)
    r = np.linalg.norm(R, axis=-1)
    if np.any(r == 0):
        raise ValueError("greens_dyadic is singular at R = 0")
    k = omega
    x = k * r
    rhat = R / r[..., None]
    pref = np.exp(1j * x) / r**3
    a = pref * (x * x + 1j * x - 1)
    b = pref * (x * x + 3j * x - 3)
    eye = np.eye(3)
    G = a[..., None, None] * eye - b[..., None, None] * rhat[..., :, None] * rhat[..., None, :]
    # vectorised products can differ by an ulp across the diagonal; force exact symmetry
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def _dipole_tables(scheme: LevelScheme) -> tuple[np.ndarray, np.ndarray]:
    """Absorption and emission Cartesian vectors indexed like GROUND_SUBLEVELS."""
    absorb = np.array([scheme.absorption_vector(m) for m in GROUND_SUBLEVELS])
    return absorb, absorb.conj()


def pair_coupling_table(G: np.ndarray, scheme: LevelScheme = DEFAULT_SCHEME) -> np.ndarray:
    """V[..., o, i] = -(d0^2/hbar) <n|d|m_i> . G . <m_o|d|n> for every sublevel pair.

    i indexes the absorber's initial sublevel, o the emitter's final one, both
    in GROUND_SUBLEVELS order.  The minus sign makes the imaginary part of the
    pair coupling at R -> 0 equal to the (negative) single-atom damping share.
    """
    absorb, emit = _dipole_tables(scheme)
    return -COUPLING * np.einsum("ix,...xy,oy->...oi", absorb, G, emit)


def self_energy_pair(a: int, b: int, m_out: int, m_in: int, config: AtomConfiguration, scheme: LevelScheme = DEFAULT_SCHEME) -> complex:
    """Coupling from (a excited, b in m_in) to (b excited, a in m_out), units of gamma."""
    if a == b:
        raise ValueError("self_energy_pair needs two distinct atoms")
    G = greens_dyadic(config.positions[b] - config.positions[a])
    absorb = scheme.absorption_vector(m_in)
    emit = scheme.emission_vector(m_out)
    return complex(-COUPLING * absorb @ G @ emit)


# ---------------------------------------------------------------------------
# restricted basis

_DIGIT = {1: 0, 0: 1, -1: 2}


@dataclass
class RestrictedBasis:
    """States (a, mu): atom a excited, mu = sublevels of its n-1 neighbours.

    Neighbours are taken in ascending index order and mu runs through
    product((+1, 0, -1), repeat=n-1), so the all-(+1) state of atom a has
    index a * 3**(n-1).
    """

    atom_count: int
    n: int
    neighbors: np.ndarray  # (N, n-1) ascending indices
    configs: np.ndarray  # (3**(n-1), n-1) sublevel values

    @property
    def block(self) -> int:
        return 3 ** (self.n - 1)

    @property
    def dim(self) -> int:
        return self.atom_count * self.block

    def index(self, a: int, mu) -> int:
        code = 0
        for m in mu:
            code = 3 * code + _DIGIT[int(m)]
        return a * self.block + code

    def elastic_indices(self) -> np.ndarray:
        return np.arange(self.atom_count) * self.block

    def state(self, i: int) -> tuple[int, tuple[int, ...]]:
        a, code = divmod(i, self.block)
        return a, tuple(int(m) for m in self.configs[code])


def build_basis(config: AtomConfiguration, n: int, max_dim: int = MAX_DIM) -> RestrictedBasis:
    N = config.atom_count
    if not 1 <= n <= N:
        raise ValueError(f"neighbour count n={n} outside [1, {N}]")
    dim = N * 3 ** (n - 1)
    if dim > max_dim:
        raise ResourceCapError(f"restricted basis dimension {dim} exceeds cap {max_dim}")
    if config.neighbor_count != n:
        config = config.with_neighbor_count(n)
    nbrs = np.array([np.sort(l) for l in config.neighbor_lists], dtype=int).reshape(N, n - 1)
    configs = np.array(list(itertools.product(GROUND_SUBLEVELS, repeat=n - 1)), dtype=int).reshape(3 ** (n - 1), n - 1)
    return RestrictedBasis(N, n, nbrs, configs)


# ---------------------------------------------------------------------------
# effective Hamiltonian


@dataclass
class EffectiveHamiltonian:
    basis: RestrictedBasis
    matrix: sp.csr_matrix
    scheme: LevelScheme = DEFAULT_SCHEME
    _eig: tuple | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def eigendecomposition(self):
        """(eigenvalues, right eigenvectors, LU of the eigenvector matrix, cond estimate)."""
        if self._eig is None:
            lam, vr = sla.eig(self.dense(), check_finite=False, overwrite_a=True)
            lu = sla.lu_factor(vr, check_finite=False)
            anorm = np.linalg.norm(vr, 1)
            rcond, info = sla.lapack.zgecon(lu[0], anorm)
            cond = math.inf if rcond == 0 else 1.0 / rcond
            self._eig = (lam, vr, lu, cond)
        return self._eig


def _digits(values: np.ndarray) -> np.ndarray:
    return np.where(values == 1, 0, np.where(values == 0, 1, 2))


def assemble_hamiltonian(basis: RestrictedBasis, config: AtomConfiguration, params: ModelParams | None = None, scheme: LevelScheme = DEFAULT_SCHEME) -> EffectiveHamiltonian:
    """Sparse effective Hamiltonian (units gamma, relative to omega0).

    A hop from (a, mu) to (b, mu') is kept when every atom other than a and b
    has the same sublevel in the two full configurations implied by the
    truncation (neighbours read from mu / mu', everyone else +1).  The atom b
    then absorbs from its source sublevel and a is left in its target one.
    """
    N, n, K = basis.atom_count, basis.n, basis.block
    if config.atom_count != N:
        raise ValueError("basis and configuration describe different atom counts")
    nbrs = basis.neighbors
    if n > 1:
        expected = np.array([np.sort(l[: n - 1]) for l in nearest_neighbors(config.positions, n - 1)])
        if not np.array_equal(expected.reshape(N, n - 1), nbrs):
            raise ValueError("basis neighbour lists do not match the configuration")

    pos = config.positions
    R = pos[None, :, :] - pos[:, None, :]  # R[a, b] = r_b - r_a
    off = ~np.eye(N, dtype=bool)
    G = np.zeros((N, N, 3, 3), dtype=complex)
    G[off] = greens_dyadic(R[off])
    V = pair_coupling_table(G, scheme)  # V[a, b, o, i]
    plus = _DIGIT[INITIAL_SUBLEVEL]

    rows = [np.arange(basis.dim)]
    cols = [np.arange(basis.dim)]
    vals = [np.full(basis.dim, -0.5j)]

    nbr_sets = [set(map(int, nb)) for nb in nbrs]
    near = np.zeros((N, N), dtype=bool)
    if n > 1:
        for a in range(N):
            for c in nbrs[a]:
                near[a, c] = near[c, a] = True
        member = np.zeros((N, N), dtype=bool)
        for a in range(N):
            member[a, nbrs[a]] = True
        shares = (member.astype(np.int32) @ member.T.astype(np.int32)) > 0
        near |= shares
    np.fill_diagonal(near, False)

    far = off & ~near
    fa, fb = np.nonzero(far)
    rows.append(fb * K)
    cols.append(fa * K)
    vals.append(V[fa, fb, plus, plus])

    weights = 3 ** np.arange(n - 2, -1, -1) if n > 1 else np.zeros(0, dtype=int)
    for a, b in zip(*np.nonzero(near)):
        a, b = int(a), int(b)
        Sa, Sb = nbr_sets[a], nbr_sets[b]
        shared = sorted((Sa & Sb) - {a, b})
        free = [("s", c) for c in shared]
        if b in Sa:
            free.append(("mb", b))
        if a in Sb:
            free.append(("ma", a))
        assign = np.array(list(itertools.product(GROUND_SUBLEVELS, repeat=len(free))), dtype=int).reshape(3 ** len(free), len(free))
        M = assign.shape[0]
        mu = np.ones((M, n - 1), dtype=int)
        mup = np.ones((M, n - 1), dtype=int)
        m_b = np.ones(M, dtype=int)
        m_a = np.ones(M, dtype=int)
        pos_a = {c: j for j, c in enumerate(nbrs[a])}
        pos_b = {c: j for j, c in enumerate(nbrs[b])}
        for j, (kind, c) in enumerate(free):
            col = assign[:, j]
            if kind == "s":
                mu[:, pos_a[c]] = col
                mup[:, pos_b[c]] = col
            elif kind == "mb":
                mu[:, pos_a[c]] = col
                m_b = col
            else:
                mup[:, pos_b[c]] = col
                m_a = col
        rows.append(b * K + _digits(mup) @ weights)
        cols.append(a * K + _digits(mu) @ weights)
        vals.append(V[a, b, _digits(m_a), _digits(m_b)])

    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.dim, basis.dim),
    ).tocsr()
    H.sum_duplicates()
    return EffectiveHamiltonian(basis, H, scheme)


# ---------------------------------------------------------------------------
# forward amplitude and cross section


def probe_vectors(H: EffectiveHamiltonian, config: AtomConfiguration, k: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Source v (absorption at a, e^{ikz_a}) and detection w (e^{-ikz_b}) on the elastic states."""
    c = H.scheme.dipole_component(INITIAL_SUBLEVEL, PROBE_Q)
    z = config.positions[:, 2]
    idx = H.basis.elastic_indices()
    v = np.zeros(H.dim, dtype=complex)
    w = np.zeros(H.dim, dtype=complex)
    v[idx] = c * np.exp(1j * k * z)
    w[idx] = np.conj(c) * np.exp(-1j * k * z)
    return v, w


def _shifted_energies(grid, params: ModelParams) -> np.ndarray:
    out = np.empty(len(grid), dtype=complex)
    for i, d in enumerate(grid):
        s = control_shift(float(d), params)
        out[i] = np.nan if s is None else d - s
    return out


def forward_amplitudes(grid, H: EffectiveHamiltonian, config: AtomConfiguration, params: ModelParams, method: str = "auto") -> tuple[np.ndarray, str]:
    """w^T (z - H)^-1 v over the grid; returns (amplitudes, method used).

    ``method``: "eig" (one eigendecomposition, O(dim) per frequency),
    "direct" (a linear solve per frequency, sparse LU for large dim) or "auto".
    An ill-conditioned eigenvector matrix falls back to "direct".
    """
    grid = np.asarray(grid, dtype=float)
    v, w = probe_vectors(H, config)
    zs = _shifted_energies(grid, params)
    ok = ~np.isnan(zs)
    amp = np.zeros(len(grid), dtype=complex)
    if method == "auto":
        method = "eig" if H.dim <= EIG_MAX_DIM else "direct"
    if method == "eig":
        lam, vr, lu, cond = H.eigendecomposition()
        if cond > COND_LIMIT:
            log.warning("eigenvector condition number %.3g above %.0e; using direct solves", cond, COND_LIMIT)
            method = "direct"
        else:
            right = sla.lu_solve(lu, v, check_finite=False)
            left = w @ vr
            weights = left * right
            amp[ok] = (weights[None, :] / (zs[ok, None] - lam[None, :])).sum(axis=1)
            return amp, "eig"
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    if H.dim <= DENSE_SOLVE_MAX_DIM:
        Hd = H.dense()
        eye = np.eye(H.dim)
        for i in np.nonzero(ok)[0]:
            amp[i] = w @ np.linalg.solve(zs[i] * eye - Hd, v)
    else:
        eye = sp.identity(H.dim, dtype=complex, format="csc")
        Hc = H.matrix.tocsc()
        for i in np.nonzero(ok)[0]:
            lu = spla.splu(zs[i] * eye - Hc)
            amp[i] = w @ lu.solve(v)
    return amp, "direct"


def forward_amplitude(omega: float, H: EffectiveHamiltonian, config: AtomConfiguration, params: ModelParams, method: str = "auto") -> complex:
    return complex(forward_amplitudes([omega], H, config, params, method)[0][0])


def cross_section_from_amplitude(amp) -> np.ndarray:
    return -4 * math.pi * COUPLING * np.imag(amp)


def total_cross_section(omega: float, H: EffectiveHamiltonian, config: AtomConfiguration, params: ModelParams, method: str = "auto") -> float:
    """Q0 in units of lambdabar^2."""
    return float(cross_section_from_amplitude(forward_amplitude(omega, H, config, params, method)))


def cross_section_spectrum(
    grid,
    params: ModelParams,
    config: AtomConfiguration | None = None,
    n: int | None = None,
    method: str = "auto",
    max_dim: int = MAX_DIM,
    scheme: LevelScheme = DEFAULT_SCHEME,
) -> SpectrumSeries:
    """Sample (or reuse) a configuration, assemble H and sweep Q0 over the grid."""
    if config is None:
        config = sample_configuration(params)
    n = params.neighbor_count if n is None else n
    basis = build_basis(config, n, max_dim=max_dim)
    H = assemble_hamiltonian(basis, config, params, scheme)
    amp, used = forward_amplitudes(grid, H, config, params, method)
    return SpectrumSeries(
        np.asarray(grid, dtype=float),
        {"q0": cross_section_from_amplitude(amp), "amplitude": amp},
        meta={
            "params": params.to_dict(),
            "seed": config.seed,
            "neighbor_count": n,
            "dimension": basis.dim,
            "method": used,
        },
    )


def single_atom_cross_section(grid, params: ModelParams) -> np.ndarray:
    """sigma_1 from the same machinery with one atom."""
    one = params.with_(atom_count=1, neighbor_count=1)
    cfg = AtomConfiguration(np.zeros((1, 3)), params.seed, 0.0, 1)
    return cross_section_spectrum(grid, one, cfg, n=1, method="direct")["q0"]


XSECTION_COLUMNS = [
    ("detuning", lambda s: s.detuning),
    ("q0_lambdabar2", lambda s: s["q0"]),
]
