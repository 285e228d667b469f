"""Hierarchical equations of motion for excitons in Drude-Lorentz baths.

Every site couples to its own bath through the projector ``|j><j|``.  The
bath correlation function is expanded as

    C(t) = sum_k c_k exp(-nu_k t)

with a leading Drude term ``c_0 = lam gamma (cot(beta gamma / 2) - i)``,
``nu_0 = gamma`` and Matsubara terms ``nu_k = 2 pi k kT``.  Matsubara terms
beyond ``K`` are folded into a Markovian terminator acting on every
auxiliary density operator (ADO).

Units: energies and rates are in cm^-1 and time is ``tau = 2 pi c t``, so
``exp(-i H tau)`` needs no hbar.  A cutoff given in ps^-1 is read as the
decay rate of ``C(t)`` and converted with ``gamma_cm = gamma_ps / (2 pi c)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.integrate import quad

from . import _kernels
from .errors import HeomInstabilityError, HierarchyTooLargeError, InvalidSystemError, ParameterError
from .exciton import (
    BOLTZMANN_CM_PER_K,
    SPEED_OF_LIGHT_CM_PER_FS,
    EnergyScale,
    ExcitonSystem,
    build_one_exciton_hamiltonian,
)
from .traces import PopulationTrace

log = logging.getLogger(__name__)

ANGULAR_PER_CM = 2.0 * math.pi * SPEED_OF_LIGHT_CM_PER_FS  # rad/fs per cm^-1
MAX_ADOS = 10_000_000


def gamma_ps_to_cm(gamma_ps: float) -> float:
    return gamma_ps * 1e-3 / ANGULAR_PER_CM


@dataclass(frozen=True)
class BathSpec:
    lam: float
    gamma_ps: float = 100.0
    temperature: float = 300.0

    def __post_init__(self):
        if not (self.lam >= 0):
            raise ParameterError(f"reorganization energy must be >= 0, got {self.lam}")
        if not (self.gamma_ps > 0):
            raise ParameterError(f"cutoff rate must be > 0, got {self.gamma_ps}")
        if not (self.temperature > 0):
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")

    @property
    def gamma_cm(self) -> float:
        return gamma_ps_to_cm(self.gamma_ps)

    @property
    def kT(self) -> float:
        return BOLTZMANN_CM_PER_K * self.temperature

    def to_dict(self) -> dict:
        return {"lam": self.lam, "gamma_ps": self.gamma_ps, "temperature": self.temperature}


@dataclass(frozen=True)
class ExpansionTerm:
    """One exponential ``c exp(-nu tau)`` of the correlation function (cm^-1 units)."""

    c: complex
    nu: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ParameterError("decay rate must be positive")

    @property
    def nu_ps(self) -> float:
        return self.nu * ANGULAR_PER_CM * 1e3


@dataclass(frozen=True)
class HierarchySpec:
    L: int = 8
    K: int = 1

    def __post_init__(self):
        if self.L < 0 or self.K < 0:
            raise ParameterError("hierarchy depth and Matsubara count must be >= 0")

    def refined(self) -> "HierarchySpec":
        return HierarchySpec(self.L + 2, self.K + 1)


def drude_lorentz(omega, bath: BathSpec):
    """Spectral density ``(lam/2) gamma omega / (gamma^2 + omega^2)``, omega in cm^-1."""
    g = bath.gamma_cm
    omega = np.asarray(omega, dtype=float)
    return 0.5 * bath.lam * g * omega / (g * g + omega * omega)


def reorganization_integral(bath: BathSpec) -> float:
    """``(2/pi) int_0^inf J(omega)/omega d omega`` for :func:`drude_lorentz` (equals lam/2)."""
    val, _ = quad(lambda w: float(drude_lorentz(w, bath)) / w if w > 0 else 0.5 * bath.lam / bath.gamma_cm,
                  0.0, np.inf, limit=200)
    return 2.0 / math.pi * val


def correlation_expansion(bath: BathSpec, K: int) -> list:
    if K < 0:
        raise ParameterError("K must be >= 0")
    lam, g, kT = bath.lam, bath.gamma_cm, bath.kT
    beta = 1.0 / kT
    terms = [ExpansionTerm(complex(lam * g * (1.0 / math.tan(beta * g / 2.0) - 1j)), g)]
    for k in range(1, K + 1):
        vk = 2.0 * math.pi * k * kT
        terms.append(ExpansionTerm(complex(4.0 * lam * g * kT * vk / (vk * vk - g * g)), vk))
    return terms


def terminator_strength(bath: BathSpec, K: int) -> float:
    """Weight of the Markovian remainder of the Matsubara series beyond ``K``."""
    lam, g, kT = bath.lam, bath.gamma_cm, bath.kT
    beta = 1.0 / kT
    kept = sum((t.c / t.nu).real for t in correlation_expansion(bath, K)[1:])
    return 2.0 * lam / (beta * g) - lam / math.tan(beta * g / 2.0) - kept


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass
class Hierarchy:
    """Multi-indices in graded-lexicographic order plus their +-1 neighbours.

    ``plus[a, m]`` is the index of ``n_a + e_m`` (or -1 beyond the truncation)
    and ``minus[a, m]`` that of ``n_a - e_m`` (or -1 when ``n_am = 0``).
    """

    n_modes: int
    depth: int
    indices: np.ndarray
    plus: np.ndarray
    minus: np.ndarray

    def __len__(self):
        return self.indices.shape[0]

    def position(self, n) -> int:
        return self._lookup[tuple(int(v) for v in n)]

    def __post_init__(self):
        self._lookup = {tuple(row): i for i, row in enumerate(self.indices.tolist())}


def build_hierarchy(n_sites: int, terms_per_site: int, L: int) -> Hierarchy:
    if n_sites < 1 or terms_per_site < 1 or L < 0:
        raise ParameterError("n_sites and terms_per_site must be positive, L >= 0")
    M = n_sites * terms_per_site
    count = comb(L + M, M)
    if count > MAX_ADOS:
        raise HierarchyTooLargeError(f"{count} ADOs exceeds the limit of {MAX_ADOS}")
    rows = [c for tot in range(L + 1) for c in _compositions(tot, M)]
    indices = np.array(rows, dtype=np.int64).reshape(len(rows), M)
    lookup = {r: i for i, r in enumerate(rows)}
    plus = -np.ones((count, M), dtype=np.int64)
    minus = -np.ones((count, M), dtype=np.int64)
    for i, r in enumerate(rows):
        for m in range(M):
            up = r[:m] + (r[m] + 1,) + r[m + 1:]
            j = lookup.get(up)
            if j is not None:
                plus[i, m] = j
            if r[m] > 0:
                minus[i, m] = lookup[r[:m] + (r[m] - 1,) + r[m + 1:]]
    return Hierarchy(M, L, indices, plus, minus)


@dataclass
class HeomState:
    hierarchy: Hierarchy
    ados: np.ndarray
    time_fs: float = 0.0

    @property
    def reduced(self) -> np.ndarray:
        return self.ados[0]


@dataclass
class HeomOperator:
    """Precomputed pieces of the HEOM right-hand side for one system and bath set."""

    hierarchy: Hierarchy
    H: np.ndarray
    gsum: np.ndarray
    comm_mask: np.ndarray
    low_mask: np.ndarray
    term_mask: np.ndarray
    terms: list = field(default_factory=list)

    @property
    def max_rate(self) -> float:
        """Bound on the generator's spectral radius in cm^-1."""
        spread = float(np.ptp(np.linalg.eigvalsh(self.H))) if self.H.shape[0] > 1 else 0.0
        coupling = float(np.abs(self.low_mask).max(initial=0.0)) ** 0.5 * self.hierarchy.depth ** 0.5
        return float(self.gsum.max()) + spread + float(self.term_mask.max()) + coupling

    def rk4(self, ados: np.ndarray, h: float, nsub: int) -> np.ndarray:
        hi = self.hierarchy
        return _kernels.heom_rk4(ados, h, nsub, self.H, self.gsum, hi.indices.astype(np.float64),
                                 hi.plus, hi.minus, self.comm_mask, self.low_mask, self.term_mask)


def _site_baths(system: ExcitonSystem, baths) -> list:
    if isinstance(baths, BathSpec):
        return [baths] * system.n_sites
    baths = list(baths)
    if len(baths) != system.n_sites:
        raise InvalidSystemError(f"{len(baths)} baths for {system.n_sites} sites")
    return baths


def build_operator(system: ExcitonSystem, baths, spec: HierarchySpec) -> HeomOperator:
    baths = _site_baths(system, baths)
    N = system.n_sites
    per_site = spec.K + 1
    hi = build_hierarchy(N, per_site, spec.L)
    M = hi.n_modes
    nus = np.empty(M)
    comm = np.zeros((M, N, N), dtype=complex)
    low = np.zeros((M, N, N), dtype=complex)
    term = np.zeros((N, N))
    eye = np.eye(N)
    all_terms = []
    for j, bath in enumerate(baths):
        # (delta_aj - delta_bj) for every matrix element (a, b)
        diff = eye[:, j][:, None] - eye[:, j][None, :]
        left = np.broadcast_to(eye[:, j][:, None], (N, N))
        right = np.broadcast_to(eye[:, j][None, :], (N, N))
        terms = correlation_expansion(bath, spec.K)
        all_terms.append(terms)
        for k, t in enumerate(terms):
            m = j * per_site + k
            nus[m] = t.nu
            comm[m] = diff
            low[m] = t.c * left - np.conj(t.c) * right
        term += terminator_strength(bath, spec.K) * diff ** 2
    gsum = hi.indices @ nus
    H = build_one_exciton_hamiltonian(system).astype(complex)
    return HeomOperator(hi, H, gsum.astype(float), comm, low, term, all_terms)


def _check_state(ados, step, h_fs, nsub):
    rho = ados[0]
    tr = np.trace(rho).real
    pops = np.real(np.diag(rho))
    bad = None
    if not np.all(np.isfinite(ados)):
        bad = "non-finite ADO entries"
    elif abs(tr - 1.0) > 1e-4:
        bad = f"trace drifted to {tr:.6f}"
    elif pops.min() < -0.05 or pops.max() > 1.05:
        bad = f"populations left [0, 1]: {pops}"
    if bad:
        raise HeomInstabilityError(
            f"HEOM unstable at output step {step}: {bad}; RK4 substep {h_fs:.4g} fs x {nsub}, "
            "reduce dt_fs or raise substeps")


def heom_propagate(system: ExcitonSystem, baths, spec: HierarchySpec | None = None, p0: int = 0,
                   dt_fs: float = 1.0, n_steps: int = 300, max_substep_fs: float = 1.0,
                   scale: EnergyScale | None = None, operator: HeomOperator | None = None) -> PopulationTrace:
    """Propagate from an excitation on site ``p0`` and record the site populations.

    Output rows are at ``0, dt_fs, ..., n_steps*dt_fs``.  Each output interval
    is split into RK4 substeps no longer than ``max_substep_fs`` and short
    enough for the fastest hierarchy decay rate.
    """
    spec = spec or HierarchySpec()
    if not 0 <= p0 < system.n_sites:
        raise InvalidSystemError(f"initial site {p0} outside 0..{system.n_sites - 1}")
    if dt_fs <= 0 or n_steps < 1:
        raise ParameterError("dt_fs must be > 0 and n_steps >= 1")
    op = operator or build_operator(system, baths, spec)
    scale = scale or EnergyScale()
    stab = op.max_rate * ANGULAR_PER_CM * dt_fs / 2.0
    nsub = max(1, math.ceil(dt_fs / max_substep_fs - 1e-12), math.ceil(stab))
    h = dt_fs * ANGULAR_PER_CM / nsub
    N = system.n_sites
    ados = np.zeros((len(op.hierarchy), N, N), dtype=complex)
    ados[0, p0, p0] = 1.0
    pops = np.empty((n_steps + 1, N))
    pops[0] = np.real(np.diag(ados[0]))
    max_herm = 0.0
    max_trace = 0.0
    for s in range(1, n_steps + 1):
        ados = op.rk4(ados, h, nsub)
        _check_state(ados, s, dt_fs / nsub, nsub)
        rho = ados[0]
        max_herm = max(max_herm, float(np.abs(rho - rho.conj().T).max()))
        max_trace = max(max_trace, abs(np.trace(rho).real - 1.0))
        pops[s] = np.real(np.diag(rho))
    times = np.arange(n_steps + 1) * dt_fs
    baths_l = _site_baths(system, baths)
    prov = {
        "engine": "heom", "lambda": baths_l[0].lam, "gamma_ps": baths_l[0].gamma_ps,
        "temperature": baths_l[0].temperature, "L": spec.L, "K": spec.K, "dt_fs": dt_fs,
        "substeps": nsub, "n_ados": len(op.hierarchy), "initial_site": p0,
        "max_trace_error": max_trace, "max_hermiticity_error": max_herm,
        "backend": _kernels.BACKEND, "J0": scale.J0,
    }
    # the one-exciton HEOM has no states outside the manifold
    return PopulationTrace(times, times * ANGULAR_PER_CM * scale.J0, pops, prov, leak_frac=np.zeros(n_steps + 1))


@dataclass
class ConvergenceReport:
    spec: HierarchySpec
    refined: HierarchySpec
    max_deviation: float
    tolerance: float

    @property
    def converged(self) -> bool:
        return self.max_deviation < self.tolerance

    def to_dict(self) -> dict:
        return {"L": self.spec.L, "K": self.spec.K, "L_refined": self.refined.L, "K_refined": self.refined.K,
                "max_deviation": self.max_deviation, "tolerance": self.tolerance, "converged": self.converged}


def convergence_check(system: ExcitonSystem, baths, spec: HierarchySpec | None = None, p0: int = 0,
                      dt_fs: float = 1.0, n_steps: int = 300, tolerance: float = 1e-3,
                      base: PopulationTrace | None = None) -> ConvergenceReport:
    """Compare ``(L, K)`` against ``(L + 2, K + 1)``; flags non-convergence, never raises."""
    spec = spec or HierarchySpec()
    ref = spec.refined()
    if base is None:
        base = heom_propagate(system, baths, spec, p0, dt_fs, n_steps)
    fine = heom_propagate(system, baths, ref, p0, dt_fs, n_steps)
    dev = float(np.max(np.abs(base.populations - fine.populations)))
    report = ConvergenceReport(spec, ref, dev, tolerance)
    if not report.converged:
        log.warning("HEOM not converged: (L,K)=(%d,%d) vs (%d,%d) differ by %.2e",
                    spec.L, spec.K, ref.L, ref.K, dev)
    return report


def redfield_coherence_rate(coupling: float, bath: BathSpec) -> float:
    """Secular Redfield decay rate (cm^-1) of the exciton coherence in a symmetric dimer.

    Local baths give no pure dephasing between the two exciton states; the
    coherence decays at half the sum of the up and down transfer rates,
    ``Gamma = (1/2) J(2|V|) coth(beta |V|)``, with J normalized so its
    reorganization energy is ``lam``.
    """
    g = bath.gamma_cm
    w = 2.0 * abs(coupling)
    if w == 0:
        return 0.0
    spectral = 2.0 * bath.lam * g * w / (g * g + w * w)
    return 0.5 * spectral / math.tanh(w / (2.0 * bath.kT))
