"""Exciton Hamiltonians, their qubit encoding, and a closed-system oracle.

Energies are in cm^-1.  A wavenumber converts to an angular frequency via
``omega = 2 pi c nu`` with ``c`` in cm/fs.  The dimensionless time used by the
circuits is ``theta = 2 pi c J0 t`` so that a Hamiltonian divided by ``J0``
evolves as ``exp(-i H theta)``.

Sites are 0-based in the library API: site ``j`` lives on qubit ``j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSystemError
from .qsim import PAULIS, Circuit, Gate
from .traces import PopulationTrace

SPEED_OF_LIGHT_CM_PER_FS = 2.99792458e-5
BOLTZMANN_CM_PER_K = 0.6950348


def wavenumber_to_angular_per_fs(nu_cm: float) -> float:
    return 2.0 * math.pi * SPEED_OF_LIGHT_CM_PER_FS * nu_cm


@dataclass(frozen=True)
class EnergyScale:
    """Reference coupling ``J0`` and the physical time step of one circuit step."""

    J0: float = 100.0
    dt_fs: float = 2.0

    def __post_init__(self):
        if self.J0 <= 0 or self.dt_fs <= 0:
            raise InvalidSystemError("J0 and dt_fs must be positive")

    @property
    def delta_theta(self) -> float:
        return wavenumber_to_angular_per_fs(self.J0) * self.dt_fs

    def theta(self, step) -> np.ndarray:
        return np.asarray(step, dtype=float) * self.delta_theta

    def time_fs(self, theta) -> np.ndarray:
        return np.asarray(theta, dtype=float) / wavenumber_to_angular_per_fs(self.J0)


@dataclass(frozen=True)
class ExcitonSystem:
    n_sites: int
    site_energies: tuple
    couplings: tuple

    def __post_init__(self):
        eps = tuple(float(e) for e in self.site_energies)
        try:
            J = np.array(self.couplings, dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidSystemError(f"couplings are not a numeric matrix: {exc}") from None
        if self.n_sites < 1:
            raise InvalidSystemError("n_sites must be positive")
        if len(eps) != self.n_sites:
            raise InvalidSystemError(f"{len(eps)} site energies for {self.n_sites} sites")
        if J.shape != (self.n_sites, self.n_sites):
            raise InvalidSystemError(f"couplings shape {J.shape}, expected ({self.n_sites}, {self.n_sites})")
        if not np.allclose(J, J.T, atol=1e-12, rtol=0):
            raise InvalidSystemError("coupling matrix is not symmetric")
        if np.any(np.diag(J) != 0):
            raise InvalidSystemError("coupling matrix must have a zero diagonal")
        object.__setattr__(self, "site_energies", eps)
        object.__setattr__(self, "couplings", tuple(tuple(row) for row in J.tolist()))

    @classmethod
    def symmetric_dimer(cls, coupling: float = 100.0, energy: float = 0.0) -> "ExcitonSystem":
        return cls(2, (energy, energy), ((0.0, coupling), (coupling, 0.0)))

    @classmethod
    def from_matrix(cls, H) -> "ExcitonSystem":
        H = np.asarray(H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise InvalidSystemError(f"Hamiltonian must be square, got shape {H.shape}")
        J = H - np.diag(np.diag(H))
        return cls(H.shape[0], tuple(np.diag(H)), tuple(map(tuple, J)))

    @property
    def coupling_matrix(self) -> np.ndarray:
        return np.array(self.couplings, dtype=float)

    def to_dict(self) -> dict:
        return {"n_sites": self.n_sites, "site_energies": list(self.site_energies),
                "couplings": [list(r) for r in self.couplings]}


def build_one_exciton_hamiltonian(system: ExcitonSystem) -> np.ndarray:
    """N x N matrix with site energies on the diagonal and couplings off it."""
    if not isinstance(system, ExcitonSystem):
        raise InvalidSystemError(f"expected ExcitonSystem, got {type(system).__name__}")
    return np.diag(np.array(system.site_energies)) + system.coupling_matrix


@dataclass(frozen=True)
class PauliTerm:
    """``coefficient * P_{q1} P_{q2} ...``; an empty operator list is the identity."""

    coefficient: float
    operators: tuple = field(default_factory=tuple)

    def __post_init__(self):
        ops = tuple((int(q), str(p)) for q, p in self.operators)
        qubits = [q for q, _ in ops]
        if len(set(qubits)) != len(qubits):
            raise InvalidSystemError(f"repeated qubit in Pauli string {ops}")
        if any(p not in PAULIS for _, p in ops):
            raise InvalidSystemError(f"unknown Pauli label in {ops}")
        object.__setattr__(self, "operators", tuple(sorted(ops)))
        object.__setattr__(self, "coefficient", float(self.coefficient))

    @property
    def label(self) -> str:
        if not self.operators:
            return "I"
        return "".join(f"{p}{q}" for q, p in self.operators)

    def to_matrix(self, n_qubits: int) -> np.ndarray:
        """Dense matrix in the little-endian basis (qubit 0 is the rightmost factor)."""
        if any(q >= n_qubits for q, _ in self.operators):
            raise InvalidSystemError(f"term {self.label} does not fit in {n_qubits} qubit(s)")
        labels = dict(self.operators)
        mat = np.array([[1.0 + 0j]])
        for q in reversed(range(n_qubits)):
            mat = np.kron(mat, PAULIS[labels.get(q, "I")])
        return self.coefficient * mat


def jordan_wigner_map(system: ExcitonSystem, energy_unit: float = 1.0, atol: float = 0.0) -> list:
    """Map the hard-core exciton Hamiltonian onto Pauli strings.

    ``a_n^dag a_n -> (I - Z_n)/2`` and each hopping pair becomes
    ``J_mn (X_m X_n + Y_m Y_n)/2``.  Hard-core excitons need no
    Jordan-Wigner parity strings.  Coefficients are divided by
    ``energy_unit``; identity pieces are merged and zero terms dropped.
    """
    H = build_one_exciton_hamiltonian(system) / energy_unit
    n = system.n_sites
    terms = []
    identity = 0.0
    for j in range(n):
        eps = H[j, j]
        identity += 0.5 * eps
        if abs(eps) > atol:
            terms.append(PauliTerm(-0.5 * eps, ((j, "Z"),)))
    for a in range(n):
        for b in range(a + 1, n):
            J = H[a, b]
            if abs(J) > atol:
                terms.append(PauliTerm(0.5 * J, ((a, "X"), (b, "X"))))
                terms.append(PauliTerm(0.5 * J, ((a, "Y"), (b, "Y"))))
    if abs(identity) > atol:
        terms.insert(0, PauliTerm(identity, ()))
    return terms


def pauli_sum_matrix(terms, n_qubits: int) -> np.ndarray:
    dim = 2 ** n_qubits
    out = np.zeros((dim, dim), dtype=complex)
    for t in terms:
        out += t.to_matrix(n_qubits)
    return out


def one_exciton_indices(n_sites: int) -> list:
    """Basis indices of the single-excitation states, ordered by site."""
    return [1 << j for j in range(n_sites)]


def reference_propagate(H, p0: int, thetas, scale: EnergyScale | None = None) -> PopulationTrace:
    """Exact closed-system populations ``|<i| exp(-i H theta) |p0>|^2``.

    ``H`` is dimensionless (energies divided by ``scale.J0``) and ``p0`` is the
    0-based initial site.  Uses a symmetric eigendecomposition so there is no
    integrator error.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InvalidSystemError(f"Hamiltonian must be square, got shape {H.shape}")
    if not np.allclose(H, H.T, atol=1e-12, rtol=0):
        raise InvalidSystemError("Hamiltonian is not symmetric")
    n = H.shape[0]
    if not 0 <= p0 < n:
        raise InvalidSystemError(f"initial site {p0} outside 0..{n - 1}")
    scale = scale or EnergyScale()
    thetas = np.asarray(thetas, dtype=float)
    w, v = np.linalg.eigh(H)
    # amplitudes[t, i] = sum_k v[i,k] exp(-i w_k theta_t) v[p0,k]
    phases = np.exp(-1j * np.outer(thetas, w))
    amps = (phases * v[p0][None, :]) @ v.T
    pops = np.abs(amps) ** 2
    return PopulationTrace(scale.time_fs(thetas), thetas, pops,
                           {"engine": "oracle", "initial_site": p0, "J0": scale.J0, "dt_fs": scale.dt_fs},
                           leak_frac=np.zeros(thetas.shape))


def dimer_propagator_circuit(theta: float) -> Circuit:
    """Exact circuit for ``exp(-i theta (X0 X1 + Y0 Y1)/2)``.

    The XX and YY pieces commute, so each is done separately as a ZZ rotation
    (CNOT, RZ, CNOT) conjugated into the right basis: Hadamards for XX and
    RX(pi/2) for YY.  All gates are marked ideal: the propagator is the
    noise-free reference and dissipation enters only through inserted blocks.
    """
    gates = [
        Gate("H", (0,), ideal=True), Gate("H", (1,), ideal=True),
        Gate("CNOT", (0, 1), ideal=True), Gate("RZ", (1,), (theta,), ideal=True), Gate("CNOT", (0, 1), ideal=True),
        Gate("H", (0,), ideal=True), Gate("H", (1,), ideal=True),
        Gate("RX", (0,), (math.pi / 2,), ideal=True), Gate("RX", (1,), (math.pi / 2,), ideal=True),
        Gate("CNOT", (0, 1), ideal=True), Gate("RZ", (1,), (theta,), ideal=True), Gate("CNOT", (0, 1), ideal=True),
        Gate("RX", (0,), (-math.pi / 2,), ideal=True), Gate("RX", (1,), (-math.pi / 2,), ideal=True),
    ]
    return Circuit(2, gates)
