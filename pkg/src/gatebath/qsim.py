"""Dense density-matrix simulator.

Bit order is little-endian throughout: basis index ``i = sum_q b_q 2**q`` and
bitstring labels are written ``q_{n-1} ... q_1 q_0`` (qiskit convention), so
for two qubits the label ``"01"`` means qubit 0 is excited.  With site ``j``
mapped to qubit ``j - 1`` this is "site 1 excited".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence, Union

import numpy as np

from . import _kernels
from .errors import ChannelValidationError, ShapeError, StateValidityError

MAX_QUBITS = 10

I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": I2, "X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)


def rx(angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def rz(angle: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)]).astype(complex)


# local basis index = b(qubits[0]) + 2 * b(qubits[1])
_CNOT_LOCAL = np.eye(4, dtype=complex)[[0, 3, 2, 1]]
_SWAP_LOCAL = np.eye(4, dtype=complex)[[0, 2, 1, 3]]

_ARITY = {"X": 1, "Z": 1, "H": 1, "RX": 1, "RZ": 1, "CNOT": 2, "SWAP": 2}


@dataclass(frozen=True)
class Gate:
    """A gate on explicit qubits.

    ``kind`` is one of X, Z, H, RX, RZ, CNOT, SWAP or U (custom unitary given
    by ``matrix`` as a nested tuple).  For CNOT, ``qubits = (control, target)``.
    ``ideal`` gates never receive noise; the propagator is built from them.
    """

    kind: str
    qubits: tuple
    params: tuple = ()
    ideal: bool = False
    matrix: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if len(set(self.qubits)) != len(self.qubits):
            raise ShapeError(f"repeated qubit in {self.qubits}")
        if self.kind == "U":
            if self.matrix is None:
                raise ShapeError("custom gate needs a matrix")
            dim = len(self.matrix)
            if dim != 2 ** len(self.qubits):
                raise ShapeError(f"{dim}x{dim} matrix on {len(self.qubits)} qubit(s)")
        elif self.kind in _ARITY:
            if _ARITY[self.kind] != len(self.qubits):
                raise ShapeError(f"{self.kind} acts on {_ARITY[self.kind]} qubit(s), got {self.qubits}")
        else:
            raise ValueError(f"unknown gate kind {self.kind!r}")

    @classmethod
    def custom(cls, matrix, qubits, ideal=False, label=None):
        m = tuple(tuple(complex(v) for v in row) for row in np.asarray(matrix))
        return cls("U", tuple(qubits), (), ideal, m)

    @property
    def unitary(self) -> np.ndarray:
        return _local_unitary(self)

    @property
    def is_virtual(self) -> bool:
        """Frame-shift gates (Z rotations) that apply no pulse."""
        return self.kind in ("Z", "RZ")


@lru_cache(maxsize=4096)
def _local_unitary(g: Gate) -> np.ndarray:
    if g.kind == "X":
        u = PAULI_X
    elif g.kind == "Z":
        u = PAULI_Z
    elif g.kind == "H":
        u = HADAMARD
    elif g.kind == "RX":
        u = rx(g.params[0])
    elif g.kind == "RZ":
        u = rz(g.params[0])
    elif g.kind == "CNOT":
        u = _CNOT_LOCAL
    elif g.kind == "SWAP":
        u = _SWAP_LOCAL
    else:
        u = np.array(g.matrix, dtype=complex)
    u = np.array(u, dtype=complex)
    u.setflags(write=False)
    return u


def embed(op: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Lift an operator on ``qubits`` (little-endian local order) to ``n_qubits``."""
    qubits = tuple(qubits)
    k = len(qubits)
    if op.shape != (2 ** k, 2 ** k):
        raise ShapeError(f"operator of shape {op.shape} on {k} qubit(s)")
    if any(q < 0 or q >= n_qubits for q in qubits):
        raise ShapeError(f"qubits {qubits} out of range for {n_qubits} qubit(s)")
    if qubits == tuple(range(n_qubits)):
        return np.array(op, dtype=complex)
    idx = np.arange(2 ** n_qubits)
    local = np.zeros_like(idx)
    mask = 0
    for j, q in enumerate(qubits):
        local |= ((idx >> q) & 1) << j
        mask |= 1 << q
    rest = idx & ~mask
    return op[np.ix_(local, local)] * (rest[:, None] == rest[None, :])


@lru_cache(maxsize=4096)
def _embedded_gate(g: Gate, n_qubits: int) -> np.ndarray:
    u = embed(g.unitary, g.qubits, n_qubits)
    u.setflags(write=False)
    return u


@dataclass
class DensityMatrix:
    n_qubits: int
    data: np.ndarray

    def __post_init__(self):
        if self.n_qubits > MAX_QUBITS:
            raise ShapeError(f"dense simulation limited to {MAX_QUBITS} qubits")
        self.data = np.asarray(self.data, dtype=complex)
        dim = 2 ** self.n_qubits
        if self.data.shape != (dim, dim):
            raise ShapeError(f"expected {dim}x{dim} matrix, got {self.data.shape}")

    @classmethod
    def basis_state(cls, label: Union[str, int], n_qubits: int | None = None) -> "DensityMatrix":
        """``label`` is a little-endian bitstring such as ``"01"`` or an index."""
        if isinstance(label, str):
            n_qubits = len(label) if n_qubits is None else n_qubits
            index = int(label, 2)
        else:
            index = int(label)
        dim = 2 ** n_qubits
        data = np.zeros((dim, dim), dtype=complex)
        data[index, index] = 1.0
        return cls(n_qubits, data)

    @classmethod
    def from_statevector(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        n = int(round(math.log2(psi.size)))
        return cls(n, np.outer(psi, psi.conj()))

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.data)))

    def probabilities(self) -> np.ndarray:
        return np.real(np.diag(self.data)).copy()

    def expectation(self, op: np.ndarray) -> complex:
        return complex(np.trace(op @ self.data))

    def validate(self, herm_tol=1e-12, trace_tol=1e-12, pos_tol=1e-10) -> None:
        d = self.data
        if np.max(np.abs(d - d.conj().T)) > herm_tol:
            raise StateValidityError("density matrix is not Hermitian")
        if abs(np.trace(d) - 1.0) > trace_tol:
            raise StateValidityError(f"trace {np.trace(d).real:.3e} != 1")
        w = np.linalg.eigvalsh(0.5 * (d + d.conj().T))
        if w.min() < -pos_tol:
            raise StateValidityError(f"negative eigenvalue {w.min():.3e}")


class KrausChannel:
    """A CPTP map given by Kraus operators; completeness is checked on creation."""

    def __init__(self, operators, name: str = "", atol: float = 1e-12):
        ops = np.array([np.asarray(k, dtype=complex) for k in operators])
        if ops.ndim != 3 or ops.shape[1] != ops.shape[2] or ops.shape[0] == 0:
            raise ChannelValidationError("Kraus operators must be a non-empty stack of square matrices")
        dim = ops.shape[1]
        n = int(round(math.log2(dim)))
        if 2 ** n != dim:
            raise ChannelValidationError(f"dimension {dim} is not a power of two")
        completeness = np.einsum("kji,kjl->il", ops.conj(), ops)
        err = float(np.max(np.abs(completeness - np.eye(dim))))
        if err > atol:
            raise ChannelValidationError(f"sum K^dag K deviates from identity by {err:.3e}")
        self.operators = ops
        self.n_qubits = n
        self.name = name
        self.completeness_error = err
        self._embedded: dict = {}

    def __len__(self):
        return self.operators.shape[0]

    def __repr__(self):
        return f"KrausChannel({self.name or 'custom'}, n_ops={len(self)}, n_qubits={self.n_qubits})"

    def embedded(self, qubits: tuple, n_qubits: int) -> np.ndarray:
        key = (tuple(qubits), n_qubits)
        ops = self._embedded.get(key)
        if ops is None:
            ops = np.ascontiguousarray([embed(k, qubits, n_qubits) for k in self.operators])
            self._embedded[key] = ops
        return ops


def depolarizing_channel(p: float, n_qubits: int = 1) -> KrausChannel:
    """rho -> (1 - p) rho + p I/d."""
    if not 0.0 <= p <= 1.0:
        raise ChannelValidationError(f"depolarizing probability {p} outside [0, 1]")
    d2 = 4 ** n_qubits
    ops = []
    labels = ["I", "X", "Y", "Z"]
    for idx in range(d2):
        # idx digits in base 4, least significant digit acts on qubit 0
        mat = np.array([[1.0 + 0j]])
        digits = [(idx >> (2 * q)) & 3 for q in range(n_qubits)]
        for q in reversed(range(n_qubits)):
            mat = np.kron(mat, PAULIS[labels[digits[q]]])
        w = 1.0 - p * (d2 - 1) / d2 if idx == 0 else p / d2
        if w > 0:
            ops.append(math.sqrt(w) * mat)
    return KrausChannel(ops, name=f"depolarizing(p={p:g}, n={n_qubits})")


def amplitude_damping_channel(gamma: float) -> KrausChannel:
    if not 0.0 <= gamma <= 1.0:
        raise ChannelValidationError(f"damping probability {gamma} outside [0, 1]")
    k0 = np.array([[1, 0], [0, math.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, math.sqrt(gamma)], [0, 0]], dtype=complex)
    return KrausChannel([k0, k1], name=f"amplitude_damping({gamma:g})")


def phase_flip_channel(p: float) -> KrausChannel:
    """rho -> (1 - p) rho + p Z rho Z."""
    if not 0.0 <= p <= 1.0:
        raise ChannelValidationError(f"phase flip probability {p} outside [0, 1]")
    return KrausChannel([math.sqrt(1 - p) * I2, math.sqrt(p) * PAULI_Z], name=f"phase_flip({p:g})")


def bit_flip_channel(p: float) -> KrausChannel:
    if not 0.0 <= p <= 1.0:
        raise ChannelValidationError(f"bit flip probability {p} outside [0, 1]")
    return KrausChannel([math.sqrt(1 - p) * I2, math.sqrt(p) * PAULI_X], name=f"bit_flip({p:g})")


@dataclass(frozen=True)
class ChannelOp:
    """A channel scheduled on specific qubits inside a noisy gate expansion."""

    channel: KrausChannel
    qubits: tuple


@dataclass
class Circuit:
    n_qubits: int
    gates: list = field(default_factory=list)

    def append(self, g: Gate) -> "Circuit":
        if any(q >= self.n_qubits for q in g.qubits):
            raise ShapeError(f"gate {g.kind} on {g.qubits} outside a {self.n_qubits}-qubit circuit")
        self.gates.append(g)
        return self

    def extend(self, gates: Iterable[Gate]) -> "Circuit":
        for g in gates:
            self.append(g)
        return self

    def __iter__(self):
        return iter(self.gates)

    def __len__(self):
        return len(self.gates)

    def unitary(self) -> np.ndarray:
        """Noiseless circuit unitary (later gates multiply from the left)."""
        u = np.eye(2 ** self.n_qubits, dtype=complex)
        for g in self.gates:
            u = _embedded_gate(g, self.n_qubits) @ u
        return u

    def count(self, kind: str) -> int:
        return sum(1 for g in self.gates if g.kind == kind)


def apply_gate(rho: DensityMatrix, g: Gate) -> DensityMatrix:
    """rho -> U rho U^dagger."""
    if any(q >= rho.n_qubits for q in g.qubits):
        raise ShapeError(f"gate on {g.qubits} but state has {rho.n_qubits} qubit(s)")
    u = _embedded_gate(g, rho.n_qubits)
    return DensityMatrix(rho.n_qubits, u @ rho.data @ u.conj().T)


def apply_channel(rho: DensityMatrix, ch: KrausChannel, qubits: Sequence[int]) -> DensityMatrix:
    """rho -> sum_k K rho K^dagger with the channel acting on ``qubits``."""
    qubits = tuple(qubits)
    if len(qubits) != ch.n_qubits:
        raise ShapeError(f"{ch.n_qubits}-qubit channel applied to {qubits}")
    ops = ch.embedded(qubits, rho.n_qubits)
    return DensityMatrix(rho.n_qubits, _kernels.kraus_apply(ops, np.ascontiguousarray(rho.data)))


def run_circuit(circ: Circuit, noise, rho0: DensityMatrix) -> DensityMatrix:
    """Apply ``circ`` to ``rho0``, inserting each gate's error channels.

    ``noise`` is a :class:`gatebath.noisegen.NoiseModel` or ``None`` for a
    noiseless run.  Ideal and virtual gates receive no noise.
    """
    if circ.n_qubits != rho0.n_qubits:
        raise ShapeError(f"circuit has {circ.n_qubits} qubits, state has {rho0.n_qubits}")
    from .noisegen import gate_error_channels

    rho = rho0
    for g in circ:
        if noise is None or g.ideal:
            rho = apply_gate(rho, g)
            continue
        for op in gate_error_channels(g, noise):
            if isinstance(op, Gate):
                rho = apply_gate(rho, op)
            else:
                rho = apply_channel(rho, op.channel, op.qubits)
    return rho


# ---------------------------------------------------------------------------
# measurement
# ---------------------------------------------------------------------------

def bitstring(index: int, n_qubits: int) -> str:
    return format(index, f"0{n_qubits}b")


@dataclass
class Counts:
    shots: int
    counts: dict

    def __post_init__(self):
        if sum(self.counts.values()) != self.shots:
            raise ValueError("counts do not sum to shots")

    def __getitem__(self, label: str) -> int:
        return self.counts.get(label, 0)

    @property
    def n_qubits(self) -> int:
        return len(next(iter(self.counts)))

    def as_array(self) -> np.ndarray:
        """Counts ordered by basis index (``00, 01, 10, 11`` for two qubits)."""
        n = self.n_qubits
        return np.array([self[bitstring(i, n)] for i in range(2 ** n)], dtype=np.int64)


def derive_seed(seed: int, stream: int) -> int:
    """Independent per-time-point stream: ``seed XOR stream`` on 64 bits."""
    return (int(seed) ^ int(stream)) & 0xFFFFFFFFFFFFFFFF


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed directly by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))


def measurement_probabilities(rho: DensityMatrix, readout_flip_p: float = 0.0, neg_tol: float = 1e-10) -> np.ndarray:
    p = rho.probabilities()
    if p.min() < -neg_tol:
        raise StateValidityError(f"negative probability {p.min():.3e}")
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    if readout_flip_p > 0:
        idx = np.arange(p.size)
        for q in range(rho.n_qubits):
            p = (1 - readout_flip_p) * p + readout_flip_p * p[idx ^ (1 << q)]
    return p


def sample_counts(rho: DensityMatrix, shots: int, seed: int, readout_flip_p: float = 0.0) -> Counts:
    """Multinomial draw of ``shots`` computational-basis outcomes."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = measurement_probabilities(rho, readout_flip_p)
    draws = make_rng(seed).multinomial(int(shots), p)
    n = rho.n_qubits
    return Counts(int(shots), {bitstring(i, n): int(c) for i, c in enumerate(draws)})
