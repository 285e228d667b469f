"""Gate-error model, decoherence-inducing identity words, and their scheduling.

A word such as ``(XZ)^2`` multiplies to the identity when gates are perfect,
so inserting it into a circuit changes nothing except through gate errors.
The number of words inserted per 25 propagator steps (the damping
coefficient ``d``) sets how strongly the simulated system is damped.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ParameterError
from .exciton import dimer_propagator_circuit
from .qsim import (
    ChannelOp,
    Circuit,
    Gate,
    amplitude_damping_channel,
    depolarizing_channel,
    phase_flip_channel,
    rx,
    rz,
)

DELTA_T_D = 25

# Overall factor on the two-qubit error rates found by fitting the d=2 and
# d=18 SWAP^2 runs to the weak (15 cm^-1) and strong (227 cm^-1) anchors.
# Regenerate with `gatebath calibrate --tune-noise`.
CALIBRATED_TWO_QUBIT_SCALE = 0.4328


@dataclass(frozen=True)
class NoiseModel:
    """Per-gate error parameters.

    Noisy X pulses are ``Rz(delta/2) Rx(pi + eps) Rz(delta/2)`` followed by
    single-qubit depolarizing and amplitude damping.  Every CNOT is followed by
    two-qubit depolarizing, a phase flip on each qubit and amplitude damping on
    each qubit.  Z rotations are frame changes and stay noiseless.
    """

    x_overrotation_eps: float = 0.02
    x_phase_delta: float = 0.005
    depol1_p: float = 0.001
    depol2_p: float = 0.01
    dephase2_p: float = 0.03
    amp_damping_gamma: float = 5e-4
    readout_flip_p: float = 0.0
    virtual_z_noiseless: bool = True

    def __post_init__(self):
        for name in ("depol1_p", "depol2_p", "dephase2_p", "amp_damping_gamma", "readout_flip_p"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ParameterError(f"{name}={v} outside [0, 1]")
        for name in ("x_overrotation_eps", "x_phase_delta"):
            v = getattr(self, name)
            if not (-math.pi < v < math.pi):
                raise ParameterError(f"{name}={v} outside (-pi, pi)")
        if not self.virtual_z_noiseless:
            raise ParameterError("virtual Z gates are always noiseless")

    @classmethod
    def ideal(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    @classmethod
    def calibrated(cls) -> "NoiseModel":
        return cls().scaled_two_qubit(CALIBRATED_TWO_QUBIT_SCALE)

    def scaled_two_qubit(self, factor: float) -> "NoiseModel":
        """Scale both two-qubit error rates by one factor (the calibration knob)."""
        if factor < 0:
            raise ParameterError("scale factor must be non-negative")
        return replace(self, depol2_p=min(1.0, self.depol2_p * factor),
                       dephase2_p=min(1.0, self.dephase2_p * factor))

    @property
    def is_ideal(self) -> bool:
        return self == NoiseModel.ideal()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseModel":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown noise fields: {sorted(unknown)}")
        return cls(**data)


SEQUENCE_WORDS = {
    "X2": ("X", "X"),
    "XZ2": ("X", "Z", "X", "Z"),
    "XZXZZ2": ("X", "Z", "X", "Z", "Z", "X", "Z", "X", "Z", "Z"),
    "SWAP2": ("SWAP", "SWAP"),
}


@dataclass(frozen=True)
class GateSequence:
    kind: str
    qubits: tuple = (0, 1)

    def __post_init__(self):
        if self.kind not in SEQUENCE_WORDS:
            raise ParameterError(f"unknown sequence {self.kind!r}; choose from {sorted(SEQUENCE_WORDS)}")
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if self.kind == "SWAP2" and len(self.qubits) != 2:
            raise ParameterError("SWAP2 needs exactly two qubits")
        if not self.qubits or len(set(self.qubits)) != len(self.qubits):
            raise ParameterError(f"invalid target qubits {self.qubits}")

    @property
    def is_two_qubit(self) -> bool:
        return self.kind == "SWAP2"


def _swap_as_cnots(a: int, b: int) -> list:
    return [Gate("CNOT", (a, b)), Gate("CNOT", (b, a)), Gate("CNOT", (a, b))]


def expand_sequence(seq: GateSequence) -> list:
    """Gates of one inserted word.  Single-qubit words act on every target qubit."""
    if seq.kind == "SWAP2":
        a, b = seq.qubits
        return _swap_as_cnots(a, b) + _swap_as_cnots(a, b)
    gates = []
    for label in SEQUENCE_WORDS[seq.kind]:
        for q in seq.qubits:
            gates.append(Gate(label, (q,)))
    return gates


def noisy_x_unitary(eps: float, delta: float) -> np.ndarray:
    """Coherent part of an imperfect X pulse."""
    half = rz(delta / 2.0)
    return half @ rx(math.pi + eps) @ half


@lru_cache(maxsize=None)
def _depol(p, n):
    return depolarizing_channel(p, n)


@lru_cache(maxsize=None)
def _amp(g):
    return amplitude_damping_channel(g)


@lru_cache(maxsize=None)
def _phase(p):
    return phase_flip_channel(p)


def _single_qubit_noise(q: int, nm: NoiseModel) -> list:
    ops = []
    if nm.depol1_p > 0:
        ops.append(ChannelOp(_depol(nm.depol1_p, 1), (q,)))
    if nm.amp_damping_gamma > 0:
        ops.append(ChannelOp(_amp(nm.amp_damping_gamma), (q,)))
    return ops


def _cnot_noise(qubits: tuple, nm: NoiseModel) -> list:
    ops = []
    if nm.depol2_p > 0:
        ops.append(ChannelOp(_depol(nm.depol2_p, 2), qubits))
    for q in qubits:
        if nm.dephase2_p > 0:
            ops.append(ChannelOp(_phase(nm.dephase2_p), (q,)))
        if nm.amp_damping_gamma > 0:
            ops.append(ChannelOp(_amp(nm.amp_damping_gamma), (q,)))
    return ops


@lru_cache(maxsize=4096)
def gate_error_channels(g: Gate, nm: NoiseModel) -> tuple:
    """Ordered operations that realize the noisy version of ``g``.

    Items are either a :class:`Gate` (possibly an erroneous unitary) or a
    :class:`ChannelOp`.  The result is cached, which also caches the embedded
    Kraus operators held by each channel.
    """
    if g.ideal or g.is_virtual:
        return (g,)
    if g.kind == "X":
        q = g.qubits[0]
        if nm.x_overrotation_eps == 0 and nm.x_phase_delta == 0:
            pulse = g
        else:
            pulse = Gate.custom(noisy_x_unitary(nm.x_overrotation_eps, nm.x_phase_delta), (q,))
        return (pulse, *_single_qubit_noise(q, nm))
    if g.kind == "CNOT":
        return (g, *_cnot_noise(g.qubits, nm))
    if g.kind == "SWAP":
        out = []
        for c in _swap_as_cnots(*g.qubits):
            out.extend(gate_error_channels(c, nm))
        return tuple(out)
    if len(g.qubits) == 1:
        return (g, *_single_qubit_noise(g.qubits[0], nm))
    # other multi-qubit unitaries are treated like an entangling gate
    return (g, *_cnot_noise(g.qubits, nm))


def word_unitary(seq: GateSequence, nm: NoiseModel | None = None, n_qubits: int = 2) -> np.ndarray:
    """Product of the coherent parts of one word (channels are ignored)."""
    circ = Circuit(n_qubits)
    for g in expand_sequence(seq):
        if nm is None:
            circ.append(g)
        else:
            circ.extend(op for op in gate_error_channels(g, nm) if isinstance(op, Gate))
    return circ.unitary()


def distance_from_identity(u: np.ndarray) -> float:
    """Phase-insensitive operator distance ``min_phi ||u - e^{i phi} I||_F``."""
    d = u.shape[0]
    return math.sqrt(max(0.0, 2.0 * (d - abs(np.trace(u)))))


@dataclass(frozen=True)
class DissipationSchedule:
    """Floor-based insertion schedule.

    The cumulative number of words by step ``s`` is ``floor(d s / delta_T_D)``.
    Word ``i`` (1-based) sits before propagator step ``floor((i-1) delta_T_D / d)``,
    which spreads the words evenly over each decoherence period.
    """

    d: float
    n_steps: int = 150
    delta_T_D: int = DELTA_T_D

    def __post_init__(self):
        if not (self.d >= 0) or math.isinf(self.d):
            raise ParameterError(f"damping coefficient must be finite and >= 0, got {self.d}")
        if self.n_steps < 1:
            raise ParameterError("n_steps must be >= 1")
        if self.delta_T_D < 1:
            raise ParameterError("delta_T_D must be >= 1")

    def cumulative(self, step: int) -> int:
        if step < 0:
            return 0
        return int(math.floor(self.d * step / self.delta_T_D + 1e-9))

    def insertions(self, step: int) -> int:
        return self.cumulative(step) - self.cumulative(step - 1)

    @property
    def total_insertions(self) -> int:
        return self.cumulative(self.n_steps)

    def position(self, i: int) -> int:
        """Propagator step before which word ``i`` (1-based) is inserted."""
        if i < 1:
            raise ParameterError("word index is 1-based")
        return int(math.floor((i - 1) * self.delta_T_D / self.d + 1e-9))

    def positions(self, upto: int | None = None) -> list:
        n = self.total_insertions if upto is None else upto
        return [self.position(i) for i in range(1, n + 1)]

    def insertion_counts(self) -> list:
        return [self.insertions(s) for s in range(self.n_steps + 1)]


def build_schedule(d: float, n_steps: int = 150, delta_T_D: int = DELTA_T_D) -> DissipationSchedule:
    return DissipationSchedule(float(d), int(n_steps), int(delta_T_D))


def build_dissipative_circuit(step: int, schedule: DissipationSchedule, seq: GateSequence,
                              theta_per_step: float) -> Circuit:
    """Propagator segments with the scheduled words interleaved, ending at ``step``."""
    if step < 0 or step > schedule.n_steps:
        raise ParameterError(f"step {step} outside 0..{schedule.n_steps}")
    circ = Circuit(2)
    last = 0
    for p in schedule.positions(schedule.cumulative(step)):
        if p > last:
            circ.extend(dimer_propagator_circuit((p - last) * theta_per_step))
            last = p
        circ.extend(expand_sequence(seq))
    circ.extend(dimer_propagator_circuit((step - last) * theta_per_step))
    return circ
