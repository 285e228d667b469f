"""Circuit engine: population traces of the dimer under inserted noise words.

Running ``build_dissipative_circuit`` from scratch for every step repeats a
lot of work, because the circuit for step ``s`` is the state after the last
inserted word followed by one ideal propagator.  ``circuit_trace`` therefore
walks the word positions once, keeps the state after each word, and finishes
every step with a single propagator.  The result is identical to running
each step's full circuit (checked in the tests).
"""
from __future__ import annotations

import logging

import numpy as np

from .exciton import EnergyScale, dimer_propagator_circuit
from .noisegen import DELTA_T_D, GateSequence, NoiseModel, build_schedule, expand_sequence
from .qsim import Circuit, DensityMatrix, derive_seed, measurement_probabilities, run_circuit, sample_counts
from .traces import PopulationTrace

log = logging.getLogger(__name__)

DEFAULT_SHOTS = 8192
DEFAULT_SEED = 20211116


def initial_state(site: int = 0) -> DensityMatrix:
    """Excitation on ``site`` (0-based) of the two-qubit register."""
    if site not in (0, 1):
        raise ValueError(f"the dimer has sites 0 and 1, got {site}")
    return DensityMatrix.basis_state(1 << site, 2)


def circuit_trace(seq: GateSequence | str, d: float, noise: NoiseModel | None, n_steps: int = 150,
                  scale: EnergyScale | None = None, shots: int | None = DEFAULT_SHOTS,
                  seed: int = DEFAULT_SEED, initial_site: int = 0,
                  delta_T_D: int = DELTA_T_D) -> PopulationTrace:
    """Simulate ``n_steps`` propagator steps with ``d`` words per decoherence period.

    With ``shots=None`` the exact measurement probabilities are used instead
    of sampled counts.  Step ``s`` draws from its own stream ``seed ^ s``.
    """
    from .analysis import renormalize_counts

    if isinstance(seq, str):
        seq = GateSequence(seq)
    scale = scale or EnergyScale()
    dth = scale.delta_theta
    sched = build_schedule(d, n_steps, delta_T_D)
    word = Circuit(2, expand_sequence(seq))
    readout = noise.readout_flip_p if noise is not None else 0.0

    # states[i] is the state right after word i, positions[i] its propagator step
    states = [initial_state(initial_site)]
    positions = [0]
    rho = states[0]
    for p in sched.positions():
        if p > positions[-1]:
            rho = run_circuit(dimer_propagator_circuit((p - positions[-1]) * dth), noise, rho)
        rho = run_circuit(word, noise, rho)
        states.append(rho)
        positions.append(p)

    steps = np.arange(n_steps + 1)
    pops = np.empty((n_steps + 1, 2))
    leak = np.empty(n_steps + 1)
    counts = np.empty((n_steps + 1, 4), dtype=np.int64) if shots else None
    for s in steps:
        k = sched.cumulative(int(s))
        rho_s = run_circuit(dimer_propagator_circuit((s - positions[k]) * dth), noise, states[k])
        if shots:
            c = sample_counts(rho_s, shots, derive_seed(seed, int(s)), readout)
            counts[s] = c.as_array()
            p1, p2, lf = renormalize_counts(c)
        else:
            prob = measurement_probabilities(rho_s, readout)
            inside = prob[1] + prob[2]
            p1, p2, lf = prob[1] / inside, prob[2] / inside, 1.0 - inside
        pops[s] = (p1, p2)
        leak[s] = lf

    prov = {
        "engine": "circuit", "sequence": seq.kind, "d": float(d), "N_I": sched.total_insertions,
        "delta_T_D": delta_T_D, "seed": int(seed), "shots": shots, "initial_site": initial_site,
        "noise": None if noise is None else noise.to_dict(), "J0": scale.J0, "dt_fs": scale.dt_fs,
    }
    log.debug("circuit trace seq=%s d=%g N_I=%d", seq.kind, d, sched.total_insertions)
    return PopulationTrace(steps * scale.dt_fs, steps * dth, pops, prov, leak, counts)


def coherent_trace(n_steps: int = 150, scale: EnergyScale | None = None, shots: int | None = None,
                   seed: int = DEFAULT_SEED, initial_site: int = 0) -> PopulationTrace:
    """Noiseless propagator only."""
    return circuit_trace("SWAP2", 0.0, None, n_steps, scale, shots, seed, initial_site)
