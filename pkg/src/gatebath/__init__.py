"""Open-system exciton dynamics from gate noise, checked against HEOM.

A two-site exciton dimer is simulated on two qubits.  Identity gate words
inserted between propagator steps inject gate errors that damp the
dynamics; the damping is mapped onto a Drude-Lorentz bath by fitting a
hierarchical-equations-of-motion (HEOM) solver to the simulated traces.
"""
from .analysis import (
    CalibrationCurve,
    RateFit,
    build_calibration,
    calibrate_noise,
    fit_exp_cos,
    fit_lambda,
    predict_dynamics,
    rate_curve,
    renormalize_counts,
)
from .engine import circuit_trace, coherent_trace
from .exciton import (
    EnergyScale,
    ExcitonSystem,
    PauliTerm,
    build_one_exciton_hamiltonian,
    dimer_propagator_circuit,
    jordan_wigner_map,
    reference_propagate,
)
from .heom import BathSpec, HierarchySpec, build_hierarchy, correlation_expansion, drude_lorentz, heom_propagate
from .noisegen import GateSequence, NoiseModel, build_dissipative_circuit, build_schedule, expand_sequence
from .qsim import Circuit, DensityMatrix, Gate, KrausChannel, apply_channel, apply_gate, run_circuit, sample_counts
from .traces import PopulationTrace

__version__ = "0.1.0"

__all__ = [
    "BathSpec", "CalibrationCurve", "Circuit", "DensityMatrix", "EnergyScale", "ExcitonSystem", "Gate",
    "GateSequence", "HierarchySpec", "KrausChannel", "NoiseModel", "PauliTerm", "PopulationTrace", "RateFit",
    "apply_channel", "apply_gate", "build_calibration", "build_dissipative_circuit", "build_hierarchy",
    "build_one_exciton_hamiltonian", "build_schedule", "calibrate_noise", "circuit_trace", "coherent_trace",
    "correlation_expansion", "dimer_propagator_circuit", "drude_lorentz", "expand_sequence", "fit_exp_cos",
    "fit_lambda", "heom_propagate", "jordan_wigner_map", "predict_dynamics", "rate_curve", "reference_propagate",
    "renormalize_counts", "run_circuit", "sample_counts",
]
