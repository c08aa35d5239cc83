"""Quantum-limited estimation of optical loss in truncated Fock space."""
from .bures import EcbQuery, ecb_distance, ecb_optimal_probe, min_fidelity_bruteforce, min_fidelity_closed, mu
from .channel import LossParams, apply_loss, kraus_ops, loss_derivative, purified_evolve
from .errors import CutoffError, NumericalError, ValidationError
from .estimation import SimReport, SimScenario, run_sim
from .fock import (
    DensityOperator,
    ModeLayout,
    ProbeSpec,
    PureState,
    build_probe,
    energy,
    partial_trace,
    schmidt_decompose,
)
from .measurements import Povm, on_off_povm, outcome_distribution, photon_counting_povm, sample, schmidt_povm
from .metrology import classical_fi, fidelity, mp_bound, nds_fidelity, qfi_from_fidelity, qfim, sld, uhlmann_fidelity

__version__ = "0.1.0"
