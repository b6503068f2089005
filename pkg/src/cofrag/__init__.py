"""Mass-conserving solver and a priori bound checks for coagulation with
power-law multiple fragmentation."""

from .kernels import (
    AdditiveKernel,
    ConstantKernel,
    DaughterDistribution,
    KernelSpec,
    PowerLawRate,
    PowerLawSumKernel,
    verify_hypotheses,
)
from .solver import Exponential, Monodisperse, PowerCutoff, Scenario, StepControl, run, two_run_distance

__version__ = "0.1.0"

__all__ = [
    "AdditiveKernel",
    "ConstantKernel",
    "DaughterDistribution",
    "KernelSpec",
    "PowerLawRate",
    "PowerLawSumKernel",
    "verify_hypotheses",
    "Exponential",
    "Monodisperse",
    "PowerCutoff",
    "Scenario",
    "StepControl",
    "run",
    "two_run_distance",
]
