"""Nutating-frame dipolar order in rotating solids: waveforms, average Hamiltonians and full-sequence simulation."""

from .sequence import SequenceSpec
from .hamiltonian import DipolarCoupling, SpinSystem
from .experiment import (
    PowderScheme,
    RunResult,
    SweepResult,
    powder_average,
    run_adnf_arnf,
    run_adrf_arrf,
    run_phase_cycle,
    sweep_omega1,
    sweep_retention,
)

__all__ = [
    "DipolarCoupling",
    "PowderScheme",
    "RunResult",
    "SequenceSpec",
    "SpinSystem",
    "SweepResult",
    "powder_average",
    "run_adnf_arnf",
    "run_adrf_arrf",
    "run_phase_cycle",
    "sweep_omega1",
    "sweep_retention",
]
