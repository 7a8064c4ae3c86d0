"""Pilot-wave simulation engine.

Spectral wavepacket propagation, branch-sum configuration-space states,
Bohmian trajectory ensembles, measurement and protective-probe models,
and a catalog of runnable interference/measurement scenarios.
"""

__version__ = "0.1.0"

from .fields import (
    ComplexField,
    Grid,
    PacketSpec,
    gaussian_packet,
    inner,
    make_grid,
    probe_amplitude,
    split_step,
    support_overlap,
)
from .branchstate import (
    MIXED,
    Branch,
    BranchState,
    Factor,
    SubsystemId,
    branch_weights,
    evolve_free,
    gradient_amplitude,
    occupied_branch,
    prune,
    total_amplitude,
)
from .guidance import (
    Configuration,
    no_crossing_check,
    run_ensemble,
    sample_initial,
    step_trajectory,
    velocity,
)
from .interactions import (
    ImpulsiveMeasurement,
    ProtectiveCoupling,
    collapse,
    detector_couple,
    impulsive_measure,
    meter_momentum,
    pairwise_entangle,
    protective_phase,
)

__all__ = [name for name in dir() if not name.startswith("_")]
