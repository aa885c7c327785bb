"""Brownian hard balls with smooth pair interactions.

Reflected (Skorohod-type) dynamics for finite and truncated-infinite systems of
hard balls, with a dyadic frozen-drift integrator, a finite-cluster
localization engine and Gibbs-state initialization.
"""

from hardball.geometry import (
    BallConfiguration,
    ContactPair,
    contact_graph_components,
    contact_pairs,
    normal_direction,
    validate,
)
from hardball.potentials import (
    FreePotential,
    PairPotential,
    evaluate_drift,
    hamiltonian,
    lipschitz_bound,
    ruelle_check,
)
from hardball.noise import DyadicBrownianPath, refine, sample_path
from hardball.skorohod import (
    DrivingSegment,
    ReflectionLedger,
    Trajectory,
    contraction_check,
    solve_path,
    solve_step,
)
from hardball.integrator import refinement_study, simulate_ske_n, uniqueness_probe
from hardball.cluster import (
    ClusterPartition,
    FcpWitness,
    detect_clusters,
    fcp_certificate,
    guard_check,
    localized_simulate,
)
from hardball.gibbs import GibbsSamplerConfig, gibbs_sample, reversibility_test

__version__ = "0.1.0"

__all__ = [
    "BallConfiguration",
    "ClusterPartition",
    "ContactPair",
    "DrivingSegment",
    "DyadicBrownianPath",
    "FcpWitness",
    "FreePotential",
    "GibbsSamplerConfig",
    "PairPotential",
    "ReflectionLedger",
    "Trajectory",
    "contact_graph_components",
    "contact_pairs",
    "contraction_check",
    "detect_clusters",
    "evaluate_drift",
    "fcp_certificate",
    "gibbs_sample",
    "guard_check",
    "hamiltonian",
    "lipschitz_bound",
    "localized_simulate",
    "normal_direction",
    "refine",
    "refinement_study",
    "reversibility_test",
    "ruelle_check",
    "sample_path",
    "simulate_ske_n",
    "solve_path",
    "solve_step",
    "uniqueness_probe",
    "validate",
]
