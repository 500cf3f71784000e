"""Simulation and inference for randomly reinforced urns with multiple draws.

The model: an urn holds d colors; each stage draws a random number of balls
(with or without replacement), observes the color counts, and returns the
balls plus a random reinforcement per drawn ball of each color. The package
simulates the process exactly, estimates the reinforcement moments from one
path, and tests equality of the leading reinforcement means.
"""

from ._version import __version__
from .errors import (
    DegenerateCovariance,
    InsufficientDraws,
    MmruError,
    NoDrawsForColor,
    NoJointObservations,
    NotPositiveDefinite,
    ScenarioError,
)
from .sampling import (
    DiscreteLaw,
    DrawCountLaw,
    IndependentDiscrete,
    PointMass,
    PoissonLaw,
    Rng,
    ShiftedCommonCount,
    ShiftedMultinomial,
    clamp_deviations,
    law_moments,
)
from .urn import (
    WITH_REPLACEMENT,
    WITHOUT_REPLACEMENT,
    UrnConfig,
    UrnState,
    init,
    normalized_composition,
    run,
    step,
    write_trajectory,
)
from .estimators import MomentEstimates, compute_estimates
from .inference import (
    SymMatrix,
    TestResult,
    build_sigma,
    build_sigma_star_alt,
    build_sigma_star_null,
    chi_square_cdf,
    chi_square_quantile,
    pairwise_stat,
    run_test,
    spd_inverse,
)
from .harness import (
    ConvergenceReport,
    PowerPoint,
    ReplicationSummary,
    ScenarioSpec,
    builtin_scenarios,
    convergence_diagnostics,
    export_csv,
    export_histograms_csv,
    export_json,
    export_power_csv,
    export_power_json,
    power_curve,
    power_family,
    run_replications,
    scenario_by_name,
    wilson_interval,
)

__all__ = [
    "__version__",
    "MmruError",
    "NoDrawsForColor",
    "NoJointObservations",
    "NotPositiveDefinite",
    "DegenerateCovariance",
    "InsufficientDraws",
    "ScenarioError",
    "Rng",
    "DiscreteLaw",
    "PoissonLaw",
    "DrawCountLaw",
    "PointMass",
    "IndependentDiscrete",
    "ShiftedMultinomial",
    "ShiftedCommonCount",
    "law_moments",
    "clamp_deviations",
    "UrnConfig",
    "UrnState",
    "WITHOUT_REPLACEMENT",
    "WITH_REPLACEMENT",
    "init",
    "step",
    "run",
    "normalized_composition",
    "write_trajectory",
    "MomentEstimates",
    "compute_estimates",
    "SymMatrix",
    "TestResult",
    "build_sigma",
    "build_sigma_star_null",
    "build_sigma_star_alt",
    "pairwise_stat",
    "chi_square_cdf",
    "chi_square_quantile",
    "spd_inverse",
    "run_test",
    "ScenarioSpec",
    "ReplicationSummary",
    "ConvergenceReport",
    "PowerPoint",
    "builtin_scenarios",
    "scenario_by_name",
    "power_family",
    "run_replications",
    "convergence_diagnostics",
    "power_curve",
    "wilson_interval",
    "export_csv",
    "export_histograms_csv",
    "export_json",
    "export_power_csv",
    "export_power_json",
]
