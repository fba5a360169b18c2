"""Numerical laboratory for the lattice parabolic Anderson model with
white-noise potential and the directed polymer it normalizes.

The package builds the partition function by operator splitting on a
finite box, checks its martingale and quadratic-variation structure
against closed-form kernel identities, decomposes the free energy into
a noise term and an overlap compensator, and certifies strong-disorder
windows with explicit constants.  Everything is deterministic given a
master seed; replicas and path samplers draw from counter-based streams
so results do not depend on scheduling.
"""

from .config import RunConfig, parse_beta_grid
from .environment import EnvironmentGrid
from .errors import (
    BadEpsilonError,
    BoxTooSmallError,
    ConfigError,
    InsufficientReplicasError,
    NoStrongDisorderCertificateError,
    NumericalCollapseError,
    NumericalError,
)
from .field_solver import (
    EndpointSnapshot,
    FieldState,
    ModelParams,
    ReplicaSeries,
    endpoint,
    run_ensemble,
    run_replica,
    step,
)
from .ito_lab import (
    DisorderConstants,
    ItoTerms,
    WindowRecord,
    claim1_check,
    claim2_bookkeeping,
    constants,
    ito_terms,
)
from .path_sampler import (
    FeynmanKacEstimate,
    JumpPath,
    collision_time,
    feynman_kac_Z,
    sample_collision_times,
    sample_path,
    sample_paths,
)
from .rw_kernel import (
    KernelTable,
    axis_kernel,
    collision_green,
    collision_green_inf,
    collision_kernel,
    containment_radius,
    heat_kernel,
    kernel_grid,
    two_point_semigroup,
)
from .stat_lab import (
    LocalizationReport,
    ReplicaEnsemble,
    TestVerdict,
    free_energy_test,
    localization_scan,
    logZ_decomposition_test,
    martingale_test,
    qv_test,
    shuffled_control,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BadEpsilonError",
    "BoxTooSmallError",
    "ConfigError",
    "DisorderConstants",
    "EndpointSnapshot",
    "EnvironmentGrid",
    "FeynmanKacEstimate",
    "FieldState",
    "InsufficientReplicasError",
    "ItoTerms",
    "JumpPath",
    "KernelTable",
    "LocalizationReport",
    "ModelParams",
    "NoStrongDisorderCertificateError",
    "NumericalCollapseError",
    "NumericalError",
    "ReplicaEnsemble",
    "ReplicaSeries",
    "RunConfig",
    "TestVerdict",
    "WindowRecord",
    "axis_kernel",
    "claim1_check",
    "claim2_bookkeeping",
    "collision_green",
    "collision_green_inf",
    "collision_kernel",
    "collision_time",
    "constants",
    "containment_radius",
    "endpoint",
    "feynman_kac_Z",
    "free_energy_test",
    "heat_kernel",
    "ito_terms",
    "kernel_grid",
    "localization_scan",
    "logZ_decomposition_test",
    "martingale_test",
    "parse_beta_grid",
    "qv_test",
    "run_ensemble",
    "run_replica",
    "sample_collision_times",
    "sample_path",
    "sample_paths",
    "shuffled_control",
    "step",
    "two_point_semigroup",
]
