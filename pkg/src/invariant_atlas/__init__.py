"""Set-oriented coverings of invariant sets of infinite-dimensional systems
and their diffusion-map embeddings."""

__version__ = "0.1.0"

from .covering import (
    BoxCollection,
    BoxDomain,
    LiftedEnsemble,
    LiftedEvaluator,
    PointMapEvaluator,
    continuation_algorithm,
    midpoints,
    select,
    subdivide,
    subdivision_algorithm,
)
from .dimension import DimensionScan, IntrinsicDimension, coarse_scan, kernel_sum, refine_scan
from .dmaps import DiffusionMap, build_markov, kernel, nystrom_extend, spectral_gap_report
from .dynamics import (
    FlowMap,
    KSConfig,
    KSSolver,
    MGConfig,
    MGSolver,
    analytic_map,
    ks_time_t_map,
    mg_time_t_map,
)
from .exceptions import (
    ConfigError,
    DisconnectedGraphWarning,
    EmptyCoveringError,
    ExtensionFailedError,
    IntegrationDivergedError,
    MissingArtifactError,
)
from .observation import DelayCoordinates, PODBasis, build_pod_basis, delay_observe, pod_observe
