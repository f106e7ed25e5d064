"""Fair distributed association of cache-related traffic in cellular networks."""

from .netgen import (
    Catalog,
    NetworkInstance,
    RegionMap,
    Station,
    Tier,
    Window,
    extract_regions,
    mean_coverage,
    radius_for_mean_coverage,
    sample_ppp,
)
from .crp import (
    ConfigurationError,
    CrpInstance,
    DualVector,
    RegionFile,
    RoutingVector,
    UtilitySpec,
    augmented_lagrangian,
    build_instance,
    feasibility_residual,
    objective,
    total_volume,
)
from .bucketfill import Bucket, BucketFillResult, bucket_fill, local_coefficients, water_level_root
from .solver import SolveReport, SolverConfig, dqa_solve_primal, dual_step, solve_crp
from .agents import MessageStats, build_topology, run_distributed
from .policies import closest_available, fair, unsplittable
from .experiments import (
    MetricRow,
    ScenarioConfig,
    emit_csv,
    load_shares,
    run_single_tier,
    run_two_tier,
)

__version__ = "0.1.0"
