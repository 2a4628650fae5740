"""Traffic models of homogeneous event-triggered control loops.

The pipeline turns a polynomial plant, a state-feedback controller and a
quadratic triggering rule into a finite transition system whose states are
conic regions of the state space, whose outputs are inter-event-time
intervals, and whose transitions overapproximate where the next sample lands.
"""

from .abstraction import (
    Abstraction,
    BuildReport,
    MonteCarloReport,
    StageError,
    ValidationReport,
    build_abstraction,
    monte_carlo_validate,
    precision,
    simulate,
    validate_trace,
)
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .delta import (
    DeltaCertificate,
    DeltaCertificationError,
    certify_certificate,
    certify_pretrigger_invariance,
    fallback_certificate,
    lie_chain,
    solve_delta,
    verify_delta,
)
from .etc_model import (
    BatchOracle,
    EtcSystem,
    ExtendedSystem,
    TraceEvent,
    build_extended_field,
    inter_event_time_oracle,
    simulate_etc_trace,
    triggering_value,
)
from .isochron import MuFunction, manifold_radius_along_ray, mu_eval, region_membership
from .overapprox import BallSegment, bisect_radii, build_ball_segments
from .partition import Cone, Region, build_cones, build_regions, classify
from .polynomial import (
    PolynomialSyntaxError,
    PolyVectorField,
    Polynomial,
    homogeneity_degree,
    lie_derivative,
    lie_derivatives,
    parse_polynomial,
)
from .reach import ReachParams, flowpipe, search_upper_bound, transitions_from

__version__ = "0.1.0"
