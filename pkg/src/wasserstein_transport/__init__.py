"""Parallel transport of tangent spaces and tangent cones along Monge geodesics
in Wasserstein space, on discrete and Gaussian measures."""

from .cone import (
    ConeElement,
    ConeMapDiagnostics,
    EpsSchedule,
    composite_cone_transport,
    composition_defect,
    cone_distance,
    cone_map,
    cone_width,
    d_estimate,
    dbar,
    nonexpansive_check,
    roundtrip_defect,
    total_potential_error,
    transport_limit,
)
from .errors import *  # noqa: F401,F403
from .geodesic import GaussianGeodesic, MongeGeodesic, check_monge_interior
from .linear import (
    OperatorFamily,
    Subdivision,
    check_f_approximation,
    f_width,
    homogenize,
    linear_parallel_transport,
    unitarity_defect,
)
from .manifold import Manifold, TangentVec, exp_map, geodesic_point, log_map, parallel_transport_vec
from .measures import (
    DiscreteMeasure,
    GaussianMeasure,
    TransportPlan,
    interpolate,
    plan_distance,
    solve_ot,
    verify_optimality,
    w2,
)
from .tangent import (
    TangentDecomposition,
    TangentField,
    estimate_c,
    inner,
    operator_norm,
    part_field,
    project_tangent,
    push_field,
    t_op,
)

__version__ = "0.1.0"
