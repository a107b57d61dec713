"""Gradient flow of the Canham-Helfrich bending energy on oriented varifolds,
driven by minimizing movements in a Wasserstein metric on position-normal space."""

__version__ = "0.1.0"

from .curvature import (
    CurvatureField,
    curvature_field,
    gauss_curvature,
    mean_curvature,
    mixed_vertex_areas,
    second_form_quantities,
    vertex_normals,
)
from .energy import (
    EnergyBreakdown,
    SphereAnalytics,
    generic_energy,
    helfrich_energy,
    lower_bound_certificate,
    lower_bound_value,
    multiplicity_bound,
    optimal_sphere,
    sphere_energy,
    sphere_radius,
    willmore_energy,
)
from .flow import (
    Constraints,
    FlowConfig,
    FlowTrace,
    OptimizerConfig,
    PenaltyWeights,
    StepRecord,
    SymmetryProjector,
    diameter,
    diameter_bounds,
    estimate_metric_derivative,
    incremental_step,
    multiplicity_step,
    restore_constraints,
    run_flow,
)
from .errors import (
    DomainError,
    FlowStepError,
    MeshTopologyError,
    TransportConvergenceError,
    TransportError,
)
from .transport import (
    TransportConfig,
    TransportPlan,
    cost_matrix,
    dual_certificate_w1,
    ground_cost,
    wasserstein,
    wasserstein_spatial,
)
from .varifold import (
    HelfrichParams,
    Isometry,
    MeshVarifold,
    ParticleVarifold,
    enclosed_volume,
    mass,
    pushforward,
    sample_particles,
    symmetry_defect,
    total_area,
    transform_mesh,
    with_multiplicity,
    with_vertices,
)

__all__ = [name for name in dir() if not name.startswith("_")]
