"""Cocycles of isometries of nonpositively curved symmetric spaces.

Drift estimates, almost-invariant sections built from barycenters, and the
closing perturbation that conjugates zero-drift cocycles into a point
stabilizer.  Backends: Euclidean space, the hyperbolic plane and SPD(d).
"""

from .barycenter import ConvergenceError, MeanConfig, WeightedPoints, bary_uniform, karcher_mean, two_point_interpolant
from .closing import (
    PerturbationReport,
    SubexponentialWarning,
    conjugate_to_stabilizer,
    homogeneity_map,
    matrix_pipeline,
    nonperturbative_conjugate,
    orthogonality_defect,
    perturb_cocycle,
    perturbation_bound,
    pipeline_stage,
    verify_displacement_bound,
)
from .dynamics import (
    Cocycle,
    FiniteBase,
    ZdBase,
    ZdCocycle,
    cocycle_product,
    maximal_drift_estimate,
    zd_product,
)
from .geometry import (
    SPD,
    Euclidean,
    GeometryError,
    Hyperbolic,
    Isometry,
    SpaceDescriptor,
    displacement_bound_f,
    distance,
    geodesic_point,
    make_space,
    midpoint,
    symmetry_at,
    transvection,
)
from .sections import (
    FolnerFamily,
    Section,
    displacement,
    dyadic_sections,
    interpolate_family,
    section_barycenter,
    section_dyadic,
    zd_section,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
